//! Individual-level cohorts reduced on the fly to per-SNP marginal regressions.
//!
//! Phenotypes follow `X = Gᵀα + U + ε_X`, `Y = Xβ_X + Gᵀβ_G + U + ε_Y`; with correlated pleiotropy
//! `U` splits into `U₁ = Gᵀη + ε_U` (entering Y with weight β_U) and `U₂`. Genotypes enter the
//! phenotype standardized by the population MAF. Each individual is generated and discarded, so only
//! per-SNP sums by dosage class are kept.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::genotypes::snp_name;
use super::{Effects, GenotypeModel, Scenario, SimMode};
use crate::error::{DeemError, Result};
use crate::ldcore::{estimate_block_correlations, BlockMap, LdBlockSet};
use crate::sumstats::{HarmonizedDataset, SnpRecord, SummaryStats};

/// Variances of the non-genetic terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub var_eps_x: f64,
    pub var_eps_y: f64,
    pub var_u: f64,
    pub var_eps_u: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            var_eps_x: 0.5,
            var_eps_y: 0.5,
            var_u: 1.0,
            var_eps_u: 0.5,
        }
    }
}

/// Marginal regression slopes, standard errors and sample size for one trait.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalStats {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub snp_ids: Vec<String>,
    pub exposure: MarginalStats,
    pub outcome: MarginalStats,
    pub supplemental: MarginalStats,
    pub ld: LdBlockSet,
}

impl SimulatedData {
    /// Package as an aligned dataset; every SNP codes allele A as effect allele.
    pub fn into_dataset(self) -> Result<HarmonizedDataset> {
        let mk = |m: &MarginalStats, label: &str| -> Result<SummaryStats> {
            let recs = self
                .snp_ids
                .iter()
                .zip(m.beta.iter().zip(&m.se))
                .map(|(id, (&beta, &se))| SnpRecord {
                    snp_id: id.clone(),
                    effect_allele: 'A',
                    other_allele: 'G',
                    beta,
                    se,
                    n: m.n,
                })
                .collect();
            SummaryStats::new(recs, label, m.n)
        };
        let e = mk(&self.exposure, "exposure")?;
        let o = mk(&self.outcome, "outcome")?;
        let s = mk(&self.supplemental, "supplemental")?;
        HarmonizedDataset::from_aligned(e, o, s, self.ld)
    }
}

/// Sparse view of one effect vector.
struct Sparse(Vec<(usize, f64)>);

impl Sparse {
    fn new(v: &[f64]) -> Self {
        Sparse(v.iter().copied().enumerate().filter(|&(_, x)| x != 0.0).collect())
    }

    fn score(&self, row: &[u8], std_values: &[[f64; 3]]) -> f64 {
        self.0.iter().map(|&(j, a)| a * std_values[j][row[j] as usize]).sum()
    }
}

struct Phenotyper<'a> {
    model: &'a GenotypeModel,
    alpha: Sparse,
    beta_g: Sparse,
    eta: Sparse,
    beta_x: f64,
    beta_u: Option<f64>,
    sd: [f64; 4],
}

impl Phenotyper<'_> {
    /// (X, Y) for one genotype row.
    fn draw<R: Rng + ?Sized>(&self, row: &[u8], rng: &mut R) -> (f64, f64) {
        let sv = &self.model.std_values;
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let [sd_x, sd_y, sd_u, sd_eu] = self.sd;
        let (u_x, u_y) = match self.beta_u {
            None => {
                let u = sd_u * n();
                (u, u)
            }
            Some(bu) => {
                let u1 = self.eta.score(row, sv) + sd_eu * n();
                let u2 = sd_u * n();
                (u1 + u2, bu * u1 + u2)
            }
        };
        let x = self.alpha.score(row, sv) + u_x + sd_x * n();
        let y = self.beta_x * x + self.beta_g.score(row, sv) + u_y + sd_y * n();
        (x, y)
    }
}

/// Per-SNP sums split by dosage class, for one or two traits.
struct Accum {
    cnt: Vec<[u64; 3]>,
    sx: Vec<[f64; 3]>,
    sy: Vec<[f64; 3]>,
    tx: (f64, f64),
    ty: (f64, f64),
    n: u64,
}

impl Accum {
    fn new(d: usize) -> Self {
        Accum {
            cnt: vec![[0; 3]; d],
            sx: vec![[0.0; 3]; d],
            sy: vec![[0.0; 3]; d],
            tx: (0.0, 0.0),
            ty: (0.0, 0.0),
            n: 0,
        }
    }

    fn add(&mut self, row: &[u8], x: f64, y: f64) {
        self.n += 1;
        self.tx.0 += x;
        self.tx.1 += x * x;
        self.ty.0 += y;
        self.ty.1 += y * y;
        for (j, &c) in row.iter().enumerate() {
            let c = c as usize;
            self.cnt[j][c] += 1;
            self.sx[j][c] += x;
            self.sy[j][c] += y;
        }
    }

    /// Slopes and `se² = RSS / (n·S_gg)` on the standardized genotype.
    fn regress(&self, std_values: &[[f64; 3]], outcome: bool) -> Result<MarginalStats> {
        let n = self.n as f64;
        let (sums, (t1, t2)) = if outcome { (&self.sy, self.ty) } else { (&self.sx, self.tx) };
        let syy = t2 - t1 * t1 / n;
        let mut beta = Vec::with_capacity(self.cnt.len());
        let mut se = Vec::with_capacity(self.cnt.len());
        for j in 0..self.cnt.len() {
            let g = &std_values[j];
            let (mut sg, mut sgg, mut sgy) = (0.0, 0.0, 0.0);
            for c in 0..3 {
                let k = self.cnt[j][c] as f64;
                sg += k * g[c];
                sgg += k * g[c] * g[c];
                sgy += g[c] * sums[j][c];
            }
            let sgg_c = sgg - sg * sg / n;
            let sgy_c = sgy - sg * t1 / n;
            if !(sgg_c > 1e-12 * n) {
                return Err(DeemError::DegenerateSnp(format!("{} is monomorphic in the simulated cohort", snp_name(j))));
            }
            let b = sgy_c / sgg_c;
            let rss = (syy - b * sgy_c).max(0.0);
            beta.push(b);
            se.push((rss / (n * sgg_c)).sqrt());
        }
        Ok(MarginalStats { beta, se, n: self.n })
    }
}

fn cohort<R: Rng + ?Sized>(p: &Phenotyper, n: usize, rng: &mut R) -> Accum {
    let d = p.model.d();
    let mut acc = Accum::new(d);
    let mut row = vec![0u8; d];
    for _ in 0..n {
        p.model.sample_row(rng, &mut row);
        let (x, y) = p.draw(&row, rng);
        acc.add(&row, x, y);
    }
    acc
}

/// Summary statistics with the default noise model.
pub fn gen_sumstats_individual<R: Rng + ?Sized>(
    scenario: &Scenario,
    model: &GenotypeModel,
    effects: &Effects,
    rng: &mut R,
) -> Result<SimulatedData> {
    gen_sumstats_individual_with(scenario, model, effects, &NoiseModel::default(), rng)
}

/// Exposure, outcome and supplemental regressions plus reference-panel LD, from fresh cohorts.
///
/// Two-sample mode uses disjoint cohorts of sizes `n_e`, `n_o`; one-sample mode regresses both
/// traits in the single `n_e` cohort. The supplemental (`n_s`) and reference (`n_ref`) cohorts are
/// always separate.
pub fn gen_sumstats_individual_with<R: Rng + ?Sized>(
    scenario: &Scenario,
    model: &GenotypeModel,
    effects: &Effects,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<SimulatedData> {
    let d = model.d();
    for v in [&effects.alpha, &effects.beta_g, &effects.eta] {
        if v.len() != d {
            return Err(DeemError::Config(format!("effect vector of length {} for {d} SNPs", v.len())));
        }
    }
    let p = Phenotyper {
        model,
        alpha: Sparse::new(&effects.alpha),
        beta_g: Sparse::new(&effects.beta_g),
        eta: Sparse::new(&effects.eta),
        beta_x: scenario.beta_x,
        beta_u: scenario.correlated_pleiotropy.map(|c| c.beta_u),
        sd: [
            noise.var_eps_x.sqrt(),
            noise.var_eps_y.sqrt(),
            noise.var_u.sqrt(),
            noise.var_eps_u.sqrt(),
        ],
    };
    let sv = &model.std_values;
    let (exposure, outcome) = match scenario.mode {
        SimMode::TwoSample => {
            let e = cohort(&p, scenario.n_e, rng).regress(sv, false)?;
            let o = cohort(&p, scenario.n_o, rng).regress(sv, true)?;
            (e, o)
        }
        SimMode::OneSample => {
            let acc = cohort(&p, scenario.n_e, rng);
            (acc.regress(sv, false)?, acc.regress(sv, true)?)
        }
    };
    let supplemental = cohort(&p, scenario.n_s, rng).regress(sv, false)?;
    let reference = model.sample(scenario.n_ref, rng)?;
    let map = BlockMap::contiguous(&reference.snp_ids, model.block_size());
    let ld = estimate_block_correlations(&reference, &map)?;
    Ok(SimulatedData {
        snp_ids: reference.snp_ids.clone(),
        exposure,
        outcome,
        supplemental,
        ld,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::rng_stream;
    use crate::sumstats::pvalues;

    fn zero_effects(d: usize) -> Effects {
        Effects {
            alpha: vec![0.0; d],
            beta_g: vec![0.0; d],
            eta: vec![0.0; d],
        }
    }

    #[test]
    fn noiseless_ratio_recovers_beta() {
        let s = Scenario {
            d: 1,
            block_size: 1,
            beta_x: 0.4,
            n_e: 500,
            n_o: 500,
            n_s: 500,
            n_ref: 500,
            mode: SimMode::OneSample,
            ..Scenario::default()
        };
        let model = GenotypeModel::with_mafs(vec![0.3], 1, 0.0);
        let mut eff = zero_effects(1);
        eff.alpha[0] = 1.0;
        let noise = NoiseModel {
            var_eps_x: 0.0,
            var_eps_y: 0.0,
            var_u: 0.0,
            var_eps_u: 0.0,
        };
        let sim = gen_sumstats_individual_with(&s, &model, &eff, &noise, &mut rng_stream(1, 1)).unwrap();
        assert!((sim.outcome.beta[0] / sim.exposure.beta[0] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn null_model_is_calibrated() {
        let s = Scenario {
            d: 1000,
            block_size: 50,
            ar1_rho: 0.0,
            beta_x: 0.0,
            n_e: 2000,
            n_o: 2000,
            n_s: 200,
            n_ref: 200,
            ..Scenario::default()
        };
        let mut rng = rng_stream(2, 0);
        let model = GenotypeModel::new(&s, &mut rng);
        let sim = gen_sumstats_individual(&s, &model, &zero_effects(1000), &mut rng).unwrap();
        let ds = sim.into_dataset().unwrap();
        for stats in [&ds.exposure, &ds.outcome] {
            let frac = pvalues(stats).iter().filter(|&&p| p < 0.05).count() as f64 / 1000.0;
            assert!((0.03..=0.07).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn one_sample_shares_cohort() {
        let s = Scenario {
            d: 20,
            block_size: 10,
            n_e: 300,
            n_o: 999,
            n_s: 100,
            n_ref: 100,
            mode: SimMode::OneSample,
            ..Scenario::default()
        };
        let mut rng = rng_stream(3, 0);
        let model = GenotypeModel::new(&s, &mut rng);
        let sim = gen_sumstats_individual(&s, &model, &zero_effects(20), &mut rng).unwrap();
        assert_eq!(sim.exposure.n, 300);
        assert_eq!(sim.outcome.n, 300);
        assert_eq!(sim.supplemental.n, 100);
        assert_eq!(sim.ld.dim(), 20);
    }
}
