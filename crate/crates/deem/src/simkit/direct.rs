//! Model-based draws of summary statistics, bypassing genotypes.
//!
//! `γ̂ = γ + e`, `Γ̂ = Γ + ρ_U e + f + √τ_p p`, `γ̃ = γ + e'` with `e ~ N(0, Σ_γ)`,
//! `f ~ N(0, Σ_Γ − ρ_U²Σ_γ)`, `p ~ N(0, Σ_p)` and `e' ~ N(0, Σ_γ̃)` independent, so that
//! `Cov(γ̂, Γ̂) = ρ_UΣ_γ` and `Var(Γ̂) = Σ_Γ + τ_pΣ_p`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::genotypes::snp_name;
use super::Scenario;
use crate::error::{DeemError, Result};
use crate::ldcore::BlockDiagMatrix;
use crate::sumstats::{SnpRecord, SummaryStats};

/// True effects and sampling covariances.
#[derive(Debug, Clone)]
pub struct DirectTruth {
    pub gamma: Vec<f64>,
    pub big_gamma: Vec<f64>,
    pub sigma_gamma: BlockDiagMatrix,
    pub sigma_big_gamma: BlockDiagMatrix,
    pub sigma_gamma_tilde: BlockDiagMatrix,
    pub sigma_p: BlockDiagMatrix,
    pub tau_p: f64,
    pub rho_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectDraw {
    pub gamma_hat: Vec<f64>,
    pub big_gamma_hat: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
}

/// Truth plus precomputed square-root factors.
#[derive(Debug, Clone)]
pub struct DirectModel {
    pub truth: DirectTruth,
    l_gamma: Vec<DMatrix<f64>>,
    l_cond: Vec<DMatrix<f64>>,
    l_tilde: Vec<DMatrix<f64>>,
    l_p: Vec<DMatrix<f64>>,
}

/// Per-block `L` with `LLᵀ = A`; negative eigenvalues beyond rounding are rejected.
fn psd_factor(m: &BlockDiagMatrix, name: &str) -> Result<Vec<DMatrix<f64>>> {
    m.blocks()
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let eig = SymmetricEigen::new(a.clone());
            let top = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let tol = 1e-10 * top.max(1e-300);
            if let Some(bad) = eig.eigenvalues.iter().find(|&&x| x < -tol) {
                return Err(DeemError::Config(format!("{name} block {k} is not PSD (eigenvalue {bad})")));
            }
            let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&x| x.max(0.0).sqrt()));
            let mut l = eig.eigenvectors;
            for (j, mut col) in l.column_iter_mut().enumerate() {
                col *= roots[j];
            }
            Ok(l)
        })
        .collect()
}

fn correlated_normal<R: Rng + ?Sized>(factors: &[DMatrix<f64>], rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    for l in factors {
        let z = DVector::from_fn(l.ncols(), |_, _| StandardNormal.sample(rng));
        out.extend((l * z).iter());
    }
    out
}

impl DirectModel {
    pub fn new(truth: DirectTruth) -> Result<Self> {
        let d = truth.gamma.len();
        if truth.big_gamma.len() != d {
            return Err(DeemError::Config("gamma and Gamma differ in length".into()));
        }
        for m in [&truth.sigma_gamma, &truth.sigma_big_gamma, &truth.sigma_gamma_tilde, &truth.sigma_p] {
            if m.dim() != d {
                return Err(DeemError::Config(format!("covariance of dimension {} for {d} SNPs", m.dim())));
            }
            truth.sigma_gamma.check_aligned(m)?;
        }
        if !(truth.tau_p >= 0.0) {
            return Err(DeemError::Config(format!("tau_p must be non-negative, got {}", truth.tau_p)));
        }
        let cond = truth.sigma_big_gamma.lin_comb(1.0, &truth.sigma_gamma, -truth.rho_u * truth.rho_u)?;
        Ok(DirectModel {
            l_gamma: psd_factor(&truth.sigma_gamma, "Sigma_gamma")?,
            l_cond: psd_factor(&cond, "Sigma_Gamma - rho^2 Sigma_gamma")?,
            l_tilde: psd_factor(&truth.sigma_gamma_tilde, "Sigma_gamma_tilde")?,
            l_p: psd_factor(&truth.sigma_p, "Sigma_p")?,
            truth,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DirectDraw {
        let t = &self.truth;
        let e = correlated_normal(&self.l_gamma, rng);
        let f = correlated_normal(&self.l_cond, rng);
        let p = correlated_normal(&self.l_p, rng);
        let e2 = correlated_normal(&self.l_tilde, rng);
        let sq_tau = t.tau_p.sqrt();
        let d = t.gamma.len();
        DirectDraw {
            gamma_hat: (0..d).map(|j| t.gamma[j] + e[j]).collect(),
            big_gamma_hat: (0..d).map(|j| t.big_gamma[j] + t.rho_u * e[j] + f[j] + sq_tau * p[j]).collect(),
            gamma_tilde: (0..d).map(|j| t.gamma[j] + e2[j]).collect(),
        }
    }
}

/// One direct draw packaged as exposure, outcome and supplemental statistics.
///
/// Standard errors are the square roots of the configured variances; sample sizes come from the scenario.
pub fn gen_sumstats_direct<R: Rng + ?Sized>(
    scenario: &Scenario,
    model: &DirectModel,
    rng: &mut R,
) -> Result<(SummaryStats, SummaryStats, SummaryStats)> {
    let draw = model.draw(rng);
    let t = &model.truth;
    let mk = |beta: &[f64], cov: &BlockDiagMatrix, n: usize, label: &str| -> Result<SummaryStats> {
        let recs = beta
            .iter()
            .zip(cov.diagonal())
            .enumerate()
            .map(|(j, (&b, v))| SnpRecord {
                snp_id: snp_name(j),
                effect_allele: 'A',
                other_allele: 'G',
                beta: b,
                se: v.sqrt(),
                n: n as u64,
            })
            .collect();
        SummaryStats::new(recs, label, n as u64)
    };
    let outcome_cov = t.sigma_big_gamma.lin_comb(1.0, &t.sigma_p, t.tau_p)?;
    Ok((
        mk(&draw.gamma_hat, &t.sigma_gamma, scenario.n_e, "exposure")?,
        mk(&draw.big_gamma_hat, &outcome_cov, scenario.n_o, "outcome")?,
        mk(&draw.gamma_tilde, &t.sigma_gamma_tilde, scenario.n_s, "supplemental")?,
    ))
}
