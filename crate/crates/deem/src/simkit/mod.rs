//! Monte-Carlo harness: scenario configuration, data generators, replicate runner and metrics.

mod direct;
mod effects;
mod genotypes;
mod individual;
mod study;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DeemError, Result};

pub use direct::{gen_sumstats_direct, DirectDraw, DirectModel, DirectTruth};
pub use effects::{gen_effects, sample_effect_vector, Effects};
pub use genotypes::{gen_genotypes, GenotypeModel};
pub use individual::{gen_sumstats_individual, gen_sumstats_individual_with, NoiseModel, SimulatedData};
pub use study::{aggregate, run_study, write_study_outputs, Method, MethodMetrics, MetricsTable, ReplicateResult, StudyOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDist {
    Normal,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    TwoSample,
    OneSample,
}

/// SNP effects on the exposure routed through a confounder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatedPleiotropy {
    pub beta_u: f64,
    #[serde(default = "default_pi_eta")]
    pub pi_eta: f64,
    #[serde(default = "default_h2_eta")]
    pub h2_eta: f64,
}

fn default_pi_eta() -> f64 {
    0.1
}

fn default_h2_eta() -> f64 {
    0.1
}

/// Full simulation configuration. Missing JSON keys take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub d: usize,
    pub block_size: usize,
    pub ar1_rho: f64,
    pub maf_range: (f64, f64),
    pub pi_c: f64,
    pub pi_d: f64,
    pub h2_c: f64,
    pub h2_d: f64,
    pub beta_x: f64,
    pub effect_dist: EffectDist,
    pub n_e: usize,
    pub n_o: usize,
    pub n_s: usize,
    pub n_ref: usize,
    pub mode: SimMode,
    pub correlated_pleiotropy: Option<CorrelatedPleiotropy>,
    pub seed: u64,
    pub replicates: usize,
    pub pvalue_threshold: f64,
    pub clump_r: f64,
    pub lambda: f64,
    pub level: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            d: 1000,
            block_size: 50,
            ar1_rho: 0.5,
            maf_range: (0.05, 0.5),
            pi_c: 0.05,
            pi_d: 0.1,
            h2_c: 0.1,
            h2_d: 0.1,
            beta_x: 0.4,
            effect_dist: EffectDist::Normal,
            n_e: 20000,
            n_o: 20000,
            n_s: 8000,
            n_ref: 2000,
            mode: SimMode::TwoSample,
            correlated_pleiotropy: None,
            seed: 1,
            replicates: 200,
            pvalue_threshold: 0.1,
            clump_r: 0.9,
            lambda: 0.5,
            level: 0.95,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DeemError::Config(m));
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        let herit = |x: f64| (0.0..1.0).contains(&x);
        if self.d == 0 || self.block_size == 0 {
            return bad("d and block_size must be positive".into());
        }
        if !(self.ar1_rho > -1.0 && self.ar1_rho < 1.0) {
            return bad(format!("ar1_rho {} outside (-1, 1)", self.ar1_rho));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return bad(format!("maf_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.5"));
        }
        if !frac(self.pi_c) || !frac(self.pi_d) {
            return bad("pi_c and pi_d must lie in [0, 1]".into());
        }
        if !herit(self.h2_c) || !herit(self.h2_d) {
            return bad("h2_c and h2_d must lie in [0, 1)".into());
        }
        if let Some(cp) = &self.correlated_pleiotropy {
            if !frac(cp.pi_eta) || !herit(cp.h2_eta) {
                return bad("correlated pleiotropy fractions out of range".into());
            }
        }
        for (name, n) in [("n_e", self.n_e), ("n_o", self.n_o), ("n_s", self.n_s), ("n_ref", self.n_ref)] {
            if n < 2 {
                return bad(format!("{name} must be at least 2"));
            }
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if !(self.pvalue_threshold > 0.0 && self.pvalue_threshold <= 1.0) || !(self.clump_r > 0.0 && self.clump_r <= 1.0) {
            return bad("selection thresholds must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| DeemError::Config(format!("scenario JSON: {e}")))?;
        s.validate()?;
        Ok(s)
    }
}

/// Independent RNG stream `stream` under `seed`; stream 0 holds quantities fixed across replicates.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
