//! Sparse genetic effects: Bernoulli(π) support, then normal or Laplace sizes with total variance h².

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp1, StandardNormal};

use super::{EffectDist, Scenario};
use crate::error::{DeemError, Result};

const MAX_SUPPORT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Effects {
    pub alpha: Vec<f64>,
    pub beta_g: Vec<f64>,
    pub eta: Vec<f64>,
}

fn draw_size<R: Rng + ?Sized>(dist: EffectDist, var: f64, rng: &mut R) -> f64 {
    match dist {
        EffectDist::Normal => {
            let z: f64 = StandardNormal.sample(rng);
            var.sqrt() * z
        }
        EffectDist::Laplace => {
            // Laplace(0, b) has variance 2b²
            let b = (var / 2.0).sqrt();
            let (e1, e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            b * (e1 - e2)
        }
    }
}

/// Effects on `candidates` (all SNPs when `None`): indicator Bernoulli(pi), size variance h2/Σ indicators.
///
/// With `h2 == 0` the vector is zero. Otherwise an empty support is redrawn, failing after 100 tries.
pub fn sample_effect_vector<R: Rng + ?Sized>(
    d: usize,
    candidates: Option<&[usize]>,
    pi: f64,
    h2: f64,
    dist: EffectDist,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; d];
    if h2 == 0.0 {
        return Ok(out);
    }
    let all: Vec<usize>;
    let cand = match candidates {
        Some(c) => c,
        None => {
            all = (0..d).collect();
            &all
        }
    };
    let bern = Bernoulli::new(pi).map_err(|e| DeemError::Config(format!("effect fraction {pi}: {e}")))?;
    for _ in 0..MAX_SUPPORT_RETRIES {
        let support: Vec<usize> = cand.iter().copied().filter(|_| bern.sample(rng)).collect();
        if support.is_empty() {
            continue;
        }
        let var = h2 / support.len() as f64;
        for &j in &support {
            out[j] = draw_size(dist, var, rng);
        }
        return Ok(out);
    }
    Err(DeemError::Config(format!(
        "no nonzero effect drawn in {MAX_SUPPORT_RETRIES} attempts (pi = {pi})"
    )))
}

/// Exposure effects α, direct effects β_G and (with correlated pleiotropy) confounder effects η.
pub fn gen_effects<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Effects> {
    let d = scenario.d;
    let alpha = sample_effect_vector(d, None, scenario.pi_c, scenario.h2_c, scenario.effect_dist, rng)?;
    let eta = match &scenario.correlated_pleiotropy {
        Some(cp) => {
            let causal: Vec<usize> = (0..d).filter(|&j| alpha[j] != 0.0).collect();
            sample_effect_vector(d, Some(&causal), cp.pi_eta, cp.h2_eta, EffectDist::Normal, rng)?
        }
        None => vec![0.0; d],
    };
    let beta_g = sample_effect_vector(d, None, scenario.pi_d, scenario.h2_d, scenario.effect_dist, rng)?;
    Ok(Effects { alpha, beta_g, eta })
}
