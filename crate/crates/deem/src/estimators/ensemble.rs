//! Variance-optimal combination of β̂₁ and β̂₂.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{DeemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub beta: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub weights: (f64, f64),
}

/// Two-sided normal critical value for confidence `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DeemError::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// `w = (1ᵀΨ⁻¹1)⁻¹ 1ᵀΨ⁻¹`, `se = (1ᵀΨ⁻¹1)^{-1/2}`, CI `beta ± z·se`.
pub fn ensemble(beta1: f64, beta2: f64, psi: &[[f64; 2]; 2], level: f64) -> Result<EnsembleResult> {
    let z = normal_quantile(level)?;
    let (a, b, d) = (psi[0][0], psi[0][1], psi[1][1]);
    let det = a * d - b * b;
    if !(a > 0.0 && d > 0.0 && det > 0.0) {
        return Err(DeemError::Conditioning(format!("Psi is not positive definite: [[{a}, {b}], [{b}, {d}]]")));
    }
    // Ψ⁻¹1 ∝ (d − b, a − b)
    let r1 = d - b;
    let r2 = a - b;
    let total = r1 + r2;
    let w1 = r1 / total;
    let w2 = 1.0 - w1;
    let var = det / total;
    let se = var.sqrt();
    let beta = w1 * beta1 + w2 * beta2;
    Ok(EnsembleResult {
        beta,
        se,
        ci: (beta - z * se, beta + z * se),
        weights: (w1, w2),
    })
}
