//! Plug-in asymptotic covariance Ψ̂ of (β̂₁, β̂₂).
//!
//! Each base estimator is linearized in a set of scores: s₁ (the estimating function), s₂ (the β̂₂
//! numerator), and in the robust modes s_τ and s_ρ from the nuisance estimates. The scores are
//! linear plus quadratic forms in `z = (γ̂, Γ̂ − βγ̂)`, so their covariance Ω needs only
//! `γᵀV⁻¹Σ_FV⁻¹γ`-type terms and traces `tr(M_a Σ† M_b Σ†)`. With V and every Σ block-diagonal
//! and Q diagonal those traces split over LD blocks. Ψ̂ = Jᵀ Ω J.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{q_diag, Mode, NuisanceEstimates};
use crate::covest::CovBundle;
use crate::error::{DeemError, Result};
use crate::ldcore::{dot, trace_of_product};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub psi: [[f64; 2]; 2],
    /// Off-diagonal zeroed because the full estimate was not positive definite.
    pub fallback: bool,
}

/// Per-block traces `tr(M_a Σ† M_b Σ†)` for a ∈ {1, τ, ρ}.
#[derive(Default)]
struct Traces {
    t11: f64,
    t1t: f64,
    ttt: f64,
    t1r: f64,
    ttr: f64,
    trr: f64,
}

/// Estimate Ψ at β̂₂ with τ̂, ρ̂ plugged in; fourth-moment pleiotropy terms are dropped.
pub fn estimate_psi(
    mode: Mode,
    bundle: &CovBundle,
    gamma_hat: &[f64],
    gamma_tilde: &[f64],
    nuisance: &NuisanceEstimates,
) -> Result<PsiEstimate> {
    let beta = nuisance.beta2;
    let (tau, rho) = nuisance.pair(mode);
    let tau_active = mode != Mode::TwoSampleValid;
    let rho_active = mode == Mode::OneSample && !nuisance.rho_pinned;

    let v = &bundle.v;
    let winv = v.inverse_blocks()?;
    let q = q_diag(bundle, beta, tau, rho)?;
    let c = beta * beta - 2.0 * rho * beta;
    let sigma_f = bundle
        .sigma_big_gamma
        .lin_comb(1.0, &bundle.sigma_gamma, c)?
        .lin_comb(1.0, &bundle.sigma_p, tau)?;

    let u = v.solve(gamma_hat)?;
    let ut = v.solve(gamma_tilde)?;
    let sf_u = sigma_f.matvec(&u)?;
    let sf_ut = sigma_f.matvec(&ut)?;

    let offsets = v.offsets();
    let mut bias_hh = 0.0;
    let mut tr = Traces::default();
    for (k, w) in winv.iter().enumerate() {
        let (o, b) = (offsets[k], w.nrows());
        let sg = bundle.sigma_gamma.block(k);
        let sf = sigma_f.block(k);
        bias_hh += trace_of_product(&(w * sf), &(w * sg));

        // Σ† = [[Σγ, (ρ−β)Σγ], [(ρ−β)Σγ, Σ_F]]
        let mut sd = DMatrix::<f64>::zeros(2 * b, 2 * b);
        sd.view_mut((0, 0), (b, b)).copy_from(sg);
        sd.view_mut((0, b), (b, b)).copy_from(&(sg * (rho - beta)));
        sd.view_mut((b, 0), (b, b)).copy_from(&(sg * (rho - beta)));
        sd.view_mut((b, b), (b, b)).copy_from(sf);

        // M₁ = ½[[0, W], [W, −(QW + WQ)]]
        let mut m1 = DMatrix::<f64>::zeros(2 * b, 2 * b);
        let half_w = w * 0.5;
        m1.view_mut((0, b), (b, b)).copy_from(&half_w);
        m1.view_mut((b, 0), (b, b)).copy_from(&half_w);
        for i in 0..b {
            for j in 0..b {
                m1[(b + i, b + j)] = -0.5 * (q[o + i] + q[o + j]) * w[(i, j)];
            }
        }
        let x1 = &m1 * &sd;
        tr.t11 += trace_of_product(&x1, &x1);

        // M_τ = [[0, 0], [0, W]]
        let xt = if tau_active {
            let mut mt = DMatrix::<f64>::zeros(2 * b, 2 * b);
            mt.view_mut((b, b), (b, b)).copy_from(w);
            let xt = &mt * &sd;
            tr.t1t += trace_of_product(&x1, &xt);
            tr.ttt += trace_of_product(&xt, &xt);
            Some(xt)
        } else {
            None
        };

        // M_ρ = ½[[0, W], [W, 0]]
        if rho_active {
            let mut mr = DMatrix::<f64>::zeros(2 * b, 2 * b);
            mr.view_mut((0, b), (b, b)).copy_from(&half_w);
            mr.view_mut((b, 0), (b, b)).copy_from(&half_w);
            let xr = &mr * &sd;
            tr.t1r += trace_of_product(&x1, &xr);
            tr.trr += trace_of_product(&xr, &xr);
            if let Some(xt) = &xt {
                tr.ttr += trace_of_product(xt, &xr);
            }
        }
    }

    // γᵀV⁻¹Σ_FV⁻¹γ with the noise of γ̂ removed; γ̃ is independent so needs no correction.
    let lin_hh = dot(&u, &sf_u) - bias_hh;
    let lin_ht = dot(&u, &sf_ut);
    let lin_tt = dot(&ut, &sf_ut);
    let mu1 = dot(gamma_hat, &u) - v.trace_inv_prod(&bundle.sigma_gamma)?;
    let mu2 = dot(gamma_hat, &ut);
    if !(mu1 > 0.0) {
        return Err(DeemError::Conditioning(format!("bias-corrected γ̂ᵀV⁻¹γ̂ is {mu1}")));
    }
    if mu2 == 0.0 {
        return Err(DeemError::Conditioning("γ̂ᵀV⁻¹γ̃ is zero".into()));
    }

    // Scores in order s₁, s₂, [s_τ], [s_ρ]; rows of J give their (β̂₁, β̂₂) loadings.
    let mut omega: Vec<Vec<f64>> = vec![vec![lin_hh + 2.0 * tr.t11, lin_ht], vec![lin_ht, lin_tt]];
    let mut j: Vec<[f64; 2]> = vec![[1.0 / mu1, 0.0], [0.0, 1.0 / mu2]];

    if tau_active {
        let vinv_diag = v.inverse_diagonal()?;
        let tp = dot(&vinv_diag, &bundle.d_p);
        if !(tp > 0.0) {
            return Err(DeemError::Degenerate(format!("tr{{V⁻¹D_p}} = {tp}")));
        }
        let mut sum_tau = 0.0;
        let mut sum_rho = 0.0;
        for i in 0..bundle.dim() {
            let dg = bundle.d_gamma[i];
            if dg == 0.0 {
                continue;
            }
            let dfi = bundle.d_big_gamma[i] + c * dg + tau * bundle.d_p[i];
            sum_tau += vinv_diag[i] * bundle.d_p[i] * dg / dfi;
            sum_rho += vinv_diag[i] * dg * dg / dfi;
        }
        let mu_tau = (rho - beta) * sum_tau;

        omega[0].push(2.0 * tr.t1t / tp);
        omega[1].push(0.0);
        omega.push(vec![omega[0][2], 0.0, 2.0 * tr.ttt / (tp * tp)]);
        j.push([mu_tau / mu1, 0.0]);

        if rho_active {
            let tg = dot(&vinv_diag, &bundle.d_gamma);
            if !(tg > 0.0) {
                return Err(DeemError::Degenerate(format!("tr{{V⁻¹D_γ}} = {tg}")));
            }
            let mu_rho_tau = 2.0 * beta * tg / tp;
            let mu_rho = -tg - 2.0 * (rho - beta) * beta * sum_rho;
            let mu_beta = -mu1 / tg;
            let c_rho = mu_tau * mu_rho_tau + mu_rho;

            let w14 = (lin_hh + 2.0 * tr.t1r) / tg;
            let w24 = lin_ht / tg;
            let w34 = 2.0 * tr.ttr / (tp * tg);
            let w44 = (lin_hh + 2.0 * tr.trr) / (tg * tg);
            omega[0].push(w14);
            omega[1].push(w24);
            omega[2].push(w34);
            omega.push(vec![w14, w24, w34, w44]);
            j[1][0] = c_rho * mu_beta / (mu1 * mu2);
            j.push([c_rho / mu1, 0.0]);
        }
    }

    let mut psi = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for (i, row) in omega.iter().enumerate() {
                for (k, w) in row.iter().enumerate() {
                    acc += j[i][a] * w * j[k][b];
                }
            }
            psi[a][b] = acc;
        }
    }
    let sym = 0.5 * (psi[0][1] + psi[1][0]);
    psi[0][1] = sym;
    psi[1][0] = sym;

    if !(psi[0][0] > 0.0) || !(psi[1][1] > 0.0) {
        return Err(DeemError::Conditioning(format!(
            "Psi diagonal is not positive ({}, {})",
            psi[0][0], psi[1][1]
        )));
    }
    let fallback = psi[0][0] * psi[1][1] - sym * sym <= 0.0;
    if fallback {
        psi[0][1] = 0.0;
        psi[1][0] = 0.0;
    }
    Ok(PsiEstimate { psi, fallback })
}
