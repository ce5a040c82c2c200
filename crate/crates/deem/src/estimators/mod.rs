//! Causal-effect estimators: plug-in baselines, the anchor β̂₂, nuisance estimates,
//! the debiased estimating equation and its ensemble with β̂₂.

mod ensemble;
mod psi;
mod solver;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::covest::CovBundle;
use crate::error::{DeemError, Result, StageExt};
use crate::ldcore::{dot, BlockDiagMatrix};
use crate::selection::{restrict, select, select_with_ld, SelectedSet, SelectionConfig};
use crate::sumstats::HarmonizedDataset;
use crate::ldcore::LdBlockSet;

pub use ensemble::{ensemble, normal_quantile, EnsembleResult};
pub use psi::{estimate_psi, PsiEstimate};
pub use solver::{find_root_near, solve_ee, SolverDiagnostics};

/// Estimating-equation regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "two-sample")]
    TwoSampleValid,
    #[serde(rename = "pleiotropy")]
    TwoSamplePleiotropy,
    #[serde(rename = "one-sample")]
    OneSample,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TwoSampleValid => "two-sample",
            Mode::TwoSamplePleiotropy => "pleiotropy",
            Mode::OneSample => "one-sample",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "two-sample" => Ok(Mode::TwoSampleValid),
            "pleiotropy" => Ok(Mode::TwoSamplePleiotropy),
            "one-sample" => Ok(Mode::OneSample),
            other => Err(DeemError::Config(format!(
                "unknown mode '{other}' (expected two-sample, pleiotropy or one-sample)"
            ))),
        }
    }
}

/// Nuisance parameters evaluated once at β̂₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    /// Unclamped pleiotropy variance estimate (0 when the mode has none).
    pub tau_raw: f64,
    /// `max(tau_raw, 0)`, the value used inside Q.
    pub tau: f64,
    pub rho: f64,
    pub beta2: f64,
    /// ρ held at a caller-supplied value rather than estimated.
    pub rho_pinned: bool,
}

impl NuisanceEstimates {
    /// `(τ, ρ)` as they enter Q for the given mode.
    pub fn pair(&self, mode: Mode) -> (f64, f64) {
        match mode {
            Mode::TwoSampleValid => (0.0, 0.0),
            Mode::TwoSamplePleiotropy => (self.tau, 0.0),
            Mode::OneSample => (self.tau, self.rho),
        }
    }
}

/// Raw and clamped τ̂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub raw: f64,
    pub clamped: f64,
}

fn check_dims(bundle: &CovBundle, vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        if v.len() != bundle.dim() {
            return Err(DeemError::Alignment(format!(
                "vector of length {} against {} SNPs",
                v.len(),
                bundle.dim()
            )));
        }
    }
    Ok(())
}

fn residual(big_gamma_hat: &[f64], gamma_hat: &[f64], beta: f64) -> Vec<f64> {
    big_gamma_hat.iter().zip(gamma_hat).map(|(g, h)| g - beta * h).collect()
}

/// `γ̂ᵀV⁻¹Γ̂ / γ̂ᵀV⁻¹γ̂`; with `V = diag(se_Γ²)` this is the IVW estimator.
pub fn beta_plugin(gamma_hat: &[f64], big_gamma_hat: &[f64], v: &BlockDiagMatrix) -> Result<f64> {
    let u = v.solve(gamma_hat)?;
    let den = dot(gamma_hat, &u);
    if !(den > 0.0) {
        return Err(DeemError::Degenerate(format!("γ̂ᵀV⁻¹γ̂ = {den}")));
    }
    Ok(dot(big_gamma_hat, &u) / den)
}

/// `γ̃ᵀV⁻¹Γ̂ / γ̃ᵀV⁻¹γ̂`.
pub fn beta2(gamma_tilde: &[f64], gamma_hat: &[f64], big_gamma_hat: &[f64], v: &BlockDiagMatrix) -> Result<f64> {
    let u = v.solve(gamma_tilde)?;
    let den = dot(gamma_hat, &u);
    if den == 0.0 || !den.is_finite() {
        return Err(DeemError::Degenerate(format!(
            "γ̃ᵀV⁻¹γ̂ = {den}: supplemental and exposure associations are orthogonal"
        )));
    }
    Ok(dot(big_gamma_hat, &u) / den)
}

/// τ̂_p; identical to [`estimate_tau_os`] with ρ̂ = 0.
pub fn estimate_tau_p(bundle: &CovBundle, gamma_hat: &[f64], big_gamma_hat: &[f64], beta2: f64) -> Result<TauEstimate> {
    estimate_tau_os(bundle, gamma_hat, big_gamma_hat, beta2, 0.0)
}

/// `tr{V⁻¹D_p}⁻¹[rᵀV⁻¹r − tr{V⁻¹(D_Γ + (β̂₂² − 2ρ̂β̂₂)D_γ)}]` with `r = Γ̂ − β̂₂γ̂`.
pub fn estimate_tau_os(
    bundle: &CovBundle,
    gamma_hat: &[f64],
    big_gamma_hat: &[f64],
    beta2: f64,
    rho: f64,
) -> Result<TauEstimate> {
    check_dims(bundle, &[gamma_hat, big_gamma_hat])?;
    let v = &bundle.v;
    let tp = v.trace_inv_diag(&bundle.d_p)?;
    if !(tp > 0.0) {
        return Err(DeemError::Degenerate(format!("tr{{V⁻¹D_p}} = {tp}")));
    }
    let r = residual(big_gamma_hat, gamma_hat, beta2);
    let c = beta2 * beta2 - 2.0 * rho * beta2;
    let d: Vec<f64> = bundle
        .d_big_gamma
        .iter()
        .zip(&bundle.d_gamma)
        .map(|(dg_out, dg)| dg_out + c * dg)
        .collect();
    let raw = (v.quad_form(&r, &r)? - v.trace_inv_diag(&d)?) / tp;
    Ok(TauEstimate {
        raw,
        clamped: raw.max(0.0),
    })
}

/// `tr{V⁻¹D_γ}⁻¹ γ̂ᵀV⁻¹(Γ̂ − β̂₂γ̂) + β̂₂`.
pub fn estimate_rho(bundle: &CovBundle, gamma_hat: &[f64], big_gamma_hat: &[f64], beta2: f64) -> Result<f64> {
    check_dims(bundle, &[gamma_hat, big_gamma_hat])?;
    let tg = bundle.v.trace_inv_diag(&bundle.d_gamma)?;
    if !(tg > 0.0) {
        return Err(DeemError::Degenerate(format!("tr{{V⁻¹D_γ}} = {tg}")));
    }
    let r = residual(big_gamma_hat, gamma_hat, beta2);
    Ok(bundle.v.quad_form(gamma_hat, &r)? / tg + beta2)
}

/// Nuisance estimates for `mode` at the anchor; `pin_rho` fixes ρ instead of estimating it.
pub fn estimate_nuisance(
    mode: Mode,
    bundle: &CovBundle,
    gamma_hat: &[f64],
    big_gamma_hat: &[f64],
    beta2: f64,
    pin_rho: Option<f64>,
) -> Result<NuisanceEstimates> {
    let none = NuisanceEstimates {
        tau_raw: 0.0,
        tau: 0.0,
        rho: 0.0,
        beta2,
        rho_pinned: false,
    };
    match mode {
        Mode::TwoSampleValid => Ok(none),
        Mode::TwoSamplePleiotropy => {
            let t = estimate_tau_p(bundle, gamma_hat, big_gamma_hat, beta2)?;
            Ok(NuisanceEstimates {
                tau_raw: t.raw,
                tau: t.clamped,
                ..none
            })
        }
        Mode::OneSample => {
            let rho = match pin_rho {
                Some(r) => r,
                None => estimate_rho(bundle, gamma_hat, big_gamma_hat, beta2)?,
            };
            let t = estimate_tau_os(bundle, gamma_hat, big_gamma_hat, beta2, rho)?;
            Ok(NuisanceEstimates {
                tau_raw: t.raw,
                tau: t.clamped,
                rho,
                beta2,
                rho_pinned: pin_rho.is_some(),
            })
        }
    }
}

/// Q̂ diagonal `(ρ−β)D_γ / (D_Γ + τD_p + (β²−2ρβ)D_γ)`; an entry with zero D_γ is zero.
pub(crate) fn q_diag(bundle: &CovBundle, beta: f64, tau: f64, rho: f64) -> Result<Vec<f64>> {
    let c = beta * beta - 2.0 * rho * beta;
    let mut q = Vec::with_capacity(bundle.dim());
    for j in 0..bundle.dim() {
        let dg = bundle.d_gamma[j];
        if dg == 0.0 {
            q.push(0.0);
            continue;
        }
        let den = bundle.d_big_gamma[j] + tau * bundle.d_p[j] + c * dg;
        if !(den > 0.0) {
            return Err(DeemError::Domain {
                beta,
                index: j,
                denominator: den,
            });
        }
        q.push((rho - beta) * dg / den);
    }
    Ok(q)
}

/// Repeated evaluation of the estimating function with the two V-solves cached.
pub struct EeFunction<'a> {
    bundle: &'a CovBundle,
    gamma_hat: &'a [f64],
    big_gamma_hat: &'a [f64],
    vinv_gamma: Vec<f64>,
    vinv_big_gamma: Vec<f64>,
    g_vinv_gamma: f64,
    g_vinv_big_gamma: f64,
    tau: f64,
    rho: f64,
}

impl<'a> EeFunction<'a> {
    pub fn new(
        mode: Mode,
        bundle: &'a CovBundle,
        gamma_hat: &'a [f64],
        big_gamma_hat: &'a [f64],
        nuisance: &NuisanceEstimates,
    ) -> Result<Self> {
        check_dims(bundle, &[gamma_hat, big_gamma_hat])?;
        let vinv_gamma = bundle.v.solve(gamma_hat)?;
        let vinv_big_gamma = bundle.v.solve(big_gamma_hat)?;
        let (tau, rho) = nuisance.pair(mode);
        Ok(EeFunction {
            g_vinv_gamma: dot(gamma_hat, &vinv_gamma),
            g_vinv_big_gamma: dot(gamma_hat, &vinv_big_gamma),
            bundle,
            gamma_hat,
            big_gamma_hat,
            vinv_gamma,
            vinv_big_gamma,
            tau,
            rho,
        })
    }

    /// `γ̂ᵀV⁻¹γ̂`, the natural scale of the function.
    pub fn scale(&self) -> f64 {
        self.g_vinv_gamma
    }

    pub fn eval(&self, beta: f64) -> Result<f64> {
        let b = self.bundle;
        let c = beta * beta - 2.0 * self.rho * beta;
        let mut corr = 0.0;
        for j in 0..b.dim() {
            let dg = b.d_gamma[j];
            if dg == 0.0 {
                continue;
            }
            let den = b.d_big_gamma[j] + self.tau * b.d_p[j] + c * dg;
            if !(den > 0.0) {
                return Err(DeemError::Domain {
                    beta,
                    index: j,
                    denominator: den,
                });
            }
            let q = (self.rho - beta) * dg / den;
            let r = self.big_gamma_hat[j] - beta * self.gamma_hat[j];
            let w = self.vinv_big_gamma[j] - beta * self.vinv_gamma[j];
            corr += q * r * w;
        }
        Ok((self.g_vinv_big_gamma - beta * self.g_vinv_gamma) - corr)
    }
}

/// `{γ̂ − Q̂(β)(Γ̂ − βγ̂)}ᵀ V⁻¹ (Γ̂ − βγ̂)`.
pub fn ee_value(
    beta: f64,
    mode: Mode,
    bundle: &CovBundle,
    gamma_hat: &[f64],
    big_gamma_hat: &[f64],
    nuisance: &NuisanceEstimates,
) -> Result<f64> {
    EeFunction::new(mode, bundle, gamma_hat, big_gamma_hat, nuisance)?.eval(beta)
}

/// Exact expectation of the estimating function at β when the bundle's Σ's are the true covariances:
/// `(ρ−β) tr{V⁻¹Σ_γ} − tr{Q V⁻¹(Σ_Γ + τΣ_p + (β²−2ρβ)Σ_γ)}`, with Q built from the bundle's D's.
pub fn ee_expectation(beta: f64, bundle: &CovBundle, tau: f64, rho: f64) -> Result<f64> {
    let q = q_diag(bundle, beta, tau, rho)?;
    let c = beta * beta - 2.0 * rho * beta;
    let sigma_f = bundle
        .sigma_big_gamma
        .lin_comb(1.0, &bundle.sigma_gamma, c)?
        .lin_comb(1.0, &bundle.sigma_p, tau)?;
    let (vinv_sf, _) = bundle.v.diag_of_inv_prod(&sigma_f)?;
    let tg = bundle.v.trace_inv_prod(&bundle.sigma_gamma)?;
    Ok((rho - beta) * tg - dot(&q, &vinv_sf))
}

/// Baseline estimate with a first-order standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub beta: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

/// Plug-in estimator with sandwich SE `sqrt(γ̂ᵀV⁻¹Σ̂_FV⁻¹γ̂) / γ̂ᵀV⁻¹γ̂`, `Σ̂_F = Σ̂_Γ + β̂²Σ̂_γ`.
pub fn plugin_estimate(bundle: &CovBundle, gamma_hat: &[f64], big_gamma_hat: &[f64], level: f64) -> Result<BaselineEstimate> {
    check_dims(bundle, &[gamma_hat, big_gamma_hat])?;
    let beta = beta_plugin(gamma_hat, big_gamma_hat, &bundle.v)?;
    let u = bundle.v.solve(gamma_hat)?;
    let sf = bundle.sigma_big_gamma.lin_comb(1.0, &bundle.sigma_gamma, beta * beta)?;
    let var = dot(&u, &sf.matvec(&u)?) / dot(gamma_hat, &u).powi(2);
    let se = var.sqrt();
    let z = normal_quantile(level)?;
    Ok(BaselineEstimate {
        beta,
        se,
        ci: (beta - z * se, beta + z * se),
    })
}

/// Fixed-effect IVW ignoring LD: `V = diag(se_Γ²)`, SE `(Σ γ̂²/se_Γ²)^{-1/2}`.
pub fn ivw_diag(gamma_hat: &[f64], big_gamma_hat: &[f64], se_out: &[f64], level: f64) -> Result<BaselineEstimate> {
    if gamma_hat.len() != big_gamma_hat.len() || gamma_hat.len() != se_out.len() {
        return Err(DeemError::Alignment("IVW inputs differ in length".into()));
    }
    let w: Vec<f64> = se_out.iter().map(|s| 1.0 / (s * s)).collect();
    let den: f64 = gamma_hat.iter().zip(&w).map(|(g, w)| g * g * w).sum();
    if !(den > 0.0) {
        return Err(DeemError::Degenerate("IVW denominator is zero".into()));
    }
    let num: f64 = gamma_hat.iter().zip(big_gamma_hat).zip(&w).map(|((g, gg), w)| g * gg * w).sum();
    let beta = num / den;
    let se = den.sqrt().recip();
    let z = normal_quantile(level)?;
    Ok(BaselineEstimate {
        beta,
        se,
        ci: (beta - z * se, beta + z * se),
    })
}

/// Full estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrEstimate {
    pub beta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub weights: (f64, f64),
    pub beta1: f64,
    pub beta2: f64,
    pub psi: [[f64; 2]; 2],
    pub nuisance: NuisanceEstimates,
    pub n_snps: usize,
    pub mode: Mode,
    pub solver_diag: SolverDiagnostics,
    pub warnings: Vec<String>,
}

impl MrEstimate {
    /// Canonical JSON result.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "beta": self.beta,
            "se": self.se,
            "ci": [self.ci_low, self.ci_high],
            "level": self.level,
            "weights": [self.weights.0, self.weights.1],
            "beta1": self.beta1,
            "beta2": self.beta2,
            "psi": self.psi,
            "tau_raw": self.nuisance.tau_raw,
            "tau_used": self.nuisance.tau,
            "rho": self.nuisance.rho,
            "n_snps_selected": self.n_snps,
            "mode": self.mode.as_str(),
            "solver": {
                "bracket": [self.solver_diag.bracket.0, self.solver_diag.bracket.1],
                "iterations": self.solver_diag.iterations,
                "residual": self.solver_diag.residual,
                "multiplicity_flag": self.solver_diag.multiplicity_flag,
            },
            "warnings": self.warnings,
        })
    }

    pub const CSV_HEADER: &'static str = "mode,beta,se,ci_low,ci_high,w1,w2,beta1,beta2,tau_raw,tau_used,rho,n_snps_selected,multiplicity_flag,n_warnings";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.beta,
            self.se,
            self.ci_low,
            self.ci_high,
            self.weights.0,
            self.weights.1,
            self.beta1,
            self.beta2,
            self.nuisance.tau_raw,
            self.nuisance.tau,
            self.nuisance.rho,
            self.n_snps,
            self.solver_diag.multiplicity_flag,
            self.warnings.len()
        )
    }
}

/// Knobs for [`fit`] beyond the mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub level: f64,
    /// Hold ρ at this value in one-sample mode instead of estimating it.
    pub pin_rho: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            level: 0.95,
            pin_rho: None,
        }
    }
}

/// β̂₂ → nuisance → root of the estimating equation → Ψ̂ → ensemble, on already-selected SNPs.
pub fn fit(
    mode: Mode,
    bundle: &CovBundle,
    gamma_hat: &[f64],
    big_gamma_hat: &[f64],
    gamma_tilde: &[f64],
    opts: &FitOptions,
) -> Result<MrEstimate> {
    check_dims(bundle, &[gamma_hat, big_gamma_hat, gamma_tilde])?;
    let b2 = beta2(gamma_tilde, gamma_hat, big_gamma_hat, &bundle.v).stage("beta2")?;
    let nuisance = estimate_nuisance(mode, bundle, gamma_hat, big_gamma_hat, b2, opts.pin_rho).stage("nuisance")?;
    let (b1, solver_diag) = solve_ee(mode, bundle, gamma_hat, big_gamma_hat, &nuisance, b2).stage("solve_ee")?;
    let psi = estimate_psi(mode, bundle, gamma_hat, gamma_tilde, &nuisance).stage("psi")?;
    let ens = ensemble(b1, b2, &psi.psi, opts.level).stage("ensemble")?;
    let mut warnings = Vec::new();
    if nuisance.tau_raw < 0.0 {
        warnings.push(format!("tau estimate {} was negative and clamped to 0", nuisance.tau_raw));
    }
    if solver_diag.multiplicity_flag {
        warnings.push("estimating equation has several roots; the one nearest beta2 was returned".into());
    }
    if psi.fallback {
        warnings.push("Psi estimate was not positive definite; diagonal fallback used".into());
    }
    Ok(MrEstimate {
        beta: ens.beta,
        se: ens.se,
        ci_low: ens.ci.0,
        ci_high: ens.ci.1,
        level: opts.level,
        weights: ens.weights,
        beta1: b1,
        beta2: b2,
        psi: psi.psi,
        nuisance,
        n_snps: bundle.dim(),
        mode,
        solver_diag,
        warnings,
    })
}

/// Configuration of a full pipeline run.
#[derive(Debug, Clone)]
pub struct DeemConfig {
    pub selection: SelectionConfig,
    pub mode: Mode,
    pub lambda: f64,
    pub fit: FitOptions,
    pub v_weights: Option<Vec<f64>>,
    /// Separate LD panel used only for clumping.
    pub clump_ld: Option<LdBlockSet>,
}

impl DeemConfig {
    pub fn new(selection: SelectionConfig, mode: Mode, lambda: f64) -> Self {
        DeemConfig {
            selection,
            mode,
            lambda,
            fit: FitOptions::default(),
            v_weights: None,
            clump_ld: None,
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct DeemRun {
    pub estimate: MrEstimate,
    pub selected: SelectedSet,
    pub bundle: CovBundle,
}

/// select → restrict → covariance bundle → [`fit`].
pub fn run_deem(ds: &HarmonizedDataset, cfg: &SelectionConfig, mode: Mode, lambda: f64) -> Result<MrEstimate> {
    Ok(run_deem_with(ds, &DeemConfig::new(*cfg, mode, lambda))?.estimate)
}

pub fn run_deem_with(ds: &HarmonizedDataset, cfg: &DeemConfig) -> Result<DeemRun> {
    let selected = match &cfg.clump_ld {
        Some(ld) => select_with_ld(ds, &cfg.selection, ld),
        None => select(ds, &cfg.selection),
    }
    .stage("selection")?;
    let sub = restrict(ds, &selected);
    let weights = cfg
        .v_weights
        .as_ref()
        .map(|w| -> Result<Vec<f64>> {
            if w.len() != ds.len() {
                return Err(DeemError::Alignment(format!("{} V weights for {} SNPs", w.len(), ds.len())));
            }
            Ok(selected.indices.iter().map(|&i| w[i]).collect())
        })
        .transpose()
        .stage("covest")?;
    let bundle = CovBundle::from_dataset(&sub, cfg.lambda, weights.as_deref()).stage("covest")?;
    let estimate = fit(
        cfg.mode,
        &bundle,
        &sub.exposure.betas(),
        &sub.outcome.betas(),
        &sub.supplemental.betas(),
        &cfg.fit,
    )?;
    Ok(DeemRun {
        estimate,
        selected,
        bundle,
    })
}
