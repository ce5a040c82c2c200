//! Seeded replicate study and its aggregate metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{gen_effects, gen_sumstats_individual, rng_stream, sample_effect_vector, GenotypeModel, Scenario, SimMode};
use crate::covest::CovBundle;
use crate::error::{DeemError, Result, StageExt};
use crate::estimators::{fit, ivw_diag, plugin_estimate, FitOptions, Mode};
use crate::io::write_atomic;
use crate::selection::{restrict, select, SelectionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Deem,
    Plugin,
    IvwDiag,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Deem => "deem",
            Method::Plugin => "plugin",
            Method::IvwDiag => "ivw_diag",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "deem" => Ok(Method::Deem),
            "plugin" => Ok(Method::Plugin),
            "ivw_diag" => Ok(Method::IvwDiag),
            other => Err(DeemError::Config(format!(
                "unknown method '{other}' (expected deem, plugin or ivw_diag)"
            ))),
        }
    }
}

/// One method's estimate on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: Method,
    pub beta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_snps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub n_ok: usize,
    pub bias: f64,
    /// Standard deviation of the estimates across replicates.
    pub se: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se_hat: f64,
    pub mean_n_snps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub truth: f64,
    pub rows: Vec<MethodMetrics>,
}

impl MetricsTable {
    pub const CSV_HEADER: &'static str = "method,n_ok,bias,se,rmse,coverage,mean_se_hat,mean_n_snps";

    pub fn row(&self, method: Method) -> Option<&MethodMetrics> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method.as_str(),
                r.n_ok,
                r.bias,
                r.se,
                r.rmse,
                r.coverage,
                r.mean_se_hat,
                r.mean_n_snps
            ));
        }
        s
    }
}

/// Per-method metrics over the given results. `se` is the population SD, so `rmse² = bias² + se²`.
pub fn aggregate(results: &[ReplicateResult], truth: f64, methods: &[Method]) -> MetricsTable {
    let rows = methods
        .iter()
        .map(|&m| {
            let rs: Vec<&ReplicateResult> = results.iter().filter(|r| r.method == m).collect();
            let n = rs.len() as f64;
            if rs.is_empty() {
                return MethodMetrics {
                    method: m,
                    n_ok: 0,
                    bias: f64::NAN,
                    se: f64::NAN,
                    rmse: f64::NAN,
                    coverage: f64::NAN,
                    mean_se_hat: f64::NAN,
                    mean_n_snps: f64::NAN,
                };
            }
            let bias = rs.iter().map(|r| r.beta - truth).sum::<f64>() / n;
            let var = rs.iter().map(|r| (r.beta - truth - bias).powi(2)).sum::<f64>() / n;
            let covered = rs.iter().filter(|r| r.ci_low <= truth && truth <= r.ci_high).count();
            MethodMetrics {
                method: m,
                n_ok: rs.len(),
                bias,
                se: var.sqrt(),
                rmse: (bias * bias + var).sqrt(),
                coverage: covered as f64 / n,
                mean_se_hat: rs.iter().map(|r| r.se).sum::<f64>() / n,
                mean_n_snps: rs.iter().map(|r| r.n_snps as f64).sum::<f64>() / n,
            }
        })
        .collect();
    MetricsTable { truth, rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub metrics: MetricsTable,
    pub results: Vec<ReplicateResult>,
    /// Replicates dropped from every method, with the error that dropped them.
    pub failures: Vec<(usize, String)>,
}

impl StudyOutput {
    pub fn replicates_csv(&self) -> String {
        let mut s = String::from("replicate,method,beta,se,ci_low,ci_high,n_snps\n");
        for r in &self.results {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.replicate,
                r.method.as_str(),
                r.beta,
                r.se,
                r.ci_low,
                r.ci_high,
                r.n_snps
            ));
        }
        s
    }
}

fn deem_mode(mode: SimMode) -> Mode {
    match mode {
        SimMode::TwoSample => Mode::TwoSamplePleiotropy,
        SimMode::OneSample => Mode::OneSample,
    }
}

/// Fresh β_G and cohorts for replicate `r`, then every method on one shared selected set.
fn run_replicate(
    scenario: &Scenario,
    model: &GenotypeModel,
    fixed: &super::Effects,
    methods: &[Method],
    r: usize,
) -> Result<Vec<ReplicateResult>> {
    let mut rng = rng_stream(scenario.seed, r as u64 + 1);
    let mut effects = fixed.clone();
    effects.beta_g = sample_effect_vector(scenario.d, None, scenario.pi_d, scenario.h2_d, scenario.effect_dist, &mut rng)?;
    let ds = gen_sumstats_individual(scenario, model, &effects, &mut rng)?.into_dataset()?;
    let cfg = SelectionConfig::new(scenario.pvalue_threshold, scenario.clump_r)?;
    let sel = select(&ds, &cfg).stage("selection")?;
    let sub = restrict(&ds, &sel);
    let bundle = CovBundle::from_dataset(&sub, scenario.lambda, None).stage("covest")?;
    let gh = sub.exposure.betas();
    let bg = sub.outcome.betas();
    let n_snps = sub.len();
    methods
        .iter()
        .map(|&m| {
            let (beta, se, ci) = match m {
                Method::Deem => {
                    let opts = FitOptions {
                        level: scenario.level,
                        pin_rho: None,
                    };
                    let e = fit(deem_mode(scenario.mode), &bundle, &gh, &bg, &sub.supplemental.betas(), &opts)?;
                    (e.beta, e.se, (e.ci_low, e.ci_high))
                }
                Method::Plugin => {
                    let e = plugin_estimate(&bundle, &gh, &bg, scenario.level).stage("plugin")?;
                    (e.beta, e.se, e.ci)
                }
                Method::IvwDiag => {
                    let e = ivw_diag(&gh, &bg, &sub.outcome.ses(), scenario.level).stage("ivw_diag")?;
                    (e.beta, e.se, e.ci)
                }
            };
            Ok(ReplicateResult {
                replicate: r,
                method: m,
                beta,
                se,
                ci_low: ci.0,
                ci_high: ci.1,
                n_snps,
            })
        })
        .collect()
}

/// Run `scenario.replicates` replicates in parallel. Output depends only on the scenario and methods.
///
/// A replicate where any step fails is dropped for all methods; 5% or more dropped is a study error.
pub fn run_study(scenario: &Scenario, methods: &[Method]) -> Result<StudyOutput> {
    scenario.validate()?;
    if methods.is_empty() {
        return Err(DeemError::Config("no methods requested".into()));
    }
    let mut setup = rng_stream(scenario.seed, 0);
    let model = GenotypeModel::new(scenario, &mut setup);
    let fixed = gen_effects(scenario, &mut setup)?;

    let per_rep: Vec<Result<Vec<ReplicateResult>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &model, &fixed, methods, r))
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in per_rep.into_iter().enumerate() {
        match out {
            Ok(v) => results.extend(v),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() as f64 >= 0.05 * scenario.replicates as f64 {
        return Err(DeemError::Study {
            failed: failures.len(),
            total: scenario.replicates,
            first: failures[0].1.clone(),
        });
    }
    Ok(StudyOutput {
        metrics: aggregate(&results, scenario.beta_x, methods),
        results,
        failures,
    })
}

/// Write `metrics.csv`, `replicates.csv` and `manifest.json` into `dir`, each atomically.
pub fn write_study_outputs(dir: &Path, scenario: &Scenario, methods: &[Method], out: &StudyOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DeemError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": scenario.seed,
        "scenario": scenario,
        "methods": methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "replicates_ok": scenario.replicates - out.failures.len(),
        "failures": out.failures.iter().map(|(r, e)| json!({"replicate": r, "error": e})).collect::<Vec<_>>(),
        "metrics": out.metrics,
    });
    let manifest = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join("metrics.csv"), out.metrics.to_csv().as_bytes())?;
    write_atomic(&dir.join("replicates.csv"), out.replicates_csv().as_bytes())?;
    write_atomic(&dir.join("manifest.json"), manifest.as_bytes())
}
