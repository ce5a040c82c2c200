use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use deem::covest::CovDiagnostics;
use deem::estimators::{run_deem_with, DeemConfig, FitOptions, Mode};
use deem::io::{open_text, write_atomic};
use deem::ldcore::{estimate_block_correlations, load_block_map, load_corr_dir, load_reference_genotypes, BlockMap, LdBlockSet};
use deem::selection::{select, select_with_ld, SelectionConfig};
use deem::simkit::{run_study, write_study_outputs, Method, Scenario};
use deem::sumstats::{harmonize, load_sumstats_with_n, HarmonizationReport, HarmonizedDataset};
use deem::{DeemError, Result};

#[derive(Parser)]
#[command(name = "deem", version, about = "Debiased estimating-equation Mendelian randomization")]
struct Cli {
    /// Worker threads for LD estimation and simulation replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the causal effect from exposure, outcome and supplemental summary statistics.
    Analyze(AnalyzeArgs),
    /// Run a seeded Monte-Carlo study.
    Simulate(SimulateArgs),
    /// Instrument selection only.
    Clump(ClumpArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    exposure: PathBuf,
    #[arg(long)]
    outcome: PathBuf,
    #[arg(long)]
    supplemental: PathBuf,
    /// Two-column TSV `block_id snp_id`.
    #[arg(long)]
    blocks: PathBuf,
    /// Reference genotypes (`snp_id` then one dosage column per individual).
    #[arg(long, conflicts_with = "corr_dir", required_unless_present = "corr_dir")]
    reference: Option<PathBuf>,
    /// Directory of precomputed `{block_id}.corr.tsv` matrices.
    #[arg(long)]
    corr_dir: Option<PathBuf>,
    /// Separate reference genotypes used only for clumping.
    #[arg(long)]
    clump_reference: Option<PathBuf>,
    /// Sample size for rows of the exposure file without an `n` column.
    #[arg(long)]
    exposure_n: Option<u64>,
    #[arg(long)]
    outcome_n: Option<u64>,
    #[arg(long)]
    supplemental_n: Option<u64>,
}

#[derive(Args)]
struct SelectionArgs {
    /// Preset: p ≤ 0.1, clump r < 0.9 (default).
    #[arg(long, group = "preset")]
    deem: bool,
    /// Preset: p ≤ 1e-4, clump r < 0.9.
    #[arg(long, group = "preset")]
    strict: bool,
    /// Preset: p ≤ 0.1, clump r < 0.01.
    #[arg(long, group = "preset")]
    independent: bool,
    /// Overrides the preset threshold.
    #[arg(long)]
    pval_threshold: Option<f64>,
    /// Overrides the preset clumping threshold.
    #[arg(long)]
    clump_r: Option<f64>,
}

impl SelectionArgs {
    fn config(&self) -> Result<SelectionConfig> {
        let base = if self.strict {
            SelectionConfig::strict()
        } else if self.independent {
            SelectionConfig::independent()
        } else {
            SelectionConfig::deem()
        };
        SelectionConfig::new(
            self.pval_threshold.unwrap_or(base.pvalue_threshold),
            self.clump_r.unwrap_or(base.clump_r_threshold),
        )
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    /// two-sample, pleiotropy or one-sample.
    #[arg(long, default_value = "pleiotropy")]
    mode: String,
    /// Weight on the LD correlation in the working covariance.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Recorded in the manifest; the analysis itself is deterministic.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// TSV `snp_id weight` scaling rows and columns of V.
    #[arg(long)]
    v_weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; missing keys take defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Comma-separated subset of deem, plugin, ivw_diag.
    #[arg(long, default_value = "deem,plugin,ivw_diag")]
    methods: String,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClumpArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, cli.threads),
        Command::Simulate(a) => cmd_simulate(a, cli.threads),
        Command::Clump(a) => cmd_clump(a, cli.threads),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DeemError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

fn to_pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s.into_bytes()
}

fn reference_ld(path: &Path, map: &BlockMap) -> Result<LdBlockSet> {
    let geno = load_reference_genotypes(path)?;
    estimate_block_correlations(&geno, map)
}

struct Loaded {
    ds: HarmonizedDataset,
    report: HarmonizationReport,
    clump_ld: Option<LdBlockSet>,
}

fn load_inputs(a: &InputArgs) -> Result<Loaded> {
    let exposure = load_sumstats_with_n(&a.exposure, "exposure", a.exposure_n)?;
    let outcome = load_sumstats_with_n(&a.outcome, "outcome", a.outcome_n)?;
    let supplemental = load_sumstats_with_n(&a.supplemental, "supplemental", a.supplemental_n)?;
    let map = load_block_map(&a.blocks)?;
    let ld = match (&a.reference, &a.corr_dir) {
        (Some(r), _) => reference_ld(r, &map)?,
        (None, Some(d)) => load_corr_dir(d, &map)?,
        (None, None) => return Err(DeemError::Config("one of --reference or --corr-dir is required".into())),
    };
    let clump_ld = a.clump_reference.as_deref().map(|p| reference_ld(p, &map)).transpose()?;
    let (ds, report) = harmonize(&exposure, &outcome, &supplemental, &ld)?;
    Ok(Loaded { ds, report, clump_ld })
}

fn input_echo(a: &InputArgs) -> serde_json::Value {
    let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
    json!({
        "exposure": a.exposure.display().to_string(),
        "outcome": a.outcome.display().to_string(),
        "supplemental": a.supplemental.display().to_string(),
        "blocks": a.blocks.display().to_string(),
        "reference": p(&a.reference),
        "corr_dir": p(&a.corr_dir),
        "clump_reference": p(&a.clump_reference),
        "exposure_n": a.exposure_n,
        "outcome_n": a.outcome_n,
        "supplemental_n": a.supplemental_n,
    })
}

fn load_v_weights(path: &Path, ds: &HarmonizedDataset) -> Result<Vec<f64>> {
    let fmt = |m: String| DeemError::Format {
        path: path.display().to_string(),
        message: m,
    };
    let text = open_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| fmt("empty file".into()))?.split('\t').collect();
    if header != ["snp_id", "weight"] {
        return Err(fmt("header must be 'snp_id<TAB>weight'".into()));
    }
    let mut w = HashMap::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(fmt(format!("line {}: expected 2 columns", i + 2)));
        }
        let v: f64 = cols[1].trim().parse().map_err(|_| fmt(format!("line {}: bad weight '{}'", i + 2, cols[1])))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(fmt(format!("line {}: weight must be positive", i + 2)));
        }
        if w.insert(cols[0].trim().to_string(), v).is_some() {
            return Err(DeemError::Duplicate(cols[0].trim().to_string()));
        }
    }
    ds.snp_index
        .iter()
        .map(|id| w.get(id).copied().ok_or_else(|| fmt(format!("no weight for SNP '{id}'"))))
        .collect()
}

fn cmd_analyze(a: &AnalyzeArgs, threads: Option<usize>) -> Result<()> {
    let mode = Mode::parse(&a.mode)?;
    let selection = a.selection.config()?;
    if !(0.0..=1.0).contains(&a.lambda) {
        return Err(DeemError::Config(format!("--lambda must lie in [0, 1], got {}", a.lambda)));
    }
    deem::estimators::normal_quantile(a.level)?;

    let Loaded { ds, report, clump_ld } = load_inputs(&a.input)?;
    let mut cfg = DeemConfig::new(selection, mode, a.lambda);
    cfg.fit = FitOptions {
        level: a.level,
        pin_rho: None,
    };
    cfg.clump_ld = clump_ld;
    cfg.v_weights = a.v_weights.as_deref().map(|p| load_v_weights(p, &ds)).transpose()?;
    let run = run_deem_with(&ds, &cfg)?;
    let diagnostics: CovDiagnostics = run.bundle.diagnostics()?;

    let mut result = run.estimate.to_json();
    result["version"] = json!(env!("CARGO_PKG_VERSION"));
    result["config"] = json!({
        "subcommand": "analyze",
        "inputs": input_echo(&a.input),
        "mode": mode.as_str(),
        "pval_threshold": selection.pvalue_threshold,
        "clump_r": selection.clump_r_threshold,
        "lambda": a.lambda,
        "level": a.level,
        "seed": a.seed,
        "threads": threads,
        "v_weights": a.v_weights.as_ref().map(|p| p.display().to_string()),
    });
    let report_json = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "harmonization": report,
        "selection": run.selected.report(),
        "covariance": diagnostics,
    });
    let csv = format!("{}\n{}\n", deem::MrEstimate::CSV_HEADER, run.estimate.csv_row());

    ensure_dir(&a.out)?;
    write_atomic(&a.out.join("result.json"), &to_pretty(&result))?;
    write_atomic(&a.out.join("result.csv"), csv.as_bytes())?;
    write_atomic(&a.out.join("report.json"), &to_pretty(&report_json))?;
    println!(
        "beta = {:.6} (se {:.6}, {}% CI [{:.6}, {:.6}]) from {} SNPs",
        run.estimate.beta,
        run.estimate.se,
        a.level * 100.0,
        run.estimate.ci_low,
        run.estimate.ci_high,
        run.estimate.n_snps
    );
    for w in &run.estimate.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let methods: Vec<Method> = a
        .methods
        .split(',')
        .map(|m| Method::parse(m.trim()))
        .collect::<Result<_>>()?;
    let mut scenario = match &a.scenario {
        Some(p) => Scenario::from_json(&open_text(p)?)?,
        None => Scenario::default(),
    };
    if let Some(r) = a.replicates {
        scenario.replicates = r;
    }
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    scenario.validate()?;
    let out = run_study(&scenario, &methods)?;
    write_study_outputs(&a.out, &scenario, &methods, &out)?;
    for r in &out.metrics.rows {
        println!(
            "{:<8} bias={:+.5} se={:.5} rmse={:.5} coverage={:.3} n_ok={}",
            r.method.as_str(),
            r.bias,
            r.se,
            r.rmse,
            r.coverage,
            r.n_ok
        );
    }
    if !out.failures.is_empty() {
        eprintln!(
            "warning: {} of {} replicates failed (threads: {})",
            out.failures.len(),
            scenario.replicates,
            threads.map_or("all".to_string(), |t| t.to_string())
        );
    }
    Ok(())
}

fn cmd_clump(a: &ClumpArgs, threads: Option<usize>) -> Result<()> {
    let cfg = a.selection.config()?;
    let Loaded { ds, report, clump_ld } = load_inputs(&a.input)?;
    let sel = match &clump_ld {
        Some(ld) => select_with_ld(&ds, &cfg, ld),
        None => select(&ds, &cfg),
    }?;
    let mut tsv = String::from("snp_id\tkept\treason\tpvalue\n");
    for (j, id) in ds.snp_index.iter().enumerate() {
        let r = sel.reasons[j];
        tsv.push_str(&format!(
            "{id}\t{}\t{}\t{}\n",
            matches!(r, deem::selection::Reason::Kept),
            r.as_str(),
            sel.pvalues[j]
        ));
    }
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": {
            "subcommand": "clump",
            "inputs": input_echo(&a.input),
            "pval_threshold": cfg.pvalue_threshold,
            "clump_r": cfg.clump_r_threshold,
            "threads": threads,
        },
        "harmonization": report,
        "selection": sel.report(),
    });
    ensure_dir(&a.out)?;
    write_atomic(&a.out.join("clump.tsv"), tsv.as_bytes())?;
    write_atomic(&a.out.join("manifest.json"), &to_pretty(&manifest))?;
    let r = sel.report();
    println!("kept {} of {} SNPs ({} above threshold, {} pruned by LD)", r.kept, r.total, r.pruned_by_pvalue, r.pruned_by_ld);
    Ok(())
}
