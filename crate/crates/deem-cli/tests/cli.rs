use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deem::ldcore::GenotypeMatrix;
use deem::selection::SelectionConfig;
use deem::simkit::{gen_effects, gen_sumstats_individual, rng_stream, GenotypeModel, Scenario};
use deem::sumstats::HarmonizedDataset;
use deem::{run_deem_with, DeemConfig, Mode};
use tempfile::TempDir;

fn scenario() -> Scenario {
    Scenario {
        d: 200,
        block_size: 20,
        n_e: 3000,
        n_o: 3000,
        n_s: 2000,
        n_ref: 500,
        ..Scenario::default()
    }
}

struct Fixture {
    dir: TempDir,
    ds: HarmonizedDataset,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn inputs(&self) -> Vec<String> {
        let p = |n: &str| self.path(n).display().to_string();
        vec![
            "--exposure".into(),
            p("exposure.tsv"),
            "--outcome".into(),
            p("outcome.tsv"),
            "--supplemental".into(),
            p("supplemental.tsv"),
            "--blocks".into(),
            p("blocks.tsv"),
            "--corr-dir".into(),
            p("corr"),
        ]
    }
}

fn write_genotypes(path: &Path, g: &GenotypeMatrix) {
    let mut s = g.snp_ids.join("\t");
    s.push('\n');
    for i in 0..g.n {
        let row: Vec<String> = (0..g.snp_ids.len()).map(|j| g.get(i, j).to_string()).collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn fixture() -> Fixture {
    let s = scenario();
    let mut setup = rng_stream(21, 0);
    let model = GenotypeModel::new(&s, &mut setup);
    let effects = gen_effects(&s, &mut setup).unwrap();
    let ds = gen_sumstats_individual(&s, &model, &effects, &mut rng_stream(21, 1))
        .unwrap()
        .into_dataset()
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("exposure.tsv"), ds.exposure.to_tsv()).unwrap();
    std::fs::write(root.join("outcome.tsv"), ds.outcome.to_tsv()).unwrap();
    std::fs::write(root.join("supplemental.tsv"), ds.supplemental.to_tsv()).unwrap();
    std::fs::create_dir(root.join("corr")).unwrap();
    let mut map = String::from("block_id\tsnp_id\n");
    for b in ds.ld.blocks() {
        let k = b.snp_ids.len();
        let mut m = String::new();
        for i in 0..k {
            let row: Vec<String> = (0..k).map(|j| format!("{:e}", b.corr[(i, j)])).collect();
            m.push_str(&row.join("\t"));
            m.push('\n');
            map.push_str(&format!("{}\t{}\n", b.block_id, b.snp_ids[i]));
        }
        std::fs::write(root.join("corr").join(format!("{}.corr.tsv", b.block_id)), m).unwrap();
    }
    std::fs::write(root.join("blocks.tsv"), map).unwrap();
    write_genotypes(&root.join("reference.tsv"), &model.sample(300, &mut rng_stream(21, 2)).unwrap());
    Fixture { dir, ds }
}

fn deem(args: &[String]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deem")).args(args).output().unwrap()
}

fn args(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_matches_library_and_writes_outputs() {
    let f = fixture();
    let out = f.path("out");
    let mut a = args(&["analyze"]);
    a.extend(f.inputs());
    a.extend(args(&["--out", out.to_str().unwrap()]));
    let o = deem(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let r = json(&out.join("result.json"));
    let beta = r["beta"].as_f64().unwrap();
    let se = r["se"].as_f64().unwrap();
    assert!(beta.is_finite() && se > 0.0);
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["config"]["mode"], "pleiotropy");
    assert_eq!(r["config"]["lambda"], 0.5);

    let lib = run_deem_with(&f.ds, &DeemConfig::new(SelectionConfig::deem(), Mode::TwoSamplePleiotropy, 0.5))
        .unwrap()
        .estimate;
    assert!((beta - lib.beta).abs() <= 1e-10 * lib.beta.abs().max(1.0), "{beta} vs {}", lib.beta);

    let csv = std::fs::read_to_string(out.join("result.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let report = json(&out.join("report.json"));
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert!(report["selection"]["kept"].as_u64().unwrap() > 0);
}

#[test]
fn analyze_with_reference_genotypes() {
    let f = fixture();
    let out = f.path("out");
    let mut a = args(&["--threads", "2", "analyze", "--mode", "two-sample"]);
    let mut inputs = f.inputs();
    inputs.truncate(8);
    a.extend(inputs);
    a.extend(args(&["--reference", f.path("reference.tsv").to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let o = deem(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("result.json"));
    assert!(r["beta"].as_f64().unwrap().is_finite());
    assert_eq!(r["config"]["threads"], 2);
}

#[test]
fn analyze_without_supplemental_exits_2() {
    let f = fixture();
    let mut a = args(&["analyze"]);
    let inputs: Vec<String> = f.inputs();
    a.extend(inputs[..4].iter().cloned());
    a.extend(inputs[6..].iter().cloned());
    a.extend(args(&["--out", f.path("out").to_str().unwrap()]));
    let o = deem(&a);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--supplemental"));
}

#[test]
fn analyze_with_unknown_mode_exits_2() {
    let f = fixture();
    let mut a = args(&["analyze", "--mode", "three-sample"]);
    a.extend(f.inputs());
    a.extend(args(&["--out", f.path("out").to_str().unwrap()]));
    assert_eq!(deem(&a).status.code(), Some(2));
}

#[test]
fn analyze_with_no_surviving_snps_exits_3_and_writes_nothing() {
    let f = fixture();
    let out = f.path("out");
    let mut a = args(&["analyze", "--pval-threshold", "1e-300"]);
    a.extend(f.inputs());
    a.extend(args(&["--out", out.to_str().unwrap()]));
    let o = deem(&a);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("result.json").exists());
    assert!(!out.join("result.csv").exists());
}

fn simulate(root: &Path, name: &str, extra: &[&str]) -> Output {
    let scen = root.join("scenario.json");
    std::fs::write(
        &scen,
        r#"{"d": 100, "block_size": 20, "n_e": 2000, "n_o": 2000, "n_s": 1500, "n_ref": 300, "replicates": 3}"#,
    )
    .unwrap();
    let mut a = args(&["simulate", "--scenario", scen.to_str().unwrap(), "--out", root.join(name).to_str().unwrap()]);
    a.extend(args(extra));
    deem(&a)
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), "a", &["--seed", "9"]).status.success());
    assert!(simulate(dir.path(), "b", &["--seed", "9"]).status.success());
    for f in ["metrics.csv", "replicates.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    let m = json(&dir.path().join("a").join("manifest.json"));
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["scenario"]["d"], 100);
}

#[test]
fn simulate_single_replicate_has_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "a", &["--replicates", "1", "--methods", "deem,ivw_diag"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(dir.path().join("a").join("replicates.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2);
}

#[test]
fn simulate_with_unknown_method_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "a", &["--methods", "deem,egger"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("a").join("metrics.csv").exists());
}

struct ClumpRow {
    id: String,
    kept: bool,
    reason: String,
}

fn clump(f: &Fixture, extra: &[&str]) -> (Output, Vec<ClumpRow>) {
    let out = f.path("clump");
    let mut a = args(&["clump"]);
    a.extend(f.inputs());
    a.extend(args(extra));
    a.extend(args(&["--out", out.to_str().unwrap()]));
    let o = deem(&a);
    let rows = std::fs::read_to_string(out.join("clump.tsv"))
        .map(|t| {
            t.lines()
                .skip(1)
                .map(|l| {
                    let c: Vec<&str> = l.split('\t').collect();
                    ClumpRow {
                        id: c[0].to_string(),
                        kept: c[1] == "true",
                        reason: c[2].to_string(),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    (o, rows)
}

#[test]
fn clump_with_open_thresholds_keeps_everything() {
    let f = fixture();
    let (o, rows) = clump(&f, &["--pval-threshold", "1", "--clump-r", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows.len(), f.ds.len());
    assert!(rows.iter().all(|r| r.kept && r.reason == "kept"));
    let m = json(&f.path("clump").join("manifest.json"));
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["clump_r"], 1.0);
}

#[test]
fn clump_prunes_correlated_pairs() {
    let f = fixture();
    let (o, rows) = clump(&f, &["--independent"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kept: HashSet<&str> = rows.iter().filter(|r| r.kept).map(|r| r.id.as_str()).collect();
    assert!(!kept.is_empty() && kept.len() < rows.len());
    assert!(rows.iter().any(|r| r.reason == "pruned_by_ld"));
    for b in f.ds.ld.blocks() {
        for i in 0..b.snp_ids.len() {
            for j in 0..i {
                if kept.contains(b.snp_ids[i].as_str()) && kept.contains(b.snp_ids[j].as_str()) {
                    assert!(b.corr[(i, j)].abs() < 0.01);
                }
            }
        }
    }
}

#[test]
fn clump_with_empty_result_exits_3() {
    let f = fixture();
    let (o, rows) = clump(&f, &["--pval-threshold", "1e-300"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(rows.is_empty());
}
