//! GWAS summary statistics: loading, allele harmonization and p-values.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{DeemError, Result};
use crate::io::read_lines;
use crate::ldcore::LdBlockSet;

/// One SNP's marginal regression summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnpRecord {
    pub snp_id: String,
    pub effect_allele: char,
    pub other_allele: char,
    pub beta: f64,
    pub se: f64,
    pub n: u64,
}

impl SnpRecord {
    pub fn validate(&self) -> Result<()> {
        let ok_allele = |c: char| matches!(c, 'A' | 'C' | 'G' | 'T');
        if !ok_allele(self.effect_allele) || !ok_allele(self.other_allele) {
            return Err(DeemError::Validation(format!("{}: alleles must be A/C/G/T", self.snp_id)));
        }
        if self.effect_allele == self.other_allele {
            return Err(DeemError::Validation(format!("{}: effect and other allele coincide", self.snp_id)));
        }
        if !self.beta.is_finite() {
            return Err(DeemError::Validation(format!("{}: beta is not finite", self.snp_id)));
        }
        if !(self.se > 0.0 && self.se.is_finite()) {
            return Err(DeemError::Validation(format!("{}: se must be positive, got {}", self.snp_id, self.se)));
        }
        if self.n == 0 {
            return Err(DeemError::Validation(format!("{}: n must be at least 1", self.snp_id)));
        }
        Ok(())
    }

    fn is_ambiguous(&self) -> bool {
        matches!(
            (self.effect_allele, self.other_allele),
            ('A', 'T') | ('T', 'A') | ('C', 'G') | ('G', 'C')
        )
    }
}

/// Summary statistics for one trait in canonical SNP order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub records: Vec<SnpRecord>,
    pub trait_label: String,
    pub sample_size: u64,
}

impl SummaryStats {
    pub fn new(records: Vec<SnpRecord>, trait_label: &str, sample_size: u64) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.snp_id.as_str()) {
                return Err(DeemError::Duplicate(r.snp_id.clone()));
            }
        }
        if sample_size == 0 {
            return Err(DeemError::Validation("sample size must be positive".into()));
        }
        Ok(SummaryStats {
            records,
            trait_label: trait_label.to_string(),
            sample_size,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }

    pub fn ses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.se).collect()
    }

    pub fn ns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.n as f64).collect()
    }

    pub fn snp_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.snp_id.clone()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("snp_id\teffect_allele\tother_allele\tbeta\tse\tn\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:e}\t{:e}\t{}\n",
                r.snp_id, r.effect_allele, r.other_allele, r.beta, r.se, r.n
            ));
        }
        s
    }

    fn subset(&self, idx: &[usize]) -> SummaryStats {
        SummaryStats {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            trait_label: self.trait_label.clone(),
            sample_size: self.sample_size,
        }
    }
}

const COLUMNS: [&str; 6] = ["snp_id", "effect_allele", "other_allele", "beta", "se", "n"];

/// Load a summary-statistics TSV (optionally `.gz`).
pub fn load_sumstats(path: &Path, trait_label: &str) -> Result<SummaryStats> {
    load_sumstats_with_n(path, trait_label, None)
}

/// As [`load_sumstats`]; `global_n` fills in a missing `n` column. Per-row `n` wins.
pub fn load_sumstats_with_n(path: &Path, trait_label: &str, global_n: Option<u64>) -> Result<SummaryStats> {
    let fmt = |message: String| DeemError::Format {
        path: path.display().to_string(),
        message,
    };
    let lines = read_lines(path)?;
    let mut it = lines.iter().enumerate();
    let (_, header) = it.next().ok_or_else(|| fmt("empty file".into()))?;
    let names: Vec<&str> = header.split('\t').map(str::trim).collect();
    let mut pos = [usize::MAX; 6];
    for (k, col) in COLUMNS.iter().enumerate() {
        match names.iter().position(|n| n == col) {
            Some(p) => pos[k] = p,
            None if *col == "n" && global_n.is_some() => {}
            None => return Err(fmt(format!("missing column '{col}'"))),
        }
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in it {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        let field = |k: usize| -> Result<&str> {
            match f.get(pos[k]) {
                Some(v) if !v.is_empty() && *v != "NA" => Ok(v),
                _ => Err(fmt(format!("line {}: missing '{}'", lineno + 1, COLUMNS[k]))),
            }
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?
                .parse::<f64>()
                .map_err(|_| fmt(format!("line {}: '{}' is not a number", lineno + 1, COLUMNS[k])))
        };
        let allele = |k: usize| -> Result<char> {
            let s = field(k)?.to_ascii_uppercase();
            let mut cs = s.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(fmt(format!("line {}: allele '{}' is not a single base", lineno + 1, s))),
            }
        };
        let n = if pos[5] != usize::MAX {
            let raw = num(5)?;
            if raw < 1.0 || raw.fract() != 0.0 {
                return Err(DeemError::Validation(format!("line {}: n must be a positive integer", lineno + 1)));
            }
            raw as u64
        } else {
            global_n.unwrap_or(0)
        };
        let rec = SnpRecord {
            snp_id: field(0)?.to_string(),
            effect_allele: allele(1)?,
            other_allele: allele(2)?,
            beta: num(3)?,
            se: num(4)?,
            n,
        };
        rec.validate()?;
        if !seen.insert(rec.snp_id.clone()) {
            return Err(DeemError::Duplicate(rec.snp_id));
        }
        records.push(rec);
    }
    let sample_size = global_n
        .or_else(|| records.iter().map(|r| r.n).max())
        .ok_or_else(|| fmt("no data rows".into()))?;
    SummaryStats::new(records, trait_label, sample_size)
}

/// Counts produced by [`harmonize`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonizationReport {
    pub intersected: usize,
    pub sign_flipped: usize,
    pub dropped_inconsistent: usize,
    pub dropped_ambiguous: usize,
}

/// Exposure, outcome and supplemental statistics aligned to one SNP order and one LD block set.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizedDataset {
    pub exposure: SummaryStats,
    pub outcome: SummaryStats,
    pub supplemental: SummaryStats,
    pub ld: LdBlockSet,
    pub snp_index: Vec<String>,
}

impl HarmonizedDataset {
    /// Wrap inputs that are already aligned; checks ids and alleles agree.
    pub fn from_aligned(
        exposure: SummaryStats,
        outcome: SummaryStats,
        supplemental: SummaryStats,
        ld: LdBlockSet,
    ) -> Result<Self> {
        let snp_index = ld.snp_ids();
        for s in [&exposure, &outcome, &supplemental] {
            if s.len() != snp_index.len() {
                return Err(DeemError::Alignment(format!(
                    "'{}' has {} SNPs, LD blocks have {}",
                    s.trait_label,
                    s.len(),
                    snp_index.len()
                )));
            }
            for ((r, e), id) in s.records.iter().zip(&exposure.records).zip(&snp_index) {
                if &r.snp_id != id || r.effect_allele != e.effect_allele || r.other_allele != e.other_allele {
                    return Err(DeemError::Alignment(format!("'{}' is not aligned at {}", s.trait_label, id)));
                }
            }
        }
        Ok(HarmonizedDataset {
            exposure,
            outcome,
            supplemental,
            ld,
            snp_index,
        })
    }

    pub fn len(&self) -> usize {
        self.snp_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snp_index.is_empty()
    }

    /// Keep the SNPs at the given strictly increasing indices.
    pub fn subset(&self, idx: &[usize]) -> HarmonizedDataset {
        HarmonizedDataset {
            exposure: self.exposure.subset(idx),
            outcome: self.outcome.subset(idx),
            supplemental: self.supplemental.subset(idx),
            ld: self.ld.subset(idx),
            snp_index: idx.iter().map(|&i| self.snp_index[i].clone()).collect(),
        }
    }
}

enum Alignment {
    Same,
    Swapped,
    Inconsistent,
}

fn align(reference: &SnpRecord, other: &SnpRecord) -> Alignment {
    if other.effect_allele == reference.effect_allele && other.other_allele == reference.other_allele {
        Alignment::Same
    } else if other.effect_allele == reference.other_allele && other.other_allele == reference.effect_allele {
        Alignment::Swapped
    } else {
        Alignment::Inconsistent
    }
}

/// Intersect the three sources with the LD panel, align alleles to the exposure, and order block-major.
pub fn harmonize(
    exposure: &SummaryStats,
    outcome: &SummaryStats,
    supplemental: &SummaryStats,
    ld: &LdBlockSet,
) -> Result<(HarmonizedDataset, HarmonizationReport)> {
    for s in [exposure, outcome, supplemental] {
        if s.is_empty() {
            return Err(DeemError::Harmonization(format!("'{}' has no SNPs", s.trait_label)));
        }
    }
    if ld.dim() == 0 {
        return Err(DeemError::Harmonization("LD block set is empty".into()));
    }
    let index = |s: &SummaryStats| -> HashMap<String, usize> {
        s.records.iter().enumerate().map(|(i, r)| (r.snp_id.clone(), i)).collect()
    };
    let (ie, io, is) = (index(exposure), index(outcome), index(supplemental));
    let mut report = HarmonizationReport::default();
    let mut keep_global = Vec::new();
    let mut recs = (Vec::new(), Vec::new(), Vec::new());
    for (g, id) in ld.snp_ids().iter().enumerate() {
        let (Some(&a), Some(&b), Some(&c)) = (ie.get(id), io.get(id), is.get(id)) else {
            continue;
        };
        report.intersected += 1;
        let e = &exposure.records[a];
        let (o, s) = (&outcome.records[b], &supplemental.records[c]);
        if e.is_ambiguous() || o.is_ambiguous() || s.is_ambiguous() {
            report.dropped_ambiguous += 1;
            continue;
        }
        let mut aligned = Vec::with_capacity(2);
        let mut consistent = true;
        let mut flips = 0;
        for r in [o, s] {
            match align(e, r) {
                Alignment::Same => aligned.push(r.clone()),
                Alignment::Swapped => {
                    flips += 1;
                    aligned.push(SnpRecord {
                        effect_allele: e.effect_allele,
                        other_allele: e.other_allele,
                        beta: -r.beta,
                        ..r.clone()
                    });
                }
                Alignment::Inconsistent => consistent = false,
            }
        }
        if !consistent {
            report.dropped_inconsistent += 1;
            continue;
        }
        report.sign_flipped += flips;
        keep_global.push(g);
        recs.0.push(e.clone());
        recs.2.push(aligned.pop().expect("supplemental record"));
        recs.1.push(aligned.pop().expect("outcome record"));
    }
    if keep_global.is_empty() {
        return Err(DeemError::Harmonization(format!(
            "no SNPs survive harmonization ({} shared, {} ambiguous, {} inconsistent)",
            report.intersected, report.dropped_ambiguous, report.dropped_inconsistent
        )));
    }
    let ld_out = ld.subset(&keep_global);
    let ds = HarmonizedDataset {
        snp_index: ld_out.snp_ids(),
        exposure: SummaryStats { records: recs.0, ..exposure.clone_meta() },
        outcome: SummaryStats { records: recs.1, ..outcome.clone_meta() },
        supplemental: SummaryStats { records: recs.2, ..supplemental.clone_meta() },
        ld: ld_out,
    };
    Ok((ds, report))
}

impl SummaryStats {
    fn clone_meta(&self) -> SummaryStats {
        SummaryStats {
            records: Vec::new(),
            trait_label: self.trait_label.clone(),
            sample_size: self.sample_size,
        }
    }
}

/// Two-sided normal p-values `2(1 − Φ(|beta/se|))`.
pub fn pvalues(stats: &SummaryStats) -> Vec<f64> {
    stats
        .records
        .iter()
        .map(|r| erfc((r.beta / r.se).abs() / std::f64::consts::SQRT_2))
        .collect()
}
