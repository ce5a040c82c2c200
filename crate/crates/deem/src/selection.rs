//! Supplemental-sample p-value thresholding and greedy LD clumping.

use serde::{Deserialize, Serialize};

use crate::error::{DeemError, Result};
use crate::ldcore::LdBlockSet;
use crate::sumstats::{pvalues, HarmonizedDataset};

/// p-value threshold `c` and the maximal retained |correlation| for clumping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub pvalue_threshold: f64,
    pub clump_r_threshold: f64,
}

impl SelectionConfig {
    pub fn new(pvalue_threshold: f64, clump_r_threshold: f64) -> Result<Self> {
        let in_range = |x: f64| x > 0.0 && x <= 1.0;
        if !in_range(pvalue_threshold) || !in_range(clump_r_threshold) {
            return Err(DeemError::Config(format!(
                "thresholds must lie in (0, 1]: pvalue {pvalue_threshold}, clump r {clump_r_threshold}"
            )));
        }
        Ok(SelectionConfig {
            pvalue_threshold,
            clump_r_threshold,
        })
    }

    /// Liberal threshold with collinearity-only clumping.
    pub fn deem() -> Self {
        SelectionConfig {
            pvalue_threshold: 0.1,
            clump_r_threshold: 0.9,
        }
    }

    pub fn strict() -> Self {
        SelectionConfig {
            pvalue_threshold: 1e-4,
            clump_r_threshold: 0.9,
        }
    }

    pub fn independent() -> Self {
        SelectionConfig {
            pvalue_threshold: 0.1,
            clump_r_threshold: 0.01,
        }
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self::deem()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Kept,
    PrunedByPvalue,
    PrunedByLd,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::Kept => "kept",
            Reason::PrunedByPvalue => "pruned_by_pvalue",
            Reason::PrunedByLd => "pruned_by_ld",
        }
    }
}

/// Selected SNP indices plus a reason and supplemental p-value for every SNP.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSet {
    pub indices: Vec<usize>,
    pub reasons: Vec<Reason>,
    pub pvalues: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub total: usize,
    pub kept: usize,
    pub pruned_by_pvalue: usize,
    pub pruned_by_ld: usize,
}

impl SelectedSet {
    pub fn report(&self) -> SelectionReport {
        let count = |r: Reason| self.reasons.iter().filter(|&&x| x == r).count();
        SelectionReport {
            total: self.reasons.len(),
            kept: count(Reason::Kept),
            pruned_by_pvalue: count(Reason::PrunedByPvalue),
            pruned_by_ld: count(Reason::PrunedByLd),
        }
    }
}

/// Select instruments using only supplemental statistics and the dataset's unregularized LD.
pub fn select(ds: &HarmonizedDataset, cfg: &SelectionConfig) -> Result<SelectedSet> {
    select_with_ld(ds, cfg, &ds.ld)
}

/// As [`select`], clumping against a separate LD panel. SNPs absent from `clump_ld` are treated as uncorrelated.
pub fn select_with_ld(ds: &HarmonizedDataset, cfg: &SelectionConfig, clump_ld: &LdBlockSet) -> Result<SelectedSet> {
    let p = pvalues(&ds.supplemental);
    let d = ds.len();
    let mut reasons = vec![Reason::PrunedByPvalue; d];

    let clump_pos: std::collections::HashMap<&str, (usize, usize)> = clump_ld
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(b, blk)| blk.snp_ids.iter().enumerate().map(move |(i, s)| (s.as_str(), (b, i))))
        .collect();
    let corr = |a: usize, b: usize| -> f64 {
        match (clump_pos.get(ds.snp_index[a].as_str()), clump_pos.get(ds.snp_index[b].as_str())) {
            (Some(&(ba, ia)), Some(&(bb, ib))) if ba == bb => clump_ld.blocks()[ba].corr[(ia, ib)],
            _ => 0.0,
        }
    };

    let mut offset = 0;
    for blk in ds.ld.blocks() {
        let k = blk.snp_ids.len();
        let mut order: Vec<usize> = (offset..offset + k).filter(|&j| p[j] <= cfg.pvalue_threshold).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then_with(|| ds.snp_index[a].cmp(&ds.snp_index[b])));
        let mut kept: Vec<usize> = Vec::new();
        for j in order {
            if kept.iter().all(|&m| corr(j, m).abs() < cfg.clump_r_threshold) {
                kept.push(j);
                reasons[j] = Reason::Kept;
            } else {
                reasons[j] = Reason::PrunedByLd;
            }
        }
        offset += k;
    }
    let indices: Vec<usize> = (0..d).filter(|&j| reasons[j] == Reason::Kept).collect();
    let set = SelectedSet {
        indices,
        reasons,
        pvalues: p,
    };
    if set.indices.is_empty() {
        let r = set.report();
        return Err(DeemError::SelectionEmpty {
            total: r.total,
            pruned_pvalue: r.pruned_by_pvalue,
            pruned_ld: r.pruned_by_ld,
        });
    }
    Ok(set)
}

/// Restrict every vector and LD block to the selected SNPs; empty blocks disappear.
pub fn restrict(ds: &HarmonizedDataset, sel: &SelectedSet) -> HarmonizedDataset {
    ds.subset(&sel.indices)
}
