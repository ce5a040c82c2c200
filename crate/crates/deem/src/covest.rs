//! Covariance estimates from summary statistics, the working covariance V, and diagonal projections.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DeemError, Result};
use crate::ldcore::{regularize, BlockDiagMatrix, LdBlockSet};
use crate::sumstats::{HarmonizedDataset, SummaryStats};

/// Per-SNP scale `sqrt(se² + beta²/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDiag {
    pub entries: Vec<f64>,
}

pub fn scale_diag(stats: &SummaryStats) -> ScaleDiag {
    ScaleDiag {
        entries: stats
            .records
            .iter()
            .map(|r| scale_entry(r.se, r.beta, r.n as f64))
            .collect(),
    }
}

pub(crate) fn scale_entry(se: f64, beta: f64, n: f64) -> f64 {
    (se * se + beta * beta / n).sqrt()
}

fn check_scale(scale: &ScaleDiag, ld: &LdBlockSet) -> Result<()> {
    if scale.entries.len() != ld.dim() {
        return Err(DeemError::Alignment(format!(
            "scale has {} entries, LD blocks cover {} SNPs",
            scale.entries.len(),
            ld.dim()
        )));
    }
    if let Some(bad) = scale.entries.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(DeemError::Validation(format!("scale entry {bad} is not positive")));
    }
    Ok(())
}

/// `S R S` per block.
pub fn estimate_sigma(scale: &ScaleDiag, ld: &LdBlockSet) -> Result<BlockDiagMatrix> {
    check_scale(scale, ld)?;
    ld.to_block_diag().scale_sym(&scale.entries)
}

/// `S R S⁻² R S` per block, assembled as `B Bᵀ` with `B = S R S⁻¹`.
pub fn estimate_sigma_p(scale_gamma_out: &ScaleDiag, ld: &LdBlockSet) -> Result<BlockDiagMatrix> {
    check_scale(scale_gamma_out, ld)?;
    let s = &scale_gamma_out.entries;
    let mut off = 0;
    let mut blocks = Vec::with_capacity(ld.blocks().len());
    for blk in ld.blocks() {
        let k = blk.snp_ids.len();
        let b = DMatrix::from_fn(k, k, |i, j| s[off + i] * blk.corr[(i, j)] / s[off + j]);
        let p = &b * b.transpose();
        blocks.push((&p + p.transpose()) * 0.5);
        off += k;
    }
    Ok(BlockDiagMatrix::new(blocks)?.with_labels(ld.blocks().iter().map(|b| b.block_id.clone()).collect()))
}

/// Working covariance `H^{1/2} R_F H^{1/2}` with `H = V_γ + (tr V_γ / tr V_p) V_p` and `R_F = λR + (1−λ)I`.
pub fn build_v(sigma_gamma: &BlockDiagMatrix, sigma_p: &BlockDiagMatrix, ld: &LdBlockSet, lambda: f64) -> Result<BlockDiagMatrix> {
    build_v_weighted(sigma_gamma, sigma_p, ld, lambda, None)
}

/// [`build_v`] with optional per-SNP positive weights multiplying the rows and columns of V.
///
/// The weights are used raw, with no normalization; intended for expert use only.
pub fn build_v_weighted(
    sigma_gamma: &BlockDiagMatrix,
    sigma_p: &BlockDiagMatrix,
    ld: &LdBlockSet,
    lambda: f64,
    weights: Option<&[f64]>,
) -> Result<BlockDiagMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DeemError::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    sigma_gamma.check_aligned(sigma_p)?;
    if sigma_gamma.block_sizes() != ld.block_sizes() {
        return Err(DeemError::Alignment("LD blocks do not match covariance blocks".into()));
    }
    let vg = sigma_gamma.diagonal();
    let vp = sigma_p.diagonal();
    let (tg, tp): (f64, f64) = (vg.iter().sum(), vp.iter().sum());
    if !(tp > 0.0) {
        return Err(DeemError::Degenerate("trace of the pleiotropy covariance diagonal is zero".into()));
    }
    let mut h: Vec<f64> = vg.iter().zip(&vp).map(|(g, p)| (g + tg / tp * p).sqrt()).collect();
    if let Some(w) = weights {
        if w.len() != h.len() {
            return Err(DeemError::Alignment(format!("{} weights for {} SNPs", w.len(), h.len())));
        }
        if let Some(bad) = w.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(DeemError::Validation(format!("weight {bad} is not positive")));
        }
        for (hj, wj) in h.iter_mut().zip(w) {
            *hj *= wj;
        }
    }
    regularize(ld, lambda).to_block_diag().scale_sym(&h)
}

/// `D_jj = [V⁻¹Σ]_jj / [V⁻¹]_jj`.
pub fn project_diagonal(sigma: &BlockDiagMatrix, v: &BlockDiagMatrix) -> Result<Vec<f64>> {
    let (prod, vinv) = v.diag_of_inv_prod(sigma)?;
    prod.iter()
        .zip(&vinv)
        .enumerate()
        .map(|(j, (p, q))| {
            if *q > 0.0 {
                Ok(p / q)
            } else {
                Err(DeemError::Conditioning(format!("[V⁻¹]_jj = {q} at SNP index {j}")))
            }
        })
        .collect()
}

/// Covariances, working covariance and their diagonal projections for one analysis.
#[derive(Debug, Clone)]
pub struct CovBundle {
    pub sigma_gamma: BlockDiagMatrix,
    pub sigma_big_gamma: BlockDiagMatrix,
    pub sigma_p: BlockDiagMatrix,
    pub v: BlockDiagMatrix,
    pub d_gamma: Vec<f64>,
    pub d_big_gamma: Vec<f64>,
    pub d_p: Vec<f64>,
}

impl CovBundle {
    /// Project all three covariances against `v`.
    ///
    /// Projections may be zero or negative when V is far from the Σ's.
    pub fn new(
        sigma_gamma: BlockDiagMatrix,
        sigma_big_gamma: BlockDiagMatrix,
        sigma_p: BlockDiagMatrix,
        v: BlockDiagMatrix,
    ) -> Result<Self> {
        v.check_aligned(&sigma_gamma)?;
        v.check_aligned(&sigma_big_gamma)?;
        v.check_aligned(&sigma_p)?;
        let d_gamma = project_diagonal(&sigma_gamma, &v)?;
        let d_big_gamma = project_diagonal(&sigma_big_gamma, &v)?;
        let d_p = project_diagonal(&sigma_p, &v)?;
        for (name, d) in [("D_gamma", &d_gamma), ("D_Gamma", &d_big_gamma), ("D_p", &d_p)] {
            if let Some(j) = d.iter().position(|&x| !x.is_finite()) {
                return Err(DeemError::Conditioning(format!("{name} entry {j} is {}", d[j])));
            }
        }
        Ok(CovBundle {
            sigma_gamma,
            sigma_big_gamma,
            sigma_p,
            v,
            d_gamma,
            d_big_gamma,
            d_p,
        })
    }

    /// Plug-in bundle from a harmonized dataset: exposure scales for Σ_γ, outcome scales for Σ_Γ and Σ_p.
    pub fn from_dataset(ds: &HarmonizedDataset, lambda: f64, weights: Option<&[f64]>) -> Result<Self> {
        let sg = estimate_sigma(&scale_diag(&ds.exposure), &ds.ld)?;
        let s_out = scale_diag(&ds.outcome);
        let sbg = estimate_sigma(&s_out, &ds.ld)?;
        let sp = estimate_sigma_p(&s_out, &ds.ld)?;
        let v = build_v_weighted(&sg, &sp, &ds.ld, lambda, weights)?;
        CovBundle::new(sg, sbg, sp, v)
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    pub fn diagnostics(&self) -> Result<CovDiagnostics> {
        let cond = self
            .v
            .blocks()
            .iter()
            .zip(self.v.labels())
            .map(|(b, label)| {
                let ev = SymmetricEigen::new(b.clone()).eigenvalues;
                let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
                BlockCondition {
                    block_id: label.clone(),
                    size: b.nrows(),
                    condition_number: hi / lo,
                }
            })
            .collect();
        Ok(CovDiagnostics {
            dim: self.dim(),
            n_blocks: self.v.n_blocks(),
            trace_vinv_sigma_gamma: self.v.trace_inv_prod(&self.sigma_gamma)?,
            trace_vinv_sigma_big_gamma: self.v.trace_inv_prod(&self.sigma_big_gamma)?,
            trace_vinv_sigma_p: self.v.trace_inv_prod(&self.sigma_p)?,
            trace_vinv_d_p: self.v.trace_inv_diag(&self.d_p)?,
            blocks: cond,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCondition {
    pub block_id: String,
    pub size: usize,
    pub condition_number: f64,
}

/// Traces and per-block conditioning of a [`CovBundle`], for debugging dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovDiagnostics {
    pub dim: usize,
    pub n_blocks: usize,
    pub trace_vinv_sigma_gamma: f64,
    pub trace_vinv_sigma_big_gamma: f64,
    pub trace_vinv_sigma_p: f64,
    pub trace_vinv_d_p: f64,
    pub blocks: Vec<BlockCondition>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldcore::{BlockMap, LdBlock};
    use crate::sumstats::SnpRecord;

    fn ld2(r: f64) -> LdBlockSet {
        LdBlockSet::new(vec![LdBlock {
            block_id: "b".into(),
            snp_ids: vec!["a".into(), "c".into()],
            corr: DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]),
        }])
        .unwrap()
    }

    fn bd(rows: &[f64], n: usize) -> BlockDiagMatrix {
        BlockDiagMatrix::new(vec![DMatrix::from_row_slice(n, n, rows)]).unwrap()
    }

    #[test]
    fn scale_entry_examples() {
        let st = |se: f64, beta: f64, n: u64| {
            scale_diag(&SummaryStats {
                records: vec![SnpRecord {
                    snp_id: "s".into(),
                    effect_allele: 'A',
                    other_allele: 'G',
                    beta,
                    se,
                    n,
                }],
                trait_label: "t".into(),
                sample_size: n,
            })
            .entries[0]
        };
        assert_eq!(st(0.01, 0.0, 123), 0.01);
        assert_eq!(scale_entry(0.0, 2.0, 4.0), 1.0);
        let x = st(0.005, 0.02, 50000);
        assert!((x - (2.5e-5f64 + 8e-9).sqrt()).abs() < 1e-15);
        assert!((x - 0.0050008).abs() < 1e-7);
    }

    #[test]
    fn sigma_examples() {
        let id = LdBlockSet::identity(&BlockMap {
            blocks: vec![("b".into(), vec!["a".into(), "c".into()])],
        })
        .unwrap();
        let s = ScaleDiag { entries: vec![2.0, 3.0] };
        assert_eq!(estimate_sigma(&s, &id).unwrap().to_dense(), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]));
        let ones = ScaleDiag { entries: vec![1.0, 1.0] };
        assert_eq!(estimate_sigma(&ones, &ld2(0.3)).unwrap().to_dense(), ld2(0.3).blocks()[0].corr);
        let m = estimate_sigma(&s, &ld2(0.5)).unwrap().to_dense();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]));
    }

    #[test]
    fn sigma_p_examples() {
        let id = ld2(0.0);
        let s = ScaleDiag { entries: vec![1.7, 0.2] };
        let p = estimate_sigma_p(&s, &id).unwrap().to_dense();
        assert!((p - DMatrix::identity(2, 2)).amax() < 1e-15);
        let ones = ScaleDiag { entries: vec![1.0, 1.0] };
        let r = ld2(0.4).blocks()[0].corr.clone();
        assert!((estimate_sigma_p(&ones, &ld2(0.4)).unwrap().to_dense() - &r * &r).amax() < 1e-15);
        // dense oracle S R S⁻² R S
        let s12 = ScaleDiag { entries: vec![1.0, 2.0] };
        let sm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let sinv2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.25]));
        let r5 = ld2(0.5).blocks()[0].corr.clone();
        let oracle = &sm * &r5 * sinv2 * &r5 * &sm;
        let got = estimate_sigma_p(&s12, &ld2(0.5)).unwrap().to_dense();
        assert!((got - &oracle).amax() < 1e-14);
        assert!((oracle[(0, 1)] - 1.25).abs() < 1e-14);
        assert!((oracle[(0, 0)] - 1.0625).abs() < 1e-14);
    }

    #[test]
    fn build_v_examples() {
        let i2 = bd(&[1.0, 0.0, 0.0, 1.0], 2);
        let v = build_v(&i2, &i2, &ld2(0.0), 0.5).unwrap();
        assert!((v.to_dense() - DMatrix::identity(2, 2) * 2.0).amax() < 1e-15);
        let v0 = build_v(&i2, &i2, &ld2(0.8), 0.0).unwrap().to_dense();
        assert_eq!(v0[(0, 1)], 0.0);
        let vh = build_v(&i2, &i2, &ld2(0.8), 0.5).unwrap().to_dense();
        assert!((vh[(0, 1)] - 0.8).abs() < 1e-15);
        assert!((vh[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn build_v_weights_scale_rows_and_columns() {
        let i2 = bd(&[1.0, 0.0, 0.0, 1.0], 2);
        let v = build_v_weighted(&i2, &i2, &ld2(0.8), 0.5, Some(&[1.0, 3.0])).unwrap().to_dense();
        assert!((v[(0, 1)] - 2.4).abs() < 1e-14);
        assert!((v[(1, 1)] - 18.0).abs() < 1e-13);
    }

    #[test]
    fn build_v_zero_trace_errors() {
        let i2 = bd(&[1.0, 0.0, 0.0, 1.0], 2);
        let z = bd(&[0.0; 4], 2);
        assert!(matches!(build_v(&i2, &z, &ld2(0.0), 0.5), Err(DeemError::Degenerate(_))));
    }

    #[test]
    fn projection_with_diagonal_v_is_diag_of_sigma() {
        let v = BlockDiagMatrix::from_diagonal(&[2], &[3.0, 0.5]).unwrap();
        let s = bd(&[0.7, 0.2, 0.2, 1.1], 2);
        let d = project_diagonal(&s, &v).unwrap();
        assert!((d[0] - 0.7).abs() < 1e-15 && (d[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn projection_counterexample_fixture() {
        let v = bd(&[2.0, 1.0, 1.0, 2.0], 2);
        let dg = project_diagonal(&bd(&[0.5, 0.1, 0.1, 0.5], 2), &v).unwrap();
        let dbg = project_diagonal(&bd(&[1.5, 0.9, 0.9, 1.5], 2), &v).unwrap();
        for j in 0..2 {
            assert!((dg[j] - 0.45).abs() < 1e-14);
            assert!((dbg[j] - 1.05).abs() < 1e-14);
        }
    }

    #[test]
    fn build_v_factorizes_over_lambda_grid() {
        let r = ld2(0.999);
        let sg = bd(&[0.3, 0.1, 0.1, 0.2], 2);
        let sp = bd(&[1.0, 0.9, 0.9, 1.0], 2);
        for lambda in [0.0, 0.5, 0.99] {
            assert!(build_v(&sg, &sp, &r, lambda).unwrap().factors().is_ok());
        }
    }
}
