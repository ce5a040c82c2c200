#![allow(dead_code)]

use deem::ldcore::{BlockDiagMatrix, LdBlock, LdBlockSet};
use deem::sumstats::{HarmonizedDataset, SnpRecord, SummaryStats};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian(rng, n, n);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// PSD of rank ≤ n, possibly singular.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let k = rng.random_range(1..=n);
    let a = gaussian(rng, n, k);
    &a * a.transpose() / n as f64
}

pub fn random_corr(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let s = random_spd(rng, n);
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)].sqrt()).collect();
    let mut c = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (d[i] * d[j]));
    c.fill_diagonal(1.0);
    c
}

pub fn block_diag(blocks: Vec<DMatrix<f64>>) -> BlockDiagMatrix {
    BlockDiagMatrix::new(blocks).unwrap()
}

/// Dense block-diagonal assembly, independent of `BlockDiagMatrix::to_dense`.
pub fn dense(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        for i in 0..b.nrows() {
            for j in 0..b.ncols() {
                m[(o + i, o + j)] = b[(i, j)];
            }
        }
        o += b.nrows();
    }
    m
}

pub fn ld_set(corrs: Vec<DMatrix<f64>>) -> LdBlockSet {
    let mut k = 0;
    let blocks = corrs
        .into_iter()
        .enumerate()
        .map(|(b, corr)| {
            let ids = (0..corr.nrows())
                .map(|_| {
                    k += 1;
                    format!("rs{k}")
                })
                .collect();
            LdBlock {
                block_id: format!("blk{b}"),
                snp_ids: ids,
                corr,
            }
        })
        .collect();
    LdBlockSet::new(blocks).unwrap()
}

pub fn stats(ids: &[String], beta: &[f64], se: &[f64], n: u64, label: &str) -> SummaryStats {
    let recs = ids
        .iter()
        .zip(beta.iter().zip(se))
        .map(|(id, (&beta, &se))| SnpRecord {
            snp_id: id.clone(),
            effect_allele: 'A',
            other_allele: 'G',
            beta,
            se,
            n,
        })
        .collect();
    SummaryStats::new(recs, label, n).unwrap()
}

/// Aligned dataset with common standard error `se` for every trait.
pub fn dataset(ld: LdBlockSet, gh: &[f64], bg: &[f64], gt: &[f64], se: f64) -> HarmonizedDataset {
    let ids = ld.snp_ids();
    let ses = vec![se; ids.len()];
    HarmonizedDataset::from_aligned(
        stats(&ids, gh, &ses, 10_000, "exposure"),
        stats(&ids, bg, &ses, 10_000, "outcome"),
        stats(&ids, gt, &ses, 10_000, "supplemental"),
        ld,
    )
    .unwrap()
}
