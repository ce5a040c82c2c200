//! Block-diagonal symmetric linear algebra over LD blocks.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{DeemError, Result};
use crate::io::{open_text, read_lines};

/// One LD block: its SNPs in canonical order and their correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LdBlock {
    pub block_id: String,
    pub snp_ids: Vec<String>,
    pub corr: DMatrix<f64>,
}

/// Ordered partition of SNPs into disjoint blocks, each with a unit-diagonal correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LdBlockSet {
    blocks: Vec<LdBlock>,
}

impl LdBlockSet {
    pub fn new(blocks: Vec<LdBlock>) -> Result<Self> {
        let mut seen = HashSet::new();
        for b in &blocks {
            let k = b.snp_ids.len();
            if k == 0 {
                return Err(DeemError::Validation(format!("block '{}' is empty", b.block_id)));
            }
            if b.corr.nrows() != k || b.corr.ncols() != k {
                return Err(DeemError::Alignment(format!(
                    "block '{}' has {} SNPs but a {}x{} correlation matrix",
                    b.block_id,
                    k,
                    b.corr.nrows(),
                    b.corr.ncols()
                )));
            }
            for i in 0..k {
                if b.corr[(i, i)] != 1.0 {
                    return Err(DeemError::Validation(format!(
                        "block '{}' diagonal entry {} is {}, expected 1",
                        b.block_id, i, b.corr[(i, i)]
                    )));
                }
                for j in 0..i {
                    let (x, y) = (b.corr[(i, j)], b.corr[(j, i)]);
                    if !x.is_finite() || x.abs() > 1.0 || (x - y).abs() > 1e-12 {
                        return Err(DeemError::Validation(format!(
                            "block '{}' entry ({}, {}) is not a valid symmetric correlation",
                            b.block_id, i, j
                        )));
                    }
                }
            }
            for id in &b.snp_ids {
                if !seen.insert(id.as_str()) {
                    return Err(DeemError::Duplicate(id.clone()));
                }
            }
        }
        Ok(LdBlockSet { blocks })
    }

    /// Identity correlation blocks for a block map.
    pub fn identity(map: &BlockMap) -> Result<Self> {
        LdBlockSet::new(
            map.blocks
                .iter()
                .map(|(id, snps)| LdBlock {
                    block_id: id.clone(),
                    snp_ids: snps.clone(),
                    corr: DMatrix::identity(snps.len(), snps.len()),
                })
                .collect(),
        )
    }

    pub fn blocks(&self) -> &[LdBlock] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.snp_ids.len()).sum()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.snp_ids.len()).collect()
    }

    /// SNP ids in block-major order.
    pub fn snp_ids(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| b.snp_ids.iter().cloned()).collect()
    }

    /// Keep only the SNPs at the given global indices (strictly increasing); empty blocks are dropped.
    pub fn subset(&self, keep: &[usize]) -> LdBlockSet {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut cursor = 0;
        for b in &self.blocks {
            let k = b.snp_ids.len();
            let mut local = Vec::new();
            while cursor < keep.len() && keep[cursor] < offset + k {
                local.push(keep[cursor] - offset);
                cursor += 1;
            }
            if !local.is_empty() {
                let corr = DMatrix::from_fn(local.len(), local.len(), |i, j| b.corr[(local[i], local[j])]);
                out.push(LdBlock {
                    block_id: b.block_id.clone(),
                    snp_ids: local.iter().map(|&i| b.snp_ids[i].clone()).collect(),
                    corr,
                });
            }
            offset += k;
        }
        LdBlockSet { blocks: out }
    }

    pub fn to_block_diag(&self) -> BlockDiagMatrix {
        BlockDiagMatrix::from_parts(
            self.blocks.iter().map(|b| b.corr.clone()).collect(),
            self.blocks.iter().map(|b| b.block_id.clone()).collect(),
        )
    }
}

/// SNP-to-block membership in canonical block-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMap {
    pub blocks: Vec<(String, Vec<String>)>,
}

impl BlockMap {
    pub fn snp_ids(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|(_, s)| s.iter().cloned()).collect()
    }

    /// Contiguous blocks of `size` over the given SNP ids, named `block0`, `block1`, ...
    pub fn contiguous(snp_ids: &[String], size: usize) -> BlockMap {
        BlockMap {
            blocks: snp_ids
                .chunks(size.max(1))
                .enumerate()
                .map(|(i, c)| (format!("block{i}"), c.to_vec()))
                .collect(),
        }
    }
}

/// Read a `block_id<TAB>snp_id` TSV. Blocks must be contiguous in the file.
pub fn load_block_map(path: &Path) -> Result<BlockMap> {
    let lines = read_lines(path)?;
    let mut it = lines.into_iter();
    let header = it
        .next()
        .ok_or_else(|| fmt_err(path, "empty file".into()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["block_id", "snp_id"] {
        return Err(fmt_err(path, "header must be 'block_id\\tsnp_id'".into()));
    }
    let mut blocks: Vec<(String, Vec<String>)> = Vec::new();
    let mut closed = HashSet::new();
    let mut seen = HashSet::new();
    for (lineno, line) in it.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(fmt_err(path, format!("line {}: expected 2 fields", lineno + 2)));
        }
        if !seen.insert(f[1].to_string()) {
            return Err(DeemError::Duplicate(f[1].to_string()));
        }
        match blocks.last_mut() {
            Some((id, snps)) if id == f[0] => snps.push(f[1].to_string()),
            _ => {
                if closed.contains(f[0]) {
                    return Err(fmt_err(path, format!("block '{}' is not contiguous", f[0])));
                }
                if let Some((prev, _)) = blocks.last() {
                    closed.insert(prev.clone());
                }
                blocks.push((f[0].to_string(), vec![f[1].to_string()]));
            }
        }
    }
    if blocks.is_empty() {
        return Err(fmt_err(path, "no blocks".into()));
    }
    Ok(BlockMap { blocks })
}

fn fmt_err(path: &Path, message: String) -> DeemError {
    DeemError::Format {
        path: path.display().to_string(),
        message,
    }
}

/// Reference-panel dosages, row-major `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    pub snp_ids: Vec<String>,
    pub n: usize,
    pub data: Vec<u8>,
}

impl GenotypeMatrix {
    pub fn new(snp_ids: Vec<String>, n: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * snp_ids.len() {
            return Err(DeemError::Alignment(format!(
                "genotype data has {} entries, expected {} x {}",
                data.len(),
                n,
                snp_ids.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&g| g > 2) {
            return Err(DeemError::Validation(format!("dosage {bad} outside {{0,1,2}}")));
        }
        Ok(GenotypeMatrix { snp_ids, n, data })
    }

    pub fn d(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.snp_ids.len() + col]
    }
}

/// Read a dosage matrix TSV: header of snp_ids, one row per individual.
pub fn load_reference_genotypes(path: &Path) -> Result<GenotypeMatrix> {
    let lines = read_lines(path)?;
    let mut it = lines.into_iter();
    let header = it
        .next()
        .ok_or_else(|| fmt_err(path, "empty file".into()))?;
    let snp_ids: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
    let d = snp_ids.len();
    let mut data = Vec::new();
    let mut n = 0;
    for (lineno, line) in it.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != d {
            return Err(fmt_err(path, format!("line {}: expected {} fields", lineno + 2, d)));
        }
        for f in fields {
            match f.trim() {
                "0" => data.push(0),
                "1" => data.push(1),
                "2" => data.push(2),
                other => {
                    return Err(fmt_err(path, format!("line {}: bad dosage '{}'", lineno + 2, other)))
                }
            }
        }
        n += 1;
    }
    GenotypeMatrix::new(snp_ids, n, data)
}

/// Read per-block `<block_id>.corr.tsv` square matrices from a directory.
pub fn load_corr_dir(dir: &Path, map: &BlockMap) -> Result<LdBlockSet> {
    let mut blocks = Vec::with_capacity(map.blocks.len());
    for (id, snps) in &map.blocks {
        let path = dir.join(format!("{id}.corr.tsv"));
        let text = open_text(&path)?;
        let k = snps.len();
        let mut vals = Vec::with_capacity(k * k);
        let mut rows = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt_err(&path, format!("row {}: {e}", rows + 1)))?;
            if row.len() != k {
                return Err(fmt_err(&path, format!("row {} has {} entries, expected {}", rows + 1, row.len(), k)));
            }
            vals.extend(row);
            rows += 1;
        }
        if rows != k {
            return Err(fmt_err(&path, format!("{rows} rows, expected {k}")));
        }
        let mut corr = DMatrix::from_row_slice(k, k, &vals);
        for i in 0..k {
            corr[(i, i)] = 1.0;
        }
        blocks.push(LdBlock {
            block_id: id.clone(),
            snp_ids: snps.clone(),
            corr,
        });
    }
    LdBlockSet::new(blocks)
}

/// Sample Pearson correlations within each block of `map`.
pub fn estimate_block_correlations(geno: &GenotypeMatrix, map: &BlockMap) -> Result<LdBlockSet> {
    if geno.n < 2 {
        return Err(DeemError::Validation("reference panel needs at least 2 individuals".into()));
    }
    let col_of: std::collections::HashMap<&str, usize> =
        geno.snp_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let blocks: Vec<Result<LdBlock>> = map
        .blocks
        .par_iter()
        .map(|(id, snps)| {
            let cols: Vec<usize> = snps
                .iter()
                .map(|s| {
                    col_of
                        .get(s.as_str())
                        .copied()
                        .ok_or_else(|| DeemError::Alignment(format!("SNP '{s}' missing from reference genotypes")))
                })
                .collect::<Result<_>>()?;
            let k = cols.len();
            let n = geno.n;
            let mut centered = DMatrix::<f64>::zeros(n, k);
            for (c, &col) in cols.iter().enumerate() {
                let mean = (0..n).map(|r| geno.get(r, col) as f64).sum::<f64>() / n as f64;
                for r in 0..n {
                    centered[(r, c)] = geno.get(r, col) as f64 - mean;
                }
            }
            let cross = centered.tr_mul(&centered);
            for c in 0..k {
                if cross[(c, c)] <= 0.0 {
                    return Err(DeemError::DegenerateSnp(snps[c].clone()));
                }
            }
            let corr = DMatrix::from_fn(k, k, |i, j| {
                if i == j {
                    1.0
                } else {
                    (cross[(i, j)] / (cross[(i, i)] * cross[(j, j)]).sqrt()).clamp(-1.0, 1.0)
                }
            });
            Ok(LdBlock {
                block_id: id.clone(),
                snp_ids: snps.clone(),
                corr,
            })
        })
        .collect();
    LdBlockSet::new(blocks.into_iter().collect::<Result<_>>()?)
}

/// Blend each block toward the identity: `lambda * corr + (1 - lambda) * I`.
pub fn regularize(ld: &LdBlockSet, lambda: f64) -> LdBlockSet {
    let blocks = ld
        .blocks
        .iter()
        .map(|b| {
            let k = b.snp_ids.len();
            let corr = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { lambda * b.corr[(i, j)] });
            LdBlock {
                block_id: b.block_id.clone(),
                snp_ids: b.snp_ids.clone(),
                corr,
            }
        })
        .collect();
    LdBlockSet { blocks }
}

/// Symmetric block-diagonal matrix with lazily cached per-block Cholesky factors and inverses.
#[derive(Debug, Clone)]
pub struct BlockDiagMatrix {
    blocks: Vec<DMatrix<f64>>,
    labels: Vec<String>,
    offsets: Vec<usize>,
    dim: usize,
    chol: OnceLock<Result<Vec<Cholesky<f64, Dyn>>>>,
    inv: OnceLock<Result<Vec<DMatrix<f64>>>>,
}

impl PartialEq for BlockDiagMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks
    }
}

impl BlockDiagMatrix {
    /// Build from square symmetric blocks; asymmetry beyond 1e-12 relative is rejected.
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() {
                return Err(DeemError::Alignment(format!("block {k} is not square")));
            }
            let scale = b.amax().max(f64::MIN_POSITIVE);
            for i in 0..b.nrows() {
                for j in 0..i {
                    if (b[(i, j)] - b[(j, i)]).abs() > 1e-12 * scale {
                        return Err(DeemError::Validation(format!("block {k} is not symmetric")));
                    }
                }
            }
        }
        let labels = (0..blocks.len()).map(|k| format!("block{k}")).collect();
        Ok(Self::from_parts(blocks, labels))
    }

    pub(crate) fn from_parts(blocks: Vec<DMatrix<f64>>, labels: Vec<String>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0;
        for b in &blocks {
            offsets.push(acc);
            acc += b.nrows();
        }
        offsets.push(acc);
        BlockDiagMatrix {
            blocks,
            labels,
            offsets,
            dim: acc,
            chol: OnceLock::new(),
            inv: OnceLock::new(),
        }
    }

    pub fn identity(sizes: &[usize]) -> Self {
        Self::from_parts(
            sizes.iter().map(|&k| DMatrix::identity(k, k)).collect(),
            (0..sizes.len()).map(|k| format!("block{k}")).collect(),
        )
    }

    /// Diagonal matrix laid out on the given block sizes.
    pub fn from_diagonal(sizes: &[usize], diag: &[f64]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total != diag.len() {
            return Err(DeemError::Alignment(format!(
                "diagonal has {} entries, block sizes sum to {}",
                diag.len(),
                total
            )));
        }
        let mut off = 0;
        let blocks = sizes
            .iter()
            .map(|&k| {
                let m = DMatrix::from_diagonal(&DVector::from_column_slice(&diag[off..off + k]));
                off += k;
                m
            })
            .collect();
        Ok(Self::from_parts(blocks, (0..sizes.len()).map(|k| format!("block{k}")).collect()))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        if labels.len() == self.blocks.len() {
            self.labels = labels;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Start offset of each block plus a trailing total.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.diagonal().iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            m.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        }
        m
    }

    pub fn check_aligned(&self, other: &BlockDiagMatrix) -> Result<()> {
        if self.block_sizes() != other.block_sizes() {
            return Err(DeemError::Alignment("block structures differ".into()));
        }
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(DeemError::Alignment(format!("vector length {} vs matrix dimension {}", n, self.dim)));
        }
        Ok(())
    }

    /// `diag(s) · self · diag(s)`.
    pub fn scale_sym(&self, s: &[f64]) -> Result<BlockDiagMatrix> {
        self.check_len(s.len())?;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let o = self.offsets[k];
                DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| s[o + i] * b[(i, j)] * s[o + j])
            })
            .collect();
        Ok(Self::from_parts(blocks, self.labels.clone()))
    }

    /// `a·self + b·other`, blockwise.
    pub fn lin_comb(&self, a: f64, other: &BlockDiagMatrix, b: f64) -> Result<BlockDiagMatrix> {
        self.check_aligned(other)?;
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(x, y)| x * a + y * b)
            .collect();
        Ok(Self::from_parts(blocks, self.labels.clone()))
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = vec![0.0; self.dim];
        for (k, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[k];
            let n = b.nrows();
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += b[(i, j)] * x[o + j];
                }
                out[o + i] = acc;
            }
        }
        Ok(out)
    }

    /// Cached per-block Cholesky factors; computed once, race-free.
    pub fn factors(&self) -> Result<&[Cholesky<f64, Dyn>]> {
        let res = self.chol.get_or_init(|| {
            self.blocks
                .par_iter()
                .zip(self.labels.par_iter())
                .map(|(b, label)| {
                    Cholesky::new(b.clone()).ok_or_else(|| DeemError::Singular { block: label.clone() })
                })
                .collect()
        });
        match res {
            Ok(f) => Ok(f.as_slice()),
            Err(e) => Err(e.clone()),
        }
    }

    /// Cached dense per-block inverses.
    pub fn inverse_blocks(&self) -> Result<&[DMatrix<f64>]> {
        let res = self.inv.get_or_init(|| {
            let f = self.factors()?;
            Ok(f.par_iter()
                .map(|c| {
                    let inv = c.inverse();
                    // symmetrize away rounding
                    (&inv + inv.transpose()) * 0.5
                })
                .collect())
        });
        match res {
            Ok(v) => Ok(v.as_slice()),
            Err(e) => Err(e.clone()),
        }
    }

    /// Solve `self · x = b` block by block.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let f = self.factors()?;
        let mut out = vec![0.0; self.dim];
        for (k, c) in f.iter().enumerate() {
            let o = self.offsets[k];
            let n = self.offsets[k + 1] - o;
            let rhs = DVector::from_column_slice(&b[o..o + n]);
            let x = c.solve(&rhs);
            out[o..o + n].copy_from_slice(x.as_slice());
        }
        Ok(out)
    }

    /// `aᵀ self⁻¹ b`.
    pub fn quad_form(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_len(a.len())?;
        let x = self.solve(b)?;
        Ok(dot(a, &x))
    }

    /// `tr{self⁻¹ a}`.
    pub fn trace_inv_prod(&self, a: &BlockDiagMatrix) -> Result<f64> {
        self.check_aligned(a)?;
        let inv = self.inverse_blocks()?;
        Ok(inv.iter().zip(&a.blocks).map(|(vi, ab)| trace_of_product(vi, ab)).sum())
    }

    /// `tr{self⁻¹ diag(d)}`.
    pub fn trace_inv_diag(&self, d: &[f64]) -> Result<f64> {
        self.check_len(d.len())?;
        let vid = self.inverse_diagonal()?;
        Ok(dot(&vid, d))
    }

    /// Diagonal of `self⁻¹`.
    pub fn inverse_diagonal(&self) -> Result<Vec<f64>> {
        let inv = self.inverse_blocks()?;
        Ok(inv.iter().flat_map(|b| b.diagonal().iter().copied().collect::<Vec<_>>()).collect())
    }

    /// Diagonals of `self⁻¹ a` and of `self⁻¹`.
    pub fn diag_of_inv_prod(&self, a: &BlockDiagMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_aligned(a)?;
        let inv = self.inverse_blocks()?;
        let mut prod = Vec::with_capacity(self.dim);
        let mut vinv = Vec::with_capacity(self.dim);
        for (vi, ab) in inv.iter().zip(&a.blocks) {
            let n = vi.nrows();
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += vi[(j, l)] * ab[(l, j)];
                }
                prod.push(acc);
                vinv.push(vi[(j, j)]);
            }
        }
        Ok((prod, vinv))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `tr(a·b)` without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for l in 0..n {
            acc += a[(i, l)] * b[(l, i)];
        }
    }
    acc
}
