//! Desk-scale genotypes: two latent AR(1) Gaussian haplotypes per block, thresholded at each SNP's MAF.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Scenario;
use crate::error::Result;
use crate::ldcore::GenotypeMatrix;

/// Fixed per-SNP allele frequencies and the latent LD structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeModel {
    pub mafs: Vec<f64>,
    thresholds: Vec<f64>,
    block_size: usize,
    rho: f64,
    innov_sd: f64,
    /// Standardized value of dosage 0, 1, 2 for each SNP, using the population MAF.
    pub(crate) std_values: Vec<[f64; 3]>,
}

impl GenotypeModel {
    /// Draw MAFs uniformly from the scenario range.
    pub fn new<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Self {
        let (lo, hi) = scenario.maf_range;
        let mafs: Vec<f64> = if lo == hi {
            vec![lo; scenario.d]
        } else {
            let u = Uniform::new_inclusive(lo, hi).expect("valid MAF range");
            (0..scenario.d).map(|_| u.sample(rng)).collect()
        };
        Self::with_mafs(mafs, scenario.block_size, scenario.ar1_rho)
    }

    pub fn with_mafs(mafs: Vec<f64>, block_size: usize, rho: f64) -> Self {
        let n01 = Normal::new(0.0, 1.0).expect("standard normal");
        let thresholds = mafs.iter().map(|&p| n01.inverse_cdf(p)).collect();
        let std_values = mafs
            .iter()
            .map(|&p| {
                let sd = (2.0 * p * (1.0 - p)).sqrt();
                [(0.0 - 2.0 * p) / sd, (1.0 - 2.0 * p) / sd, (2.0 - 2.0 * p) / sd]
            })
            .collect();
        GenotypeModel {
            mafs,
            thresholds,
            block_size,
            rho,
            innov_sd: (1.0 - rho * rho).sqrt(),
            std_values,
        }
    }

    pub fn d(&self) -> usize {
        self.mafs.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// One individual's dosages into `out`.
    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u8]) {
        for (start, chunk) in (0..self.d()).step_by(self.block_size).zip(out.chunks_mut(self.block_size)) {
            for o in chunk.iter_mut() {
                *o = 0;
            }
            for _ in 0..2 {
                let mut z: f64 = StandardNormal.sample(rng);
                for (i, o) in chunk.iter_mut().enumerate() {
                    if i > 0 {
                        let e: f64 = StandardNormal.sample(rng);
                        z = self.rho * z + self.innov_sd * e;
                    }
                    if z < self.thresholds[start + i] {
                        *o += 1;
                    }
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<GenotypeMatrix> {
        let d = self.d();
        let mut data = vec![0u8; n * d];
        for row in data.chunks_mut(d) {
            self.sample_row(rng, row);
        }
        GenotypeMatrix::new((0..d).map(snp_name).collect(), n, data)
    }
}

pub(crate) fn snp_name(j: usize) -> String {
    format!("snp{j}")
}

/// `n × d` dosage matrix under a freshly drawn MAF vector.
pub fn gen_genotypes<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<GenotypeMatrix> {
    GenotypeModel::new(scenario, rng).sample(n, rng)
}
