use diffcore::{Real, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, VganError};

/// Feature rows `[n, d]` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim || rows == 0 || dim == 0 {
            return Err(VganError::Metric(format!("{} values do not form a {rows}×{dim} feature matrix", data.len())));
        }
        Ok(Features { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(VganError::Metric("ragged feature rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let m = DMatrix::from_row_slice(self.rows, self.dim, &self.data);
        let mean = DVector::from_iterator(self.dim, m.column_iter().map(|c| c.mean()));
        let mut centered = m;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let denom = (self.rows.max(2) - 1) as f64;
        let mut cov = centered.transpose() * &centered / denom;
        if self.rows < self.dim + 1 {
            let ridge = 1e-6 * cov.trace() / self.dim as f64;
            for i in 0..self.dim {
                cov[(i, i)] += ridge;
            }
        }
        (mean, cov)
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_distance(a: &Features, b: &Features) -> Result<f64> {
    if a.dim != b.dim {
        return Err(VganError::Metric(format!("feature dims differ: {} vs {}", a.dim, b.dim)));
    }
    if a.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
        return Err(VganError::Metric("non-finite features".into()));
    }
    let (m1, s1) = a.moments();
    let (m2, s2) = b.moments();
    let r = psd_sqrt(&s1);
    let mut inner = &r * &s2 * &r;
    // symmetrize before the eigensolver
    inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (m1 - m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Maps images to feature rows.
pub trait FeatureExtractor {
    fn extract<T: Real>(&self, images: &[Tensor<T>]) -> Result<Features>;
}

/// Fixed-seed stand-in for a pretrained backbone: per-channel mean and
/// standard deviation plus a random projection of an average-pooled
/// thumbnail. Distances from it are only comparable with each other.
#[derive(Debug, Clone)]
pub struct PooledProjection {
    pub pool: usize,
    pub proj: DMatrix<f64>,
}

impl PooledProjection {
    pub fn new(pool: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = 3 * pool * pool;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let proj = DMatrix::from_fn(out_dim, fan_in, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        PooledProjection { pool, proj }
    }

    pub fn dim(&self) -> usize {
        6 + self.proj.nrows()
    }
}

impl Default for PooledProjection {
    fn default() -> Self {
        Self::new(4, 16, 0x5eed)
    }
}

impl FeatureExtractor for PooledProjection {
    fn extract<T: Real>(&self, images: &[Tensor<T>]) -> Result<Features> {
        let mut data = Vec::with_capacity(images.len() * self.dim());
        for img in images {
            let s = img.shape();
            if s.len() != 3 || s[0] != 3 || s[1] % self.pool != 0 || s[2] % self.pool != 0 {
                return Err(VganError::Metric(format!("extractor expects [3, H, W] divisible by {}, got {s:?}", self.pool)));
            }
            let (h, w) = (s[1], s[2]);
            let x = img.to_f64_vec();
            for c in 0..3 {
                let ch = &x[c * h * w..(c + 1) * h * w];
                let mean = ch.iter().sum::<f64>() / ch.len() as f64;
                let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64;
                data.push(mean);
                data.push(var.sqrt());
            }
            let (bh, bw) = (h / self.pool, w / self.pool);
            let mut thumb = Vec::with_capacity(3 * self.pool * self.pool);
            for c in 0..3 {
                for i in 0..self.pool {
                    for j in 0..self.pool {
                        let mut acc = 0.0;
                        for r in 0..bh {
                            for q in 0..bw {
                                acc += x[c * h * w + (i * bh + r) * w + j * bw + q];
                            }
                        }
                        thumb.push(acc / (bh * bw) as f64);
                    }
                }
            }
            let f = &self.proj * DVector::from_vec(thumb);
            data.extend(f.iter());
        }
        Features::new(images.len(), self.dim(), data)
    }
}
