//! Seedable randomness: substreams keyed by `(master_seed, path)`,
//! multivariate normal sampling and bootstrap resampling.
//!
//! A stream depends only on its key, never on which thread asks for it or in
//! what order, so any decomposition of work into tasks reproduces the same
//! draws as long as each task keeps its path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    /// Extends the path by one component.
    pub fn child(&self, component: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(component);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    pub fn with_path(&self, components: &[u64]) -> Self {
        let mut s = self.clone();
        s.path.extend_from_slice(components);
        s
    }

    fn key(&self) -> [u8; 32] {
        let mut h = splitmix64(self.master_seed);
        for (depth, &c) in self.path.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(c ^ (depth as u64 + 1).wrapping_mul(GOLDEN)));
        }
        h = splitmix64(h ^ self.path.len() as u64);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        key
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = cov`.
///
/// A pivot below `1e-12 × max diagonal` is treated as a failure.
pub fn cholesky(cov: &Matrix) -> Result<Matrix> {
    let n = cov.rows();
    if cov.cols() != n || n == 0 {
        return Err(Error::Shape(format!(
            "covariance must be square, got {}x{}",
            n,
            cov.cols()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let max_diag = (0..n)
        .map(|i| cov[(i, i)])
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max_diag.max(0.0);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let pivot = cov[(j, j)] - (0..j).map(|k| l[(j, k)].powi(2)).sum::<f64>();
        if !(pivot > tol) {
            return Err(Error::FactorizationFailure { pivot: j });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let s = cov[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvnSpec {
    mean: Vec<f64>,
    cov: Matrix,
    factor: Matrix,
    names: Vec<String>,
}

impl MvnSpec {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.rows() != mean.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries, covariance is {}x{}",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        let factor = cholesky(&cov)?;
        let names = (1..=mean.len()).map(|j| format!("V{j}")).collect();
        Ok(Self {
            mean,
            cov,
            factor,
            names,
        })
    }

    pub fn with_names(mut self, names: &[&str]) -> Result<Self> {
        if names.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "{} names for {} variables",
                names.len(),
                self.mean.len()
            )));
        }
        self.names = names.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Draws `n` rows as `mean + L·z`, one row of standard normals at a time.
pub fn sample_mvn(spec: &MvnSpec, n: usize, seed: &SeedSpec) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let p = spec.dim();
    let mut rng = seed.rng();
    let mut columns = vec![Vec::with_capacity(n); p];
    let mut z = vec![0.0; p];
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, col) in columns.iter_mut().enumerate() {
            let lz: f64 = (0..=i).map(|k| spec.factor[(i, k)] * z[k]).sum();
            col.push(spec.mean[i] + lz);
        }
    }
    DataMatrix::new(spec.names.clone(), columns)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bootstrap {
    /// `n` draws with replacement from `0..n`.
    pub indices: Vec<usize>,
    /// Rows never drawn, ascending.
    pub out_of_bag: Vec<usize>,
}

pub fn bootstrap_indices(n: usize, seed: &SeedSpec) -> Bootstrap {
    bootstrap_with(n, &mut seed.rng())
}

pub(crate) fn bootstrap_with<R: Rng>(n: usize, rng: &mut R) -> Bootstrap {
    let mut drawn = vec![false; n];
    let indices: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.gen_range(0..n);
            drawn[i] = true;
            i
        })
        .collect();
    let out_of_bag = drawn
        .iter()
        .enumerate()
        .filter(|&(_, &d)| !d)
        .map(|(i, _)| i)
        .collect();
    Bootstrap {
        indices,
        out_of_bag,
    }
}
