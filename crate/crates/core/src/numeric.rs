//! Minimal dense linear algebra, deterministic RNG and a finite-difference
//! gradient oracle.
//!
//! Layout is row-major and the global apply convention is the transposed
//! product `h = Wᵀx`, so a matrix of shape `d1 × d2` maps inputs of length
//! `d1` to outputs of length `d2`. Values are immutable after construction
//! and safe to share across concurrent readers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major real matrix with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "DenseMatrix::from_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                format!("{}", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseMatrix::from_vec",
                index,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Fills entry `(i, j)` with `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Uniform random entries in `[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.uniform(lo, hi))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Plain product `y = A·x` (used by dense reference paths).
    pub fn mul_vec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::dimension(
                "DenseMatrix::mul_vec",
                format!("vector of length {}", self.cols),
                format!("{}", x.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        for (i, acc) in out.iter_mut().enumerate() {
            let row = self.row(i);
            *acc = row.iter().zip(x.as_slice()).map(|(w, v)| w * v).sum();
        }
        Ok(DenseVector::new(out))
    }
}

/// Real vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn random_uniform(len: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Self {
        Self::new((0..len).map(|_| rng.uniform(lo, hi)).collect())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(data: Vec<f64>) -> Self {
        Self::new(data)
    }
}

/// Transposed apply `h = Wᵀx`: the one matrix-vector convention used
/// throughout the crate.
pub fn matvec(w: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    if x.len() != w.rows() {
        return Err(Error::dimension(
            "matvec",
            format!("vector of length {}", w.rows()),
            format!("{}", x.len()),
        ));
    }
    let mut out = vec![0.0; w.cols()];
    for (i, &xi) in x.as_slice().iter().enumerate() {
        let row = w.row(i);
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * xi;
        }
    }
    Ok(DenseVector::new(out))
}

/// Central-difference gradient of a scalar function of a parameter vector.
///
/// `result_i = (f(p + step·eᵢ) − f(p − step·eᵢ)) / (2·step)`. A non-finite
/// probe value aborts with the probe index.
pub fn finite_diff_grad<F>(mut f: F, p: &DenseVector, step: f64) -> Result<DenseVector>
where
    F: FnMut(&DenseVector) -> f64,
{
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Precondition(format!(
            "finite_diff_grad requires step > 0, got {step}"
        )));
    }
    let mut probe = p.clone();
    let mut grad = vec![0.0; p.len()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let orig = probe.data[i];
        probe.data[i] = orig + step;
        let plus = f(&probe);
        probe.data[i] = orig - step;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_grad",
                index: i,
            });
        }
        *slot = (plus - minus) / (2.0 * step);
    }
    Ok(DenseVector::new(grad))
}

/// RNG algorithm identifier; pinned so streams stay reproducible across
/// versions of this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RngAlgorithm {
    /// ChaCha with 8 rounds: counter-based, splittable into independent
    /// streams, identical output regardless of thread count.
    ChaCha8,
}

/// Deterministic seeded generator. Identical seeds yield identical streams
/// across runs; `split` derives independent streams for parallel workers.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    algorithm: RngAlgorithm,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            algorithm: RngAlgorithm::ChaCha8,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> RngAlgorithm {
        self.algorithm
    }

    /// Independent stream `label` of the same seed. Streams never overlap,
    /// so per-worker generators are reproducible regardless of scheduling.
    pub fn split(&self, label: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(label);
        Self {
            seed: self.seed,
            algorithm: self.algorithm,
            inner,
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
