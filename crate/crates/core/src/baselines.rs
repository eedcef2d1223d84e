//! Reference adapters used for comparisons: low-rank (LoRA), 2×2 Cayley
//! orthogonal blocks, and per-dimension output scaling.

use crate::error::{Error, Result};
use crate::numeric::{matvec, DenseMatrix, DenseVector, SeededRng};
use crate::road::Block2x2;

/// Low-rank adapter: `z = (W⁰ + scaling·B·A)ᵀ x`, computed on the factored
/// route `W⁰ᵀx + scaling·Aᵀ(Bᵀx)`.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    r: usize,
    b: DenseMatrix,
    a: DenseMatrix,
    scaling: f64,
}

impl LoraAdapter {
    /// Standard init: `A` gaussian with std `1/sqrt(d1)`, `B` zero, so the
    /// initial delta is a no-op.
    pub fn zero_init(d1: usize, d2: usize, r: usize, scaling: f64, rng: &mut SeededRng) -> Result<Self> {
        if r == 0 || r > d1.min(d2) {
            return Err(Error::Precondition(format!(
                "lora rank must satisfy 1 <= r <= min(d1, d2), got r={r}, d1={d1}, d2={d2}"
            )));
        }
        let std = 1.0 / (d1 as f64).sqrt();
        let a = DenseMatrix::from_fn(r, d2, |_, _| rng.normal() * std);
        Ok(Self {
            r,
            b: DenseMatrix::zeros(d1, r),
            a,
            scaling,
        })
    }

    pub fn with_matrices(b: DenseMatrix, a: DenseMatrix, scaling: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::dimension(
                "LoraAdapter::with_matrices",
                "B cols == A rows".to_string(),
                format!("{} vs {}", b.cols(), a.rows()),
            ));
        }
        Ok(Self {
            r: b.cols(),
            b,
            a,
            scaling,
        })
    }

    /// Random non-trivial adapter for tests and serving workloads.
    pub fn random(d1: usize, d2: usize, r: usize, scaling: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut adapter = Self::zero_init(d1, d2, r, scaling, rng)?;
        let std = 1.0 / (d1 as f64).sqrt();
        adapter.b = DenseMatrix::from_fn(d1, r, |_, _| rng.normal() * std);
        Ok(adapter)
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn d1(&self) -> usize {
        self.b.rows()
    }

    pub fn d2(&self) -> usize {
        self.a.cols()
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn matrices_mut(&mut self) -> (&mut DenseMatrix, &mut DenseMatrix) {
        (&mut self.b, &mut self.a)
    }

    /// `scaling·B·A`, the dense delta (oracle path).
    pub fn delta_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.d1(), self.d2(), |i, j| {
            self.scaling
                * (0..self.r)
                    .map(|k| self.b.get(i, k) * self.a.get(k, j))
                    .sum::<f64>()
        })
    }

    /// Adapted forward through the low-rank route.
    pub fn apply(&self, w0: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
        let base = matvec(w0, x)?;
        self.apply_with_base(x, &base)
    }

    /// Same, with the base product `h = W⁰ᵀx` already computed.
    pub fn apply_with_base(&self, x: &DenseVector, base: &DenseVector) -> Result<DenseVector> {
        if base.len() != self.d2() {
            return Err(Error::dimension(
                "LoraAdapter::apply",
                format!("base of length {}", self.d2()),
                format!("{}", base.len()),
            ));
        }
        let t = matvec(&self.b, x)?;
        let delta = matvec(&self.a, &t)?;
        Ok(DenseVector::new(
            base.as_slice()
                .iter()
                .zip(delta.as_slice())
                .map(|(h, d)| h + self.scaling * d)
                .collect(),
        ))
    }

    /// Gradients of `⟨upstream, z⟩` with respect to `B`, `A` and the direct
    /// (non-base) input path.
    pub fn grad(&self, x: &DenseVector, upstream: &DenseVector) -> Result<LoraGradient> {
        if x.len() != self.d1() || upstream.len() != self.d2() {
            return Err(Error::dimension(
                "LoraAdapter::grad",
                format!("x of length {}, upstream of length {}", self.d1(), self.d2()),
                format!("{}/{}", x.len(), upstream.len()),
            ));
        }
        let t = matvec(&self.b, x)?; // Bᵀx, length r
        let au = self.a.mul_vec(upstream)?; // A·u, length r
        let d_b = DenseMatrix::from_fn(self.d1(), self.r, |i, k| {
            self.scaling * x.get(i) * au.get(k)
        });
        let d_a = DenseMatrix::from_fn(self.r, self.d2(), |k, j| {
            self.scaling * upstream.get(j) * t.get(k)
        });
        let d_x_direct = DenseVector::new(
            self.b
                .mul_vec(&au)?
                .as_slice()
                .iter()
                .map(|v| self.scaling * v)
                .collect(),
        );
        Ok(LoraGradient { d_b, d_a, d_x_direct })
    }
}

#[derive(Debug, Clone)]
pub struct LoraGradient {
    pub d_b: DenseMatrix,
    pub d_a: DenseMatrix,
    /// Contribution of the low-rank path to `dL/dx`; the base path adds
    /// `W⁰·upstream` separately.
    pub d_x_direct: DenseVector,
}

/// `R = (I + Q)(I − Q)⁻¹` for the 2×2 skew `Q = [[0, q], [−q, 0]]`. The
/// inverse always exists (`det(I − Q) = 1 + q²`), and the result is the
/// rotation by `−2·atan(q)`; orthogonality is verified by tests rather than
/// assumed.
pub fn cayley_block(qi: f64) -> Block2x2 {
    let d = 1.0 + qi * qi;
    let c = (1.0 - qi * qi) / d;
    let s = 2.0 * qi / d;
    [[c, s], [-s, c]]
}

/// Orthogonal block adapter with fixed block size 2; one skew parameter per
/// block. Maintaining orthogonality costs a 2×2 inversion per block, which
/// is the overhead the rotary form avoids.
#[derive(Debug, Clone)]
pub struct CayleyBlockAdapter {
    q: Vec<f64>,
    d2: usize,
}

impl CayleyBlockAdapter {
    pub fn new(d2: usize) -> Result<Self> {
        if d2 == 0 || !d2.is_multiple_of(2) {
            return Err(Error::dimension(
                "CayleyBlockAdapter::new",
                "even d2 >= 2".to_string(),
                format!("{d2}"),
            ));
        }
        Ok(Self {
            q: vec![0.0; d2 / 2],
            d2,
        })
    }

    pub fn random(d2: usize, rng: &mut SeededRng) -> Result<Self> {
        let mut adapter = Self::new(d2)?;
        for qi in &mut adapter.q {
            *qi = rng.uniform(-2.0, 2.0);
        }
        Ok(adapter)
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn q_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    pub fn build_blocks(&self) -> Vec<Block2x2> {
        self.q.iter().map(|&qi| cayley_block(qi)).collect()
    }

    pub fn apply(&self, h: &DenseVector) -> Result<DenseVector> {
        if h.len() != self.d2 {
            return Err(Error::dimension(
                "CayleyBlockAdapter::apply",
                format!("{}", self.d2),
                format!("{}", h.len()),
            ));
        }
        let mut z = vec![0.0; self.d2];
        for (i, &qi) in self.q.iter().enumerate() {
            let b = cayley_block(qi);
            let (h0, h1) = (h.get(2 * i), h.get(2 * i + 1));
            z[2 * i] = b[0][0] * h0 + b[0][1] * h1;
            z[2 * i + 1] = b[1][0] * h0 + b[1][1] * h1;
        }
        Ok(DenseVector::new(z))
    }

    /// Gradients of `⟨upstream, z⟩` with respect to `q` and `h`.
    pub fn grad(&self, h: &DenseVector, upstream: &DenseVector) -> Result<CayleyGradient> {
        if h.len() != self.d2 || upstream.len() != self.d2 {
            return Err(Error::dimension(
                "CayleyBlockAdapter::grad",
                format!("h and upstream of length {}", self.d2),
                format!("{}/{}", h.len(), upstream.len()),
            ));
        }
        let mut d_q = vec![0.0; self.q.len()];
        let mut d_h = vec![0.0; self.d2];
        for (i, &qi) in self.q.iter().enumerate() {
            let d = 1.0 + qi * qi;
            let dd = d * d;
            // dR/dq, entrywise.
            let dc = -4.0 * qi / dd;
            let ds = (2.0 - 2.0 * qi * qi) / dd;
            let (h0, h1) = (h.get(2 * i), h.get(2 * i + 1));
            let (u0, u1) = (upstream.get(2 * i), upstream.get(2 * i + 1));
            d_q[i] = u0 * (dc * h0 + ds * h1) + u1 * (-ds * h0 + dc * h1);
            let b = cayley_block(qi);
            d_h[2 * i] = u0 * b[0][0] + u1 * b[1][0];
            d_h[2 * i + 1] = u0 * b[0][1] + u1 * b[1][1];
        }
        Ok(CayleyGradient {
            d_q,
            d_h: DenseVector::new(d_h),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CayleyGradient {
    pub d_q: Vec<f64>,
    pub d_h: DenseVector,
}

/// Per-output multiplicative gains on a layer's output; init is a no-op.
#[derive(Debug, Clone)]
pub struct DiagScaleAdapter {
    l: Vec<f64>,
}

impl DiagScaleAdapter {
    pub fn new(d2: usize) -> Self {
        Self { l: vec![1.0; d2] }
    }

    pub fn with_gains(l: Vec<f64>) -> Self {
        Self { l }
    }

    pub fn d2(&self) -> usize {
        self.l.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.l
    }

    pub fn gains_mut(&mut self) -> &mut [f64] {
        &mut self.l
    }

    pub fn apply(&self, h: &DenseVector) -> Result<DenseVector> {
        if h.len() != self.l.len() {
            return Err(Error::dimension(
                "diag_scale_apply",
                format!("{}", self.l.len()),
                format!("{}", h.len()),
            ));
        }
        Ok(DenseVector::new(
            self.l
                .iter()
                .zip(h.as_slice())
                .map(|(l, h)| l * h)
                .collect(),
        ))
    }

    pub fn grad(&self, h: &DenseVector, upstream: &DenseVector) -> Result<DiagScaleGradient> {
        if h.len() != self.l.len() || upstream.len() != self.l.len() {
            return Err(Error::dimension(
                "DiagScaleAdapter::grad",
                format!("h and upstream of length {}", self.l.len()),
                format!("{}/{}", h.len(), upstream.len()),
            ));
        }
        let d_l = upstream
            .as_slice()
            .iter()
            .zip(h.as_slice())
            .map(|(u, h)| u * h)
            .collect();
        let d_h = DenseVector::new(
            upstream
                .as_slice()
                .iter()
                .zip(&self.l)
                .map(|(u, l)| u * l)
                .collect(),
        );
        Ok(DiagScaleGradient { d_l, d_h })
    }
}

#[derive(Debug, Clone)]
pub struct DiagScaleGradient {
    pub d_l: Vec<f64>,
    pub d_h: DenseVector,
}

/// Free-function form of [`DiagScaleAdapter::apply`].
pub fn diag_scale_apply(a: &DiagScaleAdapter, h: &DenseVector) -> Result<DenseVector> {
    a.apply(h)
}

/// Free-function form of [`LoraAdapter::apply`].
pub fn lora_apply(a: &LoraAdapter, w0: &DenseMatrix, x: &DenseVector) -> Result<DenseVector> {
    a.apply(w0, x)
}
