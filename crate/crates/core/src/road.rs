//! 2D rotary adapters: block construction, the factored element-wise apply
//! path, a dense reference path, weight merging and analytic gradients.
//!
//! An adapter transforms a linear layer's output `h` (length `d2`) by a
//! block-diagonal matrix of 2×2 scaled rotations. Block `i` acts on the
//! adjacent pair `(h[2i], h[2i+1])` and realizes
//!
//! ```text
//! [ a11·cos(t11)   -a12·sin(t12) ]
//! [ a21·sin(t21)    a22·cos(t22) ]
//! ```
//!
//! with the four `(t, a)` positions tied according to the sharing variant.
//! A fresh adapter has every `t = 0` and `a = 1` and is an exact no-op.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, DenseVector, SeededRng};

/// One realized 2×2 block, row-major.
pub type Block2x2 = [[f64; 2]; 2];

/// Parameter-sharing variant. The trainable count per adapted layer is
/// `d2`, `2·d2` or `4·d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RoadVariant {
    /// One `(theta, alpha)` pair per block, shared by all four entries.
    Road1,
    /// One pair per block row: the diagonal and off-diagonal entries of a
    /// row share parameters.
    Road2,
    /// All four entries carry their own pair.
    Road4,
}

impl RoadVariant {
    /// Trainable `theta` entries per block (`alpha` has the same count).
    pub fn params_per_block(self) -> usize {
        match self {
            RoadVariant::Road1 => 1,
            RoadVariant::Road2 => 2,
            RoadVariant::Road4 => 4,
        }
    }

    /// Length of the `theta` (and `alpha`) array for output width `d2`.
    pub fn param_len(self, d2: usize) -> usize {
        self.params_per_block() * (d2 / 2)
    }

    pub fn label(self) -> &'static str {
        match self {
            RoadVariant::Road1 => "road1",
            RoadVariant::Road2 => "road2",
            RoadVariant::Road4 => "road4",
        }
    }

    /// Parameter indices for block `i`'s four entry positions, in the order
    /// `(11, 12, 21, 22)`.
    fn position_indices(self, i: usize) -> [usize; 4] {
        match self {
            RoadVariant::Road1 => [i, i, i, i],
            RoadVariant::Road2 => [2 * i, 2 * i, 2 * i + 1, 2 * i + 1],
            RoadVariant::Road4 => [4 * i, 4 * i + 1, 4 * i + 2, 4 * i + 3],
        }
    }
}

/// Trainable count for one adapted layer of output width `d2`.
pub fn param_count(variant: RoadVariant, d2: usize) -> Result<usize> {
    if !d2.is_multiple_of(2) {
        return Err(Error::dimension(
            "param_count",
            "even d2".to_string(),
            format!("{d2}"),
        ));
    }
    Ok(2 * variant.param_len(d2))
}

/// Per-layer trainable rotation parameters for one sharing variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadAdapter {
    variant: RoadVariant,
    d2: usize,
    theta: Vec<f64>,
    alpha: Vec<f64>,
}

impl RoadAdapter {
    /// Identity-initialized adapter: all `theta = 0`, all `alpha = 1`.
    pub fn new(variant: RoadVariant, d2: usize) -> Result<Self> {
        if d2 == 0 || !d2.is_multiple_of(2) {
            return Err(Error::dimension(
                "RoadAdapter::new",
                "even d2 >= 2".to_string(),
                format!("{d2}"),
            ));
        }
        let len = variant.param_len(d2);
        Ok(Self {
            variant,
            d2,
            theta: vec![0.0; len],
            alpha: vec![1.0; len],
        })
    }

    /// Adapter with explicit parameters; lengths must match the variant's
    /// sharing pattern.
    pub fn with_params(
        variant: RoadVariant,
        d2: usize,
        theta: Vec<f64>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let mut adapter = Self::new(variant, d2)?;
        let expect = variant.param_len(d2);
        if theta.len() != expect || alpha.len() != expect {
            return Err(Error::dimension(
                "RoadAdapter::with_params",
                format!("theta/alpha of length {expect}"),
                format!("{}/{}", theta.len(), alpha.len()),
            ));
        }
        adapter.theta = theta;
        adapter.alpha = alpha;
        Ok(adapter)
    }

    /// Random adapter for tests and benchmarks: `theta` uniform in (−π, π),
    /// `alpha` uniform in (0.5, 1.5).
    pub fn random(variant: RoadVariant, d2: usize, rng: &mut SeededRng) -> Result<Self> {
        let len = variant.param_len(d2);
        let theta = (0..len)
            .map(|_| rng.uniform(-std::f64::consts::PI, std::f64::consts::PI))
            .collect();
        let alpha = (0..len).map(|_| rng.uniform(0.5, 1.5)).collect();
        Self::with_params(variant, d2, theta, alpha)
    }

    pub fn variant(&self) -> RoadVariant {
        self.variant
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn num_blocks(&self) -> usize {
        self.d2 / 2
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    /// Realized 2×2 block `i`.
    pub fn block(&self, i: usize) -> Block2x2 {
        let [p11, p12, p21, p22] = self.variant.position_indices(i);
        [
            [
                self.alpha[p11] * self.theta[p11].cos(),
                -(self.alpha[p12] * self.theta[p12].sin()),
            ],
            [
                self.alpha[p21] * self.theta[p21].sin(),
                self.alpha[p22] * self.theta[p22].cos(),
            ],
        ]
    }

    /// All `d2/2` realized blocks in order.
    pub fn build_blocks(&self) -> Vec<Block2x2> {
        (0..self.num_blocks()).map(|i| self.block(i)).collect()
    }

    /// Two-vector form: `v1` holds the diagonal entries of each block in
    /// order, `v2` the off-diagonal entries with their signs folded in.
    pub fn factorize(&self) -> FactoredRotation {
        let mut v1 = Vec::with_capacity(self.d2);
        let mut v2 = Vec::with_capacity(self.d2);
        for i in 0..self.num_blocks() {
            let b = self.block(i);
            v1.push(b[0][0]);
            v1.push(b[1][1]);
            v2.push(b[0][1]);
            v2.push(b[1][0]);
        }
        FactoredRotation { v1, v2 }
    }

    /// Materializes the full block-diagonal rotation as a `d2 × d2` matrix.
    pub fn to_dense_rotation(&self) -> DenseMatrix {
        let mut r = DenseMatrix::zeros(self.d2, self.d2);
        self.write_dense_rotation(&mut r)
            .expect("freshly sized matrix");
        r
    }

    /// Writes the rotation's block entries into a caller-owned `d2 × d2`
    /// matrix. Off-block positions are untouched, so a matrix reused across
    /// same-shape adapters stays correct; anything else must be zeroed
    /// first. Lets verification sweeps amortize the large allocation.
    pub fn write_dense_rotation(&self, r: &mut DenseMatrix) -> Result<()> {
        if r.rows() != self.d2 || r.cols() != self.d2 {
            return Err(Error::dimension(
                "write_dense_rotation",
                format!("{0}x{0} matrix", self.d2),
                format!("{}x{}", r.rows(), r.cols()),
            ));
        }
        for i in 0..self.num_blocks() {
            let b = self.block(i);
            r.set(2 * i, 2 * i, b[0][0]);
            r.set(2 * i, 2 * i + 1, b[0][1]);
            r.set(2 * i + 1, 2 * i, b[1][0]);
            r.set(2 * i + 1, 2 * i + 1, b[1][1]);
        }
        Ok(())
    }

    /// Reference path: `z = R·h` through the explicit dense matrix. Never
    /// used on the hot path.
    pub fn apply_dense_oracle(&self, h: &DenseVector) -> Result<DenseVector> {
        if h.len() != self.d2 {
            return Err(Error::dimension(
                "apply_dense_oracle",
                format!("{}", self.d2),
                format!("{}", h.len()),
            ));
        }
        self.to_dense_rotation().mul_vec(h)
    }

    /// Folds the rotation into a pretrained weight: `W = W⁰·Rᵀ`, so that
    /// `matvec(W, x)` equals the adapted path `R·(W⁰ᵀx)` for every input.
    pub fn merge_into(&self, w0: &DenseMatrix) -> Result<DenseMatrix> {
        if w0.cols() != self.d2 {
            return Err(Error::dimension(
                "merge_into",
                format!("W0 with {} columns", self.d2),
                format!("{}", w0.cols()),
            ));
        }
        let blocks = self.build_blocks();
        let mut merged = DenseMatrix::zeros(w0.rows(), w0.cols());
        for r in 0..w0.rows() {
            for (i, b) in blocks.iter().enumerate() {
                let (c0, c1) = (w0.get(r, 2 * i), w0.get(r, 2 * i + 1));
                merged.set(r, 2 * i, c0 * b[0][0] + c1 * b[0][1]);
                merged.set(r, 2 * i + 1, c0 * b[1][0] + c1 * b[1][1]);
            }
        }
        Ok(merged)
    }

    /// Analytic gradients of the scalar `⟨upstream, z⟩` with respect to
    /// `theta`, `alpha` and `h`. Tied parameters accumulate contributions
    /// in ascending position order, so results are run-to-run deterministic.
    pub fn grad(&self, h: &DenseVector, upstream: &DenseVector) -> Result<RoadGradient> {
        if h.len() != self.d2 || upstream.len() != self.d2 {
            return Err(Error::dimension(
                "RoadAdapter::grad",
                format!("h and upstream of length {}", self.d2),
                format!("{}/{}", h.len(), upstream.len()),
            ));
        }
        let len = self.variant.param_len(self.d2);
        let mut d_theta = vec![0.0; len];
        let mut d_alpha = vec![0.0; len];
        let mut d_h = vec![0.0; self.d2];

        for i in 0..self.num_blocks() {
            let [p11, p12, p21, p22] = self.variant.position_indices(i);
            let (h0, h1) = (h.get(2 * i), h.get(2 * i + 1));
            let (u0, u1) = (upstream.get(2 * i), upstream.get(2 * i + 1));
            // Upstream gradient of each realized entry.
            let (g00, g01, g10, g11) = (u0 * h0, u0 * h1, u1 * h0, u1 * h1);

            d_theta[p11] += g00 * (-self.alpha[p11] * self.theta[p11].sin());
            d_alpha[p11] += g00 * self.theta[p11].cos();
            d_theta[p12] += g01 * (-self.alpha[p12] * self.theta[p12].cos());
            d_alpha[p12] += g01 * (-self.theta[p12].sin());
            d_theta[p21] += g10 * (self.alpha[p21] * self.theta[p21].cos());
            d_alpha[p21] += g10 * self.theta[p21].sin();
            d_theta[p22] += g11 * (-self.alpha[p22] * self.theta[p22].sin());
            d_alpha[p22] += g11 * self.theta[p22].cos();

            let b = self.block(i);
            d_h[2 * i] = u0 * b[0][0] + u1 * b[1][0];
            d_h[2 * i + 1] = u0 * b[0][1] + u1 * b[1][1];
        }
        Ok(RoadGradient {
            d_theta,
            d_alpha,
            d_h: DenseVector::new(d_h),
        })
    }
}

/// Gradient of `⟨upstream, z⟩` through one adapter application.
#[derive(Debug, Clone)]
pub struct RoadGradient {
    pub d_theta: Vec<f64>,
    pub d_alpha: Vec<f64>,
    pub d_h: DenseVector,
}

/// The rotation in saved two-vector form. `v1` multiplies `h` directly;
/// `v2` multiplies the pair-swapped `ĥ` (`ĥ[2i] = h[2i+1]`,
/// `ĥ[2i+1] = h[2i]`), with all signs carried by `v2` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredRotation {
    v1: Vec<f64>,
    v2: Vec<f64>,
}

impl FactoredRotation {
    pub fn d2(&self) -> usize {
        self.v1.len()
    }

    pub fn v1(&self) -> &[f64] {
        &self.v1
    }

    pub fn v2(&self) -> &[f64] {
        &self.v2
    }

    /// Hot path: `z = v1 ⊗ h + v2 ⊗ ĥ`. Exactly two element-wise multiplies
    /// and one add per output element; no matrix product.
    pub fn apply(&self, h: &DenseVector) -> Result<DenseVector> {
        if h.len() != self.v1.len() {
            return Err(Error::dimension(
                "apply_factored",
                format!("{}", self.v1.len()),
                format!("{}", h.len()),
            ));
        }
        let hs = h.as_slice();
        let mut z = vec![0.0; hs.len()];
        for i in 0..hs.len() / 2 {
            let (e, o) = (2 * i, 2 * i + 1);
            z[e] = self.v1[e] * hs[e] + self.v2[e] * hs[o];
            z[o] = self.v1[o] * hs[o] + self.v2[o] * hs[e];
        }
        Ok(DenseVector::new(z))
    }
}

/// Free-function form of [`FactoredRotation::apply`].
pub fn apply_factored(f: &FactoredRotation, h: &DenseVector) -> Result<DenseVector> {
    f.apply(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, matvec};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn max_abs_diff(a: &DenseVector, b: &DenseVector) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_init_block_is_identity() {
        let a = RoadAdapter::new(RoadVariant::Road1, 2).unwrap();
        assert_eq!(a.block(0), [[1.0, -0.0], [0.0, 1.0]]);
    }

    #[test]
    fn quarter_turn_block() {
        let a =
            RoadAdapter::with_params(RoadVariant::Road1, 2, vec![FRAC_PI_2], vec![1.0]).unwrap();
        let b = a.block(0);
        let expect = [[0.0, -1.0], [1.0, 0.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((b[r][c] - expect[r][c]).abs() < 1e-15, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn road4_with_ties_collapses_to_road1() {
        let mut rng = SeededRng::new(3);
        let d2 = 8;
        let r1 = RoadAdapter::random(RoadVariant::Road1, d2, &mut rng).unwrap();
        let theta4: Vec<f64> = r1.theta().iter().flat_map(|&t| [t; 4]).collect();
        let alpha4: Vec<f64> = r1.alpha().iter().flat_map(|&a| [a; 4]).collect();
        let r4 = RoadAdapter::with_params(RoadVariant::Road4, d2, theta4, alpha4).unwrap();
        for i in 0..d2 / 2 {
            let (b1, b4) = (r1.block(i), r4.block(i));
            for r in 0..2 {
                for c in 0..2 {
                    assert!((b1[r][c] - b4[r][c]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn factorize_identity_init() {
        let a = RoadAdapter::new(RoadVariant::Road2, 6).unwrap();
        let f = a.factorize();
        assert!(f.v1().iter().all(|&v| v == 1.0));
        assert!(f.v2().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factorize_quarter_block_values() {
        let a =
            RoadAdapter::with_params(RoadVariant::Road1, 2, vec![FRAC_PI_6], vec![2.0]).unwrap();
        let f = a.factorize();
        let root3 = 3.0_f64.sqrt();
        assert!((f.v1()[0] - root3).abs() < 1e-15);
        assert!((f.v1()[1] - root3).abs() < 1e-15);
        assert!((f.v2()[0] + 1.0).abs() < 1e-15);
        assert!((f.v2()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn apply_factored_identity_is_bitwise_noop() {
        let mut rng = SeededRng::new(5);
        let a = RoadAdapter::new(RoadVariant::Road4, 16).unwrap();
        let h = DenseVector::random_uniform(16, -3.0, 3.0, &mut rng);
        let z = a.factorize().apply(&h).unwrap();
        assert_eq!(z.as_slice(), h.as_slice());
    }

    #[test]
    fn apply_factored_rotates_basis_vector() {
        let a =
            RoadAdapter::with_params(RoadVariant::Road1, 2, vec![FRAC_PI_2], vec![1.0]).unwrap();
        let z = a.factorize().apply(&DenseVector::new(vec![1.0, 0.0])).unwrap();
        assert!(z.get(0).abs() < 1e-15);
        assert!((z.get(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn factored_matches_dense_oracle() {
        let mut rng = SeededRng::new(17);
        for variant in [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4] {
            for _ in 0..50 {
                let a = RoadAdapter::random(variant, 64, &mut rng).unwrap();
                let h = DenseVector::random_uniform(64, -2.0, 2.0, &mut rng);
                let fast = a.factorize().apply(&h).unwrap();
                let slow = a.apply_dense_oracle(&h).unwrap();
                assert!(max_abs_diff(&fast, &slow) <= 1e-12);
            }
        }
    }

    #[test]
    fn dense_oracle_half_turn() {
        let a = RoadAdapter::with_params(RoadVariant::Road1, 2, vec![PI], vec![1.0]).unwrap();
        let z = a.apply_dense_oracle(&DenseVector::new(vec![1.0, 2.0])).unwrap();
        assert!((z.get(0) + 1.0).abs() < 1e-15);
        assert!((z.get(1) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn merge_identity_init_is_bitwise_w0() {
        let mut rng = SeededRng::new(23);
        let w0 = DenseMatrix::random_uniform(5, 6, -1.0, 1.0, &mut rng);
        let a = RoadAdapter::new(RoadVariant::Road1, 6).unwrap();
        let merged = a.merge_into(&w0).unwrap();
        assert_eq!(merged.data(), w0.data());
    }

    #[test]
    fn merged_path_matches_adapted_path() {
        let mut rng = SeededRng::new(29);
        let w0 = DenseMatrix::random_uniform(8, 6, -1.0, 1.0, &mut rng);
        let a = RoadAdapter::random(RoadVariant::Road2, 6, &mut rng).unwrap();
        let merged = a.merge_into(&w0).unwrap();
        let f = a.factorize();
        for _ in 0..20 {
            let x = DenseVector::random_uniform(8, -1.0, 1.0, &mut rng);
            let direct = matvec(&merged, &x).unwrap();
            let adapted = f.apply(&matvec(&w0, &x).unwrap()).unwrap();
            for j in 0..6 {
                let scale = adapted.get(j).abs().max(1.0);
                assert!((direct.get(j) - adapted.get(j)).abs() / scale <= 1e-9);
            }
        }
    }

    #[test]
    fn orthogonal_merge_preserves_column_pair_norms() {
        let mut rng = SeededRng::new(31);
        let w0 = DenseMatrix::random_uniform(7, 6, -1.0, 1.0, &mut rng);
        let theta: Vec<f64> = (0..3).map(|_| rng.uniform(-PI, PI)).collect();
        let a = RoadAdapter::with_params(RoadVariant::Road1, 6, theta, vec![1.0; 3]).unwrap();
        let merged = a.merge_into(&w0).unwrap();
        for i in 0..3 {
            let pair_norm = |m: &DenseMatrix| -> f64 {
                (0..m.rows())
                    .map(|r| m.get(r, 2 * i).powi(2) + m.get(r, 2 * i + 1).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            assert!((pair_norm(&merged) - pair_norm(&w0)).abs() <= 1e-9);
        }
    }

    #[test]
    fn grad_zero_upstream_is_zero() {
        let mut rng = SeededRng::new(37);
        let a = RoadAdapter::random(RoadVariant::Road4, 8, &mut rng).unwrap();
        let h = DenseVector::random_uniform(8, -1.0, 1.0, &mut rng);
        let g = a.grad(&h, &DenseVector::zeros(8)).unwrap();
        assert!(g.d_theta.iter().all(|&v| v == 0.0));
        assert!(g.d_alpha.iter().all(|&v| v == 0.0));
        assert!(g.d_h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_hand_case_at_init() {
        // z1 = a·sin(t)·h0, so d z1/d t at t=0, a=1, h0=1 is 1.
        let a = RoadAdapter::new(RoadVariant::Road1, 2).unwrap();
        let g = a
            .grad(
                &DenseVector::new(vec![1.0, 0.0]),
                &DenseVector::new(vec![0.0, 1.0]),
            )
            .unwrap();
        assert!((g.d_theta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = SeededRng::new(41);
        for variant in [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4] {
            for _ in 0..20 {
                let d2 = 8;
                let a = RoadAdapter::random(variant, d2, &mut rng).unwrap();
                let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
                let u = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
                let analytic = a.grad(&h, &u).unwrap();

                let len = variant.param_len(d2);
                let mut packed = a.theta().to_vec();
                packed.extend_from_slice(a.alpha());
                let fd = finite_diff_grad(
                    |p: &DenseVector| {
                        let probed = RoadAdapter::with_params(
                            variant,
                            d2,
                            p.as_slice()[..len].to_vec(),
                            p.as_slice()[len..].to_vec(),
                        )
                        .unwrap();
                        u.dot(&probed.factorize().apply(&h).unwrap())
                    },
                    &DenseVector::new(packed),
                    1e-5,
                )
                .unwrap();

                let scale = fd
                    .as_slice()
                    .iter()
                    .map(|v| v.abs())
                    .fold(1e-12, f64::max);
                for k in 0..len {
                    assert!((analytic.d_theta[k] - fd.get(k)).abs() / scale <= 1e-5);
                    assert!((analytic.d_alpha[k] - fd.get(len + k)).abs() / scale <= 1e-5);
                }

                let fd_h = finite_diff_grad(
                    |p: &DenseVector| u.dot(&a.factorize().apply(p).unwrap()),
                    &h,
                    1e-5,
                )
                .unwrap();
                for k in 0..d2 {
                    assert!((analytic.d_h.get(k) - fd_h.get(k)).abs() / scale <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn param_count_table() {
        assert_eq!(param_count(RoadVariant::Road1, 1024).unwrap(), 1024);
        assert_eq!(param_count(RoadVariant::Road2, 1024).unwrap(), 2048);
        assert_eq!(param_count(RoadVariant::Road4, 1024).unwrap(), 4096);
        assert!(param_count(RoadVariant::Road1, 7).is_err());
    }

    #[test]
    fn degeneracy_ladder() {
        let mut rng = SeededRng::new(43);
        let d2 = 12;
        let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);

        // Road2 with both rows tied equals Road1.
        let r1 = RoadAdapter::random(RoadVariant::Road1, d2, &mut rng).unwrap();
        let theta2: Vec<f64> = r1.theta().iter().flat_map(|&t| [t; 2]).collect();
        let alpha2: Vec<f64> = r1.alpha().iter().flat_map(|&a| [a; 2]).collect();
        let r2 = RoadAdapter::with_params(RoadVariant::Road2, d2, theta2, alpha2).unwrap();
        let (z1, z2) = (
            r1.factorize().apply(&h).unwrap(),
            r2.factorize().apply(&h).unwrap(),
        );
        assert!(max_abs_diff(&z1, &z2) <= 1e-12);

        // Road4 with within-row ties equals Road2.
        let r2b = RoadAdapter::random(RoadVariant::Road2, d2, &mut rng).unwrap();
        let expand = |p: &[f64]| -> Vec<f64> {
            p.chunks(2)
                .flat_map(|rows| [rows[0], rows[0], rows[1], rows[1]])
                .collect()
        };
        let r4 = RoadAdapter::with_params(
            RoadVariant::Road4,
            d2,
            expand(r2b.theta()),
            expand(r2b.alpha()),
        )
        .unwrap();
        let (z2b, z4) = (
            r2b.factorize().apply(&h).unwrap(),
            r4.factorize().apply(&h).unwrap(),
        );
        assert!(max_abs_diff(&z2b, &z4) <= 1e-12);
    }

    #[test]
    fn road1_unit_alpha_blocks_are_orthogonal() {
        let mut rng = SeededRng::new(47);
        for _ in 0..50 {
            let d2 = 8;
            let theta: Vec<f64> = (0..d2 / 2).map(|_| rng.uniform(-PI, PI)).collect();
            let a =
                RoadAdapter::with_params(RoadVariant::Road1, d2, theta, vec![1.0; d2 / 2]).unwrap();
            for b in a.build_blocks() {
                let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
                assert!((det - 1.0).abs() <= 1e-12, "det = {det}");
                // RᵀR entries.
                let rtr = [
                    b[0][0] * b[0][0] + b[1][0] * b[1][0],
                    b[0][0] * b[0][1] + b[1][0] * b[1][1],
                    b[0][1] * b[0][1] + b[1][1] * b[1][1],
                ];
                assert!((rtr[0] - 1.0).abs() <= 1e-12);
                assert!(rtr[1].abs() <= 1e-12);
                assert!((rtr[2] - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_odd_or_zero_d2() {
        assert!(RoadAdapter::new(RoadVariant::Road1, 5).is_err());
        assert!(RoadAdapter::new(RoadVariant::Road1, 0).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_adapter_and_input() -> impl Strategy<Value = (RoadAdapter, DenseVector)> {
            (
                prop_oneof![
                    Just(RoadVariant::Road1),
                    Just(RoadVariant::Road2),
                    Just(RoadVariant::Road4)
                ],
                1usize..=16,
            )
                .prop_flat_map(|(variant, half)| {
                    let d2 = 2 * half;
                    let len = variant.param_len(d2);
                    (
                        Just(variant),
                        Just(d2),
                        proptest::collection::vec(-PI..PI, len),
                        proptest::collection::vec(0.25..2.0f64, len),
                        proptest::collection::vec(-3.0..3.0f64, d2),
                    )
                })
                .prop_map(|(variant, d2, theta, alpha, h)| {
                    (
                        RoadAdapter::with_params(variant, d2, theta, alpha).expect("valid"),
                        DenseVector::new(h),
                    )
                })
        }

        proptest! {
            #[test]
            fn factored_path_always_matches_dense((a, h) in arb_adapter_and_input()) {
                let fast = a.factorize().apply(&h).unwrap();
                let slow = a.apply_dense_oracle(&h).unwrap();
                prop_assert!(max_abs_diff(&fast, &slow) <= 1e-12);
            }

            #[test]
            fn merge_commutes_with_application((a, h) in arb_adapter_and_input()) {
                // Treat h as the layer input of a random square weight.
                let d = h.len();
                let mut rng = SeededRng::new(99);
                let w0 = DenseMatrix::random_uniform(d, d, -1.0, 1.0, &mut rng);
                let merged = a.merge_into(&w0).unwrap();
                let direct = matvec(&merged, &h).unwrap();
                let adapted = a
                    .factorize()
                    .apply(&matvec(&w0, &h).unwrap())
                    .unwrap();
                for j in 0..d {
                    let scale = adapted.get(j).abs().max(1.0);
                    prop_assert!((direct.get(j) - adapted.get(j)).abs() / scale <= 1e-9);
                }
            }
        }
    }
}
