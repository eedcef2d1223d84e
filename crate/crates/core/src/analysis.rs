//! Representation-change metrics, magnitude/angle-only classifier heads,
//! interchange interventions on projected subspaces, and block-level
//! composition of rotary adapters trained on disjoint subspaces.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, DenseVector};
use crate::road::RoadAdapter;

/// A pretrained/finetuned representation pair for the same token.
#[derive(Debug, Clone)]
pub struct RepPair {
    x0: DenseVector,
    x: DenseVector,
}

impl RepPair {
    pub fn new(x0: DenseVector, x: DenseVector) -> Result<Self> {
        if x0.len() != x.len() {
            return Err(Error::dimension(
                "RepPair::new",
                format!("{}", x0.len()),
                format!("{}", x.len()),
            ));
        }
        if x0.norm2() == 0.0 {
            return Err(Error::UndefinedMetric(
                "representation pair with zero pretrained vector".into(),
            ));
        }
        Ok(Self { x0, x })
    }

    pub fn x0(&self) -> &DenseVector {
        &self.x0
    }

    pub fn x(&self) -> &DenseVector {
        &self.x
    }
}

/// Relative change in magnitude: `|‖x‖ − ‖x⁰‖| / ‖x⁰‖`.
pub fn delta_m(p: &RepPair) -> f64 {
    let n0 = p.x0.norm2();
    (p.x.norm2() - n0).abs() / n0
}

/// Angular displacement as cosine similarity, in `[−1, 1]`.
pub fn delta_d(p: &RepPair) -> Result<f64> {
    let (n0, n) = (p.x0.norm2(), p.x.norm2());
    if n == 0.0 {
        return Err(Error::UndefinedMetric(
            "cosine undefined for zero finetuned vector".into(),
        ));
    }
    Ok(p.x.dot(&p.x0) / (n * n0))
}

/// Magnitude-only head: `z_i = ‖W[:,i]‖₂ · ‖x⁰‖₂`. Invariant to the
/// direction of `x⁰` by construction.
pub fn magnitude_head(w: &DenseMatrix, x0: &DenseVector) -> Result<DenseVector> {
    if w.rows() != x0.len() {
        return Err(Error::dimension(
            "magnitude_head",
            format!("x0 of length {}", w.rows()),
            format!("{}", x0.len()),
        ));
    }
    let n0 = x0.norm2();
    Ok(DenseVector::new(
        (0..w.cols()).map(|i| column_norm(w, i) * n0).collect(),
    ))
}

/// Angle-only head: `z_i = cos(W[:,i], x⁰)`. Invariant to positive
/// rescaling of `x⁰`.
pub fn angle_head(w: &DenseMatrix, x0: &DenseVector) -> Result<DenseVector> {
    if w.rows() != x0.len() {
        return Err(Error::dimension(
            "angle_head",
            format!("x0 of length {}", w.rows()),
            format!("{}", x0.len()),
        ));
    }
    let n0 = x0.norm2();
    if n0 == 0.0 {
        return Err(Error::UndefinedMetric("angle head with zero x0".into()));
    }
    let mut z = Vec::with_capacity(w.cols());
    for i in 0..w.cols() {
        let cn = column_norm(w, i);
        if cn == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "angle head with zero column {i}"
            )));
        }
        let dot: f64 = (0..w.rows()).map(|r| w.get(r, i) * x0.get(r)).sum();
        z.push(dot / (cn * n0));
    }
    Ok(DenseVector::new(z))
}

fn column_norm(w: &DenseMatrix, i: usize) -> f64 {
    (0..w.rows())
        .map(|r| w.get(r, i).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Interchange intervention: replaces `b`'s component in the row-space of
/// the projection `P` with `s`'s, returning `b + Pᵀ(Ps − Pb)`. `P` must
/// have orthonormal rows (checked to 1e-10).
pub fn dii_apply(b: &DenseVector, s: &DenseVector, p: &DenseMatrix) -> Result<DenseVector> {
    if p.cols() != b.len() || p.cols() != s.len() {
        return Err(Error::dimension(
            "dii_apply",
            format!("b and s of length {}", p.cols()),
            format!("{}/{}", b.len(), s.len()),
        ));
    }
    for i in 0..p.rows() {
        for j in i..p.rows() {
            let dot: f64 = (0..p.cols()).map(|k| p.get(i, k) * p.get(j, k)).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-10 {
                return Err(Error::Precondition(format!(
                    "dii_apply requires orthonormal projection rows; rows {i},{j} give {dot}"
                )));
            }
        }
    }
    let pb = p.mul_vec(b)?;
    let ps = p.mul_vec(s)?;
    let mut out = b.as_slice().to_vec();
    for r in 0..p.rows() {
        let coeff = ps.get(r) - pb.get(r);
        for (k, o) in out.iter_mut().enumerate() {
            *o += p.get(r, k) * coeff;
        }
    }
    Ok(DenseVector::new(out))
}

/// Applies a unit-scale rotary adapter through the intervention identity
/// `h + R(h − Rᵀh)`, which equals `R·h` exactly when `R·Rᵀ = I`.
/// Rejects adapters with any `alpha ≠ 1`, where the identity fails.
pub fn road_as_dii(a: &RoadAdapter, h: &DenseVector) -> Result<DenseVector> {
    if a.alpha().iter().any(|&v| v != 1.0) {
        return Err(Error::Precondition(
            "road_as_dii requires all alpha = 1 (orthogonal rotation)".into(),
        ));
    }
    if h.len() != a.d2() {
        return Err(Error::dimension(
            "road_as_dii",
            format!("{}", a.d2()),
            format!("{}", h.len()),
        ));
    }
    let mut out = vec![0.0; h.len()];
    for (i, b) in a.build_blocks().iter().enumerate() {
        let (h0, h1) = (h.get(2 * i), h.get(2 * i + 1));
        // Rᵀh on the pair.
        let rt0 = b[0][0] * h0 + b[1][0] * h1;
        let rt1 = b[0][1] * h0 + b[1][1] * h1;
        let (m0, m1) = (h0 - rt0, h1 - rt1);
        out[2 * i] = h0 + b[0][0] * m0 + b[0][1] * m1;
        out[2 * i + 1] = h1 + b[1][0] * m0 + b[1][1] * m1;
    }
    Ok(DenseVector::new(out))
}

/// Block indices (0-based, each in `0..d2/2`) owned by one task.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubspaceMask {
    block_ids: BTreeSet<usize>,
}

impl SubspaceMask {
    pub fn from_blocks(blocks: impl IntoIterator<Item = usize>) -> Self {
        Self {
            block_ids: blocks.into_iter().collect(),
        }
    }

    /// Contiguous block range `[start, end)`.
    pub fn from_range(start: usize, end: usize) -> Self {
        Self::from_blocks(start..end)
    }

    /// The first half of the blocks: `d2/4` of the `d2/2` total.
    pub fn lower_half(d2: usize) -> Self {
        Self::from_range(0, d2 / 4)
    }

    /// The remaining blocks.
    pub fn upper_half(d2: usize) -> Self {
        Self::from_range(d2 / 4, d2 / 2)
    }

    pub fn contains(&self, block: usize) -> bool {
        self.block_ids.contains(&block)
    }

    pub fn blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.block_ids.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.block_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_ids.is_empty()
    }

    /// Output dimensions covered by the mask's blocks.
    pub fn dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.block_ids.iter().flat_map(|&b| [2 * b, 2 * b + 1])
    }
}

/// Stitches block parameters from adapters trained on disjoint subspaces
/// into one adapter: block `i` comes from the unique adapter whose mask
/// contains `i`, identity elsewhere. Exact under the block-diagonal
/// structure.
pub fn compose(parts: &[(RoadAdapter, SubspaceMask)]) -> Result<RoadAdapter> {
    let (first, _) = parts.first().ok_or_else(|| {
        Error::Precondition("compose requires at least one adapter".into())
    })?;
    let (variant, d2) = (first.variant(), first.d2());
    for (a, mask) in parts {
        if a.variant() != variant || a.d2() != d2 {
            return Err(Error::Precondition(format!(
                "compose requires matching (variant, d2); got ({}, {}) vs ({}, {})",
                a.variant().label(),
                a.d2(),
                variant.label(),
                d2
            )));
        }
        if let Some(&bad) = mask.block_ids.iter().find(|&&b| b >= d2 / 2) {
            return Err(Error::Precondition(format!(
                "mask block {bad} out of range for d2 = {d2}"
            )));
        }
    }

    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut collisions: BTreeSet<usize> = BTreeSet::new();
    for (_, mask) in parts {
        for b in mask.blocks() {
            if !seen.insert(b) {
                collisions.insert(b);
            }
        }
    }
    if !collisions.is_empty() {
        return Err(Error::CompositionConflict {
            blocks: collisions.into_iter().collect(),
        });
    }

    let mut composed = RoadAdapter::new(variant, d2)?;
    let per_block = variant.params_per_block();
    for (a, mask) in parts {
        for b in mask.blocks() {
            let span = b * per_block..(b + 1) * per_block;
            composed.theta_mut()[span.clone()].copy_from_slice(&a.theta()[span.clone()]);
            composed.alpha_mut()[span.clone()].copy_from_slice(&a.alpha()[span]);
        }
    }
    Ok(composed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededRng;
    use crate::road::RoadVariant;
    use std::f64::consts::PI;

    #[test]
    fn delta_m_knowns() {
        let x0 = DenseVector::new(vec![3.0, 4.0]);
        assert_eq!(delta_m(&RepPair::new(x0.clone(), x0.clone()).unwrap()), 0.0);
        let doubled = DenseVector::new(vec![6.0, 8.0]);
        assert_eq!(delta_m(&RepPair::new(x0.clone(), doubled).unwrap()), 1.0);
        let equal_norm = DenseVector::new(vec![0.0, 5.0]);
        assert_eq!(delta_m(&RepPair::new(x0, equal_norm).unwrap()), 0.0);
    }

    #[test]
    fn delta_d_knowns() {
        let x0 = DenseVector::new(vec![1.0, 2.0]);
        let same = RepPair::new(x0.clone(), x0.clone()).unwrap();
        assert!((delta_d(&same).unwrap() - 1.0).abs() < 1e-15);
        let negated = RepPair::new(x0.clone(), DenseVector::new(vec![-1.0, -2.0])).unwrap();
        assert!((delta_d(&negated).unwrap() + 1.0).abs() < 1e-15);
        let ortho = RepPair::new(x0, DenseVector::new(vec![-2.0, 1.0])).unwrap();
        assert!(delta_d(&ortho).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rep_pair_rejects_zero_pretrained() {
        let err = RepPair::new(DenseVector::zeros(2), DenseVector::new(vec![1.0, 0.0]));
        assert!(matches!(err, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn magnitude_head_examples() {
        let unit = DenseVector::new(vec![0.6, 0.8]);
        let z = magnitude_head(&DenseMatrix::identity(2), &unit).unwrap();
        assert!((z.get(0) - 1.0).abs() < 1e-15);
        assert!((z.get(1) - 1.0).abs() < 1e-15);

        let w = DenseMatrix::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let z = magnitude_head(&w, &DenseVector::new(vec![1.0, 0.0])).unwrap();
        assert!((z.get(0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn magnitude_head_is_rotation_invariant_in_x0() {
        let mut rng = SeededRng::new(13);
        let w = DenseMatrix::random_uniform(4, 3, -1.0, 1.0, &mut rng);
        let x0 = DenseVector::new(vec![1.0, -2.0, 0.5, 3.0]);
        // Rotate x0 in the (0, 1) plane; the norm is unchanged.
        let (c, s) = (0.6, 0.8);
        let rotated = DenseVector::new(vec![
            c * x0.get(0) - s * x0.get(1),
            s * x0.get(0) + c * x0.get(1),
            x0.get(2),
            x0.get(3),
        ]);
        let (z1, z2) = (
            magnitude_head(&w, &x0).unwrap(),
            magnitude_head(&w, &rotated).unwrap(),
        );
        for j in 0..3 {
            assert!((z1.get(j) - z2.get(j)).abs() <= 1e-12);
        }
    }

    #[test]
    fn angle_head_examples() {
        let w = DenseMatrix::identity(2);
        let x0 = DenseVector::new(vec![1.0, 1.0]);
        let z = angle_head(&w, &x0).unwrap();
        let expect = std::f64::consts::FRAC_1_SQRT_2;
        assert!((z.get(0) - expect).abs() < 1e-15);
        assert!((z.get(1) - expect).abs() < 1e-15);

        // Scale invariance in x0.
        let scaled = DenseVector::new(vec![7.0, 7.0]);
        let z7 = angle_head(&w, &scaled).unwrap();
        for j in 0..2 {
            assert!((z.get(j) - z7.get(j)).abs() <= 1e-15);
        }

        // Alignment gives exactly 1.
        let aligned = angle_head(&w, &DenseVector::new(vec![3.0, 0.0])).unwrap();
        assert!((aligned.get(0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn angle_head_rejects_zero_column() {
        let w = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let err = angle_head(&w, &DenseVector::new(vec![1.0, 1.0]));
        assert!(matches!(err, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn dii_identity_cases() {
        let b = DenseVector::new(vec![1.0, 2.0]);
        let s = DenseVector::new(vec![9.0, 9.0]);

        // s == b leaves b unchanged.
        let same = dii_apply(&b, &b, &DenseMatrix::identity(2)).unwrap();
        assert_eq!(same.as_slice(), b.as_slice());

        // Full-rank projection returns s.
        let full = dii_apply(&b, &s, &DenseMatrix::identity(2)).unwrap();
        for j in 0..2 {
            assert!((full.get(j) - s.get(j)).abs() <= 1e-15);
        }

        // First-coordinate projection swaps one coordinate.
        let p = DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let swapped = dii_apply(&b, &s, &p).unwrap();
        assert_eq!(swapped.as_slice(), &[9.0, 2.0]);
    }

    #[test]
    fn dii_is_idempotent() {
        let mut rng = SeededRng::new(19);
        let b = DenseVector::random_uniform(4, -1.0, 1.0, &mut rng);
        let s = DenseVector::random_uniform(4, -1.0, 1.0, &mut rng);
        let p = DenseMatrix::from_vec(
            2,
            4,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let once = dii_apply(&b, &s, &p).unwrap();
        let twice = dii_apply(&once, &s, &p).unwrap();
        for j in 0..4 {
            assert!((once.get(j) - twice.get(j)).abs() <= 1e-12);
        }
    }

    #[test]
    fn dii_rejects_non_orthonormal_rows() {
        let p = DenseMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let v = DenseVector::new(vec![1.0, 2.0]);
        assert!(matches!(
            dii_apply(&v, &v, &p),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn road_as_dii_matches_direct_application() {
        let mut rng = SeededRng::new(21);
        let d2 = 16;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..d2 / 2).map(|_| rng.uniform(-PI, PI)).collect();
            let a = RoadAdapter::with_params(RoadVariant::Road1, d2, theta, vec![1.0; d2 / 2])
                .unwrap();
            let h = DenseVector::random_uniform(d2, -2.0, 2.0, &mut rng);
            let via_dii = road_as_dii(&a, &h).unwrap();
            let direct = a.factorize().apply(&h).unwrap();
            for j in 0..d2 {
                assert!((via_dii.get(j) - direct.get(j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn road_as_dii_identity_init_and_alpha_contract() {
        let a = RoadAdapter::new(RoadVariant::Road1, 4).unwrap();
        let h = DenseVector::new(vec![1.0, 2.0, 3.0, 4.0]);
        let z = road_as_dii(&a, &h).unwrap();
        assert_eq!(z.as_slice(), h.as_slice());

        let scaled =
            RoadAdapter::with_params(RoadVariant::Road1, 4, vec![0.0; 2], vec![2.0; 2]).unwrap();
        assert!(matches!(
            road_as_dii(&scaled, &h),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn compose_single_full_mask_is_identity_operation() {
        let mut rng = SeededRng::new(23);
        let a = RoadAdapter::random(RoadVariant::Road1, 8, &mut rng).unwrap();
        let full = SubspaceMask::from_range(0, 4);
        let composed = compose(&[(a.clone(), full)]).unwrap();
        assert_eq!(composed, a);
    }

    #[test]
    fn compose_identities_stays_identity() {
        let a = RoadAdapter::new(RoadVariant::Road2, 8).unwrap();
        let b = RoadAdapter::new(RoadVariant::Road2, 8).unwrap();
        let composed = compose(&[
            (a, SubspaceMask::from_range(0, 2)),
            (b, SubspaceMask::from_range(2, 4)),
        ])
        .unwrap();
        assert_eq!(composed, RoadAdapter::new(RoadVariant::Road2, 8).unwrap());
    }

    #[test]
    fn composed_blocks_match_sources_exactly() {
        let mut rng = SeededRng::new(29);
        let d2 = 12;
        let a = RoadAdapter::random(RoadVariant::Road4, d2, &mut rng).unwrap();
        let b = RoadAdapter::random(RoadVariant::Road4, d2, &mut rng).unwrap();
        let (ma, mb) = (SubspaceMask::from_range(0, 3), SubspaceMask::from_range(3, 6));
        let composed = compose(&[(a.clone(), ma.clone()), (b.clone(), mb)]).unwrap();

        let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
        let zc = composed.factorize().apply(&h).unwrap();
        let za = a.factorize().apply(&h).unwrap();
        let zb = b.factorize().apply(&h).unwrap();
        for d in ma.dims() {
            assert_eq!(zc.get(d), za.get(d), "dim {d} differs from part A");
        }
        for d in SubspaceMask::from_range(3, 6).dims() {
            assert_eq!(zc.get(d), zb.get(d), "dim {d} differs from part B");
        }
    }

    #[test]
    fn compose_rejects_overlapping_masks() {
        let a = RoadAdapter::new(RoadVariant::Road1, 8).unwrap();
        let b = RoadAdapter::new(RoadVariant::Road1, 8).unwrap();
        let err = compose(&[
            (a, SubspaceMask::from_range(0, 3)),
            (b, SubspaceMask::from_range(2, 4)),
        ])
        .unwrap_err();
        match err {
            Error::CompositionConflict { blocks } => assert_eq!(blocks, vec![2]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn block_locality_is_bitwise() {
        let mut rng = SeededRng::new(31);
        let d2 = 10;
        let a = RoadAdapter::random(RoadVariant::Road4, d2, &mut rng).unwrap();
        let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
        let before = a.factorize().apply(&h).unwrap();

        // Perturb every block except block 2; dims (4, 5) must not move.
        let mut perturbed = a.clone();
        for (k, t) in perturbed.theta_mut().iter_mut().enumerate() {
            if !(8..12).contains(&k) {
                *t += 0.37;
            }
        }
        let after = perturbed.factorize().apply(&h).unwrap();
        assert_eq!(before.get(4), after.get(4));
        assert_eq!(before.get(5), after.get(5));
        assert_ne!(before.get(0), after.get(0));
    }

    #[test]
    fn masked_loss_gradients_vanish_outside_mask() {
        let mut rng = SeededRng::new(37);
        let d2 = 8;
        let a = RoadAdapter::random(RoadVariant::Road2, d2, &mut rng).unwrap();
        let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
        // Upstream supported only on the dims of blocks {0, 1}.
        let mask = SubspaceMask::from_range(0, 2);
        let mut upstream = vec![0.0; d2];
        for d in mask.dims() {
            upstream[d] = rng.uniform(-1.0, 1.0);
        }
        let g = a.grad(&h, &DenseVector::new(upstream)).unwrap();
        let per_block = a.variant().params_per_block();
        for block in 2..d2 / 2 {
            for k in block * per_block..(block + 1) * per_block {
                assert_eq!(g.d_theta[k], 0.0);
                assert_eq!(g.d_alpha[k], 0.0);
            }
        }
    }
}
