//! The full invariant suite behind the `verify` command: every module's
//! core contracts exercised at small scale, deterministically from one
//! seed. Heavier sweeps (large widths, timing ordering, fuzzing) live in
//! the acceptance tests; this suite is the fast always-run gate.

use serde::Serialize;

use crate::analysis::{
    angle_head, compose, delta_d, delta_m, dii_apply, magnitude_head, road_as_dii, RepPair,
    SubspaceMask,
};
use crate::baselines::{cayley_block, DiagScaleAdapter, LoraAdapter};
use crate::error::Error;
use crate::io::{decode_adapter_file, encode_adapter_file};
use crate::numeric::{finite_diff_grad, matvec, DenseMatrix, DenseVector, SeededRng};
use crate::road::{param_count, RoadAdapter, RoadVariant};
use crate::serving::{
    diag_flops_per_token, lora_flops_per_token, road_flops_per_token, serve_diag_elementwise,
    serve_lora_bmm, serve_road_elementwise, serve_sequential_oracle, AdapterId, AdapterRegistry,
    HeteroBatch,
};
use crate::trainer::gradient_check_suite;

pub const ALL_VARIANTS: [RoadVariant; 3] =
    [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4];

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, fn(u64) -> Result<String, String>);

const CHECKS: &[Check] = &[
    ("matvec_linearity", check_matvec_linearity),
    ("finite_diff_polynomial", check_finite_diff_polynomial),
    ("factored_dense_equivalence", check_factored_dense_equivalence),
    ("identity_init_noop", check_identity_init_noop),
    ("road1_orthogonality", check_road1_orthogonality),
    ("degeneracy_ladder", check_degeneracy_ladder),
    ("adapter_gradients", check_adapter_gradients),
    ("merge_consistency", check_merge_consistency),
    ("parameter_counts", check_parameter_counts),
    ("cayley_blocks", check_cayley_blocks),
    ("lora_contract", check_lora_contract),
    ("diag_scale_contract", check_diag_scale_contract),
    ("serving_equivalence", check_serving_equivalence),
    ("serving_permutation", check_serving_permutation),
    ("flop_counters", check_flop_counters),
    ("dii_identities", check_dii_identities),
    ("composition", check_composition),
    ("adapter_file_integrity", check_adapter_file_integrity),
    ("delta_metrics_and_heads", check_delta_metrics_and_heads),
];

/// Runs every check with sub-seeds derived from `seed`. Output is a pure
/// function of the seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let sub = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            match f(sub) {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

fn max_abs_diff(a: &DenseVector, b: &DenseVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_matvec_linearity(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for &d in &[2usize, 16, 64, 256] {
        let w = DenseMatrix::random_uniform(d, d, -1.0, 1.0, &mut rng);
        let x = DenseVector::random_uniform(d, -1.0, 1.0, &mut rng);
        let y = DenseVector::random_uniform(d, -1.0, 1.0, &mut rng);
        let (a, b) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        let combo = DenseVector::new(
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(xi, yi)| a * xi + b * yi)
                .collect(),
        );
        let lhs = matvec(&w, &combo).map_err(|e| e.to_string())?;
        let wx = matvec(&w, &x).map_err(|e| e.to_string())?;
        let wy = matvec(&w, &y).map_err(|e| e.to_string())?;
        for j in 0..d {
            let rhs = a * wx.get(j) + b * wy.get(j);
            let rel = (lhs.get(j) - rhs).abs() / rhs.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max relative deviation {worst:.2e}"))
    } else {
        Err(format!("linearity violated: {worst:.2e} > 1e-12"))
    }
}

fn check_finite_diff_polynomial(_seed: u64) -> Result<String, String> {
    // Degree-3 polynomial has analytic gradient 3p² − 4p + 1.
    let f = |p: &DenseVector| p.get(0).powi(3) - 2.0 * p.get(0).powi(2) + p.get(0);
    let p = DenseVector::new(vec![1.3]);
    let fd = finite_diff_grad(f, &p, 1e-5).map_err(|e| e.to_string())?;
    let analytic = 3.0 * 1.3_f64.powi(2) - 4.0 * 1.3 + 1.0;
    let err = (fd.get(0) - analytic).abs();
    if err <= 1e-9 {
        Ok(format!("cubic gradient error {err:.2e}"))
    } else {
        Err(format!("cubic gradient error {err:.2e} > 1e-9"))
    }
}

fn check_factored_dense_equivalence(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for variant in ALL_VARIANTS {
        for &d2 in &[2usize, 4, 64] {
            for _ in 0..25 {
                let a = RoadAdapter::random(variant, d2, &mut rng).map_err(|e| e.to_string())?;
                let h = DenseVector::random_uniform(d2, -2.0, 2.0, &mut rng);
                let fast = a.factorize().apply(&h).map_err(|e| e.to_string())?;
                let slow = a.apply_dense_oracle(&h).map_err(|e| e.to_string())?;
                worst = worst.max(max_abs_diff(&fast, &slow));
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max |factored − dense| = {worst:.2e}"))
    } else {
        Err(format!("paths diverge: {worst:.2e} > 1e-12"))
    }
}

fn check_identity_init_noop(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    for variant in ALL_VARIANTS {
        let a = RoadAdapter::new(variant, 32).map_err(|e| e.to_string())?;
        let h = DenseVector::random_uniform(32, -5.0, 5.0, &mut rng);
        let z = a.factorize().apply(&h).map_err(|e| e.to_string())?;
        if z.as_slice() != h.as_slice() {
            return Err(format!("{} init is not a bitwise no-op", variant.label()));
        }
    }
    Ok("fresh adapters are bitwise no-ops".into())
}

fn check_road1_orthogonality(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let d2 = 16;
    let mut worst = 0.0_f64;
    for _ in 0..25 {
        let theta: Vec<f64> = (0..d2 / 2)
            .map(|_| rng.uniform(-std::f64::consts::PI, std::f64::consts::PI))
            .collect();
        let a = RoadAdapter::with_params(RoadVariant::Road1, d2, theta, vec![1.0; d2 / 2])
            .map_err(|e| e.to_string())?;
        for b in a.build_blocks() {
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            worst = worst.max((det - 1.0).abs());
            worst = worst.max((b[0][0] * b[0][0] + b[1][0] * b[1][0] - 1.0).abs());
            worst = worst.max((b[0][0] * b[0][1] + b[1][0] * b[1][1]).abs());
            worst = worst.max((b[0][1] * b[0][1] + b[1][1] * b[1][1] - 1.0).abs());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max |RᵀR − I| and |det − 1| = {worst:.2e}"))
    } else {
        Err(format!("orthogonality violated: {worst:.2e} > 1e-12"))
    }
}

fn check_degeneracy_ladder(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let d2 = 16;
    let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);

    let r1 = RoadAdapter::random(RoadVariant::Road1, d2, &mut rng).map_err(|e| e.to_string())?;
    let dup2 = |p: &[f64]| -> Vec<f64> { p.iter().flat_map(|&v| [v; 2]).collect() };
    let r2 = RoadAdapter::with_params(RoadVariant::Road2, d2, dup2(r1.theta()), dup2(r1.alpha()))
        .map_err(|e| e.to_string())?;
    let d12 = max_abs_diff(
        &r1.factorize().apply(&h).map_err(|e| e.to_string())?,
        &r2.factorize().apply(&h).map_err(|e| e.to_string())?,
    );

    let r2b = RoadAdapter::random(RoadVariant::Road2, d2, &mut rng).map_err(|e| e.to_string())?;
    let dup4 = |p: &[f64]| -> Vec<f64> {
        p.chunks(2)
            .flat_map(|rows| [rows[0], rows[0], rows[1], rows[1]])
            .collect()
    };
    let r4 = RoadAdapter::with_params(RoadVariant::Road4, d2, dup4(r2b.theta()), dup4(r2b.alpha()))
        .map_err(|e| e.to_string())?;
    let d24 = max_abs_diff(
        &r2b.factorize().apply(&h).map_err(|e| e.to_string())?,
        &r4.factorize().apply(&h).map_err(|e| e.to_string())?,
    );

    let worst = d12.max(d24);
    if worst <= 1e-12 {
        Ok(format!("tied-parameter collapse max diff {worst:.2e}"))
    } else {
        Err(format!("degeneracy ladder broken: {worst:.2e} > 1e-12"))
    }
}

fn check_adapter_gradients(seed: u64) -> Result<String, String> {
    let report =
        gradient_check_suite(&ALL_VARIANTS, &[8], seed, 5).map_err(|e| e.to_string())?;
    let worst = report.worst();
    if report.all_pass() && worst <= 1e-5 {
        Ok(format!("max relative gradient error {worst:.2e}"))
    } else {
        Err(format!("gradient mismatch: {worst:.2e} > 1e-5"))
    }
}

fn check_merge_consistency(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let (d1, d2) = (8, 6);
    let w0 = DenseMatrix::random_uniform(d1, d2, -1.0, 1.0, &mut rng);

    // Identity init merges to the identical matrix.
    for variant in ALL_VARIANTS {
        let fresh = RoadAdapter::new(variant, d2).map_err(|e| e.to_string())?;
        let merged = fresh.merge_into(&w0).map_err(|e| e.to_string())?;
        if merged.data() != w0.data() {
            return Err(format!("{} identity merge is not bitwise", variant.label()));
        }
    }

    let mut worst = 0.0_f64;
    for variant in ALL_VARIANTS {
        for _ in 0..10 {
            let a = RoadAdapter::random(variant, d2, &mut rng).map_err(|e| e.to_string())?;
            let merged = a.merge_into(&w0).map_err(|e| e.to_string())?;
            let f = a.factorize();
            let x = DenseVector::random_uniform(d1, -1.0, 1.0, &mut rng);
            let direct = matvec(&merged, &x).map_err(|e| e.to_string())?;
            let adapted = f
                .apply(&matvec(&w0, &x).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            for j in 0..d2 {
                let rel = (direct.get(j) - adapted.get(j)).abs() / adapted.get(j).abs().max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    if worst <= 1e-9 {
        Ok(format!("merged vs adapted path relative error {worst:.2e}"))
    } else {
        Err(format!("merge inconsistent: {worst:.2e} > 1e-9"))
    }
}

fn check_parameter_counts(_seed: u64) -> Result<String, String> {
    for &d2 in &[2usize, 768, 1024, 4096, 5120] {
        let c1 = param_count(RoadVariant::Road1, d2).map_err(|e| e.to_string())?;
        let c2 = param_count(RoadVariant::Road2, d2).map_err(|e| e.to_string())?;
        let c4 = param_count(RoadVariant::Road4, d2).map_err(|e| e.to_string())?;
        if c1 != d2 || c2 != 2 * d2 || c4 != 4 * d2 {
            return Err(format!("counts at d2={d2}: {c1}/{c2}/{c4}"));
        }
        // Rank-0.5 low-rank equivalence at square shapes: r·(d1+d2) = d2.
        let lora_half_rank = (d2 + d2) / 2;
        if c1 != lora_half_rank {
            return Err(format!(
                "rank-0.5 equivalence broken at d2={d2}: {c1} != {lora_half_rank}"
            ));
        }
    }
    if param_count(RoadVariant::Road1, 7).is_ok() {
        return Err("odd d2 accepted".into());
    }
    Ok("d2/2d2/4d2 and rank-0.5 equivalence hold".into())
}

fn check_cayley_blocks(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let qi = rng.uniform(-10.0, 10.0);
        let b = cayley_block(qi);
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        worst = worst.max((det - 1.0).abs());
        worst = worst.max((b[0][0] * b[0][0] + b[1][0] * b[1][0] - 1.0).abs());
        worst = worst.max((b[0][0] * b[0][1] + b[1][0] * b[1][1]).abs());

        // Same family as a unit-scale rotary block at ±2·atan(q).
        let matched = [-2.0 * qi.atan(), 2.0 * qi.atan()].iter().any(|&theta| {
            let a = RoadAdapter::with_params(RoadVariant::Road1, 2, vec![theta], vec![1.0])
                .expect("valid");
            let rb = a.block(0);
            (0..2).all(|r| (0..2).all(|c| (b[r][c] - rb[r][c]).abs() <= 1e-10))
        });
        if !matched {
            return Err(format!("no rotary angle matches cayley q={qi}"));
        }
    }
    if worst <= 1e-12 {
        Ok(format!("orthogonality residual {worst:.2e}; family match holds"))
    } else {
        Err(format!("cayley orthogonality residual {worst:.2e} > 1e-12"))
    }
}

fn check_lora_contract(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let (d1, d2, r) = (8, 6, 2);
    let w0 = DenseMatrix::random_uniform(d1, d2, -1.0, 1.0, &mut rng);
    let x = DenseVector::random_uniform(d1, -1.0, 1.0, &mut rng);

    let zero = LoraAdapter::zero_init(d1, d2, r, 1.0, &mut rng).map_err(|e| e.to_string())?;
    let noop = zero.apply(&w0, &x).map_err(|e| e.to_string())?;
    let base = matvec(&w0, &x).map_err(|e| e.to_string())?;
    if noop.as_slice() != base.as_slice() {
        return Err("zero-init delta is not a no-op".into());
    }

    let adapter = LoraAdapter::random(d1, d2, r, 0.7, &mut rng).map_err(|e| e.to_string())?;
    let fast = adapter.apply(&w0, &x).map_err(|e| e.to_string())?;
    let delta = adapter.delta_dense();
    let dense = DenseMatrix::from_fn(d1, d2, |i, j| w0.get(i, j) + delta.get(i, j));
    let slow = matvec(&dense, &x).map_err(|e| e.to_string())?;
    let diff = max_abs_diff(&fast, &slow);
    if diff <= 1e-12 {
        Ok(format!("factored vs dense route diff {diff:.2e}"))
    } else {
        Err(format!("low-rank routes diverge: {diff:.2e} > 1e-12"))
    }
}

fn check_diag_scale_contract(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let h = DenseVector::random_uniform(6, -1.0, 1.0, &mut rng);
    let ones = DiagScaleAdapter::new(6);
    if ones.apply(&h).map_err(|e| e.to_string())?.as_slice() != h.as_slice() {
        return Err("unit gains are not a no-op".into());
    }
    let zero = DiagScaleAdapter::with_gains(vec![0.0; 6]);
    if zero
        .apply(&h)
        .map_err(|e| e.to_string())?
        .as_slice()
        .iter()
        .any(|&v| v != 0.0)
    {
        return Err("zero gains do not produce the zero vector".into());
    }
    Ok("unit and zero gain contracts hold".into())
}

fn serving_fixture(
    seed: u64,
) -> Result<(AdapterRegistry, AdapterRegistry, HeteroBatch, DenseMatrix), String> {
    let mut rng = SeededRng::new(seed);
    let (b, l, d) = (4, 2, 8);
    let mut road_reg = AdapterRegistry::new();
    let mut lora_reg = AdapterRegistry::new();
    for i in 0..b {
        let variant = ALL_VARIANTS[i % 3];
        road_reg
            .insert(
                AdapterId(i as u32),
                RoadAdapter::random(variant, d, &mut rng).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
        lora_reg
            .insert(
                AdapterId(i as u32),
                LoraAdapter::random(d, d, 2, 1.0, &mut rng).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
    }
    road_reg.freeze();
    lora_reg.freeze();
    let ids: Vec<AdapterId> = (0..b as u32).map(AdapterId).collect();
    let batch = HeteroBatch::random(b, l, d, ids, &mut rng).map_err(|e| e.to_string())?;
    let w0 = DenseMatrix::random_uniform(d, d, -1.0, 1.0, &mut rng);
    Ok((road_reg, lora_reg, batch, w0))
}

fn check_serving_equivalence(seed: u64) -> Result<String, String> {
    let (road_reg, lora_reg, batch, w0) = serving_fixture(seed)?;
    let mut worst = 0.0_f64;

    let fast = serve_road_elementwise(&road_reg, &batch, &w0).map_err(|e| e.to_string())?;
    let oracle = serve_sequential_oracle(&road_reg, &batch, &w0).map_err(|e| e.to_string())?;
    for (a, b) in fast.data.iter().zip(&oracle.data) {
        worst = worst.max((a - b).abs());
    }

    let fast = serve_lora_bmm(&lora_reg, &batch, &w0).map_err(|e| e.to_string())?;
    let oracle = serve_sequential_oracle(&lora_reg, &batch, &w0).map_err(|e| e.to_string())?;
    for (a, b) in fast.data.iter().zip(&oracle.data) {
        worst = worst.max((a - b).abs());
    }

    if worst <= 1e-12 {
        Ok(format!("batched vs sequential max diff {worst:.2e}"))
    } else {
        Err(format!("kernels diverge from oracle: {worst:.2e} > 1e-12"))
    }
}

fn check_serving_permutation(seed: u64) -> Result<String, String> {
    let (road_reg, _, batch, w0) = serving_fixture(seed)?;
    let out = serve_road_elementwise(&road_reg, &batch, &w0).map_err(|e| e.to_string())?;
    let perm = [2usize, 0, 3, 1];
    let permuted_batch = batch.permuted(&perm).map_err(|e| e.to_string())?;
    let out_perm =
        serve_road_elementwise(&road_reg, &permuted_batch, &w0).map_err(|e| e.to_string())?;
    for (new_pos, &src) in perm.iter().enumerate() {
        for t in 0..batch.l() {
            if out_perm.token(new_pos, t) != out.token(src, t) {
                return Err(format!("request {src} leaked into another slot"));
            }
        }
    }
    Ok("request permutation permutes outputs bitwise".into())
}

fn check_flop_counters(seed: u64) -> Result<String, String> {
    let (road_reg, lora_reg, batch, w0) = serving_fixture(seed)?;
    let (b, l, d) = (batch.b() as u64, batch.l() as u64, w0.cols());

    let road = serve_road_elementwise(&road_reg, &batch, &w0).map_err(|e| e.to_string())?;
    if road.adapter_flops != b * l * road_flops_per_token(d) {
        return Err(format!("rotary counter {}", road.adapter_flops));
    }
    let lora = serve_lora_bmm(&lora_reg, &batch, &w0).map_err(|e| e.to_string())?;
    if lora.adapter_flops != b * l * lora_flops_per_token(2, d, d) {
        return Err(format!("low-rank counter {}", lora.adapter_flops));
    }

    let mut diag_reg = AdapterRegistry::new();
    for i in 0..batch.b() {
        diag_reg
            .insert(AdapterId(i as u32), DiagScaleAdapter::new(d))
            .map_err(|e| e.to_string())?;
    }
    diag_reg.freeze();
    let diag = serve_diag_elementwise(&diag_reg, &batch, &w0).map_err(|e| e.to_string())?;
    if diag.adapter_flops != b * l * diag_flops_per_token(d) {
        return Err(format!("diagonal counter {}", diag.adapter_flops));
    }

    // Closed-form ratio at the reference shape, cross-multiplied exactly.
    let (road_ref, lora_ref) = (road_flops_per_token(4096), lora_flops_per_token(8, 4096, 4096));
    if road_ref * 131_072 != lora_ref * 12_288 {
        return Err("reference flop ratio is not 3d2/(2r(d1+d2))".into());
    }
    Ok("counters equal closed forms; reference ratio exact".into())
}

fn check_dii_identities(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let b = DenseVector::random_uniform(4, -1.0, 1.0, &mut rng);
    let s = DenseVector::random_uniform(4, -1.0, 1.0, &mut rng);
    let p = DenseMatrix::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        .map_err(|e| e.to_string())?;
    let once = dii_apply(&b, &s, &p).map_err(|e| e.to_string())?;
    let twice = dii_apply(&once, &s, &p).map_err(|e| e.to_string())?;
    if max_abs_diff(&once, &twice) > 1e-12 {
        return Err("projection is not idempotent".into());
    }

    let d2 = 16;
    let theta: Vec<f64> = (0..d2 / 2)
        .map(|_| rng.uniform(-std::f64::consts::PI, std::f64::consts::PI))
        .collect();
    let a = RoadAdapter::with_params(RoadVariant::Road1, d2, theta, vec![1.0; d2 / 2])
        .map_err(|e| e.to_string())?;
    let h = DenseVector::random_uniform(d2, -2.0, 2.0, &mut rng);
    let via = road_as_dii(&a, &h).map_err(|e| e.to_string())?;
    let direct = a.factorize().apply(&h).map_err(|e| e.to_string())?;
    let diff = max_abs_diff(&via, &direct);
    if diff > 1e-12 {
        return Err(format!("intervention identity off by {diff:.2e}"));
    }

    let scaled = RoadAdapter::with_params(RoadVariant::Road1, 4, vec![0.0; 2], vec![2.0; 2])
        .map_err(|e| e.to_string())?;
    match road_as_dii(&scaled, &DenseVector::zeros(4)) {
        Err(Error::Precondition(_)) => {}
        _ => return Err("alpha != 1 was not rejected".into()),
    }
    Ok(format!("idempotence and identity hold (diff {diff:.2e})"))
}

fn check_composition(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let d2 = 12;
    let a = RoadAdapter::random(RoadVariant::Road1, d2, &mut rng).map_err(|e| e.to_string())?;
    let b = RoadAdapter::random(RoadVariant::Road1, d2, &mut rng).map_err(|e| e.to_string())?;
    let (ma, mb) = (SubspaceMask::from_range(0, 3), SubspaceMask::from_range(3, 6));
    let composed =
        compose(&[(a.clone(), ma.clone()), (b.clone(), mb)]).map_err(|e| e.to_string())?;

    let h = DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng);
    let zc = composed.factorize().apply(&h).map_err(|e| e.to_string())?;
    let za = a.factorize().apply(&h).map_err(|e| e.to_string())?;
    for d in ma.dims() {
        if zc.get(d) != za.get(d) {
            return Err(format!("dim {d} of the composed adapter differs bitwise"));
        }
    }

    match compose(&[
        (a.clone(), SubspaceMask::from_range(0, 4)),
        (b, SubspaceMask::from_range(3, 6)),
    ]) {
        Err(Error::CompositionConflict { blocks }) if blocks == vec![3] => {}
        other => return Err(format!("overlap not reported correctly: {other:?}")),
    }
    Ok("stitching is exact on owned blocks; overlaps rejected".into())
}

fn check_adapter_file_integrity(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let len = RoadVariant::Road2.param_len(6);
    let theta: Vec<f64> = (0..len)
        .map(|_| rng.uniform(-3.0, 3.0) as f32 as f64)
        .collect();
    let alpha: Vec<f64> = (0..len)
        .map(|_| rng.uniform(0.5, 1.5) as f32 as f64)
        .collect();
    let a = RoadAdapter::with_params(RoadVariant::Road2, 6, theta, alpha)
        .map_err(|e| e.to_string())?;
    let bytes =
        encode_adapter_file(&[("fc1".into(), a.clone())]).map_err(|e| e.to_string())?;
    let decoded = decode_adapter_file(&bytes).map_err(|e| e.to_string())?;
    if decoded[0].1 != a {
        return Err("round trip changed the adapter".into());
    }

    // A handful of deterministic byte flips must all be caught.
    for pos in [0usize, 5, 9, 20, bytes.len() - 2] {
        let mut flipped = bytes.clone();
        flipped[pos] ^= 0x40;
        match decode_adapter_file(&flipped) {
            Err(_) => {}
            Ok(layers) if layers[0].1 == a => {}
            Ok(_) => return Err(format!("flip at byte {pos} went undetected")),
        }
    }
    Ok("round trip exact; corruption detected".into())
}

fn check_delta_metrics_and_heads(seed: u64) -> Result<String, String> {
    let mut rng = SeededRng::new(seed);
    let x0 = DenseVector::new(vec![3.0, 4.0]);
    let same = RepPair::new(x0.clone(), x0.clone()).map_err(|e| e.to_string())?;
    if delta_m(&same) != 0.0 || (delta_d(&same).map_err(|e| e.to_string())? - 1.0).abs() > 1e-15 {
        return Err("identical pair should give ΔM = 0, ΔD = 1".into());
    }
    let doubled = RepPair::new(x0.clone(), DenseVector::new(vec![6.0, 8.0]))
        .map_err(|e| e.to_string())?;
    if (delta_m(&doubled) - 1.0).abs() > 1e-15 {
        return Err("doubling should give ΔM = 1".into());
    }

    let w = DenseMatrix::random_uniform(4, 3, -1.0, 1.0, &mut rng);
    let v = DenseVector::new(vec![1.0, -2.0, 0.5, 3.0]);
    let (c, s) = (0.6, 0.8);
    let rotated = DenseVector::new(vec![
        c * v.get(0) - s * v.get(1),
        s * v.get(0) + c * v.get(1),
        v.get(2),
        v.get(3),
    ]);
    let m1 = magnitude_head(&w, &v).map_err(|e| e.to_string())?;
    let m2 = magnitude_head(&w, &rotated).map_err(|e| e.to_string())?;
    if max_abs_diff(&m1, &m2) > 1e-12 {
        return Err("magnitude head is not rotation-invariant".into());
    }
    let a1 = angle_head(&w, &v).map_err(|e| e.to_string())?;
    let scaled = DenseVector::new(v.as_slice().iter().map(|x| 7.0 * x).collect());
    let a2 = angle_head(&w, &scaled).map_err(|e| e.to_string())?;
    if max_abs_diff(&a1, &a2) > 1e-12 {
        return Err("angle head is not scale-invariant".into());
    }
    Ok("metric knowns and head invariances hold".into())
}
