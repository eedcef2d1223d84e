//! Heterogeneous multi-adapter batched serving: per-request adapter
//! routing, the batched low-rank path versus the element-wise rotary path,
//! instrumented FLOP counters and a wall-clock timing harness.
//!
//! The shared base product `XW⁰` is computed (or synthesized) once and
//! reused by every kernel, so measurements isolate adapter overhead. FLOP
//! counters tally only the adapter stage: `3·d2` per token for the rotary
//! kernel (two multiplies and one add per element), `d2` for diagonal
//! gains, `2·r·(d1 + d2)` for the batched low-rank path, and zero for a
//! merged homogeneous weight.

use std::collections::BTreeMap;
use std::time::Instant;

use num_traits::{Float, NumCast};
use serde::Serialize;

use crate::adapter::{dense_reference_apply, AnyAdapter};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, DenseVector, SeededRng};
use crate::road::RoadAdapter;

/// Identifier a request uses to select its adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct AdapterId(pub u32);

/// Immutable collection of named adapters. Must be frozen before serving;
/// frozen registries reject further inserts.
#[derive(Debug, Clone, Default)]
pub struct AdapterRegistry {
    entries: BTreeMap<AdapterId, AnyAdapter>,
    frozen: bool,
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: AdapterId, adapter: impl Into<AnyAdapter>) -> Result<()> {
        if self.frozen {
            return Err(Error::Precondition(
                "cannot insert into a frozen registry".into(),
            ));
        }
        self.entries.insert(id, adapter.into());
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, id: AdapterId) -> Option<&AnyAdapter> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn require_frozen(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Precondition(
                "registry must be frozen before serving".into(),
            ));
        }
        Ok(())
    }

    /// The adapter for each request, in batch order.
    fn route<'a>(&'a self, batch: &HeteroBatch) -> Result<Vec<&'a AnyAdapter>> {
        batch
            .adapter_ids
            .iter()
            .map(|&id| {
                self.get(id)
                    .ok_or_else(|| Error::Routing(format!("adapter id {} not in registry", id.0)))
            })
            .collect()
    }
}

/// `b` requests × `l` tokens × `d1` features, plus one adapter id per
/// request.
#[derive(Debug, Clone)]
pub struct HeteroBatch {
    b: usize,
    l: usize,
    d1: usize,
    features: Vec<f64>,
    adapter_ids: Vec<AdapterId>,
}

impl HeteroBatch {
    pub fn new(
        b: usize,
        l: usize,
        d1: usize,
        features: Vec<f64>,
        adapter_ids: Vec<AdapterId>,
    ) -> Result<Self> {
        if b == 0 || l == 0 {
            return Err(Error::Precondition(format!(
                "batch requires b >= 1 and l >= 1, got b={b}, l={l}"
            )));
        }
        if features.len() != b * l * d1 {
            return Err(Error::dimension(
                "HeteroBatch::new",
                format!("{} features", b * l * d1),
                format!("{}", features.len()),
            ));
        }
        if adapter_ids.len() != b {
            return Err(Error::dimension(
                "HeteroBatch::new",
                format!("{b} adapter ids"),
                format!("{}", adapter_ids.len()),
            ));
        }
        Ok(Self {
            b,
            l,
            d1,
            features,
            adapter_ids,
        })
    }

    pub fn random(
        b: usize,
        l: usize,
        d1: usize,
        adapter_ids: Vec<AdapterId>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let features = (0..b * l * d1).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self::new(b, l, d1, features, adapter_ids)
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn adapter_ids(&self) -> &[AdapterId] {
        &self.adapter_ids
    }

    pub fn token(&self, request: usize, t: usize) -> &[f64] {
        let start = (request * self.l + t) * self.d1;
        &self.features[start..start + self.d1]
    }

    /// Reorders requests (and their adapter ids) by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.b {
            return Err(Error::Precondition(format!(
                "permutation length {} != batch size {}",
                perm.len(),
                self.b
            )));
        }
        let mut features = Vec::with_capacity(self.features.len());
        let mut ids = Vec::with_capacity(self.b);
        for &src in perm {
            let start = src * self.l * self.d1;
            features.extend_from_slice(&self.features[start..start + self.l * self.d1]);
            ids.push(self.adapter_ids[src]);
        }
        Self::new(self.b, self.l, self.d1, features, ids)
    }
}

/// Output of one batched serving call, with the adapter-stage FLOPs the
/// kernel actually tallied.
#[derive(Debug, Clone)]
pub struct ServeOutput {
    pub b: usize,
    pub l: usize,
    pub d2: usize,
    pub data: Vec<f64>,
    pub adapter_flops: u64,
}

impl ServeOutput {
    pub fn token(&self, request: usize, t: usize) -> &[f64] {
        let start = (request * self.l + t) * self.d2;
        &self.data[start..start + self.d2]
    }
}

fn check_batch_w0(batch: &HeteroBatch, w0: &DenseMatrix) -> Result<()> {
    if w0.rows() != batch.d1 {
        return Err(Error::dimension(
            "serve",
            format!("W0 with {} rows", batch.d1),
            format!("{}", w0.rows()),
        ));
    }
    Ok(())
}

fn base_product(batch: &HeteroBatch, w0: &DenseMatrix) -> Result<Vec<f64>> {
    let d2 = w0.cols();
    let mut z0 = vec![0.0; batch.b * batch.l * d2];
    for i in 0..batch.b {
        for t in 0..batch.l {
            let x = batch.token(i, t);
            let out = &mut z0[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            for (k, &xk) in x.iter().enumerate() {
                let row = w0.row(k);
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += w * xk;
                }
            }
        }
    }
    Ok(z0)
}

/// Element-wise rotary serving: each request's `(v1, v2)` pair is broadcast
/// across its tokens; no matrix product beyond the shared base.
pub fn serve_road_elementwise(
    reg: &AdapterRegistry,
    batch: &HeteroBatch,
    w0: &DenseMatrix,
) -> Result<ServeOutput> {
    reg.require_frozen()?;
    check_batch_w0(batch, w0)?;
    let d2 = w0.cols();
    let adapters = reg.route(batch)?;
    let factored: Vec<_> = adapters
        .iter()
        .map(|a| match a {
            AnyAdapter::Road(road) if road.d2() == d2 => Ok(road.factorize()),
            AnyAdapter::Road(road) => Err(Error::dimension(
                "serve_road_elementwise",
                format!("adapter d2 == {d2}"),
                format!("{}", road.d2()),
            )),
            other => Err(Error::Routing(format!(
                "rotary kernel routed a {} adapter",
                other.kind_label()
            ))),
        })
        .collect::<Result<_>>()?;

    let z0 = base_product(batch, w0)?;
    let mut data = vec![0.0; z0.len()];
    let mut flops = 0_u64;
    for i in 0..batch.b {
        let (v1, v2) = (factored[i].v1(), factored[i].v2());
        for t in 0..batch.l {
            let base = &z0[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            let out = &mut data[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            road_token_stage(v1, v2, base, out);
            flops += road_flops_per_token(d2);
        }
    }
    Ok(ServeOutput {
        b: batch.b,
        l: batch.l,
        d2,
        data,
        adapter_flops: flops,
    })
}

/// Gather-then-batched-matrix-multiply low-rank serving: per request,
/// `Z_i = X_i W⁰ + (X_i B̂_i) Â_i` with scaling folded into the gathered
/// `Â_i`.
pub fn serve_lora_bmm(
    reg: &AdapterRegistry,
    batch: &HeteroBatch,
    w0: &DenseMatrix,
) -> Result<ServeOutput> {
    reg.require_frozen()?;
    check_batch_w0(batch, w0)?;
    let d2 = w0.cols();
    let adapters = reg.route(batch)?;
    let loras: Vec<_> = adapters
        .iter()
        .map(|a| match a {
            AnyAdapter::Lora(lora) if lora.d1() == batch.d1 && lora.d2() == d2 => Ok(lora),
            AnyAdapter::Lora(lora) => Err(Error::dimension(
                "serve_lora_bmm",
                format!("adapter of shape {}x{}", batch.d1, d2),
                format!("{}x{}", lora.d1(), lora.d2()),
            )),
            other => Err(Error::Routing(format!(
                "low-rank kernel routed a {} adapter",
                other.kind_label()
            ))),
        })
        .collect::<Result<_>>()?;
    let r = loras[0].rank();
    if let Some(bad) = loras.iter().find(|a| a.rank() != r) {
        return Err(Error::Routing(format!(
            "batched low-rank serving requires one rank; got {r} and {}",
            bad.rank()
        )));
    }

    // Gather: stack per-request B̂ and scaled Â.
    let (b_hat, a_hat) = gather_lora::<f64>(&loras, batch.d1, d2, r);

    let z0 = base_product(batch, w0)?;
    let mut data = vec![0.0; z0.len()];
    let mut scratch = vec![0.0; r];
    let mut flops = 0_u64;
    for i in 0..batch.b {
        let bh = &b_hat[i * batch.d1 * r..(i + 1) * batch.d1 * r];
        let ah = &a_hat[i * r * d2..(i + 1) * r * d2];
        for t in 0..batch.l {
            let x = batch.token(i, t);
            let base = &z0[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            let out = &mut data[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            lora_token_stage(bh, ah, x, base, out, &mut scratch);
            flops += lora_flops_per_token(r, batch.d1, d2);
        }
    }
    Ok(ServeOutput {
        b: batch.b,
        l: batch.l,
        d2,
        data,
        adapter_flops: flops,
    })
}

/// Diagonal-gain serving; one multiply per output element.
pub fn serve_diag_elementwise(
    reg: &AdapterRegistry,
    batch: &HeteroBatch,
    w0: &DenseMatrix,
) -> Result<ServeOutput> {
    reg.require_frozen()?;
    check_batch_w0(batch, w0)?;
    let d2 = w0.cols();
    let adapters = reg.route(batch)?;
    let gains: Vec<_> = adapters
        .iter()
        .map(|a| match a {
            AnyAdapter::DiagScale(diag) if diag.d2() == d2 => Ok(diag.gains()),
            AnyAdapter::DiagScale(diag) => Err(Error::dimension(
                "serve_diag_elementwise",
                format!("adapter d2 == {d2}"),
                format!("{}", diag.d2()),
            )),
            other => Err(Error::Routing(format!(
                "diagonal kernel routed a {} adapter",
                other.kind_label()
            ))),
        })
        .collect::<Result<_>>()?;

    let z0 = base_product(batch, w0)?;
    let mut data = vec![0.0; z0.len()];
    let mut flops = 0_u64;
    for i in 0..batch.b {
        for t in 0..batch.l {
            let base = &z0[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            let out = &mut data[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2];
            for ((o, &g), &h) in out.iter_mut().zip(gains[i]).zip(base) {
                *o = g * h;
            }
            flops += d2 as u64;
        }
    }
    Ok(ServeOutput {
        b: batch.b,
        l: batch.l,
        d2,
        data,
        adapter_flops: flops,
    })
}

/// Homogeneous merged serving: all requests share one low-rank adapter,
/// folded into the weight beforehand; serve-time adapter overhead is zero.
pub fn serve_lora_merged_homogeneous(
    reg: &AdapterRegistry,
    batch: &HeteroBatch,
    w0: &DenseMatrix,
) -> Result<ServeOutput> {
    reg.require_frozen()?;
    check_batch_w0(batch, w0)?;
    let first = batch.adapter_ids[0];
    if batch.adapter_ids.iter().any(|&id| id != first) {
        return Err(Error::Routing(
            "merged serving requires a homogeneous batch (one adapter id)".into(),
        ));
    }
    let lora = match reg
        .get(first)
        .ok_or_else(|| Error::Routing(format!("adapter id {} not in registry", first.0)))?
    {
        AnyAdapter::Lora(l) => l,
        other => {
            return Err(Error::Routing(format!(
                "merged low-rank kernel routed a {} adapter",
                other.kind_label()
            )))
        }
    };
    let delta = lora.delta_dense();
    let merged = DenseMatrix::from_fn(w0.rows(), w0.cols(), |i, j| {
        w0.get(i, j) + delta.get(i, j)
    });
    let data = base_product(batch, &merged)?;
    Ok(ServeOutput {
        b: batch.b,
        l: batch.l,
        d2: w0.cols(),
        data,
        adapter_flops: 0,
    })
}

/// Slow reference: every request served alone, token by token, through the
/// dense per-adapter path. Batched kernels are checked against this.
pub fn serve_sequential_oracle(
    reg: &AdapterRegistry,
    batch: &HeteroBatch,
    w0: &DenseMatrix,
) -> Result<ServeOutput> {
    reg.require_frozen()?;
    check_batch_w0(batch, w0)?;
    let d2 = w0.cols();
    let adapters = reg.route(batch)?;
    let mut data = vec![0.0; batch.b * batch.l * d2];
    for i in 0..batch.b {
        for t in 0..batch.l {
            let x = DenseVector::new(batch.token(i, t).to_vec());
            let z = dense_reference_apply(adapters[i], w0, &x)?;
            data[(i * batch.l + t) * d2..(i * batch.l + t + 1) * d2]
                .copy_from_slice(z.as_slice());
        }
    }
    Ok(ServeOutput {
        b: batch.b,
        l: batch.l,
        d2,
        data,
        adapter_flops: 0,
    })
}

/// Adapter-stage FLOPs per token for the factored rotary path: two
/// multiplies and one add per output element.
pub fn road_flops_per_token(d2: usize) -> u64 {
    3 * d2 as u64
}

/// Adapter-stage FLOPs per token for the batched low-rank path: both
/// stages counted as one multiply and one accumulate per element.
pub fn lora_flops_per_token(r: usize, d1: usize, d2: usize) -> u64 {
    2 * (r * (d1 + d2)) as u64
}

/// Adapter-stage FLOPs per token for diagonal gains.
pub fn diag_flops_per_token(d2: usize) -> u64 {
    d2 as u64
}

fn road_token_stage<T: Float>(v1: &[T], v2: &[T], base: &[T], out: &mut [T]) {
    for i in 0..base.len() / 2 {
        let (e, o) = (2 * i, 2 * i + 1);
        out[e] = v1[e] * base[e] + v2[e] * base[o];
        out[o] = v1[o] * base[o] + v2[o] * base[e];
    }
}

fn lora_token_stage<T: Float + std::ops::AddAssign>(
    b_hat: &[T],
    a_hat: &[T],
    x: &[T],
    base: &[T],
    out: &mut [T],
    scratch: &mut [T],
) {
    let r = scratch.len();
    let d2 = out.len();
    for s in scratch.iter_mut() {
        *s = T::zero();
    }
    for (i, &xi) in x.iter().enumerate() {
        let row = &b_hat[i * r..(i + 1) * r];
        for (s, &w) in scratch.iter_mut().zip(row) {
            *s += w * xi;
        }
    }
    out.copy_from_slice(base);
    for (k, &tk) in scratch.iter().enumerate() {
        let row = &a_hat[k * d2..(k + 1) * d2];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * tk;
        }
    }
}

fn gather_lora<T: Float>(
    loras: &[&crate::baselines::LoraAdapter],
    d1: usize,
    d2: usize,
    r: usize,
) -> (Vec<T>, Vec<T>) {
    let cast = |v: f64| -> T { NumCast::from(v).expect("finite cast") };
    let mut b_hat = Vec::with_capacity(loras.len() * d1 * r);
    let mut a_hat = Vec::with_capacity(loras.len() * r * d2);
    for lora in loras {
        for v in lora.b().data() {
            b_hat.push(cast(*v));
        }
        let s = lora.scaling();
        for v in lora.a().data() {
            a_hat.push(cast(*v * s));
        }
    }
    (b_hat, a_hat)
}

/// Which kernel a benchmark row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KernelKind {
    LoraBmm,
    LoraMergedHomogeneous,
    RoadElementwise,
    DiagElementwise,
}

impl KernelKind {
    pub fn label(self) -> &'static str {
        match self {
            KernelKind::LoraBmm => "lora_bmm",
            KernelKind::LoraMergedHomogeneous => "lora_merged_homogeneous",
            KernelKind::RoadElementwise => "road_elementwise",
            KernelKind::DiagElementwise => "diag_elementwise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lora_bmm" => Ok(KernelKind::LoraBmm),
            "lora_merged_homogeneous" => Ok(KernelKind::LoraMergedHomogeneous),
            "road_elementwise" => Ok(KernelKind::RoadElementwise),
            "diag_elementwise" => Ok(KernelKind::DiagElementwise),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Prefill processes all tokens in one call; decode models token-by-token
/// generation as `l` sequential single-token steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ServeMode {
    Prefill,
    Decode,
}

impl ServeMode {
    pub fn label(self) -> &'static str {
        match self {
            ServeMode::Prefill => "prefill",
            ServeMode::Decode => "decode",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "prefill" => Ok(ServeMode::Prefill),
            "decode" => Ok(ServeMode::Decode),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Bench numeric type. Measurements default to the 32-bit path; correctness
/// cross-checks run the 64-bit one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precision {
    Real32,
    Real64,
}

impl Precision {
    pub fn label(self) -> &'static str {
        match self {
            Precision::Real32 => "real32",
            Precision::Real64 => "real64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real32" | "f32" => Ok(Precision::Real32),
            "real64" | "f64" => Ok(Precision::Real64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

/// One (kernel, workload) pair to measure.
#[derive(Debug, Clone, Serialize)]
pub struct WorkloadSpec {
    pub kernel: KernelKind,
    pub b: usize,
    pub l: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub mode: ServeMode,
    pub precision: Precision,
    pub seed: u64,
}

/// Timing/throughput/FLOP record for one (kernel, workload) pair.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub kernel: KernelKind,
    pub mode: ServeMode,
    pub precision: Precision,
    pub b: usize,
    pub l: usize,
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    /// Median adapter-stage wall time across repetitions.
    pub wall_ns: u64,
    /// Adapter-stage FLOPs for the whole workload.
    pub flops: u64,
    pub tokens_per_second: f64,
}

impl BenchReport {
    /// Row in the fixed bench CSV schema.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.kernel.label(),
            self.b,
            self.l,
            self.d1,
            self.d2,
            self.r,
            self.wall_ns,
            self.flops,
            self.tokens_per_second
        )
    }
}

/// An adapter stage ready to execute repeatedly: per-request parameters
/// converted, base product in place, output buffer allocated. Preparation
/// happens outside the timed region, so external harnesses can time
/// `run_once` alone.
pub struct PreparedWorkload<T> {
    kind: KernelKind,
    mode: ServeMode,
    b: usize,
    l: usize,
    d1: usize,
    d2: usize,
    r: usize,
    x: Vec<T>,
    z0: Vec<T>,
    out: Vec<T>,
    road_v1: Vec<T>,
    road_v2: Vec<T>,
    diag_gains: Vec<T>,
    lora_b_hat: Vec<T>,
    lora_a_hat: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Float + std::ops::AddAssign> PreparedWorkload<T> {
    /// Synthetic workload from a seed: adapters, features and base product
    /// are generated directly, skipping the backbone matrix product whose
    /// values cannot affect adapter-stage timing.
    pub fn from_spec(spec: &WorkloadSpec) -> Result<Self> {
        if spec.b == 0 || spec.l == 0 || spec.d1 == 0 || !spec.d2.is_multiple_of(2) || spec.d2 == 0 {
            return Err(Error::Precondition(format!(
                "workload requires b,l,d1 >= 1 and even d2, got b={} l={} d1={} d2={}",
                spec.b, spec.l, spec.d1, spec.d2
            )));
        }
        let mut rng = SeededRng::new(spec.seed);
        let cast = |v: f64| -> T { NumCast::from(v).expect("finite cast") };
        let (b, l, d1, d2, r) = (spec.b, spec.l, spec.d1, spec.d2, spec.r);

        // Per-request adapters come off the stream first, then features.
        let mut road_v1 = Vec::new();
        let mut road_v2 = Vec::new();
        let mut diag_gains = Vec::new();
        let mut lora_b_hat = Vec::new();
        let mut lora_a_hat = Vec::new();
        match spec.kernel {
            KernelKind::RoadElementwise => {
                for _ in 0..b {
                    let road = RoadAdapter::random(crate::road::RoadVariant::Road1, d2, &mut rng)?;
                    let f = road.factorize();
                    road_v1.extend(f.v1().iter().map(|&v| cast(v)));
                    road_v2.extend(f.v2().iter().map(|&v| cast(v)));
                }
            }
            KernelKind::DiagElementwise => {
                for _ in 0..b * d2 {
                    diag_gains.push(cast(rng.uniform(0.5, 1.5)));
                }
            }
            KernelKind::LoraBmm => {
                if r == 0 {
                    return Err(Error::Precondition(
                        "low-rank workload requires r >= 1".into(),
                    ));
                }
                for _ in 0..b {
                    for _ in 0..d1 * r {
                        lora_b_hat.push(cast(rng.normal()));
                    }
                    for _ in 0..r * d2 {
                        lora_a_hat.push(cast(rng.normal()));
                    }
                }
            }
            // The merged weight is folded before serving; the stage only
            // materializes the output from the shared product.
            KernelKind::LoraMergedHomogeneous => {}
        }

        let needs_x = matches!(spec.kernel, KernelKind::LoraBmm);
        let x = if needs_x {
            (0..b * l * d1).map(|_| cast(rng.uniform(-1.0, 1.0))).collect()
        } else {
            Vec::new()
        };
        let z0 = (0..b * l * d2).map(|_| cast(rng.uniform(-1.0, 1.0))).collect();

        Ok(Self {
            kind: spec.kernel,
            mode: spec.mode,
            b,
            l,
            d1,
            d2,
            r,
            x,
            z0,
            out: vec![T::zero(); b * l * d2],
            road_v1,
            road_v2,
            diag_gains,
            lora_b_hat,
            lora_a_hat,
            scratch: vec![T::zero(); r.max(1)],
        })
    }

    /// Runs the adapter stage over the whole workload once, returning the
    /// tallied adapter FLOPs.
    pub fn run_once(&mut self) -> u64 {
        let mut flops = 0_u64;
        let steps: Vec<(usize, usize)> = match self.mode {
            // Decode: step t serves every request's token t before t+1.
            ServeMode::Decode => (0..self.l)
                .flat_map(|t| (0..self.b).map(move |i| (i, t)))
                .collect(),
            ServeMode::Prefill => (0..self.b)
                .flat_map(|i| (0..self.l).map(move |t| (i, t)))
                .collect(),
        };
        let d2 = self.d2;
        for (i, t) in steps {
            let row = (i * self.l + t) * d2;
            let base = &self.z0[row..row + d2];
            let out = &mut self.out[row..row + d2];
            match self.kind {
                KernelKind::RoadElementwise => {
                    let v1 = &self.road_v1[i * d2..(i + 1) * d2];
                    let v2 = &self.road_v2[i * d2..(i + 1) * d2];
                    road_token_stage(v1, v2, base, out);
                    flops += road_flops_per_token(d2);
                }
                KernelKind::DiagElementwise => {
                    let gains = &self.diag_gains[i * d2..(i + 1) * d2];
                    for ((o, &g), &h) in out.iter_mut().zip(gains).zip(base) {
                        *o = g * h;
                    }
                    flops += diag_flops_per_token(d2);
                }
                KernelKind::LoraBmm => {
                    let r = self.r;
                    let x = &self.x[(i * self.l + t) * self.d1..(i * self.l + t + 1) * self.d1];
                    let bh = &self.lora_b_hat[i * self.d1 * r..(i + 1) * self.d1 * r];
                    let ah = &self.lora_a_hat[i * r * d2..(i + 1) * r * d2];
                    lora_token_stage(bh, ah, x, base, out, &mut self.scratch);
                    flops += lora_flops_per_token(r, self.d1, d2);
                }
                KernelKind::LoraMergedHomogeneous => {
                    out.copy_from_slice(base);
                }
            }
        }
        std::hint::black_box(&self.out);
        flops
    }
}

/// Smallest measurable wall-clock increment, estimated once per call.
fn timer_resolution_ns() -> u64 {
    let mut min_delta = u64::MAX;
    for _ in 0..64 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        min_delta = min_delta.min((now - start).as_nanos() as u64);
    }
    min_delta.max(1)
}

fn median(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Measures one workload: median adapter-stage wall time over `repetitions`
/// runs after `warmup` discarded runs. Workload content is a pure function
/// of the workload seed, so FLOP counts reproduce exactly across runs.
pub fn run_bench(spec: &WorkloadSpec, repetitions: usize, warmup: usize) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Precondition(format!(
            "bench requires repetitions >= 3, got {repetitions}"
        )));
    }
    if warmup < 1 {
        return Err(Error::Precondition(format!(
            "bench requires warmup >= 1, got {warmup}"
        )));
    }
    match spec.precision {
        Precision::Real32 => run_bench_typed::<f32>(spec, repetitions, warmup),
        Precision::Real64 => run_bench_typed::<f64>(spec, repetitions, warmup),
    }
}

fn run_bench_typed<T: Float + std::ops::AddAssign>(
    spec: &WorkloadSpec,
    repetitions: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let mut prepared = PreparedWorkload::<T>::from_spec(spec)?;
    for _ in 0..warmup {
        prepared.run_once();
    }
    let mut flops = 0;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        flops = prepared.run_once();
        samples.push(start.elapsed().as_nanos() as u64);
    }
    let wall_ns = median(&mut samples);
    let resolution = timer_resolution_ns();
    if wall_ns < 100 * resolution {
        return Err(Error::Measurement(format!(
            "median {wall_ns} ns is under 100 timer ticks ({resolution} ns each); \
             use a larger workload (more tokens or wider layers)"
        )));
    }
    let tokens = (spec.b * spec.l) as f64;
    Ok(BenchReport {
        kernel: spec.kernel,
        mode: spec.mode,
        precision: spec.precision,
        b: spec.b,
        l: spec.l,
        d1: spec.d1,
        d2: spec.d2,
        r: spec.r,
        wall_ns,
        flops,
        tokens_per_second: tokens / (wall_ns as f64 * 1e-9),
    })
}

/// Runs a list of workloads in order.
pub fn run_bench_sweep(
    specs: &[WorkloadSpec],
    repetitions: usize,
    warmup: usize,
) -> Result<Vec<BenchReport>> {
    specs
        .iter()
        .map(|s| run_bench(s, repetitions, warmup))
        .collect()
}
