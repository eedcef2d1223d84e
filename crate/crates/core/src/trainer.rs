//! Desk-scale optimization harness: toy models with frozen weights and
//! trainable adapters, a first-order optimizer, the hidden-rotation
//! recovery experiment and a gradient-check suite.
//!
//! Pretrained weights are never touched by training; only adapter
//! parameters move. Everything is seed-deterministic and single-threaded.

use serde::Serialize;

use crate::adapter::AnyAdapter;
use crate::analysis::SubspaceMask;
use crate::baselines::DiagScaleAdapter;
use crate::error::{Error, Result};
use crate::numeric::{finite_diff_grad, matvec, DenseMatrix, DenseVector, SeededRng};
use crate::road::{RoadAdapter, RoadVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    Relu,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::None => z,
            Nonlinearity::Relu => z.max(0.0),
            Nonlinearity::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Nonlinearity::None => 1.0,
            Nonlinearity::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Regression,
    /// Two-class logistic loss on a scalar logit; targets are ±1.
    Logistic,
}

/// One frozen linear layer with an optional trainable adapter on its output.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w0: DenseMatrix,
    pub adapter: Option<AnyAdapter>,
    pub nonlinearity: Nonlinearity,
    /// Restricts updates of a rotary adapter to the masked blocks.
    pub grad_mask: Option<SubspaceMask>,
}

impl Layer {
    pub fn frozen(w0: DenseMatrix) -> Self {
        Self {
            w0,
            adapter: None,
            nonlinearity: Nonlinearity::None,
            grad_mask: None,
        }
    }

    pub fn adapted(w0: DenseMatrix, adapter: AnyAdapter) -> Self {
        Self {
            w0,
            adapter: Some(adapter),
            nonlinearity: Nonlinearity::None,
            grad_mask: None,
        }
    }

    pub fn with_nonlinearity(mut self, nl: Nonlinearity) -> Self {
        self.nonlinearity = nl;
        self
    }

    pub fn with_grad_mask(mut self, mask: SubspaceMask) -> Self {
        self.grad_mask = Some(mask);
        self
    }
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Per-layer caches of one forward pass.
struct ForwardTrace {
    /// Layer inputs: `a[0]` is the sample, `a[l+1]` the activation of layer `l`.
    activations: Vec<DenseVector>,
    /// Base products `W⁰ᵀa` per layer.
    bases: Vec<DenseVector>,
    /// Adapter outputs (pre-nonlinearity) per layer.
    pre_activations: Vec<DenseVector>,
}

impl ToyModel {
    pub fn single(layer: Layer, head: Head) -> Self {
        Self {
            layers: vec![layer],
            head,
        }
    }

    pub fn forward(&self, x: &DenseVector) -> Result<DenseVector> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.activations.pop().expect("nonempty"))
    }

    fn forward_trace(&self, x: &DenseVector) -> Result<ForwardTrace> {
        let mut activations = vec![x.clone()];
        let mut bases = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().expect("nonempty");
            let base = matvec(&layer.w0, input)?;
            let z = match &layer.adapter {
                Some(adapter) => adapter.apply(input, &base)?,
                None => base.clone(),
            };
            let a = DenseVector::new(
                z.as_slice()
                    .iter()
                    .map(|&v| layer.nonlinearity.apply(v))
                    .collect(),
            );
            bases.push(base);
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            activations,
            bases,
            pre_activations,
        })
    }

    /// Per-sample loss and its gradient at the final activation.
    fn head_loss_grad(
        &self,
        out: &DenseVector,
        target: &DenseVector,
    ) -> Result<(f64, DenseVector)> {
        match self.head {
            Head::Regression => {
                if out.len() != target.len() {
                    return Err(Error::dimension(
                        "ToyModel::loss",
                        format!("target of length {}", out.len()),
                        format!("{}", target.len()),
                    ));
                }
                let d = out.len() as f64;
                let mut grad = vec![0.0; out.len()];
                let mut loss = 0.0;
                for (k, g) in grad.iter_mut().enumerate() {
                    let diff = out.get(k) - target.get(k);
                    loss += diff * diff;
                    *g = 2.0 * diff / d;
                }
                Ok((loss / d, DenseVector::new(grad)))
            }
            Head::Logistic => {
                if out.len() != 1 || target.len() != 1 {
                    return Err(Error::dimension(
                        "ToyModel::loss",
                        "scalar logit and ±1 target".to_string(),
                        format!("{}/{}", out.len(), target.len()),
                    ));
                }
                let (z, y) = (out.get(0), target.get(0));
                let t = -y * z;
                // ln(1 + exp(t)) without overflow.
                let loss = t.max(0.0) + (-t.abs()).exp().ln_1p();
                let grad = -y / (1.0 + (y * z).exp());
                Ok((loss, DenseVector::new(vec![grad])))
            }
        }
    }

    /// Mean loss over a dataset.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in data.iter() {
            let trace = self.forward_trace(x)?;
            let out = trace.activations.last().expect("nonempty");
            total += self.head_loss_grad(out, y)?.0;
        }
        Ok(total / data.len() as f64)
    }

    /// One sample's loss; adapter gradients are accumulated into `grads`.
    fn backward(
        &self,
        x: &DenseVector,
        target: &DenseVector,
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<f64> {
        let trace = self.forward_trace(x)?;
        let out = trace.activations.last().expect("nonempty");
        let (loss, mut d_act) = self.head_loss_grad(out, target)?;

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &trace.pre_activations[l];
            let dz = DenseVector::new(
                d_act
                    .as_slice()
                    .iter()
                    .zip(z.as_slice())
                    .map(|(da, &zv)| da * layer.nonlinearity.derivative(zv))
                    .collect(),
            );
            let input = &trace.activations[l];
            match &layer.adapter {
                Some(adapter) => {
                    let bw = adapter.grad(input, &trace.bases[l], &dz)?;
                    if let Some(acc) = grads[l].as_mut() {
                        for (a, g) in acc.iter_mut().zip(&bw.d_params) {
                            *a += g;
                        }
                    }
                    let mut d_prev = layer.w0.mul_vec(&bw.d_h)?;
                    if let Some(direct) = bw.d_x_direct {
                        for (p, d) in d_prev.as_mut_slice().iter_mut().zip(direct.as_slice()) {
                            *p += d;
                        }
                    }
                    d_act = d_prev;
                }
                None => {
                    d_act = layer.w0.mul_vec(&dz)?;
                }
            }
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<DenseVector>,
    pub targets: Vec<DenseVector>,
}

impl Dataset {
    pub fn new(inputs: Vec<DenseVector>, targets: Vec<DenseVector>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Precondition(format!(
                "dataset requires matching nonempty inputs/targets, got {}/{}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (&DenseVector, &DenseVector)> {
        self.inputs.iter().zip(self.targets.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// Decoupled-weight-decay form with decay fixed at zero.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Stop once the epoch loss drops below this (0 disables).
    pub early_stop_loss: f64,
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr,
            epochs,
            batch_size,
            seed,
            optimizer: OptimizerKind::adam(),
            early_stop_loss: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Precondition(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Precondition("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch_losses.len()
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Trains the model's adapter parameters on `data`, leaving every `W⁰`
/// untouched. The trace is deterministic given the config seed.
pub fn train(model: &mut ToyModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let n_layers = model.layers.len();
    let mut adam: Vec<Option<AdamState>> = model
        .layers
        .iter()
        .map(|l| {
            l.adapter.as_ref().map(|a| AdamState {
                m: vec![0.0; a.param_len()],
                v: vec![0.0; a.param_len()],
                t: 0,
            })
        })
        .collect();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Option<Vec<f64>>> = model
                .layers
                .iter()
                .map(|l| l.adapter.as_ref().map(|a| vec![0.0; a.param_len()]))
                .collect();
            let mut batch_loss = 0.0;
            for &idx in chunk {
                batch_loss += model.backward(&data.inputs[idx], &data.targets[idx], &mut grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            epoch_loss += batch_loss / data.len() as f64;

            for l in 0..n_layers {
                let Some(grad) = grads[l].as_mut() else {
                    continue;
                };
                for g in grad.iter_mut() {
                    *g *= scale;
                }
                mask_rotary_grad(&model.layers[l], grad);
                let adapter = model.layers[l].adapter.as_mut().expect("has grad");
                let mut params = adapter.params();
                match cfg.optimizer {
                    OptimizerKind::Sgd => {
                        for (p, g) in params.iter_mut().zip(grad.iter()) {
                            *p -= cfg.lr * g;
                        }
                    }
                    OptimizerKind::Adam { beta1, beta2, eps } => {
                        let state = adam[l].as_mut().expect("has state");
                        state.t += 1;
                        let bc1 = 1.0 - beta1.powi(state.t as i32);
                        let bc2 = 1.0 - beta2.powi(state.t as i32);
                        for k in 0..params.len() {
                            state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * grad[k];
                            state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                            let m_hat = state.m[k] / bc1;
                            let v_hat = state.v[k] / bc2;
                            params[k] -= cfg.lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                }
                adapter.set_params(&params)?;
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        epoch_losses.push(epoch_loss);
        if cfg.early_stop_loss > 0.0 && epoch_loss < cfg.early_stop_loss {
            break;
        }
    }
    Ok(TrainTrace { epoch_losses })
}

/// Zeroes rotary-parameter gradients outside the layer's block mask.
fn mask_rotary_grad(layer: &Layer, grad: &mut [f64]) {
    let (Some(mask), Some(AnyAdapter::Road(road))) = (&layer.grad_mask, &layer.adapter) else {
        return;
    };
    let per_block = road.variant().params_per_block();
    let theta_len = road.theta().len();
    for block in 0..road.num_blocks() {
        if mask.contains(block) {
            continue;
        }
        for k in block * per_block..(block + 1) * per_block {
            grad[k] = 0.0;
            grad[theta_len + k] = 0.0;
        }
    }
}

/// A hidden-rotation regression task: targets are a frozen layer's outputs
/// rotated by an undisclosed unit-scale block rotation.
#[derive(Debug, Clone)]
pub struct RecoveryTask {
    pub w0: DenseMatrix,
    pub data: Dataset,
    pub theta_star: Vec<f64>,
}

/// Builds the recovery task. Hidden angles are drawn from (−π/4, π/4) so
/// recovered angles compare without wrap-around ambiguity; targets come
/// from the dense reference path, not the factored kernel under test.
pub fn make_recovery_task(d2: usize, samples: usize, seed: u64) -> Result<RecoveryTask> {
    if d2 == 0 || !d2.is_multiple_of(2) || d2 > 256 {
        return Err(Error::Precondition(format!(
            "recovery task requires even d2 in 2..=256, got {d2}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let scale = 1.0 / (d2 as f64).sqrt();
    let w0 = DenseMatrix::from_fn(d2, d2, |_, _| rng.uniform(-1.0, 1.0) * scale);
    let theta_star: Vec<f64> = (0..d2 / 2)
        .map(|_| rng.uniform(-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4))
        .collect();
    let hidden = RoadAdapter::with_params(
        RoadVariant::Road1,
        d2,
        theta_star.clone(),
        vec![1.0; d2 / 2],
    )?;

    let mut inputs = Vec::with_capacity(samples);
    let mut targets = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = DenseVector::new((0..d2).map(|_| rng.normal()).collect());
        let h = matvec(&w0, &x)?;
        targets.push(hidden.apply_dense_oracle(&h)?);
        inputs.push(x);
    }
    Ok(RecoveryTask {
        w0,
        data: Dataset::new(inputs, targets)?,
        theta_star,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub final_loss: f64,
    /// Wrapped |θ̂ − θ*| per block (worst position for multi-θ variants).
    pub angle_errors: Vec<f64>,
    pub epochs_run: usize,
    pub trace: TrainTrace,
}

fn wrap_angle(d: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (d + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Trains a fresh rotary adapter against a hidden rotation and reports the
/// final loss and per-block angle errors.
pub fn rotation_recovery_experiment(
    d2: usize,
    variant: RoadVariant,
    seed: u64,
) -> Result<RecoveryReport> {
    let task = make_recovery_task(d2, 2000, seed)?;
    recover_rotation(&task, variant, seed)
}

/// Same experiment on a pre-built task, so baselines and oracles can share
/// the exact dataset.
pub fn recover_rotation(
    task: &RecoveryTask,
    variant: RoadVariant,
    seed: u64,
) -> Result<RecoveryReport> {
    let d2 = task.w0.cols();
    let adapter = RoadAdapter::new(variant, d2)?;
    let mut model = ToyModel::single(
        Layer::adapted(task.w0.clone(), adapter.into()),
        Head::Regression,
    );
    let mut cfg = TrainConfig::new(0.02, 500, 125, seed ^ 0x5eed);
    cfg.early_stop_loss = 1e-10;
    let trace = train(&mut model, &task.data, &cfg)?;

    let trained = model.layers[0]
        .adapter
        .as_ref()
        .and_then(AnyAdapter::as_road)
        .expect("rotary adapter");
    let per_block = variant.params_per_block();
    let angle_errors = (0..d2 / 2)
        .map(|b| {
            (0..per_block)
                .map(|k| wrap_angle(trained.theta()[b * per_block + k] - task.theta_star[b]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(RecoveryReport {
        final_loss: model.loss(&task.data)?,
        angle_errors,
        epochs_run: trace.epochs_run(),
        trace,
    })
}

/// Trains a diagonal-gain adapter on the same task; the magnitude-only
/// baseline for the recovery comparison. Returns the final loss.
pub fn recover_with_diag(task: &RecoveryTask, seed: u64) -> Result<f64> {
    let d2 = task.w0.cols();
    let mut model = ToyModel::single(
        Layer::adapted(task.w0.clone(), DiagScaleAdapter::new(d2).into()),
        Head::Regression,
    );
    let cfg = TrainConfig::new(0.02, 500, 125, seed ^ 0xd1a6);
    train(&mut model, &task.data, &cfg)?;
    model.loss(&task.data)
}

/// Closed-form floor for any diagonal fit of the recovery task: per output
/// coordinate the least-squares gain is `Σ h·t / Σ h²`, leaving residual
/// `Σ t² − (Σ h·t)² / Σ h²`. Returned with the trainer's per-element MSE
/// normalization.
pub fn best_diagonal_floor(task: &RecoveryTask) -> Result<f64> {
    let d2 = task.w0.cols();
    let n = task.data.len();
    let mut sum_hh = vec![0.0; d2];
    let mut sum_ht = vec![0.0; d2];
    let mut sum_tt = vec![0.0; d2];
    for (x, t) in task.data.iter() {
        let h = matvec(&task.w0, x)?;
        for j in 0..d2 {
            sum_hh[j] += h.get(j) * h.get(j);
            sum_ht[j] += h.get(j) * t.get(j);
            sum_tt[j] += t.get(j) * t.get(j);
        }
    }
    let residual: f64 = (0..d2)
        .map(|j| sum_tt[j] - sum_ht[j] * sum_ht[j] / sum_hh[j])
        .sum();
    Ok(residual / (n as f64 * d2 as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub kind: String,
    pub d2: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub cases_per_entry: usize,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Threshold above which a gradient-check entry is marked failing.
pub const GRADCHECK_FAIL_THRESHOLD: f64 = 1e-4;

/// Compares analytic adapter gradients against central finite differences
/// (step 1e-5, real64) through a full model loss — smooth nonlinearity,
/// regression head — for the given rotary variants and every baseline
/// adapter. Entries exceeding the threshold are reported as failing, not
/// raised.
pub fn gradient_check_suite(
    variants: &[RoadVariant],
    sizes: &[usize],
    seed: u64,
    cases: usize,
) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(seed);
    let mut entries = Vec::new();

    for &d2 in sizes {
        if d2 == 0 || !d2.is_multiple_of(2) {
            return Err(Error::Precondition(format!(
                "gradient check sizes must be even, got {d2}"
            )));
        }
        type MakeAdapter = Box<dyn Fn(&mut SeededRng) -> Result<AnyAdapter>>;
        let mut kinds: Vec<(String, MakeAdapter)> = Vec::new();
        for &variant in variants {
            kinds.push((
                variant.label().to_string(),
                Box::new(move |r| Ok(RoadAdapter::random(variant, d2, r)?.into())),
            ));
        }
        kinds.push((
            "lora".into(),
            Box::new(move |r| {
                Ok(crate::baselines::LoraAdapter::random(d2, d2, 2, 1.0, r)?.into())
            }),
        ));
        kinds.push((
            "diag_scale".into(),
            Box::new(move |r| {
                let gains = (0..d2).map(|_| r.uniform(0.5, 1.5)).collect();
                Ok(DiagScaleAdapter::with_gains(gains).into())
            }),
        ));
        kinds.push((
            "cayley".into(),
            Box::new(move |r| Ok(crate::baselines::CayleyBlockAdapter::random(d2, r)?.into())),
        ));

        for (kind, make) in kinds {
            let mut worst = 0.0_f64;
            for _ in 0..cases {
                let adapter = make(&mut rng)?;
                worst = worst.max(gradcheck_one(adapter, d2, &mut rng)?);
            }
            entries.push(GradCheckEntry {
                kind,
                d2,
                max_rel_err: worst,
                pass: worst <= GRADCHECK_FAIL_THRESHOLD,
            });
        }
    }
    Ok(GradCheckReport {
        entries,
        cases_per_entry: cases,
    })
}

fn gradcheck_one(adapter: AnyAdapter, d2: usize, rng: &mut SeededRng) -> Result<f64> {
    let scale = 1.0 / (d2 as f64).sqrt();
    let w0 = DenseMatrix::from_fn(d2, d2, |_, _| rng.uniform(-1.0, 1.0) * scale);
    let samples = 4;
    let inputs: Vec<DenseVector> = (0..samples)
        .map(|_| DenseVector::new((0..d2).map(|_| rng.normal()).collect()))
        .collect();
    let targets: Vec<DenseVector> = (0..samples)
        .map(|_| DenseVector::new((0..d2).map(|_| rng.normal()).collect()))
        .collect();
    let data = Dataset::new(inputs, targets)?;

    let model = ToyModel::single(
        Layer::adapted(w0, adapter).with_nonlinearity(Nonlinearity::Tanh),
        Head::Regression,
    );

    let param_len = model.layers[0].adapter.as_ref().unwrap().param_len();
    let mut grads: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; param_len])];
    for (x, y) in data.iter() {
        model.backward(x, y, &mut grads)?;
    }
    let analytic: Vec<f64> = grads[0]
        .take()
        .unwrap()
        .into_iter()
        .map(|g| g / samples as f64)
        .collect();

    let params = DenseVector::new(model.layers[0].adapter.as_ref().unwrap().params());
    let mut probe = model.clone();
    let fd = finite_diff_grad(
        |p: &DenseVector| {
            probe.layers[0]
                .adapter
                .as_mut()
                .unwrap()
                .set_params(p.as_slice())
                .expect("matching length");
            probe.loss(&data).expect("finite loss")
        },
        &params,
        1e-5,
    )?;

    let norm = fd.as_slice().iter().map(|v| v.abs()).fold(1e-12, f64::max);
    Ok(analytic
        .iter()
        .zip(fd.as_slice())
        .map(|(a, f)| (a - f).abs() / norm)
        .fold(0.0, f64::max))
}
