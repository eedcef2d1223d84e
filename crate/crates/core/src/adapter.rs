//! Uniform adapter dispatch for the trainer and the serving registry.
//!
//! Parameters are exposed as one flat vector per adapter so optimizers and
//! finite-difference probes can treat every kind the same way. Packing
//! orders: rotary `[theta.., alpha..]`, low-rank `[B row-major.., A
//! row-major..]`, cayley `[q..]`, diagonal `[gains..]`.

use crate::baselines::{CayleyBlockAdapter, DiagScaleAdapter, LoraAdapter};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, DenseVector};
use crate::road::RoadAdapter;

/// Any adapter kind the toy models and serving registry can hold.
#[derive(Debug, Clone)]
pub enum AnyAdapter {
    Road(RoadAdapter),
    Lora(LoraAdapter),
    DiagScale(DiagScaleAdapter),
    Cayley(CayleyBlockAdapter),
}

/// Backward result of one adapter application inside a model.
#[derive(Debug, Clone)]
pub struct AdapterBackward {
    /// Gradient in the flat parameter packing order.
    pub d_params: Vec<f64>,
    /// Gradient with respect to the base output `h`.
    pub d_h: DenseVector,
    /// Gradient reaching the layer input directly, bypassing `W⁰`
    /// (only the low-rank adapter has such a path).
    pub d_x_direct: Option<DenseVector>,
}

impl AnyAdapter {
    pub fn kind_label(&self) -> &'static str {
        match self {
            AnyAdapter::Road(a) => a.variant().label(),
            AnyAdapter::Lora(_) => "lora",
            AnyAdapter::DiagScale(_) => "diag_scale",
            AnyAdapter::Cayley(_) => "cayley",
        }
    }

    /// Output width the adapter acts on.
    pub fn d2(&self) -> usize {
        match self {
            AnyAdapter::Road(a) => a.d2(),
            AnyAdapter::Lora(a) => a.d2(),
            AnyAdapter::DiagScale(a) => a.d2(),
            AnyAdapter::Cayley(a) => a.d2(),
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            AnyAdapter::Road(a) => a.theta().len() + a.alpha().len(),
            AnyAdapter::Lora(a) => a.rank() * (a.d1() + a.d2()),
            AnyAdapter::DiagScale(a) => a.d2(),
            AnyAdapter::Cayley(a) => a.d2() / 2,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            AnyAdapter::Road(a) => {
                let mut p = a.theta().to_vec();
                p.extend_from_slice(a.alpha());
                p
            }
            AnyAdapter::Lora(a) => {
                let mut p = a.b().data().to_vec();
                p.extend_from_slice(a.a().data());
                p
            }
            AnyAdapter::DiagScale(a) => a.gains().to_vec(),
            AnyAdapter::Cayley(a) => a.q().to_vec(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::dimension(
                "AnyAdapter::set_params",
                format!("{}", self.param_len()),
                format!("{}", params.len()),
            ));
        }
        match self {
            AnyAdapter::Road(a) => {
                let n = a.theta().len();
                a.theta_mut().copy_from_slice(&params[..n]);
                a.alpha_mut().copy_from_slice(&params[n..]);
            }
            AnyAdapter::Lora(a) => {
                let (d1, r) = (a.d1(), a.rank());
                let (b, am) = a.matrices_mut();
                for i in 0..d1 {
                    for k in 0..r {
                        b.set(i, k, params[i * r + k]);
                    }
                }
                let d2 = am.cols();
                for k in 0..r {
                    for j in 0..d2 {
                        am.set(k, j, params[d1 * r + k * d2 + j]);
                    }
                }
            }
            AnyAdapter::DiagScale(a) => a.gains_mut().copy_from_slice(params),
            AnyAdapter::Cayley(a) => a.q_mut().copy_from_slice(params),
        }
        Ok(())
    }

    /// Forward through the adapter. `x` is the layer input, `base` the
    /// already-computed `W⁰ᵀx`; kinds that transform the output ignore `x`.
    pub fn apply(&self, x: &DenseVector, base: &DenseVector) -> Result<DenseVector> {
        match self {
            AnyAdapter::Road(a) => a.factorize().apply(base),
            AnyAdapter::Lora(a) => a.apply_with_base(x, base),
            AnyAdapter::DiagScale(a) => a.apply(base),
            AnyAdapter::Cayley(a) => a.apply(base),
        }
    }

    /// Backward of `⟨upstream, z⟩` through the adapter.
    pub fn grad(
        &self,
        x: &DenseVector,
        base: &DenseVector,
        upstream: &DenseVector,
    ) -> Result<AdapterBackward> {
        match self {
            AnyAdapter::Road(a) => {
                let g = a.grad(base, upstream)?;
                let mut d_params = g.d_theta;
                d_params.extend_from_slice(&g.d_alpha);
                Ok(AdapterBackward {
                    d_params,
                    d_h: g.d_h,
                    d_x_direct: None,
                })
            }
            AnyAdapter::Lora(a) => {
                let g = a.grad(x, upstream)?;
                let mut d_params = g.d_b.data().to_vec();
                d_params.extend_from_slice(g.d_a.data());
                Ok(AdapterBackward {
                    d_params,
                    // The base output passes through untouched.
                    d_h: upstream.clone(),
                    d_x_direct: Some(g.d_x_direct),
                })
            }
            AnyAdapter::DiagScale(a) => {
                let g = a.grad(base, upstream)?;
                Ok(AdapterBackward {
                    d_params: g.d_l,
                    d_h: g.d_h,
                    d_x_direct: None,
                })
            }
            AnyAdapter::Cayley(a) => {
                let g = a.grad(base, upstream)?;
                Ok(AdapterBackward {
                    d_params: g.d_q,
                    d_h: g.d_h,
                    d_x_direct: None,
                })
            }
        }
    }

    pub fn as_road(&self) -> Option<&RoadAdapter> {
        match self {
            AnyAdapter::Road(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_lora(&self) -> Option<&LoraAdapter> {
        match self {
            AnyAdapter::Lora(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_diag(&self) -> Option<&DiagScaleAdapter> {
        match self {
            AnyAdapter::DiagScale(a) => Some(a),
            _ => None,
        }
    }
}

impl From<RoadAdapter> for AnyAdapter {
    fn from(a: RoadAdapter) -> Self {
        AnyAdapter::Road(a)
    }
}

impl From<LoraAdapter> for AnyAdapter {
    fn from(a: LoraAdapter) -> Self {
        AnyAdapter::Lora(a)
    }
}

impl From<DiagScaleAdapter> for AnyAdapter {
    fn from(a: DiagScaleAdapter) -> Self {
        AnyAdapter::DiagScale(a)
    }
}

impl From<CayleyBlockAdapter> for AnyAdapter {
    fn from(a: CayleyBlockAdapter) -> Self {
        AnyAdapter::Cayley(a)
    }
}

/// Dense single-request oracle for one adapter: the slow, obviously-correct
/// route batched kernels are checked against.
pub fn dense_reference_apply(
    adapter: &AnyAdapter,
    w0: &DenseMatrix,
    x: &DenseVector,
) -> Result<DenseVector> {
    let base = crate::numeric::matvec(w0, x)?;
    match adapter {
        AnyAdapter::Road(a) => a.apply_dense_oracle(&base),
        AnyAdapter::Lora(a) => {
            let delta = a.delta_dense();
            let dense = DenseMatrix::from_fn(w0.rows(), w0.cols(), |i, j| {
                w0.get(i, j) + delta.get(i, j)
            });
            crate::numeric::matvec(&dense, x)
        }
        AnyAdapter::DiagScale(a) => a.apply(&base),
        AnyAdapter::Cayley(a) => a.apply(&base),
    }
}
