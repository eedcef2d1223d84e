//! 2D rotary adapters for frozen linear layers: construction, the factored
//! element-wise forward path, weight merging, analytic gradients,
//! heterogeneous multi-adapter batched serving, baseline adapters,
//! representation-change metrics and subspace composition — with the
//! invariant, oracle and timing suites that verify them.

pub mod adapter;
pub mod analysis;
pub mod baselines;
pub mod error;
pub mod io;
pub mod numeric;
pub mod road;
pub mod serving;
pub mod trainer;
pub mod verify;

pub use adapter::AnyAdapter;
pub use error::{Error, Result};
pub use numeric::{finite_diff_grad, matvec, DenseMatrix, DenseVector, SeededRng};
pub use road::{apply_factored, param_count, FactoredRotation, RoadAdapter, RoadVariant};
