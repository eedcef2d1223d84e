//! Shared fixtures for the kernel microbenchmarks.

use road_core::serving::{KernelKind, Precision, ServeMode, WorkloadSpec};

/// A decode-mode single-layer workload at the default measurement shape.
pub fn decode_workload(kernel: KernelKind, b: usize, l: usize, d: usize, r: usize) -> WorkloadSpec {
    WorkloadSpec {
        kernel,
        b,
        l,
        d1: d,
        d2: d,
        r,
        mode: ServeMode::Decode,
        precision: Precision::Real32,
        seed: 0xbeac4,
    }
}
