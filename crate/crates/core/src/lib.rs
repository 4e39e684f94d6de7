//! Single-head FlashAttention kernels on a countable RISC-V-Vector-style
//! execution model.
//!
//! * [`engine`]: register file, instruction semantics and counters.
//! * [`exp_approx`]: bit-manipulation exponential for non-positive inputs.
//! * [`oracles`]: scalar reference attention (safe, lazy, online, blocked).
//! * [`kernel`]: vectorized kernels built only from engine instructions.
//! * [`harness`]: matrix files, seeded generation, runs, sweeps and reports
//!   behind the `vfa` command-line tool.

pub mod engine;
pub mod error;
pub mod exp_approx;
pub mod harness;
pub mod kernel;
pub mod matrix;
pub mod oracles;

pub use engine::{ActiveLength, EngineConfig, ExecStats, MaskReg, VReg, VectorEngine, VectorReg};
pub use error::{Error, Result};
pub use exp_approx::{exp_approx_scalar, quantize, vexp, QuantSpec};
pub use kernel::{flash_vec, flash_vec_multiquery, flash_vec_tiled, ExpMode, KernelConfig, KernelRun};
pub use matrix::Matrix;
pub use oracles::{
    attention_lazy, attention_safe, flash_blocked, flash_scalar, scalar_flop_count, AttentionProblem, Real,
    RunningState, ScalarOpCount,
};
