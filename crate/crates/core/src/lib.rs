//! Dense double-precision GEMM built on Goto's five-loop algorithm.
//!
//! Three strategies share one microkernel template:
//!
//! * [`Strategy::Conventional`] packs every block of A and panel of B up
//!   front, then runs the packed microkernel.
//! * [`Strategy::Sup`] never packs and computes straight from the caller's
//!   strided storage.
//! * [`Strategy::Fip`] packs lazily: the first microkernel call to consume
//!   an unpacked micropanel also stores it to the packed buffer, and later
//!   calls read the packed copy. [`params::decide_packing`] turns packing
//!   off per operand when it cannot pay off, so the other two strategies
//!   are the extremes of this one.
//!
//! [`parallel::parallel_gemm_fip`] adds cooperative packing of A across
//! worker threads.

pub mod driver;
pub mod error;
pub mod instrument;
pub mod kernel;
pub mod matrix;
pub mod pack;
pub mod parallel;
pub mod params;

pub use driver::{fip_variant_schedule, gemm, sup_gemm_path, FipStep, Strategy};
pub use error::{Error, Result};
pub use instrument::AccessCounters;
pub use kernel::{Microkernel, MicrokernelVariant, OperandSource, OperandState, PackDest};
pub use matrix::{
    fill_deterministic, make_view, reference_gemm, Layout, Matrix, MatrixView, MatrixViewMut, StrideLayout,
};
pub use pack::{PackedBlockA, PackedPanelB};
pub use parallel::{parallel_gemm, parallel_gemm_fip, parallel_gemm_fip_instrumented, threads_from_env, ThreadPlan, THREADS_ENV};
pub use params::{decide_packing, default_params, BlockingParams, PackingDecision, Profile};
