//! Dynamic data-mixture scheduling for multi-task training.
//!
//! The core loop samples minibatches from several task datasets according to
//! mixture proportions `λ` on the probability simplex. Every `T` iterations
//! the model is scored on a small per-task reference set, and `λ` is pushed
//! toward tasks that improved least via a multiplicative-weights update.
//!
//! Besides the scheduler itself the crate ships three testbeds that exercise
//! it end to end:
//!
//! - [`synthetic`]: an analytic multi-task score dynamics with cross-task
//!   interference, plus a fixed-mixture landscape sweep.
//! - [`testbed`]: a toy image-restoration suite (procedural scenes,
//!   degradations, a shared linear filter, PSNR/SSIM).
//! - [`moe`]: a router-gated mixture of attention experts with analytic
//!   gradients and a gradient checker.
//!
//! All randomness flows through explicit `u64` seeds; identical inputs give
//! bit-identical outputs.

mod error;
pub mod gradcheck;
pub mod mixture;
pub mod moe;
pub mod rng;
pub mod sampler;
pub mod scheduler;
pub mod synthetic;
pub mod testbed;

pub use error::{Error, Result};
pub use mixture::{des_update, mixture_distribution, DesConfig, MixtureProportions, PerformanceDelta};
pub use sampler::{compose_batch, split_reference, BatchMode, BatchPlan, TaskDataset};
pub use scheduler::{
    compare_strategies, run_des, run_fixed_mixture, run_strategy, Checkpoint, ScheduleConfig, ScheduleTrace,
    ScoreVector, Strategy, Trainer,
};
