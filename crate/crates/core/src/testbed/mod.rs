//! A small multi-task restoration problem: procedural grayscale scenes,
//! degradation operators, one shared linear filter trained with L1, and
//! PSNR/SSIM metrics.

mod degrade;
mod filter;
mod image;
mod metrics;
mod pgm;
mod suite;

pub use degrade::{apply_degradation, DegradationOp, Interpolation};
pub use filter::{filter_gradient_check, loss_and_gradient, train_step_filter, FilterGradCheck, FilterModel};
pub use image::{generate_scene, Image, MIN_SCENE_SIDE};
pub use metrics::{psnr, ssim, PSNR_SENTINEL_DB, SSIM_C1, SSIM_C2};
pub use pgm::{read_pgm, write_pgm};
pub use suite::{build_restoration_suite, RestorationTrainer, Scenario, TaskSpec};
