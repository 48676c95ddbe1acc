//! Noise-schedule laboratory for continuous-time diffusion models.
//!
//! The crate provides parameterized `γ(t)` schedules and their logSNR, the
//! compound "schedule + input scale + variance normalization" forward
//! process, a small time-conditioned MLP noise predictor with hand-written
//! backprop, a closed-form Gaussian oracle denoiser, LAMB/Adam training,
//! DDIM/DDPM sampling with classifier-free guidance, desk-scale metrics, and
//! a sweep harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod metrics;
pub mod numeric;
pub mod output;
pub mod sampler;
pub mod schedule;
pub mod sweep;
pub mod training;

pub use error::{Error, Result};
