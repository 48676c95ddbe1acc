//! Noise predictors: a small MLP with hand-written backprop and a
//! closed-form oracle for Gaussian data.

mod embedding;
mod mlp;
mod oracle;
mod params;

pub use embedding::time_embedding;
pub use mlp::{mlp_backward, mlp_forward, mlp_forward_cached, mse_loss, ForwardCache};
pub use oracle::{gaussian_oracle_denoise, oracle_denoise_mse, GaussianOracle, OracleEstimate};
pub use params::{Dense, DenoiserParams, MlpArch};
