//! Closed-form denoiser for Gaussian data.
//!
//! With `x₀ ~ N(0, Σ)` and `x_t = a·x₀ + σ·ε` (`a = √γ·b`, `σ = √(1−γ)`),
//! the posterior mean of the scaled signal `a·x₀` is
//! `a²Σ(a²Σ + σ²I)⁻¹ x_t` and the Bayes noise estimate is
//! `ε̂ = (x_t − that)/σ`. Nothing here is learned, which makes it a
//! reference for how hard denoising is at a given noise level.

use crate::error::{Error, Result};
use crate::numeric::{gaussian, Cholesky, Rng, Tensor};

#[derive(Debug, Clone)]
pub struct GaussianOracle {
    sigma: Tensor,
    chol: Cholesky,
}

/// Output of [`gaussian_oracle_denoise`] for a `[batch, n]` input.
#[derive(Debug, Clone)]
pub struct OracleEstimate {
    /// Posterior mean of `√γ·b·x₀`.
    pub signal: Tensor,
    pub eps: Tensor,
}

impl GaussianOracle {
    /// `sigma` must be symmetric positive definite.
    pub fn new(sigma: Tensor) -> Result<Self> {
        let chol = Cholesky::factor(&sigma)?;
        Ok(Self { sigma, chol })
    }

    /// Adds `jitter·I` before factoring; for rank-deficient covariances
    /// such as replicated (upsampled) coordinates.
    pub fn with_jitter(sigma: Tensor, jitter: f64) -> Result<Self> {
        let mut s = sigma;
        let n = s.dims2()?.0;
        for i in 0..n {
            s.set2(i, i, s.get2(i, i) + jitter);
        }
        Self::new(s)
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    pub fn sigma(&self) -> &Tensor {
        &self.sigma
    }

    /// `n` draws of `x₀ ~ N(0, Σ)` as a `[n, dim]` tensor.
    pub fn sample_data(&self, rng: &mut Rng, n: usize) -> Result<Tensor> {
        let z = gaussian(rng, &[n, self.dim()])?;
        self.chol.color_rows(&z)
    }

    /// `a²Σ + σ²I`.
    fn observation_cov(&self, a2: f64, s2: f64) -> Tensor {
        let mut m = self.sigma.scale(a2);
        for i in 0..self.dim() {
            m.set2(i, i, m.get2(i, i) + s2);
        }
        m
    }
}

fn coefficients(gamma_t: f64, b: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&gamma_t) {
        return Err(Error::Range(format!("gamma {gamma_t} outside [0, 1]")));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {b}")));
    }
    Ok((gamma_t * b * b, 1.0 - gamma_t))
}

/// Bayes-optimal `(signal, ε)` estimates for a `[batch, n]` batch at a
/// single noise level.
pub fn gaussian_oracle_denoise(
    o: &GaussianOracle,
    x_t: &Tensor,
    gamma_t: f64,
    b: f64,
) -> Result<OracleEstimate> {
    let (batch, n) = x_t.dims2()?;
    if n != o.dim() {
        return Err(Error::Shape(format!("oracle has dim {}, input {n}", o.dim())));
    }
    let (a2, s2) = coefficients(gamma_t, b)?;
    if s2 <= 0.0 {
        return Err(Error::Range(
            "oracle needs gamma < 1 (noise-free input leaves ε undefined)".into(),
        ));
    }
    // Solve (a²Σ + σ²I) Y = x_tᵀ, then signal = a²Σ Y.
    let m = o.observation_cov(a2, s2);
    let y = Cholesky::factor(&m)?.solve(&x_t.transpose()?)?;
    let signal = o.sigma.scale(a2).matmul(&y)?.transpose()?;
    let s = s2.sqrt();
    let eps = x_t.zip_with(&signal, |x, sig| (x - sig) / s)?;
    debug_assert_eq!(eps.rows(), batch);
    Ok(OracleEstimate {
        signal: signal.check_finite("gaussian_oracle_denoise")?,
        eps: eps.check_finite("gaussian_oracle_denoise")?,
    })
}

/// Per-dimension Bayes MSE of recovering `x₀` from `x_t`:
/// `(1/n)·tr(σ²Σ(a²Σ + σ²I)⁻¹)`.
pub fn oracle_denoise_mse(o: &GaussianOracle, gamma_t: f64, b: f64) -> Result<f64> {
    let (a2, s2) = coefficients(gamma_t, b)?;
    let n = o.dim() as f64;
    if s2 == 0.0 {
        return Ok(0.0);
    }
    let m = o.observation_cov(a2, s2);
    let x = Cholesky::factor(&m)?.solve(&o.sigma)?;
    let trace: f64 = (0..o.dim()).map(|i| x.get2(i, i)).sum();
    Ok(s2 * trace / n)
}
