//! Desk-scale sample-quality metrics: sliced Wasserstein, unbiased RBF
//! MMD², relative covariance error, and the oracle redundancy table.

use std::fmt;
use std::str::FromStr;

use crate::data::ar1_covariance;
use crate::denoiser::{oracle_denoise_mse, GaussianOracle};
use crate::error::{Error, Result};
use crate::numeric::{covariance, Rng, Tensor};

/// Metrics the harness knows how to compute and record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricName {
    SlicedWasserstein,
    MmdRbf,
    CovarianceError,
}

impl MetricName {
    pub const ALL: [MetricName; 3] = [
        MetricName::SlicedWasserstein,
        MetricName::MmdRbf,
        MetricName::CovarianceError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::SlicedWasserstein => "sliced_wasserstein",
            MetricName::MmdRbf => "mmd_rbf",
            MetricName::CovarianceError => "covariance_error",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: MetricName,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(name: MetricName, value: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("metric value"));
        }
        Ok(Self { name, value, n_samples, seed })
    }
}

fn check_pair(a: &Tensor, b: &Tensor, min_rows: usize) -> Result<usize> {
    let (na, da) = a.dims2()?;
    let (nb, db) = b.dims2()?;
    if da != db {
        return Err(Error::Shape(format!("sample widths differ: {da} vs {db}")));
    }
    if na < min_rows || nb < min_rows {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_rows} samples per set, got {na} and {nb}"
        )));
    }
    Ok(da)
}

/// Exact 2-Wasserstein distance between two 1-D empirical distributions,
/// sorting both inputs in place. Unequal sizes are handled by matching
/// quantile functions piecewise.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        return (s / a.len() as f64).sqrt();
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut pos, mut total) = (0.0f64, 0.0f64);
    while i < a.len() && j < b.len() {
        let next = ((i + 1) as f64 / na).min((j + 1) as f64 / nb);
        total += (next - pos) * (a[i] - b[j]).powi(2);
        pos = next;
        if ((i + 1) as f64 / na) <= next {
            i += 1;
        }
        if ((j + 1) as f64 / nb) <= next {
            j += 1;
        }
    }
    total.sqrt()
}

/// Mean over `n_proj` random unit directions of the 1-D 2-Wasserstein
/// distance between the projected samples.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor, n_proj: usize, rng: &mut Rng) -> Result<f64> {
    let dim = check_pair(a, b, 2)?;
    if n_proj == 0 {
        return Err(Error::InvalidArgument("n_proj must be positive".into()));
    }
    let project = |x: &Tensor, dir: &[f64]| -> Vec<f64> {
        (0..x.rows())
            .map(|i| x.row(i).iter().zip(dir).map(|(v, d)| v * d).sum())
            .collect()
    };
    let mut total = 0.0;
    for _ in 0..n_proj {
        let dir = loop {
            let d = rng.normals(dim);
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break d.into_iter().map(|v| v / norm).collect::<Vec<_>>();
            }
        };
        total += wasserstein_1d(&mut project(a, &dir), &mut project(b, &dir));
    }
    Ok(total / n_proj as f64)
}

/// Unbiased MMD² with kernel `exp(−‖x−y‖²/(2h²))`.
pub fn mmd_rbf(a: &Tensor, b: &Tensor, bandwidth: f64) -> Result<f64> {
    check_pair(a, b, 2)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let inv = -0.5 / (bandwidth * bandwidth);
    let k = |x: &[f64], y: &[f64]| -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
        (d2 * inv).exp()
    };
    let within = |x: &Tensor| -> f64 {
        let n = x.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += k(x.row(i), x.row(j));
            }
        }
        2.0 * s / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            cross += k(a.row(i), b.row(j));
        }
    }
    cross /= (a.rows() * b.rows()) as f64;
    Ok(within(a) + within(b) - 2.0 * cross)
}

/// `‖Ĉ − Σ‖_F / ‖Σ‖_F` with `Ĉ` the population covariance of the rows.
pub fn covariance_error(samples: &Tensor, sigma_ref: &Tensor) -> Result<f64> {
    let (n, dim) = samples.dims2()?;
    let (r, c) = sigma_ref.dims2()?;
    if r != dim || c != dim {
        return Err(Error::Shape(format!(
            "reference covariance is {r}x{c}, samples have width {dim}"
        )));
    }
    if n < dim + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot estimate a {dim}-dim covariance"
        )));
    }
    let denom = sigma_ref.frobenius();
    if denom == 0.0 {
        return Err(Error::Degenerate("reference covariance is zero".into()));
    }
    Ok(covariance(samples)?.sub(sigma_ref)?.frobenius() / denom)
}

/// Per-dimension Bayes MSE of the Gaussian oracle for AR(1) data:
/// rows follow `gamma_grid`, columns follow `rho_grid`.
pub fn redundancy_curve(rho_grid: &[f64], gamma_grid: &[f64], dim: usize, b: f64) -> Result<Tensor> {
    if rho_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidArgument("empty rho or gamma grid".into()));
    }
    let oracles = rho_grid
        .iter()
        .map(|&rho| GaussianOracle::new(ar1_covariance(dim, rho)?))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Tensor::zeros(&[gamma_grid.len(), rho_grid.len()]);
    for (i, &g) in gamma_grid.iter().enumerate() {
        for (j, o) in oracles.iter().enumerate() {
            out.set2(i, j, oracle_denoise_mse(o, g, b)?);
        }
    }
    Ok(out)
}
