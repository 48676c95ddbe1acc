//! Toy datasets with controllable redundancy.
//!
//! Redundancy comes from two knobs: the AR(1) correlation `ρ` between
//! neighbouring coordinates, and nearest-neighbour upsampling, which
//! replicates each coordinate without adding information.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{Cholesky, Rng, Tensor};

/// Neighbour correlation of the base field behind [`DatasetKind::ToyImage`].
pub const TOY_IMAGE_RHO: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Zero-mean Gaussian with `Σ_ij = ρ^|i−j|`, optionally upsampled by
    /// repeating each coordinate `upsample` times.
    GaussianAr1 { dim: usize, rho: f64, upsample: usize },
    /// `modes` isotropic Gaussians evenly spaced on a circle.
    Mixture2d { modes: usize, radius: f64, std: f64 },
    /// Uniform over the dark squares of a 4×4 board on `[-2, 2]²`.
    Checkerboard,
    /// `base_res × base_res` Gaussian field with separable AR(1)
    /// correlation [`TOY_IMAGE_RHO`], upsampled by pixel replication.
    ToyImage { base_res: usize, upsample: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n, dim]`, standardized per coordinate.
    pub data: Tensor,
    pub labels: Option<Vec<usize>>,
    pub classes: Option<usize>,
}

/// `Σ_ij = ρ^|i−j|`.
pub fn ar1_covariance(dim: usize, rho: f64) -> Result<Tensor> {
    check_rho(rho)?;
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    let mut s = Tensor::zeros(&[dim, dim]);
    for i in 0..dim {
        for j in 0..dim {
            s.set2(i, j, rho.powi(i.abs_diff(j) as i32));
        }
    }
    Ok(s)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

fn check_upsample(f: usize) -> Result<()> {
    if ![1, 2, 4].contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "upsample factor must be 1, 2 or 4, got {f}"
        )));
    }
    Ok(())
}

impl DatasetKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DatasetKind::GaussianAr1 { dim, rho, upsample } => {
                check_rho(rho)?;
                check_upsample(upsample)?;
                if dim == 0 {
                    return Err(Error::InvalidArgument("dim must be positive".into()));
                }
            }
            DatasetKind::Mixture2d { modes, radius, std } => {
                if modes == 0 || !(radius >= 0.0) || !(std > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "mixture needs modes >= 1, radius >= 0, std > 0 (got {modes}, {radius}, {std})"
                    )));
                }
            }
            DatasetKind::Checkerboard => {}
            DatasetKind::ToyImage { base_res, upsample } => {
                check_upsample(upsample)?;
                if base_res == 0 {
                    return Err(Error::InvalidArgument("base_res must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            DatasetKind::GaussianAr1 { dim, upsample, .. } => dim * upsample,
            DatasetKind::Mixture2d { .. } | DatasetKind::Checkerboard => 2,
            DatasetKind::ToyImage { base_res, upsample } => (base_res * upsample).pow(2),
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match *self {
            DatasetKind::Mixture2d { modes, .. } => Some(modes),
            _ => None,
        }
    }

    /// Side length for image datasets.
    pub fn image_side(&self) -> Option<usize> {
        match *self {
            DatasetKind::ToyImage { base_res, upsample } => Some(base_res * upsample),
            _ => None,
        }
    }

    /// Exact covariance of the standardized data for the Gaussian kinds.
    pub fn gaussian_covariance(&self) -> Result<Option<Tensor>> {
        self.validate()?;
        let (base, map) = match *self {
            DatasetKind::GaussianAr1 { dim, rho, upsample } => {
                (ar1_covariance(dim, rho)?, replicate_1d(dim, upsample))
            }
            DatasetKind::ToyImage { base_res, upsample } => {
                (toy_image_covariance(base_res)?, replicate_2d(base_res, upsample))
            }
            _ => return Ok(None),
        };
        let d = map.len();
        let mut s = Tensor::zeros(&[d, d]);
        for (i, &bi) in map.iter().enumerate() {
            for (j, &bj) in map.iter().enumerate() {
                s.set2(i, j, base.get2(bi, bj));
            }
        }
        Ok(Some(s))
    }

    /// Raw draws before standardization, with labels for mixtures.
    pub fn sample_raw(&self, rng: &mut Rng, n: usize) -> Result<(Tensor, Option<Vec<usize>>)> {
        self.validate()?;
        match *self {
            DatasetKind::GaussianAr1 { dim, rho, upsample } => {
                let chol = Cholesky::factor(&ar1_covariance(dim, rho)?)?;
                let z = Tensor::new(vec![n, dim], rng.normals(n * dim))?;
                let base = chol.color_rows(&z)?;
                Ok((gather_columns(&base, &replicate_1d(dim, upsample)), None))
            }
            DatasetKind::ToyImage { base_res, upsample } => {
                let chol = Cholesky::factor(&toy_image_covariance(base_res)?)?;
                let d = base_res * base_res;
                let z = Tensor::new(vec![n, d], rng.normals(n * d))?;
                let base = chol.color_rows(&z)?;
                Ok((gather_columns(&base, &replicate_2d(base_res, upsample)), None))
            }
            DatasetKind::Mixture2d { modes, radius, std } => {
                let mut x = Tensor::zeros(&[n, 2]);
                let mut labels = Vec::with_capacity(n);
                for i in 0..n {
                    let k = rng.below(modes);
                    let angle = 2.0 * PI * k as f64 / modes as f64;
                    let row = x.row_mut(i);
                    row[0] = radius * angle.cos() + std * rng.normal();
                    row[1] = radius * angle.sin() + std * rng.normal();
                    labels.push(k);
                }
                Ok((x, Some(labels)))
            }
            DatasetKind::Checkerboard => {
                let mut x = Tensor::zeros(&[n, 2]);
                for i in 0..n {
                    let u = 4.0 * rng.uniform() - 2.0;
                    // Row cell with the same parity as the column cell.
                    let row_cell = 2 * rng.below(2) + ((u.floor() as i64).rem_euclid(2) as usize);
                    let v = row_cell as f64 + rng.uniform() - 2.0;
                    x.row_mut(i).copy_from_slice(&[u, v]);
                }
                Ok((x, None))
            }
        }
    }
}

/// Index of the base coordinate behind each upsampled coordinate.
fn replicate_1d(dim: usize, f: usize) -> Vec<usize> {
    (0..dim * f).map(|i| i / f).collect()
}

fn replicate_2d(res: usize, f: usize) -> Vec<usize> {
    let side = res * f;
    (0..side * side)
        .map(|p| {
            let (r, c) = (p / side, p % side);
            (r / f) * res + c / f
        })
        .collect()
}

fn gather_columns(x: &Tensor, map: &[usize]) -> Tensor {
    let n = x.rows();
    let mut out = Tensor::zeros(&[n, map.len()]);
    for i in 0..n {
        let src = x.row(i);
        for (dst, &j) in out.row_mut(i).iter_mut().zip(map) {
            *dst = src[j];
        }
    }
    out
}

fn toy_image_covariance(res: usize) -> Result<Tensor> {
    let t = ar1_covariance(res, TOY_IMAGE_RHO)?;
    let d = res * res;
    let mut s = Tensor::zeros(&[d, d]);
    for p in 0..d {
        for q in 0..d {
            s.set2(p, q, t.get2(p / res, q / res) * t.get2(p % res, q % res));
        }
    }
    Ok(s)
}

/// Shifts and scales each column to zero mean, unit population variance.
/// Constant columns are only centered.
pub fn standardize(x: &mut Tensor) -> Result<()> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::InvalidArgument("cannot standardize zero rows".into()));
    }
    for j in 0..d {
        let mean = (0..n).map(|i| x.get2(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get2(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        for i in 0..n {
            x.set2(i, j, (x.get2(i, j) - mean) * inv);
        }
    }
    Ok(())
}

/// Draws `spec.n_train` examples and standardizes each coordinate.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Tensor> {
    make_labeled_dataset(spec).map(|d| d.data)
}

pub fn make_labeled_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_train == 0 {
        return Err(Error::InvalidArgument("n_train must be positive".into()));
    }
    let mut rng = Rng::seed(spec.seed);
    let (mut data, labels) = spec.kind.sample_raw(&mut rng, spec.n_train)?;
    standardize(&mut data)?;
    Ok(Dataset {
        data,
        labels,
        classes: spec.kind.classes(),
    })
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetKind::GaussianAr1 { dim, rho, upsample } => {
                write!(f, "ar1:{dim},{rho},{upsample}")
            }
            DatasetKind::Mixture2d { modes, radius, std } => {
                write!(f, "mixture2d:{modes},{radius},{std}")
            }
            DatasetKind::Checkerboard => f.write_str("checkerboard"),
            DatasetKind::ToyImage { base_res, upsample } => {
                write!(f, "toyimage:{base_res},{upsample}")
            }
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    /// `ar1:dim,rho[,upsample]`, `mixture2d:modes,radius,std`,
    /// `checkerboard`, `toyimage:base_res,upsample`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("dataset {s:?}: {why}"));
        let (name, params) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let nums: Vec<&str> = if params.is_empty() {
            vec![]
        } else {
            params.split(',').map(str::trim).collect()
        };
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad("expected an integer"));
        let real = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
        let kind = match (name, nums.as_slice()) {
            ("ar1", [d, r]) => DatasetKind::GaussianAr1 {
                dim: int(d)?,
                rho: real(r)?,
                upsample: 1,
            },
            ("ar1", [d, r, u]) => DatasetKind::GaussianAr1 {
                dim: int(d)?,
                rho: real(r)?,
                upsample: int(u)?,
            },
            ("mixture2d", [k, r, sd]) => DatasetKind::Mixture2d {
                modes: int(k)?,
                radius: real(r)?,
                std: real(sd)?,
            },
            ("checkerboard", []) => DatasetKind::Checkerboard,
            ("toyimage", [r, u]) => DatasetKind::ToyImage {
                base_res: int(r)?,
                upsample: int(u)?,
            },
            _ => return Err(bad("unknown kind or wrong number of parameters")),
        };
        kind.validate()?;
        Ok(kind)
    }
}
