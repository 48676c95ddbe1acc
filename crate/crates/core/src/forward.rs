//! The compound noising strategy: a schedule `γ(t)`, an input scale `b`,
//! and optional variance normalization of the network input.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{gaussian, mean_std, Rng, Tensor};
use crate::schedule::{gamma, ScheduleSpec};

/// Per-example std below this makes empirical normalization an error.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    Off,
    /// Divide each example by its own population std.
    #[default]
    Empirical,
    /// Divide by `√((b²−1)γ+1)`, the std of `x_t` for unit-variance data.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundSchedule {
    pub schedule: ScheduleSpec,
    pub input_scale: f64,
    pub normalize: Normalization,
}

impl CompoundSchedule {
    pub fn new(schedule: ScheduleSpec, input_scale: f64, normalize: Normalization) -> Result<Self> {
        if !(input_scale > 0.0 && input_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "input scale must be positive, got {input_scale}"
            )));
        }
        Ok(Self {
            schedule,
            input_scale,
            normalize,
        })
    }

    /// `γ(t) = 1 − t` with the given scale and empirical normalization.
    pub fn linear(input_scale: f64) -> Result<Self> {
        Self::new(ScheduleSpec::linear(), input_scale, Normalization::Empirical)
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        gamma(&self.schedule, t)
    }
}

impl Default for CompoundSchedule {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::linear(),
            input_scale: 1.0,
            normalize: Normalization::Empirical,
        }
    }
}

/// Input-scale column of the reference model table, one entry per image
/// size from 64 to 1024 pixels; the 512 preset pairs with `cosine:0.2,1,1`.
pub const INPUT_SCALE_PRESETS: &[(&str, f64, &str)] = &[
    ("64x64", 1.0, "linear"),
    ("128x128", 0.6, "linear"),
    ("256x256", 0.5, "linear"),
    ("512x512", 0.2, "cosine:0.2,1,1"),
    ("768x768", 0.1, "linear"),
    ("1024x1024", 0.1, "linear"),
];

/// Looks up a preset by its image-size label, e.g. `"256x256"`.
pub fn preset(label: &str) -> Result<CompoundSchedule> {
    let (_, b, sched) = INPUT_SCALE_PRESETS
        .iter()
        .find(|(l, _, _)| *l == label)
        .ok_or_else(|| Error::InvalidArgument(format!("no preset named {label:?}")))?;
    CompoundSchedule::new(sched.parse()?, *b, Normalization::Empirical)
}

#[derive(Debug, Clone)]
pub struct NoisySample {
    pub x_t: Tensor,
    pub t: Vec<f64>,
    pub eps: Tensor,
    pub gamma_t: Vec<f64>,
}

/// Diffuses a `[batch, ...]` tensor to per-example times `t`.
pub fn diffuse(x0: &Tensor, t: &[f64], rng: &mut Rng, cs: &CompoundSchedule) -> Result<NoisySample> {
    let eps = gaussian(rng, x0.shape())?;
    diffuse_with_noise(x0, t, eps, cs)
}

/// [`diffuse`] with caller-supplied noise.
pub fn diffuse_with_noise(
    x0: &Tensor,
    t: &[f64],
    eps: Tensor,
    cs: &CompoundSchedule,
) -> Result<NoisySample> {
    x0.expect_same_shape(&eps)?;
    if t.len() != x0.rows() {
        return Err(Error::Shape(format!(
            "{} times for a batch of {}",
            t.len(),
            x0.rows()
        )));
    }
    if !x0.is_finite() {
        return Err(Error::InvalidArgument("x0 contains non-finite values".into()));
    }
    let gamma_t = t.iter().map(|&ti| cs.gamma(ti)).collect::<Result<Vec<_>>>()?;
    let b = cs.input_scale;
    let mut x_t = x0.clone();
    for (i, &g) in gamma_t.iter().enumerate() {
        let (signal, noise) = (g.sqrt() * b, (1.0 - g).sqrt());
        for (x, e) in x_t.row_mut(i).iter_mut().zip(eps.row(i)) {
            *x = signal * *x + noise * e;
        }
    }
    Ok(NoisySample {
        x_t: x_t.check_finite("diffuse")?,
        t: t.to_vec(),
        eps,
        gamma_t,
    })
}

/// Variance of `x_t` when `x₀` has unit variance: `(b²−1)γ + 1`.
pub fn analytic_variance(gamma_t: f64, b: f64) -> f64 {
    (b * b - 1.0) * gamma_t + 1.0
}

/// Rescales the network input according to `cs.normalize`.
///
/// `gamma_t` holds one value per example and is only read in analytic mode.
pub fn normalize_input(x_t: &Tensor, gamma_t: &[f64], cs: &CompoundSchedule) -> Result<Tensor> {
    match cs.normalize {
        Normalization::Off => Ok(x_t.clone()),
        Normalization::Analytic => {
            if gamma_t.len() != x_t.rows() {
                return Err(Error::Shape(format!(
                    "{} gammas for a batch of {}",
                    gamma_t.len(),
                    x_t.rows()
                )));
            }
            let factors: Vec<f64> = gamma_t
                .iter()
                .map(|&g| 1.0 / analytic_variance(g, cs.input_scale).sqrt())
                .collect();
            x_t.scale_rows(&factors)
        }
        Normalization::Empirical => {
            let (_, std) = mean_std(x_t, true)?;
            let mut factors = Vec::with_capacity(std.len());
            for (i, &s) in std.data().iter().enumerate() {
                if !(s >= DEGENERATE_STD) {
                    return Err(Error::Degenerate(format!(
                        "example {i} has std {s:e}; empirical normalization needs a nonconstant input"
                    )));
                }
                factors.push(1.0 / s);
            }
            x_t.scale_rows(&factors)
        }
    }
}

/// Schedule with the same network input as `(γ, b)` under analytic
/// normalization but with `b = 1`: `γ' = b²γ / ((b²−1)γ + 1)`.
pub fn effective_gamma(gamma_t: f64, b: f64) -> f64 {
    b * b * gamma_t / analytic_variance(gamma_t, b)
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Off => "off",
            Normalization::Empirical => "empirical",
            Normalization::Analytic => "analytic",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "none" | "false" => Ok(Normalization::Off),
            "empirical" | "true" => Ok(Normalization::Empirical),
            "analytic" => Ok(Normalization::Analytic),
            other => Err(Error::InvalidArgument(format!(
                "unknown normalization {other:?} (expected off|empirical|analytic)"
            ))),
        }
    }
}

impl fmt::Display for CompoundSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}+scale={}+norm={}",
            self.schedule, self.input_scale, self.normalize
        )
    }
}

impl FromStr for CompoundSchedule {
    type Err = Error;

    /// `"<schedule>[+scale=<b>][+norm=<off|empirical|analytic>]"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let schedule: ScheduleSpec = parts.next().unwrap_or_default().parse()?;
        let mut cs = CompoundSchedule {
            schedule,
            ..Default::default()
        };
        for part in parts {
            match part.split_once('=') {
                Some(("scale", v)) => {
                    cs.input_scale = v.trim().parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad scale {v:?} in {s:?}"))
                    })?;
                }
                Some(("norm", v)) => cs.normalize = v.parse()?,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown component {part:?} in compound schedule {s:?}"
                    )))
                }
            }
        }
        CompoundSchedule::new(cs.schedule, cs.input_scale, cs.normalize)
    }
}
