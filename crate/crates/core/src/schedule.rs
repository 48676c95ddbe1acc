//! Continuous-time noise schedules `γ(t)`, their logSNR, and the uniform
//! time grid used by the sampler.
//!
//! `γ(t)` is the fraction of signal power kept at time `t ∈ [0, 1]`:
//! `x_t = √γ(t)·b·x₀ + √(1−γ(t))·ε`. All three families satisfy
//! `γ(0) = 1` and `γ(1) = clip_min`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_CLIP_MIN: f64 = 1e-9;

/// Bisection iterations for [`solve_t_for_logsnr`].
const BISECTION_ITERS: usize = 64;

/// Smallest `t` considered by [`solve_t_for_logsnr`].
pub const SOLVE_T_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `γ(t) = 1 − t`.
    Linear,
    /// A section `[start, end]` of `cos(·π/2)^{2τ}`, renormalized to [0, 1].
    Cosine,
    /// A section `[start, end]` of `sigmoid(·/τ)`, renormalized and flipped.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub start: f64,
    pub end: f64,
    pub tau: f64,
    pub clip_min: f64,
}

impl ScheduleSpec {
    pub fn linear() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            start: 0.0,
            end: 1.0,
            tau: 1.0,
            clip_min: DEFAULT_CLIP_MIN,
        }
    }

    pub fn cosine(start: f64, end: f64, tau: f64) -> Result<Self> {
        Self {
            kind: ScheduleKind::Cosine,
            start,
            end,
            tau,
            clip_min: DEFAULT_CLIP_MIN,
        }
        .validated()
    }

    pub fn sigmoid(start: f64, end: f64, tau: f64) -> Result<Self> {
        Self {
            kind: ScheduleKind::Sigmoid,
            start,
            end,
            tau,
            clip_min: DEFAULT_CLIP_MIN,
        }
        .validated()
    }

    /// The unmodified cosine schedule, `cos²(πt/2)`.
    pub fn standard_cosine() -> Self {
        Self::cosine(0.0, 1.0, 1.0).expect("valid")
    }

    pub fn with_clip_min(mut self, clip_min: f64) -> Result<Self> {
        self.clip_min = clip_min;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.clip_min > 0.0 && self.clip_min < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip_min must lie in (0, 1), got {}",
                self.clip_min
            )));
        }
        match self.kind {
            ScheduleKind::Linear => {}
            ScheduleKind::Cosine => {
                if !(0.0 <= self.start && self.start < self.end && self.end <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "cosine schedule needs 0 <= start < end <= 1, got start={} end={}",
                        self.start, self.end
                    )));
                }
            }
            ScheduleKind::Sigmoid => {
                if !(self.start < self.end) || !self.start.is_finite() || !self.end.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "sigmoid schedule needs start < end, got start={} end={}",
                        self.start, self.end
                    )));
                }
            }
        }
        if self.kind != ScheduleKind::Linear && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(self)
    }

    /// `γ(t)` before clipping; exposed for endpoint checks.
    pub fn gamma_unclipped(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::Cosine => {
                let f = |u: f64| (u * PI / 2.0).cos().powf(2.0 * self.tau);
                let v_start = f(self.start);
                let v_end = f(self.end);
                let out = f(t * (self.end - self.start) + self.start);
                (v_end - out) / (v_end - v_start)
            }
            ScheduleKind::Sigmoid => {
                let f = |u: f64| sigmoid(u / self.tau);
                let v_start = f(self.start);
                let v_end = f(self.end);
                let out = f(t * (self.end - self.start) + self.start);
                (v_end - out) / (v_end - v_start)
            }
        }
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self::linear()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `γ(t)` clipped to `[clip_min, 1]`.
pub fn gamma(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("t={t} outside [0, 1]")));
    }
    Ok(spec.gamma_unclipped(t).clamp(spec.clip_min, 1.0))
}

/// `ln(b²·γ/(1−γ))`, the log power ratio of signal to noise in `x_t`.
pub fn log_snr(spec: &ScheduleSpec, t: f64, scale_b: f64) -> Result<f64> {
    if !(scale_b > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale_b}")));
    }
    log_snr_of_gamma(gamma(spec, t)?, scale_b)
}

pub fn log_snr_of_gamma(g: f64, scale_b: f64) -> Result<f64> {
    if g >= 1.0 {
        return Err(Error::Range(format!(
            "logSNR is +inf at gamma={g} (no noise)"
        )));
    }
    if g <= 0.0 {
        return Err(Error::Range(format!("logSNR is -inf at gamma={g}")));
    }
    // ln(γ) − ln(1−γ) keeps precision near both ends better than ln(γ/(1−γ)).
    Ok(2.0 * scale_b.ln() + g.ln() - (-g).ln_1p())
}

/// Finds `t` with `log_snr(spec, t, b) = target` by bisection.
///
/// logSNR is non-increasing in `t`. Near `t = 0` every schedule rounds to
/// `γ = 1` in `f64`, so the bracket starts at [`SOLVE_T_MIN`] and the
/// achievable range is `[logSNR(1), logSNR(SOLVE_T_MIN)]`.
pub fn solve_t_for_logsnr(spec: &ScheduleSpec, scale_b: f64, target: f64) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::Range(format!("target logSNR {target} is not finite")));
    }
    if !(scale_b > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale_b}")));
    }
    let eval = |t: f64| -> Result<f64> { log_snr(spec, t, scale_b) };
    let hi_val = eval(SOLVE_T_MIN)?;
    let lo_val = eval(1.0)?;
    if !(target <= hi_val && target >= lo_val) {
        return Err(Error::Range(format!(
            "target logSNR {target} outside achievable range [{lo_val}, {hi_val}]"
        )));
    }
    let (mut lo, mut hi) = (SOLVE_T_MIN, 1.0_f64);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Uniform discretization of `[0, 1]` walked from `t = 1` down to `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    pairs: Vec<(f64, f64)>,
}

impl TimeGrid {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `(t_now, t_next)` per step.
    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

pub fn time_grid(steps: usize) -> Result<TimeGrid> {
    if steps == 0 {
        return Err(Error::InvalidArgument("time grid needs at least one step".into()));
    }
    let n = steps as f64;
    let pairs = (0..steps)
        .map(|step| {
            let t_now = 1.0 - step as f64 / n;
            let t_next = (1.0 - (step + 1) as f64 / n).max(0.0);
            (t_now, t_next)
        })
        .collect();
    Ok(TimeGrid { steps, pairs })
}

/// The hyper-parameter set used to compare schedule families, as
/// `"<kind>:s,e,tau"` strings (plus `"linear"`).
pub const REFERENCE_SCHEDULES: &[&str] = &[
    "linear",
    "cosine:0,1,1",
    "cosine:0.2,1,1",
    "cosine:0.2,1,2",
    "cosine:0.2,1,3",
    "sigmoid:-3,3,0.9",
    "sigmoid:-3,3,1.1",
    "sigmoid:0,3,0.3",
    "sigmoid:0,3,0.5",
    "sigmoid:0,3,0.7",
    "sigmoid:0,3,0.9",
    "sigmoid:0,3,1.1",
];

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Sigmoid => "sigmoid",
        };
        if self.kind == ScheduleKind::Linear {
            write!(f, "{name}")?;
        } else {
            write!(f, "{name}:{},{},{}", self.start, self.end, self.tau)?;
        }
        if self.clip_min != DEFAULT_CLIP_MIN {
            write!(f, "@clip={}", self.clip_min)?;
        }
        Ok(())
    }
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    /// Parses `linear`, `cosine:s,e,tau` or `sigmoid:s,e,tau`, optionally
    /// followed by `@clip=<clip_min>`. `@` may also separate the kind from
    /// its parameters (`cosine@0.2,1,1`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("schedule {s:?}: {why}"));
        let s_trim = s.trim();
        let (body, clip) = match s_trim.split_once("@clip=") {
            Some((b, c)) => (
                b,
                Some(c.trim().parse::<f64>().map_err(|_| bad("bad clip_min"))?),
            ),
            None => (s_trim, None),
        };
        let (name, params) = match body.find([':', '@']) {
            Some(i) => (&body[..i], Some(&body[i + 1..])),
            None => (body, None),
        };
        let spec = match (name.to_ascii_lowercase().as_str(), params) {
            ("linear" | "1-t", None) => Self::linear(),
            ("linear" | "1-t", Some(_)) => return Err(bad("linear takes no parameters")),
            (kind @ ("cosine" | "sigmoid"), Some(p)) => {
                let vals = p
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("parameters must be numbers"))?;
                let [start, end, tau] = vals[..] else {
                    return Err(bad("expected three parameters s,e,tau"));
                };
                if kind == "cosine" {
                    Self::cosine(start, end, tau)?
                } else {
                    Self::sigmoid(start, end, tau)?
                }
            }
            ("cosine" | "sigmoid", None) => return Err(bad("missing parameters s,e,tau")),
            _ => return Err(bad("unknown schedule kind")),
        };
        match clip {
            Some(c) => spec.with_clip_min(c),
            None => Ok(spec),
        }
    }
}
