//! Generation loop: uniform time grid, DDIM or ancestral (DDPM) steps,
//! noise levels from an inference schedule that is independent of the
//! training schedule, and classifier-free guidance.
//!
//! The chain lives in the scaled space (the signal is `b·x₀`); the final
//! state is divided by `b` once at the end.

use std::fmt;
use std::str::FromStr;

use crate::denoiser::{gaussian_oracle_denoise, mlp_forward, DenoiserParams, GaussianOracle};
use crate::error::{Error, Result};
use crate::forward::{normalize_input, CompoundSchedule};
use crate::numeric::{gaussian, Rng, Tensor};
use crate::schedule::{gamma, log_snr_of_gamma, solve_t_for_logsnr, time_grid, ScheduleSpec, SOLVE_T_MIN};
use crate::training::x0_estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepKind {
    #[default]
    Ddim,
    Ddpm,
}

/// What the network receives as its time input during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeInput {
    /// `t_now` from the grid, unchanged.
    #[default]
    Direct,
    /// The training-schedule time with the same logSNR as the current
    /// inference-schedule noise level.
    LogSnrMatched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub step_kind: StepKind,
    pub inference_schedule: ScheduleSpec,
    pub guidance_weight: f64,
    pub seed: u64,
    pub time_input: TimeInput,
    /// Clamp the signal estimate to `±clip·b` at every step.
    pub clip_x0: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_kind: StepKind::Ddim,
            inference_schedule: ScheduleSpec::standard_cosine(),
            guidance_weight: 0.0,
            seed: 0,
            time_input: TimeInput::Direct,
            clip_x0: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("sampler needs at least one step".into()));
        }
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance weight must be >= 0, got {}",
                self.guidance_weight
            )));
        }
        if let Some(c) = self.clip_x0 {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip_x0 must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Everything a noise predictor may look at for one sampler step.
#[derive(Debug, Clone, Copy)]
pub struct EpsQuery<'a> {
    /// Chain state in the scaled space.
    pub x_t: &'a Tensor,
    /// `x_t` after the compound schedule's normalization.
    pub x_in: &'a Tensor,
    /// Time input for the network, one per example.
    pub t: &'a [f64],
    /// Inference-schedule noise level of `x_t`.
    pub gamma: f64,
    pub scale: f64,
    pub labels: Option<&'a [usize]>,
    pub self_cond: Option<&'a Tensor>,
}

pub trait EpsModel {
    fn predict_eps(&self, q: &EpsQuery<'_>) -> Result<Tensor>;

    fn self_conditioned(&self) -> bool {
        false
    }
}

impl EpsModel for DenoiserParams {
    fn predict_eps(&self, q: &EpsQuery<'_>) -> Result<Tensor> {
        mlp_forward(self, q.x_in, q.t, q.labels, q.self_cond)
    }

    fn self_conditioned(&self) -> bool {
        self.arch.self_cond
    }
}

impl EpsModel for GaussianOracle {
    fn predict_eps(&self, q: &EpsQuery<'_>) -> Result<Tensor> {
        Ok(gaussian_oracle_denoise(self, q.x_t, q.gamma, q.scale)?.eps)
    }
}

fn check_levels(gamma_now: f64, gamma_next: f64) -> Result<()> {
    if !(gamma_now > 0.0 && gamma_now <= 1.0) {
        return Err(Error::Range(format!(
            "gamma_now={gamma_now} must lie in (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&gamma_next) {
        return Err(Error::Range(format!("gamma_next={gamma_next} outside [0, 1]")));
    }
    Ok(())
}

/// `(x_t − √(1−γ)·ε̂)/√γ`, the implied estimate of the scaled signal.
pub fn signal_estimate(x_t: &Tensor, eps_pred: &Tensor, gamma_now: f64) -> Result<Tensor> {
    let (a, s) = (gamma_now.sqrt(), (1.0 - gamma_now).sqrt());
    x_t.zip_with(eps_pred, |x, e| (x - s * e) / a)
}

/// Deterministic DDIM update from `γ_now` to `γ_next`.
pub fn ddim_step(x_t: &Tensor, eps_pred: &Tensor, gamma_now: f64, gamma_next: f64) -> Result<Tensor> {
    check_levels(gamma_now, gamma_next)?;
    let sig = signal_estimate(x_t, eps_pred, gamma_now)?;
    let (a, s) = (gamma_next.sqrt(), (1.0 - gamma_next).sqrt());
    sig.zip_with(eps_pred, |x, e| a * x + s * e)?
        .check_finite("ddim_step")
}

/// Ancestral-step variance `(1 − γ_now/γ_next)·(1−γ_next)/(1−γ_now)`;
/// zero when `γ_next = 1`.
pub fn ddpm_variance(gamma_now: f64, gamma_next: f64) -> Result<f64> {
    check_levels(gamma_now, gamma_next)?;
    if gamma_next < gamma_now {
        return Err(Error::Range(format!(
            "ancestral step must reduce noise: gamma_next={gamma_next} < gamma_now={gamma_now}"
        )));
    }
    if gamma_next >= 1.0 {
        return Ok(0.0);
    }
    Ok((1.0 - gamma_now / gamma_next) * (1.0 - gamma_next) / (1.0 - gamma_now))
}

/// Ancestral update: the posterior mean given the signal estimate plus
/// Gaussian noise of variance [`ddpm_variance`].
pub fn ddpm_step(
    x_t: &Tensor,
    eps_pred: &Tensor,
    gamma_now: f64,
    gamma_next: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let var = ddpm_variance(gamma_now, gamma_next)?;
    let sig = signal_estimate(x_t, eps_pred, gamma_now)?;
    let a = gamma_next.sqrt();
    let s = (1.0 - gamma_next - var).max(0.0).sqrt();
    let mut out = sig.zip_with(eps_pred, |x, e| a * x + s * e)?;
    if var > 0.0 {
        let sd = var.sqrt();
        for v in out.data_mut() {
            *v += sd * rng.normal();
        }
    }
    out.check_finite("ddpm_step")
}

/// Classifier-free guidance: `(1+w)·ε_cond − w·ε_uncond`.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, w: f64) -> Result<Tensor> {
    eps_cond.zip_with(eps_uncond, |c, u| (1.0 + w) * c - w * u)
}

fn network_time(cs: &CompoundSchedule, sc: &SamplerConfig, t_now: f64, gamma_now: f64) -> Result<f64> {
    match sc.time_input {
        TimeInput::Direct => Ok(t_now),
        TimeInput::LogSnrMatched => {
            if gamma_now >= 1.0 {
                return Ok(0.0);
            }
            let target = log_snr_of_gamma(gamma_now, 1.0)?;
            match solve_t_for_logsnr(&cs.schedule, 1.0, target) {
                Ok(t) => Ok(t),
                // Outside the training schedule's range: use the nearer end.
                Err(Error::Range(_)) => {
                    let lo = log_snr_of_gamma(gamma(&cs.schedule, 1.0)?, 1.0)?;
                    Ok(if target <= lo { 1.0 } else { SOLVE_T_MIN })
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Draws `n` samples of width `dim`.
///
/// `labels` selects classes for a conditional model (`None` = null class).
/// With a positive guidance weight and labels, each step evaluates the
/// model twice and combines with [`cfg_combine`].
pub fn generate(
    model: &dyn EpsModel,
    cs: &CompoundSchedule,
    sc: &SamplerConfig,
    n: usize,
    dim: usize,
    labels: Option<&[usize]>,
) -> Result<Tensor> {
    sc.validate()?;
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} samples", l.len())));
        }
    }
    let b = cs.input_scale;
    let mut rng = Rng::seed(sc.seed);
    let mut x = gaussian(&mut rng, &[n, dim])?;
    let mut prev_x0: Option<Tensor> = None;
    let guided = sc.guidance_weight > 0.0 && labels.is_some();

    for &(t_now, t_next) in time_grid(sc.steps)?.pairs() {
        let g_now = gamma(&sc.inference_schedule, t_now)?;
        let g_next = gamma(&sc.inference_schedule, t_next)?;
        let gammas = vec![g_now; n];
        let x_in = normalize_input(&x, &gammas, cs)?;
        let t_in = vec![network_time(cs, sc, t_now, g_now)?; n];
        let query = EpsQuery {
            x_t: &x,
            x_in: &x_in,
            t: &t_in,
            gamma: g_now,
            scale: b,
            labels,
            self_cond: if model.self_conditioned() {
                prev_x0.as_ref()
            } else {
                None
            },
        };
        let mut eps = model.predict_eps(&query)?;
        if guided {
            let uncond = model.predict_eps(&EpsQuery {
                labels: None,
                ..query
            })?;
            eps = cfg_combine(&eps, &uncond, sc.guidance_weight)?;
        }
        if let Some(c) = sc.clip_x0 {
            // Clamp the signal estimate and re-derive a consistent ε̂.
            let sig = signal_estimate(&x, &eps, g_now)?.map(|v| v.clamp(-c * b, c * b));
            if g_now < 1.0 {
                let (a, s) = (g_now.sqrt(), (1.0 - g_now).sqrt());
                eps = x.zip_with(&sig, |xv, sv| (xv - a * sv) / s)?;
            }
        }
        if model.self_conditioned() {
            prev_x0 = Some(x0_estimate(&x, &eps, &gammas, b)?);
        }
        x = match sc.step_kind {
            StepKind::Ddim => ddim_step(&x, &eps, g_now, g_next)?,
            StepKind::Ddpm => ddpm_step(&x, &eps, g_now, g_next, &mut rng)?,
        };
    }
    Ok(x.scale(1.0 / b))
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Ddim => "ddim",
            StepKind::Ddpm => "ddpm",
        })
    }
}

impl FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ddim" => Ok(StepKind::Ddim),
            "ddpm" => Ok(StepKind::Ddpm),
            other => Err(Error::InvalidArgument(format!("unknown step kind {other:?}"))),
        }
    }
}

impl fmt::Display for TimeInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeInput::Direct => "direct",
            TimeInput::LogSnrMatched => "logsnr",
        })
    }
}

impl FromStr for TimeInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(TimeInput::Direct),
            "logsnr" => Ok(TimeInput::LogSnrMatched),
            other => Err(Error::InvalidArgument(format!("unknown time input {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ar1_covariance;
    use crate::denoiser::MlpArch;
    use crate::forward::{diffuse_with_noise, Normalization};
    use crate::numeric::{covariance, mean_std};

    fn v(x: &[f64]) -> Tensor {
        Tensor::new(vec![1, x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn ddim_recovers_signal_with_true_noise() {
        let cs = CompoundSchedule::new(ScheduleSpec::linear(), 0.5, Normalization::Off).unwrap();
        let x0 = v(&[1.5, -0.25, 3.0]);
        let eps = v(&[0.3, -1.1, 0.7]);
        let s = diffuse_with_noise(&x0, &[0.6], eps.clone(), &cs).unwrap();
        let sig = signal_estimate(&s.x_t, &eps, s.gamma_t[0]).unwrap();
        assert!(sig.max_abs_diff(&x0.scale(0.5)).unwrap() < 1e-14);
        // Stepping to γ = 1 lands exactly on the signal.
        let out = ddim_step(&s.x_t, &eps, s.gamma_t[0], 1.0).unwrap();
        assert!(out.max_abs_diff(&x0.scale(0.5)).unwrap() < 1e-14);
    }

    #[test]
    fn ddim_fixed_point_and_hand_value() {
        let x = v(&[0.4, -2.0]);
        let e = v(&[1.0, 0.2]);
        let same = ddim_step(&x, &e, 0.3, 0.3).unwrap();
        assert!(same.max_abs_diff(&x).unwrap() < 1e-14);

        let out = ddim_step(&v(&[1.0]), &v(&[0.5]), 0.5, 1.0).unwrap();
        let expected = (1.0 - 0.5f64.sqrt() * 0.5) / 0.5f64.sqrt();
        assert!((out.data()[0] - expected).abs() < 1e-15);
        assert!((out.data()[0] - 0.9142).abs() < 1e-4);

        assert!(ddim_step(&x, &e, 0.0, 0.5).is_err());
    }

    #[test]
    fn ddpm_final_step_is_mean() {
        let x = v(&[0.7, -0.1]);
        let e = v(&[0.2, 0.4]);
        assert_eq!(ddpm_variance(0.4, 1.0).unwrap(), 0.0);
        let a = ddpm_step(&x, &e, 0.4, 1.0, &mut Rng::seed(1)).unwrap();
        let b = ddim_step(&x, &e, 0.4, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(ddpm_variance(0.6, 0.4).is_err());
    }

    #[test]
    fn ddpm_seeded_and_variance_matches() {
        let (g0, g1) = (0.3, 0.6);
        let var = ddpm_variance(g0, g1).unwrap();
        assert!(var > 0.0);
        let n = 10_000;
        let x = Tensor::full(&[n, 1], 0.8);
        let e = Tensor::full(&[n, 1], -0.4);
        let a = ddpm_step(&x, &e, g0, g1, &mut Rng::seed(9)).unwrap();
        let b = ddpm_step(&x, &e, g0, g1, &mut Rng::seed(9)).unwrap();
        assert_eq!(a, b);
        let (_, sd) = mean_std(&a, false).unwrap();
        let emp = sd.data()[0].powi(2);
        assert!((emp / var - 1.0).abs() < 0.03, "empirical {emp} vs {var}");
    }

    #[test]
    fn guidance_examples() {
        let c = v(&[1.0, -2.0]);
        let u = v(&[0.5, 0.5]);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &c, 3.0).unwrap(), c);
        assert_eq!(cfg_combine(&v(&[1.0]), &v(&[0.0]), 3.0).unwrap().data(), &[4.0]);
    }

    #[test]
    fn oracle_chain_matches_covariance() {
        let sigma = ar1_covariance(4, 0.5).unwrap();
        let oracle = GaussianOracle::new(sigma.clone()).unwrap();
        let cs = CompoundSchedule::new(ScheduleSpec::linear(), 1.0, Normalization::Off).unwrap();
        let sc = SamplerConfig { steps: 200, ..Default::default() };
        let x = generate(&oracle, &cs, &sc, 10_000, 4, None).unwrap();
        let c = covariance(&x).unwrap();
        let err = c.sub(&sigma).unwrap().frobenius() / sigma.frobenius();
        assert!(err < 0.05, "relative error {err}");
    }

    #[test]
    fn ddim_generation_is_deterministic() {
        let arch = MlpArch::new(2, vec![8], 4).unwrap();
        let p = DenoiserParams::init_random(&arch, &mut Rng::seed(1), 0.1);
        let sc = SamplerConfig { steps: 10, seed: 3, ..Default::default() };
        let cs = CompoundSchedule::default();
        let a = generate(&p, &cs, &sc, 16, 2, None).unwrap();
        let b = generate(&p, &cs, &sc, 16, 2, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_guidance_is_unguided() {
        let mut arch = MlpArch::new(2, vec![8], 4).unwrap();
        arch.cond_classes = Some(3);
        let p = DenoiserParams::init_random(&arch, &mut Rng::seed(4), 0.1);
        let cs = CompoundSchedule::new(ScheduleSpec::linear(), 1.0, Normalization::Off).unwrap();
        let base = SamplerConfig { steps: 8, seed: 5, ..Default::default() };
        let null = vec![3usize; 10];
        let unguided = generate(&p, &cs, &base, 10, 2, None).unwrap();
        let w0 = generate(&p, &cs, &base, 10, 2, Some(&null)).unwrap();
        assert_eq!(unguided, w0);
        // Guidance with the null label on both branches changes nothing.
        let w3 = SamplerConfig { guidance_weight: 3.0, ..base };
        let guided = generate(&p, &cs, &w3, 10, 2, Some(&null)).unwrap();
        let d = guided.max_abs_diff(&unguided).unwrap();
        // The first step divides by √γ ≈ 3e-5, so rounding is amplified.
        assert!(d < 1e-9, "diff {d}");
    }

    #[test]
    fn logsnr_matched_time_inverts_schedule() {
        let cs = CompoundSchedule::new(ScheduleSpec::linear(), 1.0, Normalization::Off).unwrap();
        let sc = SamplerConfig { time_input: TimeInput::LogSnrMatched, ..Default::default() };
        // cos²(π/8) under the linear schedule is reached at t = 1 − cos²(π/8).
        let g = gamma(&sc.inference_schedule, 0.25).unwrap();
        let t = network_time(&cs, &sc, 0.25, g).unwrap();
        assert!((t - (1.0 - g)).abs() < 1e-9);
        assert_eq!(network_time(&cs, &SamplerConfig::default(), 0.25, g).unwrap(), 0.25);
    }

    #[test]
    fn strings() {
        assert_eq!("DDPM".parse::<StepKind>().unwrap(), StepKind::Ddpm);
        assert!("euler".parse::<StepKind>().is_err());
        assert_eq!("logsnr".parse::<TimeInput>().unwrap(), TimeInput::LogSnrMatched);
    }
}
