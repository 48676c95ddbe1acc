use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};

/// Norms below this disable the LAMB trust ratio for a tensor.
pub const TRUST_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Lamb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrDecay {
    Constant,
    /// Cosine decay from `lr` to 0 over the first `f·steps` steps, then 0.
    CosineFirstFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// Adam/LAMB moment accumulators, one per parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: DenoiserParams,
    pub v: DenoiserParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(p: &DenoiserParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn check(&self, p: &DenoiserParams, g: &DenoiserParams) -> Result<()> {
        if !(p.same_structure(g) && p.same_structure(&self.m) && p.same_structure(&self.v)) {
            return Err(Error::Shape(
                "optimizer state, gradients and params disagree in structure".into(),
            ));
        }
        Ok(())
    }

    /// Updates moments with `g` and returns the bias-corrected
    /// `m̂/(√v̂ + eps)` for every tensor.
    fn adam_directions(&mut self, g: &DenoiserParams, h: &OptimizerHyper) -> Vec<Vec<f64>> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - h.beta1.powi(t);
        let c2 = 1.0 - h.beta2.powi(t);
        let mut out = Vec::new();
        for ((m, v), g) in self
            .m
            .tensors_mut()
            .into_iter()
            .zip(self.v.tensors_mut())
            .zip(g.tensors())
        {
            let dir = m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(g.data())
                .map(|((m, v), &g)| {
                    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                    (*m / c1) / ((*v / c2).sqrt() + h.eps)
                })
                .collect();
            out.push(dir);
        }
        out
    }
}

/// Bias-corrected Adam with decoupled weight decay:
/// `θ ← θ − lr·(m̂/(√v̂+eps) + wd·θ)`.
pub fn adam_step(
    p: &mut DenoiserParams,
    grads: &DenoiserParams,
    st: &mut OptimizerState,
    lr: f64,
    h: &OptimizerHyper,
) -> Result<()> {
    st.check(p, grads)?;
    let dirs = st.adam_directions(grads, h);
    for (theta, dir) in p.tensors_mut().into_iter().zip(dirs) {
        for (w, d) in theta.data_mut().iter_mut().zip(dir) {
            *w -= lr * (d + h.weight_decay * *w);
        }
    }
    Ok(())
}

/// LAMB: Adam direction plus weight decay, rescaled per tensor by the
/// trust ratio `‖θ‖/‖r‖`.
pub fn lamb_step(
    p: &mut DenoiserParams,
    grads: &DenoiserParams,
    st: &mut OptimizerState,
    lr: f64,
    h: &OptimizerHyper,
) -> Result<()> {
    st.check(p, grads)?;
    let dirs = st.adam_directions(grads, h);
    for (theta, dir) in p.tensors_mut().into_iter().zip(dirs) {
        let delta = lamb_layer_update(theta.data(), &dir, h.weight_decay, lr);
        for (w, d) in theta.data_mut().iter_mut().zip(delta) {
            *w += d;
        }
    }
    Ok(())
}

/// Update vector for one tensor given its Adam direction.
///
/// `r = direction + wd·θ`, `trust = ‖θ‖/‖r‖` (1 if either norm is below
/// [`TRUST_NORM_FLOOR`]), update `= −lr·trust·r`.
pub fn lamb_layer_update(theta: &[f64], direction: &[f64], wd: f64, lr: f64) -> Vec<f64> {
    let r: Vec<f64> = theta
        .iter()
        .zip(direction)
        .map(|(&w, &d)| d + wd * w)
        .collect();
    let trust = trust_ratio(theta, &r);
    r.into_iter().map(|v| -lr * trust * v).collect()
}

pub fn trust_ratio(theta: &[f64], r: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (wn, rn) = (norm(theta), norm(r));
    if wn < TRUST_NORM_FLOOR || rn < TRUST_NORM_FLOOR {
        1.0
    } else {
        wn / rn
    }
}

/// `ema ← decay·ema + (1−decay)·p`.
pub fn ema_update(ema: &mut DenoiserParams, p: &DenoiserParams, decay: f64) -> Result<()> {
    if !ema.same_structure(p) {
        return Err(Error::Shape("EMA and params disagree in structure".into()));
    }
    for (e, w) in ema.tensors_mut().into_iter().zip(p.tensors()) {
        for (e, &w) in e.data_mut().iter_mut().zip(w.data()) {
            *e = decay * *e + (1.0 - decay) * w;
        }
    }
    Ok(())
}

/// Learning rate at `step` of a `total_steps` run.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, decay: LrDecay) -> f64 {
    match decay {
        LrDecay::Constant => base_lr,
        LrDecay::CosineFirstFraction(f) => {
            let horizon = f * total_steps as f64;
            let progress = if horizon > 0.0 {
                (step as f64 / horizon).min(1.0)
            } else {
                1.0
            };
            base_lr * 0.5 * (1.0 + (PI * progress).cos())
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Lamb => "lamb",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "lamb" => Ok(OptimizerKind::Lamb),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for LrDecay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrDecay::Constant => f.write_str("constant"),
            LrDecay::CosineFirstFraction(frac) => write!(f, "cosine:{frac}"),
        }
    }
}

impl FromStr for LrDecay {
    type Err = Error;

    /// `constant` or `cosine:<fraction>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "constant" {
            return Ok(LrDecay::Constant);
        }
        s.strip_prefix("cosine:")
            .and_then(|f| f.trim().parse::<f64>().ok())
            .map(LrDecay::CosineFirstFraction)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown lr decay {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::MlpArch;
    use crate::numeric::Rng;

    fn params() -> DenoiserParams {
        let arch = MlpArch::new(2, vec![3], 2).unwrap();
        DenoiserParams::init_random(&arch, &mut Rng::seed(1), 1.0)
    }

    fn no_decay() -> OptimizerHyper {
        OptimizerHyper {
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn adam_zero_grad_fixed_point() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.1, &no_decay()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut p = params();
        let before = p.flatten();
        let mut g = p.zeros_like();
        for (i, v) in g.layers[0].weight.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.3 } else { -7.0 };
        }
        let h = OptimizerHyper {
            eps: 1e-12,
            ..no_decay()
        };
        let mut st = OptimizerState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut st, lr, &h).unwrap();
        let after = p.flatten();
        let grads = g.flatten();
        for ((b, a), g) in before.iter().zip(&after).zip(&grads) {
            let expected = if *g == 0.0 { 0.0 } else { -lr * g.signum() };
            assert!((a - b - expected).abs() < 1e-12, "{} vs {}", a - b, expected);
        }
    }

    #[test]
    fn adam_decoupled_decay() {
        let mut p = params();
        let before = p.flatten();
        let g = p.zeros_like();
        let h = OptimizerHyper {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut st, 1.0, &h).unwrap();
        for (a, b) in p.flatten().iter().zip(&before) {
            assert!((a - 0.99 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn lamb_zero_grad_fixed_point() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = OptimizerState::new(&p);
        lamb_step(&mut p, &g, &mut st, 0.1, &no_decay()).unwrap();
        assert_eq!(p, before);
        assert_eq!(trust_ratio(&[1.0], &[0.0]), 1.0);
    }

    #[test]
    fn lamb_scalar_rule() {
        let lr = 0.05;
        let u = lamb_layer_update(&[2.0], &[1.0], 0.0, lr);
        assert!((u[0] + 2.0 * lr).abs() < 1e-15);
    }

    #[test]
    fn lamb_trust_ratio_homogeneous() {
        let theta = [0.5, -1.5, 2.0, 0.1];
        let dir = [0.2, 0.4, -0.1, 1.0];
        let base = lamb_layer_update(&theta, &dir, 0.0, 0.01);
        let c = 3.7;
        let scaled: Vec<f64> = theta.iter().map(|v| v * c).collect();
        assert!((trust_ratio(&scaled, &dir) - c * trust_ratio(&theta, &dir)).abs() < 1e-12);
        let up = lamb_layer_update(&scaled, &dir, 0.0, 0.01);
        for (a, b) in up.iter().zip(&base) {
            assert!((a - c * b).abs() < 1e-15);
        }
    }

    #[test]
    fn ema_examples() {
        let arch = MlpArch::new(1, vec![1], 0).unwrap();
        let mut ema = DenoiserParams::zeros(&arch);
        let mut ones = DenoiserParams::zeros(&arch);
        ones.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(1.0));
        ema_update(&mut ema, &ones, 0.9999).unwrap();
        assert!(ema.flatten().iter().all(|&v| (v - 0.0001).abs() < 1e-16));

        let mut same = ones.clone();
        ema_update(&mut same, &ones, 0.9999).unwrap();
        assert_eq!(same, ones);

        let mut ema = DenoiserParams::zeros(&arch);
        let decay: f64 = 0.9;
        for _ in 0..10 {
            ema_update(&mut ema, &ones, decay).unwrap();
        }
        let expected = 1.0 - decay.powi(10);
        assert!(ema.flatten().iter().all(|&v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_at(0, 100, 2e-3, LrDecay::Constant), 2e-3);
        assert_eq!(lr_at(77, 100, 2e-3, LrDecay::Constant), 2e-3);
        let cos = LrDecay::CosineFirstFraction(0.7);
        assert_eq!(lr_at(0, 1000, 2e-3, cos), 2e-3);
        assert!((lr_at(350, 1000, 2e-3, cos) - 1e-3).abs() < 1e-15);
        assert!(lr_at(700, 1000, 2e-3, cos).abs() < 1e-18);
        assert!(lr_at(1000, 1000, 2e-3, cos).abs() < 1e-18);
    }

    #[test]
    fn strings_round_trip() {
        for d in [LrDecay::Constant, LrDecay::CosineFirstFraction(0.7)] {
            assert_eq!(d.to_string().parse::<LrDecay>().unwrap(), d);
        }
        assert_eq!("LAMB".parse::<OptimizerKind>().unwrap(), OptimizerKind::Lamb);
        assert!("cosine:x".parse::<LrDecay>().is_err());
        assert!("sgd".parse::<OptimizerKind>().is_err());
    }
}
