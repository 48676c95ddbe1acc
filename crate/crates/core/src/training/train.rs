use std::io::Write;
use std::path::Path;

use super::optim::{
    adam_step, ema_update, lamb_step, lr_at, LrDecay, OptimizerHyper, OptimizerKind,
    OptimizerState,
};
use crate::data::Dataset;
use crate::denoiser::{mlp_backward, mlp_forward, mlp_forward_cached, mse_loss, DenoiserParams, MlpArch};
use crate::error::{Error, Result};
use crate::forward::{diffuse_with_noise, normalize_input, CompoundSchedule};
use crate::numeric::{gaussian, Rng, Tensor};

/// Self-conditioning estimates are clamped to this range (data units).
pub const SELF_COND_CLAMP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub optimizer: OptimizerKind,
    pub hyper: OptimizerHyper,
    pub ema_decay: f64,
    pub self_cond_rate: f64,
    pub label_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 256,
            lr: 2e-3,
            lr_decay: LrDecay::CosineFirstFraction(0.7),
            optimizer: OptimizerKind::Lamb,
            hyper: OptimizerHyper::default(),
            ema_decay: 0.9999,
            self_cond_rate: 0.9,
            label_dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("self_cond_rate", self.self_cond_rate)?;
        unit("label_dropout", self.label_dropout)?;
        unit("ema_decay", self.ema_decay)?;
        unit("beta1", self.hyper.beta1)?;
        unit("beta2", self.hyper.beta2)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad lr {}", self.lr)));
        }
        if let LrDecay::CosineFirstFraction(f) = self.lr_decay {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "cosine decay fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.steps, self.lr, self.lr_decay)
    }
}

/// Result of one [`train_loss`] evaluation.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: DenoiserParams,
    pub gamma_t: Vec<f64>,
}

/// Knobs of [`train_loss`] that come from the training config.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossOptions {
    pub self_cond_rate: f64,
    pub label_dropout: f64,
}

/// Previous-estimate input for self-conditioning: `x̂₀ = (x_t − √(1−γ)·ε̂)/(√γ·b)`,
/// clamped to `±SELF_COND_CLAMP`.
pub fn x0_estimate(x_t: &Tensor, eps_pred: &Tensor, gamma_t: &[f64], b: f64) -> Result<Tensor> {
    x_t.expect_same_shape(eps_pred)?;
    let mut out = x_t.clone();
    for (i, &g) in gamma_t.iter().enumerate() {
        let (a, s) = (g.sqrt() * b, (1.0 - g).sqrt());
        for (o, e) in out.row_mut(i).iter_mut().zip(eps_pred.row(i)) {
            *o = ((*o - s * e) / a).clamp(-SELF_COND_CLAMP, SELF_COND_CLAMP);
        }
    }
    Ok(out)
}

/// Diffusion loss on one batch: draws `t ~ U(0,1)` per example and the
/// noise, diffuses with `cs`, normalizes the network input, applies label
/// dropout and the self-conditioning coin flip, and returns
/// `mean((ε̂ − ε)²)` with its parameter gradients.
pub fn train_loss(
    x0: &Tensor,
    labels: Option<&[usize]>,
    p: &DenoiserParams,
    cs: &CompoundSchedule,
    rng: &mut Rng,
    opts: LossOptions,
) -> Result<LossOutput> {
    let batch = x0.rows();
    if x0.is_empty() || batch == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let t: Vec<f64> = (0..batch).map(|_| rng.uniform()).collect();
    let eps = gaussian(rng, x0.shape())?;
    let noisy = diffuse_with_noise(x0, &t, eps, cs)?;
    let x_in = normalize_input(&noisy.x_t, &noisy.gamma_t, cs)?;

    let labels: Option<Vec<usize>> = match p.arch.null_class() {
        Some(null) => {
            let mut l = labels.map_or_else(|| vec![null; batch], <[usize]>::to_vec);
            for v in l.iter_mut() {
                if rng.uniform() < opts.label_dropout {
                    *v = null;
                }
            }
            Some(l)
        }
        None => None,
    };

    let self_cond = if p.arch.self_cond && rng.uniform() < opts.self_cond_rate {
        // First pass provides the estimate; no gradient flows through it.
        let first = mlp_forward(p, &x_in, &t, labels.as_deref(), None)?;
        Some(x0_estimate(&noisy.x_t, &first, &noisy.gamma_t, cs.input_scale)?)
    } else {
        None
    };

    let (pred, cache) = mlp_forward_cached(p, &x_in, &t, labels.as_deref(), self_cond.as_ref())?;
    let (loss, dl) = mse_loss(&pred, &noisy.eps)?;
    let grads = mlp_backward(p, &cache, &dl)?;
    Ok(LossOutput {
        loss,
        grads,
        gamma_t: noisy.gamma_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: DenoiserParams,
    pub ema: DenoiserParams,
    /// One record per optimizer step.
    pub history: Vec<LossRecord>,
}

/// Runs the training loop. The result is a pure function of the inputs.
pub fn train(
    dataset: &Dataset,
    arch: &MlpArch,
    cs: &CompoundSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let (n, dim) = dataset.data.dims2()?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if dim != arch.in_dim {
        return Err(Error::Shape(format!(
            "dataset width {dim} but network in_dim {}",
            arch.in_dim
        )));
    }
    if arch.cond_classes.is_some() && dataset.labels.is_none() {
        return Err(Error::InvalidArgument(
            "conditional network needs a labeled dataset".into(),
        ));
    }
    let mut rng = Rng::seed(cfg.seed);
    let mut init_rng = rng.fork(0);
    let mut params = DenoiserParams::init(arch, &mut init_rng);
    let mut ema = params.clone();
    let mut state = OptimizerState::new(&params);
    let mut history = Vec::with_capacity(cfg.steps);
    let opts = LossOptions {
        self_cond_rate: cfg.self_cond_rate,
        label_dropout: cfg.label_dropout,
    };

    let mut x0 = Tensor::zeros(&[cfg.batch_size, dim]);
    let mut labels = vec![0usize; cfg.batch_size];
    for step in 0..cfg.steps {
        for i in 0..cfg.batch_size {
            let j = rng.below(n);
            x0.row_mut(i).copy_from_slice(dataset.data.row(j));
            if let Some(l) = &dataset.labels {
                labels[i] = l[j];
            }
        }
        let batch_labels = arch.cond_classes.and(Some(labels.as_slice()));
        let lr = cfg.lr_at(step);
        let out = train_loss(&x0, batch_labels, &params, cs, &mut rng, opts)?;
        if !out.loss.is_finite() || !out.grads.is_finite() {
            let g = &out.gamma_t;
            return Err(Error::Diverged {
                step,
                lr,
                gamma_min: g.iter().copied().fold(f64::INFINITY, f64::min),
                gamma_mean: g.iter().sum::<f64>() / g.len() as f64,
                gamma_max: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        match cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut params, &out.grads, &mut state, lr, &cfg.hyper)?,
            OptimizerKind::Lamb => lamb_step(&mut params, &out.grads, &mut state, lr, &cfg.hyper)?,
        }
        ema_update(&mut ema, &params, cfg.ema_decay)?;
        history.push(LossRecord {
            step,
            loss: out.loss,
            lr,
        });
    }
    Ok(TrainOutput {
        params,
        ema,
        history,
    })
}

/// Writes `step,loss,lr` rows, keeping every `every`-th step and the last.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord], every: usize) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "step,loss,lr").map_err(io)?;
    let every = every.max(1);
    for (i, r) in history.iter().enumerate() {
        if i % every == 0 || i + 1 == history.len() {
            writeln!(w, "{},{},{}", r.step, r.loss, r.lr).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
