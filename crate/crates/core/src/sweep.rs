//! Grid runner over `(schedule, input scale)` cells.
//!
//! Each cell owns an RNG seeded from `(base seed, schedule index, scale
//! index)`, so cells run in parallel and still reproduce a serial run.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{SweepMode, SweepSpec};
use crate::data::{make_labeled_dataset, Dataset, DatasetSpec};
use crate::denoiser::GaussianOracle;
use crate::error::{Error, Result};
use crate::metrics::{covariance_error, mmd_rbf, sliced_wasserstein, MetricName, MetricReport};
use crate::numeric::{covariance, mix_seed, Rng, Tensor};
use crate::output::csv_err;
use crate::sampler::{generate, EpsModel};
use crate::schedule::ScheduleSpec;
use crate::training::{train, TrainOutput};

/// Seed tags separating the independent streams a sweep draws from.
const HELD_OUT_TAG: u64 = 0x48454c44;
const PROJECTION_TAG: u64 = 0x50524f4a;
const SAMPLER_TAG: u64 = 0x53414d50;

/// Added to the diagonal when an oracle covariance is singular
/// (upsampled data replicates coordinates exactly).
pub const ORACLE_JITTER: f64 = 1e-9;

pub fn cell_seed(base: u64, schedule: usize, scale: usize) -> u64 {
    mix_seed(&[base, schedule as u64, scale as u64])
}

/// Seed of the sampler stream belonging to a cell.
pub fn sampler_seed(cell_seed: u64) -> u64 {
    mix_seed(&[cell_seed, SAMPLER_TAG])
}

/// Data shared by every cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub dataset: Dataset,
    /// Fresh draws for two-sample metrics.
    pub held_out: Tensor,
    /// Reference for covariance error: exact for Gaussian data, otherwise
    /// the held-out covariance.
    pub reference_cov: Tensor,
    pub oracle: Option<GaussianOracle>,
}

impl SweepContext {
    pub fn new(spec: &SweepSpec) -> Result<Self> {
        spec.validate()?;
        let dataset = make_labeled_dataset(&spec.dataset_spec())?;
        let held_out = make_labeled_dataset(&DatasetSpec {
            kind: spec.dataset.kind.clone(),
            n_train: spec.eval.n_samples,
            seed: mix_seed(&[spec.dataset.seed, HELD_OUT_TAG]),
        })?
        .data;
        let exact = spec.dataset.kind.gaussian_covariance()?;
        let oracle = match (&exact, spec.sweep.mode) {
            (Some(sigma), SweepMode::Oracle) => Some(
                GaussianOracle::new(sigma.clone())
                    .or_else(|_| GaussianOracle::with_jitter(sigma.clone(), ORACLE_JITTER))?,
            ),
            _ => None,
        };
        let reference_cov = match exact {
            Some(s) => s,
            None => covariance(&held_out)?,
        };
        Ok(Self {
            dataset,
            held_out,
            reference_cov,
            oracle,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub samples: Tensor,
    pub report: MetricReport,
    /// Present for trained cells.
    pub trained: Option<TrainOutput>,
}

/// Class labels used when sampling a conditional model: cycled in order.
pub fn sample_labels(spec: &SweepSpec, n: usize) -> Option<Vec<usize>> {
    if !spec.model.conditional {
        return None;
    }
    spec.dataset.kind.classes().map(|k| (0..n).map(|i| i % k).collect())
}

/// Scores `samples` with `metric` against the sweep's references.
pub fn score(
    spec: &SweepSpec,
    ctx: &SweepContext,
    metric: MetricName,
    samples: &Tensor,
    seed: u64,
) -> Result<MetricReport> {
    let value = match metric {
        MetricName::CovarianceError => covariance_error(samples, &ctx.reference_cov)?,
        MetricName::SlicedWasserstein => {
            let mut rng = Rng::seed(mix_seed(&[spec.sweep.seed, PROJECTION_TAG]));
            sliced_wasserstein(samples, &ctx.held_out, spec.eval.n_proj, &mut rng)?
        }
        MetricName::MmdRbf => mmd_rbf(samples, &ctx.held_out, spec.eval.mmd_bandwidth)?,
    };
    MetricReport::new(metric, value, samples.rows(), seed)
}

/// Trains (or instantiates the oracle), samples and scores one cell.
pub fn run_cell(spec: &SweepSpec, ctx: &SweepContext, schedule: usize, scale: usize) -> Result<CellOutput> {
    let seed = cell_seed(spec.sweep.seed, schedule, scale);
    let cs = spec.compound(schedule, scale)?;
    let sc = spec.sampler_for(&cs.schedule, sampler_seed(seed));
    let n = spec.eval.n_samples;
    let dim = spec.dataset.kind.dim();
    let labels = sample_labels(spec, n);

    let (samples, trained) = match spec.sweep.mode {
        SweepMode::Oracle => {
            let oracle = ctx
                .oracle
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("sweep context has no oracle".into()))?;
            (generate(oracle, &cs, &sc, n, dim, None)?, None)
        }
        SweepMode::Trained => {
            let out = train(&ctx.dataset, &spec.arch()?, &cs, &spec.train_config(seed))?;
            let model: &dyn EpsModel = if spec.eval.use_ema { &out.ema } else { &out.params };
            let samples = generate(model, &cs, &sc, n, dim, labels.as_deref())?;
            (samples, Some(out))
        }
    };
    let report = score(spec, ctx, spec.metric(), &samples, seed)?;
    Ok(CellOutput {
        samples,
        report,
        trained,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub schedule: String,
    pub scale: f64,
    /// NaN for failed cells.
    pub metric: f64,
    pub wall_ms: u64,
    pub seed: u64,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub metric: MetricName,
    /// Schedule-major order, one row per grid cell.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != CellStatus::Ok).count()
    }
}

/// Runs every cell. Configuration problems fail before any work; a cell
/// that fails at run time is recorded and the rest continue.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    let ctx = SweepContext::new(spec)?;
    run_sweep_with(spec, &ctx, |_, _, _| Ok(()))
}

/// Like [`run_sweep`], calling `on_cell(schedule, scale, output)` for each
/// successful cell (from worker threads) so callers can persist samples.
pub fn run_sweep_with<F>(spec: &SweepSpec, ctx: &SweepContext, on_cell: F) -> Result<SweepResult>
where
    F: Fn(usize, usize, &CellOutput) -> Result<()> + Sync,
{
    let n_scales = spec.sweep.scales.len();
    let cells: Vec<(usize, usize)> = (0..spec.sweep.schedules.len())
        .flat_map(|i| (0..n_scales).map(move |j| (i, j)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, j)| {
            let start = Instant::now();
            let outcome = run_cell(spec, ctx, i, j).and_then(|out| {
                on_cell(i, j, &out)?;
                Ok(out.report.value)
            });
            let (metric, status) = match outcome {
                Ok(v) => (v, CellStatus::Ok),
                Err(e) => (f64::NAN, CellStatus::Failed(e.to_string())),
            };
            SweepRow {
                schedule: spec.sweep.schedules[i].to_string(),
                scale: spec.sweep.scales[j],
                metric,
                wall_ms: start.elapsed().as_millis() as u64,
                seed: cell_seed(spec.sweep.seed, i, j),
                status,
            }
        })
        .collect();
    Ok(SweepResult {
        metric: spec.metric(),
        rows,
    })
}

/// Scale with the lowest metric in a single-schedule sweep. Exact ties go
/// to the smaller scale.
pub fn best_scale(result: &SweepResult) -> Result<f64> {
    let first = result
        .rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty sweep result".into()))?;
    if result.rows.iter().any(|r| r.schedule != first.schedule) {
        return Err(Error::InvalidArgument("best_scale needs a single-schedule sweep".into()));
    }
    if let Some(r) = result.rows.iter().find(|r| r.status != CellStatus::Ok || !r.metric.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "incomplete grid: cell at scale {} has no value",
            r.scale
        )));
    }
    let best = result
        .rows
        .iter()
        .min_by(|a, b| a.metric.total_cmp(&b.metric).then(a.scale.total_cmp(&b.scale)))
        .expect("nonempty");
    Ok(best.scale)
}

pub const CSV_HEADER: [&str; 6] = ["schedule", "scale", "metric", "wall_ms", "seed", "status"];

/// `schedule,scale,metric,wall_ms,seed,status`; status is `ok` or
/// `error: <message>`.
pub fn write_sweep_csv(path: impl AsRef<Path>, result: &SweepResult) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &result.rows {
        let status = match &r.status {
            CellStatus::Ok => "ok".to_string(),
            CellStatus::Failed(m) => format!("error: {m}"),
        };
        w.write_record([
            r.schedule.clone(),
            r.scale.to_string(),
            r.metric.to_string(),
            r.wall_ms.to_string(),
            r.seed.to_string(),
            status,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: impl AsRef<Path>, metric: MetricName) -> Result<SweepResult> {
    let path = path.as_ref();
    let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", &rec[i])));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(format!("bad integer {:?}", &rec[i])));
        let status = match &rec[5] {
            "ok" => CellStatus::Ok,
            s => CellStatus::Failed(s.strip_prefix("error: ").unwrap_or(s).to_string()),
        };
        rows.push(SweepRow {
            schedule: rec[0].to_string(),
            scale: num(1)?,
            metric: num(2)?,
            wall_ms: int(3)?,
            seed: int(4)?,
            status,
        });
    }
    Ok(SweepResult { metric, rows })
}

/// Schedules in `result`, parsed back, in first-seen order.
pub fn result_schedules(result: &SweepResult) -> Result<Vec<ScheduleSpec>> {
    let mut out: Vec<ScheduleSpec> = Vec::new();
    for r in &result.rows {
        let s: ScheduleSpec = r.schedule.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}
