//! Sweep configuration files.
//!
//! A config is TOML: `key = value` lines grouped under `[sweep]`,
//! `[dataset]`, `[model]`, `[train]`, `[sampler]` and `[eval]`. Every key
//! has a default, unknown keys are rejected, and structured values
//! (schedules, datasets, decay rules) use the same strings as the CLI:
//!
//! ```toml
//! [sweep]
//! mode = "oracle"
//! schedules = ["linear", "cosine:0.2,1,1"]
//! scales = [0.2, 0.5, 1.0]
//!
//! [dataset]
//! kind = "ar1:16,0.9"
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetKind, DatasetSpec};
use crate::denoiser::MlpArch;
use crate::error::{Error, Result};
use crate::forward::{CompoundSchedule, Normalization};
use crate::metrics::MetricName;
use crate::sampler::{SamplerConfig, StepKind, TimeInput};
use crate::schedule::ScheduleSpec;
use crate::training::{LrDecay, OptimizerHyper, OptimizerKind, TrainConfig};

/// Serde adapters that go through `Display`/`FromStr`.
mod via_str {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }

    pub mod list {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for item in v {
                seq.serialize_element(&item.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
        where
            T: FromStr,
            T::Err: Display,
            D: Deserializer<'de>,
        {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| s.parse().map_err(de::Error::custom))
                .collect()
        }
    }
}

/// Oracle cells sample with the closed-form Gaussian denoiser; trained
/// cells fit an MLP first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    #[default]
    Trained,
    Oracle,
}

/// Noise levels used while sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum InferenceChoice {
    /// Reuse the cell's own schedule.
    Training,
    Fixed(ScheduleSpec),
}

impl Default for InferenceChoice {
    fn default() -> Self {
        InferenceChoice::Fixed(ScheduleSpec::standard_cosine())
    }
}

/// `auto` picks covariance error for oracle sweeps and sliced
/// Wasserstein for trained ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricChoice {
    #[default]
    Auto,
    Named(MetricName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(with = "via_str")]
    pub mode: SweepMode,
    #[serde(with = "via_str::list")]
    pub schedules: Vec<ScheduleSpec>,
    pub scales: Vec<f64>,
    #[serde(with = "via_str")]
    pub normalize: Normalization,
    #[serde(with = "via_str")]
    pub metric: MetricChoice,
    pub seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mode: SweepMode::Trained,
            schedules: vec![ScheduleSpec::linear()],
            scales: vec![1.0],
            normalize: Normalization::default(),
            metric: MetricChoice::Auto,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(with = "via_str")]
    pub kind: DatasetKind,
    pub n_train: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mixture2d { modes: 8, radius: 2.0, std: 0.2 },
            n_train: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub time_embed: usize,
    pub conditional: bool,
    pub self_cond: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            time_embed: 16,
            conditional: false,
            self_cond: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(with = "via_str")]
    pub lr_decay: LrDecay,
    #[serde(with = "via_str")]
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub self_cond_rate: f64,
    pub label_dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_decay: t.lr_decay,
            optimizer: t.optimizer,
            beta1: t.hyper.beta1,
            beta2: t.hyper.beta2,
            eps: t.hyper.eps,
            weight_decay: t.hyper.weight_decay,
            ema_decay: t.ema_decay,
            self_cond_rate: t.self_cond_rate,
            label_dropout: t.label_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: usize,
    #[serde(with = "via_str")]
    pub step_kind: StepKind,
    #[serde(with = "via_str")]
    pub inference_schedule: InferenceChoice,
    pub guidance_weight: f64,
    #[serde(with = "via_str")]
    pub time_input: TimeInput,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_x0: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            steps: s.steps,
            step_kind: s.step_kind,
            inference_schedule: InferenceChoice::default(),
            guidance_weight: s.guidance_weight,
            time_input: s.time_input,
            clip_x0: s.clip_x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Generated samples per cell (and held-out reference draws).
    pub n_samples: usize,
    pub n_proj: usize,
    pub mmd_bandwidth: f64,
    /// Sample from the EMA weights rather than the raw ones.
    pub use_ema: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            n_proj: 128,
            mmd_bandwidth: 1.0,
            use_ema: true,
        }
    }
}

/// A full experiment description: the `(schedule, scale)` grid plus
/// everything each cell needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub sweep: SweepSection,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

impl SweepSpec {
    /// Parses and validates TOML text. `origin` labels error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Config {
                path: origin.to_string(),
                line,
                msg: e.message().trim().to_string(),
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep spec always serializes")
    }

    /// Applies a `section.key=value` override, as given on the command line.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override {assignment:?} lacks '='")))?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            Error::InvalidArgument(format!("override key {path:?} must be section.key"))
        })?;
        let value = value.trim();
        // Bare words are taken as strings; numbers, booleans and arrays as TOML.
        let literal = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(_) => value.to_string(),
            Err(_) => toml::Value::String(value.to_string()).to_string(),
        };
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own output parses");
        let patch: toml::Table = toml::from_str(&format!("v = {literal}"))
            .map_err(|e| Error::InvalidArgument(format!("override {assignment:?}: {e}")))?;
        let sec = doc
            .entry(section.trim())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match sec {
            toml::Value::Table(t) => {
                t.insert(key.trim().to_string(), patch["v"].clone());
            }
            _ => return Err(Error::InvalidArgument(format!("{section:?} is not a section"))),
        }
        *self = Self::from_toml(&toml::to_string(&doc).expect("table serializes"), "<override>")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.sweep.schedules.is_empty() {
            return bad("sweep.schedules is empty".into());
        }
        if self.sweep.scales.is_empty() {
            return bad("sweep.scales is empty".into());
        }
        if let Some(b) = self.sweep.scales.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("input scale must be positive, got {b}"));
        }
        let gaussian = self.dataset.kind.gaussian_covariance()?.is_some();
        if self.sweep.mode == SweepMode::Oracle {
            if !gaussian {
                return bad(format!(
                    "oracle mode needs a Gaussian dataset (ar1 or toyimage), got {}",
                    self.dataset.kind
                ));
            }
            if !matches!(
                self.sweep.metric,
                MetricChoice::Auto | MetricChoice::Named(MetricName::CovarianceError)
            ) {
                return bad("oracle sweeps are scored by covariance_error".into());
            }
            if self.eval.n_samples <= self.dataset.kind.dim() {
                return bad("eval.n_samples must exceed the data dimension".into());
            }
        } else {
            self.train_config(0).validate()?;
            self.arch()?;
        }
        if self.eval.n_samples < 2 || self.eval.n_proj == 0 {
            return bad("eval.n_samples must be >= 2 and eval.n_proj >= 1".into());
        }
        if self.dataset.n_train == 0 {
            return bad("dataset.n_train must be positive".into());
        }
        self.sampler_config(0).validate()
    }

    pub fn metric(&self) -> MetricName {
        match (self.sweep.metric, self.sweep.mode) {
            (MetricChoice::Named(m), _) => m,
            (MetricChoice::Auto, SweepMode::Oracle) => MetricName::CovarianceError,
            (MetricChoice::Auto, SweepMode::Trained) => MetricName::SlicedWasserstein,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            kind: self.dataset.kind.clone(),
            n_train: self.dataset.n_train,
            seed: self.dataset.seed,
        }
    }

    pub fn arch(&self) -> Result<MlpArch> {
        let mut arch = MlpArch::new(
            self.dataset.kind.dim(),
            self.model.hidden.clone(),
            self.model.time_embed,
        )?;
        if self.model.conditional {
            arch.cond_classes = Some(self.dataset.kind.classes().ok_or_else(|| {
                Error::InvalidArgument(format!("{} has no class labels", self.dataset.kind))
            })?);
        }
        arch.self_cond = self.model.self_cond;
        arch.validated()
    }

    pub fn compound(&self, schedule: usize, scale: usize) -> Result<CompoundSchedule> {
        CompoundSchedule::new(
            self.sweep.schedules[schedule],
            self.sweep.scales[scale],
            self.sweep.normalize,
        )
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_decay: t.lr_decay,
            optimizer: t.optimizer,
            hyper: OptimizerHyper {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
                weight_decay: t.weight_decay,
            },
            ema_decay: t.ema_decay,
            self_cond_rate: t.self_cond_rate,
            label_dropout: t.label_dropout,
            seed,
        }
    }

    /// Sampler settings for a cell whose schedule is `training_schedule`.
    pub fn sampler_for(&self, training_schedule: &ScheduleSpec, seed: u64) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            steps: s.steps,
            step_kind: s.step_kind,
            inference_schedule: match &s.inference_schedule {
                InferenceChoice::Training => *training_schedule,
                InferenceChoice::Fixed(spec) => *spec,
            },
            guidance_weight: s.guidance_weight,
            seed,
            time_input: s.time_input,
            clip_x0: s.clip_x0,
        }
    }

    fn sampler_config(&self, seed: u64) -> SamplerConfig {
        self.sampler_for(&self.sweep.schedules[0], seed)
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<SweepSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SweepSpec::from_toml(&text, &path.display().to_string())
}

/// Writes the fully resolved spec (all defaults spelled out).
pub fn write_resolved_config(path: impl AsRef<Path>, spec: &SweepSpec) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec.to_toml()).map_err(|e| Error::io(path, e))
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Trained => "trained",
            SweepMode::Oracle => "oracle",
        })
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "trained" => Ok(SweepMode::Trained),
            "oracle" => Ok(SweepMode::Oracle),
            other => Err(Error::InvalidArgument(format!("unknown sweep mode {other:?}"))),
        }
    }
}

impl fmt::Display for InferenceChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InferenceChoice::Training => f.write_str("training"),
            InferenceChoice::Fixed(s) => s.fmt(f),
        }
    }
}

impl FromStr for InferenceChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "training" => Ok(InferenceChoice::Training),
            other => other.parse().map(InferenceChoice::Fixed),
        }
    }
}

impl fmt::Display for MetricChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricChoice::Auto => f.write_str("auto"),
            MetricChoice::Named(m) => m.fmt(f),
        }
    }
}

impl FromStr for MetricChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(MetricChoice::Auto),
            other => other.parse().map(MetricChoice::Named),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    const ORACLE: &str = r#"
[sweep]
mode = "oracle"
schedules = ["linear"]
scales = [1.0, 0.6, 0.5, 0.2, 0.1]

[dataset]
kind = "ar1:16,0.9"
"#;

    #[test]
    fn defaults_round_trip() {
        let spec = SweepSpec::default();
        let again = SweepSpec::from_toml(&spec.to_toml(), "t").unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn oracle_config_round_trip() {
        let spec = SweepSpec::from_toml(ORACLE, "t").unwrap();
        assert_eq!(spec.sweep.scales, vec![1.0, 0.6, 0.5, 0.2, 0.1]);
        assert_eq!(spec.metric(), MetricName::CovarianceError);
        let again = SweepSpec::from_toml(&spec.to_toml(), "t").unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn cosine_schedule_string() {
        let text = "[sweep]\nschedules = [\"cosine:0.2,1,1\", \"cosine@0.2,1,1\"]\n";
        let spec = SweepSpec::from_toml(text, "t").unwrap();
        for s in &spec.sweep.schedules {
            assert_eq!(s.kind, ScheduleKind::Cosine);
            assert_eq!((s.start, s.end, s.tau), (0.2, 1.0, 1.0));
        }
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "[sweep]\nseed = 3\n\n[train]\nfoo=1\n";
        match SweepSpec::from_toml(text, "cfg.toml") {
            Err(Error::Config { path, line, msg }) => {
                assert_eq!(path, "cfg.toml");
                assert_eq!(line, 5);
                assert!(msg.contains("foo"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_line() {
        let text = "[sweep]\nschedules = [\"linear\"]\nnormalize = \"sideways\"\n";
        match SweepSpec::from_toml(text, "c") {
            Err(Error::Config { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("sideways"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_grids_rejected() {
        let err = SweepSpec::from_toml("[sweep]\nschedules = []\n", "c").unwrap_err();
        assert!(err.is_config());
        assert!(SweepSpec::from_toml("[sweep]\nscales = []\n", "c").is_err());
        assert!(SweepSpec::from_toml("[sweep]\nscales = [0.0]\n", "c").is_err());
    }

    #[test]
    fn oracle_needs_gaussian_data() {
        let text = "[sweep]\nmode = \"oracle\"\n[dataset]\nkind = \"checkerboard\"\n";
        assert!(SweepSpec::from_toml(text, "c").is_err());
        let text = format!("{ORACLE}\n[eval]\nn_samples = 10\n");
        assert!(SweepSpec::from_toml(&text, "c").is_err());
    }

    #[test]
    fn overrides() {
        let mut spec = SweepSpec::from_toml(ORACLE, "t").unwrap();
        spec.set("sampler.steps=25").unwrap();
        spec.set("sampler.inference_schedule=training").unwrap();
        spec.set("sweep.scales=[0.3, 0.4]").unwrap();
        assert_eq!(spec.sampler.steps, 25);
        assert_eq!(spec.sampler.inference_schedule, InferenceChoice::Training);
        assert_eq!(spec.sweep.scales, vec![0.3, 0.4]);
        assert!(spec.set("sampler.nope=1").is_err());
        assert!(spec.set("steps=1").is_err());
        let cs = spec.sampler_for(&ScheduleSpec::linear(), 4);
        assert_eq!(cs.inference_schedule, ScheduleSpec::linear());
        assert_eq!(cs.seed, 4);
    }
}
