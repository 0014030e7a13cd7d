//! Flat `key = value` experiment configuration with dotted keys.
//!
//! ```text
//! # comment
//! data.source = synthetic
//! synth.phi = 0, 0.1, 0.2
//! training.iterations = 500
//! cost.lambda = 0.001
//! ```
//!
//! Lists are comma separated. Every key has a default, so an empty file is a
//! valid (small) synthetic run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::error::{Error, Result};
use crate::sensing::{CostModel, SensingMode};
use crate::seqmodel::{InitScheme, ModelDims, Task};
use crate::synth::{ArProcessSpec, LabelKind, LabelSpec, NoiseReading, NoisySpec, SyntheticSpec};
use crate::training::{Baseline, DecisionRule, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, task: Task },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rmse,
    Auroc,
    Auprc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
        }
    }
}

/// Which episodes the headline rates and metrics are computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Test,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Uniform per-measurement cost of the (true) features.
    pub feature_cost: f64,
    /// Explicit per-feature costs; overrides `feature_cost` and noisy costs.
    pub costs: Option<Vec<f64>>,
    pub lambda: f64,
    pub eta: f64,
    pub adverse_label: f64,
    pub delays: Option<Vec<usize>>,
    pub hidden: usize,
    pub head_depth: usize,
    pub training: TrainingConfig,
    pub train_fraction: f64,
    pub eval_rule: DecisionRule,
    pub eval_split: EvalSplit,
    pub metrics: Vec<Metric>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic(SyntheticSpec {
                process: ArProcessSpec {
                    phi: (0..10).map(|i| i as f64 / 10.0).collect(),
                    steps: 10,
                    episodes: 2000,
                    seed: 0,
                },
                label: LabelSpec {
                    kind: LabelKind::ExpSum,
                    noise: 0.1,
                    reading: NoiseReading::Variance,
                },
                noisy: None,
                noisy_reading: NoiseReading::Variance,
            }),
            feature_cost: 1.0,
            costs: None,
            lambda: 1.0,
            eta: 1.0,
            adverse_label: 1.0,
            delays: None,
            hidden: 32,
            head_depth: 1,
            training: TrainingConfig::default(),
            train_fraction: 0.8,
            eval_rule: DecisionRule::Sample,
            eval_split: EvalSplit::Test,
            metrics: vec![Metric::Rmse],
            output_dir: None,
            checkpoint_every: 0,
            repeats: 1,
        }
    }
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {msg}"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(key, format!("expected true/false, got `{v}`"))),
    }
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| f(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn reading_str(r: NoiseReading) -> &'static str {
    match r {
        NoiseReading::Variance => "variance",
        NoiseReading::StdDev => "std",
    }
}

fn parse_reading(key: &str, v: &str) -> Result<NoiseReading> {
    match v.trim() {
        "variance" => Ok(NoiseReading::Variance),
        "std" => Ok(NoiseReading::StdDev),
        _ => Err(cfg_err(key, "expected `variance` or `std`")),
    }
}

/// Split `text` into ordered `(key, value)` pairs.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    fn synth_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Csv { .. } => Err(cfg_err(key, "only valid with data.source = synthetic")),
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data.source" => match v {
                "synthetic" => {
                    if !matches!(self.data, DataSource::Synthetic(_)) {
                        self.data = Self::default().data;
                    }
                }
                "csv" => {
                    if !matches!(self.data, DataSource::Csv { .. }) {
                        self.data = DataSource::Csv {
                            path: PathBuf::new(),
                            task: Task::Regression,
                        };
                    }
                }
                _ => return Err(cfg_err(key, "expected `synthetic` or `csv`")),
            },
            "data.path" => match &mut self.data {
                DataSource::Csv { path, .. } => *path = PathBuf::from(v),
                _ => return Err(cfg_err(key, "set data.source = csv first")),
            },
            "data.task" => {
                let task = match v {
                    "regression" => Task::Regression,
                    "classification" => Task::Classification { classes: 2 },
                    _ => return Err(cfg_err(key, "expected `regression` or `classification`")),
                };
                match &mut self.data {
                    DataSource::Csv { task: t, .. } => *t = task,
                    DataSource::Synthetic(_) => return Err(cfg_err(key, "synthetic task follows synth.label")),
                }
            }
            "data.classes" => {
                let c = parse_usize(key, v)?;
                match &mut self.data {
                    DataSource::Csv { task, .. } => *task = Task::Classification { classes: c },
                    DataSource::Synthetic(_) => return Err(cfg_err(key, "synthetic task follows synth.label")),
                }
            }
            "synth.phi" => {
                let phi = parse_list(key, v, parse_f64)?;
                self.synth_mut(key)?.process.phi = phi;
            }
            "synth.features" => {
                let d = parse_usize(key, v)?;
                let s = self.synth_mut(key)?;
                let fill = s.process.phi.first().copied().unwrap_or(0.0);
                s.process.phi.resize(d, fill);
            }
            "synth.steps" => {
                let t = parse_usize(key, v)?;
                self.synth_mut(key)?.process.steps = t;
            }
            "synth.episodes" => {
                let n = parse_usize(key, v)?;
                self.synth_mut(key)?.process.episodes = n;
            }
            "synth.label" => {
                let kind = match v {
                    "exp-sum" => LabelKind::ExpSum,
                    "weighted" => LabelKind::Weighted,
                    "binary-ydep" => LabelKind::BinaryYdep,
                    _ => return Err(cfg_err(key, "expected exp-sum, weighted or binary-ydep")),
                };
                self.synth_mut(key)?.label.kind = kind;
            }
            "synth.label_noise" => {
                let x = parse_f64(key, v)?;
                self.synth_mut(key)?.label.noise = x;
            }
            "synth.noise_reading" => {
                let r = parse_reading(key, v)?;
                let s = self.synth_mut(key)?;
                s.label.reading = r;
                s.noisy_reading = r;
            }
            "synth.noisy" => {
                let on = parse_bool(key, v)?;
                let s = self.synth_mut(key)?;
                s.noisy = match (on, s.noisy) {
                    (true, Some(n)) => Some(n),
                    (true, None) => Some(NoisySpec { gamma: 0.4, cost: 0.2 }),
                    (false, _) => None,
                };
            }
            "synth.gamma" => {
                let g = parse_f64(key, v)?;
                let s = self.synth_mut(key)?;
                s.noisy.get_or_insert(NoisySpec { gamma: g, cost: 0.2 }).gamma = g;
            }
            "synth.noisy_cost" => {
                let c = parse_f64(key, v)?;
                let s = self.synth_mut(key)?;
                s.noisy.get_or_insert(NoisySpec { gamma: 0.4, cost: c }).cost = c;
            }
            "seed" => {
                let seed = parse_u64(key, v)?;
                self.training.seed = seed;
                if let DataSource::Synthetic(s) = &mut self.data {
                    s.process.seed = seed;
                }
            }
            "cost.feature" => self.feature_cost = parse_f64(key, v)?,
            "cost.values" => self.costs = Some(parse_list(key, v, parse_f64)?),
            "cost.lambda" => self.lambda = parse_f64(key, v)?,
            "cost.eta" => self.eta = parse_f64(key, v)?,
            "cost.adverse_label" => self.adverse_label = parse_f64(key, v)?,
            "cost.delays" => self.delays = Some(parse_list(key, v, parse_usize)?),
            "model.hidden" => self.hidden = parse_usize(key, v)?,
            "model.head_depth" => self.head_depth = parse_usize(key, v)?,
            "training.mode" => {
                self.training.mode = match v {
                    "static" => SensingMode::Static,
                    "time-series" => SensingMode::TimeSeries,
                    _ => return Err(cfg_err(key, "expected `static` or `time-series`")),
                }
            }
            "training.selector_lr" => self.training.selector_lr = parse_f64(key, v)?,
            "training.predictor_lr" => self.training.predictor_lr = parse_f64(key, v)?,
            "training.warmup_iterations" => self.training.warmup_iterations = parse_usize(key, v)?,
            "training.selector_bias" => self.training.selector_bias = parse_f64(key, v)?,
            "training.batch_size" => self.training.batch_size = parse_usize(key, v)?,
            "training.iterations" => self.training.iterations = parse_usize(key, v)?,
            "training.samples_per_decision" => self.training.samples_per_decision = parse_usize(key, v)?,
            "training.baseline" => {
                self.training.baseline = match v {
                    "none" => Baseline::None,
                    "moving-average" => Baseline::MovingAverage,
                    "step-moving-average" => Baseline::StepMovingAverage,
                    "leave-one-out" => Baseline::LeaveOneOut,
                    _ => {
                        return Err(cfg_err(
                            key,
                            "expected none, moving-average, step-moving-average or leave-one-out",
                        ))
                    }
                }
            }
            "training.baseline_decay" => self.training.baseline_decay = parse_f64(key, v)?,
            "training.clip_norm" => {
                self.training.clip_norm = match v {
                    "inf" | "none" => f64::INFINITY,
                    _ => parse_f64(key, v)?,
                }
            }
            "training.optimizer" => {
                self.training.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(cfg_err(key, "expected `adam` or `sgd`")),
                }
            }
            "training.init" => {
                self.training.init = match v {
                    "uniform-scaled" => InitScheme::UniformScaled,
                    "zeros" => InitScheme::Zeros,
                    _ => return Err(cfg_err(key, "expected `uniform-scaled` or `zeros`")),
                }
            }
            "eval.rule" => {
                self.eval_rule = match v {
                    "sample" => DecisionRule::Sample,
                    "threshold" => DecisionRule::Threshold(0.5),
                    _ => return Err(cfg_err(key, "expected `sample` or `threshold`")),
                }
            }
            "eval.threshold" => self.eval_rule = DecisionRule::Threshold(parse_f64(key, v)?),
            "eval.train_fraction" => self.train_fraction = parse_f64(key, v)?,
            "eval.split" => {
                self.eval_split = match v {
                    "test" => EvalSplit::Test,
                    "train" => EvalSplit::Train,
                    _ => return Err(cfg_err(key, "expected `test` or `train`")),
                }
            }
            "metrics" => {
                self.metrics = parse_list(key, v, |k, s| match s.trim() {
                    "rmse" => Ok(Metric::Rmse),
                    "auroc" => Ok(Metric::Auroc),
                    "auprc" => Ok(Metric::Auprc),
                    other => Err(cfg_err(k, format!("unknown metric `{other}`"))),
                })?
            }
            "output.dir" => self.output_dir = Some(PathBuf::from(v)),
            "output.checkpoint_every" => self.checkpoint_every = parse_usize(key, v)?,
            "repeats" => self.repeats = parse_usize(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let DataSource::Synthetic(s) = &self.data {
            s.process.validate().map_err(|e| Error::Config(e.to_string()))?;
            if s.process.episodes < 2 {
                return Err(Error::Config(
                    "synth.episodes must be >= 2 for a train/test split".into(),
                ));
            }
            if s.label.kind == LabelKind::Weighted && s.process.phi.len() < 4 {
                return Err(Error::Config("weighted label needs at least 4 features".into()));
            }
        }
        if let DataSource::Csv { path, .. } = &self.data {
            if path.as_os_str().is_empty() {
                return Err(Error::Config("data.path is required for csv data".into()));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("eval.train_fraction must lie in (0, 1)".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.hidden == 0 || self.head_depth == 0 {
            return Err(Error::Config("model sizes must be >= 1".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        let task = self.task();
        for m in &self.metrics {
            let ok = match (m, task) {
                (Metric::Rmse, Task::Regression) => true,
                (Metric::Auroc | Metric::Auprc, Task::Classification { .. }) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "metric `{}` does not apply to {task:?}",
                    m.name()
                )));
            }
        }
        if let Some(d) = self.features() {
            self.cost_model(d).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        match &self.data {
            DataSource::Csv { task, .. } => *task,
            DataSource::Synthetic(s) => match s.label.kind {
                LabelKind::BinaryYdep => Task::Classification { classes: 2 },
                _ => Task::Regression,
            },
        }
    }

    /// Feature count, when known without reading data.
    pub fn features(&self) -> Option<usize> {
        match &self.data {
            DataSource::Synthetic(s) => Some(s.features()),
            DataSource::Csv { .. } => None,
        }
    }

    pub fn dims(&self, features: usize) -> ModelDims {
        ModelDims {
            features,
            hidden: self.hidden,
            head_depth: self.head_depth,
        }
    }

    pub fn cost_model(&self, features: usize) -> Result<CostModel> {
        let costs = match (&self.costs, &self.data) {
            (Some(c), _) => c.clone(),
            (None, DataSource::Synthetic(s)) => {
                let d = s.process.phi.len();
                let mut c = vec![self.feature_cost; d];
                if let Some(n) = s.noisy {
                    c.extend(std::iter::repeat_n(n.cost, d));
                }
                c
            }
            (None, DataSource::Csv { .. }) => vec![self.feature_cost; features],
        };
        if costs.len() != features {
            return Err(Error::Config(format!("{} costs for {features} features", costs.len())));
        }
        let mut m = CostModel::new(costs, self.lambda)?.with_eta(self.eta)?;
        m.adverse_label = self.adverse_label;
        if let Some(d) = &self.delays {
            m = m.with_delays(d.clone())?;
        }
        Ok(m)
    }

    /// Serialize back to the key/value form; `from_text(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let echo = self.echo();
        let first = echo.get_key_value("data.source");
        first
            .into_iter()
            .chain(echo.iter().filter(|(k, _)| k.as_str() != "data.source"))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Every setting as `key -> value`.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.data {
            DataSource::Synthetic(s) => {
                put("data.source", "synthetic".into());
                put("synth.phi", join(&s.process.phi));
                put("synth.steps", s.process.steps.to_string());
                put("synth.episodes", s.process.episodes.to_string());
                put(
                    "synth.label",
                    match s.label.kind {
                        LabelKind::ExpSum => "exp-sum",
                        LabelKind::Weighted => "weighted",
                        LabelKind::BinaryYdep => "binary-ydep",
                    }
                    .into(),
                );
                put("synth.label_noise", s.label.noise.to_string());
                put("synth.noise_reading", reading_str(s.label.reading).into());
                put("synth.noisy", s.noisy.is_some().to_string());
                if let Some(n) = s.noisy {
                    put("synth.gamma", n.gamma.to_string());
                    put("synth.noisy_cost", n.cost.to_string());
                }
            }
            DataSource::Csv { path, task } => {
                put("data.source", "csv".into());
                put("data.path", path.display().to_string());
                match task {
                    Task::Regression => put("data.task", "regression".into()),
                    Task::Classification { classes } => put("data.classes", classes.to_string()),
                }
            }
        }
        put("seed", self.training.seed.to_string());
        put("cost.feature", self.feature_cost.to_string());
        if let Some(c) = &self.costs {
            put("cost.values", join(c));
        }
        put("cost.lambda", self.lambda.to_string());
        put("cost.eta", self.eta.to_string());
        put("cost.adverse_label", self.adverse_label.to_string());
        if let Some(d) = &self.delays {
            put("cost.delays", join(d));
        }
        put("model.hidden", self.hidden.to_string());
        put("model.head_depth", self.head_depth.to_string());
        let t = &self.training;
        put(
            "training.mode",
            match t.mode {
                SensingMode::Static => "static",
                SensingMode::TimeSeries => "time-series",
            }
            .into(),
        );
        put("training.selector_lr", t.selector_lr.to_string());
        put("training.predictor_lr", t.predictor_lr.to_string());
        put("training.batch_size", t.batch_size.to_string());
        put("training.iterations", t.iterations.to_string());
        put("training.warmup_iterations", t.warmup_iterations.to_string());
        put("training.selector_bias", t.selector_bias.to_string());
        put("training.samples_per_decision", t.samples_per_decision.to_string());
        put(
            "training.baseline",
            match t.baseline {
                Baseline::None => "none",
                Baseline::MovingAverage => "moving-average",
                Baseline::StepMovingAverage => "step-moving-average",
                Baseline::LeaveOneOut => "leave-one-out",
            }
            .into(),
        );
        put("training.baseline_decay", t.baseline_decay.to_string());
        put(
            "training.clip_norm",
            if t.clip_norm.is_finite() {
                t.clip_norm.to_string()
            } else {
                "inf".into()
            },
        );
        put(
            "training.optimizer",
            match t.optimizer {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
            .into(),
        );
        put(
            "training.init",
            match t.init {
                InitScheme::UniformScaled => "uniform-scaled",
                InitScheme::Zeros => "zeros",
            }
            .into(),
        );
        match self.eval_rule {
            DecisionRule::Sample => put("eval.rule", "sample".into()),
            DecisionRule::Threshold(th) => put("eval.threshold", th.to_string()),
        }
        put("eval.train_fraction", self.train_fraction.to_string());
        put(
            "eval.split",
            match self.eval_split {
                EvalSplit::Test => "test",
                EvalSplit::Train => "train",
            }
            .into(),
        );
        put(
            "metrics",
            self.metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "),
        );
        if let Some(d) = &self.output_dir {
            put("output.dir", d.display().to_string());
        }
        put("output.checkpoint_every", self.checkpoint_every.to_string());
        put("repeats", self.repeats.to_string());
        m
    }
}
