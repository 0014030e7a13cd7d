//! Running configured experiments and writing their reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::{CostModel, Episode, SensingTrajectory};
use crate::seqmodel::{PredictorModel, SelectorModel, Task};
use crate::synth::generate;
use crate::training::{derive_seed, evaluate, joint_train_with, TrainedModels, TrainingHistory};

use super::config::{DataSource, EvalSplit, ExperimentConfig};
use super::csv_io::ingest_csv;
use super::metrics::{compute_metrics, measurement_rates};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ASAC_OUTPUT_DIR";

/// Output directory: the configured one, else `$ASAC_OUTPUT_DIR`, else `asac-output`.
pub fn default_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("asac-output"))
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub episodes: Vec<Episode>,
    pub feature_names: Vec<String>,
    pub task: Task,
}

/// Generate or read the dataset described by `cfg`, using `seed` for
/// synthetic generation.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<LoadedData> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.process.seed = seed;
            let d = spec.process.phi.len();
            let mut names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
            if spec.noisy.is_some() {
                names.extend((1..=d).map(|i| format!("x{i}_noisy")));
            }
            Ok(LoadedData {
                episodes: generate(&spec)?,
                feature_names: names,
                task: cfg.task(),
            })
        }
        DataSource::Csv { path, task } => {
            if !path.exists() {
                return Err(Error::Config(format!("data.path {} does not exist", path.display())));
            }
            let episodes: Vec<Episode> = ingest_csv(path)?.into_iter().map(|e| e.episode).collect();
            let d = episodes[0].features_dim();
            if episodes.iter().any(|e| e.features_dim() != d) {
                return Err(Error::Dimension("episodes disagree on feature count".into()));
            }
            Ok(LoadedData {
                episodes,
                feature_names: (1..=d).map(|i| format!("x{i}")).collect(),
                task: *task,
            })
        }
    }
}

/// Seeded shuffle into disjoint train and test index sets covering `0..n`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 episodes to split".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5917])));
    let k = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(k);
    Ok((idx, test))
}

fn pick(episodes: &[Episode], idx: &[usize]) -> Vec<Episode> {
    idx.iter().map(|&i| episodes[i].clone()).collect()
}

/// Results of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// Rates on the configured evaluation split.
    pub rates: Vec<f64>,
    pub train_rates: Vec<f64>,
    pub test_rates: Vec<f64>,
    /// Rates on the evaluation split restricted to steps with `y = label`.
    pub conditional_rates: BTreeMap<String, Vec<f64>>,
    pub metrics: BTreeMap<String, f64>,
    /// Mean of `lambda * multiplier * c^T s` summed over an episode.
    pub mean_episode_cost: f64,
    /// Mean count of measurements charged per episode.
    pub mean_episode_measurements: f64,
    pub final_predictor_loss: f64,
    pub final_selector_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub eval_split: EvalSplit,
    pub feature_names: Vec<String>,
    pub runs: Vec<RunSummary>,
    pub rates_mean: Vec<f64>,
    pub rates_std: Vec<f64>,
    pub metrics_mean: BTreeMap<String, f64>,
    pub metrics_std: BTreeMap<String, f64>,
    pub wall_clock_seconds: f64,
}

impl Report {
    /// A copy with the wall-clock field zeroed, for comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `feature,rate[,rate_std],train_rate,test_rate[,rate|y=...]` grid.
    pub fn rates_csv(&self) -> String {
        let multi = self.runs.len() > 1;
        let first = &self.runs[0];
        let mut header = vec!["feature".to_string(), "rate".into()];
        if multi {
            header.push("rate_std".into());
        }
        header.push("train_rate".into());
        header.push("test_rate".into());
        header.extend(first.conditional_rates.keys().map(|k| format!("rate|{k}")));
        let mean_of =
            |f: &dyn Fn(&RunSummary) -> f64| -> f64 { self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64 };
        let mut out = header.join(",");
        out.push('\n');
        for (i, name) in self.feature_names.iter().enumerate() {
            let mut row = vec![name.clone(), crate::fmt_real(self.rates_mean[i])];
            if multi {
                row.push(crate::fmt_real(self.rates_std[i]));
            }
            row.push(crate::fmt_real(mean_of(&|r| r.train_rates[i])));
            row.push(crate::fmt_real(mean_of(&|r| r.test_rates[i])));
            for k in first.conditional_rates.keys() {
                row.push(crate::fmt_real(mean_of(&|r| r.conditional_rates[k][i])));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

/// Measurement rates, metrics and cost totals of `models` on the episodes of
/// one split.
pub struct Assessment {
    pub trajectories: Vec<SensingTrajectory>,
    pub rates: Vec<f64>,
    pub conditional_rates: BTreeMap<String, Vec<f64>>,
    pub metrics: BTreeMap<String, f64>,
    pub mean_episode_cost: f64,
    pub mean_episode_measurements: f64,
}

pub fn assess(
    cfg: &ExperimentConfig,
    selector: &SelectorModel,
    predictor: &PredictorModel,
    episodes: &[Episode],
    cost: &CostModel,
    task: Task,
    seed: u64,
) -> Result<Assessment> {
    let trajectories = evaluate(
        selector,
        predictor,
        episodes,
        cost,
        cfg.training.mode,
        cfg.eval_rule,
        seed,
    )?;
    let rates = measurement_rates(&trajectories, None)?;
    let mut conditional_rates = BTreeMap::new();
    if let Task::Classification { classes } = task {
        for c in 0..classes {
            let y = c as f64;
            let only = move |label: f64| label == y;
            if let Ok(r) = measurement_rates(&trajectories, Some(&only)) {
                conditional_rates.insert(format!("y={c}"), r);
            }
        }
    }
    let metrics = compute_metrics(&trajectories, task, &cfg.metrics, cfg.adverse_label)?;
    let n = trajectories.len() as f64;
    let mean_episode_cost = trajectories.iter().map(SensingTrajectory::total_cost).sum::<f64>() / n;
    let mean_episode_measurements = trajectories
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| s.charged.count() as f64)
        .sum::<f64>()
        / n;
    Ok(Assessment {
        trajectories,
        rates,
        conditional_rates,
        metrics,
        mean_episode_cost,
        mean_episode_measurements,
    })
}

/// One seeded run: data, split, training and assessment.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub models: TrainedModels,
    pub feature_names: Vec<String>,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, checkpoint_dir: Option<&Path>) -> Result<RunOutcome> {
    let data = load_data(cfg, seed)?;
    let d = data.feature_names.len();
    let cost = cfg.cost_model(d)?;
    let (train_idx, test_idx) = split_indices(data.episodes.len(), cfg.train_fraction, seed)?;
    let train = pick(&data.episodes, &train_idx);
    let test = pick(&data.episodes, &test_idx);
    let mut training = cfg.training.clone();
    training.seed = seed;

    let every = cfg.checkpoint_every;
    let models = joint_train_with(&train, cfg.dims(d), data.task, &cost, &training, |it, sel, pred| {
        if let (Some(dir), true) = (checkpoint_dir, every > 0 && it % every == 0) {
            save_models(dir, &format!("iter{it:06}_"), sel, pred)?;
        }
        Ok(())
    })?;

    let eval_seed = derive_seed(seed, &[0xE7A1]);
    let on_train = assess(
        cfg,
        &models.selector,
        &models.predictor,
        &train,
        &cost,
        data.task,
        eval_seed,
    )?;
    let on_test = assess(
        cfg,
        &models.selector,
        &models.predictor,
        &test,
        &cost,
        data.task,
        eval_seed,
    )?;
    let primary = match cfg.eval_split {
        EvalSplit::Test => &on_test,
        EvalSplit::Train => &on_train,
    };
    let last = models.history.records.last();
    let summary = RunSummary {
        seed,
        train_episodes: train.len(),
        test_episodes: test.len(),
        rates: primary.rates.clone(),
        train_rates: on_train.rates.clone(),
        test_rates: on_test.rates.clone(),
        conditional_rates: primary.conditional_rates.clone(),
        metrics: primary.metrics.clone(),
        mean_episode_cost: primary.mean_episode_cost,
        mean_episode_measurements: primary.mean_episode_measurements,
        final_predictor_loss: last.map_or(f64::NAN, |r| r.predictor_loss),
        final_selector_objective: last.map_or(f64::NAN, |r| r.selector_objective),
    };
    Ok(RunOutcome {
        summary,
        models,
        feature_names: data.feature_names,
    })
}

/// Write `selector.json` and `predictor.json` (with `prefix`) into `dir`.
pub fn save_models(dir: &Path, prefix: &str, selector: &SelectorModel, predictor: &PredictorModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    selector
        .to_checkpoint()
        .save(&dir.join(format!("{prefix}selector.json")))?;
    predictor
        .to_checkpoint()
        .save(&dir.join(format!("{prefix}predictor.json")))
}

pub fn load_models(dir: &Path) -> Result<(SelectorModel, PredictorModel)> {
    use crate::autodiff::Checkpoint;
    let sel = SelectorModel::from_checkpoint(&Checkpoint::load(&dir.join("selector.json"))?)?;
    let pred = PredictorModel::from_checkpoint(&Checkpoint::load(&dir.join("predictor.json"))?)?;
    Ok((sel, pred))
}

/// Everything produced by [`run_experiment`].
pub struct ExperimentOutcome {
    pub report: Report,
    pub models: Vec<TrainedModels>,
}

fn aggregate(cfg: &ExperimentConfig, feature_names: Vec<String>, runs: Vec<RunSummary>, started: Instant) -> Report {
    let d = feature_names.len();
    let (rates_mean, rates_std): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|i| mean_std(&runs.iter().map(|r| r.rates[i]).collect::<Vec<_>>()))
        .unzip();
    let mut metrics_mean = BTreeMap::new();
    let mut metrics_std = BTreeMap::new();
    for k in runs[0].metrics.keys() {
        let (m, s) = mean_std(&runs.iter().map(|r| r.metrics[k]).collect::<Vec<_>>());
        metrics_mean.insert(k.clone(), m);
        metrics_std.insert(k.clone(), s);
    }
    Report {
        config: cfg.echo(),
        seed: cfg.training.seed,
        eval_split: cfg.eval_split,
        feature_names,
        runs,
        rates_mean,
        rates_std,
        metrics_mean,
        metrics_std,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Train and assess `cfg.repeats` runs with seeds `seed, seed + 1, ...`,
/// concurrently. When `out` is given, writes `report.json`, `rates.csv`,
/// `history.csv` (one per repeat when repeating) and the first run's models.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let base = cfg.training.seed;
    let ckpt_dir = out.map(|o| o.join("checkpoints"));
    let outcomes: Vec<RunOutcome> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let dir = if r == 0 { ckpt_dir.as_deref() } else { None };
            run_seed(cfg, base.wrapping_add(r as u64), dir)
        })
        .collect::<Result<_>>()?;
    let names = outcomes[0].feature_names.clone();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut models = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        runs.push(o.summary);
        models.push(o.models);
    }
    let report = aggregate(cfg, names, runs, started);
    if let Some(dir) = out {
        let histories: Vec<&TrainingHistory> = models.iter().map(|m| &m.history).collect();
        write_outputs(dir, &report, &histories)?;
        save_models(dir, "", &models[0].selector, &models[0].predictor)?;
    }
    Ok(ExperimentOutcome { report, models })
}

pub fn write_outputs(dir: &Path, report: &Report, histories: &[&TrainingHistory]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("report.json", &report.to_json()?)?;
    write("rates.csv", &report.rates_csv())?;
    match histories {
        [one] => one.write_csv(&dir.join("history.csv"))?,
        many => {
            for (r, h) in many.iter().enumerate() {
                h.write_csv(&dir.join(format!("history_{r}.csv")))?;
            }
        }
    }
    Ok(())
}

/// Assess saved models against the data and split described by `cfg`.
pub fn evaluate_saved(cfg: &ExperimentConfig, selector: &SelectorModel, predictor: &PredictorModel) -> Result<Report> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.training.seed;
    let data = load_data(cfg, seed)?;
    let d = data.feature_names.len();
    if selector.dims.features != d || predictor.dims.features != d {
        return Err(Error::Dimension(format!(
            "models expect {} features, data has {d}",
            selector.dims.features
        )));
    }
    let cost = cfg.cost_model(d)?;
    let (train_idx, test_idx) = split_indices(data.episodes.len(), cfg.train_fraction, seed)?;
    let train = pick(&data.episodes, &train_idx);
    let test = pick(&data.episodes, &test_idx);
    let eval_seed = derive_seed(seed, &[0xE7A1]);
    let on_train = assess(cfg, selector, predictor, &train, &cost, data.task, eval_seed)?;
    let on_test = assess(cfg, selector, predictor, &test, &cost, data.task, eval_seed)?;
    let primary = match cfg.eval_split {
        EvalSplit::Test => &on_test,
        EvalSplit::Train => &on_train,
    };
    let summary = RunSummary {
        seed,
        train_episodes: train.len(),
        test_episodes: test.len(),
        rates: primary.rates.clone(),
        train_rates: on_train.rates.clone(),
        test_rates: on_test.rates.clone(),
        conditional_rates: primary.conditional_rates.clone(),
        metrics: primary.metrics.clone(),
        mean_episode_cost: primary.mean_episode_cost,
        mean_episode_measurements: primary.mean_episode_measurements,
        final_predictor_loss: f64::NAN,
        final_selector_objective: f64::NAN,
    };
    Ok(aggregate(cfg, data.feature_names, vec![summary], started))
}
