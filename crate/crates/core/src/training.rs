//! Rollouts and joint selector/predictor training.
//!
//! Each iteration takes one optimizer step on the predictor (squared error or
//! cross-entropy on the selected observations, decisions held fixed) and then
//! one on the selector using the score-function estimator
//!
//! ```text
//! grad L(theta) ~ (1/n) sum_episodes sum_j G_j * grad log pi_theta(s_j | history_{j-1})
//! G_j = sum_{t >= j} (l_t + cost_t)
//! ```
//!
//! which is the per-time double sum regrouped by decision step.

use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_grad_norm, NodeRef, OptimizerKind, OptimizerState, RealArray, Tape};
use crate::error::{Error, Result};
use crate::sensing::{
    apply_delayed_mask_available, enforce_static_nesting, sample_decision, step_cost, weighted_log_prob_node,
    CostModel, Episode, ObservedVector, SensingDecision, SensingMode, SensingTrajectory, StepRecord,
};
use crate::seqmodel::{
    prediction_loss, prediction_loss_node, BoundNet, InitScheme, ModelDims, Parameterized, PredictorModel,
    SelectorModel, Task,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    /// One exponential moving average of `G` shared by all steps.
    MovingAverage,
    /// One exponential moving average per step index.
    StepMovingAverage,
    /// Mean `G_j` of the other rollouts of the same episode in the batch;
    /// needs at least two samples per decision.
    LeaveOneOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Selector learning rate (alpha).
    pub selector_lr: f64,
    /// Predictor learning rate (beta).
    pub predictor_lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Independent rollouts drawn per episode in a mini-batch.
    pub samples_per_decision: usize,
    pub mode: SensingMode,
    pub baseline: Baseline,
    pub baseline_decay: f64,
    pub seed: u64,
    /// Joint L2 clip applied to each network's gradient; `inf` disables.
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub init: InitScheme,
    /// Leading iterations that update only the predictor.
    pub warmup_iterations: usize,
    /// Initial value of the selector's output-layer bias (logit of the
    /// starting measurement probability).
    pub selector_bias: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            selector_lr: 1e-3,
            predictor_lr: 1e-3,
            batch_size: 32,
            iterations: 1000,
            samples_per_decision: 1,
            mode: SensingMode::TimeSeries,
            baseline: Baseline::None,
            baseline_decay: 0.99,
            seed: 0,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
            init: InitScheme::UniformScaled,
            warmup_iterations: 0,
            selector_bias: 0.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
        }
        if self.samples_per_decision == 0 {
            return Err(Error::InvalidArgument("samples per decision must be >= 1".into()));
        }
        if !(self.selector_lr > 0.0) || !(self.predictor_lr > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        if !self.selector_bias.is_finite() {
            return Err(Error::InvalidArgument("selector bias must be finite".into()));
        }
        if self.baseline == Baseline::LeaveOneOut && self.samples_per_decision < 2 {
            return Err(Error::InvalidArgument(
                "leave-one-out baseline needs samples per decision >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::InvalidArgument("baseline decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// How the evaluation rollout turns probabilities into decisions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    Sample,
    Threshold(f64),
}

/// SplitMix64 over `base` and `parts`; used to key independent rng streams.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn check_dims(selector: &SelectorModel, predictor: &PredictorModel, episode: &Episode, cost: &CostModel) -> Result<()> {
    let d = episode.features_dim();
    if selector.dims.features != d || predictor.dims.features != d || cost.features() != d {
        return Err(Error::Dimension(format!(
            "episode has {d} features; selector {}, predictor {}, cost model {}",
            selector.dims.features,
            predictor.dims.features,
            cost.features()
        )));
    }
    Ok(())
}

/// Roll the pair forward over `episode`, drawing each decision from the
/// selector probabilities.
pub fn rollout<R: Rng + ?Sized>(
    selector: &SelectorModel,
    predictor: &PredictorModel,
    episode: &Episode,
    cost: &CostModel,
    mode: SensingMode,
    rng: &mut R,
) -> Result<SensingTrajectory> {
    rollout_with(selector, predictor, episode, cost, mode, |_, p| sample_decision(p, rng))
}

/// Rollout where `decide(t, probs)` supplies the raw decision at step `t`
/// (0-based). The first probabilities come from feeding the selector an
/// empty observation from the zero state.
pub fn rollout_with(
    selector: &SelectorModel,
    predictor: &PredictorModel,
    episode: &Episode,
    cost: &CostModel,
    mode: SensingMode,
    mut decide: impl FnMut(usize, &[f64]) -> SensingDecision,
) -> Result<SensingTrajectory> {
    check_dims(selector, predictor, episode, cost)?;
    let d = episode.features_dim();
    let task = predictor.task;

    let mut stape = Tape::new();
    let snet = selector.bind(&mut stape);
    let mut ptape = Tape::new();
    let pnet = predictor.bind(&mut ptape);

    let empty = ObservedVector::empty(d);
    let s0 = snet.initial_state(&mut stape);
    let (mut s_state, mut probs) = snet.selector_step(&mut stape, &s0, &empty.mask, &empty.values)?;
    let mut p_state = pnet.initial_state(&mut ptape);

    let mut decisions: Vec<SensingDecision> = Vec::with_capacity(episode.len());
    let mut cumulative = SensingDecision::none(d);
    let mut first_measured: Vec<Option<usize>> = vec![None; d];
    let mut steps = Vec::with_capacity(episode.len());

    for t in 0..episode.len() {
        let e_t = stape.value(probs).data().to_vec();
        let sampled = decide(t, &e_t);
        if sampled.len() != d {
            return Err(Error::Dimension(format!(
                "decision has {} bits, expected {d}",
                sampled.len()
            )));
        }
        let avail = &episode.availability[t];

        let (decision, charged, observed) = match mode {
            SensingMode::TimeSeries => {
                decisions.push(sampled.clone());
                let obs = apply_delayed_mask_available(
                    &episode.features,
                    Some(&episode.availability),
                    &decisions,
                    &cost.delays,
                )?;
                (sampled.clone(), sampled.clone(), obs)
            }
            SensingMode::Static => {
                let next = enforce_static_nesting(&cumulative, &sampled);
                let charged = SensingDecision(
                    next.bits()
                        .iter()
                        .zip(cumulative.bits())
                        .map(|(&n, &c)| n && !c)
                        .collect(),
                );
                for (i, &c) in charged.bits().iter().enumerate() {
                    if c {
                        first_measured[i] = Some(t);
                    }
                }
                cumulative = next.clone();
                let mut obs = ObservedVector::empty(d);
                for i in 0..d {
                    if let Some(t0) = first_measured[i] {
                        if t0 + cost.delays[i] <= t {
                            if episode.availability[t0][i] {
                                obs.values[i] = episode.features[t0][i];
                                obs.mask[i] = true;
                            } else {
                                obs.missing[i] = true;
                            }
                        }
                    }
                }
                (next, charged, obs)
            }
        };

        let y = episode.labels[t];
        let step_c = step_cost(&charged, cost, y, Some(avail));
        let selected_missing = sampled.bits().iter().zip(avail).map(|(&s, &a)| s && !a).collect();

        let (next_p, pred) = pnet.predictor_step(&mut ptape, &p_state, &observed.mask, &observed.values, task)?;
        p_state = next_p;
        let prediction = ptape.value(pred).data().to_vec();
        let loss = prediction_loss(&prediction, y, task)?;

        let (next_s, next_probs) = snet.selector_step(&mut stape, &s_state, &observed.mask, &observed.values)?;
        s_state = next_s;
        probs = next_probs;

        steps.push(StepRecord {
            probs: e_t,
            sampled,
            decision,
            charged,
            selected_missing,
            observed,
            prediction,
            label: y,
            loss,
            cost: step_c,
        });
    }
    Ok(SensingTrajectory { steps })
}

/// Re-run the selector over a recorded trajectory, returning the probability
/// node for every step. Values reproduce `StepRecord::probs` exactly.
pub fn replay_selector(tape: &mut Tape, net: &BoundNet, traj: &SensingTrajectory) -> Result<Vec<NodeRef>> {
    let d = traj.steps.first().map_or(0, |s| s.observed.len());
    let empty = ObservedVector::empty(d);
    let s0 = net.initial_state(tape);
    let (mut state, mut probs) = net.selector_step(tape, &s0, &empty.mask, &empty.values)?;
    let mut out = Vec::with_capacity(traj.len());
    for step in &traj.steps {
        out.push(probs);
        let (ns, np) = net.selector_step(tape, &state, &step.observed.mask, &step.observed.values)?;
        state = ns;
        probs = np;
    }
    Ok(out)
}

/// Re-run the predictor over a recorded trajectory, returning per-step loss nodes.
pub fn replay_predictor(tape: &mut Tape, net: &BoundNet, traj: &SensingTrajectory, task: Task) -> Result<Vec<NodeRef>> {
    let mut state = net.initial_state(tape);
    let mut out = Vec::with_capacity(traj.len());
    for step in &traj.steps {
        let (ns, pred) = net.predictor_step(tape, &state, &step.observed.mask, &step.observed.values, task)?;
        state = ns;
        out.push(prediction_loss_node(tape, pred, step.label, task)?);
    }
    Ok(out)
}

fn sum_nodes(tape: &mut Tape, nodes: &[NodeRef]) -> Result<NodeRef> {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = tape.add(acc, n)?;
    }
    Ok(acc)
}

fn add_grads(acc: &mut Option<Vec<RealArray>>, g: Vec<RealArray>) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(&g) {
                for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                    *p += q;
                }
            }
        }
    }
}

/// Gradient of `(1/n) sum_i sum_t l_t` for the predictor, decisions fixed.
/// Returns `(objective, gradient)`.
pub fn predictor_gradient(
    predictor: &PredictorModel,
    trajectories: &[SensingTrajectory],
) -> Result<(f64, Vec<RealArray>)> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let n = trajectories.len() as f64;
    let parts: Vec<(f64, Vec<RealArray>)> = trajectories
        .par_iter()
        .map(|traj| -> Result<(f64, Vec<RealArray>)> {
            let mut tape = Tape::new();
            let net = predictor.bind(&mut tape);
            let losses = replay_predictor(&mut tape, &net, traj, predictor.task)?;
            let total = sum_nodes(&mut tape, &losses)?;
            let value = tape.value(total).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(value));
            }
            let mut grads = tape.backward(total)?;
            let g = net
                .param_nodes()
                .into_iter()
                .map(|p| grads.take(p).expect("parameter leaf").map(|v| v / n))
                .collect();
            Ok((value, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut acc = None;
    for (v, g) in parts {
        total += v;
        add_grads(&mut acc, g);
    }
    Ok((total / n, acc.expect("non-empty batch")))
}

/// One optimizer step on the predictor. Returns the batch objective before the step.
pub fn predictor_update(
    predictor: &mut PredictorModel,
    trajectories: &[SensingTrajectory],
    optimizer: &mut OptimizerState,
    clip_norm: f64,
) -> Result<f64> {
    let (loss, mut grads) = predictor_gradient(predictor, trajectories)?;
    clip_grad_norm(&mut grads, clip_norm);
    let names = predictor.param_names();
    optimizer.step(&mut predictor.params_mut(), &grads, &names)?;
    Ok(loss)
}

/// Score-function estimate of the selector gradient over `trajectories`.
/// `baseline(i, j)` is subtracted from `G_j` of trajectory `i`; coordinates
/// selected but missing in the source data contribute nothing.
pub fn selector_gradient(
    selector: &SelectorModel,
    trajectories: &[SensingTrajectory],
    baseline: &(dyn Fn(usize, usize) -> f64 + Sync),
) -> Result<Vec<RealArray>> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let n = trajectories.len() as f64;
    let parts: Vec<Vec<RealArray>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| -> Result<Vec<RealArray>> {
            let mut tape = Tape::new();
            let net = selector.bind(&mut tape);
            let probs = replay_selector(&mut tape, &net, traj)?;
            let g = traj.reward_to_come();
            let mut terms = Vec::with_capacity(probs.len());
            for (j, (&p, step)) in probs.iter().zip(&traj.steps).enumerate() {
                let weight = (g[j] - baseline(i, j)) / n;
                let w: Vec<f64> = step
                    .selected_missing
                    .iter()
                    .map(|&m| if m { 0.0 } else { weight })
                    .collect();
                terms.push(weighted_log_prob_node(&mut tape, p, &step.sampled, &w)?);
            }
            let total = sum_nodes(&mut tape, &terms)?;
            let mut grads = tape.backward(total)?;
            Ok(net
                .param_nodes()
                .into_iter()
                .map(|p| grads.take(p).expect("parameter leaf"))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut acc = None;
    for g in parts {
        add_grads(&mut acc, g);
    }
    let grads = acc.expect("non-empty batch");
    let names = selector.param_names();
    for (g, name) in grads.iter().zip(&names) {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    Ok(grads)
}

/// Reward-to-come baseline: a bias-corrected exponential moving average, or
/// the leave-one-out mean over rollouts of the same episode.
#[derive(Clone, Debug)]
pub struct BaselineState {
    kind: Baseline,
    decay: f64,
    group: usize,
    ema: Vec<f64>,
    weight: Vec<f64>,
}

impl BaselineState {
    pub fn new(kind: Baseline, decay: f64) -> Self {
        Self {
            kind,
            decay,
            group: 1,
            ema: Vec::new(),
            weight: Vec::new(),
        }
    }

    /// Consecutive runs of `group` trajectories share an episode.
    pub fn with_group(mut self, group: usize) -> Self {
        self.group = group.max(1);
        self
    }

    /// Baseline for step `j` of trajectory `i` in `trajectories`.
    pub fn for_batch(&self, trajectories: &[SensingTrajectory]) -> Vec<Vec<f64>> {
        if self.kind != Baseline::LeaveOneOut {
            return trajectories
                .iter()
                .map(|t| (0..t.len()).map(|j| self.value(j)).collect())
                .collect();
        }
        let g: Vec<Vec<f64>> = trajectories.iter().map(SensingTrajectory::reward_to_come).collect();
        (0..trajectories.len())
            .map(|i| {
                let start = i / self.group * self.group;
                let end = (start + self.group).min(trajectories.len());
                let others = (start..end).filter(|&k| k != i);
                let n = (end - start - 1) as f64;
                (0..g[i].len())
                    .map(|j| {
                        if n == 0.0 {
                            0.0
                        } else {
                            others.clone().map(|k| g[k].get(j).copied().unwrap_or(0.0)).sum::<f64>() / n
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn slot(&self, j: usize) -> usize {
        match self.kind {
            Baseline::StepMovingAverage => j,
            _ => 0,
        }
    }

    pub fn value(&self, j: usize) -> f64 {
        if matches!(self.kind, Baseline::None | Baseline::LeaveOneOut) {
            return 0.0;
        }
        let k = self.slot(j);
        match (self.ema.get(k), self.weight.get(k)) {
            (Some(&e), Some(&w)) if w > 0.0 => e / w,
            _ => 0.0,
        }
    }

    pub fn observe(&mut self, trajectories: &[SensingTrajectory]) {
        if matches!(self.kind, Baseline::None | Baseline::LeaveOneOut) {
            return;
        }
        let mut sums: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for traj in trajectories {
            for (j, g) in traj.reward_to_come().into_iter().enumerate() {
                let k = self.slot(j);
                if sums.len() <= k {
                    sums.resize(k + 1, 0.0);
                    counts.resize(k + 1, 0.0);
                }
                sums[k] += g;
                counts[k] += 1.0;
            }
        }
        if self.ema.len() < sums.len() {
            self.ema.resize(sums.len(), 0.0);
            self.weight.resize(sums.len(), 0.0);
        }
        for k in 0..sums.len() {
            if counts[k] > 0.0 {
                let mean = sums[k] / counts[k];
                self.ema[k] = self.decay * self.ema[k] + (1.0 - self.decay) * mean;
                self.weight[k] = self.decay * self.weight[k] + (1.0 - self.decay);
            }
        }
    }
}

/// One optimizer step on the selector. The baseline used for this batch is
/// computed before the batch is folded into it.
pub fn selector_update(
    selector: &mut SelectorModel,
    trajectories: &[SensingTrajectory],
    optimizer: &mut OptimizerState,
    baseline: &mut BaselineState,
    clip_norm: f64,
) -> Result<()> {
    let b = baseline.for_batch(trajectories);
    let mut grads = selector_gradient(selector, trajectories, &|i, j| b[i][j])?;
    baseline.observe(trajectories);
    clip_grad_norm(&mut grads, clip_norm);
    let names = selector.param_names();
    optimizer.step(&mut selector.params_mut(), &grads, &names)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub predictor_loss: f64,
    pub selector_objective: f64,
    pub measurement_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,predictor_loss,selector_objective,measurement_rate\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration,
                crate::fmt_real(r.predictor_loss),
                crate::fmt_real(r.selector_objective),
                crate::fmt_real(r.measurement_rate)
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

pub struct TrainedModels {
    pub selector: SelectorModel,
    pub predictor: PredictorModel,
    pub history: TrainingHistory,
}

/// Mean per-step loss, mean per-step loss + cost, and fraction of selected bits.
pub fn batch_summary(trajectories: &[SensingTrajectory]) -> (f64, f64, f64) {
    let mut steps = 0.0;
    let mut loss = 0.0;
    let mut cost = 0.0;
    let mut on = 0.0;
    let mut bits = 0.0;
    for traj in trajectories {
        for s in &traj.steps {
            steps += 1.0;
            loss += s.loss;
            cost += s.cost;
            on += s.decision.count() as f64;
            bits += s.decision.len() as f64;
        }
    }
    (
        loss / steps,
        (loss + cost) / steps,
        if bits > 0.0 { on / bits } else { 0.0 },
    )
}

/// Roll out every episode with an independent rng stream keyed by
/// `(seed, tag, slot, sample)`.
pub fn batch_rollouts(
    selector: &SelectorModel,
    predictor: &PredictorModel,
    episodes: &[&Episode],
    cost: &CostModel,
    mode: SensingMode,
    samples: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<SensingTrajectory>> {
    let jobs: Vec<(usize, usize)> = (0..episodes.len())
        .flat_map(|i| (0..samples).map(move |k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag, i as u64, k as u64]));
            rollout(selector, predictor, episodes[i], cost, mode, &mut rng)
        })
        .collect()
}

pub fn joint_train(
    dataset: &[Episode],
    dims: ModelDims,
    task: Task,
    cost: &CostModel,
    config: &TrainingConfig,
) -> Result<TrainedModels> {
    joint_train_with(dataset, dims, task, cost, config, |_, _, _| Ok(()))
}

/// Alternate predictor and selector updates for `config.iterations`
/// iterations. `on_iteration(i, selector, predictor)` runs after each one.
pub fn joint_train_with(
    dataset: &[Episode],
    dims: ModelDims,
    task: Task,
    cost: &CostModel,
    config: &TrainingConfig,
    mut on_iteration: impl FnMut(usize, &SelectorModel, &PredictorModel) -> Result<()>,
) -> Result<TrainedModels> {
    config.validate()?;
    cost.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    for ep in dataset {
        ep.validate()?;
        if ep.features_dim() != dims.features {
            return Err(Error::Dimension(format!(
                "episode has {} features, model expects {}",
                ep.features_dim(),
                dims.features
            )));
        }
    }
    let mut selector = SelectorModel::init(dims, derive_seed(config.seed, &[1]), config.init)?;
    if let Some(out) = selector.head.last_mut() {
        out.bias = out.bias.map(|b| b + config.selector_bias);
    }
    let mut predictor = PredictorModel::init(dims, task, derive_seed(config.seed, &[2]), config.init)?;
    let mut sel_opt = OptimizerState::new(config.optimizer, config.selector_lr);
    let mut pred_opt = OptimizerState::new(config.optimizer, config.predictor_lr);
    let mut baseline =
        BaselineState::new(config.baseline, config.baseline_decay).with_group(config.samples_per_decision);
    let mut history = TrainingHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3]));

    for it in 0..config.iterations {
        let batch: Vec<&Episode> = (0..config.batch_size)
            .map(|_| dataset.choose(&mut rng).expect("non-empty"))
            .collect();
        let trajs = batch_rollouts(
            &selector,
            &predictor,
            &batch,
            cost,
            config.mode,
            config.samples_per_decision,
            config.seed,
            2 * it as u64,
        )?;
        let (pred_loss, _, _) = batch_summary(&trajs);
        predictor_update(&mut predictor, &trajs, &mut pred_opt, config.clip_norm)?;

        let batch: Vec<&Episode> = (0..config.batch_size)
            .map(|_| dataset.choose(&mut rng).expect("non-empty"))
            .collect();
        let trajs = batch_rollouts(
            &selector,
            &predictor,
            &batch,
            cost,
            config.mode,
            config.samples_per_decision,
            config.seed,
            2 * it as u64 + 1,
        )?;
        let (_, objective, rate) = batch_summary(&trajs);
        if it >= config.warmup_iterations {
            selector_update(&mut selector, &trajs, &mut sel_opt, &mut baseline, config.clip_norm)?;
        }

        history.records.push(HistoryRecord {
            iteration: it + 1,
            predictor_loss: pred_loss,
            selector_objective: objective,
            measurement_rate: rate,
        });
        on_iteration(it + 1, &selector, &predictor)?;
    }
    Ok(TrainedModels {
        selector,
        predictor,
        history,
    })
}

/// Evaluation rollouts over `episodes`, one per episode.
pub fn evaluate(
    selector: &SelectorModel,
    predictor: &PredictorModel,
    episodes: &[Episode],
    cost: &CostModel,
    mode: SensingMode,
    rule: DecisionRule,
    seed: u64,
) -> Result<Vec<SensingTrajectory>> {
    episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| match rule {
            DecisionRule::Sample => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX, i as u64]));
                rollout(selector, predictor, ep, cost, mode, &mut rng)
            }
            DecisionRule::Threshold(th) => rollout_with(selector, predictor, ep, cost, mode, |_, p| {
                SensingDecision(p.iter().map(|&q| q >= th).collect())
            }),
        })
        .collect()
}
