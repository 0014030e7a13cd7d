//! Sensing decisions, observation assembly and measurement cost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeRef, RealArray, Tape};
use crate::error::{Error, Result};

/// Value stored in unobserved slots. The accompanying mask bit tells it apart
/// from a genuine zero measurement.
pub const SENTINEL: f64 = 0.0;

/// One bit per feature; `true` means "measure".
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensingDecision(pub Vec<bool>);

impl SensingDecision {
    pub fn none(d: usize) -> Self {
        Self(vec![false; d])
    }

    pub fn all(d: usize) -> Self {
        Self(vec![true; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Decision number `index` in the enumeration of `{0,1}^d`, bit `i` of
    /// `index` giving feature `i`.
    pub fn from_index(index: usize, d: usize) -> Self {
        Self((0..d).map(|i| index >> i & 1 == 1).collect())
    }
}

/// Feature vector as seen by the networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedVector {
    pub values: Vec<f64>,
    /// `true` where a value is present.
    pub mask: Vec<bool>,
    /// `true` where the feature was selected but the source had no value.
    pub missing: Vec<bool>,
}

impl ObservedVector {
    pub fn empty(d: usize) -> Self {
        Self {
            values: vec![SENTINEL; d],
            mask: vec![false; d],
            missing: vec![false; d],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensingMode {
    /// Nested decisions: a measured feature stays measured and its first value persists.
    Static,
    /// Every step is a fresh decision and re-measuring costs again.
    TimeSeries,
}

/// Per-feature cost `c`, trade-off `lambda`, label multiplier `eta` and delays `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub costs: Vec<f64>,
    pub lambda: f64,
    /// Multiplier applied when the label equals `adverse_label`.
    pub eta: f64,
    pub adverse_label: f64,
    pub delays: Vec<usize>,
}

impl CostModel {
    pub fn new(costs: Vec<f64>, lambda: f64) -> Result<Self> {
        let d = costs.len();
        let m = Self {
            costs,
            lambda,
            eta: 1.0,
            adverse_label: 1.0,
            delays: vec![0; d],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(d: usize, cost: f64, lambda: f64) -> Result<Self> {
        Self::new(vec![cost; d], lambda)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delays(mut self, delays: Vec<usize>) -> Result<Self> {
        self.delays = delays;
        self.validate()?;
        Ok(self)
    }

    pub fn features(&self) -> usize {
        self.costs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.costs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument("costs must be finite and >= 0".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if self.delays.len() != self.costs.len() {
            return Err(Error::Dimension(format!(
                "{} delays for {} costs",
                self.delays.len(),
                self.costs.len()
            )));
        }
        Ok(())
    }

    /// Label multiplier `m(y)`.
    pub fn multiplier(&self, y: f64) -> f64 {
        if y == self.adverse_label {
            self.eta
        } else {
            1.0
        }
    }

    pub fn has_delays(&self) -> bool {
        self.delays.iter().any(|&t| t > 0)
    }
}

/// One subject's stream. `availability[t][i] == false` marks a value absent
/// from the source data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub availability: Vec<Vec<bool>>,
}

impl Episode {
    /// Fully available episode.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let availability = features.iter().map(|x| vec![true; x.len()]).collect();
        Self::with_availability(features, labels, availability)
    }

    pub fn with_availability(features: Vec<Vec<f64>>, labels: Vec<f64>, availability: Vec<Vec<bool>>) -> Result<Self> {
        let ep = Self {
            features,
            labels,
            availability,
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.features.len();
        if t == 0 {
            return Err(Error::InvalidArgument("episode must have at least one step".into()));
        }
        if self.labels.len() != t || self.availability.len() != t {
            return Err(Error::Dimension(format!(
                "episode has {t} feature rows, {} labels, {} availability rows",
                self.labels.len(),
                self.availability.len()
            )));
        }
        let d = self.features[0].len();
        if self.features.iter().any(|x| x.len() != d) || self.availability.iter().any(|a| a.len() != d) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Everything recorded at one step of a rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Selector output `e_t` the decision was drawn from.
    pub probs: Vec<f64>,
    /// Raw draw from `probs`; this is what the policy gradient scores.
    pub sampled: SensingDecision,
    /// Effective decision: equals `sampled` in time-series mode, the
    /// cumulative mask in static mode.
    pub decision: SensingDecision,
    /// Features charged for at this step.
    pub charged: SensingDecision,
    /// Selected at this step but absent in the source data.
    pub selected_missing: Vec<bool>,
    pub observed: ObservedVector,
    pub prediction: Vec<f64>,
    pub label: f64,
    pub loss: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingTrajectory {
    pub steps: Vec<StepRecord>,
}

impl SensingTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_loss(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    /// Reward-to-come `G_j = sum_{t >= j} (l_t + cost_t)` for every step `j`.
    pub fn reward_to_come(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (j, s) in self.steps.iter().enumerate().rev() {
            acc += s.loss + s.cost;
            out[j] = acc;
        }
        out
    }
}

/// `x(s)`: keep `x^i` where `s^i = 1`, sentinel elsewhere.
pub fn apply_mask(x: &[f64], s: &SensingDecision) -> Result<ObservedVector> {
    if x.len() != s.len() {
        return Err(Error::Dimension(format!(
            "{} values, {} decision bits",
            x.len(),
            s.len()
        )));
    }
    Ok(ObservedVector {
        values: x
            .iter()
            .zip(s.bits())
            .map(|(&v, &b)| if b { v } else { SENTINEL })
            .collect(),
        mask: s.0.clone(),
        missing: vec![false; x.len()],
    })
}

/// Observation at step `t = decisions.len()` (1-based) under measurement
/// delays: feature `i` is present iff `t - tau_i >= 1` and it was selected at
/// step `t - tau_i`, in which case it carries `x_{t - tau_i}^i`.
pub fn apply_delayed_mask(
    history: &[Vec<f64>],
    decisions: &[SensingDecision],
    delays: &[usize],
) -> Result<ObservedVector> {
    apply_delayed_mask_available(history, None, decisions, delays)
}

/// As [`apply_delayed_mask`], additionally hiding values absent from the
/// source data and flagging them in `missing`.
pub fn apply_delayed_mask_available(
    history: &[Vec<f64>],
    availability: Option<&[Vec<bool>]>,
    decisions: &[SensingDecision],
    delays: &[usize],
) -> Result<ObservedVector> {
    let t = decisions.len();
    if t == 0 {
        return Err(Error::InvalidArgument("need at least one decision".into()));
    }
    if history.len() < t {
        return Err(Error::Dimension(format!("{} feature rows for step {t}", history.len())));
    }
    let d = delays.len();
    if decisions.iter().any(|s| s.len() != d) || history[..t].iter().any(|x| x.len() != d) {
        return Err(Error::Dimension(format!("expected {d} features")));
    }
    let mut out = ObservedVector::empty(d);
    for i in 0..d {
        if delays[i] >= t {
            continue;
        }
        let u = t - 1 - delays[i];
        if !decisions[u].0[i] {
            continue;
        }
        let available = availability.is_none_or(|a| a[u][i]);
        if available {
            out.values[i] = history[u][i];
            out.mask[i] = true;
        } else {
            out.missing[i] = true;
        }
    }
    Ok(out)
}

/// Elementwise OR: once measured, always measured.
pub fn enforce_static_nesting(prev: &SensingDecision, new: &SensingDecision) -> SensingDecision {
    SensingDecision(prev.0.iter().zip(&new.0).map(|(&a, &b)| a || b).collect())
}

/// Independent Bernoulli draw per feature.
pub fn sample_decision<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> SensingDecision {
    SensingDecision(probs.iter().map(|&p| rng.random::<f64>() < p).collect())
}

/// `log pi(s) = sum_i s^i log p^i + (1 - s^i) log(1 - p^i)`.
pub fn decision_log_prob(probs: &[f64], s: &SensingDecision) -> f64 {
    probs
        .iter()
        .zip(s.bits())
        .map(|(&p, &b)| if b { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// Tape version of [`decision_log_prob`] with a per-coordinate weight:
/// `sum_i w_i [s^i log p^i + (1 - s^i) log(1 - p^i)]`. A zero weight drops
/// the coordinate from the gradient.
pub fn weighted_log_prob_node(
    tape: &mut Tape,
    probs: NodeRef,
    s: &SensingDecision,
    weights: &[f64],
) -> Result<NodeRef> {
    let d = tape.value(probs).len();
    if s.len() != d || weights.len() != d {
        return Err(Error::Dimension(format!(
            "probs {d}, decision {}, weights {}",
            s.len(),
            weights.len()
        )));
    }
    let on: Vec<f64> = s
        .bits()
        .iter()
        .zip(weights)
        .map(|(&b, &w)| if b { w } else { 0.0 })
        .collect();
    let off: Vec<f64> = s
        .bits()
        .iter()
        .zip(weights)
        .map(|(&b, &w)| if b { 0.0 } else { w })
        .collect();
    let lp = tape.log(probs)?;
    let q = tape.one_minus(probs)?;
    let lq = tape.log(q)?;
    let a = tape.scale_by(lp, RealArray::vector(on))?;
    let b = tape.scale_by(lq, RealArray::vector(off))?;
    let sum = tape.add(a, b)?;
    tape.sum(sum)
}

pub fn decision_log_prob_node(tape: &mut Tape, probs: NodeRef, s: &SensingDecision) -> Result<NodeRef> {
    let w = vec![1.0; s.len()];
    weighted_log_prob_node(tape, probs, s, &w)
}

/// `lambda * m(y) * sum_i c^i s^i`, skipping features absent from the source.
pub fn step_cost(s: &SensingDecision, cost: &CostModel, y: f64, available: Option<&[bool]>) -> f64 {
    let raw: f64 = s
        .bits()
        .iter()
        .zip(&cost.costs)
        .enumerate()
        .filter(|(i, (&b, _))| b && available.is_none_or(|a| a[*i]))
        .map(|(_, (_, &c))| c)
        .sum();
    cost.lambda * cost.multiplier(y) * raw
}
