#![allow(dead_code)]

use asac::sensing::{
    decision_log_prob, CostModel, Episode, ObservedVector, SensingDecision, SensingMode, SensingTrajectory,
};
use asac::seqmodel::{prediction_loss, HiddenState, Parameterized, PredictorModel, SelectorModel};
use asac::training::rollout_with;
use rand::Rng;

pub fn random_episode(rng: &mut impl Rng, d: usize, t: usize, missing: f64) -> Episode {
    let features = (0..t)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let availability = (0..t)
        .map(|_| (0..d).map(|_| rng.random::<f64>() >= missing).collect())
        .collect();
    Episode::with_availability(features, labels, availability).unwrap()
}

pub fn binary_episode(rng: &mut impl Rng, d: usize, t: usize) -> Episode {
    let features = (0..t)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..t).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    Episode::new(features, labels).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Batch-mean summed prediction loss, computed with the plain forward pass.
pub fn predictor_objective(pred: &PredictorModel, trajs: &[SensingTrajectory]) -> f64 {
    let mut total = 0.0;
    for traj in trajs {
        let mut state = HiddenState::zeros(pred.dims.hidden);
        for step in &traj.steps {
            let (next, out) = pred.step(&state, &step.observed.mask, &step.observed.values).unwrap();
            state = next;
            total += prediction_loss(&out, step.label, pred.task).unwrap();
        }
    }
    total / trajs.len() as f64
}

/// Selector probabilities for every step of `traj`, recomputed with the
/// plain forward pass.
pub fn selector_probs(sel: &SelectorModel, traj: &SensingTrajectory) -> Vec<Vec<f64>> {
    let d = sel.dims.features;
    let empty = ObservedVector::empty(d);
    let (mut state, mut probs) = sel
        .step(&HiddenState::zeros(sel.dims.hidden), &empty.mask, &empty.values)
        .unwrap();
    let mut out = Vec::new();
    for step in &traj.steps {
        out.push(probs.clone());
        let (ns, np) = sel.step(&state, &step.observed.mask, &step.observed.values).unwrap();
        state = ns;
        probs = np;
    }
    out
}

/// `(1/n) sum_traj sum_j weight(traj, j) * log pi(s_j)`, dropping coordinates
/// selected but missing.
pub fn selector_objective(
    sel: &SelectorModel,
    trajs: &[SensingTrajectory],
    weight: &dyn Fn(usize, usize) -> f64,
) -> f64 {
    let mut total = 0.0;
    for (i, traj) in trajs.iter().enumerate() {
        for (j, (p, step)) in selector_probs(sel, traj).iter().zip(&traj.steps).enumerate() {
            let w = weight(i, j);
            for k in 0..p.len() {
                if step.selected_missing[k] {
                    continue;
                }
                let bit = SensingDecision(vec![step.sampled.bits()[k]]);
                total += w * decision_log_prob(&[p[k]], &bit);
            }
        }
    }
    total / trajs.len() as f64
}

/// Central finite-difference gradient of `f` over a model's flat parameters.
pub fn fd_gradient<M: Parameterized + Clone>(model: &M, h: f64, f: impl Fn(&M) -> f64) -> Vec<f64> {
    let base = model.flat_params();
    let mut probe = model.clone();
    (0..base.len())
        .map(|k| {
            let mut x = base.clone();
            x[k] = base[k] + h;
            probe.set_flat_params(&x).unwrap();
            let up = f(&probe);
            x[k] = base[k] - h;
            probe.set_flat_params(&x).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn flatten(grads: &[asac::autodiff::RealArray]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().to_vec()).collect()
}

/// Decision sequence number `index` over `t` steps of `d` bits.
pub fn decision_sequence(index: usize, d: usize, t: usize) -> Vec<SensingDecision> {
    (0..t)
        .map(|k| SensingDecision::from_index(index >> (k * d), d))
        .collect()
}

/// Exact expected total `sum_t (l_t + cost_t)` under the selector policy,
/// by enumerating every decision sequence.
pub fn exact_objective(
    sel: &SelectorModel,
    pred: &PredictorModel,
    ep: &Episode,
    cost: &CostModel,
    mode: SensingMode,
) -> f64 {
    let d = ep.features_dim();
    let t = ep.len();
    (0..1usize << (d * t))
        .map(|idx| {
            let seq = decision_sequence(idx, d, t);
            let traj = rollout_with(sel, pred, ep, cost, mode, |k, _| seq[k].clone()).unwrap();
            let prob: f64 = traj
                .steps
                .iter()
                .map(|s| decision_log_prob(&s.probs, &s.sampled).exp())
                .product();
            prob * (traj.total_loss() + traj.total_cost())
        })
        .sum()
}
