//! Measurement rates and prediction metrics pooled over (episode, step).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sensing::SensingTrajectory;
use crate::seqmodel::{class_index, Task};

use super::config::Metric;

/// Per-feature fraction of steps at which the feature was measured,
/// optionally restricted to steps whose label satisfies `condition`.
pub fn measurement_rates(
    trajectories: &[SensingTrajectory],
    condition: Option<&dyn Fn(f64) -> bool>,
) -> Result<Vec<f64>> {
    let d = trajectories
        .iter()
        .flat_map(|t| t.steps.first())
        .map(|s| s.decision.len())
        .next()
        .ok_or_else(|| Error::Metric("no steps to count".into()))?;
    let mut on = vec![0usize; d];
    let mut n = 0usize;
    for step in trajectories.iter().flat_map(|t| &t.steps) {
        if condition.is_some_and(|c| !c(step.label)) {
            continue;
        }
        if step.decision.len() != d {
            return Err(Error::Dimension("trajectories disagree on feature count".into()));
        }
        n += 1;
        for (c, &b) in on.iter_mut().zip(step.decision.bits()) {
            *c += b as usize;
        }
    }
    if n == 0 {
        return Err(Error::Metric("no steps satisfy the label condition".into()));
    }
    Ok(on.into_iter().map(|c| c as f64 / n as f64).collect())
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Metric("rmse needs equal-length, non-empty inputs".into()));
    }
    let sse: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

fn check_binary(scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() || scores.is_empty() {
        return Err(Error::Metric(
            "scores and labels must be equal-length and non-empty".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC/AUPRC need both classes present".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve from average ranks (ties count one half).
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, positive)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: sum over distinct thresholds of recall gain times
/// precision at that threshold.
pub fn auprc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, positive)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let gp = idx[i..=j].iter().filter(|&&k| positive[k]).count();
        tp += gp;
        fp += j + 1 - i - gp;
        ap += gp as f64 / pos as f64 * tp as f64 / (tp + fp) as f64;
        i = j + 1;
    }
    Ok(ap)
}

/// The requested metrics over every step of every trajectory. For
/// classification, the score is the predicted probability of `adverse_label`.
pub fn compute_metrics(
    trajectories: &[SensingTrajectory],
    task: Task,
    metrics: &[Metric],
    adverse_label: f64,
) -> Result<BTreeMap<String, f64>> {
    let steps: Vec<_> = trajectories.iter().flat_map(|t| &t.steps).collect();
    if steps.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    let mut out = BTreeMap::new();
    match task {
        Task::Regression => {
            let preds: Vec<f64> = steps.iter().map(|s| s.prediction[0]).collect();
            let labels: Vec<f64> = steps.iter().map(|s| s.label).collect();
            for m in metrics {
                match m {
                    Metric::Rmse => out.insert(m.name().to_string(), rmse(&preds, &labels)?),
                    _ => return Err(Error::Metric(format!("{} needs a classification task", m.name()))),
                };
            }
        }
        Task::Classification { classes } => {
            let k = class_index(adverse_label, classes)?;
            let scores: Vec<f64> = steps.iter().map(|s| s.prediction[k]).collect();
            let positive: Vec<bool> = steps.iter().map(|s| s.label == adverse_label).collect();
            for m in metrics {
                let v = match m {
                    Metric::Auroc => auroc(&scores, &positive)?,
                    Metric::Auprc => auprc(&scores, &positive)?,
                    Metric::Rmse => return Err(Error::Metric("rmse needs a regression task".into())),
                };
                out.insert(m.name().to_string(), v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{ObservedVector, SensingDecision, StepRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step(bits: Vec<bool>, label: f64, prediction: Vec<f64>) -> StepRecord {
        let d = bits.len();
        StepRecord {
            probs: vec![0.5; d],
            sampled: SensingDecision(bits.clone()),
            decision: SensingDecision(bits.clone()),
            charged: SensingDecision(bits),
            selected_missing: vec![false; d],
            observed: ObservedVector::empty(d),
            prediction,
            label,
            loss: 0.0,
            cost: 0.0,
        }
    }

    #[test]
    fn always_measuring_gives_one() {
        let traj = SensingTrajectory {
            steps: (0..4).map(|_| step(vec![true, true, true], 0.0, vec![0.0])).collect(),
        };
        assert_eq!(measurement_rates(&[traj], None).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn alternating_gives_half() {
        let traj = SensingTrajectory {
            steps: (0..6).map(|t| step(vec![t % 2 == 0], 0.0, vec![0.0])).collect(),
        };
        assert_eq!(measurement_rates(&[traj], None).unwrap(), vec![0.5]);
    }

    #[test]
    fn conditional_rates_and_empty_filter() {
        let traj = SensingTrajectory {
            steps: vec![
                step(vec![true], 1.0, vec![0.0]),
                step(vec![false], 0.0, vec![0.0]),
                step(vec![true], 1.0, vec![0.0]),
            ],
        };
        let ones = |y: f64| y == 1.0;
        let zeros = |y: f64| y == 0.0;
        let never = |_: f64| false;
        let trajs = [traj];
        assert_eq!(measurement_rates(&trajs, Some(&ones)).unwrap(), vec![1.0]);
        assert_eq!(measurement_rates(&trajs, Some(&zeros)).unwrap(), vec![0.0]);
        assert!(measurement_rates(&trajs, Some(&never)).is_err());
        assert!(measurement_rates(&[], None).is_err());
    }

    #[test]
    fn perfect_predictions() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let s = [0.1, 0.2, 0.8, 0.9];
        let p = [false, false, true, true];
        assert_eq!(auroc(&s, &p).unwrap(), 1.0);
        assert_eq!(auprc(&s, &p).unwrap(), 1.0);
    }

    #[test]
    fn ties_and_inversions() {
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        // ranks: pos at 0.3 and 0.7 among {0.2,0.3,0.5,0.7}: pairs won 1 + 2 of 4
        assert_eq!(auroc(&[0.2, 0.3, 0.5, 0.7], &[false, true, false, true]).unwrap(), 0.75);
        // descending: 0.7(+) p=1, 0.5(-), 0.3(+) p=2/3 -> (1 + 2/3)/2
        let ap = auprc(&[0.2, 0.3, 0.5, 0.7], &[false, true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auprc(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        let a = auroc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn auroc_matches_pair_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
        let mut won = 0.0;
        let mut pairs = 0.0;
        for i in 0..200 {
            for j in 0..200 {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    won += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((auroc(&scores, &labels).unwrap() - won / pairs).abs() < 1e-12);
    }

    #[test]
    fn metric_map_contains_only_requested() {
        let traj = SensingTrajectory {
            steps: vec![
                step(vec![true], 1.0, vec![0.2, 0.8]),
                step(vec![true], 0.0, vec![0.7, 0.3]),
            ],
        };
        let task = Task::Classification { classes: 2 };
        let m = compute_metrics(std::slice::from_ref(&traj), task, &[Metric::Auroc], 1.0).unwrap();
        assert_eq!(m.keys().collect::<Vec<_>>(), ["auroc"]);
        assert_eq!(m["auroc"], 1.0);
        assert!(compute_metrics(&[traj], task, &[Metric::Rmse], 1.0).is_err());
    }
}
