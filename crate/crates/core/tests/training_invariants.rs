mod common;

use asac::autodiff::OptimizerState;
use asac::harness::measurement_rates;
use asac::sensing::{CostModel, Episode, SensingDecision, SensingMode};
use asac::seqmodel::{InitScheme, ModelDims, Parameterized, PredictorModel, SelectorModel, Task};
use asac::synth::{generate, ArProcessSpec, LabelKind, LabelSpec, NoiseReading, SyntheticSpec};
use asac::training::{
    evaluate, joint_train, predictor_gradient, predictor_update, rollout, rollout_with, selector_gradient,
    DecisionRule, TrainingConfig,
};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(d: usize, h: usize, seed: u64) -> (SelectorModel, PredictorModel) {
    let dims = ModelDims::new(d, h);
    (
        SelectorModel::init(dims, seed, InitScheme::UniformScaled).unwrap(),
        PredictorModel::init(dims, Task::Regression, seed + 1, InitScheme::UniformScaled).unwrap(),
    )
}

#[test]
fn reward_to_come_equals_literal_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (sel, pred) = tiny(3, 5, 2);
    let cost = CostModel::new(vec![0.2, 0.5, 0.9], 0.7).unwrap();
    for _ in 0..5 {
        let ep = random_episode(&mut rng, 3, 6, 0.2);
        let traj = rollout(&sel, &pred, &ep, &cost, SensingMode::TimeSeries, &mut rng).unwrap();
        let trajs = std::slice::from_ref(&traj);
        let g = traj.reward_to_come();
        let t_len = traj.steps.len();

        // Gradient of log pi at step j alone: cancel every other step's weight.
        let per_step: Vec<Vec<f64>> = (0..t_len)
            .map(|j| {
                let b = |_: usize, k: usize| if k == j { g[k] - 1.0 } else { g[k] };
                flatten(&selector_gradient(&sel, trajs, &b).unwrap())
            })
            .collect();
        let p = per_step[0].len();
        let mut literal = vec![0.0; p];
        for t in 0..t_len {
            let r = traj.steps[t].loss + traj.steps[t].cost;
            for grad_j in &per_step[..=t] {
                for k in 0..p {
                    literal[k] += r * grad_j[k];
                }
            }
        }
        let reorganised = flatten(&selector_gradient(&sel, trajs, &|_, _| 0.0).unwrap());
        for (a, b) in reorganised.iter().zip(&literal) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn score_function_has_zero_mean_under_constant_reward() {
    let dims = ModelDims::new(2, 3);
    let sel = SelectorModel::init(dims, 4, InitScheme::UniformScaled).unwrap();
    let pred = PredictorModel::init(dims, Task::Regression, 5, InitScheme::Zeros).unwrap();
    let cost = CostModel::new(vec![1.0, 1.0], 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ep = random_episode(&mut rng, 2, 3, 0.0);
    let n = 20_000;
    let p = sel.param_count();
    let mut sum = vec![0.0; p];
    let mut sq = vec![0.0; p];
    for _ in 0..n {
        let traj = rollout(&sel, &pred, &ep, &cost, SensingMode::TimeSeries, &mut rng).unwrap();
        let g = flatten(&selector_gradient(&sel, std::slice::from_ref(&traj), &|_, _| 0.0).unwrap());
        for k in 0..p {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    for k in 0..p {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se + 1e-12, "coordinate {k}: mean {mean}, se {se}");
    }
}

#[test]
fn selected_missing_coordinates_contribute_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (sel, pred) = tiny(3, 4, 8);
    let cost = CostModel::uniform(3, 1.0, 0.5).unwrap();
    let ep = random_episode(&mut rng, 3, 4, 1.0);
    let traj = rollout_with(&sel, &pred, &ep, &cost, SensingMode::TimeSeries, |_, _| {
        SensingDecision(vec![true; 3])
    })
    .unwrap();
    assert_eq!(traj.total_cost(), 0.0);
    let g = flatten(&selector_gradient(&sel, std::slice::from_ref(&traj), &|_, _| 0.0).unwrap());
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_predictor_gradient_matches_squared_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (sel, pred) = tiny(2, 3, 10);
    let cost = CostModel::uniform(2, 1.0, 0.1).unwrap();
    let ep = random_episode(&mut rng, 2, 1, 0.0);
    let traj = rollout(&sel, &pred, &ep, &cost, SensingMode::TimeSeries, &mut rng).unwrap();
    let trajs = std::slice::from_ref(&traj);
    let (_, g) = predictor_gradient(&pred, trajs).unwrap();
    let fd = fd_gradient(&pred, 1e-5, |m| predictor_objective(m, trajs));
    for (a, b) in flatten(&g).iter().zip(&fd) {
        assert!(rel_err(*a, *b, 1e-6) < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn predictor_loss_decreases_under_full_observation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (sel, mut pred) = tiny(2, 4, 12);
    let cost = CostModel::uniform(2, 1.0, 0.0).unwrap();
    let trajs: Vec<_> = (0..4)
        .map(|_| {
            let ep = random_episode(&mut rng, 2, 3, 0.0);
            rollout_with(&sel, &pred, &ep, &cost, SensingMode::TimeSeries, |_, _| {
                SensingDecision(vec![true; 2])
            })
            .unwrap()
        })
        .collect();
    let mut opt = OptimizerState::adam(1e-3);
    let mut prev = f64::INFINITY;
    for it in 0..50 {
        let loss = predictor_update(&mut pred, &trajs, &mut opt, f64::INFINITY).unwrap();
        assert!(loss < prev, "iteration {it}: {loss} >= {prev}");
        prev = loss;
    }
}

fn small_dataset() -> Vec<Episode> {
    generate(&SyntheticSpec {
        process: ArProcessSpec {
            phi: vec![0.0, 0.5, 0.9],
            steps: 5,
            episodes: 200,
            seed: 13,
        },
        label: LabelSpec {
            kind: LabelKind::ExpSum,
            noise: 0.1,
            reading: NoiseReading::Variance,
        },
        noisy: None,
        noisy_reading: NoiseReading::Variance,
    })
    .unwrap()
}

#[test]
fn measurement_rate_falls_as_lambda_grows() {
    let data = small_dataset();
    let config = TrainingConfig {
        iterations: 150,
        batch_size: 16,
        selector_lr: 1e-2,
        predictor_lr: 1e-2,
        seed: 14,
        ..TrainingConfig::default()
    };
    let rates: Vec<f64> = [0.01, 0.1, 1.0]
        .iter()
        .map(|&lambda| {
            let cost = CostModel::uniform(3, 1.0, lambda).unwrap();
            let m = joint_train(&data, ModelDims::new(3, 6), Task::Regression, &cost, &config).unwrap();
            let trajs = evaluate(
                &m.selector,
                &m.predictor,
                &data,
                &cost,
                SensingMode::TimeSeries,
                DecisionRule::Sample,
                15,
            )
            .unwrap();
            let r = measurement_rates(&trajs, None).unwrap();
            r.iter().sum::<f64>() / r.len() as f64
        })
        .collect();
    let rises: Vec<f64> = rates.windows(2).map(|w| w[1] - w[0]).filter(|&x| x > 0.0).collect();
    assert!(
        rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.02),
        "mean rates {rates:?}"
    );
}

#[test]
fn zero_iterations_rejected() {
    let data = small_dataset();
    let cost = CostModel::uniform(3, 1.0, 0.1).unwrap();
    let config = TrainingConfig {
        iterations: 0,
        ..TrainingConfig::default()
    };
    assert!(joint_train(&data, ModelDims::new(3, 4), Task::Regression, &cost, &config).is_err());
}
