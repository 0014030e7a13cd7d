//! Synthetic benchmark data: autoregressive Gaussian features
//! `X_t = phi * X_{t-1} + (1 - phi) * Z_t` with `X_1 = Z_1 ~ N(0, I)`,
//! optional noisy copies `X + delta`, and three label mechanisms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::Episode;
use crate::training::derive_seed;

/// How the second parameter of `N(0, v)` is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseReading {
    Variance,
    StdDev,
}

impl NoiseReading {
    pub fn std_dev(self, v: f64) -> f64 {
        match self {
            NoiseReading::Variance => v.sqrt(),
            NoiseReading::StdDev => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArProcessSpec {
    pub phi: Vec<f64>,
    pub steps: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl ArProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phi.is_empty() || self.steps == 0 {
            return Err(Error::InvalidArgument("need d >= 1 and T >= 1".into()));
        }
        if self.phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("phi entries must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisySpec {
    pub gamma: f64,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// `exp(-0.1 |sum_i X^i|) + eps`
    ExpSum,
    /// `exp(-|0.1 X^1 + 0.2 X^2 + 0.3 X^3 + 0.4 X^4|) + eps`
    Weighted,
    /// `1` with probability `exp(-0.1 |sum_i X^i + eps - 2|)`, else `0`.
    BinaryYdep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub kind: LabelKind,
    pub noise: f64,
    pub reading: NoiseReading,
}

/// One feature matrix (`T x d`) per episode.
pub type FeatureSeries = Vec<Vec<f64>>;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw `N` episodes of the autoregressive process. Episode `i` uses its own
/// stream keyed by `(seed, i)`.
pub fn gen_ar_gaussian(spec: &ArProcessSpec) -> Result<Vec<FeatureSeries>> {
    spec.validate()?;
    Ok((0..spec.episodes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xA5, i as u64]));
            let mut rows = Vec::with_capacity(spec.steps);
            let mut prev: Vec<f64> = spec.phi.iter().map(|_| normal(&mut rng)).collect();
            rows.push(prev.clone());
            for _ in 1..spec.steps {
                let next: Vec<f64> = spec
                    .phi
                    .iter()
                    .zip(&prev)
                    .map(|(&phi, &x)| phi * x + (1.0 - phi) * normal(&mut rng))
                    .collect();
                rows.push(next.clone());
                prev = next;
            }
            rows
        })
        .collect())
}

fn check_noise(features: &[Vec<f64>], noise: &[f64]) -> Result<()> {
    if features.len() != noise.len() {
        return Err(Error::Dimension(format!(
            "{} rows, {} noise draws",
            features.len(),
            noise.len()
        )));
    }
    Ok(())
}

/// `Y_t = exp(-0.1 |sum_i X_t^i|) + eps_t`.
pub fn label_exp_sum(features: &[Vec<f64>], noise: &[f64]) -> Result<Vec<f64>> {
    check_noise(features, noise)?;
    Ok(features
        .iter()
        .zip(noise)
        .map(|(x, e)| (-0.1 * x.iter().sum::<f64>().abs()).exp() + e)
        .collect())
}

pub const WEIGHTED_COEFFS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// `Y_t = exp(-|0.1 X^1 + 0.2 X^2 + 0.3 X^3 + 0.4 X^4|) + eps_t`.
pub fn label_weighted(features: &[Vec<f64>], noise: &[f64]) -> Result<Vec<f64>> {
    check_noise(features, noise)?;
    if features.iter().any(|x| x.len() < WEIGHTED_COEFFS.len()) {
        return Err(Error::Dimension("weighted label needs at least 4 features".into()));
    }
    Ok(features
        .iter()
        .zip(noise)
        .map(|(x, e)| {
            let z: f64 = WEIGHTED_COEFFS.iter().zip(x).map(|(c, v)| c * v).sum();
            (-z.abs()).exp() + e
        })
        .collect())
}

/// `P(Y_t = 1) = exp(-0.1 |s - 2|)` where `s = sum_i X_t^i + eps_t`.
pub fn ydep_probability(sum_plus_noise: f64) -> f64 {
    (-0.1 * (sum_plus_noise - 2.0).abs()).exp().clamp(0.0, 1.0)
}

/// Binary labels: `Y_t = 1` iff `uniform_t < P(Y_t = 1)`.
pub fn label_binary_ydep(features: &[Vec<f64>], noise: &[f64], uniforms: &[f64]) -> Result<Vec<f64>> {
    check_noise(features, noise)?;
    check_noise(features, uniforms)?;
    Ok(features
        .iter()
        .zip(noise)
        .zip(uniforms)
        .map(|((x, e), u)| {
            let p = ydep_probability(x.iter().sum::<f64>() + e);
            if *u < p {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Append `X + delta`, `delta ~ N(0, gamma)`, giving `2d` columns.
pub fn add_noisy_features(
    features: &[Vec<f64>],
    gamma: f64,
    reading: NoiseReading,
    seed: u64,
) -> Result<FeatureSeries> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    let sd = reading.std_dev(gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(features
        .iter()
        .map(|x| {
            let mut row = x.clone();
            row.extend(x.iter().map(|v| v + sd * normal(&mut rng)));
            row
        })
        .collect())
}

/// Complete description of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub process: ArProcessSpec,
    pub label: LabelSpec,
    pub noisy: Option<NoisySpec>,
    pub noisy_reading: NoiseReading,
}

impl SyntheticSpec {
    /// Feature columns in the generated episodes.
    pub fn features(&self) -> usize {
        self.process.phi.len() * if self.noisy.is_some() { 2 } else { 1 }
    }
}

/// Generate episodes. Labels depend on the true features only; noisy copies
/// (if any) follow the true columns.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Episode>> {
    let series = gen_ar_gaussian(&spec.process)?;
    let sd = spec.label.reading.std_dev(spec.label.noise);
    series
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.process.seed, &[0x1A, i as u64]));
            let noise: Vec<f64> = x.iter().map(|_| sd * normal(&mut rng)).collect();
            let labels = match spec.label.kind {
                LabelKind::ExpSum => label_exp_sum(&x, &noise)?,
                LabelKind::Weighted => label_weighted(&x, &noise)?,
                LabelKind::BinaryYdep => {
                    let u: Vec<f64> = x.iter().map(|_| rng.random::<f64>()).collect();
                    label_binary_ydep(&x, &noise, &u)?
                }
            };
            let features = match spec.noisy {
                Some(n) => add_noisy_features(
                    &x,
                    n.gamma,
                    spec.noisy_reading,
                    derive_seed(spec.process.seed, &[0xD3, i as u64]),
                )?,
                None => x,
            };
            Episode::new(features, labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(phi: Vec<f64>, steps: usize, episodes: usize) -> ArProcessSpec {
        ArProcessSpec {
            phi,
            steps,
            episodes,
            seed: 3,
        }
    }

    #[test]
    fn phi_one_is_constant() {
        let eps = gen_ar_gaussian(&spec(vec![1.0, 0.5], 6, 3)).unwrap();
        for ep in eps {
            assert!(ep.iter().all(|row| row[0] == ep[0][0]));
        }
    }

    #[test]
    fn phi_zero_has_no_lag_correlation() {
        let eps = gen_ar_gaussian(&spec(vec![0.0], 2, 10_000)).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = eps.iter().map(|e| (e[0][0], e[1][0])).unzip();
        let r = correlation(&a, &b);
        assert!(r.abs() < 0.05, "r = {r}");
    }

    // Var(X_t) = phi^2 Var(X_{t-1}) + (1-phi)^2, Cov(X_t, X_{t-1}) = phi Var(X_{t-1}).
    #[test]
    fn lag_one_correlation_matches_recursion() {
        let phi: f64 = 0.9;
        let t = 10;
        let eps = gen_ar_gaussian(&spec(vec![phi], t, 20_000)).unwrap();
        let mut var = vec![1.0];
        for k in 1..t {
            var.push(phi * phi * var[k - 1] + (1.0 - phi).powi(2));
        }
        let rho = phi * var[t - 2] / (var[t - 2] * var[t - 1]).sqrt();
        let (a, b): (Vec<f64>, Vec<f64>) = eps.iter().map(|e| (e[t - 2][0], e[t - 1][0])).unzip();
        let r = correlation(&a, &b);
        let se = (1.0 - rho * rho) / (a.len() as f64).sqrt();
        assert!((r - rho).abs() < 4.0 * se, "r = {r}, rho = {rho}");
    }

    #[test]
    fn stationary_variance() {
        for c in [0.0, 0.25, 0.5] {
            let eps = gen_ar_gaussian(&spec(vec![c], 10, 20_000)).unwrap();
            let x: Vec<f64> = eps.iter().map(|e| e[9][0]).collect();
            let v = variance(&x);
            let target = (1.0 - c) * (1.0 - c) / (1.0 - c * c);
            assert!((v / target - 1.0).abs() < 0.1, "c={c} v={v} target={target}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let s = SyntheticSpec {
            process: spec(vec![0.2, 0.7], 5, 20),
            label: LabelSpec {
                kind: LabelKind::BinaryYdep,
                noise: 0.1,
                reading: NoiseReading::Variance,
            },
            noisy: Some(NoisySpec { gamma: 0.4, cost: 0.2 }),
            noisy_reading: NoiseReading::Variance,
        };
        let a = generate(&s).unwrap();
        assert_eq!(a, generate(&s).unwrap());
        assert_eq!(a[0].features_dim(), 4);
        assert_eq!(s.features(), 4);
    }

    #[test]
    fn exp_sum_examples() {
        let l = label_exp_sum(&[vec![0.0; 10], vec![1.0; 10], vec![-1.0; 10]], &[0.0; 3]).unwrap();
        assert_eq!(l[0], 1.0);
        assert!((l[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(l[1], l[2]);
    }

    #[test]
    fn weighted_examples() {
        let mut x = vec![0.0; 10];
        assert_eq!(label_weighted(&[x.clone()], &[0.0]).unwrap()[0], 1.0);
        x[5] = 9.0;
        x[9] = -4.0;
        assert_eq!(label_weighted(&[x], &[0.0]).unwrap()[0], 1.0);
        let y = label_weighted(&[vec![1.0; 10]], &[0.0]).unwrap()[0];
        assert!((y - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn noisy_features_examples() {
        let x = vec![vec![0.3, -1.2]; 4];
        let n = add_noisy_features(&x, 1e-12, NoiseReading::Variance, 1).unwrap();
        for row in &n {
            assert_eq!(row.len(), 4);
            assert!((row[2] - row[0]).abs() < 1e-5 && (row[3] - row[1]).abs() < 1e-5);
        }
        let x: Vec<Vec<f64>> = (0..100_000).map(|_| vec![0.0]).collect();
        let n = add_noisy_features(&x, 0.4, NoiseReading::Variance, 2).unwrap();
        let delta: Vec<f64> = n.iter().map(|r| r[1] - r[0]).collect();
        assert!((variance(&delta) / 0.4 - 1.0).abs() < 0.05);
        assert!(add_noisy_features(&x, 0.0, NoiseReading::Variance, 2).is_err());
    }

    #[test]
    fn noisy_columns_uncorrelated_with_label_given_truth() {
        let s = SyntheticSpec {
            process: spec(vec![0.5; 4], 1, 20_000),
            label: LabelSpec {
                kind: LabelKind::Weighted,
                noise: 0.1,
                reading: NoiseReading::Variance,
            },
            noisy: Some(NoisySpec { gamma: 0.4, cost: 0.1 }),
            noisy_reading: NoiseReading::Variance,
        };
        let eps = generate(&s).unwrap();
        let delta: Vec<f64> = eps.iter().map(|e| e.features[0][7] - e.features[0][3]).collect();
        let y: Vec<f64> = eps.iter().map(|e| e.labels[0]).collect();
        assert!(correlation(&delta, &y).abs() < 4.0 / (y.len() as f64).sqrt());
    }

    #[test]
    fn ydep_probability_examples() {
        assert_eq!(ydep_probability(2.0), 1.0);
        assert!((ydep_probability(12.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((ydep_probability(-8.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn binary_positive_rate_matches_probability() {
        let n = 100_000;
        let x = vec![vec![0.5, 0.5]; n];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = vec![-2.0; n];
        let u: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y = label_binary_ydep(&x, &noise, &u).unwrap();
        let p = ydep_probability(-1.0);
        let rate = y.iter().sum::<f64>() / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * sigma, "{rate} vs {p}");
    }

    #[test]
    fn invalid_phi_rejected() {
        assert!(gen_ar_gaussian(&spec(vec![1.2], 3, 1)).is_err());
    }

    fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    fn variance(x: &[f64]) -> f64 {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }
}
