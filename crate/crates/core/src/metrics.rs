//! Saliency metrics (KL divergence, correlation coefficient) and task-weighted
//! control errors.

use std::fmt;
use std::str::FromStr;

use crate::attention::AttentionMap;
use crate::error::{Error, Result};

/// Steering, throttle, brake and speed: the four supervised driving tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSignal {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
    pub speed: f64,
}

impl ControlSignal {
    pub const TASKS: [&'static str; 4] = ["steer", "throttle", "brake", "speed"];

    pub fn new(steer: f64, throttle: f64, brake: f64, speed: f64) -> Result<Self> {
        let s = Self {
            steer,
            throttle,
            brake,
            speed,
        };
        if s.as_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control signal".into()));
        }
        if !(-1.0..=1.0).contains(&steer)
            || !(0.0..=1.0).contains(&throttle)
            || !(0.0..=1.0).contains(&brake)
            || speed < 0.0
        {
            return Err(Error::invalid(format!("control signal out of range: {s:?}")));
        }
        Ok(s)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.steer, self.throttle, self.brake, self.speed]
    }
}

/// Per-task weights for steer, throttle, brake and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskWeights([f64; 4]);

impl TaskWeights {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("task weights must be finite and non-negative"));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid("at least one task weight must be positive"));
        }
        Ok(Self(weights))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self([0.5, 0.2, 0.2, 0.1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    epsilon: f64,
    task_weights: TaskWeights,
}

impl MetricConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(epsilon: f64, task_weights: TaskWeights) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon, task_weights })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn task_weights(&self) -> &TaskWeights {
        &self.task_weights
    }
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: Self::DEFAULT_EPSILON,
            task_weights: TaskWeights::default(),
        }
    }
}

fn check_pair(a: &AttentionMap, b: &AttentionMap) -> Result<()> {
    a.ensure_same_dims(b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMap);
    }
    Ok(())
}

/// `Σ_i Y(i)·log(ε + Y(i)/(ε + Ŷ(i)))` with `Y` the truth and `Ŷ` the prediction.
pub fn kl_divergence(truth: &AttentionMap, pred: &AttentionMap, cfg: &MetricConfig) -> Result<f64> {
    check_pair(truth, pred)?;
    Ok(kl_divergence_values(truth.values(), pred.values(), cfg.epsilon))
}

pub(crate) fn kl_divergence_values(truth: &[f64], pred: &[f64], eps: f64) -> f64 {
    truth
        .iter()
        .zip(pred)
        .map(|(y, p)| y * (eps + y / (eps + p)).ln())
        .sum()
}

/// Pearson correlation between two maps, flattened.
pub fn correlation_coefficient(a: &AttentionMap, b: &AttentionMap) -> Result<f64> {
    a.ensure_same_dims(b)?;
    pearson(a.values(), b.values())
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::Undefined("correlation of a constant map".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Undefined("correlation of a constant map".into()));
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorMode {
    Mse,
    Mae,
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMode::Mse => "mse",
            ErrorMode::Mae => "mae",
        })
    }
}

impl FromStr for ErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(ErrorMode::Mse),
            "mae" => Ok(ErrorMode::Mae),
            other => Err(Error::invalid(format!("unknown error mode '{other}'"))),
        }
    }
}

/// Per-task mean error, combined as `Σ_k w_k·err_k / Σ_k w_k`.
///
/// The `speed` field of each prediction carries the predicted speed.
pub fn multitask_error(
    preds: &[ControlSignal],
    targets: &[ControlSignal],
    cfg: &MetricConfig,
    mode: ErrorMode,
) -> Result<f64> {
    let per_task = per_task_error(preds, targets, mode)?;
    let w = cfg.task_weights.as_array();
    Ok(per_task.iter().zip(&w).map(|(e, w)| e * w).sum::<f64>() / cfg.task_weights.total())
}

/// Mean error of each of the four tasks.
pub fn per_task_error(preds: &[ControlSignal], targets: &[ControlSignal], mode: ErrorMode) -> Result<[f64; 4]> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if preds.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut sums = [0.0; 4];
    for (p, t) in preds.iter().zip(targets) {
        let (p, t) = (p.as_array(), t.as_array());
        for k in 0..4 {
            let d = p[k] - t[k];
            sums[k] += match mode {
                ErrorMode::Mse => d * d,
                ErrorMode::Mae => d.abs(),
            };
        }
    }
    Ok(sums.map(|s| s / preds.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, rng: &mut ChaCha8Rng, sparsity: f64) -> AttentionMap {
        let v = (0..w * h)
            .map(|_| {
                if rng.random::<f64>() < sparsity {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        AttentionMap::from_weights(w, h, v).unwrap()
    }

    fn kl_oracle(y: &[f64], p: &[f64], eps: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            let ratio = y[i] / (eps + p[i]);
            s += y[i] * (eps + ratio).ln();
        }
        s
    }

    #[test]
    fn identical_uniform_maps() {
        let u = AttentionMap::uniform(10, 10);
        let kl = kl_divergence(&u, &u, &MetricConfig::default()).unwrap();
        assert!(kl.abs() < 1e-4);
    }

    #[test]
    fn concentrated_truth_against_vanishing_prediction() {
        let mut truth = vec![0.0; 16];
        truth[5] = 1.0;
        let mut pred = vec![1.0; 16];
        pred[5] = 1e-12;
        let (t, p) = (
            AttentionMap::from_weights(4, 4, truth).unwrap(),
            AttentionMap::from_weights(4, 4, pred).unwrap(),
        );
        let cfg = MetricConfig::default();
        let kl = kl_divergence(&t, &p, &cfg).unwrap();
        assert!(kl > 10.0);
        assert!((kl - kl_oracle(t.values(), p.values(), 1e-7)).abs() < 1e-9);
    }

    #[test]
    fn two_by_two_hand_summation() {
        let t = AttentionMap::from_weights(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let p = AttentionMap::uniform(2, 2);
        let kl = kl_divergence(&t, &p, &MetricConfig::default()).unwrap();
        assert!((kl - 2.0f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn kl_errors() {
        let cfg = MetricConfig::default();
        assert!(matches!(
            kl_divergence(&AttentionMap::uniform(2, 2), &AttentionMap::uniform(2, 3), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kl_divergence(&AttentionMap::uniform(2, 2), &AttentionMap::empty(2, 2), &cfg),
            Err(Error::EmptyMap)
        ));
        assert!(MetricConfig::new(0.0, TaskWeights::default()).is_err());
    }

    #[test]
    fn kl_matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_map(8, 6, &mut rng, 0.3);
            let b = random_map(8, 6, &mut rng, 0.3);
            let got = kl_divergence(&a, &b, &MetricConfig::default()).unwrap();
            assert!((got - kl_oracle(a.values(), b.values(), 1e-7)).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_vanishes_with_epsilon_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_map(6, 6, &mut rng, 0.0);
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-3, 1e-5, 1e-7, 1e-9] {
            let kl = kl_divergence(&y, &y, &MetricConfig::new(eps, TaskWeights::default()).unwrap())
                .unwrap()
                .abs();
            assert!(kl <= prev);
            prev = kl;
        }
        assert!(prev < 1e-6);
        // nonincreasing in epsilon for distinct pairs
        for _ in 0..20 {
            let a = random_map(6, 6, &mut rng, 0.2);
            let b = random_map(6, 6, &mut rng, 0.2);
            let mut last = f64::INFINITY;
            for eps in [1e-9, 1e-7, 1e-5, 1e-3, 1e-2] {
                let kl = kl_divergence_values(a.values(), b.values(), eps);
                assert!(kl <= last + 1e-12);
                last = kl;
            }
        }
    }

    fn cc_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma: f64 = a.iter().sum::<f64>() / n;
        let mb: f64 = b.iter().sum::<f64>() / n;
        let num: f64 = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum();
        let da: f64 = (0..a.len()).map(|i| (a[i] - ma).powi(2)).sum::<f64>().sqrt();
        let db: f64 = (0..a.len()).map(|i| (b[i] - mb).powi(2)).sum::<f64>().sqrt();
        num / (da * db)
    }

    #[test]
    fn cc_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_map(7, 5, &mut rng, 0.0);
        assert!((correlation_coefficient(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let peak = a.values().iter().copied().fold(0.0, f64::max);
        let neg = AttentionMap::from_weights(7, 5, a.values().iter().map(|v| peak - v).collect()).unwrap();
        assert!((correlation_coefficient(&a, &neg).unwrap() + 1.0).abs() < 1e-9);
        for _ in 0..20 {
            let b = random_map(7, 5, &mut rng, 0.1);
            let c = random_map(7, 5, &mut rng, 0.1);
            let got = correlation_coefficient(&b, &c).unwrap();
            assert!((got - cc_oracle(b.values(), c.values())).abs() < 1e-9);
        }
        assert!(matches!(
            correlation_coefficient(&AttentionMap::uniform(3, 3), &a.crop(0, 0, 3, 3).unwrap()),
            Err(Error::Undefined(_))
        ));
    }

    fn sig(s: f64, t: f64, b: f64, v: f64) -> ControlSignal {
        ControlSignal::new(s, t, b, v).unwrap()
    }

    #[test]
    fn multitask_error_cases() {
        let cfg = MetricConfig::default();
        let t = vec![sig(0.1, 0.5, 0.0, 3.0), sig(-0.4, 0.0, 1.0, 0.0)];
        assert_eq!(multitask_error(&t, &t, &cfg, ErrorMode::Mse).unwrap(), 0.0);
        let unit = MetricConfig::new(1e-7, TaskWeights::new([1.0; 4]).unwrap()).unwrap();
        let p = [sig(0.2, 0.6, 0.1, 3.1)];
        let got = multitask_error(&p, &t[..1], &unit, ErrorMode::Mae).unwrap();
        assert!((got - 0.1).abs() < 1e-12);
        assert!(multitask_error(&[], &[], &cfg, ErrorMode::Mse).is_err());
        assert!(multitask_error(&p, &t, &cfg, ErrorMode::Mse).is_err());
    }

    #[test]
    fn multitask_error_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut gen = || {
            sig(
                rng.random_range(-1.0..1.0),
                rng.random(),
                rng.random(),
                rng.random_range(0.0..8.0),
            )
        };
        let preds: Vec<_> = (0..37).map(|_| gen()).collect();
        let targets: Vec<_> = (0..37).map(|_| gen()).collect();
        let w = [0.5, 0.2, 0.2, 0.1];
        let cfg = MetricConfig::default();
        for mode in [ErrorMode::Mse, ErrorMode::Mae] {
            let mut total = 0.0;
            for (p, t) in preds.iter().zip(&targets) {
                let d = [
                    p.steer - t.steer,
                    p.throttle - t.throttle,
                    p.brake - t.brake,
                    p.speed - t.speed,
                ];
                for k in 0..4 {
                    let e = if mode == ErrorMode::Mse {
                        d[k] * d[k]
                    } else {
                        d[k].abs()
                    };
                    total += w[k] * e;
                }
            }
            let expected = total / 37.0 / 1.0;
            assert!((multitask_error(&preds, &targets, &cfg, mode).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_weights_select_a_single_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut gen = || {
            sig(
                rng.random_range(-1.0..1.0),
                rng.random(),
                rng.random(),
                rng.random_range(0.0..8.0),
            )
        };
        let preds: Vec<_> = (0..10).map(|_| gen()).collect();
        let targets: Vec<_> = (0..10).map(|_| gen()).collect();
        let per = per_task_error(&preds, &targets, ErrorMode::Mae).unwrap();
        for k in 0..4 {
            let mut w = [0.0; 4];
            w[k] = 2.5;
            let cfg = MetricConfig::new(1e-7, TaskWeights::new(w).unwrap()).unwrap();
            let got = multitask_error(&preds, &targets, &cfg, ErrorMode::Mae).unwrap();
            assert!((got - per[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn control_signal_validation() {
        assert!(ControlSignal::new(1.5, 0.0, 0.0, 0.0).is_err());
        assert!(ControlSignal::new(0.0, 0.0, 0.0, -1.0).is_err());
        assert!(TaskWeights::new([0.0; 4]).is_err());
        assert!(TaskWeights::new([-1.0, 1.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn cc_is_symmetric_and_affine_invariant(seed in 0u64..500, alpha in -5.0f64..5.0, beta in 0.0f64..3.0) {
            prop_assume!(alpha.abs() > 1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_map(6, 6, &mut rng, 0.0);
            let b = random_map(6, 6, &mut rng, 0.0);
            let ab = pearson(a.values(), b.values()).unwrap();
            prop_assert!((ab - pearson(b.values(), a.values()).unwrap()).abs() < 1e-12);
            let shifted: Vec<f64> = b.values().iter().map(|v| alpha * v + beta).collect();
            let got = pearson(a.values(), &shifted).unwrap();
            prop_assert!((got - alpha.signum() * ab).abs() < 1e-9);
        }
    }
}
