//! Finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of scalar parameter entries probed (at least one per tensor).
    pub samples: usize,
    /// Denominator floor for the relative error, so gradients that are zero
    /// on both sides compare as equal.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples: 64,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entry with the largest error: (parameter, index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares `loss_fn`'s reverse-mode gradients with central finite differences
/// on a random subset of parameter entries and returns the maximum relative error.
pub fn grad_check<F>(params: &ParameterSet, loss_fn: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<(f64, Gradients)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_string(), t.len())).collect();
    let total: usize = tensors.iter().map(|(_, n)| n).sum();
    let mut probes: Vec<(usize, usize)> = (0..tensors.len())
        .map(|t| (t, rng.random_range(0..tensors[t].1)))
        .collect();
    while probes.len() < cfg.samples.max(tensors.len()) {
        let mut k = rng.random_range(0..total);
        let mut t = 0;
        while k >= tensors[t].1 {
            k -= tensors[t].1;
            t += 1;
        }
        probes.push((t, k));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (t, k) in probes {
        let name = &tensors[t].0;
        let original = params.get(name)?.data()[k];
        let eval = |work: &mut ParameterSet, v: f64| -> Result<f64> {
            work.get_mut(name)?.data_mut()[k] = v;
            let (l, _) = loss_fn(work)?;
            if !l.is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
            Ok(l)
        };
        let plus = eval(&mut work, original + cfg.step)?;
        let minus = eval(&mut work, original - cfg.step)?;
        work.get_mut(name)?.data_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.get(name).map_or(0.0, |g| g[k]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((name.clone(), k, a, numeric));
        }
    }
    Ok(report)
}
