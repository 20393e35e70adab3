//! Empirical privacy-loss estimate from paired Monte Carlo runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RngStream;
use crate::error::{Error, Result};

const CHUNK: usize = 8192;
pub const MIN_TRIALS: usize = 100_000;

/// How the two runs share randomness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Both inputs consume identical random streams, so identical inputs
    /// give identical histograms and the estimate carries less noise.
    #[default]
    Common,
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub trials: usize,
    pub bins: usize,
    pub pairing: Pairing,
    pub seed: u64,
    /// Outputs are projected onto this direction; defaults to `z − z′`.
    pub direction: Option<Vec<f64>>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            trials: 1_000_000,
            bins: 50,
            pairing: Pairing::Common,
            seed: 0,
            direction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `max_bin |log(P̂[bin | z] / P̂[bin | z′])|`
    pub max_loss: f64,
    pub worst_bin: usize,
    pub trials: usize,
    pub bins: usize,
    pub direction: Vec<f64>,
}

fn projection(z: &[f64], z_prime: &[f64], out_dim: usize) -> Vec<f64> {
    let mut d: Vec<f64> = if z.len() == out_dim {
        z.iter().zip(z_prime).map(|(a, b)| a - b).collect()
    } else {
        vec![0.0; out_dim]
    };
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        d.iter_mut().for_each(|x| *x /= n);
    } else {
        d[0] = 1.0;
    }
    d
}

/// Runs `sampler` on `z` and `z_prime` for `config.trials` draws each, bins
/// the projected outputs at equal-mass quantiles of the pooled sample, and
/// reports the largest add-one smoothed log-ratio.
pub fn audit<F>(sampler: F, z: &[f64], z_prime: &[f64], config: &AuditConfig) -> Result<AuditReport>
where
    F: Fn(&[f64], &mut RngStream) -> Vec<f64> + Sync,
{
    if config.trials < MIN_TRIALS {
        return Err(Error::Parameter(format!(
            "an audit needs at least {MIN_TRIALS} trials, got {}",
            config.trials
        )));
    }
    if config.bins < 2 {
        return Err(Error::Parameter("an audit needs at least two bins".into()));
    }
    if z.len() != z_prime.len() {
        return Err(Error::Dimension("audit inputs differ in length".into()));
    }
    let probe = sampler(z, &mut RngStream::derive(config.seed, &[u64::MAX]));
    let direction = match &config.direction {
        Some(d) if d.len() == probe.len() => d.clone(),
        Some(d) => {
            return Err(Error::Dimension(format!(
                "audit direction has {} entries, outputs have {}",
                d.len(),
                probe.len()
            )))
        }
        None => projection(z, z_prime, probe.len()),
    };
    let project = |out: Vec<f64>| -> f64 { out.iter().zip(&direction).map(|(a, b)| a * b).sum() };

    let chunks = config.trials.div_ceil(CHUNK);
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(config.trials - c * CHUNK);
            let mut a = RngStream::derive(config.seed, &[c as u64, 0]);
            let mut b = match config.pairing {
                Pairing::Common => a.clone(),
                Pairing::Independent => RngStream::derive(config.seed, &[c as u64, 1]),
            };
            let xs = (0..len).map(|_| project(sampler(z, &mut a))).collect();
            let ys = (0..len).map(|_| project(sampler(z_prime, &mut b))).collect();
            (xs, ys)
        })
        .collect();
    let mut xs = Vec::with_capacity(config.trials);
    let mut ys = Vec::with_capacity(config.trials);
    for (a, b) in runs {
        xs.extend(a);
        ys.extend(b);
    }
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("mechanism produced non-finite output during audit".into()));
    }

    let mut pooled: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..config.bins)
        .map(|k| pooled[k * pooled.len() / config.bins])
        .collect();
    let histogram = |values: &[f64]| {
        let mut counts = vec![0usize; config.bins];
        for v in values {
            counts[cuts.partition_point(|c| c <= v)] += 1;
        }
        counts
    };
    let (ca, cb) = (histogram(&xs), histogram(&ys));
    let denom = (config.trials + config.bins) as f64;
    let mut max_loss = 0.0;
    let mut worst_bin = 0;
    for (k, (&a, &b)) in ca.iter().zip(&cb).enumerate() {
        let loss = (((a + 1) as f64 / denom) / ((b + 1) as f64 / denom)).ln().abs();
        if loss > max_loss {
            max_loss = loss;
            worst_bin = k;
        }
    }
    Ok(AuditReport {
        max_loss,
        worst_bin,
        trials: config.trials,
        bins: config.bins,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{LaplaceMechanism, Mechanism};

    fn config(trials: usize, pairing: Pairing) -> AuditConfig {
        AuditConfig {
            trials,
            bins: 50,
            pairing,
            seed: 17,
            direction: None,
        }
    }

    #[test]
    fn laplace_extremes_stay_under_budget() {
        // inputs ±1 with Δ₁ = 2: the true loss reaches ε in the tails
        let m = LaplaceMechanism::calibrate(1, 2.0, 1.0).unwrap();
        let r = audit(|x, rng| m.randomize(x, rng), &[1.0], &[-1.0], &config(200_000, Pairing::Common)).unwrap();
        assert!(r.max_loss <= 1.05, "{}", r.max_loss);
        assert!(r.max_loss > 0.6);
    }

    #[test]
    fn identical_inputs_under_common_randomness_give_zero() {
        let m = LaplaceMechanism::calibrate(1, 2.0, 1.0).unwrap();
        let r = audit(|x, rng| m.randomize(x, rng), &[0.3], &[0.3], &config(100_000, Pairing::Common)).unwrap();
        assert_eq!(r.max_loss, 0.0);
    }

    #[test]
    fn identical_inputs_under_independent_randomness_stay_small() {
        let m = LaplaceMechanism::calibrate(1, 2.0, 1.0).unwrap();
        let r = audit(|x, rng| m.randomize(x, rng), &[0.3], &[0.3], &config(100_000, Pairing::Independent)).unwrap();
        // per-bin log-ratio sd ≈ √(2B/N) ≈ 0.032; 50 bins
        assert!(r.max_loss < 0.15, "{}", r.max_loss);
    }

    #[test]
    fn audit_is_deterministic() {
        let m = LaplaceMechanism::calibrate(2, 2.0, 1.0).unwrap();
        let run = || audit(|x, rng| m.randomize(x, rng), &[1.0, 0.0], &[0.0, 1.0], &config(100_000, Pairing::Independent)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_small_trial_counts() {
        let m = LaplaceMechanism::calibrate(1, 2.0, 1.0).unwrap();
        assert!(audit(|x, rng| m.randomize(x, rng), &[1.0], &[0.0], &config(10, Pairing::Common)).is_err());
    }
}
