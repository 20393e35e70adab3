use std::path::{Path, PathBuf};

use aniso_ldp::models::{Activation, Architecture, TrainConfig};
use aniso_ldp::pipeline::{CalibrationOptions, ClipMode, MechanismSpec};
use aniso_ldp::{Error, Norm, Result};
use serde::{Deserialize, Serialize};

use crate::data::{ClassificationSpec, RegressionSpec};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "ANISO_LDP_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv {
        public: PathBuf,
        private: PathBuf,
        target: String,
    },
}

/// One row of the results table: a base mechanism, with or without the
/// reshaping transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismEntry {
    /// Parsed with [`MechanismSpec`]'s `FromStr`, e.g. `laplace`,
    /// `gaussian:1e-5`, `privunit2`, `cw-laplace:mse-optimal`.
    pub mechanism: String,
    #[serde(default)]
    pub reshape: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_norm: Option<Norm>,
}

impl MechanismEntry {
    pub fn new(mechanism: &str, reshape: bool) -> Self {
        Self {
            mechanism: mechanism.into(),
            reshape,
            clip: None,
            bound_norm: None,
        }
    }

    pub fn spec(&self) -> Result<MechanismSpec> {
        self.mechanism.parse()
    }

    /// `laplace`, `laplace+pa`, ...
    pub fn id(&self) -> String {
        if self.reshape {
            format!("{}+pa", self.mechanism)
        } else {
            self.mechanism.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

/// Assertions evaluated on a finished sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum Check {
    /// Every mechanism's mean metric improves (weakly) as ε grows, up to a
    /// relative `tolerance`.
    Monotone {
        #[serde(default)]
        tolerance: f64,
    },
    /// `stat(better) ≤ ratio · stat(worse)` at `epsilon`.
    RatioAtMost {
        better: String,
        worse: String,
        epsilon: f64,
        #[serde(default)]
        statistic: Statistic,
        ratio: f64,
    },
    /// `stat(better) ≥ stat(worse) + gain` at `epsilon`.
    GainAtLeast {
        better: String,
        worse: String,
        epsilon: f64,
        #[serde(default)]
        statistic: Statistic,
        gain: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Classifier architecture; regression always uses least squares.
    pub architecture: Architecture,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp {
                hidden: (10, 32),
                activation: Activation::Relu,
            },
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub regression: RegressionSpec,
    #[serde(default)]
    pub classification: ClassificationSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub calibration: CalibrationOptions,
    pub mechanisms: Vec<MechanismEntry>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker count; `None` uses every core. Capped by `ANISO_LDP_THREADS`.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Also report the error of the aggregated private mean.
    #[serde(default)]
    pub report_mean_error: bool,
    #[serde(default)]
    pub checks: Vec<Check>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Parameter("the ε grid is empty".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Parameter("every ε must be positive and finite".into()));
        }
        if self.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("the ε grid must be strictly ascending".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Parameter("at least one seed is required".into()));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::Parameter("no mechanisms listed".into()));
        }
        let mut ids = Vec::new();
        for entry in &self.mechanisms {
            entry.spec()?;
            let id = entry.id();
            if ids.contains(&id) {
                return Err(Error::Parameter(format!("mechanism '{id}' listed twice")));
            }
            ids.push(id);
        }
        if self.threads == Some(0) {
            return Err(Error::Parameter("threads must be at least 1".into()));
        }
        for check in &self.checks {
            if let Check::RatioAtMost { better, worse, epsilon, .. } | Check::GainAtLeast { better, worse, epsilon, .. } = check {
                for id in [better, worse] {
                    if id != crate::sweep::CLEAN_ID && !ids.contains(id) {
                        return Err(Error::Parameter(format!("check refers to unknown mechanism '{id}'")));
                    }
                }
                if !self.epsilons.contains(epsilon) {
                    return Err(Error::Parameter(format!("check refers to ε = {epsilon}, not on the grid")));
                }
            }
        }
        Ok(())
    }

    /// The configured worker count after applying the environment cap.
    pub fn effective_threads(&self) -> usize {
        let requested = self.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        match threads_from_env() {
            Some(cap) => requested.min(cap),
            None => requested,
        }
    }
}

/// `ANISO_LDP_THREADS` as a positive count; unset, empty, or unparsable
/// values are ignored with a warning.
pub fn threads_from_env() -> Option<usize> {
    let raw = std::env::var(THREADS_ENV).ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            if !raw.trim().is_empty() {
                log::warn!("ignoring {THREADS_ENV}={raw:?}");
            }
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{"task": "regression", "mechanisms": [{"mechanism": "laplace"}, {"mechanism": "laplace", "reshape": true}],
                "epsilons": [0.5, 1.0]}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = minimal();
        assert_eq!(cfg.seeds, 20);
        assert_eq!(cfg.calibration.jacobian_samples, 500);
        assert_eq!(cfg.calibration.percentile, 0.9);
        assert_eq!(cfg.regression.m, 16);
        assert_eq!(cfg.data, DataSource::Synthetic);
        assert_eq!(cfg.mechanisms[1].id(), "laplace+pa");
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = minimal();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_grids() {
        let mut cfg = minimal();
        cfg.epsilons = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        cfg.epsilons = vec![-1.0];
        assert!(cfg.validate().is_err());
        cfg.epsilons = vec![1.0];
        cfg.seeds = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_mechanisms() {
        assert!(ExperimentConfig::from_json(r#"{"task": "regression", "mechanisms": [], "epsilons": [1], "bogus": 1}"#).is_err());
        let mut cfg = minimal();
        cfg.mechanisms.push(MechanismEntry::new("nope", false));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checks_must_name_listed_mechanisms() {
        let mut cfg = minimal();
        cfg.checks.push(Check::RatioAtMost {
            better: "laplace+pa".into(),
            worse: "gaussian".into(),
            epsilon: 1.0,
            statistic: Statistic::Median,
            ratio: 0.25,
        });
        assert!(cfg.validate().is_err());
    }
}
