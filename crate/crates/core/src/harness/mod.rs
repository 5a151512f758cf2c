//! Experiment runner: configuration, seeded paired trials, detector
//! registry, CSV/JSON outputs and the verification suites behind `verify`.

pub mod detectors;
pub mod experiment;
pub mod output;
pub mod seed;
pub mod verify;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize};

use crate::amp::{AmpConfig, DenoiserChoice};
use crate::detection::GammaGrid;
use crate::error::{Error, Result};
use crate::scenario::NetworkConfig;

pub use detectors::{Detection, Detector, DetectorRegistry, TrialContext};
pub use experiment::{measure_runtime, run_experiment, run_trials, ConfigKey, ExperimentResults, RunSummary};
pub use verify::{run_property_suite, SuiteReport};

/// AP clustering used by a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DccMode {
    AllAps,
    /// Each device is served by its `C` strongest APs.
    TopC(usize),
}

impl DccMode {
    pub fn cluster_size(self) -> Option<usize> {
        match self {
            DccMode::AllAps => None,
            DccMode::TopC(c) => Some(c),
        }
    }
}

impl fmt::Display for DccMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DccMode::AllAps => write!(f, "all_aps"),
            DccMode::TopC(c) => write!(f, "top_c{c}"),
        }
    }
}

/// Which AMP iterations go to llr.csv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrOutput {
    #[default]
    Final,
    AllIterations,
    None,
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

fn default_dcc() -> Vec<DccMode> {
    vec![DccMode::AllAps]
}
fn default_workers() -> usize {
    1
}
fn default_calibration_trials() -> usize {
    100
}
fn default_iterations() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    /// Detector names, see [`DetectorRegistry`].
    pub schemes: Vec<String>,
    /// Power scheme names, see [`crate::allocation::PowerRegistry`].
    pub power_schemes: Vec<String>,
    #[serde(default = "default_dcc", deserialize_with = "one_or_many")]
    pub dcc: Vec<DccMode>,
    /// Pilot lengths to sweep; empty means the network's own `pilot_length`.
    #[serde(default)]
    pub pilot_lengths: Vec<usize>,
    pub trials: usize,
    #[serde(default = "default_iterations")]
    pub amp_iterations: usize,
    #[serde(default)]
    pub gamma_grid: GammaGrid,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Trials used to estimate per-AP error rates for hard-decision fusion.
    #[serde(default = "default_calibration_trials")]
    pub calibration_trials: usize,
    #[serde(default)]
    pub llr_output: LlrOutput,
    #[serde(default)]
    pub denoiser: DenoiserChoice,
}

impl ExperimentConfig {
    /// Master seed of the trial streams.
    pub fn master_seed(&self) -> u64 {
        self.network.rng_seed
    }

    pub fn pilot_lengths(&self) -> Vec<usize> {
        if self.pilot_lengths.is_empty() {
            vec![self.network.pilot_length]
        } else {
            self.pilot_lengths.clone()
        }
    }

    pub fn amp_config(&self) -> AmpConfig {
        AmpConfig {
            iterations: self.amp_iterations,
            early_stop_tol: None,
            denoiser: self.denoiser,
            record_history: self.llr_output == LlrOutput::AllIterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.amp_iterations == 0 {
            return bad("amp_iterations must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.schemes.is_empty() || self.power_schemes.is_empty() || self.dcc.is_empty() {
            return bad("schemes, power_schemes and dcc must be non-empty");
        }
        if self.pilot_lengths().contains(&0) {
            return bad("pilot lengths must be positive");
        }
        if self.dcc.contains(&DccMode::TopC(0)) {
            return bad("top_c needs C ≥ 1");
        }
        if self.schemes.iter().any(|s| s == "hard_fusion") && self.calibration_trials == 0 {
            return bad("hard_fusion needs calibration_trials ≥ 1");
        }
        let detectors = DetectorRegistry::default();
        for s in &self.schemes {
            detectors.get(s)?;
        }
        let powers = crate::allocation::PowerRegistry::default();
        for p in &self.power_schemes {
            powers.get(p)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ExperimentConfig {
    /// Every detector, power scheme and clustering at the default network.
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            schemes: vec!["camp".into(), "damp".into(), "hard_fusion".into()],
            power_schemes: vec!["full".into(), "master".into(), "avg".into()],
            dcc: vec![DccMode::AllAps, DccMode::TopC(10)],
            pilot_lengths: vec![40, 20],
            trials: 200,
            amp_iterations: default_iterations(),
            gamma_grid: GammaGrid::default(),
            output_dir: None,
            workers: default_workers(),
            calibration_trials: default_calibration_trials(),
            llr_output: LlrOutput::Final,
            denoiser: DenoiserChoice::Auto,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_json() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schemes": ["damp"], "power_schemes": ["full"], "dcc": {"top_c": 4}, "trials": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.dcc, vec![DccMode::TopC(4)]);
        assert_eq!(cfg.pilot_lengths(), vec![40]);
        assert_eq!(cfg.calibration_trials, 100);
        let list = ExperimentConfig::from_json(
            r#"{"schemes": ["camp"], "power_schemes": ["avg"], "dcc": ["all_aps", {"top_c": 10}], "trials": 1}"#,
        )
        .unwrap();
        assert_eq!(list.dcc, vec![DccMode::AllAps, DccMode::TopC(10)]);
    }

    #[test]
    fn rejects_unknown_names_and_empty_runs() {
        let base = ExperimentConfig { trials: 1, ..ExperimentConfig::default() };
        assert!(base.validate().is_ok());
        let unknown = ExperimentConfig { schemes: vec!["omp".into()], ..base.clone() };
        assert!(matches!(unknown.validate(), Err(Error::UnknownStrategy { .. })));
        assert!(ExperimentConfig { trials: 0, ..base.clone() }.validate().is_err());
        assert!(ExperimentConfig { amp_iterations: 0, ..base }.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(DccMode::TopC(10).to_string(), "top_c10");
    }
}
