//! Experiment configuration: TOML sections with defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use v2xfl_core::fl::{ComputeModel, PartitionConfig, SyntheticConfig, TrainingConfig};
use v2xfl_core::forecast::{LatencyModel, PredictorKind};
use v2xfl_core::mobility::ScenarioConfig;
use v2xfl_core::selection::{SelectionParams, Strategy};
use v2xfl_core::v2x::{FusionConfig, MessageRates};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding the four standard MNIST IDX files.
    Mnist { path: PathBuf },
    /// Gaussian blobs; the test split uses `seed + 1`.
    Synthetic(SyntheticConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Mnist { path: PathBuf::from("data/mnist") }
    }
}

/// Independent seeds for the four sources of randomness. They override the
/// `seed` fields of the individual sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Vehicle motion and message emission.
    pub mobility: u64,
    /// Partition, model initialisation and minibatch order.
    pub data: u64,
    /// Connection sampling and latency jitter.
    pub network: u64,
    pub selection: u64,
}

impl Seeds {
    pub fn uniform(seed: u64) -> Self {
        Self { mobility: seed, data: seed, network: seed, selection: seed }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::uniform(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub strategy: Strategy,
    /// Per-round probability that a client is reachable at all.
    pub connection_rate: f64,
    /// Simulated seconds.
    pub time_budget: f64,
    /// Evaluate every this many rounds.
    pub eval_period: u64,
    pub target_accuracy: f64,
    /// End the run at the first evaluation reaching `target_accuracy`.
    pub stop_at_target: bool,
    pub max_rounds: Option<u64>,
    /// Rounds between fingerprint refreshes.
    pub fingerprint_refresh: u64,
    /// Profiling report deadline, seconds.
    pub profiling_deadline: f64,
    /// How long the server waits for an update whose uplink has broken, seconds.
    pub report_timeout: f64,
    pub aggregation_overhead: f64,
    /// Clock advance for a round without participants, seconds.
    pub retry_backoff: f64,
    pub predictor: PredictorKind,
    /// Evaluate on at most this many test samples.
    pub test_limit: Option<usize>,
    pub run_id: String,
    pub output_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            strategy: Strategy::Contextual,
            connection_rate: 1.0,
            time_budget: 600.0,
            eval_period: 1,
            target_accuracy: 0.5,
            stop_at_target: false,
            max_rounds: None,
            fingerprint_refresh: 10,
            profiling_deadline: 5.0,
            report_timeout: 5.0,
            aggregation_overhead: 0.01,
            retry_backoff: 1.0,
            predictor: PredictorKind::ConstantVelocity,
            test_limit: None,
            run_id: String::from("run"),
            output_path: None,
            trace_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub messages: MessageRates,
    pub fusion: FusionConfig,
    pub latency: LatencyModel,
    pub training: TrainingConfig,
    pub compute: ComputeModel,
    pub partition: PartitionConfig,
    pub selection: SelectionParams,
    pub dataset: DatasetSource,
    pub seeds: Seeds,
    pub experiment: ExperimentSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Copies `seeds` into the sections that consume them.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.scenario.seed = c.seeds.mobility;
        c.messages.seed = c.seeds.mobility;
        c.partition.seed = c.seeds.data;
        c.latency.seed = c.seeds.network;
        c.selection.seed = c.seeds.selection;
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(e.connection_rate > 0.0 && e.connection_rate <= 1.0) {
            return bad("connection_rate must be in (0, 1]");
        }
        if !(e.time_budget >= 0.0) {
            return bad("time_budget must be non-negative");
        }
        if e.eval_period == 0 || e.fingerprint_refresh == 0 {
            return bad("eval_period and fingerprint_refresh must be positive");
        }
        if !(e.profiling_deadline > 0.0 && e.report_timeout > 0.0 && e.retry_backoff > 0.0) {
            return bad("deadlines and backoff must be positive");
        }
        if !(e.aggregation_overhead >= 0.0) {
            return bad("aggregation_overhead must be non-negative");
        }
        if self.scenario.vehicle_count != self.partition.client_count {
            return bad("scenario.vehicle_count must equal partition.client_count (one client per vehicle)");
        }
        self.selection.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
        self.latency.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn sections_override_fields() {
        let c = ExperimentConfig::from_toml(
            "[experiment]\nstrategy = \"gossip\"\nconnection_rate = 0.5\n\n[partition]\nclasses_per_client = 1\n\n\
             [dataset]\nkind = \"synthetic\"\nsamples_per_class = 7\n",
        )
        .unwrap();
        assert_eq!(c.experiment.strategy, Strategy::Gossip);
        assert_eq!(c.experiment.connection_rate, 0.5);
        assert_eq!(c.partition.classes_per_client, 1);
        assert!(matches!(c.dataset, DatasetSource::Synthetic(SyntheticConfig { samples_per_class: 7, .. })));
        assert!(ExperimentConfig::from_toml("[experiment]\nbogus = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        c.experiment.connection_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.partition.client_count = 50;
        assert!(c.validate().is_err());
    }
}
