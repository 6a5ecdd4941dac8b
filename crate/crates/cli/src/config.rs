//! Experiment configuration files.
//!
//! Every command reads one JSON document. Keys are flat, unknown keys are
//! rejected, and errors name the offending JSON path (`.interval`,
//! `.testbed.tasks[2].size`, ...).

use std::path::Path;

use mixsched::mixture::DesConfig;
use mixsched::sampler::{BatchMode, DEFAULT_REFERENCE_SIZE};
use mixsched::scheduler::{DeltaScaling, ScheduleConfig, Strategy};
use mixsched::synthetic::DynamicsModel;
use mixsched::testbed::Scenario;
use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_alpha() -> f64 {
    DesConfig::default().alpha
}

fn default_lambda_floor() -> f64 {
    DesConfig::default().lambda_floor
}

fn default_true() -> bool {
    true
}

fn default_batch_size() -> usize {
    8
}

fn default_reference_size() -> usize {
    DEFAULT_REFERENCE_SIZE
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_grid_resolution() -> usize {
    10
}

fn default_steps() -> usize {
    300
}

fn default_dataset_size() -> usize {
    64
}

/// Analytic multi-task dynamics; see `mixsched::synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    /// Per-task learning rates.
    pub eta: Vec<f64>,
    /// Initial score of every task.
    pub initial_scores: Vec<f64>,
    /// Per-task score asymptotes.
    pub s_max: Vec<f64>,
    /// `coupling[j][i]`: effect of task-`i` data on task `j`; zero diagonal.
    /// Defaults to no interaction.
    #[serde(default)]
    pub coupling: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Placeholder samples per task (the dynamics ignore sample identity).
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
}

impl SyntheticScenario {
    pub fn model(&self) -> Result<DynamicsModel, CliError> {
        let k = self.eta.len();
        let coupling = self.coupling.clone().unwrap_or_else(|| vec![vec![0.0; k]; k]);
        DynamicsModel::new(
            self.initial_scores.clone(),
            self.s_max.clone(),
            self.eta.clone(),
            coupling,
            self.noise_sigma,
        )
        .map_err(|e| CliError::config(".synthetic", e))
    }

    pub fn k(&self) -> usize {
        self.eta.len()
    }
}

/// Keys shared by every command that runs the scheduling loop.
macro_rules! schedule_keys {
    ($(#[$meta:meta])* pub struct $name:ident { $($(#[$fmeta:meta])* pub $field:ident : $ty:ty,)* }) => {
        $(#[$meta])*
        pub struct $name {
            /// Total training iterations `I`.
            pub iterations: u64,
            /// Evaluation interval `T` (`1 <= T <= I`).
            pub interval: u64,
            #[serde(default = "default_alpha")]
            pub alpha: f64,
            #[serde(default = "default_lambda_floor")]
            pub lambda_floor: f64,
            #[serde(default = "default_true")]
            pub normalize_deltas: bool,
            #[serde(default)]
            pub delta_scaling: DeltaScaling,
            #[serde(default = "default_batch_size")]
            pub batch_size: usize,
            #[serde(default)]
            pub batch_mode: BatchMode,
            /// Held-out reference samples per task.
            #[serde(default = "default_reference_size")]
            pub reference_size: usize,
            $($(#[$fmeta])* pub $field: $ty,)*
        }

        impl $name {
            pub fn schedule(&self, strategy: Strategy, seed: u64) -> ScheduleConfig {
                ScheduleConfig {
                    total_iterations: self.iterations,
                    interval: self.interval,
                    des: DesConfig {
                        alpha: self.alpha,
                        lambda_floor: self.lambda_floor,
                        normalize_deltas: self.normalize_deltas,
                    },
                    strategy,
                    batch_size: self.batch_size,
                    seed,
                    batch_mode: self.batch_mode,
                    reference_size: self.reference_size,
                    delta_scaling: self.delta_scaling,
                }
            }
        }
    };
}

schedule_keys! {
    /// `compare`: every listed strategy on every seed.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
    #[serde(deny_unknown_fields)]
    pub struct CompareConfig {
        /// At least two strategies (repeats allowed).
        pub strategies: Vec<Strategy>,
        #[serde(default = "default_seeds")]
        pub seeds: Vec<u64>,
        /// Restoration testbed; the desk scenario when neither scenario key is given.
        #[serde(default)]
        pub testbed: Option<Scenario>,
        #[serde(default)]
        pub synthetic: Option<SyntheticScenario>,
    }
}

schedule_keys! {
    /// `simulate`: one schedule on the synthetic dynamics.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
    #[serde(deny_unknown_fields)]
    pub struct SimulateConfig {
        #[serde(default = "default_des")]
        pub strategy: Strategy,
        #[serde(default)]
        pub seed: u64,
        pub synthetic: SyntheticScenario,
    }
}

schedule_keys! {
    /// `train`: one schedule on the restoration testbed.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
    #[serde(deny_unknown_fields)]
    pub struct TrainConfig {
        #[serde(default = "default_des")]
        pub strategy: Strategy,
        #[serde(default)]
        pub seed: u64,
        #[serde(default)]
        pub testbed: Option<Scenario>,
        /// Reference samples per task written as PGM (input, output, target).
        #[serde(default)]
        pub save_samples: usize,
    }
}

fn default_des() -> Strategy {
    Strategy::Des
}

/// `sweep`: fixed-mixture landscape over a simplex grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Grid step is `1 / grid_resolution`; must be >= 2.
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// Dynamics steps per grid point (synthetic scenario).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Training iterations per grid point (testbed scenario).
    #[serde(default)]
    pub iterations: Option<u64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub batch_mode: BatchMode,
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also render landscape.svg (only possible for 2 or 3 tasks).
    #[serde(default = "default_true")]
    pub svg: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticScenario>,
    #[serde(default)]
    pub testbed: Option<Scenario>,
}

fn default_tokens() -> usize {
    6
}

fn default_dim() -> usize {
    4
}

fn default_moe_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_router_cases() -> usize {
    1000
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-4
}

/// `moe-check`: invariant and gradient suite for the expert layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MoeCheckConfig {
    #[serde(default = "default_tokens")]
    pub tokens: usize,
    /// Channels of the fused input.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_moe_seeds")]
    pub seeds: Vec<u64>,
    /// Random router cases for the simplex and shift checks.
    #[serde(default = "default_router_cases")]
    pub router_cases: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Largest acceptable relative gradient error.
    #[serde(default = "default_tolerance")]
    pub gradient_tolerance: f64,
}

impl Default for MoeCheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
    }
}

/// Reads and validates a config, naming the failing JSON path on error.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let path = json_path(&err.path().to_string());
        let inner = err.into_inner();
        let msg = inner.to_string();
        // serde reports a missing key at its parent; point at the key itself.
        let path = match missing_field(&msg) {
            Some(field) if path == "." => format!(".{field}"),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        CliError::Config(format!("{path}: {msg}"))
    })
}

fn json_path(p: &str) -> String {
    if p == "." || p.is_empty() {
        ".".to_string()
    } else {
        format!(".{p}")
    }
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Named JSON schemas for every config and output document.
pub fn schemas() -> Vec<(&'static str, schemars::Schema)> {
    use crate::report::{ArgmaxReport, CompareSummary, MoeReport, RunSummary};
    vec![
        ("compare-config", schemars::schema_for!(CompareConfig)),
        ("sweep-config", schemars::schema_for!(SweepConfig)),
        ("simulate-config", schemars::schema_for!(SimulateConfig)),
        ("train-config", schemars::schema_for!(TrainConfig)),
        ("moe-check-config", schemars::schema_for!(MoeCheckConfig)),
        ("summary", schemars::schema_for!(CompareSummary)),
        ("argmax", schemars::schema_for!(ArgmaxReport)),
        ("run-summary", schemars::schema_for!(RunSummary)),
        ("moe-report", schemars::schema_for!(MoeReport)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        match parse::<CompareConfig>(text) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_its_path() {
        let m = err(r#"{"iterations": 10, "strategies": ["Mixing", "DES"]}"#);
        assert!(m.starts_with(".interval:"), "{m}");
    }

    #[test]
    fn unknown_key_rejected() {
        let m = err(r#"{"iterations": 10, "interval": 5, "strategies": ["DES"], "alhpa": 1}"#);
        assert!(m.contains("alhpa"), "{m}");
    }

    #[test]
    fn nested_errors_name_nested_paths() {
        let m = err(
            r#"{"iterations": 10, "interval": 5, "strategies": ["DES"],
                "testbed": {"tasks": [{"name": "n", "size": 3}]}}"#,
        );
        assert!(m.starts_with(".testbed.tasks[0].degradation:"), "{m}");
        let m = err(r#"{"iterations": 10, "interval": 5, "strategies": ["Best"]}"#);
        assert!(m.starts_with(".strategies[0]:"), "{m}");
    }

    #[test]
    fn defaults_fill_in() {
        let c: CompareConfig = parse(r#"{"iterations": 10, "interval": 5, "strategies": ["Mixing", "des"]}"#).unwrap();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.lambda_floor, 0.01);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.strategies, vec![Strategy::Mixing, Strategy::Des]);
        let s = c.schedule(Strategy::Des, 7);
        assert_eq!((s.total_iterations, s.interval, s.seed), (10, 5, 7));
        assert_eq!(MoeCheckConfig::default().router_cases, 1000);
    }

    #[test]
    fn every_schema_is_an_object_schema() {
        for (name, schema) in schemas() {
            let v = serde_json::to_value(&schema).unwrap();
            assert_eq!(v["type"], "object", "{name}");
        }
    }
}
