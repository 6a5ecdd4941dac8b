//! JSON documents written by the commands, and the file writer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mixsched::scheduler::{ComparisonRow, ComparisonSummary, StrategyMeans, TraceSummary};
use mixsched::synthetic::{Landscape, LandscapePoint};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `summary.json` of `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CompareSummary {
    pub tasks: Vec<String>,
    pub iterations: u64,
    pub interval: u64,
    pub seeds: Vec<u64>,
    pub strategies: Vec<String>,
    /// Final scores per seed per strategy.
    pub rows: Vec<ComparisonRow>,
    /// Across-seed means per strategy.
    pub means: Vec<StrategyMeans>,
    /// Seeds on which each strategy had the best worst-task score (ties
    /// credit every tied strategy).
    pub worst_task_wins: BTreeMap<String, usize>,
    /// Same, for the mean-over-tasks score.
    pub mean_wins: BTreeMap<String, usize>,
}

impl CompareSummary {
    pub fn new(tasks: Vec<String>, iterations: u64, interval: u64, s: &ComparisonSummary) -> Self {
        let names = |m: &BTreeMap<_, usize>| {
            m.iter()
                .map(|(k, v): (&mixsched::Strategy, &usize)| (k.to_string(), *v))
                .collect()
        };
        Self {
            tasks,
            iterations,
            interval,
            seeds: s.seeds.clone(),
            strategies: s.strategies.iter().map(|st| st.to_string()).collect(),
            rows: s.rows.clone(),
            means: s.means.clone(),
            worst_task_wins: names(&s.worst_task_wins),
            mean_wins: names(&s.mean_wins),
        }
    }
}

/// `argmax.json` of `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ArgmaxReport {
    pub tasks: Vec<String>,
    pub grid_resolution: usize,
    /// Grid points whose mean score is within tolerance of the best.
    pub argmax_mean: Vec<LandscapePoint>,
    /// Grid points whose worst-task score is within tolerance of the best.
    pub argmax_worst: Vec<LandscapePoint>,
    /// Whether the uniform mixture (when on the grid) maximizes the mean.
    pub uniform_is_argmax_mean: bool,
}

impl ArgmaxReport {
    pub fn new(tasks: Vec<String>, landscape: &Landscape) -> Self {
        let pick = |idx: &[usize]| idx.iter().map(|&i| landscape.points[i].clone()).collect::<Vec<_>>();
        let argmax_mean = pick(&landscape.argmax_mean);
        let k = landscape.k();
        let uniform_is_argmax_mean = argmax_mean
            .iter()
            .any(|p| p.lambda.iter().all(|l| (l - 1.0 / k as f64).abs() < 1e-12));
        Self {
            tasks,
            grid_resolution: landscape.grid_resolution,
            argmax_worst: pick(&landscape.argmax_worst),
            argmax_mean,
            uniform_is_argmax_mean,
        }
    }
}

/// `summary.json` of `simulate` and `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub tasks: Vec<String>,
    pub iterations: u64,
    pub interval: u64,
    pub seed: u64,
    pub trace: TraceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest deviation observed (0 for exact checks that held).
    pub max_deviation: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GradientResult {
    pub component: String,
    pub seed: u64,
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a tie or mask change.
    pub skipped: usize,
    pub passed: bool,
}

/// `moe_report.json` of `moe-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MoeReport {
    pub passed: bool,
    pub tokens: usize,
    pub dim: usize,
    pub seeds: Vec<u64>,
    pub invariants: Vec<InvariantResult>,
    pub gradients: Vec<GradientResult>,
    pub max_gradient_error: f64,
}

/// Collects output files and writes them in one pass.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
            }
            fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}
