//! Analytic multi-task learning dynamics.
//!
//! Each task's score approaches its asymptote at a rate proportional to the
//! share of data it receives, plus linear spill-over from other tasks' data
//! through an interaction matrix:
//!
//! `s_j ← min(s_j + η_j (λ_j + Σ_{i≠j} C[j][i] λ_i)(s_max_j − s_j) + ν, s_max_j)`
//!
//! Positive `C[j][i]` means task `i` data helps task `j`; negative means it
//! interferes.

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureProportions;
use crate::rng::{derive_seed, SeededRng};
use crate::sampler::{BatchPlan, TaskDataset};
use crate::scheduler::{ScoreVector, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DynamicsModel {
    scores: Vec<f64>,
    s_max: Vec<f64>,
    eta: Vec<f64>,
    coupling: Vec<Vec<f64>>,
    noise_sigma: f64,
}

impl DynamicsModel {
    pub fn new(
        scores: Vec<f64>,
        s_max: Vec<f64>,
        eta: Vec<f64>,
        coupling: Vec<Vec<f64>>,
        noise_sigma: f64,
    ) -> Result<Self> {
        let k = scores.len();
        if k == 0 {
            return Err(Error::invalid("dynamics model needs at least one task"));
        }
        if s_max.len() != k || eta.len() != k || coupling.len() != k {
            return Err(Error::invalid("scores, s_max, eta and coupling must have the same length"));
        }
        if let Some(j) = coupling.iter().position(|row| row.len() != k) {
            return Err(Error::invalid(format!("coupling row {j} has the wrong length")));
        }
        for j in 0..k {
            if coupling[j][j] != 0.0 {
                return Err(Error::invalid(format!("coupling[{j}][{j}] must be 0")));
            }
            if !(eta[j].is_finite() && eta[j] > 0.0) {
                return Err(Error::invalid(format!("eta[{j}] must be > 0")));
            }
            if !scores[j].is_finite() || !s_max[j].is_finite() || coupling[j].iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("non-finite parameter for task {j}")));
            }
            let gain: f64 = coupling[j].iter().map(|c| c.max(0.0)).sum();
            if eta[j] * (1.0 + gain) >= 1.0 {
                return Err(Error::invalid(format!(
                    "task {j} violates the stability bound eta * (1 + positive coupling) < 1"
                )));
            }
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        let scores = scores.iter().zip(&s_max).map(|(s, m)| s.min(*m)).collect();
        Ok(Self {
            scores,
            s_max,
            eta,
            coupling,
            noise_sigma,
        })
    }

    /// Independent tasks sharing one start and asymptote.
    pub fn independent(eta: Vec<f64>, start: f64, s_max: f64) -> Result<Self> {
        let k = eta.len();
        Self::new(vec![start; k], vec![s_max; k], eta, vec![vec![0.0; k]; k], 0.0)
    }

    pub fn k(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn s_max(&self) -> &[f64] {
        &self.s_max
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn coupling(&self) -> &[Vec<f64>] {
        &self.coupling
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// In-place step driven by arbitrary per-task allocations.
    pub fn advance(&mut self, allocation: &[f64], seed: u64) -> Result<()> {
        let k = self.k();
        if allocation.len() != k {
            return Err(Error::invalid(format!(
                "{}-task allocation for a {k}-task model",
                allocation.len()
            )));
        }
        let mut rng = (self.noise_sigma > 0.0).then(|| SeededRng::new(seed));
        for j in 0..k {
            let drive: f64 = allocation[j]
                + (0..k)
                    .filter(|&i| i != j)
                    .map(|i| self.coupling[j][i] * allocation[i])
                    .sum::<f64>();
            let gap = self.s_max[j] - self.scores[j];
            let noise = rng
                .as_mut()
                .map(|r| self.noise_sigma * r.standard_normal())
                .unwrap_or(0.0);
            self.scores[j] = (self.scores[j] + self.eta[j] * drive * gap + noise).min(self.s_max[j]);
        }
        Ok(())
    }

    pub fn mean_gap(&self) -> f64 {
        self.scores
            .iter()
            .zip(&self.s_max)
            .map(|(s, m)| m - s)
            .sum::<f64>()
            / self.k() as f64
    }
}

/// One step under mixture `lambda`.
pub fn dynamics_step(model: &DynamicsModel, lambda: &MixtureProportions, seed: u64) -> Result<DynamicsModel> {
    let mut next = model.clone();
    next.advance(lambda.weights(), seed)?;
    Ok(next)
}

/// Adapts [`DynamicsModel`] to the scheduling loop. Each training step
/// advances the model once, driven by the batch's task fractions; the
/// reference split is ignored by evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticTrainer {
    model: DynamicsModel,
    seed: u64,
    steps: u64,
}

impl SyntheticTrainer {
    pub fn new(model: DynamicsModel, seed: u64) -> Self {
        Self { model, seed, steps: 0 }
    }

    pub fn model(&self) -> &DynamicsModel {
        &self.model
    }

    /// Placeholder datasets with `n` identifiers per task.
    pub fn datasets(k: usize, n: usize) -> Vec<TaskDataset> {
        (0..k).map(|i| TaskDataset::with_count(i, n)).collect()
    }
}

impl Trainer for SyntheticTrainer {
    fn train_step(&mut self, batch: &BatchPlan) -> Result<f64> {
        let k = self.model.k();
        let loss = self.model.mean_gap();
        let size = batch.size() as f64;
        let fractions: Vec<f64> = batch.task_counts(k).iter().map(|&c| c as f64 / size).collect();
        self.model.advance(&fractions, derive_seed(self.seed, self.steps))?;
        self.steps += 1;
        Ok(loss)
    }

    fn evaluate(&self, _reference: &[TaskDataset]) -> Result<ScoreVector> {
        Ok(ScoreVector::higher_is_better(self.model.scores.clone()))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "model": self.model, "steps": self.steps })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct LandscapePoint {
    pub lambda: Vec<f64>,
    pub final_scores: Vec<f64>,
    pub mean_score: f64,
    pub worst_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Landscape {
    pub grid_resolution: usize,
    pub points: Vec<LandscapePoint>,
    /// Indices into `points` within [`ARGMAX_TIE_TOLERANCE`] of the best mean.
    pub argmax_mean: Vec<usize>,
    /// Same, for the worst-task score.
    pub argmax_worst: Vec<usize>,
}

pub const ARGMAX_TIE_TOLERANCE: f64 = 1e-9;

impl Landscape {
    /// Builds the table and its argmax sets from evaluated points.
    pub fn from_points(grid_resolution: usize, points: Vec<LandscapePoint>) -> Self {
        let argmax = |key: fn(&LandscapePoint) -> f64| {
            let best = points.iter().map(key).fold(f64::NEG_INFINITY, f64::max);
            points
                .iter()
                .enumerate()
                .filter(|(_, p)| key(p) >= best - ARGMAX_TIE_TOLERANCE)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let argmax_mean = argmax(|p| p.mean_score);
        let argmax_worst = argmax(|p| p.worst_score);
        Self {
            grid_resolution,
            points,
            argmax_mean,
            argmax_worst,
        }
    }

    pub fn k(&self) -> usize {
        self.points.first().map(|p| p.lambda.len()).unwrap_or(0)
    }

    pub fn csv_header(k: usize) -> String {
        let mut cols: Vec<String> = (0..k).map(|j| format!("lambda_{j}")).collect();
        cols.extend((0..k).map(|j| format!("score_{j}")));
        cols.push("mean_score".into());
        cols.push("worst_score".into());
        cols.join(",")
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::csv_header(self.k()))?;
        for p in &self.points {
            let cells: Vec<String> = p
                .lambda
                .iter()
                .chain(&p.final_scores)
                .chain([&p.mean_score, &p.worst_score])
                .map(|x| format!("{x}"))
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// All points of the simplex grid with spacing `1/resolution`, as integer
/// numerators summing to `resolution`, in lexicographic order.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for x in 0..=left {
            prefix.push(x);
            rec(k - 1, left - x, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, resolution, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Converts grid numerators to a mixture.
pub fn grid_mixture(numerators: &[usize], resolution: usize) -> Result<MixtureProportions> {
    MixtureProportions::new(numerators.iter().map(|&n| n as f64 / resolution as f64).collect())
}

/// Runs `steps` fixed-mixture steps from `model` at every grid point.
pub fn sweep_fixed_mixtures(
    model: &DynamicsModel,
    grid_resolution: usize,
    steps: usize,
    seed: u64,
) -> Result<Landscape> {
    if grid_resolution < 2 {
        return Err(Error::invalid("grid_resolution must be >= 2"));
    }
    let grid = simplex_grid(model.k(), grid_resolution);
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(idx, nums)| {
            let lambda = grid_mixture(nums, grid_resolution)?;
            let point_seed = derive_seed(seed, idx as u64);
            let mut m = model.clone();
            for step in 0..steps {
                m.advance(lambda.weights(), derive_seed(point_seed, step as u64))?;
            }
            let scores = ScoreVector::higher_is_better(m.scores.clone());
            Ok(LandscapePoint {
                lambda: lambda.weights().to_vec(),
                final_scores: m.scores,
                mean_score: scores.mean(),
                worst_score: scores.worst(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Landscape::from_points(grid_resolution, points))
}
