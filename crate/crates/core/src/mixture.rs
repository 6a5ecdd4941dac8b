//! Mixture proportions over task datasets and the multiplicative
//! reweighting rule applied at each evaluation checkpoint.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` for a valid point on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Sampling probability per task. Always a point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureProportions {
    weights: Vec<f64>,
}

impl MixtureProportions {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one task"));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "mixture weight {i} is {} (must be finite and >= 0)",
                weights[i]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("mixture weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    /// Every task gets `1/k`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("task count must be >= 1"));
        }
        Ok(Self {
            weights: vec![1.0 / k as f64; k],
        })
    }

    /// Uniform over the tasks flagged in `active`, zero elsewhere.
    pub fn uniform_over(active: &[bool]) -> Result<Self> {
        let n = active.iter().filter(|a| **a).count();
        if n == 0 {
            return Err(Error::invalid("no active task"));
        }
        let w = 1.0 / n as f64;
        Ok(Self {
            weights: active.iter().map(|&a| if a { w } else { 0.0 }).collect(),
        })
    }

    pub fn one_hot(k: usize, task: usize) -> Result<Self> {
        if task >= k {
            return Err(Error::invalid(format!("task {task} out of range for k={k}")));
        }
        let mut weights = vec![0.0; k];
        weights[task] = 1.0;
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, task: usize) -> f64 {
        self.weights[task]
    }
}

impl TryFrom<Vec<f64>> for MixtureProportions {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<MixtureProportions> for Vec<f64> {
    fn from(m: MixtureProportions) -> Self {
        m.weights
    }
}

/// Per-task score changes and the scale each change is divided by before
/// entering the exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceDelta {
    deltas: Vec<f64>,
    scales: Vec<f64>,
}

impl PerformanceDelta {
    pub fn new(deltas: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        if deltas.len() != scales.len() {
            return Err(Error::invalid(format!(
                "{} deltas but {} scales",
                deltas.len(),
                scales.len()
            )));
        }
        if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "scale for task {i} is {} (must be finite and > 0)",
                scales[i]
            )));
        }
        Ok(Self { deltas, scales })
    }

    /// Deltas with unit scales.
    pub fn unscaled(deltas: Vec<f64>) -> Self {
        let scales = vec![1.0; deltas.len()];
        Self { deltas, scales }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// The exponent input for task `j`: `delta / scale` if `normalize`.
    pub fn effective(&self, j: usize, normalize: bool) -> f64 {
        if normalize {
            self.deltas[j] / self.scales[j]
        } else {
            self.deltas[j]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesConfig {
    /// Sensitivity of the reweighting.
    pub alpha: f64,
    /// Minimum post-update weight of every task.
    pub lambda_floor: f64,
    /// Divide each delta by its scale before exponentiating.
    pub normalize_deltas: bool,
}

impl Default for DesConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda_floor: 0.01,
            normalize_deltas: true,
        }
    }
}

impl DesConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha = {} must be finite and >= 0", self.alpha)));
        }
        if !(self.lambda_floor.is_finite() && self.lambda_floor >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_floor = {} must be finite and >= 0",
                self.lambda_floor
            )));
        }
        if k as f64 * self.lambda_floor >= 1.0 {
            return Err(Error::invalid(format!(
                "lambda_floor = {} too large for {k} tasks (need k * floor < 1)",
                self.lambda_floor
            )));
        }
        Ok(())
    }
}

/// One reweighting step: `λ'_j ∝ λ_j · exp(-α · Δŝ_j)`, followed by the floor.
///
/// Tasks whose score dropped gain mass and tasks that improved lose it. The
/// product is formed in log space and normalized with the max-subtraction
/// trick, so arbitrarily large `|α Δŝ|` never overflows or underflows to an
/// all-zero vector.
pub fn des_update(
    lambda: &MixtureProportions,
    delta: &PerformanceDelta,
    cfg: &DesConfig,
) -> Result<MixtureProportions> {
    let k = lambda.len();
    if delta.len() != k {
        return Err(Error::invalid(format!(
            "mixture has {k} tasks but delta has {}",
            delta.len()
        )));
    }
    cfg.validate(k)?;
    if let Some(j) = delta.deltas().iter().position(|d| !d.is_finite()) {
        return Err(Error::invalid(format!("delta for task {j} is not finite")));
    }

    let logits: Vec<f64> = (0..k)
        .map(|j| {
            let exponent = cfg.alpha * delta.effective(j, cfg.normalize_deltas);
            if exponent.is_finite() {
                lambda.get(j).ln() - exponent
            } else {
                // Overflowed exponent: saturate in the right direction.
                lambda.get(j).ln() - exponent.signum() * f64::MAX
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }

    if cfg.lambda_floor > 0.0 {
        apply_floor(&mut weights, cfg.lambda_floor);
    }
    MixtureProportions::new(weights)
}

/// Raises every weight below `floor` to `floor` and rescales the rest to
/// keep the total at 1. Rescaling can push more weights under the floor,
/// so repeat until stable (at most `k` rounds).
fn apply_floor(weights: &mut [f64], floor: f64) {
    let k = weights.len();
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|p| **p).count();
        let free_mass = 1.0 - floor * n_pinned as f64;
        let free_sum: f64 = weights
            .iter()
            .zip(&pinned)
            .filter(|(_, p)| !**p)
            .map(|(w, _)| *w)
            .sum();
        let mut changed = false;
        for j in 0..k {
            if pinned[j] {
                weights[j] = floor;
                continue;
            }
            weights[j] = if free_sum > 0.0 {
                weights[j] * free_mass / free_sum
            } else {
                0.0
            };
            if weights[j] < floor {
                pinned[j] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Probability of drawing each individual sample: `λ_i / |D_i|` for every
/// sample of task `i`. Indexed `[task][sample]`.
pub fn mixture_distribution(
    dataset_sizes: &[usize],
    lambda: &MixtureProportions,
) -> Result<Vec<Vec<f64>>> {
    if dataset_sizes.len() != lambda.len() {
        return Err(Error::invalid(format!(
            "{} dataset sizes for a {}-task mixture",
            dataset_sizes.len(),
            lambda.len()
        )));
    }
    if let Some(i) = dataset_sizes.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("dataset for task {i} is empty")));
    }
    Ok(dataset_sizes
        .iter()
        .zip(lambda.weights())
        .map(|(&n, &l)| vec![l / n as f64; n])
        .collect())
}
