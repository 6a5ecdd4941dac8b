use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::degrade::{apply_degradation, DegradationOp, Interpolation};
use super::filter::{train_step_filter, FilterModel};
use super::image::{generate_scene, Image, MIN_SCENE_SIDE};
use super::metrics::psnr;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sampler::{BatchPlan, TaskDataset};
use crate::scheduler::{ScoreVector, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub degradation: DegradationOp,
    /// Number of (LQ, HQ) pairs, reference samples included.
    pub size: usize,
}

/// A multi-task restoration problem definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "Scenario::default_image_size")]
    pub image_size: usize,
    #[serde(default = "Scenario::default_model_radius")]
    pub model_radius: usize,
    #[serde(default = "Scenario::default_learning_rate")]
    pub learning_rate: f64,
    /// Seed for scene synthesis and degradation noise.
    #[serde(default)]
    pub data_seed: u64,
}

impl Scenario {
    fn default_image_size() -> usize {
        32
    }

    fn default_model_radius() -> usize {
        2
    }

    fn default_learning_rate() -> f64 {
        2e-3
    }

    /// Four conflicting tasks: denoise, deblur, brighten, and
    /// resolution-aligned super-resolution; 200 pairs each at 32x32.
    pub fn desk() -> Self {
        let task = |name: &str, degradation| TaskSpec {
            name: name.to_string(),
            degradation,
            size: 200,
        };
        Self {
            tasks: vec![
                task("noise", DegradationOp::AdditiveGaussianNoise { sigma: 0.1 }),
                task("blur", DegradationOp::GaussianBlur { radius: 2, sigma: 1.0 }),
                task("darken", DegradationOp::GammaDarken { gamma: 2.2 }),
                task("downup", DegradationOp::DownUp { factor: 2, interpolation: Interpolation::Bilinear }),
            ],
            image_size: Self::default_image_size(),
            model_radius: Self::default_model_radius(),
            learning_rate: Self::default_learning_rate(),
            data_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("tasks: at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.size == 0 {
                return Err(Error::invalid(format!("tasks[{i}].size must be >= 1")));
            }
            t.degradation
                .validate()
                .map_err(|e| Error::invalid(format!("tasks[{i}].degradation: {e}")))?;
        }
        if self.image_size < MIN_SCENE_SIDE {
            return Err(Error::invalid(format!("image_size must be >= {MIN_SCENE_SIDE}")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if 2 * self.model_radius + 1 > self.image_size {
            return Err(Error::invalid("model_radius too large for image_size"));
        }
        Ok(())
    }
}

type Pairs = Vec<Vec<(Image, Image)>>;

/// Trains one shared [`FilterModel`] on (LQ, HQ) pairs of every task and
/// scores each task by mean PSNR on its reference samples.
#[derive(Debug, Clone)]
pub struct RestorationTrainer {
    pairs: Arc<Pairs>,
    model: FilterModel,
}

impl RestorationTrainer {
    pub fn new(pairs: Arc<Pairs>, model: FilterModel) -> Self {
        Self { pairs, model }
    }

    pub fn model(&self) -> &FilterModel {
        &self.model
    }

    /// The (LQ, HQ) pair for `sample` of `task`.
    pub fn pair(&self, task: usize, sample: u64) -> Result<&(Image, Image)> {
        self.pairs
            .get(task)
            .and_then(|t| t.get(sample as usize))
            .ok_or_else(|| Error::invalid(format!("no sample {sample} in task {task}")))
    }

    pub fn task_count(&self) -> usize {
        self.pairs.len()
    }

    /// Same data, model reset to `model`.
    pub fn with_model(&self, model: FilterModel) -> Self {
        Self {
            pairs: Arc::clone(&self.pairs),
            model,
        }
    }
}

impl Trainer for RestorationTrainer {
    fn train_step(&mut self, batch: &BatchPlan) -> Result<f64> {
        let refs = batch
            .entries()
            .iter()
            .map(|e| self.pair(e.task_id, e.sample_id).map(|(lq, hq)| (lq, hq)))
            .collect::<Result<Vec<_>>>()?;
        let (next, loss) = train_step_filter(&self.model, &refs)?;
        self.model = next;
        Ok(loss)
    }

    fn evaluate(&self, reference: &[TaskDataset]) -> Result<ScoreVector> {
        let scores = reference
            .iter()
            .map(|ds| {
                if ds.is_empty() {
                    return Err(Error::invalid(format!("empty reference set for task {}", ds.task_id())));
                }
                let mut total = 0.0;
                for &s in ds.samples() {
                    let (lq, hq) = self.pair(ds.task_id(), s)?;
                    total += psnr(&self.model.predict(lq), hq)?;
                }
                Ok(total / ds.len() as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreVector::higher_is_better(scores))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.model).unwrap_or(serde_json::Value::Null)
    }
}

/// Synthesizes every task's pairs and returns the per-task sample lists with
/// a trainer starting from the identity filter.
///
/// Sample `i` of every task degrades the same clean scene, so tasks differ
/// only in their degradation.
pub fn build_restoration_suite(scenario: &Scenario) -> Result<(Vec<TaskDataset>, RestorationTrainer)> {
    scenario.validate()?;
    let n = scenario.image_size;
    let max_size = scenario.tasks.iter().map(|t| t.size).max().unwrap_or(0);
    let scenes = (0..max_size)
        .map(|i| generate_scene(derive_seed(scenario.data_seed, i as u64), n, n))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs: Pairs = Vec::with_capacity(scenario.tasks.len());
    for (t, spec) in scenario.tasks.iter().enumerate() {
        let task_seed = derive_seed(scenario.data_seed ^ 0xDE6A_DA71, t as u64);
        let task_pairs = scenes[..spec.size]
            .iter()
            .enumerate()
            .map(|(i, hq)| Ok((apply_degradation(hq, &spec.degradation, derive_seed(task_seed, i as u64))?, hq.clone())))
            .collect::<Result<Vec<_>>>()?;
        pairs.push(task_pairs);
    }
    let datasets = scenario
        .tasks
        .iter()
        .enumerate()
        .map(|(t, spec)| TaskDataset::with_count(t, spec.size))
        .collect();
    let model = FilterModel::identity(scenario.model_radius, scenario.learning_rate)?;
    Ok((datasets, RestorationTrainer::new(Arc::new(pairs), model)))
}
