//! The evaluate-and-reweight training loop and the fixed baseline policies
//! it is compared against.
//!
//! All strategies share one loop: draw a batch from the current mixture,
//! take a training step, and every `interval` iterations evaluate on the
//! held-out reference split and record a checkpoint. Only the dynamic
//! strategy feeds the score changes back into the mixture.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{des_update, DesConfig, MixtureProportions, PerformanceDelta};
use crate::rng::derive_seed;
use crate::sampler::{compose_batch, split_reference, BatchMode, BatchPlan, TaskDataset, DEFAULT_REFERENCE_SIZE};

/// Lower bound on a delta scale.
pub const MIN_DELTA_SCALE: f64 = 1e-3;

/// Stream index reserved for the reference split; batch `t` uses stream `t`.
const SPLIT_STREAM: u64 = u64::MAX;

/// Per-task reference scores at one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    scores: Vec<f64>,
    higher_is_better: Vec<bool>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, higher_is_better: Vec<bool>) -> Result<Self> {
        if scores.len() != higher_is_better.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} metric directions",
                scores.len(),
                higher_is_better.len()
            )));
        }
        Ok(Self {
            scores,
            higher_is_better,
        })
    }

    pub fn higher_is_better(scores: Vec<f64>) -> Self {
        let dirs = vec![true; scores.len()];
        Self {
            scores,
            higher_is_better: dirs,
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn directions(&self) -> &[bool] {
        &self.higher_is_better
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Score in the "higher is better" convention.
    pub fn directed(&self, j: usize) -> f64 {
        if self.higher_is_better[j] {
            self.scores[j]
        } else {
            -self.scores[j]
        }
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    /// Index of the task with the worst directed score (lowest index on ties).
    pub fn worst_task(&self) -> usize {
        (0..self.len())
            .min_by(|&a, &b| self.directed(a).total_cmp(&self.directed(b)).then(a.cmp(&b)))
            .unwrap_or(0)
    }

    pub fn worst(&self) -> f64 {
        self.scores[self.worst_task()]
    }
}

/// What the scheduling loop needs from a model.
pub trait Trainer {
    /// One optimization step on `batch`; returns the training loss.
    fn train_step(&mut self, batch: &BatchPlan) -> Result<f64>;

    /// Scores on the reference split. Must not change trainer state.
    fn evaluate(&self, reference: &[TaskDataset]) -> Result<ScoreVector>;

    fn snapshot(&self) -> serde_json::Value;
}

impl<T: Trainer + ?Sized> Trainer for Box<T> {
    fn train_step(&mut self, batch: &BatchPlan) -> Result<f64> {
        (**self).train_step(batch)
    }

    fn evaluate(&self, reference: &[TaskDataset]) -> Result<ScoreVector> {
        (**self).evaluate(reference)
    }

    fn snapshot(&self) -> serde_json::Value {
        (**self).snapshot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum Strategy {
    /// Fixed uniform mixture.
    #[serde(alias = "mixing")]
    Mixing,
    /// One task at a time, in index order.
    #[serde(alias = "sequential")]
    Sequential,
    /// Tasks introduced one per phase, uniform over those introduced.
    #[serde(alias = "incremental")]
    Incremental,
    /// Reweight from reference-score changes at every checkpoint.
    #[serde(rename = "DES", alias = "des", alias = "Des")]
    Des,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Mixing,
        Strategy::Sequential,
        Strategy::Incremental,
        Strategy::Des,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Mixing => "Mixing",
            Strategy::Sequential => "Sequential",
            Strategy::Incremental => "Incremental",
            Strategy::Des => "DES",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// How delta scales are estimated when deltas are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DeltaScaling {
    /// One scale for all tasks: running mean |Δs| over every task and checkpoint.
    #[default]
    Pooled,
    /// One scale per task: running mean |Δs_j| over that task's checkpoints.
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_iterations: u64,
    pub interval: u64,
    pub des: DesConfig,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub seed: u64,
    pub batch_mode: BatchMode,
    pub reference_size: usize,
    pub delta_scaling: DeltaScaling,
}

impl ScheduleConfig {
    pub fn new(total_iterations: u64, interval: u64, strategy: Strategy) -> Self {
        Self {
            total_iterations,
            interval,
            des: DesConfig::default(),
            strategy,
            batch_size: 8,
            seed: 0,
            batch_mode: BatchMode::default(),
            reference_size: DEFAULT_REFERENCE_SIZE,
            delta_scaling: DeltaScaling::default(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("no tasks"));
        }
        if self.total_iterations == 0 {
            return Err(Error::invalid("total_iterations must be >= 1"));
        }
        if self.interval == 0 || self.interval > self.total_iterations {
            return Err(Error::invalid(format!(
                "interval = {} must be in 1..={}",
                self.interval, self.total_iterations
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        self.des.validate(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Mixture used for iterations `(iteration, iteration + interval]`.
    pub lambda: MixtureProportions,
    pub scores: ScoreVector,
    /// Direction-normalized `s(t) - s(t - interval)` and the scales used.
    pub deltas: Option<PerformanceDelta>,
    /// Mean training loss over the interval ending here.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iteration: u64,
    pub phase: usize,
    pub active_tasks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub strategy: Strategy,
    /// Reference scores before the first training step.
    pub initial_scores: ScoreVector,
    pub checkpoints: Vec<Checkpoint>,
    /// Phase changes of the staged strategies.
    pub events: Vec<TraceEvent>,
}

impl ScheduleTrace {
    pub const CSV_HEADER: &'static str = "iteration,task,lambda,score,delta,scale,mean_loss";

    pub fn final_scores(&self) -> &ScoreVector {
        self.checkpoints
            .last()
            .map(|c| &c.scores)
            .unwrap_or(&self.initial_scores)
    }

    /// One row per checkpoint per task.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.checkpoints {
            for j in 0..c.lambda.len() {
                let (delta, scale) = match &c.deltas {
                    Some(d) => (fmt_f64(d.deltas()[j]), fmt_f64(d.scales()[j])),
                    None => (String::new(), String::new()),
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.iteration,
                    j,
                    fmt_f64(c.lambda.get(j)),
                    fmt_f64(c.scores.scores()[j]),
                    delta,
                    scale,
                    fmt_f64(c.mean_loss)
                )?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> TraceSummary {
        let fin = self.final_scores();
        TraceSummary {
            strategy: self.strategy,
            checkpoints: self.checkpoints.len(),
            initial_scores: self.initial_scores.scores().to_vec(),
            final_scores: fin.scores().to_vec(),
            final_lambda: self
                .checkpoints
                .last()
                .map(|c| c.lambda.weights().to_vec())
                .unwrap_or_default(),
            mean_score: fin.mean(),
            worst_task_score: fin.worst(),
        }
    }
}

/// Compact JSON view of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TraceSummary {
    pub strategy: Strategy,
    pub checkpoints: usize,
    pub initial_scores: Vec<f64>,
    pub final_scores: Vec<f64>,
    pub final_lambda: Vec<f64>,
    pub mean_score: f64,
    pub worst_task_score: f64,
}

/// Shortest round-trip formatting; stable across runs.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Which mixture a run uses at each iteration.
#[derive(Debug, Clone)]
enum Policy {
    Staged { strategy: Strategy, phase_len: u64 },
    Fixed(MixtureProportions),
    Dynamic,
}

impl Policy {
    fn for_strategy(strategy: Strategy, k: usize, total: u64) -> Result<Self> {
        Ok(match strategy {
            Strategy::Mixing => Policy::Fixed(MixtureProportions::uniform(k)?),
            Strategy::Sequential | Strategy::Incremental => Policy::Staged {
                strategy,
                phase_len: (total / k as u64).max(1),
            },
            Strategy::Des => Policy::Dynamic,
        })
    }

    /// Phase index of 1-based iteration `t`; the remainder joins the last phase.
    fn phase(phase_len: u64, k: usize, t: u64) -> usize {
        (((t - 1) / phase_len) as usize).min(k - 1)
    }

    fn active(strategy: Strategy, k: usize, phase: usize) -> Vec<bool> {
        (0..k)
            .map(|j| match strategy {
                Strategy::Sequential => j == phase,
                _ => j <= phase,
            })
            .collect()
    }

    fn lambda_at(&self, t: u64, k: usize, dynamic: &MixtureProportions) -> Result<MixtureProportions> {
        match self {
            Policy::Fixed(l) => Ok(l.clone()),
            Policy::Dynamic => Ok(dynamic.clone()),
            Policy::Staged { strategy, phase_len } => {
                let p = Self::phase(*phase_len, k, t);
                MixtureProportions::uniform_over(&Self::active(*strategy, k, p))
            }
        }
    }
}

/// Running estimate of delta magnitudes.
struct ScaleTracker {
    mode: DeltaScaling,
    abs_sum: Vec<f64>,
    count: u64,
}

impl ScaleTracker {
    fn new(mode: DeltaScaling, k: usize) -> Self {
        Self {
            mode,
            abs_sum: vec![0.0; k],
            count: 0,
        }
    }

    fn observe(&mut self, deltas: &[f64]) -> Vec<f64> {
        for (s, d) in self.abs_sum.iter_mut().zip(deltas) {
            *s += d.abs();
        }
        self.count += 1;
        let n = self.count as f64;
        match self.mode {
            DeltaScaling::PerTask => self
                .abs_sum
                .iter()
                .map(|s| (s / n).max(MIN_DELTA_SCALE))
                .collect(),
            DeltaScaling::Pooled => {
                let pooled = self.abs_sum.iter().sum::<f64>() / (n * self.abs_sum.len() as f64);
                vec![pooled.max(MIN_DELTA_SCALE); self.abs_sum.len()]
            }
        }
    }
}

fn check_finite(scores: &ScoreVector, iteration: u64) -> Result<()> {
    match scores.scores().iter().position(|s| !s.is_finite()) {
        Some(task) => Err(Error::NonFiniteScore { iteration, task }),
        None => Ok(()),
    }
}

fn run_policy<T: Trainer + ?Sized>(
    trainer: &mut T,
    datasets: &[TaskDataset],
    cfg: &ScheduleConfig,
    policy: Policy,
    label: Strategy,
) -> Result<ScheduleTrace> {
    let k = datasets.len();
    cfg.validate(k)?;
    let split = split_reference(datasets, cfg.reference_size, derive_seed(cfg.seed, SPLIT_STREAM))?;

    let initial_scores = trainer.evaluate(&split.reference)?;
    if initial_scores.len() != k {
        return Err(Error::invalid(format!(
            "trainer returned {} scores for {k} tasks",
            initial_scores.len()
        )));
    }
    check_finite(&initial_scores, 0)?;

    let mut dynamic = MixtureProportions::uniform(k)?;
    let mut scales = ScaleTracker::new(cfg.delta_scaling, k);
    let mut prev = initial_scores.clone();
    let mut checkpoints = Vec::with_capacity((cfg.total_iterations / cfg.interval) as usize);
    let mut events = Vec::new();
    let mut last_phase = None;
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;

    for t in 1..=cfg.total_iterations {
        if let Policy::Staged { strategy, phase_len } = &policy {
            let p = Policy::phase(*phase_len, k, t);
            if last_phase != Some(p) {
                let active = Policy::active(*strategy, k, p);
                events.push(TraceEvent {
                    iteration: t - 1,
                    phase: p,
                    active_tasks: (0..k).filter(|&j| active[j]).collect(),
                });
                last_phase = Some(p);
            }
        }

        let lambda = policy.lambda_at(t, k, &dynamic)?;
        let batch = compose_batch(&split.train, &lambda, cfg.batch_size, derive_seed(cfg.seed, t), cfg.batch_mode)?;
        loss_sum += trainer.train_step(&batch)?;
        loss_n += 1;

        if t % cfg.interval == 0 {
            let scores = trainer.evaluate(&split.reference)?;
            if scores.len() != k {
                return Err(Error::invalid(format!(
                    "trainer returned {} scores for {k} tasks at iteration {t}",
                    scores.len()
                )));
            }
            check_finite(&scores, t)?;
            let raw: Vec<f64> = (0..k).map(|j| scores.directed(j) - prev.directed(j)).collect();
            let delta = PerformanceDelta::new(raw.clone(), scales.observe(&raw))?;
            if matches!(policy, Policy::Dynamic) {
                dynamic = des_update(&dynamic, &delta, &cfg.des)?;
            }
            checkpoints.push(Checkpoint {
                iteration: t,
                lambda: policy.lambda_at(t + 1, k, &dynamic)?,
                scores: scores.clone(),
                deltas: Some(delta),
                mean_loss: loss_sum / loss_n as f64,
            });
            loss_sum = 0.0;
            loss_n = 0;
            prev = scores;
        }
    }

    Ok(ScheduleTrace {
        strategy: label,
        initial_scores,
        checkpoints,
        events,
    })
}

/// Runs the dynamic reweighting schedule. `cfg.strategy` must be DES.
pub fn run_des<T: Trainer + ?Sized>(
    trainer: &mut T,
    datasets: &[TaskDataset],
    cfg: &ScheduleConfig,
) -> Result<ScheduleTrace> {
    if cfg.strategy != Strategy::Des {
        return Err(Error::invalid(format!(
            "run_des called with strategy {}",
            cfg.strategy
        )));
    }
    run_policy(trainer, datasets, cfg, Policy::Dynamic, Strategy::Des)
}

/// Runs whichever strategy `cfg.strategy` names.
pub fn run_strategy<T: Trainer + ?Sized>(
    trainer: &mut T,
    datasets: &[TaskDataset],
    cfg: &ScheduleConfig,
) -> Result<ScheduleTrace> {
    let policy = Policy::for_strategy(cfg.strategy, datasets.len(), cfg.total_iterations)?;
    run_policy(trainer, datasets, cfg, policy, cfg.strategy)
}

/// Trains with one fixed mixture throughout; checkpoints are recorded as in
/// every other strategy. The trace is labelled Mixing.
pub fn run_fixed_mixture<T: Trainer + ?Sized>(
    trainer: &mut T,
    datasets: &[TaskDataset],
    cfg: &ScheduleConfig,
    lambda: MixtureProportions,
) -> Result<ScheduleTrace> {
    if lambda.len() != datasets.len() {
        return Err(Error::invalid(format!(
            "{}-task mixture for {} datasets",
            lambda.len(),
            datasets.len()
        )));
    }
    run_policy(trainer, datasets, cfg, Policy::Fixed(lambda), Strategy::Mixing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ComparisonRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub final_scores: Vec<f64>,
    pub mean_score: f64,
    pub worst_task_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StrategyMeans {
    pub strategy: Strategy,
    pub final_scores: Vec<f64>,
    pub mean_score: f64,
    pub worst_task_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ComparisonSummary {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
    /// Across-seed means per strategy.
    pub means: Vec<StrategyMeans>,
    /// Seeds on which a strategy's worst-task score is at least every other
    /// strategy's (ties count for each tied strategy).
    pub worst_task_wins: BTreeMap<Strategy, usize>,
    /// Same, for the mean-over-tasks score.
    pub mean_wins: BTreeMap<Strategy, usize>,
}

impl ComparisonSummary {
    pub fn row(&self, seed: u64, strategy: Strategy) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.seed == seed && r.strategy == strategy)
    }

    pub const CSV_HEADER: &'static str = "seed,strategy,task,final_score";

    /// Per seed per strategy per task final scores.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            for (j, s) in r.final_scores.iter().enumerate() {
                writeln!(out, "{},{},{},{}", r.seed, r.strategy, j, fmt_f64(*s))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub summary: ComparisonSummary,
    /// Traces in (seed, strategy) order.
    pub traces: Vec<(u64, ScheduleTrace)>,
}

/// Runs every strategy for every seed, each from a fresh trainer built by
/// `trainer_factory(seed)`, and tabulates final reference scores.
///
/// Runs execute in parallel; results are gathered in (seed, strategy) order
/// so the output does not depend on scheduling.
pub fn compare_strategies<T, F>(
    trainer_factory: F,
    datasets: &[TaskDataset],
    cfg: &ScheduleConfig,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<Comparison>
where
    T: Trainer + Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    if strategies.is_empty() {
        return Err(Error::invalid("at least one strategy is required"));
    }
    let jobs: Vec<(u64, Strategy)> = seeds
        .iter()
        .flat_map(|&s| strategies.iter().map(move |&st| (s, st)))
        .collect();
    let results: Vec<Result<(u64, ScheduleTrace)>> = jobs
        .par_iter()
        .map(|&(seed, strategy)| {
            let mut trainer = trainer_factory(seed)?;
            let run_cfg = ScheduleConfig {
                seed,
                strategy,
                ..cfg.clone()
            };
            Ok((seed, run_strategy(&mut trainer, datasets, &run_cfg)?))
        })
        .collect();
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&traces, strategies, seeds);
    Ok(Comparison { summary, traces })
}

fn summarize(traces: &[(u64, ScheduleTrace)], strategies: &[Strategy], seeds: &[u64]) -> ComparisonSummary {
    let rows: Vec<ComparisonRow> = traces
        .iter()
        .map(|(seed, tr)| {
            let fin = tr.final_scores();
            ComparisonRow {
                seed: *seed,
                strategy: tr.strategy,
                final_scores: fin.scores().to_vec(),
                mean_score: fin.mean(),
                worst_task_score: fin.worst(),
            }
        })
        .collect();

    let mut unique: Vec<Strategy> = Vec::new();
    for s in strategies {
        if !unique.contains(s) {
            unique.push(*s);
        }
    }

    let means = unique
        .iter()
        .map(|&st| {
            let mine: Vec<&ComparisonRow> = rows.iter().filter(|r| r.strategy == st).collect();
            let n = mine.len() as f64;
            let k = mine.first().map(|r| r.final_scores.len()).unwrap_or(0);
            StrategyMeans {
                strategy: st,
                final_scores: (0..k)
                    .map(|j| mine.iter().map(|r| r.final_scores[j]).sum::<f64>() / n)
                    .collect(),
                mean_score: mine.iter().map(|r| r.mean_score).sum::<f64>() / n,
                worst_task_score: mine.iter().map(|r| r.worst_task_score).sum::<f64>() / n,
            }
        })
        .collect();

    let mut worst_task_wins: BTreeMap<Strategy, usize> = unique.iter().map(|s| (*s, 0)).collect();
    let mut mean_wins = worst_task_wins.clone();
    let mut seen_seeds = Vec::new();
    for &seed in seeds {
        if seen_seeds.contains(&seed) {
            continue;
        }
        seen_seeds.push(seed);
        let of_seed: Vec<&ComparisonRow> = rows.iter().filter(|r| r.seed == seed).collect();
        let best_worst = of_seed.iter().map(|r| r.worst_task_score).fold(f64::NEG_INFINITY, f64::max);
        let best_mean = of_seed.iter().map(|r| r.mean_score).fold(f64::NEG_INFINITY, f64::max);
        for &st in &unique {
            if let Some(r) = of_seed.iter().find(|r| r.strategy == st) {
                if r.worst_task_score >= best_worst {
                    *worst_task_wins.get_mut(&st).unwrap() += 1;
                }
                if r.mean_score >= best_mean {
                    *mean_wins.get_mut(&st).unwrap() += 1;
                }
            }
        }
    }

    ComparisonSummary {
        strategies: unique,
        seeds: seen_seeds,
        rows,
        means,
        worst_task_wins,
        mean_wins,
    }
}
