use mixsched::mixture::{DesConfig, MixtureProportions};
use mixsched::sampler::{BatchMode, BatchPlan, TaskDataset};
use mixsched::scheduler::{
    compare_strategies, run_des, run_fixed_mixture, run_strategy, ScheduleConfig, ScheduleTrace, ScoreVector,
    Strategy, Trainer,
};
use mixsched::synthetic::{DynamicsModel, SyntheticTrainer};
use mixsched::testbed::{build_restoration_suite, DegradationOp, RestorationTrainer, Scenario, TaskSpec};
use mixsched::Error;

fn synthetic(eta: Vec<f64>) -> (Vec<TaskDataset>, SyntheticTrainer) {
    let k = eta.len();
    let model = DynamicsModel::independent(eta, 10.0, 30.0).unwrap();
    (SyntheticTrainer::datasets(k, 64), SyntheticTrainer::new(model, 0))
}

fn small_restoration() -> (Vec<TaskDataset>, RestorationTrainer) {
    let sc = Scenario {
        tasks: vec![
            TaskSpec {
                name: "noise".into(),
                degradation: DegradationOp::AdditiveGaussianNoise { sigma: 0.1 },
                size: 24,
            },
            TaskSpec {
                name: "darken".into(),
                degradation: DegradationOp::GammaDarken { gamma: 2.2 },
                size: 24,
            },
        ],
        image_size: 16,
        model_radius: 1,
        learning_rate: 2e-3,
        data_seed: 5,
    };
    build_restoration_suite(&sc).unwrap()
}

#[test]
fn checkpoint_count_is_floor_of_iterations_over_interval() {
    let (ds, mut tr) = synthetic(vec![1e-5, 2e-5]);
    let cfg = ScheduleConfig::new(150_000, 5_000, Strategy::Des);
    let trace = run_des(&mut tr, &ds, &cfg).unwrap();
    assert_eq!(trace.checkpoints.len(), 30);
    let its: Vec<u64> = trace.checkpoints.iter().map(|c| c.iteration).collect();
    assert_eq!(its, (1..=30).map(|c| c * 5_000).collect::<Vec<_>>());

    let (ds, mut tr) = synthetic(vec![0.01, 0.02]);
    let trace = run_des(&mut tr, &ds, &ScheduleConfig::new(103, 10, Strategy::Des)).unwrap();
    assert_eq!(trace.checkpoints.last().unwrap().iteration, 100);
    assert_eq!(trace.checkpoints.len(), 10);
}

/// Records every batch so the mixture actually used can be audited.
struct Recording<T> {
    inner: T,
    batches: Vec<BatchPlan>,
}

impl<T: Trainer> Trainer for Recording<T> {
    fn train_step(&mut self, batch: &BatchPlan) -> mixsched::Result<f64> {
        self.batches.push(batch.clone());
        self.inner.train_step(batch)
    }

    fn evaluate(&self, reference: &[TaskDataset]) -> mixsched::Result<ScoreVector> {
        self.inner.evaluate(reference)
    }

    fn snapshot(&self) -> serde_json::Value {
        self.inner.snapshot()
    }
}

#[test]
fn single_interval_uses_uniform_mixture_throughout() {
    let (ds, tr) = synthetic(vec![0.01, 0.3]);
    let mut rec = Recording { inner: tr, batches: vec![] };
    let mut cfg = ScheduleConfig::new(40, 40, Strategy::Des);
    cfg.batch_mode = BatchMode::Quota;
    cfg.batch_size = 10;
    let trace = run_des(&mut rec, &ds, &cfg).unwrap();
    assert_eq!(trace.checkpoints.len(), 1);
    assert!(rec.batches.iter().all(|b| b.task_counts(2) == vec![5, 5]));
    // The single update is recorded but never used.
    assert_ne!(trace.checkpoints[0].lambda, MixtureProportions::uniform(2).unwrap());
}

#[test]
fn recorded_lambda_is_the_mixture_of_the_next_interval() {
    let (ds, tr) = synthetic(vec![0.002, 0.02, 0.01]);
    let mut rec = Recording { inner: tr, batches: vec![] };
    let mut cfg = ScheduleConfig::new(60, 20, Strategy::Des);
    cfg.batch_mode = BatchMode::Quota;
    cfg.batch_size = 1000;
    let trace = run_des(&mut rec, &ds, &cfg).unwrap();
    for c in &trace.checkpoints[..2] {
        let t = c.iteration as usize;
        let expected = mixsched::sampler::apportion(1000, c.lambda.weights());
        for b in &rec.batches[t..t + 20] {
            assert_eq!(b.task_counts(3), expected);
        }
    }
}

#[test]
fn sequential_phase_boundaries() {
    let (ds, tr) = synthetic(vec![1e-6; 4]);
    let mut cfg = ScheduleConfig::new(100_000, 25_000, Strategy::Sequential);
    cfg.batch_size = 1;
    let mut rec = Recording { inner: tr, batches: vec![] };
    let trace = run_strategy(&mut rec, &ds, &cfg).unwrap();
    let starts: Vec<u64> = trace.events.iter().map(|e| e.iteration).collect();
    assert_eq!(starts, vec![0, 25_000, 50_000, 75_000]);
    for (p, e) in trace.events.iter().enumerate() {
        assert_eq!(e.active_tasks, vec![p]);
    }
    for (i, b) in rec.batches.iter().enumerate() {
        assert_eq!(b.entries()[0].task_id, i / 25_000);
    }
}

#[test]
fn sequential_remainder_joins_last_phase() {
    let (ds, tr) = synthetic(vec![1e-3; 3]);
    let mut rec = Recording { inner: tr, batches: vec![] };
    let mut cfg = ScheduleConfig::new(11, 11, Strategy::Sequential);
    cfg.batch_size = 1;
    run_strategy(&mut rec, &ds, &cfg).unwrap();
    let tasks: Vec<usize> = rec.batches.iter().map(|b| b.entries()[0].task_id).collect();
    assert_eq!(tasks, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2]);
}

#[test]
fn incremental_phases_are_uniform_over_introduced_tasks() {
    let (ds, mut tr) = synthetic(vec![1e-3; 3]);
    let cfg = ScheduleConfig::new(30, 10, Strategy::Incremental);
    let trace = run_strategy(&mut tr, &ds, &cfg).unwrap();
    let w: Vec<&[f64]> = trace.checkpoints.iter().map(|c| c.lambda.weights()).collect();
    // Checkpoint at t=10 records the mixture for (10, 20], i.e. phase 2.
    assert_eq!(w[0], &[0.5, 0.5, 0.0]);
    assert_eq!(w[1], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    assert_eq!(trace.events[1].active_tasks, vec![0, 1]);
}

#[test]
fn mixing_lambda_is_uniform_at_every_checkpoint() {
    let (ds, mut tr) = synthetic(vec![0.01, 0.05, 0.1]);
    let trace = run_strategy(&mut tr, &ds, &ScheduleConfig::new(200, 20, Strategy::Mixing)).unwrap();
    let u = MixtureProportions::uniform(3).unwrap();
    assert!(trace.checkpoints.iter().all(|c| c.lambda == u));
}

#[test]
fn deltas_match_score_differences() {
    let (ds, mut tr) = synthetic(vec![0.01, 0.05, 0.1]);
    let trace = run_des(&mut tr, &ds, &ScheduleConfig::new(300, 30, Strategy::Des)).unwrap();
    let mut prev = trace.initial_scores.scores().to_vec();
    for c in &trace.checkpoints {
        let d = c.deltas.as_ref().unwrap();
        for (j, p) in prev.iter().enumerate() {
            assert_eq!(d.deltas()[j], c.scores.scores()[j] - p);
        }
        prev = c.scores.scores().to_vec();
    }
}

#[test]
fn run_des_rejects_other_strategies() {
    let (ds, mut tr) = synthetic(vec![0.01, 0.05]);
    assert!(run_des(&mut tr, &ds, &ScheduleConfig::new(10, 5, Strategy::Mixing)).is_err());
    assert!(run_des(&mut tr, &ds, &ScheduleConfig::new(10, 20, Strategy::Des)).is_err());
    assert!(run_des(&mut tr, &ds, &ScheduleConfig::new(10, 0, Strategy::Des)).is_err());
}

/// Evaluates on the reference split before every training step.
struct EagerEvaluator<T>(T);

impl<T: Trainer> Trainer for EagerEvaluator<T> {
    fn train_step(&mut self, batch: &BatchPlan) -> mixsched::Result<f64> {
        // Any reference set will do; evaluation must leave no trace.
        let probe: Vec<TaskDataset> = (0..2).map(|t| TaskDataset::with_count(t, 3)).collect();
        self.0.evaluate(&probe)?;
        self.0.train_step(batch)
    }

    fn evaluate(&self, reference: &[TaskDataset]) -> mixsched::Result<ScoreVector> {
        let first = self.0.evaluate(reference)?;
        let second = self.0.evaluate(reference)?;
        assert_eq!(first, second);
        Ok(second)
    }

    fn snapshot(&self) -> serde_json::Value {
        self.0.snapshot()
    }
}

#[test]
fn extra_evaluations_change_nothing() {
    let (ds, tr) = small_restoration();
    let cfg = ScheduleConfig::new(40, 10, Strategy::Des);
    let plain = run_des(&mut tr.clone(), &ds, &cfg).unwrap();
    let eager = run_des(&mut EagerEvaluator(tr), &ds, &cfg).unwrap();
    assert_eq!(plain, eager);
}

#[test]
fn single_task_collapses_every_strategy() {
    let traces: Vec<ScheduleTrace> = Strategy::ALL
        .iter()
        .map(|&s| {
            let (ds, mut tr) = synthetic(vec![0.02]);
            run_strategy(&mut tr, &ds, &ScheduleConfig::new(100, 10, s)).unwrap()
        })
        .collect();
    for t in &traces[1..] {
        assert_eq!(t.initial_scores, traces[0].initial_scores);
        assert_eq!(t.checkpoints, traces[0].checkpoints);
    }
}

/// Task 0 improves (higher is better); task 1 is an error rate that grows.
struct Drifting {
    t: u64,
}

impl Trainer for Drifting {
    fn train_step(&mut self, _batch: &BatchPlan) -> mixsched::Result<f64> {
        self.t += 1;
        Ok(0.0)
    }

    fn evaluate(&self, _reference: &[TaskDataset]) -> mixsched::Result<ScoreVector> {
        let t = self.t as f64;
        ScoreVector::new(vec![t * 0.1, 1.0 + t * 0.01], vec![true, false])
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!(self.t)
    }
}

#[test]
fn worsening_lower_is_better_task_gains_weight() {
    let ds = SyntheticTrainer::datasets(2, 32);
    let mut cfg = ScheduleConfig::new(30, 10, Strategy::Des);
    cfg.des = DesConfig {
        alpha: 1.0,
        lambda_floor: 0.0,
        normalize_deltas: true,
    };
    let trace = run_des(&mut Drifting { t: 0 }, &ds, &cfg).unwrap();
    let mut prev = 0.5;
    for c in &trace.checkpoints {
        let d = c.deltas.as_ref().unwrap();
        assert!(d.deltas()[1] < 0.0);
        assert!(d.deltas()[0] > 0.0);
        assert!(c.lambda.get(1) > prev);
        prev = c.lambda.get(1);
    }
}

/// Produces a NaN for task 1 once training has started.
struct Diverging(u64);

impl Trainer for Diverging {
    fn train_step(&mut self, _batch: &BatchPlan) -> mixsched::Result<f64> {
        self.0 += 1;
        Ok(0.0)
    }

    fn evaluate(&self, _reference: &[TaskDataset]) -> mixsched::Result<ScoreVector> {
        let bad = if self.0 >= 20 { f64::NAN } else { 1.0 };
        Ok(ScoreVector::higher_is_better(vec![1.0, bad]))
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

#[test]
fn non_finite_score_names_iteration_and_task() {
    let ds = SyntheticTrainer::datasets(2, 32);
    let err = run_des(&mut Diverging(0), &ds, &ScheduleConfig::new(50, 10, Strategy::Des)).unwrap_err();
    match err {
        Error::NonFiniteScore { iteration, task } => {
            assert_eq!((iteration, task), (20, 1));
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(err_message().contains("iteration 20") && err_message().contains("task 1"));
}

fn err_message() -> String {
    let ds = SyntheticTrainer::datasets(2, 32);
    run_des(&mut Diverging(0), &ds, &ScheduleConfig::new(50, 10, Strategy::Des))
        .unwrap_err()
        .to_string()
}

#[test]
fn slow_task_gains_weight_on_conflicting_dynamics() {
    let model = DynamicsModel::new(
        vec![10.0, 10.0],
        vec![30.0, 30.0],
        vec![0.2, 0.05],
        vec![vec![0.0, 0.0], vec![-0.3, 0.0]],
        0.0,
    )
    .unwrap();
    let mut tr = SyntheticTrainer::new(model, 0);
    let mut cfg = ScheduleConfig::new(30, 10, Strategy::Des);
    cfg.batch_mode = BatchMode::Quota;
    cfg.batch_size = 1000;
    let trace = run_des(&mut tr, &SyntheticTrainer::datasets(2, 64), &cfg).unwrap();
    for c in &trace.checkpoints {
        assert!(c.lambda.get(1) > 0.5, "{:?}", c.lambda);
    }
}

#[test]
fn training_improves_denoising() {
    let (ds, mut tr) = small_restoration();
    let only_noise = MixtureProportions::one_hot(2, 0).unwrap();
    let trace = run_fixed_mixture(&mut tr, &ds, &ScheduleConfig::new(300, 100, Strategy::Mixing), only_noise).unwrap();
    let before = trace.initial_scores.scores()[0];
    let after = trace.final_scores().scores()[0];
    assert!(after > before + 0.2, "{before} -> {after}");
}

#[test]
fn mean_loss_decreases_early_in_training() {
    for seed in 0..3 {
        let (ds, mut tr) = small_restoration();
        let mut cfg = ScheduleConfig::new(500, 100, Strategy::Mixing);
        cfg.seed = seed;
        let trace = run_strategy(&mut tr, &ds, &cfg).unwrap();
        let first = trace.checkpoints[0].mean_loss;
        let last = trace.checkpoints.last().unwrap().mean_loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn fixed_mixture_matches_mixing_when_uniform() {
    let (ds, mut a) = synthetic(vec![0.01, 0.02]);
    let mut b = a.clone();
    let cfg = ScheduleConfig::new(50, 10, Strategy::Mixing);
    let x = run_strategy(&mut a, &ds, &cfg).unwrap();
    let y = run_fixed_mixture(&mut b, &ds, &cfg, MixtureProportions::uniform(2).unwrap()).unwrap();
    assert_eq!(x, y);
    assert!(run_fixed_mixture(&mut b, &ds, &cfg, MixtureProportions::uniform(3).unwrap()).is_err());
}

#[test]
fn comparison_is_deterministic_and_complete() {
    let (ds, tr) = small_restoration();
    let cfg = ScheduleConfig::new(40, 10, Strategy::Mixing);
    let factory = |_seed: u64| Ok(tr.clone());
    let a = compare_strategies(factory, &ds, &cfg, &[Strategy::Mixing, Strategy::Mixing], &[1]).unwrap();
    assert_eq!(a.summary.rows[0], a.summary.rows[1]);

    let all = compare_strategies(factory, &ds, &cfg, &Strategy::ALL, &[1, 2]).unwrap();
    let again = compare_strategies(factory, &ds, &cfg, &Strategy::ALL, &[1, 2]).unwrap();
    assert_eq!(all.summary, again.summary);
    assert_eq!(all.summary.rows.len(), 8);
    assert!(all.traces.iter().all(|(_, t)| t.checkpoints.len() == 4));
    assert!(all.summary.worst_task_wins.contains_key(&Strategy::Des));
    let wins: usize = all.summary.mean_wins.values().sum();
    assert!(wins >= 2);
    assert!(compare_strategies(factory, &ds, &cfg, &Strategy::ALL, &[]).is_err());
}

#[test]
fn trace_csv_has_one_row_per_checkpoint_and_task() {
    let (ds, mut tr) = synthetic(vec![0.01, 0.02, 0.03]);
    let trace = run_des(&mut tr, &ds, &ScheduleConfig::new(50, 10, Strategy::Des)).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], ScheduleTrace::CSV_HEADER);
    assert_eq!(lines.len(), 1 + 5 * 3);
    assert!(lines[1].starts_with("10,0,"));
}
