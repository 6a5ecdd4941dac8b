use mixsched::scheduler::run_strategy;
use mixsched::synthetic::SyntheticTrainer;

use super::{trace_csv, Problem};
use crate::config::SimulateConfig;
use crate::report::{OutputSet, RunSummary};
use crate::{CliError, CommonArgs};

pub fn run(cfg: &SimulateConfig, args: &CommonArgs) -> Result<(), CliError> {
    let problem = Problem::synthetic(&cfg.synthetic)?;
    let seed = args.seed(cfg.seed);
    let schedule = cfg.schedule(cfg.strategy, seed);
    problem.check_schedule(&schedule)?;
    args.progress(format!("simulate: {} for {} iterations", cfg.strategy, cfg.iterations));

    let mut trainer = SyntheticTrainer::new(cfg.synthetic.model()?, seed);
    let trace = run_strategy(&mut trainer, problem.datasets(), &schedule)?;

    let mut out = OutputSet::default();
    out.add("trace.csv", trace_csv(&[(seed, &trace)])?);
    out.add_json(
        "summary.json",
        &RunSummary {
            tasks: problem.task_names(),
            iterations: cfg.iterations,
            interval: cfg.interval,
            seed,
            trace: trace.summary(),
        },
    )?;
    out.write_to(&args.out)?;
    args.progress(format!("wrote results to {}", args.out.display()));
    Ok(())
}
