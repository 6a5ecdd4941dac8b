use mixsched::scheduler::run_strategy;
use mixsched::testbed::{write_pgm, Scenario};

use super::{trace_csv, Problem};
use crate::config::TrainConfig;
use crate::report::{OutputSet, RunSummary};
use crate::{CliError, CommonArgs};

pub fn run(cfg: &TrainConfig, args: &CommonArgs) -> Result<(), CliError> {
    let problem = Problem::testbed(cfg.testbed.clone().unwrap_or_else(Scenario::desk))?;
    let Problem::Testbed { names, datasets, trainer } = &problem else {
        unreachable!("testbed problem");
    };
    let seed = args.seed(cfg.seed);
    let schedule = cfg.schedule(cfg.strategy, seed);
    problem.check_schedule(&schedule)?;
    args.progress(format!("train: {} for {} iterations", cfg.strategy, cfg.iterations));

    let mut trainer = trainer.clone();
    let trace = run_strategy(&mut trainer, datasets, &schedule)?;

    let mut out = OutputSet::default();
    out.add("trace.csv", trace_csv(&[(seed, &trace)])?);
    out.add_json(
        "summary.json",
        &RunSummary {
            tasks: names.clone(),
            iterations: cfg.iterations,
            interval: cfg.interval,
            seed,
            trace: trace.summary(),
        },
    )?;
    out.add_json("model.json", &mixsched::Trainer::snapshot(&trainer))?;

    for (task, (name, ds)) in names.iter().zip(datasets).enumerate() {
        for &sample in ds.samples().iter().take(cfg.save_samples) {
            let (lq, hq) = trainer.pair(task, sample)?;
            let restored = trainer.model().predict(lq);
            for (kind, img) in [("input", lq), ("output", &restored), ("target", hq)] {
                let mut bytes = Vec::new();
                write_pgm(img, &mut bytes).map_err(CliError::runtime)?;
                out.add(format!("samples/{task}_{name}_{sample}_{kind}.pgm"), bytes);
            }
        }
    }
    out.write_to(&args.out)?;
    args.progress(format!("wrote results to {}", args.out.display()));
    Ok(())
}
