use mixsched::scheduler::{compare_strategies, Comparison, ScheduleTrace, Strategy};
use mixsched::synthetic::SyntheticTrainer;

use super::{trace_csv, Problem};
use crate::config::CompareConfig;
use crate::report::{CompareSummary, OutputSet};
use crate::svg::{line_panels, Panel, Series};
use crate::{CliError, CommonArgs};

pub fn run(cfg: &CompareConfig, args: &CommonArgs) -> Result<(), CliError> {
    let outputs = execute(cfg, args)?;
    outputs.write_to(&args.out)?;
    args.progress(format!("wrote {} files to {}", outputs.names().count(), args.out.display()));
    Ok(())
}

/// Runs the comparison and renders every output file in memory.
pub fn execute(cfg: &CompareConfig, args: &CommonArgs) -> Result<OutputSet, CliError> {
    if cfg.strategies.len() < 2 {
        return Err(CliError::Config(".strategies: at least two strategies are required".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Config(".seeds: at least one seed is required".into()));
    }
    let problem = Problem::resolve(&cfg.testbed, &cfg.synthetic)?;
    let seeds: Vec<u64> = cfg.seeds.iter().map(|&s| args.seed(s)).collect();
    let base = cfg.schedule(Strategy::Mixing, 0);
    problem.check_schedule(&base)?;
    args.progress(format!(
        "compare: {} strategies x {} seeds, {} iterations",
        cfg.strategies.len(),
        seeds.len(),
        cfg.iterations
    ));

    let comparison: Comparison = match &problem {
        Problem::Testbed { datasets, trainer, .. } => {
            compare_strategies(|_| Ok(trainer.clone()), datasets, &base, &cfg.strategies, &seeds)?
        }
        Problem::Synthetic { scenario, datasets } => {
            let model = scenario.model()?;
            compare_strategies(
                |seed| Ok(SyntheticTrainer::new(model.clone(), seed)),
                datasets,
                &base,
                &cfg.strategies,
                &seeds,
            )?
        }
    };

    let names = problem.task_names();
    let mut out = OutputSet::default();
    let mut csv = Vec::new();
    comparison.summary.write_csv(&mut csv).map_err(CliError::runtime)?;
    out.add("strategies.csv", csv);
    out.add_json(
        "summary.json",
        &CompareSummary::new(names.clone(), cfg.iterations, cfg.interval, &comparison.summary),
    )?;

    for &strategy in &comparison.summary.strategies {
        let mut seen = Vec::new();
        let traces: Vec<(u64, &ScheduleTrace)> = comparison
            .traces
            .iter()
            .filter(|(seed, t)| {
                let first = t.strategy == strategy && !seen.contains(seed);
                if first {
                    seen.push(*seed);
                }
                first
            })
            .map(|(seed, t)| (*seed, t))
            .collect();
        out.add(format!("trace_{strategy}.csv"), trace_csv(&traces)?);
    }
    out.add("proportions.svg", proportions_svg(&comparison, &names).into_bytes());
    Ok(out)
}

/// λ trajectories of the first seed, one panel per strategy.
fn proportions_svg(c: &Comparison, names: &[String]) -> String {
    let first_seed = c.summary.seeds[0];
    let panels: Vec<Panel> = c
        .summary
        .strategies
        .iter()
        .filter_map(|&st| {
            let (_, trace) = c.traces.iter().find(|(s, t)| *s == first_seed && t.strategy == st)?;
            let k = names.len();
            let series = (0..k)
                .map(|j| Series {
                    label: names[j].clone(),
                    points: trace
                        .checkpoints
                        .iter()
                        .map(|cp| (cp.iteration as f64, cp.lambda.get(j)))
                        .collect(),
                })
                .collect();
            Some(Panel {
                title: format!("{st}: mixture proportions (seed {first_seed})"),
                x_label: "iteration".into(),
                y_label: "lambda".into(),
                series,
                y_range: Some((0.0, 1.0)),
            })
        })
        .collect();
    line_panels(&panels)
}
