use mixsched::scheduler::{run_fixed_mixture, ScheduleConfig, ScoreVector, Strategy};
use mixsched::synthetic::{grid_mixture, simplex_grid, sweep_fixed_mixtures, Landscape, LandscapePoint};
use rayon::prelude::*;

use super::Problem;
use crate::config::SweepConfig;
use crate::report::{ArgmaxReport, OutputSet};
use crate::svg::{line_panels, ternary_heat, Panel, Series};
use crate::{CliError, CommonArgs};

pub fn run(cfg: &SweepConfig, args: &CommonArgs) -> Result<(), CliError> {
    let outputs = execute(cfg, args)?;
    outputs.write_to(&args.out)?;
    args.progress(format!("wrote results to {}", args.out.display()));
    Ok(())
}

pub fn execute(cfg: &SweepConfig, args: &CommonArgs) -> Result<OutputSet, CliError> {
    if cfg.grid_resolution < 2 {
        return Err(CliError::Config(".grid_resolution: must be >= 2".into()));
    }
    let problem = Problem::resolve(&cfg.testbed, &cfg.synthetic)?;
    let seed = args.seed(cfg.seed);
    let k = problem.datasets().len();
    args.progress(format!(
        "sweep: {} grid points for {k} tasks",
        simplex_grid(k, cfg.grid_resolution).len()
    ));

    let landscape = match &problem {
        Problem::Synthetic { scenario, .. } => {
            sweep_fixed_mixtures(&scenario.model()?, cfg.grid_resolution, cfg.steps, seed)?
        }
        Problem::Testbed { datasets, trainer, .. } => {
            let iterations = cfg
                .iterations
                .ok_or_else(|| CliError::Config(".iterations: required for a testbed sweep".into()))?;
            let schedule = ScheduleConfig {
                batch_size: cfg.batch_size,
                batch_mode: cfg.batch_mode,
                reference_size: cfg.reference_size,
                seed,
                ..ScheduleConfig::new(iterations, iterations, Strategy::Mixing)
            };
            problem.check_schedule(&schedule)?;
            let points = simplex_grid(k, cfg.grid_resolution)
                .par_iter()
                .map(|nums| {
                    let lambda = grid_mixture(nums, cfg.grid_resolution)?;
                    let trace = run_fixed_mixture(&mut trainer.clone(), datasets, &schedule, lambda.clone())?;
                    let fin: &ScoreVector = trace.final_scores();
                    Ok(LandscapePoint {
                        lambda: lambda.weights().to_vec(),
                        final_scores: fin.scores().to_vec(),
                        mean_score: fin.mean(),
                        worst_score: fin.worst(),
                    })
                })
                .collect::<mixsched::Result<Vec<_>>>()?;
            Landscape::from_points(cfg.grid_resolution, points)
        }
    };

    let names = problem.task_names();
    let mut out = OutputSet::default();
    let mut csv = Vec::new();
    landscape.write_csv(&mut csv).map_err(CliError::runtime)?;
    out.add("landscape.csv", csv);
    out.add_json("argmax.json", &ArgmaxReport::new(names.clone(), &landscape))?;
    if cfg.svg {
        match landscape_svg(&landscape, &names) {
            Some(svg) => out.add("landscape.svg", svg.into_bytes()),
            None => eprintln!("warning: landscape.svg needs 2 or 3 tasks, got {k}; wrote CSV only"),
        }
    }
    Ok(out)
}

fn landscape_svg(l: &Landscape, names: &[String]) -> Option<String> {
    match names.len() {
        2 => {
            let curve = |f: fn(&LandscapePoint) -> f64| l.points.iter().map(|p| (p.lambda[0], f(p))).collect();
            Some(line_panels(&[Panel {
                title: "Fixed-mixture landscape".into(),
                x_label: format!("lambda of {}", names[0]),
                y_label: "final score".into(),
                series: vec![
                    Series {
                        label: "mean".into(),
                        points: curve(|p| p.mean_score),
                    },
                    Series {
                        label: "worst task".into(),
                        points: curve(|p| p.worst_score),
                    },
                ],
                y_range: None,
            }]))
        }
        3 => {
            let pts: Vec<(Vec<f64>, f64)> = l.points.iter().map(|p| (p.lambda.clone(), p.mean_score)).collect();
            Some(ternary_heat(
                "Fixed-mixture landscape: mean final score",
                [&names[0], &names[1], &names[2]],
                l.grid_resolution,
                &pts,
                &l.argmax_mean,
            ))
        }
        _ => None,
    }
}
