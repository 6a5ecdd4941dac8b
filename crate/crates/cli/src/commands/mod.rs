//! One module per subcommand.

pub mod compare;
pub mod moe_check;
pub mod simulate;
pub mod sweep;
pub mod train;

use mixsched::sampler::TaskDataset;
use mixsched::scheduler::{ScheduleConfig, ScheduleTrace};
use mixsched::synthetic::SyntheticTrainer;
use mixsched::testbed::{build_restoration_suite, RestorationTrainer, Scenario};

use crate::config::SyntheticScenario;
use crate::CliError;

/// The problem a command runs on.
pub(crate) enum Problem {
    Testbed {
        names: Vec<String>,
        datasets: Vec<TaskDataset>,
        trainer: RestorationTrainer,
    },
    Synthetic {
        scenario: SyntheticScenario,
        datasets: Vec<TaskDataset>,
    },
}

impl Problem {
    /// Picks the scenario; the desk testbed when neither key is given.
    pub(crate) fn resolve(testbed: &Option<Scenario>, synthetic: &Option<SyntheticScenario>) -> Result<Self, CliError> {
        match (testbed, synthetic) {
            (Some(_), Some(_)) => Err(CliError::Config(
                ".synthetic: give either \"testbed\" or \"synthetic\", not both".into(),
            )),
            (_, Some(s)) => Self::synthetic(s),
            (t, None) => Self::testbed(t.clone().unwrap_or_else(Scenario::desk)),
        }
    }

    pub(crate) fn testbed(scenario: Scenario) -> Result<Self, CliError> {
        scenario.validate().map_err(|e| CliError::config(".testbed", e))?;
        let (datasets, trainer) = build_restoration_suite(&scenario).map_err(|e| CliError::config(".testbed", e))?;
        Ok(Problem::Testbed {
            names: scenario.tasks.iter().map(|t| t.name.clone()).collect(),
            datasets,
            trainer,
        })
    }

    pub(crate) fn synthetic(scenario: &SyntheticScenario) -> Result<Self, CliError> {
        scenario.model()?;
        if scenario.dataset_size == 0 {
            return Err(CliError::Config(".synthetic.dataset_size: must be >= 1".into()));
        }
        Ok(Problem::Synthetic {
            datasets: SyntheticTrainer::datasets(scenario.k(), scenario.dataset_size),
            scenario: scenario.clone(),
        })
    }

    pub(crate) fn datasets(&self) -> &[TaskDataset] {
        match self {
            Problem::Testbed { datasets, .. } | Problem::Synthetic { datasets, .. } => datasets,
        }
    }

    pub(crate) fn task_names(&self) -> Vec<String> {
        match self {
            Problem::Testbed { names, .. } => names.clone(),
            Problem::Synthetic { scenario, .. } => (0..scenario.k()).map(|j| format!("task{j}")).collect(),
        }
    }

    /// Checks a schedule against this problem before anything runs.
    pub(crate) fn check_schedule(&self, cfg: &ScheduleConfig) -> Result<(), CliError> {
        if let Err(e) = cfg.validate(self.datasets().len()) {
            let msg = e.to_string();
            let key = ["interval", "total_iterations", "batch_size", "alpha", "lambda_floor"]
                .into_iter()
                .find(|k| msg.contains(k))
                .map(|k| if k == "total_iterations" { "iterations" } else { k });
            return Err(CliError::config(&format!(".{}", key.unwrap_or("")), msg));
        }
        let smallest = self.datasets().iter().map(|d| d.len()).min().unwrap_or(0);
        if smallest <= cfg.reference_size {
            return Err(CliError::Config(format!(
                ".reference_size: {} leaves no training samples for a task of size {smallest}",
                cfg.reference_size
            )));
        }
        Ok(())
    }
}

/// `ScheduleTrace` CSV with a leading seed column.
pub(crate) fn trace_csv(traces: &[(u64, &ScheduleTrace)]) -> Result<Vec<u8>, CliError> {
    let mut out = format!("seed,{}\n", ScheduleTrace::CSV_HEADER).into_bytes();
    for (seed, trace) in traces {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).map_err(CliError::runtime)?;
        let text = String::from_utf8(buf).map_err(CliError::runtime)?;
        for line in text.lines().skip(1) {
            out.extend_from_slice(format!("{seed},{line}\n").as_bytes());
        }
    }
    Ok(out)
}
