//! Re-execution of stored scenarios.

use std::path::Path;

use gridfuzz_core::scenario::{Outcome, SimRun, TraceFrame};
use gridfuzz_core::search::Genome;
use serde::Serialize;

use crate::config::{ExperimentConfig, Technique};
use crate::error::{HarnessError, Result};
use crate::experiment::{grid_problem, manoeuvre_problem};
use crate::records::{GenomeRecord, ScenarioRecord};

/// Replay result with its full per-step trace.
#[derive(Debug, Clone, Serialize)]
pub struct Replay {
    pub id: String,
    pub outcome: Outcome,
    pub collision_time: Option<f64>,
    pub trace: Vec<TraceFrame>,
}

fn simulate_record(cfg: &ExperimentConfig, record: &ScenarioRecord) -> Result<SimRun> {
    let mismatch = |detail: String| HarnessError::Determinism {
        record: record.id(),
        detail,
    };
    let run = match (&record.genome, record.technique) {
        (GenomeRecord::Grid(chromosomes), Technique::Pafot) => {
            let genome = Genome {
                chromosomes: chromosomes.clone(),
            };
            grid_problem(cfg).run(&genome, record.seed, true)?.run
        }
        (GenomeRecord::Manoeuvre(chromosomes), Technique::Avfuzzer | Technique::Random) => {
            let genome = Genome {
                chromosomes: chromosomes.clone(),
            };
            manoeuvre_problem(cfg).run(&genome, record.seed, true)?
        }
        _ => {
            return Err(mismatch(format!(
                "genome encoding does not belong to {}",
                record.technique
            )))
        }
    };
    Ok(run)
}

/// Full trace of a record's scenario, without verification.
pub fn trace_of(cfg: &ExperimentConfig, record: &ScenarioRecord) -> Result<Vec<TraceFrame>> {
    Ok(simulate_record(cfg, record)?.trace.unwrap_or_default())
}

/// Re-executes `record` and checks that outcome, collision time and fitness
/// match exactly.
pub fn replay(cfg: &ExperimentConfig, record: &ScenarioRecord) -> Result<Replay> {
    let run = simulate_record(cfg, record)?;
    let collision_time = match run.outcome {
        Outcome::Collision => run.event.map(|e| e.time),
        _ => None,
    };
    let mut problems = Vec::new();
    if run.outcome != record.outcome {
        problems.push(format!(
            "outcome {} != recorded {}",
            run.outcome.as_str(),
            record.outcome.as_str()
        ));
    }
    if collision_time != record.collision_time {
        problems.push(format!(
            "collision time {collision_time:?} != recorded {:?}",
            record.collision_time
        ));
    }
    if run.fitness != record.fitness {
        problems.push(format!(
            "fitness {} != recorded {}",
            run.fitness.score, record.fitness.score
        ));
    }
    if run.sim_time != record.sim_time {
        problems.push(format!(
            "simulated time {} != recorded {}",
            run.sim_time, record.sim_time
        ));
    }
    if !problems.is_empty() {
        return Err(HarnessError::Determinism {
            record: record.id(),
            detail: problems.join("; "),
        });
    }
    Ok(Replay {
        id: record.id(),
        outcome: run.outcome,
        collision_time,
        trace: run.trace.unwrap_or_default(),
    })
}

/// Loads the configuration stored next to a record file.
pub fn config_beside(records: &Path) -> Result<ExperimentConfig> {
    let dir = records.parent().unwrap_or_else(|| Path::new("."));
    ExperimentConfig::load(&dir.join(crate::experiment::CONFIG_FILE))
}
