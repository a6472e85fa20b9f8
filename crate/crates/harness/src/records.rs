//! Line-delimited JSON scenario records.
//!
//! Each line is one self-describing object. Files are only ever appended to
//! and every line is flushed as soon as it is written, so a killed run leaves
//! a readable file (at worst with one truncated final line, which readers
//! skip).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gridfuzz_core::baselines::ManoeuvrePlan;
use gridfuzz_core::metrics::FitnessRecord;
use gridfuzz_core::road::CollisionEvent;
use gridfuzz_core::scenario::{NpcPlan, Outcome};
use gridfuzz_core::search::{EvaluatedIndividual, Phase};
use serde::{Deserialize, Serialize};

use crate::config::Technique;
use crate::error::{io_at, HarnessError, Result};

/// A genome of either encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", content = "chromosomes", rename_all = "kebab-case")]
pub enum GenomeRecord {
    Grid(Vec<NpcPlan>),
    Manoeuvre(Vec<ManoeuvrePlan>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub technique: Technique,
    pub run: usize,
    /// Seed of the search that produced this scenario.
    pub run_seed: u64,
    pub generation: u32,
    pub phase: Phase,
    pub individual: u32,
    /// Seed of the scenario's own random stream.
    pub seed: u64,
    pub genome: GenomeRecord,
    pub fitness: FitnessRecord,
    pub outcome: Outcome,
    pub event: Option<CollisionEvent>,
    pub collision_time: Option<f64>,
    /// Simulated seconds the scenario ran for.
    pub sim_time: f64,
    /// Trace file, relative to the record file's directory.
    pub trace: Option<String>,
}

impl ScenarioRecord {
    pub fn from_individual<C>(
        technique: Technique,
        run: usize,
        run_seed: u64,
        ind: &EvaluatedIndividual<C>,
        genome: GenomeRecord,
    ) -> Self {
        let e = &ind.evaluation;
        let collision_time = match e.outcome {
            Outcome::Collision => e.event.map(|ev| ev.time),
            _ => None,
        };
        ScenarioRecord {
            technique,
            run,
            run_seed,
            generation: ind.lineage.generation,
            phase: ind.lineage.phase,
            individual: ind.lineage.index,
            seed: e.seed,
            genome,
            fitness: e.fitness,
            outcome: e.outcome,
            event: e.event,
            collision_time,
            sim_time: e.sim_time,
            trace: None,
        }
    }

    pub fn is_collision(&self) -> bool {
        self.outcome == Outcome::Collision
    }

    /// Stable identifier: technique, run, generation, phase and index.
    pub fn id(&self) -> String {
        format!(
            "{}-r{:02}-g{:04}-{}-{:04}",
            self.technique,
            self.run,
            self.generation,
            self.phase.as_str(),
            self.individual
        )
    }
}

/// Single appending writer for a record file.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_at(path))?;
        Ok(RecordWriter {
            path: path.to_owned(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &ScenarioRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.out
            .write_all(line.as_bytes())
            .map_err(io_at(&self.path))?;
        self.out.flush().map_err(io_at(&self.path))
    }
}

/// Reads every complete record. A final line without a newline that does not
/// parse is treated as an interrupted write and ignored.
pub fn read_records(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_at(path))?;
        if n == 0 {
            break;
        }
        number += 1;
        let complete = line.ends_with('\n');
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str(text) {
            Ok(r) => records.push(r),
            Err(_) if !complete => break,
            Err(source) => {
                return Err(HarnessError::Record {
                    path: path.to_owned(),
                    line: number,
                    source,
                })
            }
        }
    }
    Ok(records)
}
