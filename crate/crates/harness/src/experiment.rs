//! Running experiments: repeated searches with per-run seeds, streaming every
//! evaluated scenario to the record file as soon as it completes.

use std::fs;
use std::path::{Path, PathBuf};

use gridfuzz_core::baselines::{avfuzzer_like, random_fuzz, ManoeuvreProblem};
use gridfuzz_core::rng::{derive_seed, STREAM_RUN};
use gridfuzz_core::scenario::{GridProblem, TraceFrame};
use gridfuzz_core::search::{
    run_search, EvaluatedIndividual, Evaluation, Executor, Job, ScenarioProblem, SearchReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Technique};
use crate::error::{io_at, HarnessError, Result};
use crate::records::{GenomeRecord, RecordWriter, ScenarioRecord};
use crate::report::{emit_report, SummaryReport};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const RUNS_FILE: &str = "runs.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_DIR: &str = "traces";

/// Evaluates each batch on the rayon pool. Results come back in job order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn evaluate_batch<P: ScenarioProblem>(
        &self,
        problem: &P,
        jobs: &[Job<P::Chromosome>],
    ) -> Vec<Evaluation<P::Chromosome>> {
        jobs.par_iter()
            .map(|j| problem.evaluate(&j.genome, j.seed))
            .collect()
    }
}

/// Per-run bookkeeping that is not visible in individual records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub technique: Technique,
    pub run: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub collisions: usize,
    pub local_fuzz_activations: usize,
    pub restarts: usize,
    pub simulated_time: f64,
    /// Wall-clock seconds; informational only.
    pub wall_clock: f64,
}

impl RunSummary {
    fn from_report<C: Clone>(
        technique: Technique,
        run: usize,
        seed: u64,
        report: &SearchReport<C>,
        wall_clock: f64,
    ) -> Self {
        RunSummary {
            technique,
            run,
            seed,
            evaluations: report.evaluations,
            collisions: report.collisions.len(),
            local_fuzz_activations: report.local_fuzz_activations,
            restarts: report.restarts,
            simulated_time: report.simulated_time,
            wall_clock,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub dir: PathBuf,
    pub records: Vec<ScenarioRecord>,
    pub runs: Vec<RunSummary>,
    pub summary: SummaryReport,
}

pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, &[STREAM_RUN, run as u64])
}

/// Directory holding one technique's output under `root`.
pub fn technique_dir(root: &Path, technique: Technique) -> PathBuf {
    root.join(technique.as_str())
}

pub fn grid_problem(cfg: &ExperimentConfig) -> GridProblem {
    GridProblem::new(cfg.setup, cfg.ga.genes_per_chromosome)
}

pub fn manoeuvre_problem(cfg: &ExperimentConfig) -> ManoeuvreProblem {
    ManoeuvreProblem::new(cfg.setup, cfg.ga.genes_per_chromosome)
}

fn write_trace(dir: &Path, id: &str, frames: &[TraceFrame]) -> Result<String> {
    let traces = dir.join(TRACE_DIR);
    fs::create_dir_all(&traces).map_err(io_at(&traces))?;
    let name = format!("{TRACE_DIR}/{id}.json");
    let path = dir.join(&name);
    let text = serde_json::to_string(frames)?;
    fs::write(&path, text).map_err(io_at(&path))?;
    Ok(name)
}

struct Sink<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    run: usize,
    seed: u64,
    writer: &'a mut RecordWriter,
    records: &'a mut Vec<ScenarioRecord>,
    error: Option<HarnessError>,
}

impl Sink<'_> {
    fn accept<C>(&mut self, ind: &EvaluatedIndividual<C>, genome: GenomeRecord) {
        if self.error.is_some() {
            return;
        }
        let mut record =
            ScenarioRecord::from_individual(self.cfg.technique, self.run, self.seed, ind, genome);
        let result = (|| {
            if self.cfg.traces && record.is_collision() {
                let frames = crate::replay::trace_of(self.cfg, &record)?;
                record.trace = Some(write_trace(self.dir, &record.id(), &frames)?);
            }
            self.writer.write(&record)
        })();
        match result {
            Ok(()) => self.records.push(record),
            Err(e) => self.error = Some(e),
        }
    }
}

/// Runs `cfg.runs` independent searches of `cfg.technique` and writes the
/// records, run summaries and report files under
/// `<output>/<technique>/`. Existing files there are replaced.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_in(cfg, &cfg.resolved_output_dir())
}

pub fn run_experiment_in(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dir = technique_dir(root, cfg.technique);
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    for stale in [RECORDS_FILE, RUNS_FILE] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(io_at(&p))?;
        }
    }
    let traces = dir.join(TRACE_DIR);
    if traces.exists() {
        fs::remove_dir_all(&traces).map_err(io_at(&traces))?;
    }
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_toml()).map_err(io_at(&config_path))?;

    let mut writer = RecordWriter::append(&dir.join(RECORDS_FILE))?;
    let runs_path = dir.join(RUNS_FILE);
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for run in 0..cfg.runs {
        let seed = run_seed(cfg.ga.seed, run);
        let mut ga = cfg.ga;
        ga.seed = seed;
        let started = std::time::Instant::now();
        let mut sink = Sink {
            cfg,
            dir: &dir,
            run,
            seed,
            writer: &mut writer,
            records: &mut records,
            error: None,
        };
        let summary = match cfg.technique {
            Technique::Pafot => {
                let problem = grid_problem(cfg);
                let report = run_search(&problem, &ga, &RayonExecutor, &mut |ind| {
                    sink.accept(ind, GenomeRecord::Grid(ind.genome().chromosomes.clone()))
                })?;
                RunSummary::from_report(
                    cfg.technique,
                    run,
                    seed,
                    &report,
                    started.elapsed().as_secs_f64(),
                )
            }
            Technique::Avfuzzer => {
                let problem = manoeuvre_problem(cfg);
                let report = avfuzzer_like(&problem, &ga, &RayonExecutor, &mut |ind| {
                    sink.accept(
                        ind,
                        GenomeRecord::Manoeuvre(ind.genome().chromosomes.clone()),
                    )
                })?;
                RunSummary::from_report(
                    cfg.technique,
                    run,
                    seed,
                    &report,
                    started.elapsed().as_secs_f64(),
                )
            }
            Technique::Random => {
                let problem = manoeuvre_problem(cfg);
                let report = random_fuzz(
                    &problem,
                    &ga,
                    cfg.random_scenarios(),
                    cfg.random.interval,
                    &RayonExecutor,
                    &mut |ind| {
                        sink.accept(
                            ind,
                            GenomeRecord::Manoeuvre(ind.genome().chromosomes.clone()),
                        )
                    },
                )?;
                RunSummary::from_report(
                    cfg.technique,
                    run,
                    seed,
                    &report,
                    started.elapsed().as_secs_f64(),
                )
            }
        };
        if let Some(e) = sink.error {
            return Err(e);
        }
        append_line(&runs_path, &summary)?;
        runs.push(summary);
    }
    let summary = emit_report(&records, &runs, cfg.setup.budget, &dir)?;
    Ok(ExperimentResult {
        dir,
        records,
        runs,
        summary,
    })
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_at(path))?;
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(io_at(path))
}

pub fn read_runs(path: &Path) -> Result<Vec<RunSummary>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}
