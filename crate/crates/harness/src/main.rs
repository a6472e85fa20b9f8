use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gridfuzz::config::{ExperimentConfig, Technique};
use gridfuzz::experiment::{read_runs, run_experiment, technique_dir, RECORDS_FILE, RUNS_FILE};
use gridfuzz::records::read_records;
use gridfuzz::replay::{config_beside, replay};
use gridfuzz::report::emit_report;

#[derive(Parser)]
#[command(
    name = "gridfuzz",
    version,
    about = "Search for collision scenarios against a rule-based driving agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write records and reports.
    Run(RunArgs),
    /// Re-execute stored scenarios and verify they reproduce exactly.
    Replay(ReplayArgs),
    /// Build combined reports from one or more technique directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    technique: Option<Technique>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    generations: Option<usize>,
    /// Population size k.
    #[arg(long)]
    population: Option<usize>,
    /// Scenario budget in simulated seconds.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output root; defaults to the config value, then $GRIDFUZZ_OUT, then ./gridfuzz-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write state traces for collision scenarios.
    #[arg(long)]
    traces: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Record file written by `run`.
    records: PathBuf,
    /// Only replay the record with this id.
    #[arg(long)]
    id: Option<String>,
    /// Configuration to replay with; defaults to config.toml next to the records.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the trace of the replayed record (requires --id) to this file.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Replay every record, not only collisions.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Technique directories (each holding records.jsonl and config.toml).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory to write the combined report into.
    #[arg(long)]
    out: PathBuf,
}

fn build_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = args.technique {
        cfg.technique = t;
    }
    if let Some(s) = args.seed {
        cfg.ga.seed = s;
    }
    if let Some(g) = args.generations {
        cfg.ga.generations = g;
    }
    if let Some(k) = args.population {
        cfg.ga.population_size = k;
    }
    if let Some(b) = args.budget {
        cfg.ga.scenario_budget = b;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.traces |= args.traces;
    cfg.sync_budget();
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = build_config(&args)?;
    let started = std::time::Instant::now();
    let result = run_experiment(&cfg)?;
    for t in &result.summary.techniques {
        println!(
            "{}: {} runs, {} scenarios, {} collisions ({:.1}%), median time to collision {}",
            t.technique,
            t.runs,
            t.scenarios,
            t.collisions,
            100.0 * t.collision_fraction,
            t.ttc_median
                .map_or("-".to_string(), |v| format!("{v:.2} s")),
        );
    }
    println!(
        "output: {} ({:.1} s wall clock)",
        result.dir.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> anyhow::Result<()> {
    let records = read_records(&args.records)?;
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => config_beside(&args.records)?,
    };
    let selected: Vec<_> = records
        .iter()
        .filter(|r| match &args.id {
            Some(id) => &r.id() == id,
            None => args.all || r.is_collision(),
        })
        .collect();
    if selected.is_empty() {
        bail!("no matching records in {}", args.records.display());
    }
    if args.trace_out.is_some() && selected.len() != 1 {
        bail!("--trace-out needs exactly one record; use --id");
    }
    for r in &selected {
        let rep = replay(&cfg, r)?;
        if let Some(path) = &args.trace_out {
            std::fs::write(path, serde_json::to_string(&rep)?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("{} record(s) replayed identically", selected.len());
    Ok(())
}

fn load_dir(
    dir: &Path,
) -> anyhow::Result<(
    ExperimentConfig,
    Vec<gridfuzz::records::ScenarioRecord>,
    Vec<gridfuzz::experiment::RunSummary>,
)> {
    let cfg = ExperimentConfig::load(&dir.join(gridfuzz::experiment::CONFIG_FILE))?;
    let records = read_records(&dir.join(RECORDS_FILE))?;
    let runs_path = dir.join(RUNS_FILE);
    let runs = if runs_path.exists() {
        read_runs(&runs_path)?
    } else {
        Vec::new()
    };
    Ok((cfg, records, runs))
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut budget = None;
    for input in &args.inputs {
        // Accept either a technique directory or an output root holding several.
        let dirs: Vec<PathBuf> = if input.join(RECORDS_FILE).exists() {
            vec![input.clone()]
        } else {
            Technique::ALL
                .iter()
                .map(|&t| technique_dir(input, t))
                .filter(|d| d.join(RECORDS_FILE).exists())
                .collect()
        };
        if dirs.is_empty() {
            bail!("{}: no {RECORDS_FILE} found", input.display());
        }
        for d in dirs {
            let (cfg, recs, rs) =
                load_dir(&d).with_context(|| format!("loading {}", d.display()))?;
            match budget {
                None => budget = Some(cfg.setup.budget),
                Some(b) if b != cfg.setup.budget => bail!("inputs use different scenario budgets"),
                _ => {}
            }
            records.extend(recs);
            runs.extend(rs);
        }
    }
    if records.is_empty() {
        bail!("no records to report on");
    }
    let summary = emit_report(&records, &runs, budget.unwrap_or(0.0), &args.out)?;
    println!(
        "{} technique(s) summarised into {}",
        summary.techniques.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
