//! Summary statistics and CSV report files.
//!
//! Files written by [`emit_report`]:
//! - `totals.csv`: one row per technique (scenarios, collisions, time to collision)
//! - `cumulative.csv`: collisions found against simulated time spent, per run
//! - `per_run.csv`: safe and unsafe scenario counts per run
//! - `histogram.csv`: collision times in 10 s bins over the scenario budget
//! - `summary.json`: all of the above for the totals and histogram

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Technique;
use crate::error::{io_at, Result};
use crate::experiment::RunSummary;
use crate::records::ScenarioRecord;

/// Width of a collision-time histogram bin, seconds.
pub const BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Counts `times` in consecutive 10 s bins covering `[0, budget]`. The last
/// bin is closed so that a collision exactly at the budget is counted.
pub fn histogram(times: &[f64], budget: f64) -> Vec<HistogramBin> {
    let n = (budget / BIN_WIDTH).ceil().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            start: i as f64 * BIN_WIDTH,
            end: (i + 1) as f64 * BIN_WIDTH,
            count: 0,
        })
        .collect();
    for &t in times {
        let i = ((t / BIN_WIDTH).floor().max(0.0) as usize).min(n - 1);
        bins[i].count += 1;
    }
    bins
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSummary {
    pub technique: Technique,
    pub runs: usize,
    pub scenarios: usize,
    pub collisions: usize,
    pub collision_fraction: f64,
    pub ttc_mean: Option<f64>,
    pub ttc_median: Option<f64>,
    pub ttc_min: Option<f64>,
    pub ttc_max: Option<f64>,
    pub simulated_time: f64,
    pub local_fuzz_activations: usize,
    pub restarts: usize,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub budget: f64,
    pub techniques: Vec<TechniqueSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub technique: Technique,
    pub run: usize,
    pub scenarios: usize,
    pub safe: usize,
    pub unsafe_scenarios: usize,
    pub collision_fraction: f64,
    /// Median in-scenario collision time; empty when the run found none.
    pub ttc_median: Option<f64>,
    pub simulated_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativePoint {
    pub technique: Technique,
    pub run: usize,
    pub scenario: usize,
    pub simulated_time: f64,
    pub collisions: usize,
}

fn by_technique(records: &[ScenarioRecord]) -> BTreeMap<Technique, Vec<&ScenarioRecord>> {
    let mut map: BTreeMap<Technique, Vec<&ScenarioRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.technique).or_default().push(r);
    }
    map
}

fn by_run<'a>(records: &[&'a ScenarioRecord]) -> BTreeMap<usize, Vec<&'a ScenarioRecord>> {
    let mut map: BTreeMap<usize, Vec<&ScenarioRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.run).or_default().push(r);
    }
    map
}

fn collision_times<'a>(records: impl IntoIterator<Item = &'a &'a ScenarioRecord>) -> Vec<f64> {
    records
        .into_iter()
        .filter_map(|r| r.collision_time)
        .collect()
}

pub fn summarize(records: &[ScenarioRecord], runs: &[RunSummary], budget: f64) -> SummaryReport {
    let techniques = by_technique(records)
        .into_iter()
        .map(|(technique, recs)| {
            let times = collision_times(&recs);
            let n_runs = by_run(&recs).len();
            let (fuzz, restarts) = runs
                .iter()
                .filter(|r| r.technique == technique)
                .fold((0, 0), |(f, s), r| {
                    (f + r.local_fuzz_activations, s + r.restarts)
                });
            TechniqueSummary {
                technique,
                runs: n_runs,
                scenarios: recs.len(),
                collisions: times.len(),
                collision_fraction: times.len() as f64 / recs.len() as f64,
                ttc_mean: (!times.is_empty())
                    .then(|| times.iter().sum::<f64>() / times.len() as f64),
                ttc_median: median(&times),
                ttc_min: times.iter().copied().reduce(f64::min),
                ttc_max: times.iter().copied().reduce(f64::max),
                simulated_time: recs.iter().map(|r| r.sim_time).sum(),
                local_fuzz_activations: fuzz,
                restarts,
                histogram: histogram(&times, budget),
            }
        })
        .collect();
    SummaryReport { budget, techniques }
}

pub fn per_run(records: &[ScenarioRecord]) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for (technique, recs) in by_technique(records) {
        for (run, rs) in by_run(&recs) {
            let times = collision_times(&rs);
            rows.push(RunRow {
                technique,
                run,
                scenarios: rs.len(),
                safe: rs.len() - times.len(),
                unsafe_scenarios: times.len(),
                collision_fraction: times.len() as f64 / rs.len() as f64,
                ttc_median: median(&times),
                simulated_time: rs.iter().map(|r| r.sim_time).sum(),
            });
        }
    }
    rows
}

/// Running collision count against simulated time, in record order.
pub fn cumulative(records: &[ScenarioRecord]) -> Vec<CumulativePoint> {
    let mut points = Vec::with_capacity(records.len());
    for (technique, recs) in by_technique(records) {
        for (run, rs) in by_run(&recs) {
            let (mut time, mut count) = (0.0, 0);
            for (i, r) in rs.iter().enumerate() {
                time += r.sim_time;
                count += r.is_collision() as usize;
                points.push(CumulativePoint {
                    technique,
                    run,
                    scenario: i + 1,
                    simulated_time: time,
                    collisions: count,
                });
            }
        }
    }
    points
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes the CSV files and `summary.json` into `dir`.
pub fn emit_report(
    records: &[ScenarioRecord],
    runs: &[RunSummary],
    budget: f64,
    dir: &Path,
) -> Result<SummaryReport> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let summary = summarize(records, runs, budget);

    let mut w = csv::Writer::from_path(dir.join("totals.csv"))?;
    w.write_record([
        "technique",
        "runs",
        "scenarios",
        "collisions",
        "collision_fraction",
        "ttc_mean",
        "ttc_median",
        "ttc_min",
        "ttc_max",
        "simulated_time",
        "local_fuzz_activations",
        "restarts",
    ])?;
    for t in &summary.techniques {
        w.write_record([
            t.technique.to_string(),
            t.runs.to_string(),
            t.scenarios.to_string(),
            t.collisions.to_string(),
            format!("{:.6}", t.collision_fraction),
            opt(t.ttc_mean),
            opt(t.ttc_median),
            opt(t.ttc_min),
            opt(t.ttc_max),
            format!("{:.6}", t.simulated_time),
            t.local_fuzz_activations.to_string(),
            t.restarts.to_string(),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
    w.write_record(["technique", "bin_start", "bin_end", "collisions"])?;
    for t in &summary.techniques {
        for b in &t.histogram {
            w.write_record([
                t.technique.to_string(),
                b.start.to_string(),
                b.end.to_string(),
                b.count.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_at(dir))?;

    let mut w = csv::Writer::from_path(dir.join("per_run.csv"))?;
    w.write_record([
        "technique",
        "run",
        "scenarios",
        "safe",
        "unsafe",
        "collision_fraction",
        "ttc_median",
        "simulated_time",
    ])?;
    for r in per_run(records) {
        w.write_record([
            r.technique.to_string(),
            r.run.to_string(),
            r.scenarios.to_string(),
            r.safe.to_string(),
            r.unsafe_scenarios.to_string(),
            format!("{:.6}", r.collision_fraction),
            opt(r.ttc_median),
            format!("{:.6}", r.simulated_time),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let mut w = csv::Writer::from_path(dir.join("cumulative.csv"))?;
    w.write_record([
        "technique",
        "run",
        "scenario",
        "simulated_time",
        "collisions",
    ])?;
    for p in cumulative(records) {
        w.write_record([
            p.technique.to_string(),
            p.run.to_string(),
            p.scenario.to_string(),
            format!("{:.6}", p.simulated_time),
            p.collisions.to_string(),
        ])?;
    }
    w.flush().map_err(io_at(dir))?;

    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(io_at(&path))?;
    Ok(summary)
}
