//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use gridfuzz::config::{ExperimentConfig, Technique};
use gridfuzz::experiment::{run_experiment_in, ExperimentResult, RECORDS_FILE};
use gridfuzz::records::ScenarioRecord;
use gridfuzz::replay::replay;
use gridfuzz::report::{cumulative, median, BIN_WIDTH};
use gridfuzz_core::grid::{repair_transition, GridCell, PositionInstruction};
use gridfuzz_core::math::Vec2;
use gridfuzz_core::metrics::{combine_score, ettc, min_distance, safety_distance, FitnessWeights};
use gridfuzz_core::rng::rng_from_seed;
use gridfuzz_core::road::VehicleState;
use gridfuzz_core::scenario::{GridProblem, NpcPlan, Outcome, ScenarioSetup};
use gridfuzz_core::search::{
    crossover, init_population, mutate, run_search, GaConfig, Genome, ScenarioProblem,
    SequentialExecutor,
};
use rand::Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn car(x: f64, y: f64, heading: f64, speed: f64) -> VehicleState {
    VehicleState::new(Vec2::new(x, y), heading, speed, 4.7, 2.0)
}

fn cell(id: u8) -> GridCell {
    GridCell::new(id).unwrap()
}

/// Time for the ego, moving at constant velocity in 10 ms steps, to cross
/// the NPC's heading line.
fn rollout_crossing(ev: &VehicleState, npc: &VehicleState, horizon: f64) -> Option<f64> {
    let (vx, vy) = (ev.heading.cos() * ev.speed, ev.heading.sin() * ev.speed);
    let (nx, ny) = (npc.heading.cos(), npc.heading.sin());
    let side = |t: f64| {
        nx * (ev.position.y + vy * t - npc.position.y)
            - ny * (ev.position.x + vx * t - npc.position.x)
    };
    let step = 0.01;
    let mut t = 0.0;
    while t < horizon {
        let (a, b) = (side(t), side(t + step));
        if a.signum() != b.signum() {
            return Some(t + step * a / (a - b));
        }
        t += step;
    }
    None
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let mut rng = rng_from_seed(1);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 1000 {
        let ev = car(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-PI..PI),
            rng.gen_range(1.0..35.0),
        );
        let npc = car(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-PI..PI),
            rng.gen_range(0.0..35.0),
        );
        if (ev.heading - npc.heading).sin().abs() < 0.05 {
            continue;
        }
        let Some(t) = rollout_crossing(&ev, &npc, 30.0) else {
            continue;
        };
        if t < 1e-3 {
            continue;
        }
        worst = worst.max((ettc(&ev, &npc) - t).abs() / t);
        checked += 1;
    }
    let parallel = ettc(&car(0.0, 0.0, 0.2, 20.0), &car(5.0, 9.0, 0.2, 10.0)).is_infinite();
    let behind = ettc(&car(0.0, 0.0, 0.0, 20.0), &car(-20.0, 5.0, -PI / 2.0, 10.0)).is_infinite();
    let elapsed = started.elapsed();
    check(
        worst < 1e-6 && parallel && behind && elapsed < Duration::from_secs(5),
        format!("{checked} crossings, max rel err {worst:.2e}, parallel/behind infinite: {parallel}/{behind}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Verdict {
    let md = min_distance(&car(0.0, 0.0, 0.0, 0.0), &car(3.0, 4.0, 0.0, 0.0));
    let sd = safety_distance(&car(0.0, 0.0, 0.0, 20.0), &car(30.0, 0.0, 0.0, 15.0), 3.0);
    let same = safety_distance(&car(0.0, 0.0, 0.0, 17.0), &car(30.0, 0.0, 0.0, 17.0), 3.0);
    check(
        md == 5.0 && sd == 15.0 && same == 0.0,
        format!("MD {md}, SD {sd}, equal-motion SD {same}"),
    )
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let setup = ScenarioSetup::default();
    let frame = setup.initial_frame();
    let road = setup.road;
    let fig = cell(1).is_adjacent(cell(2))
        && cell(1).is_adjacent(cell(8))
        && !cell(1).is_adjacent(cell(5));
    let mut rng = rng_from_seed(3);
    let n = 10_000;
    let to_two = (0..n)
        .filter(|_| repair_transition(cell(1), cell(5), &frame, &road, &mut rng) == cell(2))
        .count();
    let share = to_two as f64 / n as f64;
    let problem = GridProblem::new(
        ScenarioSetup {
            budget: 30.0,
            ..setup
        },
        6,
    );
    let mut broken = 0;
    for i in 0..100u64 {
        let mut genome = Genome {
            chromosomes: (0..2)
                .map(|_| problem.random_chromosome(&mut rng))
                .collect(),
        };
        problem.replace_gene(&mut genome.chromosomes[1], (i % 6) as usize, &mut rng);
        let run = problem.run(&genome, i, false).map_err(|e| e.to_string())?;
        for cells in &run.executed {
            broken += cells
                .windows(2)
                .filter(|w| w[0] != w[1] && !w[0].is_adjacent(w[1]))
                .count();
        }
    }
    let elapsed = started.elapsed();
    check(
        fig && (share - 0.5).abs() <= 0.03 && (1.0 - share - 0.5).abs() <= 0.03 && broken == 0 && elapsed < Duration::from_secs(60),
        format!("ring adjacency {fig}, repair 1->5 gives 2 in {share:.4} / 8 in {:.4}, {broken} broken transitions in 100 scenarios, {elapsed:.2?}", 1.0 - share),
    )
}

fn criterion_4() -> Verdict {
    let problem = GridProblem::new(
        ScenarioSetup {
            budget: 30.0,
            ..ScenarioSetup::default()
        },
        6,
    );
    let mut rng = rng_from_seed(4);
    let mut failures = Vec::new();

    for seed in 0..5 {
        let cfg = GaConfig {
            generations: 12,
            scenario_budget: 30.0,
            seed,
            ..GaConfig::default()
        };
        let report = run_search(&problem, &cfg, &SequentialExecutor, &mut |_| {})
            .map_err(|e| e.to_string())?;
        for w in report.generations.windows(2) {
            if !w[0].restarted && w[1].best < w[0].best {
                failures.push(format!("best fell in seed {seed} gen {}", w[1].generation));
            }
        }
    }

    let key = |c: &NpcPlan| format!("{c:?}");
    let (mut swaps, mut mutations) = (0, 0);
    let n = 10_000;
    for _ in 0..n {
        let pop = init_population(&problem, 2, &mut rng);
        let (a, b) = crossover(&pop[0], &pop[1], 0.5, &mut rng);
        let mut before: Vec<String> = pop
            .iter()
            .flat_map(|g| g.chromosomes.iter().map(key))
            .collect();
        let mut after: Vec<String> = [&a, &b]
            .iter()
            .flat_map(|g| g.chromosomes.iter().map(key))
            .collect();
        before.sort();
        after.sort();
        if before != after {
            failures.push("crossover lost a chromosome".into());
        }
        swaps += (a != pop[0]) as usize;
        let m = mutate(&problem, &pop[0], 0.5, &mut rng);
        let diff: usize = pop[0]
            .chromosomes
            .iter()
            .zip(&m.chromosomes)
            .map(|(x, y)| {
                x.instructions
                    .iter()
                    .zip(&y.instructions)
                    .filter(|(g, h)| g != h)
                    .count()
            })
            .sum();
        if diff > 1 {
            failures.push(format!("mutation changed {diff} genes"));
        }
        mutations += (diff > 0) as usize;
    }
    let (pc, pm) = (swaps as f64 / n as f64, mutations as f64 / n as f64);
    if (pc - 0.5).abs() > 0.02 || (pm - 0.5).abs() > 0.02 {
        failures.push(format!("rates p_c {pc:.4}, p_m {pm:.4}"));
    }
    for (k, e) in [(4, 1), (8, 2), (16, 4), (20, 5)] {
        let got = GaConfig {
            population_size: k,
            ..GaConfig::default()
        }
        .elite_count();
        if got != e {
            failures.push(format!("elite count {got} for k={k}"));
        }
    }
    failures.dedup();
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("elitism monotone over 5 searches, multiset conserved, Hamming <= 1, p_c {pc:.4}, p_m {pm:.4}, elites 1/2/4/5")
        } else {
            failures.join("; ")
        },
    )
}

fn desk(technique: Technique) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_scale(technique);
    cfg.ga.seed = 2024;
    cfg
}

fn criterion_5(root: &Path, first: &ExperimentResult) -> Verdict {
    let started = Instant::now();
    let again = run_experiment_in(&desk(Technique::Pafot), &root.join("repeat"))
        .map_err(|e| e.to_string())?;
    let a = std::fs::read(first.dir.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
    let b = std::fs::read(again.dir.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
    let cfg = desk(Technique::Pafot);
    let mut replayed = 0;
    for r in first.records.iter().filter(|r| r.is_collision()) {
        let rep = replay(&cfg, r).map_err(|e| e.to_string())?;
        if rep.collision_time != r.collision_time {
            return Err(format!("{} replayed at {:?}", r.id(), rep.collision_time));
        }
        replayed += 1;
    }
    let elapsed = started.elapsed();
    check(
        a == b && elapsed < Duration::from_secs(300),
        format!("{} record bytes identical: {}, {replayed} collisions replayed at identical times, {elapsed:.2?}", a.len(), a == b),
    )
}

fn criterion_6() -> Verdict {
    let problem = GridProblem::new(
        ScenarioSetup {
            budget: 30.0,
            ..ScenarioSetup::default()
        },
        6,
    );
    let plan = |c: u8, v: f64| NpcPlan {
        spawn_cell: cell(c),
        spawn_speed: v,
        instructions: vec![
            PositionInstruction {
                cell: cell(c),
                speed: v
            };
            6
        ],
    };
    let genome = Genome {
        chromosomes: vec![plan(2, 0.0), plan(8, 20.0)],
    };
    let run = problem.run(&genome, 0, false).map_err(|e| e.to_string())?;
    let time = run.run.event.map(|e| e.time);
    check(
        run.run.outcome == Outcome::Collision && time.is_some_and(|t| t < 30.0),
        format!(
            "pincer outcome {}, collision at {time:?} s",
            run.run.outcome.as_str()
        ),
    )
}

struct Comparison {
    pafot: Vec<f64>,
    random: Vec<f64>,
    avfuzzer: Vec<f64>,
}

fn per_run(
    result: &ExperimentResult,
    runs: usize,
    f: impl Fn(&[&ScenarioRecord]) -> f64,
) -> Vec<f64> {
    (0..runs)
        .map(|r| {
            let recs: Vec<&ScenarioRecord> = result.records.iter().filter(|x| x.run == r).collect();
            f(&recs)
        })
        .collect()
}

fn fraction(recs: &[&ScenarioRecord]) -> f64 {
    recs.iter().filter(|r| r.is_collision()).count() as f64 / recs.len() as f64
}

/// Median in-scenario collision time at or after `from` seconds; runs without
/// such a collision count as the full budget.
fn median_ttc(recs: &[&ScenarioRecord], from: f64, budget: f64) -> f64 {
    let times: Vec<f64> = recs
        .iter()
        .filter_map(|r| r.collision_time)
        .filter(|&t| t >= from)
        .collect();
    median(&times).unwrap_or(budget)
}

fn wins(a: &[f64], b: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    a.iter().zip(b).filter(|(x, y)| better(**x, **y)).count()
}

/// One-sided sign-test p-value for at least `wins` successes out of `n`.
fn sign_test(wins: usize, n: usize) -> f64 {
    let choose =
        |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn criterion_7(c: &Comparison) -> Verdict {
    let vs_random = wins(&c.pafot, &c.random, |a, b| a > b);
    let vs_av = wins(&c.pafot, &c.avfuzzer, |a, b| a > b);
    check(
        vs_random >= 8 && vs_av >= 7,
        format!(
            "collision fraction wins: {vs_random}/10 vs random, {vs_av}/10 vs avfuzzer (means {:.3} / {:.3} / {:.3})",
            mean(&c.pafot),
            mean(&c.random),
            mean(&c.avfuzzer)
        ),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_8(c: &Comparison, all: (f64, f64, f64)) -> Verdict {
    let lower = wins(&c.pafot, &c.random, |a, b| a < b);
    let ties = wins(&c.pafot, &c.random, |a, b| a == b);
    let n = c.pafot.len() - ties;
    let p = sign_test(lower, n);
    let (mp, mr, ma) = all;
    check(
        mp < mr && mp < ma && p < 0.05,
        format!("median time to collision {mp:.2} s vs random {mr:.2} s / avfuzzer {ma:.2} s; lower in {lower}/{n} seeds vs random, sign test p = {p:.4}"),
    )
}

fn criterion_9(results: &[&ExperimentResult], budget: f64) -> Verdict {
    let mut problems = Vec::new();
    for res in results {
        for t in &res.summary.techniques {
            let bins = &t.histogram;
            let widths_ok = bins
                .iter()
                .enumerate()
                .all(|(i, b)| b.start == i as f64 * BIN_WIDTH && b.end - b.start == BIN_WIDTH);
            let covers = bins.first().map(|b| b.start) == Some(0.0)
                && bins.last().map(|b| b.end) == Some(budget);
            let sum: usize = bins.iter().map(|b| b.count).sum();
            if !widths_ok || !covers || sum != t.collisions {
                problems.push(format!(
                    "{}: histogram {bins:?} vs {} collisions",
                    t.technique, t.collisions
                ));
            }
        }
        let points = cumulative(&res.records);
        if points
            .windows(2)
            .any(|w| w[0].run == w[1].run && w[1].collisions < w[0].collisions)
        {
            problems.push("cumulative series decreased".into());
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("bins 0..{budget} s in {BIN_WIDTH} s steps, counts reconcile, cumulative series non-decreasing")
        } else {
            problems.join("; ")
        },
    )
}

fn criterion_10() -> Verdict {
    let mut rng = rng_from_seed(10);
    let budget = 30.0;
    let w = FitnessWeights {
        w_mettc: 0.8,
        w_md: 1.2,
        w_sd: 0.6,
        w_et: 1.5,
        ..FitnessWeights::default()
    };
    let mut violations = 0;
    let n = 5000;
    for _ in 0..n {
        let (m, d, s, e) = (
            rng.gen_range(0.0..15.0),
            rng.gen_range(0.0..70.0),
            rng.gen_range(0.0..=1.0),
            rng.gen_range(0.0..=budget),
        );
        let delta = rng.gen_range(0.0..5.0);
        let base = combine_score(m, d, s, e, budget, &w);
        violations += (combine_score(m + delta, d, s, e, budget, &w) > base) as usize;
        violations += (combine_score(m, d + delta, s, e, budget, &w) > base) as usize;
        violations += (combine_score(m, d, s, (e + delta).min(budget), budget, &w) > base) as usize;
    }
    let mut order_breaks = 0;
    for _ in 0..200 {
        let pop: Vec<(f64, f64, f64, f64)> = (0..16)
            .map(|_| {
                (
                    rng.gen_range(0.0..15.0),
                    rng.gen_range(0.0..70.0),
                    rng.gen_range(0.0..=1.0),
                    rng.gen_range(0.0..=budget),
                )
            })
            .collect();
        let k = rng.gen_range(0.05..20.0);
        let scaled = w.scaled(k);
        let s1: Vec<f64> = pop
            .iter()
            .map(|&(a, b, c, d)| combine_score(a, b, c, d, budget, &w))
            .collect();
        let s2: Vec<f64> = pop
            .iter()
            .map(|&(a, b, c, d)| combine_score(a, b, c, d, budget, &scaled))
            .collect();
        for i in 0..pop.len() {
            for j in 0..pop.len() {
                if s1[i] < s1[j] && s2[i] >= s2[j] {
                    order_breaks += 1;
                }
            }
        }
    }
    check(
        violations == 0 && order_breaks == 0,
        format!("{violations} monotonicity violations over {} perturbations, {order_breaks} order changes under rescaling", 3 * n),
    )
}

fn main() {
    // Respect `cargo test -- <filter>` style invocations that target other tests.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let budget = 30.0;

    let mut verdicts: Vec<(u32, &str, Verdict)> = vec![
        (1, "ETTC closed form vs rollout oracle", criterion_1()),
        (2, "formula spot checks", criterion_2()),
        (3, "grid semantics", criterion_3()),
        (4, "GA properties", criterion_4()),
    ];

    let comparison_start = Instant::now();
    let runs: Vec<Result<ExperimentResult, String>> = Technique::ALL
        .iter()
        .map(|&t| run_experiment_in(&desk(t), root).map_err(|e| e.to_string()))
        .collect();
    let comparison_time = comparison_start.elapsed();
    match &runs[..] {
        [Ok(pafot), Ok(avfuzzer), Ok(random)] => {
            verdicts.push((5, "determinism and replay", criterion_5(root, pafot)));
            verdicts.push((6, "planted pincer collides", criterion_6()));
            let n = desk(Technique::Pafot).runs;
            let frac = Comparison {
                pafot: per_run(pafot, n, fraction),
                random: per_run(random, n, fraction),
                avfuzzer: per_run(avfuzzer, n, fraction),
            };
            let ttc = |from: f64| Comparison {
                pafot: per_run(pafot, n, |r| median_ttc(r, from, budget)),
                random: per_run(random, n, |r| median_ttc(r, from, budget)),
                avfuzzer: per_run(avfuzzer, n, |r| median_ttc(r, from, budget)),
            };
            let overall = |res: &ExperimentResult, from: f64| {
                let t: Vec<f64> = res
                    .records
                    .iter()
                    .filter_map(|r| r.collision_time)
                    .filter(|&t| t >= from)
                    .collect();
                median(&t).unwrap_or(budget)
            };
            let mut c7 = criterion_7(&frac);
            if comparison_time > Duration::from_secs(1800) {
                c7 = Err(format!("runtime {comparison_time:.2?} over 30 min"));
            }
            verdicts.push((7, "collision fraction direction", c7));
            verdicts.push((
                8,
                "time to collision direction",
                criterion_8(
                    &ttc(0.0),
                    (
                        overall(pafot, 0.0),
                        overall(random, 0.0),
                        overall(avfuzzer, 0.0),
                    ),
                ),
            ));
            verdicts.push((
                9,
                "report integrity",
                criterion_9(&[pafot, random, avfuzzer], budget),
            ));

            // Diagnostic only: the same comparisons ignoring collisions in the
            // first second, when NPCs spawned in cells 2 and 6 can touch the ego.
            let late = |res: &ExperimentResult| {
                per_run(res, n, |recs| {
                    recs.iter()
                        .filter(|r| r.collision_time.is_some_and(|t| t >= 1.0))
                        .count() as f64
                        / recs.len() as f64
                })
            };
            let late_frac = Comparison {
                pafot: late(pafot),
                random: late(random),
                avfuzzer: late(avfuzzer),
            };
            let early = pafot
                .records
                .iter()
                .filter(|r| r.collision_time.is_some_and(|t| t < 1.0))
                .count();
            let total = pafot.records.iter().filter(|r| r.is_collision()).count();
            println!("info: {early}/{total} pafot collisions happen in the first second of simulated time");
            println!(
                "info: collisions at t >= 1 s only: {}",
                match criterion_7(&late_frac) {
                    Ok(s) | Err(s) => s,
                }
            );
            println!(
                "info: collisions at t >= 1 s only: {}",
                match criterion_8(
                    &ttc(1.0),
                    (
                        overall(pafot, 1.0),
                        overall(random, 1.0),
                        overall(avfuzzer, 1.0)
                    )
                ) {
                    Ok(s) | Err(s) => s,
                }
            );
            println!(
                "info: desk-scale comparison (3 techniques x 10 runs) took {comparison_time:.2?}"
            );
        }
        _ => {
            let err: Vec<String> = runs
                .iter()
                .filter_map(|r| r.as_ref().err().cloned())
                .collect();
            for (id, name) in [
                (5, "determinism and replay"),
                (7, "collision fraction direction"),
                (8, "time to collision direction"),
                (9, "report integrity"),
            ] {
                verdicts.push((
                    id,
                    name,
                    Err(format!("experiment failed: {}", err.join("; "))),
                ));
            }
            verdicts.push((6, "planted pincer collides", criterion_6()));
        }
    }
    verdicts.push((10, "fitness properties", criterion_10()));
    verdicts.sort_by_key(|v| v.0);

    let mut failed = 0;
    for (id, name, verdict) in &verdicts {
        match verdict {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} ({name}): {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.2?}",
        verdicts.len() - failed,
        started.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
