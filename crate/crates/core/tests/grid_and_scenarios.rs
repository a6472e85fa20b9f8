use gridfuzz_core::grid::{repair_transition, GridCell, PositionInstruction};
use gridfuzz_core::math::Vec2;
use gridfuzz_core::rng::rng_from_seed;
use gridfuzz_core::road::{Control, World};
use gridfuzz_core::scenario::{GridProblem, NpcPlan, Outcome, ScenarioSetup};
use gridfuzz_core::search::{Genome, ScenarioProblem};

fn cell(id: u8) -> GridCell {
    GridCell::new(id).unwrap()
}

fn hold(c: u8, speed: f64) -> NpcPlan {
    NpcPlan {
        spawn_cell: cell(c),
        spawn_speed: speed,
        instructions: vec![
            PositionInstruction {
                cell: cell(c),
                speed
            };
            6
        ],
    }
}

fn setup(budget: f64) -> ScenarioSetup {
    ScenarioSetup {
        budget,
        ..ScenarioSetup::default()
    }
}

/// Leader stopping in the ego's lane while a flanker blocks the left lane.
fn pincer() -> Genome<NpcPlan> {
    Genome {
        chromosomes: vec![hold(2, 0.0), hold(8, 20.0)],
    }
}

#[test]
fn adjacency_follows_the_ring() {
    assert!(cell(1).is_adjacent(cell(2)));
    assert!(cell(1).is_adjacent(cell(8)));
    assert!(!cell(1).is_adjacent(cell(5)));
    for c in GridCell::ALL {
        let adjacent = GridCell::ALL.iter().filter(|&&o| c.is_adjacent(o)).count();
        assert_eq!(adjacent, 2, "{c:?}");
    }
}

#[test]
fn repair_picks_each_neighbour_half_the_time() {
    let s = ScenarioSetup::default();
    let frame = s.initial_frame();
    let mut rng = rng_from_seed(77);
    let n = 10_000;
    let twos = (0..n)
        .filter(|_| repair_transition(cell(1), cell(5), &frame, &s.road, &mut rng) == cell(2))
        .count();
    let share = twos as f64 / n as f64;
    assert!((share - 0.5).abs() <= 0.03, "{share}");
}

#[test]
fn executed_transitions_stay_on_the_ring() {
    let problem = GridProblem::new(setup(30.0), 6);
    let mut rng = rng_from_seed(5);
    for i in 0..100 {
        let mut genome = Genome {
            chromosomes: (0..2)
                .map(|_| problem.random_chromosome(&mut rng))
                .collect(),
        };
        // Scramble one gene so that repair has work to do.
        if i % 2 == 0 {
            problem.replace_gene(&mut genome.chromosomes[0], 3, &mut rng);
        }
        let run = problem.run(&genome, i, false).unwrap();
        for cells in &run.executed {
            for w in cells.windows(2) {
                assert!(w[0] == w[1] || w[0].is_adjacent(w[1]), "{cells:?}");
            }
        }
        problem.check_genome(&run.genome).unwrap();
    }
}

#[test]
fn pincer_collides_within_thirty_seconds() {
    let problem = GridProblem::new(setup(30.0), 6);
    let run = problem.run(&pincer(), 0, false).unwrap();
    assert_eq!(run.run.outcome, Outcome::Collision);
    let ev = run.run.event.unwrap();
    assert!(ev.time < 30.0);
    assert!(run.run.fitness.collided);
}

#[test]
fn slow_follower_never_interacts() {
    let problem = GridProblem::new(setup(30.0), 6);
    let genome = Genome {
        chromosomes: vec![hold(6, 5.0), hold(6, 5.0)],
    };
    let run = problem.run(&genome, 0, false).unwrap();
    assert_eq!(run.run.outcome, Outcome::Timeout);
    assert_eq!(run.run.fitness.et, 30.0);
}

#[test]
fn replay_gives_identical_runs() {
    let problem = GridProblem::new(setup(30.0), 6);
    let mut rng = rng_from_seed(19);
    for seed in 0..20 {
        let genome = Genome {
            chromosomes: (0..2)
                .map(|_| problem.random_chromosome(&mut rng))
                .collect(),
        };
        let a = problem.run(&genome, seed, true).unwrap();
        let b = problem.run(&genome, seed, true).unwrap();
        assert_eq!(a, b);
        // The executed genome replays to the same result as well.
        let c = problem.evaluate(&a.genome, seed);
        assert_eq!(c.outcome, a.run.outcome);
        assert_eq!(c.event, a.run.event);
        assert_eq!(c.fitness, a.run.fitness);
    }
}

#[test]
fn fast_closing_is_not_tunnelled() {
    // Ego at the speed limit onto a stopped car: per-step travel is well
    // below one car length, so the overlap is always observed.
    let s = ScenarioSetup::default();
    let ego = s.initial_ego();
    let stopped = s.vehicle_at(ego.position + Vec2::new(30.0, 0.0), 0.0);
    let mut world = World::new(s.road, s.limits, s.dt, ego, vec![stopped]);
    let mut hit = None;
    for _ in 0..200 {
        world.advance(Control::ZERO, &[Control::ZERO]);
        if let Some(ev) = world.detect_collision() {
            hit = Some(ev);
            break;
        }
    }
    let ev = hit.expect("collision missed");
    let expected = (30.0 - 4.7) / ego.speed;
    assert!(
        (ev.time - expected).abs() <= s.dt + 1e-9,
        "{} vs {}",
        ev.time,
        expected
    );
}
