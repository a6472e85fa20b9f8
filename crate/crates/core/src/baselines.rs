//! Comparison techniques driven by manoeuvre genes in absolute road
//! coordinates: a random fuzzer and a GA over manoeuvre sequences.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grid::{pid_control, PidState};
use crate::math::Vec2;
use crate::rng::{derive_seed, rng_from_seed, SimRng, STREAM_RANDOM};
use crate::road::{Control, World};
use crate::scenario::{simulate, NpcDriver, ScenarioSetup, SimRun};
use crate::search::{
    run_search, EvaluatedIndividual, Evaluation, Executor, GaConfig, GenerationStats, Genome, Job,
    Lineage, Phase, ScenarioProblem, SearchReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manoeuvre {
    KeepLane,
    LaneChangeLeft,
    LaneChangeRight,
    Accelerate,
    Decelerate,
    BrakeHard,
}

impl Manoeuvre {
    pub const ALL: [Manoeuvre; 6] = [
        Manoeuvre::KeepLane,
        Manoeuvre::LaneChangeLeft,
        Manoeuvre::LaneChangeRight,
        Manoeuvre::Accelerate,
        Manoeuvre::Decelerate,
        Manoeuvre::BrakeHard,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManoeuvreGene {
    pub action: Manoeuvre,
    /// Seconds.
    pub duration: f64,
}

/// One NPC: a spawn point relative to the ego's start and a manoeuvre sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManoeuvrePlan {
    pub lane: usize,
    /// Longitudinal distance ahead of the ego at t = 0, metres.
    pub offset: f64,
    pub speed: f64,
    pub genes: Vec<ManoeuvreGene>,
}

/// Speed change of one accelerate/decelerate gene, m/s.
pub const SPEED_STEP: f64 = 5.0;

struct NpcIntent {
    lane: usize,
    speed: f64,
    next_gene: usize,
    switch_at: f64,
}

/// Applies each NPC's genes in order; after the last gene the NPC keeps its
/// final lane and speed.
pub struct ManoeuvreDriver<'a> {
    setup: &'a ScenarioSetup,
    plans: &'a [ManoeuvrePlan],
    intents: Vec<NpcIntent>,
    pid: Vec<PidState>,
}

impl<'a> ManoeuvreDriver<'a> {
    pub fn new(setup: &'a ScenarioSetup, plans: &'a [ManoeuvrePlan]) -> Self {
        let intents = plans
            .iter()
            .map(|p| NpcIntent {
                lane: p.lane,
                speed: p.speed,
                next_gene: 0,
                switch_at: 0.0,
            })
            .collect();
        ManoeuvreDriver {
            setup,
            plans,
            intents,
            pid: vec![PidState::default(); plans.len()],
        }
    }
}

impl NpcDriver for ManoeuvreDriver<'_> {
    fn controls(&mut self, world: &World, out: &mut [Control]) {
        let now = world.sim_time();
        let setup = self.setup;
        let top_lane = setup.road.lane_count - 1;
        let limit = setup.road.speed_limit;
        for (i, intent) in self.intents.iter_mut().enumerate() {
            let genes = &self.plans[i].genes;
            while intent.next_gene < genes.len() && now + 1e-9 >= intent.switch_at {
                let gene = genes[intent.next_gene];
                match gene.action {
                    Manoeuvre::KeepLane => {}
                    Manoeuvre::LaneChangeLeft => intent.lane = (intent.lane + 1).min(top_lane),
                    Manoeuvre::LaneChangeRight => intent.lane = intent.lane.saturating_sub(1),
                    Manoeuvre::Accelerate => intent.speed = (intent.speed + SPEED_STEP).min(limit),
                    Manoeuvre::Decelerate => intent.speed = (intent.speed - SPEED_STEP).max(0.0),
                    Manoeuvre::BrakeHard => intent.speed = 0.0,
                }
                intent.switch_at += gene.duration;
                intent.next_gene += 1;
            }
            let npc = &world.npcs[i];
            let waypoint = Vec2::new(npc.position.x, setup.road.lane_center(intent.lane));
            out[i] = pid_control(
                npc,
                waypoint,
                intent.speed,
                &setup.gains,
                &mut self.pid[i],
                &setup.limits,
                setup.dt,
            );
        }
    }
}

/// Manoeuvre sequences as a search problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManoeuvreProblem {
    pub setup: ScenarioSetup,
    pub genes_per_chromosome: usize,
    /// Gene durations are drawn from this range, seconds.
    pub duration_range: (f64, f64),
    /// Spawn distances ahead of the ego are drawn from this range, metres.
    pub spawn_range: (f64, f64),
}

impl ManoeuvreProblem {
    pub fn new(setup: ScenarioSetup, genes_per_chromosome: usize) -> Self {
        ManoeuvreProblem {
            setup,
            genes_per_chromosome,
            duration_range: (2.0, 8.0),
            spawn_range: (20.0, 120.0),
        }
    }

    pub fn check_genome(&self, genome: &Genome<ManoeuvrePlan>) -> Result<(), Error> {
        if genome.chromosomes.len() != self.setup.npc_count {
            return Err(Error::MalformedGenome(
                "chromosome count differs from NPC count",
            ));
        }
        for plan in &genome.chromosomes {
            if plan.lane >= self.setup.road.lane_count {
                return Err(Error::MalformedGenome("spawn lane outside the road"));
            }
            if !(0.0..=self.setup.road.speed_limit).contains(&plan.speed)
                || !plan.offset.is_finite()
            {
                return Err(Error::MalformedGenome("spawn speed or offset out of range"));
            }
            if plan
                .genes
                .iter()
                .any(|g| !(g.duration > 0.0) || !g.duration.is_finite())
            {
                return Err(Error::MalformedGenome("gene duration must be positive"));
            }
        }
        Ok(())
    }

    /// Manoeuvre scenarios are deterministic; `seed` is accepted for symmetry
    /// with the grid encoding.
    pub fn run(
        &self,
        genome: &Genome<ManoeuvrePlan>,
        _seed: u64,
        record_trace: bool,
    ) -> Result<SimRun, Error> {
        self.check_genome(genome)?;
        let setup = &self.setup;
        let ego = setup.initial_ego();
        let npcs = genome
            .chromosomes
            .iter()
            .map(|p| {
                let at = Vec2::new(ego.position.x + p.offset, setup.road.lane_center(p.lane));
                setup.vehicle_at(at, p.speed)
            })
            .collect();
        let world = setup.world_with(npcs);
        let mut driver = ManoeuvreDriver::new(setup, &genome.chromosomes);
        Ok(simulate(setup, world, &mut driver, record_trace))
    }

    fn random_gene(&self, rng: &mut SimRng) -> ManoeuvreGene {
        let (lo, hi) = self.duration_range;
        ManoeuvreGene {
            action: Manoeuvre::ALL[rng.gen_range(0..Manoeuvre::ALL.len())],
            duration: rng.gen_range(lo..=hi),
        }
    }

    fn respawn(&self, plan: &mut ManoeuvrePlan, rng: &mut SimRng) {
        let (lo, hi) = self.spawn_range;
        let limit = self.setup.road.speed_limit;
        plan.lane = rng.gen_range(0..self.setup.road.lane_count);
        plan.offset = rng.gen_range(lo..=hi);
        plan.speed = rng.gen_range(0.3 * limit..=limit);
    }

    /// A plan whose genes all last exactly `interval` and cover the budget.
    pub fn random_interval_plan(&self, interval: f64, rng: &mut SimRng) -> ManoeuvrePlan {
        let n = libm::ceil(self.setup.budget / interval).max(1.0) as usize;
        let mut plan = ManoeuvrePlan {
            lane: 0,
            offset: 0.0,
            speed: 0.0,
            genes: Vec::with_capacity(n),
        };
        self.respawn(&mut plan, rng);
        for _ in 0..n {
            plan.genes.push(ManoeuvreGene {
                action: Manoeuvre::ALL[rng.gen_range(0..Manoeuvre::ALL.len())],
                duration: interval,
            });
        }
        plan
    }
}

impl ScenarioProblem for ManoeuvreProblem {
    type Chromosome = ManoeuvrePlan;

    fn npc_count(&self) -> usize {
        self.setup.npc_count
    }

    fn random_chromosome(&self, rng: &mut SimRng) -> ManoeuvrePlan {
        let mut plan = ManoeuvrePlan {
            lane: 0,
            offset: 0.0,
            speed: 0.0,
            genes: Vec::with_capacity(self.genes_per_chromosome),
        };
        self.respawn(&mut plan, rng);
        for _ in 0..self.genes_per_chromosome {
            let g = self.random_gene(rng);
            plan.genes.push(g);
        }
        plan
    }

    /// Gene 0 is the spawn point; the rest are manoeuvres.
    fn gene_count(&self, c: &ManoeuvrePlan) -> usize {
        c.genes.len() + 1
    }

    fn replace_gene(&self, c: &mut ManoeuvrePlan, index: usize, rng: &mut SimRng) {
        if index == 0 {
            self.respawn(c, rng);
        } else {
            c.genes[index - 1] = self.random_gene(rng);
        }
    }

    fn evaluate(&self, genome: &Genome<ManoeuvrePlan>, seed: u64) -> Evaluation<ManoeuvrePlan> {
        match self.run(genome, seed, false) {
            Ok(r) => Evaluation {
                genome: genome.clone(),
                fitness: r.fitness,
                outcome: r.outcome,
                event: r.event,
                sim_time: r.sim_time,
                seed,
            },
            Err(_) => Evaluation::failed(genome.clone(), seed, self.setup.budget),
        }
    }
}

/// Default gene interval of the random fuzzer, seconds.
pub const RANDOM_INTERVAL: f64 = 5.0;

/// Evaluates `scenarios` independent random scenarios in batches of
/// `cfg.population_size`. Each NPC gets a fresh random manoeuvre every
/// `interval` seconds.
pub fn random_fuzz<X: Executor>(
    problem: &ManoeuvreProblem,
    cfg: &GaConfig,
    scenarios: usize,
    interval: f64,
    executor: &X,
    on_evaluated: &mut dyn FnMut(&EvaluatedIndividual<ManoeuvrePlan>),
) -> Result<SearchReport<ManoeuvrePlan>, Error> {
    cfg.validate()?;
    if !(interval > 0.0) {
        return Err(Error::InvalidConfig("random interval must be positive"));
    }
    let mut report = SearchReport::new();
    let batch = cfg.population_size;
    let mut done = 0;
    let mut generation = 0u32;
    while done < scenarios {
        let n = batch.min(scenarios - done);
        let jobs: Vec<_> = (0..n)
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(
                    cfg.seed,
                    &[STREAM_RANDOM, generation as u64, i as u64],
                ));
                let genome = Genome {
                    chromosomes: (0..problem.npc_count())
                        .map(|_| problem.random_interval_plan(interval, &mut rng))
                        .collect(),
                };
                Job {
                    genome,
                    seed: rng.gen(),
                }
            })
            .collect();
        let results = executor.evaluate_batch(problem, &jobs);
        let mut scores = Vec::with_capacity(n);
        for (i, evaluation) in results.into_iter().enumerate() {
            let ind = EvaluatedIndividual {
                lineage: Lineage {
                    phase: Phase::Random,
                    generation,
                    index: i as u32,
                },
                evaluation,
            };
            on_evaluated(&ind);
            report.record(&ind);
            scores.push(ind.score());
        }
        report.generations.push(GenerationStats {
            generation,
            best: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: scores.iter().sum::<f64>() / n as f64,
            new_evaluations: n,
            local_fuzz: false,
            restarted: false,
        });
        done += n;
        generation += 1;
    }
    Ok(report)
}

/// The shared GA over manoeuvre chromosomes.
pub fn avfuzzer_like<X: Executor>(
    problem: &ManoeuvreProblem,
    cfg: &GaConfig,
    executor: &X,
    on_evaluated: &mut dyn FnMut(&EvaluatedIndividual<ManoeuvrePlan>),
) -> Result<SearchReport<ManoeuvrePlan>, Error> {
    run_search(problem, cfg, executor, on_evaluated)
}
