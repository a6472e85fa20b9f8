//! Scenario execution: spawning, the fixed-step loop, 6 Hz sampling and the
//! grid-plan NPC driver.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ego::{ego_decide, EgoMemory, EgoParams};
use crate::error::Error;
use crate::grid::{
    advance_plan, cell_on_road, is_transition_valid, pid_control, repair_transition, GridCell,
    GridFrame, PidGains, PidState, PlanCursor, PlanTiming, PositionInstruction,
};
use crate::math::{clamp, Vec2};
use crate::metrics::{
    finalize_fitness, sample_safety, Ending, FitnessRecord, FitnessWeights, SafetySample,
};
use crate::rng::{derive_seed, rng_from_seed, SimRng};
use crate::road::{
    Collider, CollisionEvent, Control, ControlLimits, RoadModel, VehicleState, World, DEFAULT_DT,
};
use crate::search::{Evaluation, Genome, ScenarioProblem};

/// Metric sampling rate in simulated time.
pub const SAMPLE_HZ: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        VehicleDims {
            length: 4.7,
            width: 2.0,
        }
    }
}

/// Everything needed to run one scenario apart from the NPC plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSetup {
    pub road: RoadModel,
    pub limits: ControlLimits,
    pub dt: f64,
    pub vehicle: VehicleDims,
    pub ego: EgoParams,
    pub ego_lane: usize,
    pub ego_start_x: f64,
    pub gains: PidGains,
    pub timing: PlanTiming,
    pub weights: FitnessWeights,
    /// Scenario time budget, seconds.
    pub budget: f64,
    pub npc_count: usize,
    /// Speed-setpoint gain on the longitudinal distance to a target cell, 1/s.
    pub seek_gain: f64,
}

impl Default for ScenarioSetup {
    fn default() -> Self {
        ScenarioSetup {
            road: RoadModel::default(),
            limits: ControlLimits::default(),
            dt: DEFAULT_DT,
            vehicle: VehicleDims::default(),
            ego: EgoParams::default(),
            ego_lane: 1,
            ego_start_x: 50.0,
            gains: PidGains::default(),
            timing: PlanTiming::default(),
            weights: FitnessWeights::default(),
            budget: 60.0,
            npc_count: 2,
            seek_gain: 1.0,
        }
    }
}

impl ScenarioSetup {
    pub fn validate(&self) -> Result<(), Error> {
        self.road.validate()?;
        self.limits.validate()?;
        self.weights.validate()?;
        self.gains.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive"));
        }
        self.ego.validate(self.dt)?;
        if !(self.vehicle.length > 0.0 && self.vehicle.width > 0.0) {
            return Err(Error::InvalidConfig("vehicle dimensions must be positive"));
        }
        if self.ego_lane >= self.road.lane_count {
            return Err(Error::InvalidConfig("ego_lane outside the road"));
        }
        if !(self.budget > 0.0) {
            return Err(Error::InvalidConfig("scenario budget must be positive"));
        }
        if self.npc_count == 0 {
            return Err(Error::InvalidConfig("at least one NPC is required"));
        }
        if !(self.timing.dwell >= 0.0 && self.timing.arrival_timeout > 0.0) {
            return Err(Error::InvalidConfig("plan timing must be non-negative"));
        }
        let per_sample = 1.0 / (SAMPLE_HZ * self.dt);
        if (per_sample - libm::round(per_sample)).abs() > 1e-6 || per_sample < 1.0 {
            return Err(Error::InvalidConfig(
                "dt must divide the 6 Hz sampling period",
            ));
        }
        Ok(())
    }

    pub fn max_ticks(&self) -> u64 {
        libm::round(self.budget / self.dt) as u64
    }

    pub fn steps_per_sample(&self) -> u64 {
        libm::round(1.0 / (SAMPLE_HZ * self.dt)) as u64
    }

    pub fn initial_ego(&self) -> VehicleState {
        VehicleState::new(
            Vec2::new(self.ego_start_x, self.road.lane_center(self.ego_lane)),
            0.0,
            self.ego.cruise_speed.min(self.road.speed_limit),
            self.vehicle.length,
            self.vehicle.width,
        )
    }

    pub fn vehicle_at(&self, position: Vec2, speed: f64) -> VehicleState {
        VehicleState::new(
            position,
            0.0,
            speed,
            self.vehicle.length,
            self.vehicle.width,
        )
    }

    /// The grid around the ego at spawn time.
    pub fn initial_frame(&self) -> GridFrame {
        GridFrame::around(&self.initial_ego(), &self.road)
    }

    pub fn world_with(&self, npcs: Vec<VehicleState>) -> World {
        World::new(self.road, self.limits, self.dt, self.initial_ego(), npcs)
    }
}

/// Terminal state of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Collision,
    OffRoad,
    Timeout,
    RoadExhausted,
    /// Simulation diverged (non-finite state).
    Error,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Collision => "collision",
            Outcome::OffRoad => "off-road",
            Outcome::Timeout => "timeout",
            Outcome::RoadExhausted => "road-exhausted",
            Outcome::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub tick: u64,
    pub time: f64,
    pub ego: VehicleState,
    pub npcs: Vec<VehicleState>,
}

/// Result of one simulated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub outcome: Outcome,
    pub event: Option<CollisionEvent>,
    pub samples: Vec<SafetySample>,
    pub fitness: FitnessRecord,
    /// Simulated seconds actually run.
    pub sim_time: f64,
    /// World state after every step, when requested.
    pub trace: Option<Vec<TraceFrame>>,
}

/// Produces NPC controls each step.
pub trait NpcDriver {
    fn controls(&mut self, world: &World, out: &mut [Control]);
}

fn frame_of(world: &World) -> TraceFrame {
    TraceFrame {
        tick: world.tick,
        time: world.sim_time(),
        ego: world.ego,
        npcs: world.npcs.clone(),
    }
}

/// Runs the world until a collision, the ego leaving the road or the road's
/// end, or the time budget. Samples safety metrics every
/// [`ScenarioSetup::steps_per_sample`] steps, starting at t = 0.
pub fn simulate<D: NpcDriver>(
    setup: &ScenarioSetup,
    mut world: World,
    driver: &mut D,
    record_trace: bool,
) -> SimRun {
    let max_ticks = setup.max_ticks();
    let per_sample = setup.steps_per_sample();
    let mut memory = EgoMemory::new();
    let mut samples = Vec::with_capacity((max_ticks / per_sample + 1) as usize);
    let mut controls = vec![Control::ZERO; world.npcs.len()];
    let mut trace = record_trace.then(|| vec![frame_of(&world)]);

    let (outcome, event) = loop {
        if world.tick >= max_ticks {
            break (Outcome::Timeout, None);
        }
        if world.tick.is_multiple_of(per_sample) {
            samples.push(sample_safety(&world));
        }
        driver.controls(&world, &mut controls);
        let ego_control = ego_decide(&world, &setup.ego, &mut memory);
        world.advance(ego_control, &controls);
        if let Some(t) = trace.as_mut() {
            t.push(frame_of(&world));
        }
        if !world.is_finite() {
            break (Outcome::Error, None);
        }
        if let Some(ev) = world.detect_collision() {
            let outcome = match ev.collider {
                Collider::Npc(_) => Outcome::Collision,
                Collider::StaticObject => Outcome::OffRoad,
            };
            break (outcome, Some(ev));
        }
        if world.ego.position.x > setup.road.road_length {
            break (Outcome::RoadExhausted, None);
        }
    };

    let sim_time = world.sim_time();
    let fitness = match (outcome, event) {
        (Outcome::Error, _) => FitnessRecord::minimum(setup.budget),
        (Outcome::Collision, Some(ev)) => {
            finalize(setup, &samples, Ending::Collision { time: ev.time })
        }
        (Outcome::OffRoad, Some(ev)) => {
            finalize(setup, &samples, Ending::OffRoad { time: ev.time })
        }
        _ => finalize(setup, &samples, Ending::Survived),
    };
    SimRun {
        outcome,
        event,
        samples,
        fitness,
        sim_time,
        trace,
    }
}

fn finalize(setup: &ScenarioSetup, samples: &[SafetySample], ending: Ending) -> FitnessRecord {
    // The loop always samples at t = 0, so the sample list is never empty.
    finalize_fitness(samples, ending, setup.budget, &setup.weights)
        .unwrap_or_else(|_| FitnessRecord::minimum(setup.budget))
}

/// One NPC's chromosome: where it spawns and the instructions it follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcPlan {
    pub spawn_cell: GridCell,
    pub spawn_speed: f64,
    pub instructions: Vec<PositionInstruction>,
}

/// A scenario: one plan per NPC.
pub type ScenarioGenome = Genome<NpcPlan>;

/// Speed setpoint that closes the longitudinal distance to `waypoint` while
/// matching the ego's speed, bounded by the speed limit.
pub fn seek_speed(
    setup: &ScenarioSetup,
    ego: &VehicleState,
    npc: &VehicleState,
    waypoint: Vec2,
) -> f64 {
    let along = (waypoint - npc.position).dot(ego.direction());
    clamp(
        ego.speed + setup.seek_gain * along,
        0.0,
        setup.road.speed_limit,
    )
}

/// Drives each NPC through its plan, repairing invalid transitions in place.
///
/// Each repair draws from its own stream keyed by `(seed, npc, gene, tick)`,
/// so replaying the repaired genome reproduces the run exactly.
pub struct GridDriver<'a> {
    setup: &'a ScenarioSetup,
    seed: u64,
    plans: &'a mut [NpcPlan],
    cursors: Vec<PlanCursor>,
    pid: Vec<PidState>,
    executed: Vec<Vec<GridCell>>,
    repairs: usize,
}

impl<'a> GridDriver<'a> {
    pub fn new(setup: &'a ScenarioSetup, plans: &'a mut [NpcPlan], seed: u64) -> Self {
        let executed = plans.iter().map(|p| vec![p.spawn_cell]).collect();
        GridDriver {
            setup,
            seed,
            cursors: vec![PlanCursor::start(0.0); plans.len()],
            pid: vec![PidState::default(); plans.len()],
            plans,
            executed,
            repairs: 0,
        }
    }

    /// Ensures the active instruction of NPC `i` is a valid move from the
    /// previously executed cell, writing any repair back into the plan.
    fn validate_active(&mut self, i: usize, frame: &GridFrame, tick: u64) {
        let previous = *self.executed[i]
            .last()
            .expect("spawn cell is always recorded");
        let index = self.cursors[i].index;
        let gene = &mut self.plans[i].instructions[index];
        if is_transition_valid(previous, gene.cell, frame, &self.setup.road) {
            return;
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, &[i as u64, index as u64, tick]));
        let fixed = repair_transition(previous, gene.cell, frame, &self.setup.road, &mut rng);
        if fixed != gene.cell {
            gene.cell = fixed;
            self.cursors[i].arrived_at = None;
            self.repairs += 1;
        }
    }

    /// Executed target cells per NPC, starting with the spawn cell.
    pub fn into_executed(self) -> (Vec<Vec<GridCell>>, usize) {
        let mut executed = self.executed;
        for (i, cells) in executed.iter_mut().enumerate() {
            cells.push(self.plans[i].instructions[self.cursors[i].index].cell);
        }
        (executed, self.repairs)
    }
}

#[allow(clippy::needless_range_loop)]
impl NpcDriver for GridDriver<'_> {
    fn controls(&mut self, world: &World, out: &mut [Control]) {
        let frame = GridFrame::around(&world.ego, &world.road);
        let now = world.sim_time();
        let setup = self.setup;
        for i in 0..self.plans.len() {
            let npc = &world.npcs[i];
            self.validate_active(i, &frame, world.tick);
            let before = self.cursors[i];
            let (_, cursor) = advance_plan(
                &self.plans[i].instructions,
                before,
                npc,
                &frame,
                now,
                &setup.timing,
            );
            self.cursors[i] = cursor;
            if cursor.index != before.index {
                let done = self.plans[i].instructions[before.index].cell;
                self.executed[i].push(done);
                self.validate_active(i, &frame, world.tick);
            }
            let active = self.plans[i].instructions[self.cursors[i].index];
            let waypoint = frame.cell_center(active.cell);
            let setpoint = if self.cursors[i].has_arrived() {
                active.speed
            } else {
                seek_speed(setup, &world.ego, npc, waypoint)
            };
            out[i] = pid_control(
                npc,
                waypoint,
                setpoint,
                &setup.gains,
                &mut self.pid[i],
                &setup.limits,
                setup.dt,
            );
        }
    }
}

/// A grid scenario run with the executed cell sequence of every NPC.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub run: SimRun,
    /// The genome as executed, with repairs written back.
    pub genome: ScenarioGenome,
    pub executed: Vec<Vec<GridCell>>,
    pub repairs: usize,
}

/// The ego-relative grid encoding as a search problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridProblem {
    pub setup: ScenarioSetup,
    pub genes_per_chromosome: usize,
}

impl GridProblem {
    pub fn new(setup: ScenarioSetup, genes_per_chromosome: usize) -> Self {
        GridProblem {
            setup,
            genes_per_chromosome,
        }
    }

    pub fn check_genome(&self, genome: &ScenarioGenome) -> Result<(), Error> {
        if genome.chromosomes.len() != self.setup.npc_count {
            return Err(Error::MalformedGenome(
                "chromosome count differs from NPC count",
            ));
        }
        for plan in &genome.chromosomes {
            if plan.instructions.is_empty() {
                return Err(Error::MalformedGenome("empty instruction list"));
            }
            let limit = self.setup.road.speed_limit;
            let speeds =
                core::iter::once(plan.spawn_speed).chain(plan.instructions.iter().map(|g| g.speed));
            if speeds.into_iter().any(|v| !(0.0..=limit).contains(&v)) {
                return Err(Error::MalformedGenome("speed outside [0, speed_limit]"));
            }
        }
        Ok(())
    }

    /// Executes `genome`; `seed` keys the repair draws.
    pub fn run(
        &self,
        genome: &ScenarioGenome,
        seed: u64,
        record_trace: bool,
    ) -> Result<GridRun, Error> {
        self.check_genome(genome)?;
        let setup = &self.setup;
        let frame = setup.initial_frame();
        let npcs = genome
            .chromosomes
            .iter()
            .map(|p| setup.vehicle_at(frame.cell_center(p.spawn_cell), p.spawn_speed))
            .collect();
        let world = setup.world_with(npcs);
        let mut executed_genome = genome.clone();
        let mut driver = GridDriver::new(setup, &mut executed_genome.chromosomes, seed);
        let run = simulate(setup, world, &mut driver, record_trace);
        let (executed, repairs) = driver.into_executed();
        Ok(GridRun {
            run,
            genome: executed_genome,
            executed,
            repairs,
        })
    }

    fn random_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let limit = self.setup.road.speed_limit;
        rng.gen_range(0.3 * limit..=limit)
    }
}

impl ScenarioProblem for GridProblem {
    type Chromosome = NpcPlan;

    fn npc_count(&self) -> usize {
        self.setup.npc_count
    }

    /// Random walk over on-road ring neighbours (or holds), starting in the
    /// spawn cell.
    fn random_chromosome(&self, rng: &mut SimRng) -> NpcPlan {
        let frame = self.setup.initial_frame();
        let road = &self.setup.road;
        let on_road: Vec<GridCell> = GridCell::ALL
            .into_iter()
            .filter(|&c| cell_on_road(&frame, road, c))
            .collect();
        let mut cell = on_road[rng.gen_range(0..on_road.len())];
        let spawn_cell = cell;
        let spawn_speed = self.random_speed(rng);
        let mut instructions = Vec::with_capacity(self.genes_per_chromosome);
        for j in 0..self.genes_per_chromosome {
            if j > 0 {
                let [a, b] = cell.neighbors();
                let options: Vec<GridCell> = [cell, a, b]
                    .into_iter()
                    .filter(|&c| cell_on_road(&frame, road, c))
                    .collect();
                cell = options[rng.gen_range(0..options.len())];
            }
            instructions.push(PositionInstruction {
                cell,
                speed: self.random_speed(rng),
            });
        }
        NpcPlan {
            spawn_cell,
            spawn_speed,
            instructions,
        }
    }

    fn gene_count(&self, c: &NpcPlan) -> usize {
        c.instructions.len()
    }

    /// A fresh instruction: any cell, any legal speed. Invalid transitions
    /// are left for execution-time repair.
    fn replace_gene(&self, c: &mut NpcPlan, index: usize, rng: &mut SimRng) {
        c.instructions[index] = PositionInstruction {
            cell: GridCell::ALL[rng.gen_range(0..8)],
            speed: rng.gen_range(0.0..=self.setup.road.speed_limit),
        };
    }

    fn evaluate(&self, genome: &ScenarioGenome, seed: u64) -> Evaluation<NpcPlan> {
        match self.run(genome, seed, false) {
            Ok(r) => Evaluation {
                genome: r.genome,
                fitness: r.run.fitness,
                outcome: r.run.outcome,
                event: r.run.event,
                sim_time: r.run.sim_time,
                seed,
            },
            Err(_) => Evaluation::failed(genome.clone(), seed, self.setup.budget),
        }
    }
}
