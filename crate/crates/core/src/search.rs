//! Single-objective genetic search over scenario genomes.
//!
//! The engine is generic over the chromosome type so that the grid encoding
//! and the manoeuvre-based baseline share crossover, mutation, elitist
//! selection, the local fuzzer and restarts.
//!
//! Every random decision comes either from the operator stream (a single
//! sequential ChaCha stream) or from a per-evaluation stream derived from
//! `(seed, phase, generation, index)`. Evaluations may therefore run in any
//! order or in parallel without changing the result.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::FitnessRecord;
use crate::rng::{
    derive_seed, rng_from_seed, SimRng, STREAM_FUZZ, STREAM_INIT, STREAM_MAIN, STREAM_OPERATORS,
};
use crate::road::CollisionEvent;
use crate::scenario::Outcome;

/// One scenario: one chromosome per NPC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome<C> {
    pub chromosomes: Vec<C>,
}

/// The encoding-specific half of the search.
pub trait ScenarioProblem: Sync {
    type Chromosome: Clone + PartialEq + Debug + Send + Sync;

    fn npc_count(&self) -> usize;
    fn random_chromosome(&self, rng: &mut SimRng) -> Self::Chromosome;
    fn gene_count(&self, c: &Self::Chromosome) -> usize;
    /// Overwrites gene `index` with a freshly drawn gene.
    fn replace_gene(&self, c: &mut Self::Chromosome, index: usize, rng: &mut SimRng);
    /// Runs the scenario. Must be a pure function of `(genome, seed)`.
    fn evaluate(
        &self,
        genome: &Genome<Self::Chromosome>,
        seed: u64,
    ) -> Evaluation<Self::Chromosome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation<C> {
    /// The genome as executed (repairs written back).
    pub genome: Genome<C>,
    pub fitness: FitnessRecord,
    pub outcome: Outcome,
    pub event: Option<CollisionEvent>,
    pub sim_time: f64,
    pub seed: u64,
}

impl<C> Evaluation<C> {
    pub fn failed(genome: Genome<C>, seed: u64, budget: f64) -> Self {
        Evaluation {
            genome,
            fitness: FitnessRecord::minimum(budget),
            outcome: Outcome::Error,
            event: None,
            sim_time: 0.0,
            seed,
        }
    }

    pub fn collided(&self) -> bool {
        self.outcome == Outcome::Collision
    }

    pub fn score(&self) -> f64 {
        self.fitness.score
    }
}

/// Which part of a search produced an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Main,
    LocalFuzz,
    Random,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Main => "main",
            Phase::LocalFuzz => "fuzz",
            Phase::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub phase: Phase,
    pub generation: u32,
    pub index: u32,
}

impl Lineage {
    /// Identifier used for trace files.
    pub fn trace_id(&self) -> String {
        format!(
            "g{:04}-{}-{:04}",
            self.generation,
            self.phase.as_str(),
            self.index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedIndividual<C> {
    pub lineage: Lineage,
    pub evaluation: Evaluation<C>,
}

impl<C> EvaluatedIndividual<C> {
    pub fn score(&self) -> f64 {
        self.evaluation.fitness.score
    }

    pub fn genome(&self) -> &Genome<C> {
        &self.evaluation.genome
    }

    pub fn trace_ref(&self) -> String {
        self.lineage.trace_id()
    }
}

/// Orders by score (higher first), then earlier violation time.
pub fn fitness_order<C>(a: &EvaluatedIndividual<C>, b: &EvaluatedIndividual<C>) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.evaluation.fitness.et.total_cmp(&b.evaluation.fitness.et))
}

fn better<C>(a: &EvaluatedIndividual<C>, b: &EvaluatedIndividual<C>) -> bool {
    fitness_order(a, b) == Ordering::Less
}

/// Evaluation job: a genome and the seed of its private random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Job<C> {
    pub genome: Genome<C>,
    pub seed: u64,
}

/// Runs batches of evaluations. Results are returned in job order.
pub trait Executor {
    fn evaluate_batch<P: ScenarioProblem>(
        &self,
        problem: &P,
        jobs: &[Job<P::Chromosome>],
    ) -> Vec<Evaluation<P::Chromosome>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialExecutor;

impl Executor for SequentialExecutor {
    fn evaluate_batch<P: ScenarioProblem>(
        &self,
        problem: &P,
        jobs: &[Job<P::Chromosome>],
    ) -> Vec<Evaluation<P::Chromosome>> {
        jobs.iter()
            .map(|j| problem.evaluate(&j.genome, j.seed))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalFuzzConfig {
    /// Quantile of all scores seen so far a new best must reach.
    pub trigger_percentile: f64,
    pub mutation_rate: f64,
    pub sub_generations: usize,
    pub sub_population: usize,
}

impl Default for LocalFuzzConfig {
    fn default() -> Self {
        LocalFuzzConfig {
            trigger_percentile: 0.9,
            mutation_rate: 0.8,
            sub_generations: 3,
            sub_population: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestartConfig {
    pub stagnation_window: usize,
    pub epsilon: f64,
}

impl Default for RestartConfig {
    fn default() -> Self {
        RestartConfig {
            stagnation_window: 5,
            epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_probability: f64,
    pub mutation_probability: f64,
    pub elite_fraction: f64,
    pub genes_per_chromosome: usize,
    /// Seconds of simulated time per scenario.
    pub scenario_budget: f64,
    pub local_fuzz: LocalFuzzConfig,
    pub restart: RestartConfig,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 8,
            generations: 20,
            crossover_probability: 0.5,
            mutation_probability: 0.5,
            elite_fraction: 0.25,
            genes_per_chromosome: 6,
            scenario_budget: 30.0,
            local_fuzz: LocalFuzzConfig::default(),
            restart: RestartConfig::default(),
            seed: 0,
        }
    }
}

fn probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.population_size < 4 {
            return Err(Error::InvalidConfig("population_size must be at least 4"));
        }
        if self.generations == 0 {
            return Err(Error::InvalidConfig("generations must be at least 1"));
        }
        if !probability(self.crossover_probability) || !probability(self.mutation_probability) {
            return Err(Error::InvalidConfig(
                "crossover/mutation probabilities must be in [0, 1]",
            ));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::InvalidConfig("elite_fraction must be in (0, 1)"));
        }
        if self.genes_per_chromosome == 0 {
            return Err(Error::InvalidConfig(
                "genes_per_chromosome must be at least 1",
            ));
        }
        if !(self.scenario_budget > 0.0) {
            return Err(Error::InvalidConfig("scenario_budget must be positive"));
        }
        let lf = &self.local_fuzz;
        if !probability(lf.trigger_percentile) || !probability(lf.mutation_rate) {
            return Err(Error::InvalidConfig("local_fuzz rates must be in [0, 1]"));
        }
        if lf.sub_generations > 0 && lf.sub_population == 0 {
            return Err(Error::InvalidConfig(
                "local_fuzz.sub_population must be positive",
            ));
        }
        if self.restart.stagnation_window == 0 || !(self.restart.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(
                "restart window must be positive and epsilon non-negative",
            ));
        }
        Ok(())
    }

    /// Number of individuals carried over unchanged: ⌈elite_fraction · k⌉.
    pub fn elite_count(&self) -> usize {
        let n = libm::ceil(self.elite_fraction * self.population_size as f64) as usize;
        n.clamp(1, self.population_size)
    }
}

/// `k` random genomes.
pub fn init_population<P: ScenarioProblem>(
    problem: &P,
    k: usize,
    rng: &mut SimRng,
) -> Vec<Genome<P::Chromosome>> {
    (0..k)
        .map(|_| Genome {
            chromosomes: (0..problem.npc_count())
                .map(|_| problem.random_chromosome(rng))
                .collect(),
        })
        .collect()
}

/// With probability `p_c`, swaps one uniformly chosen chromosome of `a` with
/// one of `b`. Otherwise returns copies.
pub fn crossover<C: Clone>(
    a: &Genome<C>,
    b: &Genome<C>,
    p_c: f64,
    rng: &mut SimRng,
) -> (Genome<C>, Genome<C>) {
    let (mut a, mut b) = (a.clone(), b.clone());
    if rng.gen_bool(p_c) && !a.chromosomes.is_empty() && !b.chromosomes.is_empty() {
        let i = rng.gen_range(0..a.chromosomes.len());
        let j = rng.gen_range(0..b.chromosomes.len());
        core::mem::swap(&mut a.chromosomes[i], &mut b.chromosomes[j]);
    }
    (a, b)
}

/// With probability `p_m`, replaces one gene drawn uniformly over all
/// chromosomes with a fresh gene.
pub fn mutate<P: ScenarioProblem>(
    problem: &P,
    genome: &Genome<P::Chromosome>,
    p_m: f64,
    rng: &mut SimRng,
) -> Genome<P::Chromosome> {
    let mut out = genome.clone();
    if !rng.gen_bool(p_m) {
        return out;
    }
    let total: usize = out.chromosomes.iter().map(|c| problem.gene_count(c)).sum();
    if total == 0 {
        return out;
    }
    let mut pick = rng.gen_range(0..total);
    for c in &mut out.chromosomes {
        let n = problem.gene_count(c);
        if pick < n {
            problem.replace_gene(c, pick, rng);
            break;
        }
        pick -= n;
    }
    out
}

/// Indices of `population` from best to worst; ties keep insertion order.
pub fn rank_order<C>(population: &[EvaluatedIndividual<C>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&i, &j| fitness_order(&population[i], &population[j]).then(i.cmp(&j)));
    order
}

fn tournament<'a, C>(
    population: &'a [EvaluatedIndividual<C>],
    rng: &mut SimRng,
) -> &'a EvaluatedIndividual<C> {
    let i = rng.gen_range(0..population.len());
    let j = rng.gen_range(0..population.len());
    let (a, b) = (&population[i], &population[j]);
    match fitness_order(a, b).then(i.cmp(&j)) {
        Ordering::Greater => b,
        _ => a,
    }
}

/// The next population before evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NextGeneration<C> {
    /// Carried over with their cached evaluations.
    pub elites: Vec<EvaluatedIndividual<C>>,
    /// New genomes that still need evaluating.
    pub offspring: Vec<Genome<C>>,
}

/// Elitist selection: the best ⌈elite_fraction·k⌉ survive unchanged, the rest
/// are bred by binary tournament, crossover and mutation.
pub fn select_next_generation<P: ScenarioProblem>(
    problem: &P,
    evaluated: &[EvaluatedIndividual<P::Chromosome>],
    cfg: &GaConfig,
    rng: &mut SimRng,
) -> NextGeneration<P::Chromosome> {
    let k = cfg.population_size;
    let order = rank_order(evaluated);
    let elites: Vec<_> = order
        .iter()
        .take(cfg.elite_count())
        .map(|&i| evaluated[i].clone())
        .collect();
    let mut offspring = Vec::with_capacity(k - elites.len());
    while offspring.len() < k - elites.len() {
        let a = tournament(evaluated, rng);
        let b = tournament(evaluated, rng);
        let (ca, cb) = crossover(a.genome(), b.genome(), cfg.crossover_probability, rng);
        offspring.push(mutate(problem, &ca, cfg.mutation_probability, rng));
        if offspring.len() < k - elites.len() {
            offspring.push(mutate(problem, &cb, cfg.mutation_probability, rng));
        }
    }
    NextGeneration { elites, offspring }
}

/// Nearest-rank quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(q * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Mutation-only hill climb around `seed`. Each sub-generation evaluates
/// `sub_population` mutated copies of the current best; the best individual
/// seen (the seed included) is returned.
#[allow(clippy::too_many_arguments)]
pub fn local_fuzz<P: ScenarioProblem, X: Executor>(
    problem: &P,
    seed: &EvaluatedIndividual<P::Chromosome>,
    cfg: &GaConfig,
    executor: &X,
    generation: u32,
    rng: &mut SimRng,
    on_evaluated: &mut dyn FnMut(&EvaluatedIndividual<P::Chromosome>),
) -> EvaluatedIndividual<P::Chromosome> {
    let lf = &cfg.local_fuzz;
    let mut best = seed.clone();
    for sub in 0..lf.sub_generations {
        let jobs: Vec<_> = (0..lf.sub_population)
            .map(|i| {
                let index = (sub * lf.sub_population + i) as u64;
                Job {
                    genome: mutate(problem, best.genome(), lf.mutation_rate, rng),
                    seed: derive_seed(cfg.seed, &[STREAM_FUZZ, generation as u64, index]),
                }
            })
            .collect();
        let results = executor.evaluate_batch(problem, &jobs);
        let mut candidate: Option<EvaluatedIndividual<P::Chromosome>> = None;
        for (i, evaluation) in results.into_iter().enumerate() {
            let ind = EvaluatedIndividual {
                lineage: Lineage {
                    phase: Phase::LocalFuzz,
                    generation,
                    index: (sub * lf.sub_population + i) as u32,
                },
                evaluation,
            };
            on_evaluated(&ind);
            if candidate.as_ref().is_none_or(|c| better(&ind, c)) {
                candidate = Some(ind);
            }
        }
        if let Some(c) = candidate {
            if better(&c, &best) {
                best = c;
            }
        }
    }
    best
}

/// True when the best score rose by less than `epsilon` over the last
/// `stagnation_window` entries of `history`.
pub fn is_stagnant(history: &[f64], restart: &RestartConfig) -> bool {
    let w = restart.stagnation_window;
    if history.len() < w || w == 0 {
        return false;
    }
    let last = history[history.len() - 1];
    let first = history[history.len() - w];
    last - first < restart.epsilon
}

/// A restarted population: the all-time best plus fresh random genomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart<C> {
    pub injected: EvaluatedIndividual<C>,
    pub fresh: Vec<Genome<C>>,
}

pub fn maybe_restart<P: ScenarioProblem>(
    problem: &P,
    history: &[f64],
    best_ever: &EvaluatedIndividual<P::Chromosome>,
    cfg: &GaConfig,
    rng: &mut SimRng,
) -> Option<Restart<P::Chromosome>> {
    if !is_stagnant(history, &cfg.restart) {
        return None;
    }
    Some(Restart {
        injected: best_ever.clone(),
        fresh: init_population(problem, cfg.population_size - 1, rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: u32,
    pub best: f64,
    pub mean: f64,
    pub new_evaluations: usize,
    pub local_fuzz: bool,
    /// A restart replaced the population after this generation.
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport<C> {
    pub evaluations: usize,
    pub collisions: Vec<EvaluatedIndividual<C>>,
    pub generations: Vec<GenerationStats>,
    pub local_fuzz_activations: usize,
    pub restarts: usize,
    pub simulated_time: f64,
    pub best: Option<EvaluatedIndividual<C>>,
}

impl<C: Clone> SearchReport<C> {
    pub fn new() -> Self {
        SearchReport {
            evaluations: 0,
            collisions: Vec::new(),
            generations: Vec::new(),
            local_fuzz_activations: 0,
            restarts: 0,
            simulated_time: 0.0,
            best: None,
        }
    }

    /// Accounts one fresh evaluation.
    pub fn record(&mut self, ind: &EvaluatedIndividual<C>) {
        self.evaluations += 1;
        self.simulated_time += ind.evaluation.sim_time;
        if ind.evaluation.collided() {
            self.collisions.push(ind.clone());
        }
        if self.best.as_ref().is_none_or(|b| better(ind, b)) {
            self.best = Some(ind.clone());
        }
    }

    pub fn collision_fraction(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.collisions.len() as f64 / self.evaluations as f64
        }
    }
}

impl<C: Clone> Default for SearchReport<C> {
    fn default() -> Self {
        Self::new()
    }
}

enum Slot<C> {
    Done(EvaluatedIndividual<C>),
    Pending(Genome<C>),
}

/// Generations of evaluate → local fuzz → select → restart.
///
/// `on_evaluated` sees every fresh evaluation exactly once, in a fixed order.
pub fn run_search<P: ScenarioProblem, X: Executor>(
    problem: &P,
    cfg: &GaConfig,
    executor: &X,
    on_evaluated: &mut dyn FnMut(&EvaluatedIndividual<P::Chromosome>),
) -> Result<SearchReport<P::Chromosome>, Error> {
    cfg.validate()?;
    let mut ops = rng_from_seed(derive_seed(cfg.seed, &[STREAM_OPERATORS]));
    let mut init_rng = rng_from_seed(derive_seed(cfg.seed, &[STREAM_INIT]));
    let mut population: Vec<Slot<P::Chromosome>> =
        init_population(problem, cfg.population_size, &mut init_rng)
            .into_iter()
            .map(Slot::Pending)
            .collect();
    let mut report = SearchReport::new();
    let mut all_scores: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut best_ever: Option<EvaluatedIndividual<P::Chromosome>> = None;

    for g in 0..cfg.generations {
        let generation = g as u32;
        let pending: Vec<usize> = population
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Slot::Pending(_)).then_some(i))
            .collect();
        let jobs: Vec<_> = pending
            .iter()
            .map(|&i| match &population[i] {
                Slot::Pending(genome) => Job {
                    genome: genome.clone(),
                    seed: derive_seed(cfg.seed, &[STREAM_MAIN, g as u64, i as u64]),
                },
                Slot::Done(_) => unreachable!(),
            })
            .collect();
        let results = executor.evaluate_batch(problem, &jobs);
        for (&i, evaluation) in pending.iter().zip(results) {
            let ind = EvaluatedIndividual {
                lineage: Lineage {
                    phase: Phase::Main,
                    generation,
                    index: i as u32,
                },
                evaluation,
            };
            on_evaluated(&ind);
            report.record(&ind);
            all_scores.push(ind.score());
            population[i] = Slot::Done(ind);
        }
        let mut evaluated: Vec<EvaluatedIndividual<P::Chromosome>> = population
            .drain(..)
            .map(|s| match s {
                Slot::Done(ind) => ind,
                Slot::Pending(_) => unreachable!(),
            })
            .collect();

        let best_idx = rank_order(&evaluated)[0];
        let fresh_best = evaluated[best_idx].lineage.generation == generation
            && evaluated[best_idx].lineage.phase == Phase::Main;
        let threshold =
            quantile(&all_scores, cfg.local_fuzz.trigger_percentile).unwrap_or(f64::INFINITY);
        let mut fuzzed = false;
        if cfg.local_fuzz.sub_generations > 0
            && fresh_best
            && !evaluated[best_idx].evaluation.collided()
            && evaluated[best_idx].score() >= threshold
        {
            fuzzed = true;
            report.local_fuzz_activations += 1;
            let mut record = |ind: &EvaluatedIndividual<P::Chromosome>| {
                on_evaluated(ind);
                report.record(ind);
                all_scores.push(ind.score());
            };
            let improved = local_fuzz(
                problem,
                &evaluated[best_idx],
                cfg,
                executor,
                generation,
                &mut ops,
                &mut record,
            );
            if better(&improved, &evaluated[best_idx]) {
                evaluated[best_idx] = improved;
            }
        }

        let best = evaluated[rank_order(&evaluated)[0]].clone();
        let mean = evaluated.iter().map(|e| e.score()).sum::<f64>() / evaluated.len() as f64;
        if best_ever.as_ref().is_none_or(|b| better(&best, b)) {
            best_ever = Some(best.clone());
        }
        history.push(best.score());
        let mut stats = GenerationStats {
            generation,
            best: best.score(),
            mean,
            new_evaluations: pending.len(),
            local_fuzz: fuzzed,
            restarted: false,
        };

        if g + 1 < cfg.generations {
            let all_time = best_ever.as_ref().expect("at least one evaluation");
            if let Some(restart) = maybe_restart(problem, &history, all_time, cfg, &mut ops) {
                report.restarts += 1;
                stats.restarted = true;
                history.clear();
                population.push(Slot::Done(restart.injected));
                population.extend(restart.fresh.into_iter().map(Slot::Pending));
            } else {
                let next = select_next_generation(problem, &evaluated, cfg, &mut ops);
                population.extend(next.elites.into_iter().map(Slot::Done));
                population.extend(next.offspring.into_iter().map(Slot::Pending));
            }
        }
        report.generations.push(stats);
    }
    Ok(report)
}
