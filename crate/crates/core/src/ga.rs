//! Binary-coded elitist genetic algorithm.
//!
//! The engine maximises a raw objective `g(theta; y)` through the scaled
//! fitness `exp(g / tau)`. Selection works on `g / tau` directly (log
//! fitness) with the generation maximum subtracted before exponentiating,
//! which rescales every fitness by the same constant and therefore leaves
//! roulette probabilities unchanged while avoiding underflow.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Attempts allowed when redrawing an inadmissible chromosome.
pub const REGENERATION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub bits: Vec<bool>,
    /// Raw objective on the run's fixed sample, once evaluated.
    pub objective: Option<f64>,
}

impl Chromosome {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits, objective: None }
    }

    pub fn random(len: usize, rng: &mut Rng) -> Self {
        Self::new((0..len).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    fn score(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }
}

/// What the GA needs from an estimation problem bound to a fixed sample.
pub trait GaProblem {
    fn chromosome_len(&self) -> usize;

    fn decode(&self, bits: &[bool]) -> Vec<f64>;

    /// Decoded points failing this are rejected and regenerated before
    /// evaluation.
    fn is_admissible(&self, _theta: &[f64]) -> bool {
        true
    }

    /// Raw objective `g(theta; y)`. `f64::NEG_INFINITY` marks a point the
    /// objective cannot be evaluated at; it receives zero fitness.
    fn objective(&self, theta: &[f64]) -> f64;

    /// Problem-specific starting population, if the problem has one.
    fn seeded_population(&self, _n: usize, _rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        None
    }
}

impl<P: GaProblem + ?Sized> GaProblem for &P {
    fn chromosome_len(&self) -> usize {
        (**self).chromosome_len()
    }
    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        (**self).decode(bits)
    }
    fn is_admissible(&self, theta: &[f64]) -> bool {
        (**self).is_admissible(theta)
    }
    fn objective(&self, theta: &[f64]) -> f64 {
        (**self).objective(theta)
    }
    fn seeded_population(&self, n: usize, rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        (**self).seeded_population(n, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Every chromosome uniform at random.
    Uniform,
    /// The problem's seeded population when it provides one, else uniform.
    #[default]
    ProblemSeeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub generations: usize,
    pub elitism: bool,
    pub seed: u64,
    /// Fitness scaling constant in `exp(g / tau)`.
    pub tau: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            crossover_rate: 0.7,
            mutation_rate: 0.1,
            generations: 1400,
            elitism: true,
            seed: 0,
            tau: 1.0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        for (name, p) in [("crossover", self.crossover_rate), ("mutation", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} rate {p} outside [0, 1]")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.elitism {
            return Err(Error::Config("only elitist GAs are supported".into()));
        }
        Ok(())
    }

    /// Convergence analysis needs a strictly positive mutation rate.
    pub fn validate_for_convergence(&self) -> Result<()> {
        self.validate()?;
        if self.mutation_rate <= 0.0 {
            return Err(Error::Config("convergence analysis requires mutation rate > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Decoded best-so-far parameters.
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    /// Cumulative objective evaluations, `N * (generation + 1)`.
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaTrace {
    pub records: Vec<GenerationRecord>,
    /// Generations in which every fitness was zero and selection fell back
    /// to uniform.
    pub uniform_fallbacks: usize,
    /// Chromosomes redrawn because they decoded to an inadmissible point.
    pub regenerated: usize,
}

impl GaTrace {
    pub fn last(&self) -> &GenerationRecord {
        self.records.last().expect("trace always holds generation 0")
    }

    pub fn is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].best_objective >= w[0].best_objective)
    }
}

/// `exp(g / tau)`, with the `-inf` sentinel mapping to zero.
pub fn scaled_fitness(raw: f64, tau: f64) -> f64 {
    if raw == f64::NEG_INFINITY || raw.is_nan() {
        0.0
    } else {
        (raw / tau).exp()
    }
}

/// Roulette wheel over log fitnesses.
#[derive(Debug, Clone)]
pub struct RouletteWheel {
    cumulative: Vec<f64>,
    uniform: bool,
}

impl RouletteWheel {
    pub fn from_log_fitness(log_fitness: &[f64]) -> Self {
        let max = log_fitness
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            let cumulative = (1..=log_fitness.len()).map(|i| i as f64).collect();
            return Self { cumulative, uniform: true };
        }
        let mut acc = 0.0;
        let cumulative = log_fitness
            .iter()
            .map(|&l| {
                if l.is_finite() {
                    acc += (l - max).exp();
                }
                acc
            })
            .collect();
        Self { cumulative, uniform: false }
    }

    pub fn from_fitness(fitness: &[f64]) -> Self {
        let logs: Vec<f64> = fitness
            .iter()
            .map(|&f| if f > 0.0 { f.ln() } else { f64::NEG_INFINITY })
            .collect();
        Self::from_log_fitness(&logs)
    }

    /// True when no individual had positive fitness.
    pub fn is_uniform_fallback(&self) -> bool {
        self.uniform
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty wheel");
        let target = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= target);
        if idx < self.cumulative.len() {
            return idx;
        }
        // target rounded up to the total: take the last slot with width.
        let mut i = self.cumulative.len() - 1;
        while i > 0 && self.cumulative[i - 1] == self.cumulative[i] {
            i -= 1;
        }
        i
    }
}

/// Draws one index proportionally to `fitness`. The flag reports the
/// all-zero uniform fallback.
pub fn roulette_select(fitness: &[f64], rng: &mut Rng) -> Result<(usize, bool)> {
    if fitness.is_empty() {
        return Err(Error::Contract("roulette over an empty population".into()));
    }
    let wheel = RouletteWheel::from_fitness(fitness);
    Ok((wheel.sample(rng), wheel.is_uniform_fallback()))
}

/// Offspring of cutting both parents after position `cut`.
pub fn splice(p1: &[bool], p2: &[bool], cut: usize) -> (Vec<bool>, Vec<bool>) {
    let mut c1 = Vec::with_capacity(p1.len());
    c1.extend_from_slice(&p1[..cut]);
    c1.extend_from_slice(&p2[cut..]);
    let mut c2 = Vec::with_capacity(p2.len());
    c2.extend_from_slice(&p2[..cut]);
    c2.extend_from_slice(&p1[cut..]);
    (c1, c2)
}

pub fn single_point_crossover(
    p1: &[bool],
    p2: &[bool],
    rate: f64,
    rng: &mut Rng,
) -> Result<(Vec<bool>, Vec<bool>)> {
    if p1.len() != p2.len() {
        return Err(Error::Contract(format!(
            "crossover parents differ in length: {} vs {}",
            p1.len(),
            p2.len()
        )));
    }
    let m = p1.len();
    if m >= 2 && rng.gen::<f64>() < rate {
        let cut = rng.gen_range(1..m);
        Ok(splice(p1, p2, cut))
    } else {
        Ok((p1.to_vec(), p2.to_vec()))
    }
}

pub fn bitflip_mutate(bits: &mut [bool], rate: f64, rng: &mut Rng) {
    for b in bits.iter_mut() {
        if rng.gen::<f64>() < rate {
            *b = !*b;
        }
    }
}

struct Engine<'a, P: GaProblem> {
    problem: &'a P,
    config: &'a GaConfig,
    rng: Rng,
    evaluations: u64,
    regenerated: usize,
}

impl<'a, P: GaProblem> Engine<'a, P> {
    fn admissible_or_redraw(&mut self, mut c: Chromosome) -> Result<Chromosome> {
        let len = self.problem.chromosome_len();
        let mut attempts = 0;
        while !self.problem.is_admissible(&self.problem.decode(&c.bits)) {
            attempts += 1;
            if attempts > REGENERATION_CAP {
                return Err(Error::RegenerationCap(REGENERATION_CAP));
            }
            self.regenerated += 1;
            c = Chromosome::random(len, &mut self.rng);
        }
        Ok(c)
    }

    fn evaluate(&mut self, c: &mut Chromosome) {
        let theta = self.problem.decode(&c.bits);
        let v = self.problem.objective(&theta);
        self.evaluations += 1;
        c.objective = Some(if v.is_nan() { f64::NEG_INFINITY } else { v });
    }

    fn initial_population(&mut self, policy: InitPolicy) -> Result<Vec<Chromosome>> {
        let n = self.config.population_size;
        let len = self.problem.chromosome_len();
        let raw = match policy {
            InitPolicy::ProblemSeeded => self.problem.seeded_population(n, &mut self.rng),
            InitPolicy::Uniform => None,
        };
        let raw = match raw {
            Some(pop) => pop?,
            None => (0..n).map(|_| Chromosome::random(len, &mut self.rng)).collect(),
        };
        if raw.len() != n || raw.iter().any(|c| c.len() != len) {
            return Err(Error::Contract("seeded population has the wrong shape".into()));
        }
        raw.into_iter().map(|c| self.admissible_or_redraw(c)).collect()
    }

    fn record(&self, generation: usize, elite: &Chromosome) -> GenerationRecord {
        GenerationRecord {
            generation,
            best_params: self.problem.decode(&elite.bits),
            best_objective: elite.score(),
            evaluations: self.evaluations,
        }
    }
}

/// First index holding the maximum score.
fn best_index(pop: &[Chromosome]) -> usize {
    let mut best = 0;
    for (i, c) in pop.iter().enumerate().skip(1) {
        if c.score() > pop[best].score() {
            best = i;
        }
    }
    best
}

/// First index holding the minimum score.
fn worst_index(pop: &[Chromosome]) -> usize {
    let mut worst = 0;
    for (i, c) in pop.iter().enumerate().skip(1) {
        if c.score() < pop[worst].score() {
            worst = i;
        }
    }
    worst
}

/// Runs the GA for `config.generations` generations after evaluating the
/// initial population (generation 0).
pub fn run_ga<P: GaProblem>(problem: &P, config: &GaConfig, policy: InitPolicy) -> Result<GaTrace> {
    config.validate()?;
    let mut engine = Engine {
        problem,
        config,
        rng: <Rng as rand::SeedableRng>::seed_from_u64(config.seed),
        evaluations: 0,
        regenerated: 0,
    };
    let n = config.population_size;
    let tau = config.tau;

    let mut pop = engine.initial_population(policy)?;
    for c in pop.iter_mut() {
        engine.evaluate(c);
    }
    let mut elite = pop[best_index(&pop)].clone();
    let mut records = Vec::with_capacity(config.generations + 1);
    records.push(engine.record(0, &elite));
    let mut uniform_fallbacks = 0;
    let mut log_fitness = vec![0.0; n];

    for generation in 1..=config.generations {
        for (lf, c) in log_fitness.iter_mut().zip(&pop) {
            *lf = c.score() / tau;
        }
        let wheel = RouletteWheel::from_log_fitness(&log_fitness);
        if wheel.is_uniform_fallback() {
            uniform_fallbacks += 1;
        }
        let mut mating: Vec<usize> = (0..n).map(|_| wheel.sample(&mut engine.rng)).collect();
        mating.shuffle(&mut engine.rng);

        let mut next: Vec<Chromosome> = Vec::with_capacity(n);
        for pair in mating.chunks(2) {
            match *pair {
                [a, b] => {
                    let (c1, c2) = single_point_crossover(
                        &pop[a].bits,
                        &pop[b].bits,
                        config.crossover_rate,
                        &mut engine.rng,
                    )?;
                    next.push(Chromosome::new(c1));
                    next.push(Chromosome::new(c2));
                }
                [a] => next.push(Chromosome::new(pop[a].bits.clone())),
                _ => unreachable!(),
            }
        }
        let mut evaluated = Vec::with_capacity(n);
        for mut c in next {
            bitflip_mutate(&mut c.bits, config.mutation_rate, &mut engine.rng);
            let mut c = engine.admissible_or_redraw(c)?;
            engine.evaluate(&mut c);
            evaluated.push(c);
        }
        pop = evaluated;

        let best = best_index(&pop);
        if elite.score() > pop[best].score() {
            let worst = worst_index(&pop);
            pop[worst] = elite.clone();
        } else if pop[best].score() > elite.score() {
            elite = pop[best].clone();
        }
        records.push(engine.record(generation, &elite));
    }

    Ok(GaTrace {
        records,
        uniform_fallbacks,
        regenerated: engine.regenerated,
    })
}
