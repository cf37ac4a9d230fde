//! The three estimation problems and their shared interface.

pub mod ar;
pub mod gk;
pub mod lad;

use serde::{Deserialize, Serialize};

use crate::coding::Gene;
use crate::error::{Error, Result};
use crate::ga::{Chromosome, GaProblem};
use crate::seed::Rng;

pub use ar::ArProblem;
pub use gk::GkProblem;
pub use lad::LadProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lad,
    Ar,
    Gk,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [ProblemKind::Lad, ProblemKind::Ar, ProblemKind::Gk];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Lad => "lad",
            ProblemKind::Ar => "ar",
            ProblemKind::Gk => "gk",
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lad" => Ok(ProblemKind::Lad),
            "ar" => Ok(ProblemKind::Ar),
            "gk" => Ok(ProblemKind::Gk),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }
}

/// Result of a reference (non-GA) estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: Vec<f64>,
    /// Per-observation objective at `theta`.
    pub objective: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

/// A sample that can be written to and read back from a table.
pub trait SampleTable: Sized {
    fn columns() -> &'static [&'static str];
    fn rows(&self) -> Vec<Vec<f64>>;
    fn from_rows(rows: &[Vec<f64>]) -> Result<Self>;
}

/// An estimation problem: data generator, objective, GA coding and a
/// reference estimator.
pub trait Problem: Send + Sync {
    type Sample: Clone + Send + Sync + SampleTable;

    fn kind(&self) -> ProblemKind;

    fn param_names(&self) -> Vec<String>;

    fn n_params(&self) -> usize {
        self.param_names().len()
    }

    fn true_params(&self) -> &[f64];

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Self::Sample>;

    fn sample_size(&self, sample: &Self::Sample) -> usize;

    /// Per-observation objective `g(theta; y) / n`; `-inf` when it cannot be
    /// evaluated.
    fn objective(&self, theta: &[f64], sample: &Self::Sample) -> f64;

    fn chromosome_len(&self) -> usize;

    fn decode(&self, bits: &[bool]) -> Vec<f64>;

    fn is_admissible(&self, _theta: &[f64]) -> bool {
        true
    }

    fn seeded_population(&self, _n: usize, _rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        None
    }

    fn reference_estimate(&self, sample: &Self::Sample, rng: &mut Rng) -> Result<Estimate>;

    /// Estimator whose spread defines the sampling variance. Defaults to
    /// the reference estimator.
    fn sampling_estimate(&self, sample: &Self::Sample, rng: &mut Rng) -> Result<Estimate> {
        self.reference_estimate(sample, rng)
    }

    /// The reference optimum moved onto the GA coding grid: nearest grid
    /// point followed by a discrete hill climb over neighbouring codes.
    fn grid_reference(&self, theta_hat: &[f64], sample: &Self::Sample) -> Vec<f64>;
}

/// A problem bound to one fixed sample, as seen by the GA. The raw
/// objective is the total `n * objective`, to be scaled with `tau = n`.
pub struct Bound<'a, P: Problem> {
    pub problem: &'a P,
    pub sample: &'a P::Sample,
    n: f64,
}

impl<'a, P: Problem> Bound<'a, P> {
    pub fn new(problem: &'a P, sample: &'a P::Sample) -> Self {
        let n = problem.sample_size(sample) as f64;
        Self { problem, sample, n }
    }

    /// The fitness scaling constant, `tau = n`.
    pub fn tau(&self) -> f64 {
        self.n
    }
}

impl<P: Problem> GaProblem for Bound<'_, P> {
    fn chromosome_len(&self) -> usize {
        self.problem.chromosome_len()
    }
    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        self.problem.decode(bits)
    }
    fn is_admissible(&self, theta: &[f64]) -> bool {
        self.problem.is_admissible(theta)
    }
    fn objective(&self, theta: &[f64]) -> f64 {
        self.n * self.problem.objective(theta, self.sample)
    }
    fn seeded_population(&self, n: usize, rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        self.problem.seeded_population(n, rng)
    }
}

/// Discrete hill climb on integer codes: moves to the best strictly
/// improving point of the `3^d` neighbourhood until none improves.
/// `free` selects the coordinates that may move.
pub(crate) fn polish_codes<F>(genes: &[Gene], codes: &mut [u64], free: &[bool], mut value: F)
where
    F: FnMut(&[u64]) -> f64,
{
    let movable: Vec<usize> = (0..codes.len()).filter(|&i| free[i]).collect();
    if movable.is_empty() {
        return;
    }
    let mut current = value(codes);
    let combos = 3usize.pow(movable.len() as u32);
    for _ in 0..1000 {
        let mut best: Option<(Vec<u64>, f64)> = None;
        for combo in 0..combos {
            let mut c = combo;
            let mut trial = codes.to_vec();
            let mut skip = false;
            for &i in &movable {
                let delta = (c % 3) as i64 - 1;
                c /= 3;
                let t = trial[i] as i64 + delta;
                if t < 0 || t > genes[i].max_code() as i64 {
                    skip = true;
                    break;
                }
                trial[i] = t as u64;
            }
            if skip || trial == codes {
                continue;
            }
            let v = value(&trial);
            if v > current && best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                best = Some((trial, v));
            }
        }
        match best {
            Some((trial, v)) => {
                codes.copy_from_slice(&trial);
                current = v;
            }
            None => return,
        }
    }
}

fn check_columns(rows: &[Vec<f64>], width: usize) -> Result<()> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Contract(format!("expected {width} columns per row")));
    }
    Ok(())
}
