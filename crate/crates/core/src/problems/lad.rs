//! Least absolute deviation regression `y = b0 + b1 x1 + b2 x2 + e`,
//! `e ~ t_5`.

use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_columns, polish_codes, Estimate, Problem, ProblemKind, SampleTable};
use crate::coding::CodingScheme;
use crate::error::{Error, Result};
use crate::numeric::{least_squares, nelder_mead, NelderMeadOptions};
use crate::seed::Rng;

pub const TRUE_BETA: [f64; 3] = [0.5, 0.5, -0.5];
pub const ERROR_DOF: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LadSample {
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl LadSample {
    pub fn new(y: Vec<f64>, x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if y.len() != x1.len() || y.len() != x2.len() {
            return Err(Error::Contract("LAD sample columns differ in length".into()));
        }
        Ok(Self { y, x1, x2 })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

impl SampleTable for LadSample {
    fn columns() -> &'static [&'static str] {
        &["y", "x1", "x2"]
    }
    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| vec![self.y[i], self.x1[i], self.x2[i]]).collect()
    }
    fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        check_columns(rows, 3)?;
        Self::new(
            rows.iter().map(|r| r[0]).collect(),
            rows.iter().map(|r| r[1]).collect(),
            rows.iter().map(|r| r[2]).collect(),
        )
    }
}

/// Law of the regression covariates; the default is standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    #[default]
    StandardNormal,
    /// Uniform on `[-sqrt 3, sqrt 3]` (unit variance).
    UnitUniform,
}

#[derive(Debug, Clone)]
pub struct LadProblem {
    pub beta: [f64; 3],
    pub covariates: CovariateLaw,
    pub restarts: usize,
    scheme: CodingScheme,
}

impl Default for LadProblem {
    fn default() -> Self {
        Self {
            beta: TRUE_BETA,
            covariates: CovariateLaw::StandardNormal,
            restarts: 5,
            scheme: CodingScheme::uniform(3, -2.0, 2.0, 8).expect("static coding"),
        }
    }
}

/// `-sum |y_i - b0 - b1 x1 - b2 x2| / n`.
pub fn lad_objective(beta: &[f64], s: &LadSample) -> f64 {
    let (b0, b1, b2) = (beta[0], beta[1], beta[2]);
    let total: f64 = s
        .y
        .iter()
        .zip(&s.x1)
        .zip(&s.x2)
        .map(|((y, x1), x2)| (y - b0 - b1 * x1 - b2 * x2).abs())
        .sum();
    -total / s.len() as f64
}

/// Student-t variate, normal over `sqrt(chi2_nu / nu)`.
pub(crate) fn student_t(dof: f64, rng: &mut Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let chi = ChiSquared::new(dof).expect("positive dof").sample(rng);
    z / (chi / dof).sqrt()
}

pub fn lad_sampler(n: usize, beta: &[f64; 3], law: CovariateLaw, rng: &mut Rng) -> Result<LadSample> {
    if n == 0 {
        return Err(Error::Contract("LAD sample size must be positive".into()));
    }
    let mut y = Vec::with_capacity(n);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let cov = |rng: &mut Rng| -> f64 {
        match law {
            CovariateLaw::StandardNormal => StandardNormal.sample(rng),
            CovariateLaw::UnitUniform => rng.gen_range(-3f64.sqrt()..3f64.sqrt()),
        }
    };
    for _ in 0..n {
        let a = cov(rng);
        let b = cov(rng);
        let e = student_t(ERROR_DOF, rng);
        y.push(beta[0] + beta[1] * a + beta[2] * b + e);
        x1.push(a);
        x2.push(b);
    }
    LadSample::new(y, x1, x2)
}

impl LadProblem {
    pub fn scheme(&self) -> &CodingScheme {
        &self.scheme
    }

    fn ols_start(&self, s: &LadSample) -> Vec<f64> {
        let ones = vec![1.0; s.len()];
        least_squares(&[&ones, &s.x1, &s.x2], &s.y).unwrap_or_else(|| vec![0.0; 3])
    }
}

impl Problem for LadProblem {
    type Sample = LadSample;

    fn kind(&self) -> ProblemKind {
        ProblemKind::Lad
    }

    fn param_names(&self) -> Vec<String> {
        vec!["beta0".into(), "beta1".into(), "beta2".into()]
    }

    fn true_params(&self) -> &[f64] {
        &self.beta
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<LadSample> {
        lad_sampler(n, &self.beta, self.covariates, rng)
    }

    fn sample_size(&self, s: &LadSample) -> usize {
        s.len()
    }

    fn objective(&self, theta: &[f64], s: &LadSample) -> f64 {
        lad_objective(theta, s)
    }

    fn chromosome_len(&self) -> usize {
        self.scheme.total_bits()
    }

    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        self.scheme.decode(bits).expect("chromosome length fixed by the engine")
    }

    /// Nelder-Mead from the least-squares fit, restarted from jittered
    /// copies of it; the best end point is polished with one more run.
    fn reference_estimate(&self, s: &LadSample, rng: &mut Rng) -> Result<Estimate> {
        if s.is_empty() {
            return Err(Error::Contract("empty LAD sample".into()));
        }
        let start = self.ols_start(s);
        let opts = NelderMeadOptions { max_evals: 3000, ftol: 1e-12, xtol: 1e-9 };
        let f = |b: &[f64]| -lad_objective(b, s);
        let mut best = nelder_mead(f, &start, &[0.1; 3], &opts);
        for _ in 1..self.restarts.max(1) {
            let jittered: Vec<f64> = start
                .iter()
                .map(|v| {
                    let d: f64 = StandardNormal.sample(rng);
                    v + 0.25 * d
                })
                .collect();
            let m = nelder_mead(f, &jittered, &[0.1; 3], &opts);
            if m.value < best.value {
                best = m;
            }
        }
        let polished = nelder_mead(f, &best.x, &[0.01; 3], &opts);
        if polished.value <= best.value {
            best = polished;
        }
        Ok(Estimate {
            objective: -best.value,
            diagnostic: (!best.converged).then(|| format!("simplex stopped after {} evaluations", best.evals)),
            converged: best.converged,
            theta: best.x,
        })
    }

    fn grid_reference(&self, theta_hat: &[f64], s: &LadSample) -> Vec<f64> {
        let genes = self.scheme.genes();
        let mut codes: Vec<u64> = genes.iter().zip(theta_hat).map(|(g, &x)| g.nearest_code(x)).collect();
        let value = |c: &[u64]| {
            let theta: Vec<f64> = genes.iter().zip(c).map(|(g, &t)| g.value_of(t)).collect();
            lad_objective(&theta, s)
        };
        polish_codes(genes, &mut codes, &[true; 3], value);
        genes.iter().zip(&codes).map(|(g, &t)| g.value_of(t)).collect()
    }
}
