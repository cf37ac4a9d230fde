//! Simultaneous identification and estimation of an AR(p <= 8) model by
//! minimising BIC over coefficient vectors with exact zeros.
//!
//! Each coefficient uses 8 bits: a presence flag followed by a 7-bit
//! magnitude coded on `[-2, 2]`. A cleared flag means the coefficient is
//! exactly zero and is not counted as a free parameter.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_columns, polish_codes, Estimate, Problem, ProblemKind, SampleTable};
use crate::coding::{bits_to_code, Gene};
use crate::error::{Error, Result};
use crate::ga::Chromosome;
use crate::numeric::solve_spd;
use crate::seed::Rng;

pub const MAX_ORDER: usize = 8;
pub const GENE_BITS: usize = 8;
pub const TRUE_PHI1: f64 = 0.8;
pub const BURN_IN: usize = 500;
/// Floor on the residual variance; fits at or below it are degenerate.
pub const SIGMA2_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ArSample {
    pub y: Vec<f64>,
}

impl ArSample {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.len() <= MAX_ORDER {
            return Err(Error::Contract(format!(
                "AR sample needs more than {MAX_ORDER} observations, got {}",
                y.len()
            )));
        }
        Ok(Self { y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Effective number of residuals, `n - 8`.
    pub fn effective_len(&self) -> usize {
        self.y.len() - MAX_ORDER
    }
}

impl SampleTable for ArSample {
    fn columns() -> &'static [&'static str] {
        &["y"]
    }
    fn rows(&self) -> Vec<Vec<f64>> {
        self.y.iter().map(|&v| vec![v]).collect()
    }
    fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        check_columns(rows, 1)?;
        Self::new(rows.iter().map(|r| r[0]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bic {
    pub bic: f64,
    pub sigma2: f64,
    pub free_params: usize,
    /// The residual variance hit [`SIGMA2_FLOOR`].
    pub degenerate: bool,
}

/// Conditional residual variance `sum_{t>8} (y_t - sum_j phi_j y_{t-j})^2 / (n - 8)`.
pub fn conditional_sigma2(phi: &[f64], s: &ArSample) -> f64 {
    let nz: Vec<(usize, f64)> = phi
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, &v)| (j + 1, v))
        .collect();
    let y = &s.y;
    let mut rss = 0.0;
    for t in MAX_ORDER..y.len() {
        let mut e = y[t];
        for &(lag, v) in &nz {
            e -= v * y[t - lag];
        }
        rss += e * e;
    }
    rss / s.effective_len() as f64
}

fn bic_from(sigma2: f64, k: usize, n: usize) -> Bic {
    let degenerate = !(sigma2 > SIGMA2_FLOOR);
    let s2 = if degenerate { SIGMA2_FLOOR } else { sigma2 };
    let nf = n as f64;
    Bic { bic: nf * s2.ln() + k as f64 * nf.ln(), sigma2: s2, free_params: k, degenerate }
}

pub fn ar_bic(phi: &[f64], s: &ArSample) -> Bic {
    let k = phi.iter().filter(|&&v| v != 0.0).count();
    bic_from(conditional_sigma2(phi, s), k, s.len())
}

/// `-BIC / n`.
pub fn ar_objective(phi: &[f64], s: &ArSample) -> f64 {
    -ar_bic(phi, s).bic / s.len() as f64
}

/// Zero-mean AR(1) with unit Gaussian innovations after a burn-in.
pub fn ar_sampler(n: usize, phi1: f64, rng: &mut Rng) -> Result<ArSample> {
    if n <= MAX_ORDER {
        return Err(Error::Contract(format!("AR sample size must exceed {MAX_ORDER}")));
    }
    let mut prev = 0.0;
    let mut y = Vec::with_capacity(n);
    for t in 0..BURN_IN + n {
        let e: f64 = StandardNormal.sample(rng);
        prev = phi1 * prev + e;
        if t >= BURN_IN {
            y.push(prev);
        }
    }
    ArSample::new(y)
}

pub fn magnitude_gene() -> Gene {
    Gene::new(-2.0, 2.0, GENE_BITS - 1).expect("static coding")
}

/// Decodes the 64-bit chromosome into 8 coefficients.
pub fn ar_decode(bits: &[bool]) -> Result<Vec<f64>> {
    if bits.len() != MAX_ORDER * GENE_BITS {
        return Err(Error::Contract(format!(
            "AR chromosome must have {} bits, got {}",
            MAX_ORDER * GENE_BITS,
            bits.len()
        )));
    }
    let gene = magnitude_gene();
    Ok(bits
        .chunks(GENE_BITS)
        .map(|g| if g[0] { gene.value_of(bits_to_code(&g[1..])) } else { 0.0 })
        .collect())
}

/// Bits of the grid point nearest to `phi`, keeping exact zeros.
pub fn ar_encode_nearest(phi: &[f64]) -> Vec<bool> {
    let gene = magnitude_gene();
    phi.iter()
        .flat_map(|&v| {
            let mut bits = vec![v != 0.0];
            let code = if v != 0.0 { gene.nearest_code(v) } else { 0 };
            bits.extend(crate::coding::code_to_bits(code, GENE_BITS - 1));
            bits
        })
        .collect()
}

/// One white-noise chromosome, 8 with exactly one coefficient forced to
/// zero, the rest uniform.
pub fn ar_seed_population(n: usize, rng: &mut Rng) -> Result<Vec<Chromosome>> {
    if n < MAX_ORDER + 2 {
        return Err(Error::Config(format!(
            "AR seeded population needs at least {} members, got {n}",
            MAX_ORDER + 2
        )));
    }
    let len = MAX_ORDER * GENE_BITS;
    let mut pop = Vec::with_capacity(n);
    pop.push(Chromosome::new(vec![false; len]));
    for i in 0..MAX_ORDER {
        let mut bits: Vec<bool> = (0..len).map(|_| rng.gen::<bool>()).collect();
        bits[i * GENE_BITS] = false;
        pop.push(Chromosome::new(bits));
    }
    while pop.len() < n {
        pop.push(Chromosome::random(len, rng));
    }
    Ok(pop)
}

/// Lagged cross products `G[i][j] = sum_{t>=8} y_{t-i} y_{t-j}`, `i, j <= 8`.
fn lag_gram(s: &ArSample) -> [[f64; MAX_ORDER + 1]; MAX_ORDER + 1] {
    let mut g = [[0.0; MAX_ORDER + 1]; MAX_ORDER + 1];
    let y = &s.y;
    for i in 0..=MAX_ORDER {
        for j in 0..=i {
            let v: f64 = (MAX_ORDER..y.len()).map(|t| y[t - i] * y[t - j]).sum();
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    g
}

/// Conditional least squares restricted to the lags in `mask` (bit `j`
/// set means lag `j + 1` is free).
pub fn subset_cls(s: &ArSample, mask: u32) -> Option<Vec<f64>> {
    subset_cls_with(&lag_gram(s), mask)
}

fn subset_cls_with(g: &[[f64; MAX_ORDER + 1]; MAX_ORDER + 1], mask: u32) -> Option<Vec<f64>> {
    let lags: Vec<usize> = (0..MAX_ORDER).filter(|j| mask >> j & 1 == 1).map(|j| j + 1).collect();
    let mut phi = vec![0.0; MAX_ORDER];
    if lags.is_empty() {
        return Some(phi);
    }
    let p = lags.len();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for (r, &li) in lags.iter().enumerate() {
        for (c, &lj) in lags.iter().enumerate() {
            a[r * p + c] = g[li][lj];
        }
        b[r] = g[0][li];
    }
    let sol = solve_spd(&a, &b)?;
    for (&lag, v) in lags.iter().zip(sol) {
        phi[lag - 1] = v;
    }
    Some(phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetFit {
    pub mask: u32,
    pub phi: Vec<f64>,
    pub bic: Bic,
}

/// Exhaustive search over all `2^8` zero patterns with per-pattern
/// conditional least squares; returns the minimum-BIC fit.
pub fn exhaustive_subset_search(s: &ArSample) -> Result<SubsetFit> {
    let g = lag_gram(s);
    let mut best: Option<SubsetFit> = None;
    for mask in 0u32..(1 << MAX_ORDER) {
        let Some(mut phi) = subset_cls_with(&g, mask) else {
            continue;
        };
        // An estimated coefficient that is exactly zero would not count as
        // free; keep the pattern's parameter count honest.
        for (j, v) in phi.iter_mut().enumerate() {
            if mask >> j & 1 == 1 && *v == 0.0 {
                *v = f64::MIN_POSITIVE;
            }
        }
        let bic = ar_bic(&phi, s);
        if best.as_ref().map_or(true, |b| bic.bic < b.bic.bic) {
            best = Some(SubsetFit { mask, phi, bic });
        }
    }
    best.ok_or_else(|| Error::Estimator("no AR subset could be fitted".into()))
}

/// Estimator used for the sampling-variance component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingFit {
    /// Conditional least squares of the full AR(8) model.
    #[default]
    FullModel,
    /// The exhaustive BIC subset search.
    Oracle,
}

#[derive(Debug, Clone)]
pub struct ArProblem {
    phi1: f64,
    pub sampling_fit: SamplingFit,
    truth: [f64; MAX_ORDER],
}

impl Default for ArProblem {
    fn default() -> Self {
        Self::new(TRUE_PHI1)
    }
}

impl ArProblem {
    pub fn new(phi1: f64) -> Self {
        let mut truth = [0.0; MAX_ORDER];
        truth[0] = phi1;
        Self { phi1, sampling_fit: SamplingFit::default(), truth }
    }

    pub fn with_sampling_fit(mut self, fit: SamplingFit) -> Self {
        self.sampling_fit = fit;
        self
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }
}

impl Problem for ArProblem {
    type Sample = ArSample;

    fn kind(&self) -> ProblemKind {
        ProblemKind::Ar
    }

    fn param_names(&self) -> Vec<String> {
        (1..=MAX_ORDER).map(|i| format!("phi{i}")).collect()
    }

    fn true_params(&self) -> &[f64] {
        &self.truth
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<ArSample> {
        ar_sampler(n, self.phi1, rng)
    }

    fn sample_size(&self, s: &ArSample) -> usize {
        s.len()
    }

    fn objective(&self, theta: &[f64], s: &ArSample) -> f64 {
        ar_objective(theta, s)
    }

    fn chromosome_len(&self) -> usize {
        MAX_ORDER * GENE_BITS
    }

    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        ar_decode(bits).expect("chromosome length fixed by the engine")
    }

    fn seeded_population(&self, n: usize, rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        Some(ar_seed_population(n, rng))
    }

    fn reference_estimate(&self, s: &ArSample, _rng: &mut Rng) -> Result<Estimate> {
        let fit = exhaustive_subset_search(s)?;
        Ok(Estimate {
            objective: -fit.bic.bic / s.len() as f64,
            converged: !fit.bic.degenerate,
            diagnostic: fit.bic.degenerate.then(|| "degenerate residual variance".to_string()),
            theta: fit.phi,
        })
    }

    fn sampling_estimate(&self, s: &ArSample, rng: &mut Rng) -> Result<Estimate> {
        match self.sampling_fit {
            SamplingFit::Oracle => self.reference_estimate(s, rng),
            SamplingFit::FullModel => {
                let phi = subset_cls(s, (1 << MAX_ORDER) - 1)
                    .ok_or_else(|| Error::Estimator("singular AR(8) normal equations".into()))?;
                let bic = ar_bic(&phi, s);
                Ok(Estimate {
                    objective: -bic.bic / s.len() as f64,
                    converged: !bic.degenerate,
                    diagnostic: None,
                    theta: phi,
                })
            }
        }
    }

    /// Keeps the reference zero pattern; nonzero coefficients move to the
    /// nearest 7-bit grid value and are then hill-climbed.
    fn grid_reference(&self, theta_hat: &[f64], s: &ArSample) -> Vec<f64> {
        let gene = magnitude_gene();
        let genes = [gene; MAX_ORDER];
        let free: Vec<bool> = theta_hat.iter().map(|&v| v != 0.0).collect();
        let mut codes: Vec<u64> = theta_hat.iter().map(|&v| gene.nearest_code(v)).collect();
        let to_phi = |c: &[u64]| -> Vec<f64> {
            c.iter().zip(&free).map(|(&t, &f)| if f { gene.value_of(t) } else { 0.0 }).collect()
        };
        polish_codes(&genes, &mut codes, &free, |c| ar_objective(&to_phi(c), s));
        to_phi(&codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(s: u64) -> Rng {
        Rng::seed_from_u64(s)
    }

    fn lag1_autocorrelation(y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let num: f64 = y.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
        num / den
    }

    #[test]
    fn white_noise_objective() {
        let s = ar_sampler(200, 0.8, &mut rng(1)).unwrap();
        let ss: f64 = s.y[8..].iter().map(|v| v * v).sum();
        let expected = -(ss / 192.0).ln();
        assert!((ar_objective(&[0.0; 8], &s) - expected).abs() < 1e-12);
    }

    #[test]
    fn one_free_parameter_costs_log_n_over_n() {
        let s = ar_sampler(200, 0.8, &mut rng(2)).unwrap();
        let phi = [0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let with = ar_bic(&phi, &s);
        let base = bic_from(with.sigma2, 0, 200);
        let diff = (-base.bic / 200.0) - (-with.bic / 200.0);
        assert!((diff - 200f64.ln() / 200.0).abs() < 1e-12);
        assert_eq!(with.free_params, 1);
    }

    #[test]
    fn zeros_are_not_free_parameters() {
        let s = ar_sampler(100, 0.8, &mut rng(3)).unwrap();
        let a = [0.7, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = ar_bic(&a, &s);
        assert_eq!(b.free_params, 2);
        assert_eq!(ar_bic(&[0.7, 0.0, 0.1], &s).bic, b.bic);
    }

    #[test]
    fn true_model_beats_white_noise() {
        let wins = (0..200)
            .filter(|&i| {
                let s = ar_sampler(200, 0.8, &mut rng(100 + i)).unwrap();
                let phi = [0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
                ar_objective(&phi, &s) > ar_objective(&[0.0; 8], &s)
            })
            .count();
        assert_eq!(wins, 200);
    }

    #[test]
    fn sampler_autocorrelation() {
        let s = ar_sampler(5000, 0.8, &mut rng(4)).unwrap();
        let r = lag1_autocorrelation(&s.y);
        assert!((r - 0.8).abs() < 0.05, "{r}");
        let w = ar_sampler(5000, 0.0, &mut rng(5)).unwrap();
        assert!(lag1_autocorrelation(&w.y).abs() < 0.05);
        assert_eq!(ar_sampler(300, 0.8, &mut rng(6)).unwrap(), ar_sampler(300, 0.8, &mut rng(6)).unwrap());
        assert!(ar_sampler(8, 0.8, &mut rng(6)).is_err());
    }

    #[test]
    fn decode_cases() {
        assert_eq!(ar_decode(&[false; 64]).unwrap(), vec![0.0; 8]);
        let mut bits = vec![false; 64];
        bits[0] = true;
        assert_eq!(ar_decode(&bits).unwrap()[0], -2.0);
        for b in bits.iter_mut().take(8) {
            *b = true;
        }
        assert_eq!(ar_decode(&bits).unwrap()[0], 2.0);
        // Magnitude bits are ignored when the flag is clear.
        let mut off = vec![false; 64];
        off[9..16].iter_mut().for_each(|b| *b = true);
        assert_eq!(ar_decode(&off).unwrap()[1], 0.0);
        assert!(ar_decode(&[false; 63]).is_err());
    }

    #[test]
    fn encode_round_trips_grid_points() {
        let phi = ar_decode(&ar_encode_nearest(&[0.8, 0.0, -0.3, 0.0, 0.0, 0.0, 0.0, 1.99])).unwrap();
        assert_eq!(ar_decode(&ar_encode_nearest(&phi)).unwrap(), phi);
        assert_eq!(phi[1], 0.0);
        assert!((phi[0] - 0.8).abs() <= magnitude_gene().step() / 2.0);
    }

    #[test]
    fn seeded_population_layout() {
        let pop = ar_seed_population(50, &mut rng(7)).unwrap();
        assert_eq!(pop.len(), 50);
        assert_eq!(ar_decode(&pop[0].bits).unwrap(), vec![0.0; 8]);
        for (i, c) in pop[1..9].iter().enumerate() {
            assert!(!c.bits[i * GENE_BITS], "member {} should zero phi{}", i + 1, i + 1);
            assert_eq!(ar_decode(&c.bits).unwrap()[i], 0.0);
        }
        assert!(matches!(ar_seed_population(9, &mut rng(7)), Err(Error::Config(_))));
    }

    #[test]
    fn exhaustive_search_is_optimal_among_patterns() {
        let s = ar_sampler(200, 0.8, &mut rng(8)).unwrap();
        let best = exhaustive_subset_search(&s).unwrap();
        // No single pattern's CLS fit does better.
        for mask in 0u32..256 {
            let phi = subset_cls(&s, mask).unwrap();
            assert!(ar_bic(&phi, &s).bic >= best.bic.bic - 1e-9);
        }
        // Perturbing the chosen coefficients cannot lower BIC.
        let mut p = best.phi.clone();
        p[0] += 0.01;
        assert!(ar_bic(&p, &s).bic > best.bic.bic);
    }

    #[test]
    fn strong_ar1_is_identified() {
        let hits = (0..100)
            .filter(|&i| {
                let s = ar_sampler(200, 0.8, &mut rng(1000 + i)).unwrap();
                exhaustive_subset_search(&s).unwrap().mask == 1
            })
            .count();
        assert!(hits >= 75, "{hits}");
    }

    #[test]
    fn grid_reference_keeps_pattern() {
        let p = ArProblem::default();
        let s = p.sample(200, &mut rng(9)).unwrap();
        let est = p.reference_estimate(&s, &mut rng(0)).unwrap();
        let g = p.grid_reference(&est.theta, &s);
        for (a, b) in g.iter().zip(&est.theta) {
            assert_eq!(*a == 0.0, *b == 0.0);
        }
        assert_eq!(ar_decode(&ar_encode_nearest(&g)).unwrap(), g);
    }

    #[test]
    fn degenerate_fit_is_clamped() {
        // y_t = 0 beyond the conditioning window.
        let mut y = vec![1.0; 8];
        y.extend(vec![0.0; 20]);
        let s = ArSample::new(y).unwrap();
        let b = ar_bic(&[0.0; 8], &s);
        assert!(b.degenerate && b.bic.is_finite());
    }
}
