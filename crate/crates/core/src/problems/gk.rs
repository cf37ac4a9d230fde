//! Maximum likelihood for the g-and-k quantile distribution
//!
//! `Q(u) = A + B z (1 + c tanh(g z / 2)) (1 + z^2)^k`, `z = Phi^-1(u)`.
//!
//! The density at `x` is `1 / Q'(Q^-1(x))`. Inversion and the derivative
//! are both carried out in `z`: `Q'(u) = (dQ/dz) / phi(z)`, so the normal
//! quantile is never evaluated inside the likelihood.

use rand::Rng as _;

use super::{check_columns, polish_codes, Estimate, Problem, ProblemKind, SampleTable};
use crate::coding::CodingScheme;
use crate::error::{Error, Result};
use crate::numeric::{
    brent_root_with, median, nelder_mead, norm_cdf, norm_log_pdf, norm_quantile, Minimum,
    NelderMeadOptions, RootOptions,
};
use crate::seed::Rng;

pub const DEFAULT_C: f64 = 0.8;
pub const TRUE_THETA: [f64; 4] = [3.0, 1.0, 2.0, 0.5];
/// Inversion bracket in `u` is `(EPS, 1 - EPS)`.
pub const BRACKET_EPS: f64 = 1e-10;
pub const INVERSION_TOL: f64 = 1e-9;
pub const GENE_BITS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkParams {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub k: f64,
    pub c: f64,
}

impl GkParams {
    pub fn new(a: f64, b: f64, g: f64, k: f64, c: f64) -> Self {
        Self { a, b, g, k, c }
    }

    pub fn from_theta(theta: &[f64], c: f64) -> Self {
        Self::new(theta[0], theta[1], theta[2], theta[3], c)
    }

    pub fn theta(&self) -> [f64; 4] {
        [self.a, self.b, self.g, self.k]
    }

    pub fn is_admissible(&self) -> bool {
        self.b > 0.0 && self.k > -0.5 && [self.a, self.b, self.g, self.k].iter().all(|v| v.is_finite())
    }

    fn check(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::Domain(format!("inadmissible g-and-k parameters {self:?}")))
        }
    }

    /// Quantile as a function of the normal score `z`.
    #[inline]
    pub fn quantile_z(&self, z: f64) -> f64 {
        let t = (0.5 * self.g * z).tanh();
        self.a + self.b * z * (1.0 + self.c * t) * (1.0 + z * z).powf(self.k)
    }

    /// `dQ/dz`.
    #[inline]
    pub fn dq_dz(&self, z: f64) -> f64 {
        let t = (0.5 * self.g * z).tanh();
        let s = 1.0 + z * z;
        let skew = 1.0 + self.c * t;
        let base = skew + z * self.c * 0.5 * self.g * (1.0 - t * t) + 2.0 * self.k * z * z * skew / s;
        self.b * s.powf(self.k) * base
    }

    /// `(Q(z), dQ/dz)` sharing the transcendental evaluations: the skewness
    /// factor uses `(1 - e^-gz) / (1 + e^-gz)` with the exponent kept
    /// non-positive, and `(1 + z^2)^k` goes through one log.
    #[inline]
    fn quantile_and_slope(&self, z: f64) -> (f64, f64) {
        let gz = self.g * z;
        let e = (-gz.abs()).exp();
        let t = ((1.0 - e) / (1.0 + e)).copysign(gz);
        let s = 1.0 + z * z;
        let pk = (self.k * s.ln()).exp();
        let skew = 1.0 + self.c * t;
        let q = self.a + self.b * z * skew * pk;
        let base = skew + z * self.c * 0.5 * self.g * (1.0 - t * t) + 2.0 * self.k * z * z * skew / s;
        (q, self.b * pk * base)
    }
}

fn z_bracket() -> (f64, f64) {
    let hi = -norm_quantile(BRACKET_EPS);
    (-hi, hi)
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {u} outside (0, 1)")))
    }
}

pub fn gk_quantile(u: f64, p: &GkParams) -> Result<f64> {
    check_u(u)?;
    p.check()?;
    Ok(p.quantile_z(norm_quantile(u)))
}

/// `dQ/du`, analytic through the chain rule on `z`.
pub fn gk_quantile_derivative(u: f64, p: &GkParams) -> Result<f64> {
    check_u(u)?;
    p.check()?;
    let z = norm_quantile(u);
    Ok(p.dq_dz(z) / norm_log_pdf(z).exp())
}

fn invert_z(x: f64, p: &GkParams, tol: f64) -> Result<f64> {
    let (lo, hi) = z_bracket();
    let opts = RootOptions { ftol: tol, ..Default::default() };
    let mut f = |z: f64| p.quantile_z(z) - x;
    let (flo, fhi) = (f(lo), f(hi));
    brent_root_with(&mut f, lo, hi, flo, fhi, opts)
}

/// Depth `u` with `|Q(u) - x| <= tol`, found by Brent's method on the
/// bracket `u in (1e-10, 1 - 1e-10)`.
pub fn gk_invert(x: f64, p: &GkParams, tol: f64) -> Result<f64> {
    p.check()?;
    Ok(norm_cdf(invert_z(x, p, tol)?))
}

/// Nodes of the z-grid used to start the likelihood's inversions.
const GRID_NODES: usize = 49;

/// Normal scores and quantile slopes of ascending data.
///
/// `Q` and `dQ/dz` are tabulated on an even z-grid over the bracket. Each
/// datum starts from the cubic Hermite interpolant of the inverse on its
/// grid cell and is refined by Newton's method, safeguarded by bisection
/// inside the cell. `None` if a datum lies outside the bracket, the
/// tabulated quantile is not increasing, or a slope is not positive.
fn invert_sorted(sorted: &[f64], p: &GkParams) -> Option<Vec<(f64, f64)>> {
    let (zlo, zhi) = z_bracket();
    let (first, last) = (*sorted.first()?, *sorted.last()?);
    let width = (zhi - zlo) / (GRID_NODES - 1) as f64;
    let mut zs = [0.0; GRID_NODES];
    let mut qs = [0.0; GRID_NODES];
    let mut ss = [0.0; GRID_NODES];
    for j in 0..GRID_NODES {
        let z = if j == GRID_NODES - 1 { zhi } else { zlo + j as f64 * width };
        let (q, s) = p.quantile_and_slope(z);
        zs[j] = z;
        qs[j] = q;
        ss[j] = s;
    }
    if !(qs[0] <= first && last <= qs[GRID_NODES - 1]) {
        return None;
    }
    if ss.iter().any(|&s| !(s > 0.0)) || qs.windows(2).any(|w| !(w[1] > w[0])) {
        return None;
    }

    let mut out = Vec::with_capacity(sorted.len());
    let mut j = 0;
    for &x in sorted {
        while j + 2 < GRID_NODES && qs[j + 1] < x {
            j += 1;
        }
        let (q0, q1) = (qs[j], qs[j + 1]);
        let (mut lo, mut hi) = (zs[j], zs[j + 1]);
        // Hermite interpolation of z(q) with end slopes 1 / (dQ/dz).
        let dq = q1 - q0;
        let t = (x - q0) / dq;
        let (t2, t3) = (t * t, t * t * t);
        let mut z = (2.0 * t3 - 3.0 * t2 + 1.0) * lo
            + (t3 - 2.0 * t2 + t) * dq / ss[j]
            + (-2.0 * t3 + 3.0 * t2) * hi
            + (t3 - t2) * dq / ss[j + 1];
        if !(z > lo && z < hi) {
            z = lo + t * (hi - lo);
        }
        let (mut q, mut slope) = p.quantile_and_slope(z);
        let mut iterations = 0;
        while (q - x).abs() > INVERSION_TOL {
            iterations += 1;
            if q < x {
                lo = z;
            } else {
                hi = z;
            }
            if iterations > 100 || hi - lo <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
                break;
            }
            let newton = z - (q - x) / slope;
            z = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            (q, slope) = p.quantile_and_slope(z);
        }
        if !(slope > 0.0) {
            return None;
        }
        out.push((z, slope));
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GkSample {
    pub x: Vec<f64>,
    sorted: Vec<f64>,
}

impl GkSample {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("g-and-k sample must be nonempty and finite".into()));
        }
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { x, sorted })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

impl SampleTable for GkSample {
    fn columns() -> &'static [&'static str] {
        &["x"]
    }
    fn rows(&self) -> Vec<Vec<f64>> {
        self.x.iter().map(|&v| vec![v]).collect()
    }
    fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        check_columns(rows, 1)?;
        Self::new(rows.iter().map(|r| r[0]).collect())
    }
}

/// `log L = -sum_i log Q'(Q^-1(x_i))`; `-inf` when a datum cannot be
/// inverted or the quantile slope is not positive there.
pub fn gk_loglik(p: &GkParams, s: &GkSample) -> f64 {
    if !p.is_admissible() {
        return f64::NEG_INFINITY;
    }
    match invert_sorted(s.sorted(), p) {
        Some(roots) => roots.iter().map(|&(z, slope)| norm_log_pdf(z) - slope.ln()).sum(),
        None => f64::NEG_INFINITY,
    }
}

pub fn gk_sampler(n: usize, p: &GkParams, rng: &mut Rng) -> Result<GkSample> {
    p.check()?;
    if n == 0 {
        return Err(Error::Contract("g-and-k sample size must be positive".into()));
    }
    let x = (0..n)
        .map(|_| {
            let u: f64 = loop {
                let u = rng.gen::<f64>();
                if u > 0.0 {
                    break u;
                }
            };
            p.quantile_z(norm_quantile(u))
        })
        .collect();
    GkSample::new(x)
}

#[derive(Debug, Clone)]
pub struct GkProblem {
    truth: GkParams,
    theta: [f64; 4],
    pub starts: usize,
    scheme: CodingScheme,
}

impl Default for GkProblem {
    fn default() -> Self {
        let [a, b, g, k] = TRUE_THETA;
        Self::with_truth(GkParams::new(a, b, g, k, DEFAULT_C))
    }
}

impl GkProblem {
    pub fn with_truth(truth: GkParams) -> Self {
        Self {
            truth,
            theta: truth.theta(),
            starts: 10,
            scheme: CodingScheme::new(vec![
                crate::coding::Gene::new(-10.0, 10.0, GENE_BITS).expect("static"),
                crate::coding::Gene::new(0.0, 10.0, GENE_BITS).expect("static"),
                crate::coding::Gene::new(-10.0, 10.0, GENE_BITS).expect("static"),
                crate::coding::Gene::new(-0.5, 10.0, GENE_BITS).expect("static"),
            ])
            .expect("static coding"),
        }
    }

    pub fn truth(&self) -> &GkParams {
        &self.truth
    }

    pub fn scheme(&self) -> &CodingScheme {
        &self.scheme
    }

    fn params(&self, theta: &[f64]) -> GkParams {
        GkParams::from_theta(theta, self.truth.c)
    }

    /// Starting point from sample quantiles: median, scaled inter-quartile
    /// range, octile skewness and a mild kurtosis.
    fn quantile_start(s: &GkSample) -> Vec<f64> {
        let xs = s.sorted();
        let q = |u: f64| xs[((xs.len() - 1) as f64 * u).round() as usize];
        let mut copy = xs.to_vec();
        let a = median(&mut copy);
        let b = ((q(0.75) - q(0.25)) / 1.349).max(1e-3);
        let spread = q(0.875) - q(0.125);
        let skew = if spread > 0.0 { (q(0.875) + q(0.125) - 2.0 * a) / spread } else { 0.0 };
        vec![a, b, (5.0 * skew).clamp(-5.0, 5.0), 0.2]
    }
}

impl Problem for GkProblem {
    type Sample = GkSample;

    fn kind(&self) -> ProblemKind {
        ProblemKind::Gk
    }

    fn param_names(&self) -> Vec<String> {
        vec!["A".into(), "B".into(), "g".into(), "k".into()]
    }

    fn true_params(&self) -> &[f64] {
        &self.theta
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<GkSample> {
        gk_sampler(n, &self.truth, rng)
    }

    fn sample_size(&self, s: &GkSample) -> usize {
        s.len()
    }

    fn objective(&self, theta: &[f64], s: &GkSample) -> f64 {
        gk_loglik(&self.params(theta), s) / s.len() as f64
    }

    fn chromosome_len(&self) -> usize {
        self.scheme.total_bits()
    }

    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        self.scheme.decode(bits).expect("chromosome length fixed by the engine")
    }

    /// Rejects the coding-box boundary values `B = 0` and `k = -0.5`.
    fn is_admissible(&self, theta: &[f64]) -> bool {
        self.params(theta).is_admissible()
    }

    fn reference_estimate(&self, s: &GkSample, rng: &mut Rng) -> Result<Estimate> {
        let n = s.len() as f64;
        let genes = self.scheme.genes();
        // Confined to the coding box: the likelihood flattens as |g| grows
        // and unconstrained searches can run off along g.
        let inside = |t: &[f64]| genes.iter().zip(t).all(|(g, &v)| v >= g.lower && v <= g.upper);
        let f = |t: &[f64]| {
            if !inside(t) {
                return f64::INFINITY;
            }
            let ll = gk_loglik(&self.params(t), s);
            if ll.is_finite() {
                -ll / n
            } else {
                f64::INFINITY
            }
        };
        let coarse = NelderMeadOptions { max_evals: 800, ftol: 1e-7, xtol: 1e-5 };
        let mut best: Option<Minimum> = None;
        for start in 0..self.starts.max(1) {
            let x0: Vec<f64> = if start == 0 {
                Self::quantile_start(s)
                    .iter()
                    .zip(genes)
                    .map(|(&v, g)| {
                        let w = 0.01 * (g.upper - g.lower);
                        v.clamp(g.lower + w, g.upper - w)
                    })
                    .collect()
            } else {
                genes
                    .iter()
                    .map(|g| {
                        let w = g.upper - g.lower;
                        rng.gen_range(g.lower + 0.01 * w..g.upper - 0.01 * w)
                    })
                    .collect()
            };
            let steps: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(1.0)).collect();
            let m = nelder_mead(f, &x0, &steps, &coarse);
            if m.value.is_finite() && best.as_ref().map_or(true, |b| m.value < b.value) {
                best = Some(m);
            }
        }
        let best = best.ok_or_else(|| Error::Estimator("no start reached a finite likelihood".into()))?;
        let steps: Vec<f64> = best.x.iter().map(|v| 0.02 * v.abs().max(0.5)).collect();
        let fine = NelderMeadOptions { max_evals: 4000, ftol: 1e-12, xtol: 1e-8 };
        let polished = nelder_mead(f, &best.x, &steps, &fine);
        let best = if polished.value <= best.value { polished } else { best };
        Ok(Estimate {
            objective: -best.value,
            diagnostic: (!best.converged).then(|| format!("simplex stopped after {} evaluations", best.evals)),
            converged: best.converged,
            theta: best.x,
        })
    }

    fn grid_reference(&self, theta_hat: &[f64], s: &GkSample) -> Vec<f64> {
        let genes = self.scheme.genes();
        let mut codes: Vec<u64> = genes.iter().zip(theta_hat).map(|(g, &x)| g.nearest_code(x)).collect();
        // Boundary codes are inadmissible.
        codes[1] = codes[1].max(1);
        codes[3] = codes[3].max(1);
        let value = |c: &[u64]| {
            let theta: Vec<f64> = genes.iter().zip(c).map(|(g, &t)| g.value_of(t)).collect();
            self.objective(&theta, s)
        };
        polish_codes(genes, &mut codes, &[true; 4], value);
        genes.iter().zip(&codes).map(|(g, &t)| g.value_of(t)).collect()
    }
}
