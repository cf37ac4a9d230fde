//! Budget-constrained choice of sample size and GA effort.
//!
//! Minimises `tr(W_S)/f(n) + tr(W_GA)/h(V)` subject to `C = n S + V n T`,
//! with `f(n) = n^b` and `h(V) = V^a`. The linear case `a = b = 1` has a
//! closed form; anything else goes through an integer search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Cost per observation.
    pub s: f64,
    /// Cost per observation per fitness evaluation.
    pub t: f64,
    /// Total budget.
    pub c: f64,
}

impl CostModel {
    pub fn new(s: f64, t: f64, c: f64) -> Result<Self> {
        let m = Self { s, t, c };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("S", self.s), ("T", self.t), ("C", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("cost {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Effort left for the GA once `n` observations are paid for.
    pub fn effort(&self, n: f64) -> f64 {
        (self.c - n * self.s) / (n * self.t)
    }

    /// Largest sample size with a positive remaining budget, `floor(C/S) - 1`.
    pub fn max_n(&self) -> Option<usize> {
        let q = (self.c / self.s).floor();
        (q >= 2.0).then(|| q as usize - 1)
    }

    /// Relative gap in `C = n S + V n T`.
    pub fn constraint_residual(&self, n: f64, v: f64) -> f64 {
        ((n * self.s + v * n * self.t) - self.c).abs() / self.c
    }
}

/// Exponents of `f(n) = n^b` and `h(V) = V^a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sample: f64,
    pub effort: f64,
}

impl Rates {
    pub const LINEAR: Rates = Rates { sample: 1.0, effort: 1.0 };

    pub fn with_effort(a: f64) -> Self {
        Rates { sample: 1.0, effort: a }
    }

    pub fn is_linear(&self) -> bool {
        self.sample == 1.0 && self.effort == 1.0
    }
}

pub fn total_variability(n: f64, v: f64, trace_ws: f64, trace_wga: f64, rates: Rates) -> f64 {
    trace_ws / n.powf(rates.sample) + trace_wga / v.powf(rates.effort)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Numeric,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegerPoint {
    pub n: usize,
    pub v: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSolution {
    /// Real-valued optimum; equals `n_opt` for the numeric solver.
    pub n_real: f64,
    pub v_real: f64,
    pub objective_real: f64,
    pub floor: Option<IntegerPoint>,
    pub ceil: Option<IntegerPoint>,
    pub n_opt: usize,
    pub v_opt: f64,
    pub objective: f64,
    pub method: Method,
    /// Why the closed form was abandoned, if it was.
    pub fallback: Option<String>,
}

impl TradeoffSolution {
    /// Generations for a population of `population_size`, `round(V/N - 1)`.
    pub fn generations(&self, population_size: usize) -> usize {
        (self.v_opt / population_size as f64 - 1.0).round().max(0.0) as usize
    }
}

fn check_traces(trace_ws: f64, trace_wga: f64) -> Result<()> {
    if !(trace_ws.is_finite() && trace_ws >= 0.0 && trace_wga.is_finite() && trace_wga >= 0.0) {
        return Err(Error::Config("variance traces must be finite and nonnegative".into()));
    }
    Ok(())
}

fn point(cost: &CostModel, n: usize, tw: f64, tg: f64, rates: Rates) -> IntegerPoint {
    let v = cost.effort(n as f64);
    IntegerPoint { n, v, objective: total_variability(n as f64, v, tw, tg, rates) }
}

/// Positive root of the first-order condition with the budget substituted,
/// then `V = (C - n S) / (n T)`. Falls back to [`solve_numeric`] when the
/// denominator vanishes or the root is outside `[n_min, floor(C/S) - 1]`.
pub fn solve_closed_form(cost: &CostModel, trace_ws: f64, trace_wga: f64, n_min: usize) -> Result<TradeoffSolution> {
    cost.validate()?;
    check_traces(trace_ws, trace_wga)?;
    let CostModel { s, t, c } = *cost;
    let den = c * t * trace_wga - s * s * trace_ws;
    let scale = (c * t * trace_wga).abs().max(s * s * trace_ws);
    let n_tilde = (-s * c * trace_ws + c * (c * t * trace_ws * trace_wga).sqrt()) / den;

    let n_max = cost.max_n();
    let reason = if scale == 0.0 || den.abs() <= 1e-12 * scale {
        Some("denominator numerically zero".to_string())
    } else if !(n_tilde.is_finite() && n_tilde > 0.0) {
        Some(format!("non-positive root {n_tilde}"))
    } else if n_max.map_or(true, |m| n_tilde > m as f64 + 1.0 || n_tilde >= c / s) {
        Some(format!("root {n_tilde} exhausts the budget"))
    } else if n_tilde < n_min as f64 {
        Some(format!("root {n_tilde} below n_min = {n_min}"))
    } else {
        None
    };
    if let Some(why) = reason {
        let mut sol = solve_numeric(cost, trace_ws, trace_wga, Rates::LINEAR, n_min)?;
        sol.fallback = Some(why);
        return Ok(sol);
    }
    let n_max = n_max.expect("checked above");

    let v_tilde = cost.effort(n_tilde);
    let candidates = |k: f64| -> Option<IntegerPoint> {
        let k = k as usize;
        (k >= n_min.max(1) && k <= n_max).then(|| point(cost, k, trace_ws, trace_wga, Rates::LINEAR))
    };
    let floor = candidates(n_tilde.floor());
    let ceil = candidates(n_tilde.ceil());
    let best = match (floor, ceil) {
        (Some(f), Some(c)) => if c.objective < f.objective { c } else { f },
        (Some(f), None) => f,
        (None, Some(c)) => c,
        (None, None) => point(cost, n_min.max(1).min(n_max), trace_ws, trace_wga, Rates::LINEAR),
    };
    Ok(TradeoffSolution {
        n_real: n_tilde,
        v_real: v_tilde,
        objective_real: total_variability(n_tilde, v_tilde, trace_ws, trace_wga, Rates::LINEAR),
        floor,
        ceil,
        n_opt: best.n,
        v_opt: best.v,
        objective: best.objective,
        method: Method::ClosedForm,
        fallback: None,
    })
}

const EXHAUSTIVE_LIMIT: usize = 4096;
const COARSE_POINTS: usize = 1024;

/// Integer minimisation over `[n_min, floor(C/S) - 1]`: a coarse scan
/// followed by golden-section refinement inside the best bracket.
pub fn solve_numeric(cost: &CostModel, trace_ws: f64, trace_wga: f64, rates: Rates, n_min: usize) -> Result<TradeoffSolution> {
    cost.validate()?;
    check_traces(trace_ws, trace_wga)?;
    if !(rates.sample > 0.0 && rates.effort > 0.0) {
        return Err(Error::Config("rate exponents must be positive".into()));
    }
    let lo = n_min.max(1);
    let hi = match cost.max_n() {
        Some(m) if m >= lo => m,
        _ => {
            return Err(Error::Infeasible(format!(
                "no sample size in [{lo}, floor(C/S) - 1] for C = {}, S = {}",
                cost.c, cost.s
            )))
        }
    };
    let f = |n: usize| point(cost, n, trace_ws, trace_wga, rates);
    let better = |a: IntegerPoint, b: IntegerPoint| if b.objective < a.objective { b } else { a };

    let best = if hi - lo < EXHAUSTIVE_LIMIT {
        (lo..=hi).map(f).reduce(better).expect("nonempty range")
    } else {
        let span = (hi - lo) as f64;
        let mut grid: Vec<usize> = (0..=COARSE_POINTS)
            .map(|i| lo + (span * i as f64 / COARSE_POINTS as f64).round() as usize)
            .collect();
        grid.dedup();
        let values: Vec<IntegerPoint> = grid.iter().map(|&n| f(n)).collect();
        let i = (0..values.len())
            .reduce(|a, b| if values[b].objective < values[a].objective { b } else { a })
            .expect("nonempty grid");
        let mut a = grid[i.saturating_sub(1)];
        let mut b = grid[(i + 1).min(grid.len() - 1)];
        let shrink = (3.0 - 5f64.sqrt()) / 2.0;
        while b - a > 4 {
            let d = ((b - a) as f64 * shrink).round() as usize;
            let (x1, x2) = (a + d, b - d);
            if f(x1).objective <= f(x2).objective {
                b = x2;
            } else {
                a = x1;
            }
        }
        (a..=b).map(f).chain(std::iter::once(values[i])).reduce(better).expect("nonempty bracket")
    };
    Ok(TradeoffSolution {
        n_real: best.n as f64,
        v_real: best.v,
        objective_real: best.objective,
        floor: Some(best),
        ceil: Some(best),
        n_opt: best.n,
        v_opt: best.v,
        objective: best.objective,
        method: Method::Numeric,
        fallback: None,
    })
}

/// Solver dispatch: closed form for linear rates, numeric otherwise.
pub fn solve(cost: &CostModel, trace_ws: f64, trace_wga: f64, rates: Rates, n_min: usize) -> Result<TradeoffSolution> {
    if rates.is_linear() {
        solve_closed_form(cost, trace_ws, trace_wga, n_min)
    } else {
        solve_numeric(cost, trace_ws, trace_wga, rates, n_min)
    }
}

/// Fitted variance components of one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFit {
    pub problem: String,
    pub trace_ws: f64,
    pub trace_wga: f64,
    /// Shared GA rate exponent.
    pub a: f64,
    pub n_min: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub problem: String,
    pub s: f64,
    pub t: f64,
    pub c: f64,
    pub n_real: f64,
    pub n_opt: Option<usize>,
    pub v_opt: Option<f64>,
    pub objective: Option<f64>,
    pub method: Option<Method>,
    pub error: Option<String>,
}

fn surface_row(fit: &ProblemFit, s: f64, t: f64, c: f64) -> SurfaceRow {
    let result = CostModel::new(s, t, c)
        .and_then(|cost| solve(&cost, fit.trace_ws, fit.trace_wga, Rates::with_effort(fit.a), fit.n_min));
    match result {
        Ok(sol) => SurfaceRow {
            problem: fit.problem.clone(),
            s,
            t,
            c,
            n_real: sol.n_real,
            n_opt: Some(sol.n_opt),
            v_opt: Some(sol.v_opt),
            objective: Some(sol.objective),
            method: Some(sol.method),
            error: None,
        },
        Err(e) => SurfaceRow {
            problem: fit.problem.clone(),
            s,
            t,
            c,
            n_real: f64::NAN,
            n_opt: None,
            v_opt: None,
            objective: None,
            method: None,
            error: Some(e.to_string()),
        },
    }
}

/// Optimum on the Cartesian `S x T` grid for each problem. Infeasible
/// cells are recorded in the row rather than aborting the sweep.
pub fn sweep_surface(fits: &[ProblemFit], s_grid: &[f64], t_grid: &[f64], c: f64) -> Result<Vec<SurfaceRow>> {
    if fits.is_empty() || s_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Config("sweep needs problems and nonempty S and T grids".into()));
    }
    let cells: Vec<(usize, f64, f64)> = (0..fits.len())
        .flat_map(|p| s_grid.iter().flat_map(move |&s| t_grid.iter().map(move |&t| (p, s, t))))
        .collect();
    Ok(cells.into_par_iter().map(|(p, s, t)| surface_row(&fits[p], s, t, c)).collect())
}

/// Per-problem optimum along the `S` grid with `T_p = t_base * ratio_p`.
pub fn timed_cost_comparison(fits: &[ProblemFit], t_ratios: &[f64], t_base: f64, s_grid: &[f64], c: f64) -> Result<Vec<SurfaceRow>> {
    if fits.len() != t_ratios.len() {
        return Err(Error::Contract("one T ratio per problem is required".into()));
    }
    if s_grid.is_empty() {
        return Err(Error::Config("empty S grid".into()));
    }
    let cells: Vec<(usize, f64)> =
        s_grid.iter().flat_map(|&s| (0..fits.len()).map(move |p| (p, s))).collect();
    Ok(cells
        .into_par_iter()
        .map(|(p, s)| surface_row(&fits[p], s, t_base * t_ratios[p], c))
        .collect())
}

/// `max - min` of the optimal sample sizes across problems at each `S`, in
/// grid order. Cells with no solution are skipped.
pub fn spread_by_s(rows: &[SurfaceRow], s_grid: &[f64]) -> Vec<f64> {
    s_grid
        .iter()
        .map(|&s| {
            let ns: Vec<f64> = rows.iter().filter(|r| r.s == s).filter_map(|r| r.n_opt).map(|n| n as f64).collect();
            let max = ns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = ns.iter().cloned().fold(f64::INFINITY, f64::min);
            max - min
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(cost: &CostModel, tw: f64, tg: f64, rates: Rates, lo: usize) -> IntegerPoint {
        (lo..=cost.max_n().unwrap())
            .map(|n| point(cost, n, tw, tg, rates))
            .reduce(|a, b| if b.objective < a.objective { b } else { a })
            .unwrap()
    }

    #[test]
    fn total_variability_examples() {
        assert_eq!(total_variability(4.0, 9.0, 2.0, 0.0, Rates::LINEAR), 0.5);
        assert_eq!(total_variability(1.0, 1.0, 2.0, 3.0, Rates::LINEAR), 5.0);
        let v = total_variability(200.0, 70000.0, 5.38, 23.18, Rates::LINEAR);
        assert!((v - (0.0269 + 23.18 / 70000.0)).abs() < 1e-15);
        assert!((v - 0.02723).abs() < 5e-6);
        assert_eq!(total_variability(1.0, 4.0, 0.0, 1.0, Rates::with_effort(0.5)), 0.5);
    }

    #[test]
    fn closed_form_example() {
        let cost = CostModel::new(1.0, 1.0, 1e5).unwrap();
        let sol = solve_closed_form(&cost, 5.38, 23.18, 1).unwrap();
        // Stationarity of a/n + b n T / (C - n S) gives n = C / (S + sqrt(b T C / a)).
        let oracle = 1e5 / (1.0 + (23.18 * 1e5 / 5.38f64).sqrt());
        assert!((sol.n_real - oracle).abs() < 1e-9 * oracle);
        assert!((sol.n_real - 152.1).abs() < 0.05, "{}", sol.n_real);
        assert!((sol.v_real - 656.4).abs() < 0.05, "{}", sol.v_real);
        assert_eq!(sol.method, Method::ClosedForm);
        let b = brute(&cost, 5.38, 23.18, Rates::LINEAR, 1);
        assert_eq!(sol.n_opt, b.n);
        assert!(cost.constraint_residual(sol.n_real, sol.v_real) < 1e-12);
        assert!(cost.constraint_residual(sol.n_opt as f64, sol.v_opt) < 1e-12);
        let sol = solve_closed_form(&cost, 5.38, 23.18, 1).unwrap();
        assert_eq!(sol.floor.unwrap().n, 152);
        assert_eq!(sol.ceil.unwrap().n, 153);
        assert_eq!(sol.generations(50), (656.4f64 / 50.0 - 1.0).round() as usize);
    }

    #[test]
    fn local_optimality() {
        let cost = CostModel::new(0.3, 0.02, 5e4).unwrap();
        let sol = solve_closed_form(&cost, 12.0, 40.0, 1).unwrap();
        let f = |n: f64| total_variability(n, cost.effort(n), 12.0, 40.0, Rates::LINEAR);
        for d in [1e-3, 0.1, 1.0, 10.0] {
            assert!(f(sol.n_real + d) >= sol.objective_real);
            assert!(f(sol.n_real - d) >= sol.objective_real);
        }
    }

    #[test]
    fn pure_sampling_regime_takes_whole_budget() {
        let cost = CostModel::new(1.0, 1.0, 1000.0).unwrap();
        let sol = solve_closed_form(&cost, 5.0, 0.0, 1).unwrap();
        assert!(sol.fallback.is_some());
        assert_eq!(sol.n_opt, 999);
    }

    #[test]
    fn vanishing_sampling_trace_goes_to_n_min() {
        let cost = CostModel::new(1.0, 1.0, 1e5).unwrap();
        let sol = solve_closed_form(&cost, 1e-12, 5.0, 30).unwrap();
        assert_eq!(sol.n_opt, 30);
        assert_eq!(sol.method, Method::Numeric);
        assert!(sol.fallback.is_some());
    }

    #[test]
    fn zero_denominator_falls_back() {
        // C T trWGA = S^2 trWS.
        let cost = CostModel::new(2.0, 1.0, 400.0).unwrap();
        let sol = solve_closed_form(&cost, 10.0, 0.1, 1).unwrap();
        assert_eq!(sol.method, Method::Numeric);
        assert_eq!(sol.n_opt, brute(&cost, 10.0, 0.1, Rates::LINEAR, 1).n);
    }

    #[test]
    fn infeasible_budget() {
        let cost = CostModel::new(1.0, 1.0, 20.0).unwrap();
        assert!(matches!(solve_numeric(&cost, 1.0, 1.0, Rates::LINEAR, 30), Err(Error::Infeasible(_))));
        let cost = CostModel::new(1.0, 1.0, 31.5).unwrap();
        assert_eq!(solve_numeric(&cost, 1.0, 1.0, Rates::LINEAR, 30).unwrap().n_opt, 30);
        assert!(CostModel::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn numeric_matches_brute_force_large_range() {
        let cost = CostModel::new(0.01, 0.5, 1e4).unwrap();
        for rates in [Rates::LINEAR, Rates::with_effort(0.5), Rates::with_effort(2.0), Rates::with_effort(1.0 / 3.0)] {
            let sol = solve_numeric(&cost, 7.0, 90.0, rates, 10).unwrap();
            let b = brute(&cost, 7.0, 90.0, rates, 10);
            assert_eq!(sol.n_opt, b.n, "{rates:?}");
        }
    }

    #[test]
    fn slower_effort_rate_shifts_budget_to_effort() {
        let cost = CostModel::new(1.0, 0.1, 1e5).unwrap();
        let lin = solve(&cost, 12.26, 17.74, Rates::LINEAR, 80).unwrap();
        let sqrt = solve(&cost, 12.26, 17.74, Rates::with_effort(0.5), 80).unwrap();
        assert!(sqrt.n_opt < lin.n_opt);
        assert!(sqrt.v_opt > lin.v_opt);
    }

    #[test]
    fn sweep_monotone_in_costs() {
        let fits = [ProblemFit { problem: "lad".into(), trace_ws: 5.38, trace_wga: 23.18, a: 1.0, n_min: 30 }];
        let s_grid = [0.5, 1.0, 2.0, 4.0];
        let t_grid = [0.01, 0.1, 1.0];
        let rows = sweep_surface(&fits, &s_grid, &t_grid, 1e5).unwrap();
        assert_eq!(rows.len(), 12);
        let n = |s: f64, t: f64| rows.iter().find(|r| r.s == s && r.t == t).unwrap().n_real;
        for &t in &t_grid {
            for w in s_grid.windows(2) {
                assert!(n(w[1], t) < n(w[0], t));
            }
        }
        for &s in &s_grid {
            for w in t_grid.windows(2) {
                assert!(n(s, w[1]) < n(s, w[0]));
            }
        }
        let one = sweep_surface(&fits, &[1.0], &[1.0], 1e5).unwrap();
        let cf = solve_closed_form(&CostModel::new(1.0, 1.0, 1e5).unwrap(), 5.38, 23.18, 30).unwrap();
        assert_eq!(one[0].n_opt, Some(cf.n_opt));
        let bad = sweep_surface(&fits, &[1e6], &[1.0], 1e5).unwrap();
        assert!(bad[0].error.is_some());
    }

    #[test]
    fn comparison_spread() {
        let fits = [
            ProblemFit { problem: "lad".into(), trace_ws: 5.38, trace_wga: 23.18, a: 1.0, n_min: 30 },
            ProblemFit { problem: "ar".into(), trace_ws: 12.26, trace_wga: 17.74, a: 0.5, n_min: 80 },
            ProblemFit { problem: "gk".into(), trace_ws: 103.39, trace_wga: 3897.25, a: 1.0, n_min: 40 },
        ];
        let s_grid = [0.001, 0.01, 0.1, 1.0, 10.0];
        let rows = timed_cost_comparison(&fits, &[0.007, 0.101, 1.0], 1e-3, &s_grid, 1e5).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!(spread_by_s(&rows, &s_grid).len(), 5);
        assert!(timed_cost_comparison(&fits, &[1.0], 1.0, &s_grid, 1e5).is_err());
    }

    proptest! {
        #[test]
        fn closed_form_agrees_with_brute_force(
            s in 0.05f64..5.0, t in 0.001f64..2.0, c in 200.0f64..5000.0,
            tw in 0.1f64..200.0, tg in 0.1f64..5000.0,
        ) {
            let cost = CostModel::new(s, t, c).unwrap();
            prop_assume!(cost.max_n().is_some());
            let sol = solve_closed_form(&cost, tw, tg, 1).unwrap();
            let b = brute(&cost, tw, tg, Rates::LINEAR, 1);
            prop_assert!((sol.n_opt as i64 - b.n as i64).abs() <= 1);
            prop_assert!(cost.constraint_residual(sol.n_real, sol.v_real) < 1e-9);
            prop_assert!(cost.constraint_residual(sol.n_opt as f64, sol.v_opt) < 1e-9);
        }

        #[test]
        fn homogeneous_in_costs(s in 0.05f64..5.0, t in 0.001f64..2.0, c in 1e3f64..1e6, k in 1e-3f64..1e3) {
            let a = CostModel::new(s, t, c).unwrap();
            let b = CostModel::new(k * s, k * t, k * c).unwrap();
            let sa = solve_closed_form(&a, 5.38, 23.18, 1).unwrap();
            let sb = solve_closed_form(&b, 5.38, 23.18, 1).unwrap();
            prop_assert!((sa.n_real - sb.n_real).abs() <= 1e-9 * sa.n_real);
        }
    }
}
