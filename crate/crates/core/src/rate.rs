//! Convergence-rate fits `sigma*_ii(g) = w_i * V(g)^(-a)`.
//!
//! Each parameter gets a no-intercept least-squares fit on the regressor
//! `V^(-a)` with `w` clamped at zero. One exponent is shared across the
//! parameters of a problem and picked from a fixed candidate set by mean
//! R². R² is centred on the curve mean; the uncentred value is reported
//! alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variance::GaVarianceCurves;

pub const CANDIDATE_EXPONENTS: [f64; 4] = [1.0 / 3.0, 0.5, 1.0, 2.0];
pub const DEFAULT_BURN_IN: usize = 5;
/// Mean-R² gap below which two exponents count as tied.
pub const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFit {
    pub w: f64,
    pub r2: f64,
    pub r2_uncentered: f64,
}

impl ParamFit {
    pub fn is_poor(&self) -> bool {
        !(self.r2 > 0.0)
    }
}

/// Fits one curve against `evaluations^(-a)`.
pub fn fit_curve(curve: &[f64], evaluations: &[u64], a: f64) -> Result<ParamFit> {
    if curve.len() != evaluations.len() {
        return Err(Error::Contract("curve and evaluation counts differ in length".into()));
    }
    if curve.len() < 2 {
        return Err(Error::Fit("need at least two points".into()));
    }
    if evaluations.iter().any(|&v| v == 0) {
        return Err(Error::Fit("evaluation counts must be positive".into()));
    }
    let r: Vec<f64> = evaluations.iter().map(|&v| (v as f64).powf(-a)).collect();
    let r_mean = r.iter().sum::<f64>() / r.len() as f64;
    if r.iter().all(|&x| (x - r_mean).abs() <= 1e-15 * r_mean.abs()) {
        return Err(Error::Fit("regressor has zero variance".into()));
    }
    let srr: f64 = r.iter().map(|x| x * x).sum();
    let ssr: f64 = curve.iter().zip(&r).map(|(s, x)| s * x).sum();
    let w = (ssr / srr).max(0.0);

    let ss_res: f64 = curve.iter().zip(&r).map(|(s, x)| (s - w * x).powi(2)).sum();
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let ss_tot: f64 = curve.iter().map(|s| (s - mean).powi(2)).sum();
    let ss_raw: f64 = curve.iter().map(|s| s * s).sum();
    Ok(ParamFit { w, r2: r_squared(ss_res, ss_tot), r2_uncentered: r_squared(ss_res, ss_raw) })
}

fn r_squared(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Per-parameter fits at exponent `a`, skipping the first `burn_in`
/// generations.
pub fn fit_rate(curves: &GaVarianceCurves, a: f64, burn_in: usize) -> Result<Vec<ParamFit>> {
    if curves.n_params() == 0 {
        return Err(Error::Contract("no curves to fit".into()));
    }
    if burn_in >= curves.len() {
        return Err(Error::Fit(format!("burn-in {burn_in} leaves no points to fit")));
    }
    let v = &curves.evaluations[burn_in..];
    curves.per_param.iter().map(|c| fit_curve(&c[burn_in..], v, a)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub a: f64,
    pub fits: Vec<ParamFit>,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub a: f64,
    pub coefficients: Vec<f64>,
    pub r2: Vec<f64>,
    pub r2_uncentered: Vec<f64>,
    /// `sum_i w_i`.
    pub trace_wga: f64,
    pub candidates: Vec<CandidateFit>,
    pub burn_in: usize,
    /// Set when the best mean R² was tied with another exponent.
    pub tied: bool,
}

pub fn select_rate(curves: &GaVarianceCurves, burn_in: usize) -> Result<RateFit> {
    select_rate_from(curves, &CANDIDATE_EXPONENTS, burn_in)
}

/// Picks the exponent with the largest mean R²; ties within
/// [`TIE_TOLERANCE`] go to the smaller exponent.
pub fn select_rate_from(curves: &GaVarianceCurves, exponents: &[f64], burn_in: usize) -> Result<RateFit> {
    if exponents.is_empty() {
        return Err(Error::Config("empty exponent candidate set".into()));
    }
    let mut sorted = exponents.to_vec();
    sorted.sort_by(f64::total_cmp);
    let candidates: Vec<CandidateFit> = sorted
        .iter()
        .map(|&a| {
            let fits = fit_rate(curves, a, burn_in)?;
            let mean_r2 = fits.iter().map(|f| f.r2).sum::<f64>() / fits.len() as f64;
            Ok(CandidateFit { a, fits, mean_r2 })
        })
        .collect::<Result<_>>()?;

    let best_value = candidates.iter().map(|c| c.mean_r2).fold(f64::NEG_INFINITY, f64::max);
    let near = |c: &&CandidateFit| {
        c.mean_r2 == best_value || (best_value - c.mean_r2).abs() <= TIE_TOLERANCE
    };
    let best = candidates.iter().find(near).unwrap_or(&candidates[0]);
    let tied = candidates.iter().filter(near).count() > 1;
    Ok(RateFit {
        a: best.a,
        coefficients: best.fits.iter().map(|f| f.w).collect(),
        r2: best.fits.iter().map(|f| f.r2).collect(),
        r2_uncentered: best.fits.iter().map(|f| f.r2_uncentered).collect(),
        trace_wga: best.fits.iter().map(|f| f.w).sum(),
        candidates: candidates.clone(),
        burn_in,
        tied,
    })
}

/// Fitted curve `w * V^(-a)` at the given evaluation counts.
pub fn fitted_curve(w: f64, a: f64, evaluations: &[u64]) -> Vec<f64> {
    evaluations.iter().map(|&v| w * (v as f64).powf(-a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curves(per_param: Vec<Vec<f64>>, n: usize) -> GaVarianceCurves {
        let g = per_param[0].len();
        GaVarianceCurves {
            generations: (1..=g).collect(),
            evaluations: (1..=g).map(|g| (n * (g + 1)) as u64).collect(),
            per_param,
            datasets: 1,
            runs: 2,
        }
    }

    fn evals(g: usize) -> Vec<u64> {
        (1..=g).map(|g| 50 * (g as u64 + 1)).collect()
    }

    #[test]
    fn exact_inverse_curve() {
        let v = evals(100);
        let c: Vec<f64> = v.iter().map(|&v| 2.0 / v as f64).collect();
        let f = fit_curve(&c, &v, 1.0).unwrap();
        assert!((f.w - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((f.r2_uncentered - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_curve_is_poor() {
        let v = evals(50);
        let f = fit_curve(&[0.3; 50], &v, 1.0).unwrap();
        assert!(f.r2 <= 0.0);
        assert!(f.is_poor());
    }

    #[test]
    fn zero_regressor_variance_is_error() {
        assert!(matches!(fit_curve(&[1.0, 2.0], &[10, 10], 1.0), Err(Error::Fit(_))));
        assert!(fit_curve(&[1.0], &[10], 1.0).is_err());
        assert!(fit_curve(&[1.0, 2.0], &[0, 10], 1.0).is_err());
    }

    #[test]
    fn negative_slope_is_clamped() {
        let v = evals(20);
        let c: Vec<f64> = v.iter().map(|&v| -1.0 / v as f64).collect();
        assert_eq!(fit_curve(&c, &v, 1.0).unwrap().w, 0.0);
    }

    #[test]
    fn hand_computed_fit() {
        // r = (1/2, 1/4), y = (1, 1): w = (1/2 + 1/4) / (1/4 + 1/16) = 2.4.
        let f = fit_curve(&[1.0, 1.0], &[2, 4], 1.0).unwrap();
        assert!((f.w - 2.4).abs() < 1e-12);
        // Residuals (-0.2, 0.4), raw sum of squares 2.
        assert!((f.r2_uncentered - (1.0 - 0.2 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn burn_in_is_skipped() {
        let v = evals(30);
        let mut c: Vec<f64> = v.iter().map(|&v| 3.0 / v as f64).collect();
        c[0] = 100.0;
        c[4] = 100.0;
        let cv = curves(vec![c], 50);
        let fit = fit_rate(&cv, 1.0, 5).unwrap();
        assert!((fit[0].w - 3.0).abs() < 1e-12);
        assert!(fit_rate(&cv, 1.0, 30).is_err());
    }

    #[test]
    fn recovers_known_exponent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (truth, _) in CANDIDATE_EXPONENTS.iter().zip(0..) {
            let mut hits = 0;
            for _ in 0..100 {
                let v = evals(700);
                let params: Vec<Vec<f64>> = (0..3)
                    .map(|_| {
                        let c: f64 = rng.gen_range(0.5..20.0);
                        v.iter()
                            .map(|&v| {
                                let s = c * (v as f64).powf(-truth);
                                s * (1.0 + 0.1 * rng.gen_range(-1.0..1.0))
                            })
                            .collect()
                    })
                    .collect();
                let fit = select_rate(&curves(params, 50), DEFAULT_BURN_IN).unwrap();
                hits += (fit.a == *truth) as usize;
            }
            assert!(hits >= 95, "a = {truth}: {hits}/100");
        }
    }

    #[test]
    fn ties_go_to_smaller_exponent() {
        // Constant zero curves fit perfectly at every exponent.
        let fit = select_rate(&curves(vec![vec![0.0; 20]], 50), 0).unwrap();
        assert!(fit.tied);
        assert_eq!(fit.a, 1.0 / 3.0);
        assert_eq!(fit.trace_wga, 0.0);
    }

    #[test]
    fn trace_sums_coefficients() {
        let v = evals(40);
        let a: Vec<f64> = v.iter().map(|&v| 2.0 / v as f64).collect();
        let b: Vec<f64> = v.iter().map(|&v| 5.0 / v as f64).collect();
        let fit = select_rate(&curves(vec![a, b], 50), 0).unwrap();
        assert_eq!(fit.a, 1.0);
        assert!(!fit.tied);
        assert!((fit.trace_wga - 7.0).abs() < 1e-10);
        assert_eq!(fitted_curve(2.0, 1.0, &[4]), vec![0.5]);
    }

    proptest! {
        #[test]
        fn scale_equivariance(scale in 1e-3f64..1e3, c in 0.1f64..10.0, a_idx in 0usize..4, noise in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(noise);
            let v = evals(60);
            let a = CANDIDATE_EXPONENTS[a_idx];
            let base: Vec<f64> = v.iter().map(|&v| c * (v as f64).powf(-a) * (1.0 + 0.2 * rng.gen_range(-1.0..1.0))).collect();
            let scaled: Vec<f64> = base.iter().map(|x| x * scale).collect();
            let f0 = fit_curve(&base, &v, a).unwrap();
            let f1 = fit_curve(&scaled, &v, a).unwrap();
            prop_assert!((f1.w - scale * f0.w).abs() <= 1e-9 * f1.w.abs().max(1e-300));
            prop_assert!((f1.r2 - f0.r2).abs() < 1e-9);
            let s0 = select_rate(&curves(vec![base], 50), 0).unwrap();
            let s1 = select_rate(&curves(vec![scaled], 50), 0).unwrap();
            prop_assert_eq!(s0.a, s1.a);
        }
    }
}
