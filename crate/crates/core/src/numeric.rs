//! Small numerical kernels: bracketed root finding, Nelder-Mead, dense
//! least squares and the standard normal helpers.

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), about 1e-16
/// relative accuracy.
pub fn norm_quantile(u: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    if !(u > 0.0 && u < 1.0) {
        return if u == 0.0 {
            f64::NEG_INFINITY
        } else if u == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { u } else { 1.0 - u };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
pub fn norm_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    /// Stop once `|f(x)| <= ftol`.
    pub ftol: f64,
    /// Stop once the bracket is narrower than this.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { ftol: 1e-9, xtol: 1e-14, max_iter: 200 }
    }
}

/// Brent's method (bisection / secant / inverse quadratic interpolation) on
/// a bracket `[lo, hi]` with `f(lo)` and `f(hi)` of opposite sign.
pub fn brent_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, opts: RootOptions) -> Result<f64> {
    let fa0 = f(lo);
    let fb0 = f(hi);
    brent_root_with(&mut f, lo, hi, fa0, fb0, opts)
}

/// As [`brent_root`] with the endpoint values already known.
pub fn brent_root_with<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    flo: f64,
    fhi: f64,
    opts: RootOptions,
) -> Result<f64> {
    let (mut a, mut b, mut fa, mut fb) = (lo, hi, flo, fhi);
    if fa.is_nan() || fb.is_nan() || fa * fb > 0.0 {
        return Err(Error::NotBracketed { lo, hi });
    }
    if fa.abs() <= opts.ftol {
        return Ok(a);
    }
    if fb.abs() <= opts.ftol {
        return Ok(b);
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..opts.max_iter {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.xtol;
        let xm = 0.5 * (c - b);
        if fb.abs() <= opts.ftol || xm.abs() <= tol1 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::Domain(format!("objective is NaN at {b}")));
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Convergence on the spread of simplex values.
    pub ftol: f64,
    /// Convergence on the simplex diameter.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 4000, ftol: 1e-10, xtol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead minimisation from an axis-aligned simplex
/// `x0, x0 + step_i e_i`. Non-finite values are treated as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if best.is_finite() && worst.is_finite() {
            (worst - best).abs()
        } else {
            f64::INFINITY
        };
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= opts.ftol * (1.0 + best.abs()) && diameter <= opts.xtol {
            converged = true;
            break;
        }
        if diameter == 0.0 {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for (xi, bi) in vertex.0.iter_mut().zip(&x_best) {
                        *xi = bi + 0.5 * (*xi - bi);
                    }
                    vertex.1 = eval(&vertex.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals, converged }
}

/// Solves the symmetric positive definite system `a x = b` (row-major
/// `n x n`) by Cholesky. Returns `None` when `a` is not positive definite.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Ordinary least squares of `y` on the columns of `design` (each of
/// length `y.len()`).
pub fn least_squares(design: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
    let p = design.len();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = design[i].iter().zip(design[j]).map(|(a, b)| a * b).sum();
            xtx[i * p + j] = s;
            xtx[j * p + i] = s;
        }
        xty[i] = design[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    solve_spd(&xtx, &xty)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, RootOptions { ftol: 1e-14, ..Default::default() }).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        assert!(matches!(
            brent_root(|x| x * x + 1.0, -1.0, 1.0, RootOptions::default()),
            Err(Error::NotBracketed { .. })
        ));
    }

    #[test]
    fn brent_endpoint_root() {
        assert_eq!(brent_root(|x| x, 0.0, 1.0, RootOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let m = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            &NelderMeadOptions { max_evals: 10_000, ..Default::default() },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_tolerates_infinite_region() {
        let m = nelder_mead(
            |x| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 1.0).powi(2) + x[1] * x[1] },
            &[0.2, 0.3],
            &[0.5, 0.5],
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-4 && m.x[1].abs() < 1e-4);
    }

    #[test]
    fn least_squares_exact() {
        let x1 = [1.0, 2.0, 3.0, 4.0];
        let ones = [1.0; 4];
        let y: Vec<f64> = x1.iter().map(|x| 2.0 - 0.5 * x).collect();
        let b = least_squares(&[&ones, &x1], &y).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 0.5).abs() < 1e-12);
        assert!(least_squares(&[&ones, &ones], &y).is_none());
    }

    #[test]
    fn normal_helpers() {
        assert!(norm_quantile(0.5).abs() < 1e-15);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((norm_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
        for i in 1..2000 {
            let u = i as f64 / 2000.0;
            let back = norm_cdf(norm_quantile(u));
            assert!(((back - u) / u.min(1.0 - u)).abs() < 1e-13, "u={u}");
        }
        assert!((norm_log_pdf(0.0) + LN_SQRT_2PI).abs() < 1e-16);
    }
}
