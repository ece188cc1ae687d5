//! Numerical building blocks: normal helpers, Owen's T, quadrature, simplex
//! minimization and monotone CDF inversion.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{IbugError, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)`, accurate far into the lower tail.
pub fn std_normal_ln_cdf(z: f64) -> f64 {
    if z > -30.0 {
        std_normal_cdf(z).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        -0.5 * z2 - LN_SQRT_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against our own CDF keeps quantile/cdf consistent
    let pdf = std_normal_pdf(z);
    if pdf > 0.0 {
        z - (std_normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

fn gauss_legendre_40() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(40))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Owen's T function `T(h, a) = (1/2π) ∫_0^a exp(-h²(1+x²)/2) / (1+x²) dx`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 || h.is_infinite() {
        return 0.0;
    }
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    let h = h.abs();
    if a > 1.0 {
        let ah = a * h;
        let (ph, pah) = (std_normal_cdf(h), std_normal_cdf(ah));
        return 0.5 * ph + 0.5 * pah - ph * pah - owens_t(ah, 1.0 / a);
    }
    let (nodes, weights) = gauss_legendre_40();
    let half = 0.5 * a;
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let t = half * (x + 1.0);
        let q = 1.0 + t * t;
        sum += w * (-0.5 * h * h * q).exp() / q;
    }
    sum * half / (2.0 * PI)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(IbugError::Numeric(format!("non-finite integration bounds [{a}, {b}]")));
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(IbugError::Numeric("quadrature produced a non-finite value".into()));
    }
    if delta.abs() <= 15.0 * tol || (b - a).abs() <= 4.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE) {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(IbugError::Numeric(format!(
            "quadrature did not converge on [{a}, {b}]"
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Outcome of a simplex minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Nelder-Mead simplex minimization.
///
/// Stops when the spread of objective values across the simplex falls below
/// `rel_tol` relative to their magnitude. Running out of iterations is an
/// error carrying the best vertex.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    step: &[f64],
    max_iter: usize,
    rel_tol: f64,
) -> Result<Minimum> {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    if !values[0].is_finite() {
        return Err(IbugError::Fit {
            message: "objective is not finite at the starting point".into(),
            last_iterate: start.to_vec(),
        });
    }

    for iter in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if (worst - best).abs() <= rel_tol * 0.5 * (best.abs() + worst.abs()) + 1e-300 {
            return Ok(Minimum {
                x: simplex.swap_remove(0),
                value: best,
                iterations: iter,
            });
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(0.5) } else { along(-0.5) };
            let fc = eval(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = eval(&shrunk);
                    simplex[i] = shrunk;
                }
            }
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Err(IbugError::Fit {
        message: format!("simplex search did not converge in {max_iter} iterations"),
        last_iterate: simplex[best].clone(),
    })
}

/// Solves `cdf(x) = p` for a continuous non-decreasing `cdf` by bracketing
/// from `start` in steps of `scale`, then safeguarded Newton/bisection.
pub fn invert_cdf<C, D>(cdf: C, pdf: D, p: f64, start: f64, scale: f64) -> f64
where
    C: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let (mut lo, mut hi) = (start, start);
    let mut step = scale;
    while cdf(lo) > p {
        lo -= step;
        step *= 2.0;
        if !lo.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    step = scale;
    while cdf(hi) < p {
        hi += step;
        step *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let fx = cdf(x) - p;
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) || hi.next_down() <= lo {
            break;
        }
        let d = pdf(x);
        let newton = if d > 0.0 { x - fx / d } else { f64::NAN };
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // settle on whichever bracket end is closer in probability
    if (cdf(lo) - p).abs() <= (cdf(hi) - p).abs() {
        lo
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((std_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((std_normal_ln_cdf(-40.0) - std_normal_ln_cdf_series(-40.0)).abs() < 1e-6);
        assert!((std_normal_ln_cdf(-29.9) - std_normal_cdf(-29.9).ln()).abs() < 1e-9);
    }

    // direct Mills-ratio continued fraction as a cross-check
    fn std_normal_ln_cdf_series(z: f64) -> f64 {
        let x = -z;
        let mut cf = x;
        for k in (1..60).rev() {
            cf = x + k as f64 / cf;
        }
        -0.5 * x * x - LN_SQRT_2PI - cf.ln()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(40);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(78)).sum();
        assert!((s - 2.0 / 79.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn owens_t_reference_values() {
        // values from scipy.special.owens_t
        let cases = [
            (0.5, 0.5, 0.064_488_602_847_503_74),
            (1.0, 2.0, 0.078_468_186_993_084_11),
            (0.0, 1.0, 0.125),
            (-1.5, 0.3, 0.014_577_564_207_785_838),
            (2.0, -10.0, -0.011_375_065_974_089_608),
            (0.1, 50.0, 0.230_086_080_937_209_6),
        ];
        for (h, a, want) in cases {
            let got = owens_t(h, a);
            assert!((got - want).abs() < 1e-14, "T({h}, {a}) = {got}, want {want}");
        }
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let v = integrate(std_normal_pdf, -10.0, 10.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], 2000, 1e-14).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn nelder_mead_reports_last_iterate() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 1.0;
        match nelder_mead(f, &[0.0], &[1.0], 2, 1e-15) {
            Err(IbugError::Fit { last_iterate, .. }) => assert_eq!(last_iterate.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inversion_recovers_normal_quantiles() {
        for p in [1e-9, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let x = invert_cdf(std_normal_cdf, std_normal_pdf, p, 3.0, 0.1);
            assert!((x - std_normal_quantile(p)).abs() < 1e-9, "p = {p}");
        }
    }
}
