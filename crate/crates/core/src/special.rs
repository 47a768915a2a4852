//! Normal and Student-t distribution functions.
//!
//! `erfc` comes from `libm` and `ln_gamma` from `statrs`; everything built on top of them
//! (quantiles, the regularized incomplete beta, the t distribution) lives here
//! so the accuracy targets can be controlled directly.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use statrs::function::gamma::ln_gamma;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep full
/// relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of [`normal_cdf`] by safeguarded Newton iteration (bisection
/// fallback), converged to a few ulps in `x`.
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut x = 0.0;
    for _ in 0..200 {
        let f = normal_cdf(x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = normal_pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) || hi - lo < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

/// Regularized incomplete beta `I_x(a, b)` via the modified Lentz continued
/// fraction.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "inc_beta requires positive shape parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..200_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Student-t density with `df` degrees of freedom.
pub fn t_pdf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_pdf(x);
    }
    let ln_c = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln();
    (ln_c - 0.5 * (df + 1.0) * (1.0 + x * x / df).ln()).exp()
}

/// Student-t CDF.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return normal_cdf(x);
    }
    if x == 0.0 {
        return 0.5;
    }
    let tail = 0.5 * inc_beta(0.5 * df, 0.5, df / (df + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| >= |x|)`.
pub fn t_two_sided_p(x: f64, df: f64) -> f64 {
    if df.is_infinite() {
        return (2.0 * normal_cdf(-x.abs())).min(1.0);
    }
    if x == 0.0 {
        return 1.0;
    }
    inc_beta(0.5 * df, 0.5, df / (df + x * x)).clamp(0.0, 1.0)
}

/// Student-t quantile by safeguarded Newton iteration on [`t_cdf`].
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if df.is_infinite() {
        return normal_quantile(p);
    }
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while t_cdf(hi, df) < p {
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    let mut x = normal_quantile(p).clamp(lo, hi);
    for _ in 0..300 {
        let f = t_cdf(x, df) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = t_pdf(x, df);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-13 * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_cdf(-3.0), 0.0013498980316300946, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_quantile(1e-10), -6.361340902404056, epsilon = 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-8, 0.001, 0.1, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-14);
        }
    }

    #[test]
    fn t_table_values() {
        assert_abs_diff_eq!(t_quantile(0.975, 10.0), 2.228138851986274, epsilon = 1e-10);
        assert_abs_diff_eq!(t_quantile(0.975, 1.0), 12.706204736174698, epsilon = 1e-8);
        assert_abs_diff_eq!(t_quantile(0.95, 3.0), 2.3533634348018264, epsilon = 1e-10);
        assert_abs_diff_eq!(t_quantile(0.025, 47.0), -2.011740513729764, epsilon = 1e-10);
        assert_abs_diff_eq!(t_quantile(0.975, 1e6), 1.959963984540054, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.975, f64::INFINITY), 1.959963984540054, epsilon = 1e-12);
    }

    #[test]
    fn t_cdf_symmetry_and_p_values() {
        for &x in &[0.1, 1.0, 2.5, 7.0] {
            assert_abs_diff_eq!(t_cdf(x, 6.0) + t_cdf(-x, 6.0), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(t_two_sided_p(x, 6.0), 2.0 * t_cdf(-x, 6.0), epsilon = 1e-14);
        }
        assert_eq!(t_two_sided_p(0.0, 4.0), 1.0);
    }

    #[test]
    fn inc_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        assert_abs_diff_eq!(inc_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(inc_beta(2.5, 1.0, 0.4), 0.4_f64.powf(2.5), epsilon = 1e-14);
        assert_abs_diff_eq!(inc_beta(3.0, 4.0, 0.2) + inc_beta(4.0, 3.0, 0.8), 1.0, epsilon = 1e-14);
    }
}
