//! Paired comparison statistics with self-contained p-values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
}

/// Everything reported when comparing two models' paired perplexities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonStats {
    pub pearson_r: f64,
    pub p_value_pearson: f64,
    pub t_stat: f64,
    pub p_value_t: f64,
    pub cohens_d: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < min {
        return Err(Error::invalid(format!("need at least {min} paired values, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input"));
    }
    Ok(())
}

/// Product-moment correlation without a p-value; needs two values.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r with a two-sided p-value from the t transform on n-2 dof.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y, 3)?;
    let r = pearson_r(x, y)?;
    let dof = (x.len() - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        student_t_two_sided(t, dof)
    };
    Ok(Correlation { r, p })
}

fn differences(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y, 2)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (d.len() - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("differences"));
    }
    Ok((m, var.sqrt()))
}

/// Paired t statistic on `x - y`, two-sided p on n-1 dof.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTest> {
    let (m, sd) = differences(x, y)?;
    let n = x.len();
    let t = m / (sd / (n as f64).sqrt());
    let dof = n - 1;
    Ok(TTest { t, p: student_t_two_sided(t, dof as f64), dof })
}

/// Paired effect size `|mean(x - y)| / sd(x - y)`.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<f64> {
    let (m, sd) = differences(x, y)?;
    Ok(m.abs() / sd)
}

pub fn compare(x: &[f64], y: &[f64]) -> Result<ComparisonStats> {
    let c = pearson(x, y)?;
    let t = paired_t(x, y)?;
    Ok(ComparisonStats {
        pearson_r: c.r,
        p_value_pearson: c.p,
        t_stat: t.t,
        p_value_t: t.p,
        cohens_d: cohens_d(x, y)?,
    })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (k, c) in C.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
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
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap().r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap().r, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap().r, 0.8, epsilon = 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn paired_examples() {
        let (x, y) = ([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]);
        let t = paired_t(&x, &y).unwrap();
        assert_abs_diff_eq!(t.t, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(paired_t(&y, &x).unwrap().t, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cohens_d(&x, &y).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(cohens_d(&x, &y).unwrap(), cohens_d(&y, &x).unwrap());
        assert!(matches!(paired_t(&x, &x), Err(Error::ZeroVariance("differences"))));
        assert!(cohens_d(&[2.0, 3.0, 4.0], &x).is_err());
    }

    #[test]
    fn special_functions() {
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(reg_inc_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-14);
        // t = 0 has p = 1; one dof is Cauchy: P(|T| > 1) = 0.5.
        assert_abs_diff_eq!(student_t_two_sided(0.0, 5.0), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(student_t_two_sided(1.0, 1.0), 0.5, epsilon = 1e-13);
    }
}
