//! One-way ANOVA and pooled two-sample t-tests, with p-values from a
//! continued-fraction regularised incomplete beta function.

use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least {needed} groups, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("group {group} has {len} samples; at least 2 are required")]
    TooFewSamples { group: usize, len: usize },
    #[error("non-finite sample in group {0}")]
    NonFinite(usize),
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
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
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
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
    for m in 1..10_000 {
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

/// Regularised incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0).clamp(0.0, 1.0)
}

/// Two-sided Student-t p-value.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Serialises non-finite floats as strings ("inf", "-inf", "nan") since
/// JSON has no representation for them.
pub fn finite_or_string<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    #[serde(serialize_with = "finite_or_string")]
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    /// Set when the within-group variance is zero but group means differ,
    /// so F is infinite.
    pub degenerate: bool,
}

fn check_groups(groups: &[&[f64]], min_groups: usize) -> Result<(), StatsError> {
    if groups.len() < min_groups {
        return Err(StatsError::TooFewGroups {
            needed: min_groups,
            got: groups.len(),
        });
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::TooFewSamples { group: i, len: g.len() });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
    }
    Ok(())
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<AnovaResult, StatsError> {
    check_groups(groups, 2)?;
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let all_equal = means.iter().all(|&m| m == means[0]);
    let ssb = if all_equal {
        0.0
    } else {
        groups
            .iter()
            .zip(&means)
            .map(|(g, &m)| g.len() as f64 * (m - grand).powi(2))
            .sum::<f64>()
    };
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, &m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let (dfb, dfw) = (k - 1, n - k);
    let (f, p, degenerate) = if ssb == 0.0 {
        (0.0, 1.0, false)
    } else if ssw == 0.0 {
        (f64::INFINITY, 0.0, true)
    } else {
        let f = (ssb / dfb as f64) / (ssw / dfw as f64);
        (f, f_upper_tail(f, dfb as f64, dfw as f64), false)
    };
    Ok(AnovaResult {
        f,
        df_between: dfb,
        df_within: dfw,
        p,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestResult {
    #[serde(serialize_with = "finite_or_string")]
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Set when the pooled variance is zero but the means differ.
    pub degenerate: bool,
}

/// Pooled-variance two-sample t-test; `t(a, b) = −t(b, a)` exactly.
pub fn two_sample_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    check_groups(&[a, b], 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let df = a.len() + b.len() - 2;
    let pooled = (ssa + ssb) / df as f64;
    let diff = ma - mb;
    let (t, degenerate) = if diff == 0.0 {
        (0.0, false)
    } else if pooled == 0.0 {
        (diff.signum() * f64::INFINITY, true)
    } else {
        (diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt(), false)
    };
    Ok(TTestResult {
        t,
        df,
        p: t_two_sided_p(t, df as f64),
        degenerate,
    })
}
