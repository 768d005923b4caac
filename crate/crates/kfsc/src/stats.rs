//! Chi-square distribution helpers for the innovation gate.
//!
//! The quantile is obtained by bisection on the regularized lower incomplete
//! gamma function, which is evaluated with the classic series / continued
//! fraction split.  Everything is plain `f64`; accuracy is far beyond the
//! 1e-10 tolerance the gate needs.

use std::error::Error;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum StatsError {
    /// Probability argument outside the open interval (0, 1).
    InvalidProbability(f64),
    /// Degrees of freedom must be a positive finite number.
    InvalidDof(f64),
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::InvalidProbability(p) => {
                write!(f, "probability {p} outside the open interval (0, 1)")
            }
            StatsError::InvalidDof(k) => write!(f, "invalid degrees of freedom {k}"),
        }
    }
}

impl Error for StatsError {}

/// Natural log of the gamma function (Lanczos approximation, g = 5, n = 6).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_5e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000_000_000_190_015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

/// Regularized lower incomplete gamma function P(a, x).
///
/// Series expansion for `x < a + 1`, Lentz continued fraction otherwise.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "invalid incomplete gamma arguments");
    if x == 0.0 {
        return 0.0;
    }
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    let ln_ga = ln_gamma(a);
    if x < a + 1.0 {
        // Series: P(a,x) = x^a e^-x / Γ(a) · Σ x^n Γ(a) / Γ(a+1+n)
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_ga).exp()
    } else {
        // Continued fraction for Q(a,x); P = 1 − Q.
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        1.0 - (-x + a * x.ln() - ln_ga).exp() * h
    }
}

/// Cumulative distribution function of the chi-square law with `dof` degrees
/// of freedom.
pub fn chi2_cdf(dof: f64, x: f64) -> Result<f64, StatsError> {
    if !(dof.is_finite() && dof > 0.0) {
        return Err(StatsError::InvalidDof(dof));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(regularized_lower_gamma(0.5 * dof, 0.5 * x))
}

/// Quantile of the chi-square law: the `x` with `chi2_cdf(dof, x) = p`.
///
/// Bisection on the CDF with absolute tolerance 1e-10.
pub fn chi2_quantile(dof: f64, p: f64) -> Result<f64, StatsError> {
    if !(dof.is_finite() && dof > 0.0) {
        return Err(StatsError::InvalidDof(dof));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidProbability(p));
    }
    let mut hi = dof.max(1.0);
    while regularized_lower_gamma(0.5 * dof, 0.5 * hi) < p {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if regularized_lower_gamma(0.5 * dof, 0.5 * mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
