//! Chi-squared residual detector: distance measure, alarm rule, and threshold
//! tuning through the inverse regularized lower incomplete gamma function.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

const GAMMA_MAX_TERMS: usize = 500;
const GAMMA_EPS: f64 = 1e-16;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
        // Reflection keeps the approximation in its accurate half-plane.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Regularized lower incomplete gamma function `P(s, x) = γ(s, x) / Γ(s)`.
pub fn reg_lower_gamma(s: f64, x: f64) -> Result<f64> {
    if !(s > 0.0) || !(x >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("P(s, x) needs s > 0, x >= 0; got s = {s}, x = {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefix = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        // Series: γ(s,x) = x^s e^{-x} Σ x^k / (s (s+1) ... (s+k)).
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut denom = s;
        for _ in 0..GAMMA_MAX_TERMS {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        Ok((log_prefix.exp() * sum).clamp(0.0, 1.0))
    } else {
        // Continued fraction for Q(s,x), modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=GAMMA_MAX_TERMS {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        Ok((1.0 - log_prefix.exp() * h).clamp(0.0, 1.0))
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi-square needs at least one degree of freedom".into()));
    }
    reg_lower_gamma(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Chi-square density, used as the Newton derivative.
fn chi2_pdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// `x = 2 P⁻¹(q, dof/2)`: the chi-square quantile.
///
/// Bracketed Newton iteration with a bisection fallback.
pub fn chi2_quantile(q: f64, dof: usize) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if dof == 0 {
        return Err(Error::Domain("chi-square needs at least one degree of freedom".into()));
    }
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(hi, dof)? < q {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::NoConvergence("chi-square quantile bracket".into()));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, dof)? - q;
        if f.abs() <= 1e-13 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_pdf(x, dof);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi.max(1.0) {
            return Ok(x);
        }
    }
    let resid = chi2_cdf(x, dof)? - q;
    if resid.abs() <= 1e-10 {
        Ok(x)
    } else {
        Err(Error::NoConvergence(format!("chi-square quantile residual {resid:e}")))
    }
}

/// Threshold and cached inverse residual covariance of a chi-squared detector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub dof: usize,
    /// Design false-alarm rate.
    pub target_rate: f64,
    #[serde(skip)]
    sigma_inv: DMatrix<f64>,
}

impl DetectorConfig {
    /// Tunes `alpha` so that attack-free alarms occur at `target_rate`.
    pub fn tuned(sigma: &DMatrix<f64>, target_rate: f64) -> Result<Self> {
        let dof = sigma.nrows();
        let alpha = chi2_quantile(1.0 - target_rate, dof)?;
        Self::with_alpha(sigma, alpha, target_rate)
    }

    /// Uses an explicit threshold; `target_rate` is kept as metadata.
    pub fn with_alpha(sigma: &DMatrix<f64>, alpha: f64, target_rate: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("threshold must be positive, got {alpha}")));
        }
        if !(target_rate > 0.0 && target_rate < 1.0) {
            return Err(Error::Domain(format!("false-alarm rate must lie in (0, 1), got {target_rate}")));
        }
        let sigma = linalg::require_pd(sigma, "residual covariance")?;
        Ok(DetectorConfig {
            alpha,
            dof: sigma.nrows(),
            target_rate,
            sigma_inv: linalg::spd_inverse(&sigma, "residual covariance")?,
        })
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    /// Noise truncation level `v̄` for an `n`-dimensional state at the same rate.
    pub fn vbar(&self, n: usize) -> Result<f64> {
        chi2_quantile(1.0 - self.target_rate, n)
    }

    pub fn distance(&self, r: &DVector<f64>) -> Result<f64> {
        distance(r, &self.sigma_inv)
    }

    /// `z > alpha` raises an alarm; equality does not.
    pub fn is_alarm(&self, z: f64) -> bool {
        z > self.alpha
    }
}

/// Quadratic distance `z = rᵀ Σ⁻¹ r`.
pub fn distance(r: &DVector<f64>, sigma_inv: &DMatrix<f64>) -> Result<f64> {
    if sigma_inv.nrows() != r.len() || sigma_inv.ncols() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "residual of length {} vs {}x{} inverse covariance",
            r.len(),
            sigma_inv.nrows(),
            sigma_inv.ncols()
        )));
    }
    Ok(r.dot(&(sigma_inv * r)).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmStream {
    pub alarms: Vec<bool>,
    pub rate: f64,
    /// Indices at which an alarm was raised.
    pub alarm_times: Vec<usize>,
}

pub fn alarm_stream(z: &[f64], alpha: f64) -> Result<AlarmStream> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("threshold must be positive, got {alpha}")));
    }
    let alarms: Vec<bool> = z.iter().map(|&zk| zk > alpha).collect();
    let alarm_times: Vec<usize> = alarms
        .iter()
        .enumerate()
        .filter_map(|(k, &a)| a.then_some(k))
        .collect();
    let rate = if z.is_empty() {
        0.0
    } else {
        alarm_times.len() as f64 / z.len() as f64
    };
    Ok(AlarmStream {
        alarms,
        rate,
        alarm_times,
    })
}
