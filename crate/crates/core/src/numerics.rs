//! Log-domain scalar kernels shared by the detector models.
//!
//! Probabilities that can vanish are carried as natural logarithms with
//! `-inf` standing for an exact zero; sums of logs propagate `-inf` without
//! producing NaN.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Largest `m` for which binomial coefficients are evaluated in exact integer arithmetic.
pub const EXACT_BINOMIAL_MAX: u64 = 60;

/// Natural-log probability, `value <= 0` or `-inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO_PROB: LogProb = LogProb(f64::NEG_INFINITY);
    pub const CERTAIN: LogProb = LogProb(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value > 0.0 {
            return Err(Error::Domain(format!("log-probability {value} must be <= 0")));
        }
        Ok(LogProb(value))
    }

    /// `ln(1 - p)` for a probability `p`; `p = 1` maps to `-inf`.
    pub fn complement_of(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        Ok(LogProb((-p).ln_1p()))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    /// `1 - exp(value)` without cancellation for values near zero.
    #[inline]
    pub fn complement_prob(self) -> f64 {
        -self.0.exp_m1()
    }

    #[inline]
    pub fn is_zero_prob(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Product of probabilities.
    #[inline]
    pub fn and(self, other: LogProb) -> LogProb {
        LogProb(log_add_terms(self.0, other.0))
    }
}

impl TryFrom<f64> for LogProb {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        LogProb::new(value)
    }
}

impl From<LogProb> for f64 {
    fn from(value: LogProb) -> f64 {
        value.0
    }
}

/// Sum of two log-domain terms with `-inf` absorbing.
#[inline]
pub fn log_add_terms(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        a + b
    }
}

/// `coefficient * log_value` where a zero coefficient annihilates even `-inf`
/// (`x^0 = 1` for `x = 0`).
#[inline]
pub fn scaled_log(coefficient: f64, log_value: f64) -> f64 {
    if coefficient == 0.0 {
        0.0
    } else {
        coefficient * log_value
    }
}

/// `m ln(mu) - mu - ln(m!)`, the log Poisson probability of `m` photons at mean `mu`.
pub fn log_poisson_weight(mu: f64, m: u64) -> Result<LogProb> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number {mu} must be finite and >= 0"
        )));
    }
    Ok(LogProb(log_poisson_unchecked(mu, m)))
}

#[inline]
pub(crate) fn log_poisson_unchecked(mu: f64, m: u64) -> f64 {
    if mu == 0.0 {
        return if m == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let value = m as f64 * mu.ln() - mu - ln_factorial(m);
    // lgamma rounding may push the mode weight of tiny `mu` a hair above zero
    value.min(0.0)
}

/// `ln C(m, n)` for `n <= m`, `-inf` when `n > m`.
pub fn log_binomial(m: u64, n: u64) -> f64 {
    if n > m {
        return f64::NEG_INFINITY;
    }
    if m <= EXACT_BINOMIAL_MAX {
        return (exact_binomial(m, n) as f64).ln();
    }
    let k = n.min(m - n);
    if k <= MULTIPLICATIVE_MAX {
        return multiplicative_binomial(m, k).ln();
    }
    ln_factorial(m) - ln_factorial(n) - ln_factorial(m - n)
}

/// Beyond this many factors the product form gives way to log-factorials.
const MULTIPLICATIVE_MAX: u64 = 64;

/// The binomial coefficient `C(m, n)` as a real, `0` for `n > m`.
///
/// Exact integer arithmetic up to `m = 60`, a short product for small `min(n, m - n)`,
/// and log-factorials otherwise.
pub fn binomial_exponent(m: u64, n: u64) -> f64 {
    if n > m {
        return 0.0;
    }
    if m <= EXACT_BINOMIAL_MAX {
        return exact_binomial(m, n) as f64;
    }
    let k = n.min(m - n);
    if k <= MULTIPLICATIVE_MAX {
        return multiplicative_binomial(m, k);
    }
    log_binomial(m, n).exp()
}

fn exact_binomial(m: u64, n: u64) -> u64 {
    let k = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (m - i) is divisible by (i + 1) at every step
        acc = acc * u128::from(m - i) / u128::from(i + 1);
    }
    acc as u64
}

fn multiplicative_binomial(m: u64, k: u64) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc *= (m - i) as f64 / (i + 1) as f64;
    }
    acc
}
