//! Poisson-gamma (negative binomial) probability functions.
//!
//! A PG variable with parameters `(t, shape, rate)` is a Poisson count over
//! exposure `t` whose intensity is `Gamma(shape, rate)` distributed. Its law
//! is negative binomial with size `shape` and success probability
//! `rate / (rate + t)`.
//!
//! Point masses are evaluated in log-space. Cumulative probabilities go
//! through the regularized incomplete beta and gamma functions, which keeps
//! both tails accurate without summing long series.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{check_positive, check_probability_open, domain, Result};

/// Shapes above this are numerically indistinguishable from the Poisson limit.
const POISSON_LIMIT_SHAPE: f64 = 1e10;

/// Parameters `(A, B)` of a gamma-distributed rate (shape, rate per unit exposure).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGParams {
    pub shape: f64,
    pub rate: f64,
}

impl PGParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        check_positive("shape", shape)?;
        check_positive("rate", rate)?;
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Mean and variance of a cumulative rate `Λ`.
///
/// `variance == 0` means `Λ` is deterministic and counts are Poisson(mean).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean: f64,
    pub variance: f64,
}

impl MomentPair {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(domain(format!("mean must be finite and >= 0, got {mean}")));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(domain(format!(
                "variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Moments of a sum of independent parts.
    pub fn combine(self, other: MomentPair) -> MomentPair {
        MomentPair {
            mean: self.mean + other.mean,
            variance: self.variance + other.variance,
        }
    }
}

/// Log of `P(PG(t, shape, rate) = k)`.
pub fn ln_pg_pmf(k: u64, t: f64, shape: f64, rate: f64) -> Result<f64> {
    check_positive("t", t)?;
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    let kf = k as f64;
    // (t / (rate + t))^k * (rate / (rate + t))^shape, with ln(1 + x) forms
    // so that tiny exposures do not lose precision.
    let ln_q = -(rate / t).ln_1p();
    let ln_p = -(t / rate).ln_1p();
    let coeff = ln_gamma(shape + kf) - ln_gamma(shape) - ln_factorial(k);
    let tail = if k == 0 { 0.0 } else { kf * ln_q };
    Ok(coeff + shape * ln_p + tail)
}

/// `P(PG(t, shape, rate) = k)`.
pub fn pg_pmf(k: u64, t: f64, shape: f64, rate: f64) -> Result<f64> {
    Ok(ln_pg_pmf(k, t, shape, rate)?.exp())
}

/// `P(PG(exposure, params) <= k)`.
pub fn pg_cdf(k: u64, params: PGParams, exposure: f64) -> Result<f64> {
    check_params(params)?;
    check_positive("exposure", exposure)?;
    if params.shape > POISSON_LIMIT_SHAPE {
        return poisson_cdf(k, params.mean() * exposure);
    }
    let p = params.rate / (params.rate + exposure);
    Ok(beta_reg(params.shape, k as f64 + 1.0, p))
}

/// `P(PG(exposure, params) >= k)`, computed directly in the upper tail.
pub fn pg_sf(k: u64, params: PGParams, exposure: f64) -> Result<f64> {
    check_params(params)?;
    check_positive("exposure", exposure)?;
    if k == 0 {
        return Ok(1.0);
    }
    if params.shape > POISSON_LIMIT_SHAPE {
        return poisson_sf(k, params.mean() * exposure);
    }
    let q = exposure / (params.rate + exposure);
    Ok(beta_reg(k as f64, params.shape, q))
}

/// Smallest `k` with `P(PG(A, B) <= k) >= p`, where `(A, B)` matches the
/// moments of the cumulative rate: `A = mean²/variance`, `B = mean/variance`.
///
/// A zero variance degenerates to the Poisson quantile with the same mean.
pub fn pg_quantile(p: f64, moments: MomentPair) -> Result<u64> {
    check_probability_open("p", p)?;
    check_positive("mean", moments.mean)?;
    if !(moments.variance >= 0.0) {
        return Err(domain(format!(
            "variance must be >= 0, got {}",
            moments.variance
        )));
    }
    if moments.variance == 0.0 {
        return poisson_quantile(p, moments.mean);
    }
    let params = PGParams {
        shape: moments.mean * moments.mean / moments.variance,
        rate: moments.mean / moments.variance,
    };
    if !(params.shape.is_finite() && params.shape > 0.0 && params.rate.is_finite()) {
        return poisson_quantile(p, moments.mean);
    }
    Ok(discrete_quantile(p, moments.mean, |k| {
        pg_cdf(k, params, 1.0).unwrap_or(1.0)
    }))
}

/// `P(Poisson(mean) <= k)`.
pub fn poisson_cdf(k: u64, mean: f64) -> Result<f64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(domain(format!("Poisson mean must be >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(k as f64 + 1.0, mean))
}

/// `P(Poisson(mean) >= k)`.
pub fn poisson_sf(k: u64, mean: f64) -> Result<f64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(domain(format!("Poisson mean must be >= 0, got {mean}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_lr(k as f64, mean))
}

/// Smallest `k` with `P(Poisson(mean) <= k) >= p`.
pub fn poisson_quantile(p: f64, mean: f64) -> Result<u64> {
    check_probability_open("p", p)?;
    if mean == 0.0 {
        return Ok(0);
    }
    check_positive("mean", mean)?;
    Ok(discrete_quantile(p, mean, |k| {
        poisson_cdf(k, mean).unwrap_or(1.0)
    }))
}

/// `P(Bin(n, p) <= k)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial_p(p)?;
    if k >= n {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    Ok(beta_reg((n - k) as f64, k as f64 + 1.0, 1.0 - p))
}

/// `P(Bin(n, p) >= k)`.
pub fn binomial_sf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial_p(p)?;
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    Ok(beta_reg(k as f64, (n - k) as f64 + 1.0, p))
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability_open("p", p)?;
    Ok(standard_normal().inverse_cdf(p))
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

fn check_params(params: PGParams) -> Result<()> {
    check_positive("shape", params.shape)?;
    check_positive("rate", params.rate)
}

fn check_binomial_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(domain(format!("binomial probability must lie in [0, 1], got {p}")))
    }
}

/// Smallest `k` with `cdf(k) >= p` for a nondecreasing `cdf` on the integers.
///
/// Brackets outward from `start` by doubling, then bisects.
pub(crate) fn discrete_quantile(p: f64, start: f64, cdf: impl Fn(u64) -> f64) -> u64 {
    let mut guess = if start.is_finite() && start > 0.0 {
        start.floor() as u64
    } else {
        0
    };
    if cdf(guess) >= p {
        // Answer lies in [0, guess].
        let mut hi = guess;
        let mut step = 1u64;
        let mut lo;
        loop {
            if hi == 0 {
                return 0;
            }
            lo = hi.saturating_sub(step);
            if cdf(lo) < p {
                break;
            }
            hi = lo;
            step = step.saturating_mul(2);
        }
        bisect(lo, hi, p, &cdf)
    } else {
        let mut lo = guess;
        let mut step = 1u64;
        loop {
            guess = lo.saturating_add(step);
            if cdf(guess) >= p || guess == u64::MAX {
                break;
            }
            lo = guess;
            step = step.saturating_mul(2);
        }
        bisect(lo, guess, p, &cdf)
    }
}

/// Invariant: `cdf(lo) < p <= cdf(hi)`.
fn bisect(mut lo: u64, mut hi: u64, p: f64, cdf: &impl Fn(u64) -> f64) -> u64 {
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
