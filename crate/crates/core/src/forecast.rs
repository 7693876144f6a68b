//! Analytic forecasts of regional and global recruitment.
//!
//! A region's count is a mixed Poisson variable whose cumulative rate has
//! mean `E = Σ m_i·R_i` and variance `S² = Σ s_i²·R_i²`. The count is
//! approximated by `PG(A, B)` with `A = E²/S²` and `B = E/S²`. Bounds are
//! equal-tailed quantiles of that approximation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{pg_quantile, pg_sf, poisson_sf, MomentPair, PGParams};
use crate::error::{check_probability_open, domain, Error, Result};
use crate::rate::{CentreProfile, RateFunction};

/// Mean, variance and predictive bounds of cumulative recruitment on a day grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionForecast {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
    pub confidence: f64,
}

impl RegionForecast {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Completion-day estimate. `None` means the target is not reached on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub mean_day: Option<f64>,
    pub lower_day: Option<f64>,
    pub upper_day: Option<f64>,
}

/// Moments of the cumulative rate of `centres` over `[0, t]`.
pub fn region_moments(centres: &[CentreProfile], r: &RateFunction, t: f64) -> Result<MomentPair> {
    interval_moments(centres, r, 0.0, t)
}

/// Moments of the cumulative rate of `centres` over `[a, b]`.
pub fn interval_moments(
    centres: &[CentreProfile],
    r: &RateFunction,
    a: f64,
    b: f64,
) -> Result<MomentPair> {
    if centres.is_empty() {
        return Err(Error::NoCentres);
    }
    Ok(centres.iter().fold(MomentPair::default(), |acc, c| {
        let exposure = c.exposure(r, a, b);
        acc.combine(MomentPair {
            mean: c.mean_rate() * exposure,
            variance: c.rate_variance() * exposure * exposure,
        })
    }))
}

/// `(A, B) = (E²/S², E/S²)`.
pub fn pg_approx_params(moments: MomentPair) -> Result<PGParams> {
    if moments.variance == 0.0 {
        return Err(Error::DegenerateMoments);
    }
    if !(moments.mean > 0.0) || !(moments.variance > 0.0) {
        return Err(domain(format!(
            "moments must be positive, got mean {} variance {}",
            moments.mean, moments.variance
        )));
    }
    PGParams::new(
        moments.mean * moments.mean / moments.variance,
        moments.mean / moments.variance,
    )
}

/// Equal-tailed `confidence` bounds of the count approximated from `moments`.
pub fn predictive_bounds(moments: MomentPair, confidence: f64) -> Result<(u64, u64)> {
    check_probability_open("confidence", confidence)?;
    if moments.mean == 0.0 {
        return Ok((0, 0));
    }
    let lo = pg_quantile((1.0 - confidence) / 2.0, moments)?;
    let hi = pg_quantile((1.0 + confidence) / 2.0, moments)?;
    Ok((lo, hi))
}

/// `P(count >= k)` under the PG approximation to `moments`.
pub fn count_sf(k: u64, moments: MomentPair) -> Result<f64> {
    if k == 0 {
        return Ok(1.0);
    }
    if moments.mean == 0.0 {
        return Ok(0.0);
    }
    if moments.variance == 0.0 {
        return poisson_sf(k, moments.mean);
    }
    pg_sf(k, pg_approx_params(moments)?, 1.0)
}

/// Forecast for the region made of `centres` on `grid`.
pub fn forecast_region(
    centres: &[CentreProfile],
    r: &RateFunction,
    grid: &[f64],
    confidence: f64,
) -> Result<RegionForecast> {
    let moments = grid
        .iter()
        .map(|&t| region_moments(centres, r, t))
        .collect::<Result<Vec<_>>>()?;
    forecast_from_moments(grid, &moments, confidence, 0)
}

/// Forecast per group tag plus the global union under the key `"global"`.
/// Centres without a tag only contribute to the global forecast.
pub fn forecast_by_group(
    centres: &[CentreProfile],
    r: &RateFunction,
    grid: &[f64],
    confidence: f64,
) -> Result<BTreeMap<String, RegionForecast>> {
    let mut groups: BTreeMap<String, Vec<CentreProfile>> = BTreeMap::new();
    for c in centres {
        if let Some(g) = &c.group {
            groups.entry(g.clone()).or_default().push(c.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (name, members) in groups {
        out.insert(name, forecast_region(&members, r, grid, confidence)?);
    }
    out.insert("global".to_string(), forecast_region(centres, r, grid, confidence)?);
    Ok(out)
}

/// Builds a forecast from precomputed moments, shifting every value by an
/// already observed count `offset`.
pub fn forecast_from_moments(
    grid: &[f64],
    moments: &[MomentPair],
    confidence: f64,
    offset: u64,
) -> Result<RegionForecast> {
    check_probability_open("confidence", confidence)?;
    if grid.len() != moments.len() {
        return Err(domain("grid and moments differ in length"));
    }
    let mut out = RegionForecast {
        times: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        variance: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
        confidence,
    };
    for m in moments {
        let (lo, hi) = predictive_bounds(*m, confidence)?;
        out.mean.push(offset as f64 + m.mean);
        out.variance.push(m.variance);
        out.lower.push(offset + lo);
        out.upper.push(offset + hi);
    }
    Ok(out)
}

/// First grid days at which the mean, the upper bound and the lower bound
/// reach `target`. The upper bound crossing gives the early (lower) day.
pub fn time_to_target(forecast: &RegionForecast, target: u64) -> Result<Completion> {
    if target == 0 {
        return Err(domain("target must be >= 1"));
    }
    let first = |hit: &dyn Fn(usize) -> bool| {
        (0..forecast.len()).find(|&i| hit(i)).map(|i| forecast.times[i])
    };
    Ok(Completion {
        mean_day: first(&|i| forecast.mean[i] >= target as f64),
        lower_day: first(&|i| forecast.upper[i] >= target),
        upper_day: first(&|i| forecast.lower[i] >= target),
    })
}

/// Integer day grid `from..=to`.
pub fn day_grid(from: u32, to: u32) -> Vec<f64> {
    (from..=to).map(f64::from).collect()
}
