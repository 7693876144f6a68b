//! Interim re-projection: refit at an interim day and forecast the rest.
//!
//! Remaining recruitment is forecast per centre from the gamma posterior
//! `(α̂ + k_i, β̂ + τ_i)` given the data the strategy used, or from the fitted
//! prior alone. Homogeneous strategies hold the rate constant after the
//! interim; time-dependent ones extrapolate `r(t)`.

use serde::{Deserialize, Serialize};

use crate::distributions::{MomentPair, PGParams};
use crate::error::{check_probability_open, domain, Result};
use crate::estimation::{
    enrollment_data, fit_pg, fit_pg_timedep, posterior_rate, restrict_window, CentreEvents, EnrollmentData,
    FitResult, RateFamily,
};
use crate::forecast::{count_sf, forecast_from_moments, time_to_target, Completion, RegionForecast};
use crate::homogeneity::{
    interval_totals, pg_test, poisson_nonparametric_test, poisson_parametric_test, TestReport, Verdict,
};
use crate::rate::{cumulative_rate_factor, RateFunction};

pub const DEFAULT_WINDOW_DAYS: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// Constant rate fitted on everything observed so far.
    AllData,
    /// Constant rate fitted on the last `days` before the interim.
    Window { days: f64 },
    /// Known `r(t)`; only `(α, β)` are fitted.
    TimedepKnownR { rate: RateFunction },
    /// `(α, β, θ)` fitted jointly for a rate family.
    TimedepFitR { family: RateFamily },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::AllData => "all-data".into(),
            Strategy::Window { days } => format!("window({days})"),
            Strategy::TimedepKnownR { .. } => "timedep-known-r".into(),
            Strategy::TimedepFitR { .. } => "timedep-fit-r".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Per-centre gamma posteriors.
    #[default]
    Posterior,
    /// The fitted prior for every centre.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionRequest {
    pub interim: u32,
    pub deadline: u32,
    pub target: u64,
    pub confidence: f64,
    /// Last forecast day; completion beyond it is reported as not reached.
    pub horizon: u32,
    #[serde(default)]
    pub conditioning: Conditioning,
}

impl ReprojectionRequest {
    pub fn new(interim: u32, deadline: u32, target: u64, confidence: f64) -> Self {
        Self { interim, deadline, target, confidence, horizon: deadline.saturating_mul(3), conditioning: Conditioning::Posterior }
    }

    fn validate(&self) -> Result<()> {
        check_probability_open("confidence", self.confidence)?;
        if self.interim >= self.deadline {
            return Err(domain(format!("interim {} must precede deadline {}", self.interim, self.deadline)));
        }
        if self.horizon < self.deadline {
            return Err(domain("forecast horizon must reach the deadline"));
        }
        if self.target == 0 {
            return Err(domain("target must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub strategy: String,
    pub fit: FitResult,
    pub observed: u64,
    pub completion: Completion,
    pub prob_success: f64,
    /// Cumulative total (observed plus forecast) from the day after the interim.
    pub forecast: RegionForecast,
}

/// Fitted parameters, the data behind them and the forward rate function.
fn fit_strategy(events: &[CentreEvents], interim: f64, strategy: &Strategy) -> Result<(FitResult, EnrollmentData, RateFunction)> {
    match strategy {
        Strategy::AllData => {
            let data = enrollment_data(events, &RateFunction::Constant, 0.0, interim)?;
            Ok((fit_pg(&data)?, data, RateFunction::Constant))
        }
        Strategy::Window { days } => {
            let data = restrict_window(events, interim, *days)?;
            Ok((fit_pg(&data)?, data, RateFunction::Constant))
        }
        Strategy::TimedepKnownR { rate } => {
            let family = RateFamily::Known { rate: rate.clone() };
            let fit = fit_pg_timedep(events, &family, (0.0, interim))?;
            Ok((fit, enrollment_data(events, rate, 0.0, interim)?, rate.clone()))
        }
        Strategy::TimedepFitR { family } => {
            let fit = fit_pg_timedep(events, family, (0.0, interim))?;
            let rate = family.instantiate(&fit.theta)?;
            Ok((fit, enrollment_data(events, &rate, 0.0, interim)?, rate))
        }
    }
}

/// Per-centre rate distributions after the interim.
fn centre_rates(fit: &FitResult, data: &EnrollmentData, conditioning: Conditioning) -> Result<Vec<PGParams>> {
    data.records
        .iter()
        .map(|r| match conditioning {
            Conditioning::Posterior => posterior_rate(fit.params(), r.count, r.exposure),
            Conditioning::Prior => Ok(fit.params()),
        })
        .collect()
}

/// Moments of the recruitment over `(interim, t]` given per-centre rates.
fn remaining_moments(events: &[CentreEvents], rates: &[PGParams], r: &RateFunction, interim: f64, t: f64) -> MomentPair {
    events.iter().zip(rates).fold(MomentPair::default(), |acc, (c, p)| {
        let x = cumulative_rate_factor(r, interim, t, c.activation_day);
        acc.combine(MomentPair { mean: p.mean() * x, variance: p.variance() * x * x })
    })
}

/// Forecast of the cumulative total after `interim` from per-centre
/// posteriors under `fit`, on `grid` (days after the interim).
pub fn forward_forecast_posterior(
    fit: &FitResult,
    data: &EnrollmentData,
    events: &[CentreEvents],
    r: &RateFunction,
    interim: f64,
    grid: &[f64],
    confidence: f64,
) -> Result<RegionForecast> {
    forward(fit, data, events, r, interim, grid, confidence, Conditioning::Posterior)
}

/// As [`forward_forecast_posterior`] with the fitted prior for every centre.
pub fn forward_forecast_prior(
    fit: &FitResult,
    data: &EnrollmentData,
    events: &[CentreEvents],
    r: &RateFunction,
    interim: f64,
    grid: &[f64],
    confidence: f64,
) -> Result<RegionForecast> {
    forward(fit, data, events, r, interim, grid, confidence, Conditioning::Prior)
}

#[allow(clippy::too_many_arguments)]
fn forward(
    fit: &FitResult,
    data: &EnrollmentData,
    events: &[CentreEvents],
    r: &RateFunction,
    interim: f64,
    grid: &[f64],
    confidence: f64,
    conditioning: Conditioning,
) -> Result<RegionForecast> {
    if data.records.len() != events.len() {
        return Err(domain("fitting data and events differ in centre count"));
    }
    let rates = centre_rates(fit, data, conditioning)?;
    let observed: u64 = events.iter().map(|c| c.count_in(f64::NEG_INFINITY, interim)).sum();
    let moments: Vec<MomentPair> = grid.iter().map(|&t| remaining_moments(events, &rates, r, interim, t)).collect();
    forecast_from_moments(grid, &moments, confidence, observed)
}

/// Refit at the interim with `strategy` and forecast completion.
pub fn reproject(events: &[CentreEvents], request: &ReprojectionRequest, strategy: &Strategy) -> Result<ReprojectionReport> {
    request.validate()?;
    let interim = f64::from(request.interim);
    let observed: u64 = events.iter().map(|c| c.count_in(f64::NEG_INFINITY, interim)).sum();
    let (fit, data, r) = fit_strategy(events, interim, strategy)?;
    let grid: Vec<f64> = (request.interim + 1..=request.horizon).map(f64::from).collect();
    let forecast = forward(&fit, &data, events, &r, interim, &grid, request.confidence, request.conditioning)?;

    if observed >= request.target {
        let done = Some(interim);
        return Ok(ReprojectionReport {
            strategy: strategy.label(),
            fit,
            observed,
            completion: Completion { mean_day: done, lower_day: done, upper_day: done },
            prob_success: 1.0,
            forecast,
        });
    }
    let completion = time_to_target(&forecast, request.target)?;
    let rates = centre_rates(&fit, &data, request.conditioning)?;
    let remaining = remaining_moments(events, &rates, &r, interim, f64::from(request.deadline));
    let prob_success = count_sf(request.target - observed, remaining)?;
    Ok(ReprojectionReport { strategy: strategy.label(), fit, observed, completion, prob_success, forecast })
}

/// Outcome of the default workflow's homogeneity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowChoice {
    pub strategy: Strategy,
    pub intervals: ((f64, f64), (f64, f64)),
    pub poisson: Vec<TestReport>,
    pub pg: Option<TestReport>,
}

fn flags(r: &TestReport) -> bool {
    r.verdict != Verdict::NoEvidence
}

/// Strategy chosen by testing the two most recent intervals of
/// `interval_days` each. Both Poisson tests run first; if either flags a
/// change the PG test is run and a change it confirms (or a PG test that
/// cannot be run) selects a window of `window_days`. Otherwise all data are
/// used.
pub fn workflow_strategy(
    events: &[CentreEvents],
    interim: f64,
    interval_days: f64,
    window_days: f64,
    delta: f64,
) -> Result<WorkflowChoice> {
    let len = interval_days.min(interim / 2.0);
    if !(len > 0.0) {
        return Err(domain("interim too early for a homogeneity check"));
    }
    let i1 = (interim - 2.0 * len, interim - len);
    let i2 = (interim - len, interim);
    let d1 = interval_totals(events, i1.0, i1.1)?;
    let d2 = interval_totals(events, i2.0, i2.1)?;
    let mut poisson = Vec::new();
    for test in [poisson_nonparametric_test, poisson_parametric_test] {
        match test(&d1, &d2, delta) {
            Ok(r) => poisson.push(r),
            // no active centre in the earlier interval: nothing to compare
            Err(crate::Error::DegenerateTest(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let mut pg = None;
    let strategy = if poisson.iter().any(flags) {
        match pg_test(&d1, &d2, delta) {
            Ok(r) => {
                let changed = flags(&r);
                pg = Some(r);
                if changed { Strategy::Window { days: window_days } } else { Strategy::AllData }
            }
            Err(_) => Strategy::Window { days: window_days },
        }
    } else {
        Strategy::AllData
    };
    Ok(WorkflowChoice { strategy, intervals: (i1, i2), poisson, pg })
}
