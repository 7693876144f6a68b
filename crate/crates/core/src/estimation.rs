//! Maximum-likelihood fitting of shared `(α, β)` from per-centre counts.
//!
//! With exposures `τ_i` the log-likelihood is
//! `Σ lnΓ(α+k_i) + α ln β − lnΓ(α) − (α+k_i) ln(β+τ_i) + k_i ln τ_i − ln k_i!`.
//! Optimisation runs in `(ln α, ln β)` so positivity is free.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::distributions::PGParams;
use crate::error::{check_positive, domain, Error, Result};
use crate::optim::{golden_section, NelderMead};
use crate::rate::{cumulative_rate_factor, recruitment_window, RateFunction};

/// Upper limit on the fitted shape. Data without overdispersion push `α`
/// towards infinity (the Poisson limit); fits stop here and flag a boundary.
pub const MAX_SHAPE: f64 = 1e8;
const MIN_SHAPE: f64 = 1e-8;

/// One centre's count and effective exposure over a fitting interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub centre_id: String,
    pub count: u64,
    pub exposure: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentData {
    pub records: Vec<EnrollmentRecord>,
}

impl EnrollmentData {
    pub fn new(records: Vec<EnrollmentRecord>) -> Result<Self> {
        for r in &records {
            if !(r.exposure >= 0.0 && r.exposure.is_finite()) {
                return Err(domain(format!(
                    "centre {}: exposure must be >= 0, got {}",
                    r.centre_id, r.exposure
                )));
            }
            if r.exposure == 0.0 && r.count > 0 {
                return Err(domain(format!(
                    "centre {}: {} events with zero exposure",
                    r.centre_id, r.count
                )));
            }
        }
        Ok(Self { records })
    }

    /// Builds records from `(count, exposure)` pairs with generated ids.
    pub fn from_pairs(pairs: &[(u64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(count, exposure))| EnrollmentRecord {
                    centre_id: format!("c{i}"),
                    count,
                    exposure,
                })
                .collect(),
        )
    }

    pub fn total_count(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.records.iter().map(|r| r.exposure).sum()
    }

    fn usable(&self) -> impl Iterator<Item = &EnrollmentRecord> {
        self.records.iter().filter(|r| r.exposure > 0.0)
    }
}

/// Observed events of one centre. Events on day `d` fall in `(d−1, d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentreEvents {
    pub id: String,
    #[serde(default)]
    pub group: Option<String>,
    pub activation_day: f64,
    /// Sorted enrollment days, one entry per patient.
    pub event_days: Vec<u32>,
}

impl CentreEvents {
    pub fn new(id: impl Into<String>, activation_day: f64, mut event_days: Vec<u32>) -> Self {
        event_days.sort_unstable();
        Self { id: id.into(), group: None, activation_day, event_days }
    }

    /// Events with `t0 < day <= t1`.
    pub fn count_in(&self, t0: f64, t1: f64) -> u64 {
        self.event_days
            .iter()
            .filter(|&&d| f64::from(d) > t0 && f64::from(d) <= t1)
            .count() as u64
    }

    /// Daily counts on days `t0+1..=t1` (integer part of the bounds).
    fn daily_counts(&self, t0: f64, t1: f64) -> Vec<(u32, u64)> {
        let mut out: Vec<(u32, u64)> = Vec::new();
        for &d in &self.event_days {
            if f64::from(d) > t0 && f64::from(d) <= t1 {
                match out.last_mut() {
                    Some((day, c)) if *day == d => *c += 1,
                    _ => out.push((d, 1)),
                }
            }
        }
        out
    }
}

/// Result of a likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub shape: f64,
    pub rate: f64,
    /// Free parameters of the rate-function family (empty when `d = 0`).
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    /// The shape hit [`MAX_SHAPE`]: no overdispersion detected.
    pub boundary: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn params(&self) -> PGParams {
        PGParams { shape: self.shape, rate: self.rate }
    }

    pub fn mean_rate(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn rate_variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Log-likelihood of `(shape, rate)`. Records with zero exposure are skipped.
pub fn log_likelihood(data: &EnrollmentData, shape: f64, rate: f64) -> Result<f64> {
    check_positive("shape", shape)?;
    check_positive("rate", rate)?;
    Ok(ll_unchecked(data.usable().map(|r| (r.count, r.exposure)), shape, rate))
}

fn ll_unchecked(records: impl Iterator<Item = (u64, f64)>, a: f64, b: f64) -> f64 {
    ll_weighted(records.map(|(k, t)| (k, t, 1.0)), a, b)
}

fn ll_weighted(records: impl Iterator<Item = (u64, f64, f64)>, a: f64, b: f64) -> f64 {
    let (lg_a, ln_b) = (ln_gamma(a), b.ln());
    records
        .map(|(k, t, w)| {
            let kf = k as f64;
            let data_term = if k == 0 { 0.0 } else { kf * t.ln() - ln_factorial(k) };
            w * (ln_gamma(a + kf) - lg_a + a * ln_b - (a + kf) * (b + t).ln() + data_term)
        })
        .sum()
}

/// Identical `(k, τ)` records merged with their multiplicity.
fn grouped(recs: &[(u64, f64)]) -> Vec<(u64, f64, f64)> {
    let mut sorted = recs.to_vec();
    sorted.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out: Vec<(u64, f64, f64)> = Vec::new();
    for (k, t) in sorted {
        match out.last_mut() {
            Some(g) if g.0 == k && g.1 == t => g.2 += 1.0,
            _ => out.push((k, t, 1.0)),
        }
    }
    out
}

/// Maximum-likelihood `(α, β)` from counts and exposures.
pub fn fit_pg(data: &EnrollmentData) -> Result<FitResult> {
    let recs: Vec<(u64, f64)> = data.usable().map(|r| (r.count, r.exposure)).collect();
    if recs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 records with positive exposure, got {}",
            recs.len()
        )));
    }
    let total: u64 = recs.iter().map(|r| r.0).sum();
    if total == 0 {
        return Err(Error::AllZeroCounts);
    }
    let t0 = recs[0].1;
    if recs.iter().all(|r| (r.1 - t0).abs() <= 1e-12 * t0) {
        Ok(fit_equal_exposure(&recs, t0))
    } else {
        Ok(fit_general(&recs))
    }
}

/// All exposures equal `t`: the score equation in `β` gives `β = α·t/k̄`,
/// leaving a one-dimensional search over `ln α`.
fn fit_equal_exposure(recs: &[(u64, f64)], t: f64) -> FitResult {
    let kbar = recs.iter().map(|r| r.0 as f64).sum::<f64>() / recs.len() as f64;
    let groups = grouped(recs);
    let profile = |x: f64| {
        let a = x.exp();
        -ll_weighted(groups.iter().copied(), a, a * t / kbar)
    };
    let (lo, hi) = (MIN_SHAPE.ln(), MAX_SHAPE.ln());
    // coarse scan to bracket, then refine
    let n = 80;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| profile(x)).collect();
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    let (x, f) = golden_section(
        profile,
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(n)],
        1e-10,
    );
    // the profile flattens towards the Poisson limit; prefer the cap on ties
    let at_cap = profile(hi);
    let boundary = at_cap <= f + 1e-9;
    let (x, f) = if boundary { (hi, at_cap) } else { (x, f) };
    let shape = x.exp();
    let mut warnings = Vec::new();
    if boundary {
        warnings.push("no overdispersion: shape held at its upper limit".to_string());
    }
    FitResult {
        shape,
        rate: shape * t / kbar,
        theta: Vec::new(),
        log_likelihood: -f,
        converged: true,
        boundary,
        iterations: n + 1,
        warnings,
    }
}

fn fit_general(recs: &[(u64, f64)]) -> FitResult {
    let (cap_lo, cap_hi) = (MIN_SHAPE.ln(), MAX_SHAPE.ln());
    let groups = grouped(recs);
    let objective = |x: &[f64]| {
        let a = x[0].clamp(cap_lo, cap_hi).exp();
        -ll_weighted(groups.iter().copied(), a, x[1].exp())
    };

    let (a0, b0) = moment_start(recs);
    let starts = [
        (a0, b0),
        (a0 * 0.2, b0 * 0.2),
        (a0 * 5.0, b0 * 5.0),
        (a0 * 0.5, b0 * 0.25),
    ];
    let nm = NelderMead::default();
    let mut best: Option<(Vec<f64>, f64, bool, usize)> = None;
    let mut iterations = 0;
    for (a, b) in starts {
        let m = nm.minimize(objective, &[a.ln().clamp(cap_lo, cap_hi), b.ln()]);
        iterations += m.iterations;
        if best.as_ref().is_none_or(|b| m.f < b.1) {
            best = Some((m.x, m.f, m.converged, m.iterations));
        }
    }
    let (x, f, converged, _) = best.expect("at least one start");
    let ln_a = x[0].clamp(cap_lo, cap_hi);
    // Poisson limit: at the cap β is pinned by the pooled mean
    let m = recs.iter().map(|r| r.0 as f64).sum::<f64>() / recs.iter().map(|r| r.1).sum::<f64>();
    let ll_cap = ll_unchecked(recs.iter().copied(), MAX_SHAPE, MAX_SHAPE / m);
    let boundary = ln_a >= cap_hi - 1e-6 || ll_cap >= -f - 1e-9;
    let (shape, rate, log_likelihood) = if boundary {
        (MAX_SHAPE, MAX_SHAPE / m, ll_cap)
    } else {
        (ln_a.exp(), x[1].exp(), -f)
    };
    let mut warnings = Vec::new();
    if boundary {
        warnings.push("no overdispersion: shape held at its upper limit".to_string());
    }
    if !converged {
        warnings.push("optimizer stopped before reaching tolerance".to_string());
    }
    FitResult {
        shape,
        rate,
        theta: Vec::new(),
        log_likelihood,
        converged,
        boundary,
        iterations,
        warnings,
    }
}

/// Method-of-moments start. `m0 = Σk/Στ`; the rate variance comes from the
/// exposure-weighted spread of `k_i/τ_i` minus its Poisson part, floored at
/// a small fraction of `m0/τ̄` so the start stays overdispersed.
fn moment_start(recs: &[(u64, f64)]) -> (f64, f64) {
    let total_t: f64 = recs.iter().map(|r| r.1).sum();
    let m0 = recs.iter().map(|r| r.0 as f64).sum::<f64>() / total_t;
    let n = recs.len() as f64;
    let spread: f64 = recs
        .iter()
        .map(|&(k, t)| t * (k as f64 / t - m0).powi(2))
        .sum();
    let floor = 0.01 * m0 / (total_t / n);
    let s2 = ((spread - n * m0) / total_t).max(floor);
    (m0 * m0 / s2, m0 / s2)
}

/// Conjugate gamma update `(α + k, β + τ)`.
pub fn posterior_rate(prior: PGParams, k: u64, tau: f64) -> Result<PGParams> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(domain(format!("exposure must be >= 0, got {tau}")));
    }
    PGParams::new(prior.shape + k as f64, prior.rate + tau)
}

/// Counts and exposures over `(t0, t1]` with effective exposure `R_i(t0, t1, u_i)`.
pub fn enrollment_data(events: &[CentreEvents], r: &RateFunction, t0: f64, t1: f64) -> Result<EnrollmentData> {
    if !(t0 < t1) {
        return Err(domain(format!("window [{t0}, {t1}] is empty")));
    }
    let records = events
        .iter()
        .map(|c| EnrollmentRecord {
            centre_id: c.id.clone(),
            count: c.count_in(t0, t1),
            exposure: cumulative_rate_factor(r, t0, t1, c.activation_day),
        })
        .collect();
    let data = EnrollmentData::new(records)?;
    if data.total_exposure() <= 0.0 {
        return Err(Error::EmptyWindow { start: t0, end: t1 });
    }
    Ok(data)
}

/// Counts and plain window durations over the last `window_length` days
/// before `interim_t`.
pub fn restrict_window(events: &[CentreEvents], interim_t: f64, window_length: f64) -> Result<EnrollmentData> {
    check_positive("window length", window_length)?;
    let t0 = interim_t - window_length;
    let records = events
        .iter()
        .map(|c| EnrollmentRecord {
            centre_id: c.id.clone(),
            count: c.count_in(t0, interim_t),
            exposure: recruitment_window(t0, interim_t, c.activation_day),
        })
        .collect();
    let data = EnrollmentData::new(records)?;
    if data.total_exposure() <= 0.0 {
        return Err(Error::EmptyWindow { start: t0, end: interim_t });
    }
    Ok(data)
}

/// A rate function with `d` free parameters `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateFamily {
    /// Fully specified `r(t)`, `d = 0`.
    Known { rate: RateFunction },
    /// `r(t) = start·exp(−θ t)` up to `horizon_days`, then constant; `d = 1`.
    /// The scale `start` is fixed since it trades off against `1/β`.
    ExponentialDecay { start: f64, horizon_days: f64 },
}

impl RateFamily {
    pub fn dim(&self) -> usize {
        match self {
            RateFamily::Known { .. } => 0,
            RateFamily::ExponentialDecay { .. } => 1,
        }
    }

    pub fn instantiate(&self, theta: &[f64]) -> Result<RateFunction> {
        if theta.len() != self.dim() {
            return Err(domain(format!(
                "rate family takes {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        match self {
            RateFamily::Known { rate } => Ok(rate.clone()),
            RateFamily::ExponentialDecay { start, horizon_days } => {
                let end = start * (-theta[0] * horizon_days).exp();
                RateFunction::exponential_decay(*start, end, *horizon_days)
            }
        }
    }

    fn initial_thetas(&self) -> Vec<Vec<f64>> {
        match self {
            RateFamily::Known { .. } => vec![vec![]],
            RateFamily::ExponentialDecay { horizon_days, .. } => {
                [0.0, 1.0, 3.0].iter().map(|&x| vec![x / horizon_days]).collect()
            }
        }
    }
}

/// Joint fit of `(α, β, θ)` over the window `(t0, t1]`.
///
/// For `d > 0` the likelihood also uses how each centre's events spread
/// over days: given its total `k_i`, the daily counts are multinomial with
/// probabilities `e_d/τ_i`, where `e_d` is the exposure of day `d`. The
/// profile over `(α, β)` is maximised in `θ`. For `d = 0` this is
/// [`fit_pg`] on `R_i`-adjusted exposures.
pub fn fit_pg_timedep(events: &[CentreEvents], family: &RateFamily, window: (f64, f64)) -> Result<FitResult> {
    let (t0, t1) = window;
    if family.dim() == 0 {
        let r = family.instantiate(&[])?;
        return fit_pg(&enrollment_data(events, &r, t0, t1)?);
    }

    let daily: Vec<Vec<(u32, u64)>> = events.iter().map(|c| c.daily_counts(t0, t1)).collect();
    let profile = |theta: &[f64]| -> Result<FitResult> {
        let r = family.instantiate(theta)?;
        let data = enrollment_data(events, &r, t0, t1)?;
        let mut fit = fit_pg(&data)?;
        let mut alloc = 0.0;
        for ((c, days), rec) in events.iter().zip(&daily).zip(&data.records) {
            if rec.exposure <= 0.0 {
                continue;
            }
            for &(d, n) in days {
                let lo = (f64::from(d) - 1.0).max(t0);
                let e = cumulative_rate_factor(&r, lo, f64::from(d), c.activation_day);
                if e > 0.0 {
                    alloc += n as f64 * e.ln();
                }
            }
            if rec.count > 0 {
                alloc -= rec.count as f64 * rec.exposure.ln();
            }
        }
        fit.log_likelihood += alloc;
        fit.theta = theta.to_vec();
        Ok(fit)
    };

    let objective = |theta: &[f64]| profile(theta).map(|f| -f.log_likelihood).unwrap_or(f64::INFINITY);
    let nm = NelderMead { f_tol: 1e-8, max_iter: 400, step: 1.0 / 400.0 };
    let mut best: Option<(Vec<f64>, f64, bool, usize)> = None;
    for start in family.initial_thetas() {
        let step = match family {
            RateFamily::ExponentialDecay { horizon_days, .. } => 1.0 / horizon_days,
            RateFamily::Known { .. } => nm.step,
        };
        let m = NelderMead { step, ..nm }.minimize(objective, &start);
        if best.as_ref().is_none_or(|b| m.f < b.1) {
            best = Some((m.x, m.f, m.converged, m.iterations));
        }
    }
    let (theta, _, converged, iterations) = best.expect("at least one start");
    let mut fit = profile(&theta)?;
    fit.converged &= converged;
    fit.iterations += iterations;
    let first = events.first().map(|c| recruitment_window(t0, t1, c.activation_day));
    if events.iter().all(|c| Some(recruitment_window(t0, t1, c.activation_day)) == first) {
        fit.warnings.push(
            "all centres share one window: rate parameters are identified only through event timing"
                .to_string(),
        );
    }
    Ok(fit)
}
