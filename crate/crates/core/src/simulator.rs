//! Daily simulation of time-dependent Poisson-gamma recruitment.
//!
//! Each centre draws `λ_i ~ Gamma(α_i, β_i)` once. Day `d` covers
//! `(d−1, d]` and carries exposure `e_d = R_i(d−1, d, u_i)`, so the daily
//! count is `Poisson(λ_i·e_d)`. Sampling uses the equivalent form: a
//! `Poisson(λ_i·Σe_d)` total spread over days with probabilities
//! proportional to `e_d`.
//!
//! Centre `c` in run `k` draws from a ChaCha8 stream keyed by the seed and
//! the centre id, at stream position `k`. Reordering or adding centres does
//! not change the draws of the others.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::pg_quantile;
use crate::error::{check_probability_open, domain, Error, Result};
use crate::estimation::CentreEvents;
use crate::forecast::region_moments;
use crate::rate::{CentreProfile, RateFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub centres: Vec<CentreProfile>,
    pub rate: RateFunction,
    /// Rate functions overriding `rate` for centres of a group.
    #[serde(default)]
    pub group_rates: BTreeMap<String, RateFunction>,
    pub horizon: u32,
    pub target: u64,
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(centres: Vec<CentreProfile>, rate: RateFunction, horizon: u32, target: u64, seed: u64) -> Self {
        Self { centres, rate, group_rates: BTreeMap::new(), horizon, target, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centres.is_empty() {
            return Err(Error::NoCentres);
        }
        if self.horizon < 1 {
            return Err(domain("horizon must be >= 1 day"));
        }
        if self.target < 1 {
            return Err(domain("target must be >= 1"));
        }
        self.rate.validate()?;
        for r in self.group_rates.values() {
            r.validate()?;
        }
        let mut seen = HashSet::new();
        for c in &self.centres {
            if !seen.insert(c.id.as_str()) {
                return Err(domain(format!("duplicate centre id {}", c.id)));
            }
        }
        Ok(())
    }

    /// The rate function that applies to `centre`.
    pub fn rate_for(&self, centre: &CentreProfile) -> &RateFunction {
        centre
            .group
            .as_ref()
            .and_then(|g| self.group_rates.get(g))
            .unwrap_or(&self.rate)
    }
}

/// Per-centre cumulative daily counts, `centres × horizon`, row-major.
/// Column `d − 1` holds the count up to the end of day `d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMatrix {
    pub ids: Vec<String>,
    pub horizon: u32,
    pub cumulative: Vec<u32>,
}

impl TrajectoryMatrix {
    pub fn n_centres(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let t = self.horizon as usize;
        &self.cumulative[i * t..(i + 1) * t]
    }

    /// Global cumulative count per day.
    pub fn global(&self) -> Vec<u64> {
        let t = self.horizon as usize;
        let mut out = vec![0u64; t];
        for i in 0..self.n_centres() {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += u64::from(v);
            }
        }
        out
    }

    /// Expands the matrix into per-centre event days.
    pub fn to_events(&self, centres: &[CentreProfile]) -> Vec<CentreEvents> {
        centres
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut days = Vec::new();
                let mut prev = 0;
                for (d, &v) in self.row(i).iter().enumerate() {
                    days.extend(std::iter::repeat_n(d as u32 + 1, (v - prev) as usize));
                    prev = v;
                }
                CentreEvents {
                    id: c.id.clone(),
                    group: c.group.clone(),
                    activation_day: c.activation_day,
                    event_days: days,
                }
            })
            .collect()
    }
}

/// Poisson sample; inversion for small means.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 12.0 {
        let limit = (-mean).exp();
        let mut k = 0;
        let mut prod: f64 = rng.random();
        while prod > limit {
            k += 1;
            prod *= rng.random::<f64>();
        }
        return k;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn centre_rng(seed: u64, id: &str, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(id.as_bytes()));
    rng.set_stream(run);
    rng
}

/// Cumulative exposure `R(0, d, u)` for `d = 0..=horizon`.
fn cumulative_exposure(c: &CentreProfile, r: &RateFunction, horizon: u32) -> Vec<f64> {
    (0..=horizon).map(|d| c.exposure(r, 0.0, f64::from(d))).collect()
}

struct Plan {
    centres: Vec<(CentreProfile, Vec<f64>)>,
}

impl Plan {
    fn new(config: &TrialConfig) -> Self {
        Plan {
            centres: config
                .centres
                .iter()
                .map(|c| (c.clone(), cumulative_exposure(c, config.rate_for(c), config.horizon)))
                .collect(),
        }
    }

    /// Event days of centre `i` in `run`, unsorted.
    fn draw(&self, seed: u64, i: usize, run: u64, out: &mut Vec<u32>) {
        let (c, cum) = &self.centres[i];
        let mut rng = centre_rng(seed, &c.id, run);
        let total = cum[cum.len() - 1];
        if total <= 0.0 {
            return;
        }
        let lambda = Gamma::new(c.shape, 1.0 / c.rate).expect("validated gamma").sample(&mut rng);
        let k = sample_poisson(&mut rng, lambda * total);
        for _ in 0..k {
            let x = rng.random::<f64>() * total;
            // first day whose cumulative exposure reaches x
            let d = cum.partition_point(|&v| v < x).max(1);
            out.push(d as u32);
        }
    }
}

fn trial_run(config: &TrialConfig, plan: &Plan, run: u64) -> TrajectoryMatrix {
    let t = config.horizon as usize;
    let mut cumulative = vec![0u32; plan.centres.len() * t];
    let mut days = Vec::new();
    for i in 0..plan.centres.len() {
        days.clear();
        plan.draw(config.seed, i, run, &mut days);
        let row = &mut cumulative[i * t..(i + 1) * t];
        for &d in &days {
            row[d as usize - 1] += 1;
        }
        for j in 1..t {
            row[j] += row[j - 1];
        }
    }
    TrajectoryMatrix { ids: config.centres.iter().map(|c| c.id.clone()).collect(), horizon: config.horizon, cumulative }
}

/// One trial realisation (run 0).
pub fn simulate_trial(config: &TrialConfig) -> Result<TrajectoryMatrix> {
    simulate_trial_run(config, 0)
}

/// Realisation number `run`.
pub fn simulate_trial_run(config: &TrialConfig, run: u64) -> Result<TrajectoryMatrix> {
    config.validate()?;
    Ok(trial_run(config, &Plan::new(config), run))
}

fn global_run(config: &TrialConfig, plan: &Plan, run: u64) -> Vec<u32> {
    let t = config.horizon as usize;
    let mut daily = vec![0u32; t];
    let mut days = Vec::new();
    for i in 0..plan.centres.len() {
        days.clear();
        plan.draw(config.seed, i, run, &mut days);
        for &d in &days {
            daily[d as usize - 1] += 1;
        }
    }
    for j in 1..t {
        daily[j] += daily[j - 1];
    }
    daily
}

/// Global cumulative trajectories of `runs` realisations, in run order.
pub fn simulate_global_trajectories(config: &TrialConfig, runs: usize) -> Result<Vec<Vec<u32>>> {
    config.validate()?;
    let plan = Plan::new(config);
    Ok((0..runs as u64).into_par_iter().map(|k| global_run(config, &plan, k)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Days `1..=horizon`.
    pub days: Vec<u32>,
    pub mean: Vec<f64>,
    pub median: Vec<u64>,
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
    pub confidence: f64,
    /// First day each run reaches the target; `None` if not within the horizon.
    pub completion_days: Vec<Option<u32>>,
    pub deadline: u32,
    pub prob_success: f64,
    pub runs: usize,
}

impl EnsembleSummary {
    /// Share of runs that reach the target within the horizon.
    pub fn completed_fraction(&self) -> f64 {
        self.completion_days.iter().filter(|d| d.is_some()).count() as f64 / self.runs as f64
    }

    /// Empirical quantile of the completion day, counting censored runs as
    /// later than the horizon (`None` if the quantile falls there).
    pub fn completion_quantile(&self, p: f64) -> Option<u32> {
        let mut days: Vec<u32> = self.completion_days.iter().map(|d| d.unwrap_or(u32::MAX)).collect();
        days.sort_unstable();
        let v = days[nearest_rank(days.len(), p)];
        (v != u32::MAX).then_some(v)
    }
}

fn nearest_rank(n: usize, p: f64) -> usize {
    ((p * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Summary of `runs` realisations. `deadline` defaults to the horizon.
pub fn simulate_ensemble(
    config: &TrialConfig,
    runs: usize,
    confidence: f64,
    deadline: Option<u32>,
) -> Result<EnsembleSummary> {
    check_probability_open("confidence", confidence)?;
    if runs == 0 {
        return Err(domain("runs must be >= 1"));
    }
    let deadline = deadline.unwrap_or(config.horizon);
    if deadline < 1 || deadline > config.horizon {
        return Err(domain(format!("deadline must lie in [1, {}], got {deadline}", config.horizon)));
    }
    let traj = simulate_global_trajectories(config, runs)?;
    let t = config.horizon as usize;
    let mut mean = vec![0.0; t];
    let mut median = Vec::with_capacity(t);
    let mut lower = Vec::with_capacity(t);
    let mut upper = Vec::with_capacity(t);
    let mut column = vec![0u32; runs];
    for d in 0..t {
        for (c, tr) in column.iter_mut().zip(&traj) {
            *c = tr[d];
        }
        mean[d] = column.iter().map(|&v| f64::from(v)).sum::<f64>() / runs as f64;
        column.sort_unstable();
        median.push(u64::from(column[nearest_rank(runs, 0.5)]));
        lower.push(u64::from(column[nearest_rank(runs, (1.0 - confidence) / 2.0)]));
        upper.push(u64::from(column[nearest_rank(runs, (1.0 + confidence) / 2.0)]));
    }
    let target = config.target;
    let completion_days: Vec<Option<u32>> = traj
        .iter()
        .map(|tr| tr.iter().position(|&v| u64::from(v) >= target).map(|i| i as u32 + 1))
        .collect();
    let prob_success = completion_days.iter().filter(|d| d.is_some_and(|d| d <= deadline)).count() as f64
        / runs as f64;
    Ok(EnsembleSummary {
        days: (1..=config.horizon).collect(),
        mean,
        median,
        lower,
        upper,
        confidence,
        completion_days,
        deadline,
        prob_success,
        runs,
    })
}

/// Horizon long enough for nearly every run to reach `target`: the first
/// day whose 0.001 count quantile reaches the target, times 1.25.
pub fn suggest_horizon(centres: &[CentreProfile], r: &RateFunction, target: u64) -> Result<u32> {
    const CAP: u32 = 100 * 365;
    let reached = |d: u32| -> Result<bool> {
        let m = region_moments(centres, r, f64::from(d))?;
        if m.mean == 0.0 {
            return Ok(false);
        }
        Ok(pg_quantile(0.001, m)? >= target)
    };
    let (mut lo, mut hi) = (0u32, 1u32);
    while !reached(hi)? {
        lo = hi;
        hi = hi.saturating_mul(2);
        if hi > CAP {
            return Err(Error::SearchBoundExceeded { bound: u64::from(CAP) });
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reached(mid)? { hi = mid } else { lo = mid }
    }
    Ok((f64::from(hi) * 1.25).ceil() as u32)
}

/// Fresh 64-bit seed drawn from `seed` and `index`, for replicated studies.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}
