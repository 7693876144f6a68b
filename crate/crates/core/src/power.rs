//! Monte Carlo calibration and power of the homogeneity tests.
//!
//! Each run simulates interval 1 at rate `m1` and interval 2 twice: at `m1`
//! (H0) and at `q·m1` (H1). The statistic is the upper P-value. The level
//! threshold `a(δ)` is the largest observed H0 value whose empirical mass is
//! at most `δ`; power is the share of H1 runs at or below it.
//!
//! Run `i` draws from its own ChaCha8 stream, so results do not depend on
//! how runs are spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, check_probability_open, domain, Error, Result};
use crate::homogeneity::{nonparametric_pvalues, parametric_pvalues, pg_pvalues, TestKind};
use crate::simulator::sample_poisson;

pub const MIN_RUNS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerScenario {
    /// Interval-1 mean rate (patients/centre/day).
    pub m1: f64,
    /// Rate ratio under H1, `m2 = q·m1`.
    pub q: f64,
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
    pub delta: f64,
    /// Gamma shape of centre rates; `None` gives Poisson data with equal rates.
    pub shape: Option<f64>,
    pub runs: usize,
    pub seed: u64,
}

impl PowerScenario {
    /// Equal intervals and centre counts.
    pub fn symmetric(m1: f64, q: f64, l: f64, n: usize, delta: f64, runs: usize, seed: u64) -> Self {
        Self { m1, q, l1: l, l2: l, n1: n, n2: n, delta, shape: None, runs, seed }
    }

    pub fn with_shape(mut self, shape: f64) -> Self {
        self.shape = Some(shape);
        self
    }

    pub fn with_centres(mut self, n: usize) -> Self {
        self.n1 = n;
        self.n2 = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("m1", self.m1)?;
        check_probability_open("q", self.q)?;
        check_positive("L1", self.l1)?;
        check_positive("L2", self.l2)?;
        check_probability_open("delta", self.delta)?;
        if self.n1 == 0 || self.n2 == 0 {
            return Err(domain("centre counts must be >= 1"));
        }
        if let Some(a) = self.shape {
            check_positive("shape", a)?;
        }
        if self.runs < MIN_RUNS {
            return Err(domain(format!("runs must be >= {MIN_RUNS}, got {}", self.runs)));
        }
        Ok(())
    }

    fn rng(&self, run: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(run as u64);
        rng
    }
}

/// Counts of one run. Poisson data hold a single total per interval; PG
/// data hold one count per centre (interval 2 reuses the first `n2` centre
/// rates of interval 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub n1: Vec<u64>,
    pub n2_h0: Vec<u64>,
    pub n2_h1: Vec<u64>,
}

pub fn simulate_run(s: &PowerScenario, run: usize) -> RunCounts {
    let mut rng = s.rng(run);
    match s.shape {
        None => {
            let n1 = sample_poisson(&mut rng, s.m1 * s.n1 as f64 * s.l1);
            let h0 = sample_poisson(&mut rng, s.m1 * s.n2 as f64 * s.l2);
            let h1 = sample_poisson(&mut rng, s.q * s.m1 * s.n2 as f64 * s.l2);
            RunCounts { n1: vec![n1], n2_h0: vec![h0], n2_h1: vec![h1] }
        }
        Some(alpha) => {
            let gamma = Gamma::new(alpha, s.m1 / alpha).expect("validated shape");
            let rates: Vec<f64> = (0..s.n1.max(s.n2)).map(|_| gamma.sample(&mut rng)).collect();
            let n1 = rates[..s.n1].iter().map(|&l| sample_poisson(&mut rng, l * s.l1)).collect();
            let n2_h0 = rates[..s.n2].iter().map(|&l| sample_poisson(&mut rng, l * s.l2)).collect();
            let n2_h1 = rates[..s.n2]
                .iter()
                .map(|&l| sample_poisson(&mut rng, s.q * l * s.l2))
                .collect();
            RunCounts { n1, n2_h0, n2_h1 }
        }
    }
}

/// Counts of all runs, in run order.
pub fn simulate_interval_counts(s: &PowerScenario) -> Result<Vec<RunCounts>> {
    s.validate()?;
    Ok((0..s.runs).into_par_iter().map(|i| simulate_run(s, i)).collect())
}

fn upper_pvalue(s: &PowerScenario, kind: TestKind, c1: &[u64], c2: &[u64]) -> Result<f64> {
    let (u1, u2) = (s.n1 as f64 * s.l1, s.n2 as f64 * s.l2);
    let (t1, t2) = (c1.iter().sum::<u64>(), c2.iter().sum::<u64>());
    match kind {
        TestKind::PoissonNonparametric => Ok(nonparametric_pvalues(t1, t2, u1, u2)?.0),
        TestKind::PoissonParametric => Ok(parametric_pvalues(t1, t2, u1, u2)?.0),
        TestKind::PoissonGamma => {
            if c1.len() != s.n1 || c2.len() != s.n2 {
                return Err(domain("the PG test needs per-centre counts (set a gamma shape)"));
            }
            let n = s.n1.max(s.n2);
            let per = |c: &[u64], l: f64| -> Vec<(u64, f64)> {
                (0..n).map(|i| c.get(i).map_or((0, 0.0), |&k| (k, l))).collect()
            };
            match pg_pvalues(&per(c1, s.l1), &per(c2, s.l2)) {
                Ok((up, _)) => Ok(up),
                // nothing observed in either interval: no evidence either way
                Err(Error::AllZeroCounts) => Ok(1.0),
                Err(e) => Err(e),
            }
        }
    }
}

/// Upper P-values under H0 and H1, one per run.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistics {
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
}

pub fn simulate_statistics(s: &PowerScenario, kind: TestKind) -> Result<Statistics> {
    s.validate()?;
    let pairs: Vec<(f64, f64)> = (0..s.runs)
        .into_par_iter()
        .map(|i| {
            let c = simulate_run(s, i);
            Ok((upper_pvalue(s, kind, &c.n1, &c.n2_h0)?, upper_pvalue(s, kind, &c.n1, &c.n2_h1)?))
        })
        .collect::<Result<_>>()?;
    let (h0, h1) = pairs.into_iter().unzip();
    Ok(Statistics { h0, h1 })
}

/// Mean H1 upper P-value and its standard error.
pub fn mean_pvalue_h1(s: &PowerScenario, kind: TestKind) -> Result<(f64, f64)> {
    s.validate()?;
    let h1: Vec<f64> = (0..s.runs)
        .into_par_iter()
        .map(|i| {
            let c = simulate_run(s, i);
            upper_pvalue(s, kind, &c.n1, &c.n2_h1)
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_stderr(&h1))
}

/// Largest observed value `v` with `#{x <= v}/len <= delta`; `0` when even
/// the smallest value carries more mass than `delta`.
pub fn empirical_threshold(values: &[f64], delta: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut best = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        if j as f64 / n <= delta {
            best = v;
        } else {
            break;
        }
        i = j;
    }
    best
}

pub fn calibrate_threshold(s: &PowerScenario, kind: TestKind) -> Result<f64> {
    Ok(empirical_threshold(&simulate_statistics(s, kind)?.h0, s.delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub centres: usize,
    pub q: f64,
    pub a_delta: f64,
    pub pvalue_h0: f64,
    pub pvalue_h1: f64,
    pub power: f64,
    pub stderr_pvalue_h0: f64,
    pub stderr_pvalue_h1: f64,
    pub stderr_power: f64,
    pub runs: usize,
}

fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn summarise(s: &PowerScenario, stats: &Statistics, a_delta: f64) -> PowerResult {
    let (p0, e0) = mean_and_stderr(&stats.h0);
    let (p1, e1) = mean_and_stderr(&stats.h1);
    let power = stats.h1.iter().filter(|&&t| t <= a_delta).count() as f64 / stats.h1.len() as f64;
    PowerResult {
        centres: s.n1,
        q: s.q,
        a_delta,
        pvalue_h0: p0,
        pvalue_h1: p1,
        power,
        stderr_pvalue_h0: e0,
        stderr_pvalue_h1: e1,
        stderr_power: (power * (1.0 - power) / stats.h1.len() as f64).sqrt(),
        runs: stats.h1.len(),
    }
}

/// Power at a given threshold.
pub fn estimate_power(s: &PowerScenario, kind: TestKind, a_delta: f64) -> Result<PowerResult> {
    Ok(summarise(s, &simulate_statistics(s, kind)?, a_delta))
}

/// Calibration and power from one set of runs.
pub fn power_analysis(s: &PowerScenario, kind: TestKind) -> Result<PowerResult> {
    let stats = simulate_statistics(s, kind)?;
    let a = empirical_threshold(&stats.h0, s.delta);
    Ok(summarise(s, &stats, a))
}

/// Smallest `n` in `[lo, bound]` with `pass(n)`, assuming `pass` is monotone:
/// doubling bracket, then bisection.
fn search_centres(lo: usize, bound: usize, mut pass: impl FnMut(usize) -> Result<bool>) -> Result<usize> {
    let mut fail = lo - 1;
    let mut n = lo;
    loop {
        if pass(n)? {
            break;
        }
        if n >= bound {
            return Err(Error::SearchBoundExceeded { bound: bound as u64 });
        }
        fail = n;
        n = (n * 2).min(bound);
    }
    let mut ok = n;
    while ok - fail > 1 {
        let mid = fail + (ok - fail) / 2;
        if pass(mid)? {
            ok = mid;
        } else {
            fail = mid;
        }
    }
    Ok(ok)
}

fn min_centres(kind: TestKind) -> usize {
    if kind == TestKind::PoissonGamma { 2 } else { 1 }
}

/// Smallest centre count per interval with `E[T_H1] <= δ`.
pub fn min_centres_for_pvalue(template: &PowerScenario, kind: TestKind, bound: usize) -> Result<usize> {
    search_centres(min_centres(kind), bound, |n| {
        let s = template.clone().with_centres(n);
        Ok(mean_pvalue_h1(&s, kind)?.0 <= s.delta)
    })
}

/// Smallest centre count per interval whose calibrated power reaches `target`.
pub fn min_centres_for_power(
    template: &PowerScenario,
    kind: TestKind,
    target: f64,
    bound: usize,
) -> Result<(usize, PowerResult)> {
    check_probability_open("target power", target)?;
    let n = search_centres(min_centres(kind), bound, |n| {
        Ok(power_analysis(&template.clone().with_centres(n), kind)?.power >= target)
    })?;
    Ok((n, power_analysis(&template.clone().with_centres(n), kind)?))
}
