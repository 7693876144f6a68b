//! Tests of equal mean recruitment rates over two disjoint intervals.
//!
//! Interval `j` has `n_j` patients over total active window `U_j`. Under
//! equal rates, `n_1` given `n = n_1 + n_2` is `Bin(n, U_1/(U_1+U_2))`. The
//! upper P-value is small when the rate dropped from interval 1 to 2.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    binomial_cdf, binomial_sf, normal_cdf, normal_quantile, pg_cdf, pg_sf, poisson_cdf, poisson_sf, PGParams,
};
use crate::error::{check_positive, check_probability_open, domain, Error, Result};
use crate::estimation::{fit_pg, CentreEvents, EnrollmentData, EnrollmentRecord};
use crate::rate::recruitment_window;

pub const DEFAULT_DELTA: f64 = 0.1;

/// Counts and active windows in one interval `(start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalData {
    pub start: f64,
    pub end: f64,
    pub n: u64,
    /// Total active recruitment window `U` in centre-days.
    pub exposure: f64,
    /// Per-centre `(k_i, v_i)`, in a centre order shared across intervals.
    pub per_centre: Option<Vec<(u64, f64)>>,
}

impl IntervalData {
    /// Totals only.
    pub fn totals(n: u64, exposure: f64) -> Self {
        Self { start: 0.0, end: 0.0, n, exposure, per_centre: None }
    }

    /// Totals derived from per-centre data.
    pub fn from_centres(per_centre: Vec<(u64, f64)>) -> Self {
        let n = per_centre.iter().map(|c| c.0).sum();
        let exposure = per_centre.iter().map(|c| c.1).sum();
        Self { start: 0.0, end: 0.0, n, exposure, per_centre: Some(per_centre) }
    }
}

/// Per-centre counts and windows over `(a, b]`.
pub fn interval_totals(events: &[CentreEvents], a: f64, b: f64) -> Result<IntervalData> {
    if !(a < b) {
        return Err(domain(format!("interval [{a}, {b}] is empty")));
    }
    let per: Vec<(u64, f64)> = events
        .iter()
        .map(|c| (c.count_in(a, b), recruitment_window(a, b, c.activation_day)))
        .collect();
    Ok(IntervalData { start: a, end: b, ..IntervalData::from_centres(per) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    PoissonNonparametric,
    PoissonParametric,
    PoissonGamma,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::PoissonNonparametric => "poisson-nonparametric",
            TestKind::PoissonParametric => "poisson-parametric",
            TestKind::PoissonGamma => "poisson-gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    RateDecreased,
    RateIncreased,
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub p_upper: f64,
    pub p_lower: f64,
    pub delta: f64,
    pub verdict: Verdict,
}

impl TestReport {
    fn new(kind: TestKind, p_upper: f64, p_lower: f64, delta: f64) -> Self {
        let verdict = if p_upper <= delta {
            Verdict::RateDecreased
        } else if p_lower <= delta {
            Verdict::RateIncreased
        } else {
            Verdict::NoEvidence
        };
        Self { kind, p_upper, p_lower, delta, verdict }
    }
}

fn split(d1: &IntervalData, d2: &IntervalData) -> Result<f64> {
    if !(d1.exposure > 0.0) || !(d2.exposure > 0.0) {
        return Err(Error::DegenerateTest(format!(
            "both intervals need positive active time, got {} and {}",
            d1.exposure, d2.exposure
        )));
    }
    Ok(d1.exposure / (d1.exposure + d2.exposure))
}

/// Upper and lower P-values of the binomial (conditional) test.
pub fn nonparametric_pvalues(n1: u64, n2: u64, u1: f64, u2: f64) -> Result<(f64, f64)> {
    let p = u1 / (u1 + u2);
    let n = n1 + n2;
    Ok((binomial_sf(n1, n, p)?, binomial_cdf(n1, n, p)?))
}

/// Upper and lower P-values of the test with the rate estimated on the union.
pub fn parametric_pvalues(n1: u64, n2: u64, u1: f64, u2: f64) -> Result<(f64, f64)> {
    let mean = (n1 + n2) as f64 * u1 / (u1 + u2);
    if mean == 0.0 {
        return Ok((if n1 == 0 { 1.0 } else { 0.0 }, 1.0));
    }
    Ok((poisson_sf(n1, mean)?, poisson_cdf(n1, mean)?))
}

pub fn poisson_nonparametric_test(d1: &IntervalData, d2: &IntervalData, delta: f64) -> Result<TestReport> {
    check_probability_open("delta", delta)?;
    split(d1, d2)?;
    let (up, low) = nonparametric_pvalues(d1.n, d2.n, d1.exposure, d2.exposure)?;
    Ok(TestReport::new(TestKind::PoissonNonparametric, up, low, delta))
}

pub fn poisson_parametric_test(d1: &IntervalData, d2: &IntervalData, delta: f64) -> Result<TestReport> {
    check_probability_open("delta", delta)?;
    split(d1, d2)?;
    let (up, low) = parametric_pvalues(d1.n, d2.n, d1.exposure, d2.exposure)?;
    Ok(TestReport::new(TestKind::PoissonParametric, up, low, delta))
}

/// Upper and lower P-values of interval 1 under a PG model fitted to the
/// union. `c1[i]` and `c2[i]` are `(k, v)` of the same centre.
pub fn pg_pvalues(c1: &[(u64, f64)], c2: &[(u64, f64)]) -> Result<(f64, f64)> {
    if c1.len() != c2.len() {
        return Err(domain("per-centre data of the two intervals differ in length"));
    }
    let union = EnrollmentData::new(
        c1.iter()
            .zip(c2)
            .enumerate()
            .map(|(i, (a, b))| EnrollmentRecord {
                centre_id: i.to_string(),
                count: a.0 + b.0,
                exposure: a.1 + b.1,
            })
            .collect(),
    )?;
    let fit = fit_pg(&union)?;
    let (m, s2) = (fit.mean_rate(), fit.rate_variance());
    let sum_v: f64 = c1.iter().map(|c| c.1).sum();
    let sum_v2: f64 = c1.iter().map(|c| c.1 * c.1).sum();
    let (e, var) = (m * sum_v, s2 * sum_v2);
    if !(var > 0.0) || !(e > 0.0) {
        return Err(Error::DegenerateTest("zero variance in interval 1".into()));
    }
    let params = PGParams::new(e * e / var, e / var)?;
    let n1: u64 = c1.iter().map(|c| c.0).sum();
    Ok((pg_sf(n1, params, 1.0)?, pg_cdf(n1, params, 1.0)?))
}

pub fn pg_test(d1: &IntervalData, d2: &IntervalData, delta: f64) -> Result<TestReport> {
    check_probability_open("delta", delta)?;
    let (Some(c1), Some(c2)) = (&d1.per_centre, &d2.per_centre) else {
        return Err(Error::DegenerateTest("the PG test needs per-centre data in both intervals".into()));
    };
    split(d1, d2)?;
    let (up, low) = pg_pvalues(c1, c2)?;
    Ok(TestReport::new(TestKind::PoissonGamma, up, low, delta))
}

pub fn run_test(kind: TestKind, d1: &IntervalData, d2: &IntervalData, delta: f64) -> Result<TestReport> {
    match kind {
        TestKind::PoissonNonparametric => poisson_nonparametric_test(d1, d2, delta),
        TestKind::PoissonParametric => poisson_parametric_test(d1, d2, delta),
        TestKind::PoissonGamma => pg_test(d1, d2, delta),
    }
}

fn centres_formula(c: f64, q: f64, m1: f64, l: f64, delta: f64) -> Result<f64> {
    check_probability_open("q", q)?;
    check_positive("m1", m1)?;
    check_positive("L", l)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(domain(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    let z = normal_quantile(delta)?;
    Ok(c * z * z / (m1 * l) * (1.0 + q) / ((1.0 - q) * (1.0 - q)))
}

/// Unrounded centre count from the normal approximation of the binomial test.
pub fn required_centres_nonparam_exact(q: f64, m1: f64, l: f64, delta: f64) -> Result<f64> {
    centres_formula(2.0, q, m1, l, delta)
}

/// Unrounded centre count for the parametric test.
pub fn required_centres_param_exact(q: f64, m1: f64, l: f64, delta: f64) -> Result<f64> {
    centres_formula(3.0, q, m1, l, delta)
}

/// Centres per interval for the binomial test to reach level `delta` on
/// average, both intervals of length `l`.
pub fn required_centres_nonparam(q: f64, m1: f64, l: f64, delta: f64) -> Result<u64> {
    Ok(required_centres_nonparam_exact(q, m1, l, delta)?.ceil() as u64)
}

pub fn required_centres_param(q: f64, m1: f64, l: f64, delta: f64) -> Result<u64> {
    Ok(required_centres_param_exact(q, m1, l, delta)?.ceil() as u64)
}

/// `E[X]` for `X = Bin(π_1+π_2, p) − π_1`; identical for the parametric statistic.
pub fn statistic_mean(m1: f64, m2: f64, u1: f64, u2: f64) -> f64 {
    u1 * u2 / (u1 + u2) * (m2 - m1)
}

/// `Var[X]` for the binomial statistic.
pub fn nonparametric_variance(m1: f64, m2: f64, u1: f64, u2: f64) -> f64 {
    u1 * u2 / (u1 + u2) * (m1 + m2)
}

/// `Var[X_2]` for `X_2 = Π((π_1+π_2)p) − π_1`.
pub fn parametric_variance(m1: f64, m2: f64, u1: f64, u2: f64) -> f64 {
    let u = u1 + u2;
    (m1 * u1 * (u1 * u + u2 * u2) + m2 * u1 * u2 * (2.0 * u1 + u2)) / (u * u)
}

/// Normal approximation of the expected-case upper P-value.
pub fn normal_approx_pupp(m1: f64, m2: f64, u1: f64, u2: f64, kind: TestKind) -> Result<f64> {
    for (name, v) in [("m1", m1), ("m2", m2), ("U1", u1), ("U2", u2)] {
        check_positive(name, v)?;
    }
    let var = match kind {
        TestKind::PoissonNonparametric => nonparametric_variance(m1, m2, u1, u2),
        TestKind::PoissonParametric => parametric_variance(m1, m2, u1, u2),
        TestKind::PoissonGamma => {
            return Err(domain("no normal approximation for the PG test"));
        }
    };
    Ok(normal_cdf(statistic_mean(m1, m2, u1, u2) / var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    #[test]
    fn binomial_test_examples() {
        let r = poisson_nonparametric_test(&IntervalData::totals(5, 90.0), &IntervalData::totals(5, 90.0), 0.1)
            .unwrap();
        assert!((r.p_upper - 638.0 / 1024.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::NoEvidence);

        let r = poisson_nonparametric_test(&IntervalData::totals(0, 30.0), &IntervalData::totals(7, 60.0), 0.1)
            .unwrap();
        assert_eq!(r.p_upper, 1.0);
        assert!((r.p_lower - (2.0f64 / 3.0).powi(7)).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::RateIncreased);

        assert!(matches!(
            poisson_nonparametric_test(&IntervalData::totals(1, 0.0), &IntervalData::totals(1, 5.0), 0.1),
            Err(Error::DegenerateTest(_))
        ));
    }

    #[test]
    fn parametric_test_examples() {
        let d = IntervalData::totals(5, 90.0);
        let r = poisson_parametric_test(&d, &d, 0.1).unwrap();
        let oracle = 1.0 - (0..5).map(|j| (-5f64).exp() * 5f64.powi(j) / (1..=j).product::<i32>() as f64).sum::<f64>();
        assert!((r.p_upper - oracle).abs() < 1e-12);
        assert!((r.p_upper - 0.55951).abs() < 1e-5);

        let z = IntervalData::totals(0, 90.0);
        let r = poisson_parametric_test(&z, &z, 0.1).unwrap();
        assert_eq!((r.p_upper, r.p_lower), (1.0, 1.0));
    }

    #[test]
    fn parametric_is_more_conservative_above_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        for _ in 0..2000 {
            let u1 = 10.0 + 500.0 * rand::Rng::random::<f64>(&mut rng);
            let u2 = 10.0 + 500.0 * rand::Rng::random::<f64>(&mut rng);
            let n1 = Poisson::new(u1 * 0.05).unwrap().sample(&mut rng) as u64;
            let n2 = Poisson::new(u2 * 0.03).unwrap().sample(&mut rng) as u64;
            let n = (n1 + n2) as f64;
            // within one count of the mean the discrete tails can cross
            if (n1 as f64) < n * u1 / (u1 + u2) + 1.0 {
                continue;
            }
            checked += 1;
            let np = nonparametric_pvalues(n1, n2, u1, u2).unwrap().0;
            let pp = parametric_pvalues(n1, n2, u1, u2).unwrap().0;
            assert!(pp >= np, "n1={n1} n2={n2}: {pp} < {np}");
        }
        assert!(checked > 500);
    }

    #[test]
    fn interval_totals_recount() {
        let events = vec![
            CentreEvents::new("a", 0.0, vec![81, 90, 140, 141]),
            CentreEvents::new("b", 100.0, vec![120, 200]),
            CentreEvents::new("c", 150.0, vec![151]),
        ];
        let d = interval_totals(&events, 80.0, 140.0).unwrap();
        assert_eq!(d.per_centre.as_deref(), Some(&[(3, 60.0), (1, 40.0), (0, 0.0)][..]));
        assert_eq!((d.n, d.exposure), (4, 100.0));
        let late = interval_totals(&events[2..], 80.0, 140.0).unwrap();
        assert_eq!((late.n, late.exposure), (0, 0.0));
        let full = interval_totals(&events[..1], 0.0, 90.0).unwrap();
        assert_eq!(full.exposure, 90.0);
    }

    #[test]
    fn pg_test_is_symmetric_under_h0() {
        // identical intervals: interval 1 sits at the centre of its distribution
        let c: Vec<(u64, f64)> = (0..60).map(|i| ((i % 9) as u64, 90.0)).collect();
        let (up, low) = pg_pvalues(&c, &c).unwrap();
        assert!((up - 0.5).abs() < 0.1 && (low - 0.5).abs() < 0.1, "{up} {low}");
        assert!(up + low >= 1.0);
    }

    #[test]
    fn pg_test_requires_per_centre_data() {
        let d = IntervalData::totals(3, 10.0);
        assert!(matches!(pg_test(&d, &d, 0.1), Err(Error::DegenerateTest(_))));
    }

    #[test]
    fn required_centres_formulas() {
        let np = required_centres_nonparam_exact(0.5, 0.04, 90.0, 0.1).unwrap();
        assert!((np - 5.475).abs() < 1e-3, "{np}");
        assert_eq!(required_centres_nonparam(0.5, 0.04, 90.0, 0.1).unwrap(), 6);
        assert_eq!(required_centres_nonparam(0.9, 0.04, 90.0, 0.1).unwrap(), 174);
        assert_eq!(required_centres_param(0.5, 0.04, 90.0, 0.1).unwrap(), 9);
        assert_eq!(required_centres_param(0.7, 0.04, 90.0, 0.1).unwrap(), 26);
        let p = required_centres_param_exact(0.5, 0.04, 90.0, 0.1).unwrap();
        assert!((p / np - 1.5).abs() < 1e-14);
        assert!(required_centres_nonparam(1.0, 0.04, 90.0, 0.1).is_err());
        assert!(required_centres_nonparam(0.5, 0.04, 90.0, 0.6).is_err());
    }

    #[test]
    fn normal_approximation() {
        let p = normal_approx_pupp(0.04, 0.02, 630.0, 630.0, TestKind::PoissonNonparametric).unwrap();
        assert!((p - normal_cdf(-1.4491)).abs() < 1e-4);
        assert!((p - 0.0737).abs() < 1e-3);
        let pp = normal_approx_pupp(0.04, 0.02, 630.0, 630.0, TestKind::PoissonParametric).unwrap();
        assert!(pp > p);
        for kind in [TestKind::PoissonNonparametric, TestKind::PoissonParametric] {
            assert!((normal_approx_pupp(0.03, 0.03, 100.0, 300.0, kind).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn statistic_moments_by_monte_carlo() {
        let (m1, m2, u1, u2) = (0.04, 0.025, 400.0, 250.0);
        let p = u1 / (u1 + u2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 200_000;
        let (mut s, mut ss, mut s2, mut ss2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..runs {
            let n1 = Poisson::new(m1 * u1).unwrap().sample(&mut rng);
            let n2 = Poisson::new(m2 * u2).unwrap().sample(&mut rng);
            let n = (n1 + n2) as u64;
            let b = rand_distr::Binomial::new(n, p).unwrap().sample(&mut rng) as f64;
            let x = b - n1;
            let y = if n > 0 { Poisson::new(n as f64 * p).unwrap().sample(&mut rng) } else { 0.0 } - n1;
            s += x;
            ss += x * x;
            s2 += y;
            ss2 += y * y;
        }
        let r = runs as f64;
        let check = |sum: f64, sq: f64, mean: f64, var: f64| {
            let m = sum / r;
            let v = sq / r - m * m;
            assert!((m - mean).abs() < 3.0 * (var / r).sqrt(), "mean {m} vs {mean}");
            // standard error of a sample variance is about var·sqrt(2/r) for near-normal data
            assert!((v - var).abs() < 4.0 * var * (2.0 / r).sqrt(), "var {v} vs {var}");
        };
        let mean = statistic_mean(m1, m2, u1, u2);
        check(s, ss, mean, nonparametric_variance(m1, m2, u1, u2));
        check(s2, ss2, mean, parametric_variance(m1, m2, u1, u2));
    }

    proptest! {
        #[test]
        fn variance_gap(m1 in 0.001f64..1.0, m2 in 0.001f64..1.0, u1 in 1.0f64..1e4, u2 in 1.0f64..1e4) {
            let u = u1 + u2;
            let gap = parametric_variance(m1, m2, u1, u2) - nonparametric_variance(m1, m2, u1, u2);
            let closed = (u1.powi(3) * m1 + u1 * u1 * u2 * m2) / (u * u);
            prop_assert!((gap - closed).abs() <= 1e-10 * closed.max(1.0));
        }

        #[test]
        fn pvalues_cover_the_observation(n1 in 0u64..200, n2 in 0u64..200, u1 in 1.0f64..1e3, u2 in 1.0f64..1e3) {
            let (a, b) = nonparametric_pvalues(n1, n2, u1, u2).unwrap();
            prop_assert!(a + b >= 1.0 - 1e-12);
            let (a, b) = parametric_pvalues(n1, n2, u1, u2).unwrap();
            prop_assert!(a + b >= 1.0 - 1e-12);
        }

        #[test]
        fn required_centres_increase_in_q(q in 0.01f64..0.98, dq in 0.001f64..0.01) {
            let a = required_centres_nonparam_exact(q, 0.04, 90.0, 0.1).unwrap();
            let b = required_centres_nonparam_exact((q + dq).min(0.99), 0.04, 90.0, 0.1).unwrap();
            prop_assert!(b >= a);
        }
    }
}
