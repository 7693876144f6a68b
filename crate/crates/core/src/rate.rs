//! Time modulation of recruitment rates and the exposure geometry built on it.
//!
//! A centre activated at day `u` with baseline rate `λ` recruits with
//! intensity `λ·r(t)` for `t > u`. The effective exposure over `[a, b]` is
//! `R(a, b, u) = ∫_a^b r(x)·1{u < x} dx`.
//!
//! Exponential decay is held at its end multiplier past the horizon. For
//! `t < 0` every variant returns its value at `t = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, domain, Result};

/// Shared time multiplier `r(t)` applied to every baseline rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateFunction {
    /// `r ≡ 1`.
    #[default]
    Constant,
    /// Linear interpolation between `(day, multiplier)` breakpoints, flat
    /// outside the first and last breakpoint.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)> },
    /// `start·(end/start)^(t/horizon)` up to `horizon_days`, then `end`.
    ExponentialDecay {
        start: f64,
        end: f64,
        horizon_days: f64,
    },
}


impl RateFunction {
    pub fn piecewise_linear(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let r = RateFunction::PiecewiseLinear { breakpoints };
        r.validate()?;
        Ok(r)
    }

    pub fn exponential_decay(start: f64, end: f64, horizon_days: f64) -> Result<Self> {
        let r = RateFunction::ExponentialDecay {
            start,
            end,
            horizon_days,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RateFunction::Constant => Ok(()),
            RateFunction::PiecewiseLinear { breakpoints } => {
                if breakpoints.is_empty() {
                    return Err(domain("piecewise-linear rate needs at least one breakpoint"));
                }
                for &(day, mult) in breakpoints {
                    if !day.is_finite() || !(mult >= 0.0 && mult.is_finite()) {
                        return Err(domain(format!(
                            "invalid breakpoint ({day}, {mult}): multipliers must be >= 0"
                        )));
                    }
                }
                if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(domain("breakpoint days must be strictly increasing"));
                }
                Ok(())
            }
            RateFunction::ExponentialDecay {
                start,
                end,
                horizon_days,
            } => {
                check_positive("start multiplier", *start)?;
                check_positive("end multiplier", *end)?;
                check_positive("horizon_days", *horizon_days)
            }
        }
    }

    /// `r(t)`.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            RateFunction::Constant => 1.0,
            RateFunction::PiecewiseLinear { breakpoints } => piecewise_value(breakpoints, t),
            RateFunction::ExponentialDecay {
                start,
                end,
                horizon_days,
            } => {
                let x = t.clamp(0.0, *horizon_days);
                start * (end / start).powf(x / horizon_days)
            }
        }
    }

    /// `∫_lo^hi r(x) dx` for `lo <= hi`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        match self {
            RateFunction::Constant => hi - lo,
            RateFunction::PiecewiseLinear { breakpoints } => piecewise_integral(breakpoints, lo, hi),
            RateFunction::ExponentialDecay { .. } => {
                self.exp_antiderivative(hi) - self.exp_antiderivative(lo)
            }
        }
    }

    fn exp_antiderivative(&self, t: f64) -> f64 {
        let RateFunction::ExponentialDecay {
            start,
            end,
            horizon_days: h,
        } = *self
        else {
            unreachable!()
        };
        if t <= 0.0 {
            return start * t;
        }
        let ln_ratio = (end / start).ln();
        let decayed = |x: f64| {
            if ln_ratio.abs() < 1e-12 {
                start * x
            } else {
                start * h / ln_ratio * (ln_ratio * x / h).exp_m1()
            }
        };
        if t <= h {
            decayed(t)
        } else {
            decayed(h) + end * (t - h)
        }
    }
}

/// Multiplier value `r(t)`.
pub fn rate_at(r: &RateFunction, t: f64) -> f64 {
    r.rate_at(t)
}

/// `R(a, b, u) = ∫_a^b r(x)·1{u < x} dx`.
pub fn cumulative_rate_factor(r: &RateFunction, a: f64, b: f64, u: f64) -> f64 {
    let lo = a.max(u);
    if lo >= b {
        0.0
    } else {
        r.integral(lo, b)
    }
}

/// Active recruitment time within `[y, z]` for a centre activated at `u`.
///
/// The middle branch is `z − u`: the time from activation to the end of the
/// interval.
pub fn recruitment_window(y: f64, z: f64, u: f64) -> f64 {
    if u < y {
        z - y
    } else if u < z {
        z - u
    } else {
        0.0
    }
}

/// One clinical centre: gamma prior on its baseline rate and activation day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentreProfile {
    pub id: String,
    /// Region or country tag; centres sharing a tag form a forecast region.
    #[serde(default)]
    pub group: Option<String>,
    pub shape: f64,
    pub rate: f64,
    pub activation_day: f64,
}

impl CentreProfile {
    pub fn new(id: impl Into<String>, shape: f64, rate: f64, activation_day: f64) -> Result<Self> {
        check_positive("shape", shape)?;
        check_positive("rate", rate)?;
        if !activation_day.is_finite() || activation_day < 0.0 {
            return Err(domain(format!(
                "activation day must be >= 0, got {activation_day}"
            )));
        }
        Ok(Self {
            id: id.into(),
            group: None,
            shape,
            rate,
            activation_day,
        })
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    /// Mean baseline rate `m = α/β` (patients/day).
    pub fn mean_rate(&self) -> f64 {
        self.shape / self.rate
    }

    /// Variance of the baseline rate `s² = α/β²`.
    pub fn rate_variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    /// `R(a, b, u)` for this centre.
    pub fn exposure(&self, r: &RateFunction, a: f64, b: f64) -> f64 {
        cumulative_rate_factor(r, a, b, self.activation_day)
    }
}

fn piecewise_value(bp: &[(f64, f64)], t: f64) -> f64 {
    let first = bp[0];
    let last = bp[bp.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let idx = bp.partition_point(|&(d, _)| d <= t);
    let (d0, m0) = bp[idx - 1];
    let (d1, m1) = bp[idx];
    m0 + (m1 - m0) * (t - d0) / (d1 - d0)
}

fn piecewise_integral(bp: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    // Knots: interval ends plus every breakpoint strictly inside. The
    // function is linear between consecutive knots, so trapezoids are exact.
    let mut total = 0.0;
    let mut prev = lo;
    let mut prev_val = piecewise_value(bp, lo);
    for &(d, _) in bp.iter().filter(|&&(d, _)| d > lo && d < hi) {
        let v = piecewise_value(bp, d);
        total += 0.5 * (prev_val + v) * (d - prev);
        prev = d;
        prev_val = v;
    }
    let v = piecewise_value(bp, hi);
    total + 0.5 * (prev_val + v) * (hi - prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn decay() -> RateFunction {
        RateFunction::exponential_decay(2.5, 0.2, 400.0).unwrap()
    }

    /// Adaptive Simpson quadrature, used as an independent check on the
    /// closed-form antiderivatives.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
        }
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let (lm, flm, left) = simpson(f, a, fa, m, fm);
            let (rm, frm, right) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
        let (fa, fb) = (f(a), f(b));
        let (m, fm, whole) = simpson(f, a, fa, b, fb);
        rec(f, a, fa, b, fb, whole, m, fm, tol, 50)
    }

    #[test]
    fn rate_values() {
        assert_eq!(rate_at(&RateFunction::Constant, 100.0), 1.0);
        assert!((rate_at(&decay(), 0.0) - 2.5).abs() < 1e-15);
        assert!((rate_at(&decay(), 400.0) - 0.2).abs() < 1e-14);
        assert!((rate_at(&decay(), 800.0) - 0.2).abs() < 1e-14);
        let pw = RateFunction::piecewise_linear(vec![(0.0, 0.5), (30.0, 1.0), (200.0, 1.0), (300.0, 0.2)])
            .unwrap();
        assert!((pw.rate_at(15.0) - 0.75).abs() < 1e-15);
        assert!((pw.rate_at(250.0) - 0.6).abs() < 1e-15);
        assert!((pw.rate_at(1000.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_rate_functions() {
        assert!(RateFunction::piecewise_linear(vec![]).is_err());
        assert!(RateFunction::piecewise_linear(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(RateFunction::piecewise_linear(vec![(1.0, -1.0)]).is_err());
        assert!(RateFunction::exponential_decay(2.5, 0.2, 0.0).is_err());
    }

    #[test]
    fn cumulative_factor_examples() {
        let c = RateFunction::Constant;
        assert_eq!(cumulative_rate_factor(&c, 0.0, 10.0, 3.0), 7.0);
        assert_eq!(cumulative_rate_factor(&decay(), 0.0, 10.0, 10.0), 0.0);
        assert_eq!(cumulative_rate_factor(&decay(), 0.0, 10.0, 12.0), 0.0);

        let r = decay();
        let f = |x: f64| r.rate_at(x);
        let oracle = adaptive_simpson(&f, 0.0, 400.0, 1e-12);
        let got = cumulative_rate_factor(&r, 0.0, 400.0, 0.0);
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
        assert!((got - 364.25).abs() < 5e-3, "{got}");

        // across the horizon and with activation inside the interval
        let oracle = adaptive_simpson(&f, 150.0, 700.0, 1e-12);
        assert!((cumulative_rate_factor(&r, 100.0, 700.0, 150.0) - oracle).abs() < 1e-8);

        let pw = RateFunction::piecewise_linear(vec![(0.0, 0.5), (30.0, 1.0), (200.0, 1.0), (300.0, 0.2)])
            .unwrap();
        let g = |x: f64| pw.rate_at(x);
        for &(a, b, u) in &[(0.0, 400.0, 0.0), (10.0, 250.0, 40.0), (-5.0, 20.0, -10.0)] {
            let lo = f64::max(a, u);
            // split at kinks so the oracle does not straddle them
            let mut knots = vec![lo];
            knots.extend([0.0, 30.0, 200.0, 300.0].iter().copied().filter(|&d| d > lo && d < b));
            knots.push(b);
            let oracle: f64 = knots.windows(2).map(|w| adaptive_simpson(&g, w[0], w[1], 1e-13)).sum();
            assert!((cumulative_rate_factor(&pw, a, b, u) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn window_examples() {
        assert_eq!(recruitment_window(0.0, 10.0, -1.0), 10.0);
        assert_eq!(recruitment_window(0.0, 10.0, 15.0), 0.0);
        assert_eq!(recruitment_window(0.0, 10.0, 4.0), 6.0);
        assert_eq!(
            recruitment_window(0.0, 10.0, 4.0),
            cumulative_rate_factor(&RateFunction::Constant, 0.0, 10.0, 4.0)
        );
    }

    #[test]
    fn centre_moments() {
        let c = CentreProfile::new("c1", 1.0, 10.0, 0.0).unwrap();
        assert!((c.mean_rate() - 0.1).abs() < 1e-15);
        assert!((c.rate_variance() - 0.01).abs() < 1e-15);
        assert!(CentreProfile::new("c", 0.0, 1.0, 0.0).is_err());
        assert!(CentreProfile::new("c", 1.0, 1.0, -1.0).is_err());
    }

    fn rate_strategy() -> impl Strategy<Value = RateFunction> {
        prop_oneof![
            Just(RateFunction::Constant),
            (0.1f64..5.0, 0.05f64..5.0, 10.0f64..800.0)
                .prop_map(|(s, e, h)| RateFunction::exponential_decay(s, e, h).unwrap()),
            proptest::collection::vec((1.0f64..100.0, 0.0f64..3.0), 1..6).prop_map(|steps| {
                let mut day = -20.0;
                let bp = steps
                    .into_iter()
                    .map(|(gap, m)| {
                        day += gap;
                        (day, m)
                    })
                    .collect();
                RateFunction::piecewise_linear(bp).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn additive_over_adjacent_intervals(
            r in rate_strategy(),
            a in -50.0f64..500.0,
            l1 in 0.0f64..300.0,
            l2 in 0.0f64..300.0,
            u in -50.0f64..700.0,
        ) {
            let b = a + l1;
            let c = b + l2;
            let whole = cumulative_rate_factor(&r, a, c, u);
            let parts = cumulative_rate_factor(&r, a, b, u) + cumulative_rate_factor(&r, b, c, u);
            prop_assert!((whole - parts).abs() <= 1e-10 * whole.max(1.0));
        }

        #[test]
        fn constant_matches_window(y in -50.0f64..500.0, len in 0.0f64..300.0, u in -100.0f64..900.0) {
            let z = y + len;
            prop_assert_eq!(
                cumulative_rate_factor(&RateFunction::Constant, y, z, u),
                recruitment_window(y, z, u)
            );
        }

        #[test]
        fn monotone_in_end_and_activation(
            r in rate_strategy(),
            a in 0.0f64..300.0,
            b in 0.0f64..600.0,
            db in 0.0f64..100.0,
            u in -10.0f64..600.0,
            du in 0.0f64..100.0,
        ) {
            let b = a + b;
            prop_assert!(cumulative_rate_factor(&r, a, b + db, u) >= cumulative_rate_factor(&r, a, b, u) - 1e-12);
            prop_assert!(cumulative_rate_factor(&r, a, b, u + du) <= cumulative_rate_factor(&r, a, b, u) + 1e-12);
        }
    }
}
