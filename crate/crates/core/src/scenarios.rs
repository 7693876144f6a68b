//! Ready-made trial designs.

use crate::error::Result;
use crate::rate::{CentreProfile, RateFunction};
use crate::simulator::TrialConfig;

/// A 200-centre trial with decaying recruitment.
///
/// Mean rate 0.02 patients/centre/day with coefficient of variation 1.2,
/// centres opening on a uniform grid over the first 120 days, and rates
/// falling exponentially from 2.5× to 0.2× over 400 days.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayingTrial {
    pub centres: usize,
    pub mean_rate: f64,
    pub cv: f64,
    pub activation_span: f64,
    pub target: u64,
    pub deadline: u32,
    pub interim: u32,
    pub horizon: u32,
}

impl Default for DecayingTrial {
    fn default() -> Self {
        Self {
            centres: 200,
            mean_rate: 0.02,
            cv: 1.2,
            activation_span: 120.0,
            target: 1000,
            deadline: 400,
            interim: 200,
            horizon: 1000,
        }
    }
}

impl DecayingTrial {
    pub fn rate(&self) -> RateFunction {
        RateFunction::ExponentialDecay { start: 2.5, end: 0.2, horizon_days: 400.0 }
    }

    pub fn shape(&self) -> f64 {
        1.0 / (self.cv * self.cv)
    }

    pub fn centres(&self) -> Result<Vec<CentreProfile>> {
        let alpha = self.shape();
        let beta = alpha / self.mean_rate;
        (0..self.centres)
            .map(|i| {
                let u = (self.activation_span * i as f64 / self.centres as f64).floor();
                CentreProfile::new(format!("C{:03}", i + 1), alpha, beta, u)
            })
            .collect()
    }

    pub fn config(&self, seed: u64) -> Result<TrialConfig> {
        Ok(TrialConfig::new(self.centres()?, self.rate(), self.horizon, self.target, seed))
    }

    /// Test intervals on either side of the rate change around day 140.
    pub fn test_intervals(&self) -> ((f64, f64), (f64, f64)) {
        ((80.0, 140.0), (140.0, 200.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let t = DecayingTrial::default();
        let c = t.centres().unwrap();
        assert_eq!(c.len(), 200);
        assert_eq!(c[0].activation_day, 0.0);
        assert_eq!(c[199].activation_day, 119.0);
        assert!((c[0].mean_rate() - 0.02).abs() < 1e-15);
        assert!((c[0].rate_variance().sqrt() / c[0].mean_rate() - 1.2).abs() < 1e-12);
        assert_eq!(t.rate().rate_at(0.0), 2.5);
        t.config(1).unwrap().validate().unwrap();
    }
}
