//! TOML scenario files. Every table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::Path;

use pgrecruit::estimation::RateFamily;
use pgrecruit::homogeneity::TestKind;
use pgrecruit::reprojection::{Conditioning, Strategy};
use pgrecruit::{CentreProfile, RateFunction};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, InModule};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub confidence: Option<f64>,
    pub delta: Option<f64>,
    pub window_days: Option<f64>,
    pub trial: Option<TrialSection>,
    /// Rate function `r(t)`; constant if absent.
    pub rate: Option<RateFunction>,
    #[serde(default)]
    pub group_rates: BTreeMap<String, RateFunction>,
    #[serde(default)]
    pub centres: Vec<CentreSpec>,
    /// Identical centres generated on a regular activation grid.
    #[serde(default)]
    pub centre_grid: Vec<CentreGrid>,
    pub fit: Option<FitSection>,
    pub test: Option<TestSection>,
    pub power: Option<PowerSection>,
    pub reproject: Option<ReprojectSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    pub target: u64,
    pub horizon: Option<u32>,
    pub deadline: Option<u32>,
    pub interim: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentreSpec {
    pub id: String,
    pub country: Option<String>,
    pub shape: f64,
    pub rate: f64,
    #[serde(default)]
    pub activation_day: f64,
}

/// `count` centres with mean rate `mean_rate` and coefficient of variation
/// `cv`; centre `i` opens on day `floor(activation_span·i/count)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentreGrid {
    pub count: usize,
    pub mean_rate: f64,
    pub cv: f64,
    #[serde(default)]
    pub activation_span: f64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    pub country: Option<String>,
}

fn default_prefix() -> String {
    "C".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Fitting window `(t0, t1]`; defaults to day 0 through the last event.
    pub window: Option<[f64; 2]>,
    /// Rate family for a time-dependent fit.
    pub family: Option<RateFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub intervals: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// Power at the listed centre counts.
    #[default]
    Fixed,
    /// Smallest N with mean H1 P-value <= delta.
    Pvalue,
    /// Smallest N reaching `target_power`.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub m1: f64,
    pub interval_days: f64,
    pub q: Vec<f64>,
    /// Centre counts per interval, one per `q` (or a single value for all).
    #[serde(default)]
    pub centres: Vec<usize>,
    #[serde(default)]
    pub mode: PowerMode,
    #[serde(default = "default_kind")]
    pub kind: TestKind,
    /// Gamma shape of centre rates; required for the PG test.
    pub shape: Option<f64>,
    #[serde(default = "default_target_power")]
    pub target_power: f64,
    #[serde(default = "default_max_centres")]
    pub max_centres: usize,
}

fn default_kind() -> TestKind {
    TestKind::PoissonNonparametric
}

fn default_target_power() -> f64 {
    0.8
}

fn default_max_centres() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReprojectSection {
    /// Strategies to compare; if empty the homogeneity workflow picks one.
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    /// Length of each of the two intervals tested by the workflow.
    pub interval_days: Option<f64>,
    pub horizon: Option<u32>,
    pub conditioning: Option<Conditioning>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config { path: name.to_string(), msg: e.to_string() })
    }

    pub fn rate(&self) -> RateFunction {
        self.rate.clone().unwrap_or(RateFunction::Constant)
    }

    /// Explicit centres followed by generated ones.
    pub fn centre_profiles(&self) -> CliResult<Vec<CentreProfile>> {
        let mut out = Vec::new();
        for c in &self.centres {
            let mut p = CentreProfile::new(c.id.clone(), c.shape, c.rate, c.activation_day).during("config")?;
            p.group = c.country.clone();
            out.push(p);
        }
        for g in &self.centre_grid {
            if !(g.mean_rate > 0.0 && g.cv > 0.0) {
                return Err(CliError::Usage("centre_grid needs mean_rate > 0 and cv > 0".into()));
            }
            let shape = 1.0 / (g.cv * g.cv);
            let width = g.count.to_string().len().max(3);
            for i in 0..g.count {
                let u = (g.activation_span * i as f64 / g.count as f64).floor();
                let id = format!("{}{:0width$}", g.id_prefix, i + 1);
                let mut p = CentreProfile::new(id, shape, shape / g.mean_rate, u).during("config")?;
                p.group = g.country.clone();
                out.push(p);
            }
        }
        Ok(out)
    }
}
