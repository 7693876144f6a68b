use std::collections::BTreeMap;
use std::path::PathBuf;

use pgrecruit::distributions::MomentPair;
use pgrecruit::estimation::{enrollment_data, fit_pg, fit_pg_timedep, CentreEvents, FitResult, RateFamily};
use pgrecruit::forecast::{day_grid, forecast_from_moments, region_moments, time_to_target, RegionForecast};
use pgrecruit::homogeneity::{interval_totals, run_test, TestKind, TestReport};
use pgrecruit::power::{min_centres_for_power, min_centres_for_pvalue, power_analysis, PowerResult, PowerScenario};
use pgrecruit::reprojection::{reproject, workflow_strategy, ReprojectionRequest};
use pgrecruit::simulator::{simulate_ensemble, simulate_trial, suggest_horizon, TrialConfig};
use pgrecruit::{CentreProfile, RateFunction};

use crate::config::{PowerMode, ScenarioConfig, TrialSection};
use crate::error::{CliError, CliResult, InModule};
use crate::ingest::read_events_file;
use crate::output::{num, opt, Output};

/// Settings after merging command-line flags over the config file.
pub struct Context {
    pub config: ScenarioConfig,
    pub events_path: Option<PathBuf>,
    pub seed: u64,
    pub runs: Option<usize>,
    pub confidence: f64,
    pub delta: f64,
    pub window_days: f64,
}

impl Context {
    fn centres(&self) -> CliResult<Vec<CentreProfile>> {
        let c = self.config.centre_profiles()?;
        if c.is_empty() {
            return Err(CliError::Usage("no centres: add [[centres]] or [[centre_grid]] to the config".into()));
        }
        Ok(c)
    }

    fn trial(&self) -> CliResult<&TrialSection> {
        self.config.trial.as_ref().ok_or_else(|| CliError::Usage("the config needs a [trial] table".into()))
    }

    fn events(&self) -> CliResult<Vec<CentreEvents>> {
        let path = self.events_path.as_ref().ok_or_else(|| CliError::Usage("--events is required".into()))?;
        let events = read_events_file(path)?;
        if events.is_empty() {
            return Err(CliError::Usage(format!("{}: no centres", path.display())));
        }
        Ok(events)
    }

    fn rate_for<'a>(&'a self, r: &'a RateFunction, group: Option<&String>) -> &'a RateFunction {
        group.and_then(|g| self.config.group_rates.get(g)).unwrap_or(r)
    }
}

fn last_day(events: &[CentreEvents]) -> u32 {
    events.iter().filter_map(|c| c.event_days.last().copied()).max().unwrap_or(0)
}

pub fn simulate(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let centres = ctx.centres()?;
    let trial = ctx.trial()?;
    let rate = ctx.config.rate();
    let horizon = match trial.horizon {
        Some(h) => h,
        None => suggest_horizon(&centres, &rate, trial.target).during("simulator")?,
    };
    let mut config = TrialConfig::new(centres, rate, horizon, trial.target, ctx.seed);
    config.group_rates = ctx.config.group_rates.clone();
    config.validate().during("simulator")?;
    let runs = ctx.runs.unwrap_or(1000);
    let deadline = trial.deadline.map(|d| d.min(horizon));
    let ens = simulate_ensemble(&config, runs, ctx.confidence, deadline).during("simulator")?;

    let rows: Vec<Vec<String>> = (0..ens.days.len())
        .map(|i| {
            vec![
                ens.days[i].to_string(),
                num(ens.mean[i]),
                ens.median[i].to_string(),
                ens.lower[i].to_string(),
                ens.upper[i].to_string(),
            ]
        })
        .collect();
    out.table("trajectory.csv", &["day", "mean", "median", "lower", "upper"], &rows)?;
    let rows: Vec<Vec<String>> = ens
        .completion_days
        .iter()
        .enumerate()
        .map(|(i, d)| vec![i.to_string(), d.map(|d| d.to_string()).unwrap_or_default()])
        .collect();
    out.table("completion.csv", &["run", "completion_day"], &rows)?;
    let sample = simulate_trial(&config).during("simulator")?;
    out.events("events.csv", &sample.to_events(&config.centres))?;

    let q = |p| ens.completion_quantile(p).map_or("not reached".to_string(), |d| d.to_string());
    println!("simulated {runs} runs of {} centres over {horizon} days", config.centres.len());
    println!(
        "target {} reached by day {}: P = {:.4}; completion day median {}, {:.0}% band [{}, {}]",
        trial.target,
        ens.deadline,
        ens.prob_success,
        q(0.5),
        100.0 * ctx.confidence,
        q((1.0 - ctx.confidence) / 2.0),
        q((1.0 + ctx.confidence) / 2.0),
    );
    Ok(())
}

fn forecast_rows(name: &str, f: &RegionForecast, rows: &mut Vec<Vec<String>>) {
    for i in 0..f.len() {
        rows.push(vec![
            name.to_string(),
            num(f.times[i]),
            num(f.mean[i]),
            num(f.variance[i]),
            f.lower[i].to_string(),
            f.upper[i].to_string(),
        ]);
    }
}

pub fn forecast(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let centres = ctx.centres()?;
    let rate = ctx.config.rate();
    let target = ctx.config.trial.as_ref().map(|t| t.target);
    let horizon = match (ctx.config.trial.as_ref().and_then(|t| t.horizon), target) {
        (Some(h), _) => h,
        (None, Some(k)) => suggest_horizon(&centres, &rate, k).during("forecast")?,
        (None, None) => return Err(CliError::Usage("set trial.horizon or trial.target".into())),
    };
    let grid = day_grid(1, horizon);

    let mut groups: BTreeMap<Option<String>, Vec<CentreProfile>> = BTreeMap::new();
    for c in &centres {
        groups.entry(c.group.clone()).or_default().push(c.clone());
    }
    let mut global = vec![MomentPair::default(); grid.len()];
    let mut regions = BTreeMap::new();
    for (group, members) in &groups {
        let r = ctx.rate_for(&rate, group.as_ref());
        let moments = grid.iter().map(|&t| region_moments(members, r, t)).collect::<pgrecruit::Result<Vec<_>>>().during("forecast")?;
        for (g, m) in global.iter_mut().zip(&moments) {
            *g = g.combine(*m);
        }
        if let Some(name) = group {
            regions.insert(name.clone(), forecast_from_moments(&grid, &moments, ctx.confidence, 0).during("forecast")?);
        }
    }
    let global = forecast_from_moments(&grid, &global, ctx.confidence, 0).during("forecast")?;

    let mut rows = Vec::new();
    forecast_rows("global", &global, &mut rows);
    for (name, f) in &regions {
        forecast_rows(name, f, &mut rows);
    }
    out.table("forecast.csv", &["region", "day", "mean", "variance", "lower", "upper"], &rows)?;

    println!("forecast for {} centres over {horizon} days", centres.len());
    if let Some(k) = target {
        let c = time_to_target(&global, k).during("forecast")?;
        out.table(
            "completion.csv",
            &["target", "mean_day", "lower_day", "upper_day"],
            &[vec![k.to_string(), opt(c.mean_day), opt(c.lower_day), opt(c.upper_day)]],
        )?;
        let show = |d: Option<f64>| d.map_or("beyond horizon".to_string(), |d| d.to_string());
        println!(
            "target {k}: mean crossing day {}, {:.0}% band [{}, {}]",
            show(c.mean_day),
            100.0 * ctx.confidence,
            show(c.lower_day),
            show(c.upper_day)
        );
    }
    let last = global.len() - 1;
    println!("day {horizon}: mean {:.1}, bounds [{}, {}]", global.mean[last], global.lower[last], global.upper[last]);
    Ok(())
}

fn fit_row(region: &str, events: &[CentreEvents], fit: pgrecruit::Result<(FitResult, f64)>) -> Vec<String> {
    let patients: usize = events.iter().map(|c| c.event_days.len()).sum();
    let head = vec![region.to_string(), events.len().to_string(), patients.to_string()];
    match fit {
        Ok((f, exposure)) => {
            let theta = f.theta.iter().map(|t| num(*t)).collect::<Vec<_>>().join(" ");
            let mut note = f.warnings.join("; ");
            if f.boundary {
                note = if note.is_empty() { "no overdispersion detected".into() } else { note };
            }
            [head, vec![
                num(exposure),
                num(f.shape),
                num(f.rate),
                num(f.mean_rate()),
                num(f.rate_variance()),
                theta,
                num(f.log_likelihood),
                f.converged.to_string(),
                f.boundary.to_string(),
                note,
            ]]
            .concat()
        }
        Err(e) => [head, vec![String::new(); 9], vec![e.to_string()]].concat(),
    }
}

pub fn fit(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let events = ctx.events()?;
    let section = ctx.config.fit.clone().unwrap_or(crate::config::FitSection { window: None, family: None });
    let [t0, t1] = section.window.unwrap_or([0.0, f64::from(last_day(&events))]);
    if !(t1 > t0) {
        return Err(CliError::Usage(format!("empty fitting window ({t0}, {t1}]")));
    }
    let family = section.family.unwrap_or(RateFamily::Known { rate: ctx.config.rate() });
    let run = |evs: &[CentreEvents]| -> pgrecruit::Result<(FitResult, f64)> {
        let f = if family.dim() == 0 {
            let r = family.instantiate(&[])?;
            fit_pg(&enrollment_data(evs, &r, t0, t1)?)?
        } else {
            fit_pg_timedep(evs, &family, (t0, t1))?
        };
        let r = family.instantiate(&f.theta)?;
        Ok((f, enrollment_data(evs, &r, t0, t1)?.total_exposure()))
    };

    let global = run(&events).during("estimation")?;
    let mut rows = vec![fit_row("global", &events, Ok(global.clone()))];
    let mut groups: BTreeMap<&str, Vec<CentreEvents>> = BTreeMap::new();
    for c in &events {
        if let Some(g) = &c.group {
            groups.entry(g.as_str()).or_default().push(c.clone());
        }
    }
    for (name, members) in &groups {
        rows.push(fit_row(name, members, run(members)));
    }
    out.table(
        "fit.csv",
        &[
            "region", "centres", "patients", "exposure", "shape", "rate", "mean_rate", "rate_variance", "theta",
            "log_likelihood", "converged", "boundary", "note",
        ],
        &rows,
    )?;
    let f = &global.0;
    println!("fitted {} centres on ({t0}, {t1}]: shape {:.4}, rate {:.4}, mean rate {:.5}/day", events.len(), f.shape, f.rate, f.mean_rate());
    for w in &f.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn test_intervals(ctx: &Context, events: &[CentreEvents]) -> CliResult<((f64, f64), (f64, f64))> {
    if let Some([a, b]) = ctx.config.test.as_ref().and_then(|t| t.intervals) {
        return Ok(((a[0], a[1]), (b[0], b[1])));
    }
    let t = f64::from(last_day(events));
    let l = ctx.window_days;
    if t - 2.0 * l < 0.0 {
        return Err(CliError::Usage(format!(
            "data end on day {t}; two intervals of {l} days do not fit (set test.intervals or --window-days)"
        )));
    }
    Ok(((t - 2.0 * l, t - l), (t - l, t)))
}

fn report_row(kind: TestKind, i1: (f64, f64), i2: (f64, f64), n: (u64, u64), u: (f64, f64), r: &CliResult<TestReport>) -> Vec<String> {
    let mut row = vec![kind.name().to_string(), num(i1.0), num(i1.1), num(i2.0), num(i2.1), n.0.to_string(), n.1.to_string(), num(u.0), num(u.1)];
    match r {
        Ok(r) => row.extend([num(r.p_upper), num(r.p_lower), num(r.delta), verdict(r), String::new()]),
        Err(e) => row.extend([String::new(), String::new(), String::new(), "not-run".into(), e.to_string()]),
    }
    row
}

fn verdict(r: &TestReport) -> String {
    serde_json::to_value(r.verdict).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

const TEST_HEADER: [&str; 14] = [
    "test", "start1", "end1", "start2", "end2", "n1", "n2", "exposure1", "exposure2", "p_upper", "p_lower", "delta",
    "verdict", "note",
];

pub fn test(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let events = ctx.events()?;
    let (i1, i2) = test_intervals(ctx, &events)?;
    let d1 = interval_totals(&events, i1.0, i1.1).during("homogeneity")?;
    let d2 = interval_totals(&events, i2.0, i2.1).during("homogeneity")?;
    let mut rows = Vec::new();
    println!("intervals ({}, {}] and ({}, {}]: n1 = {}, n2 = {}", i1.0, i1.1, i2.0, i2.1, d1.n, d2.n);
    for kind in [TestKind::PoissonNonparametric, TestKind::PoissonParametric, TestKind::PoissonGamma] {
        let r = run_test(kind, &d1, &d2, ctx.delta).during("homogeneity");
        match &r {
            Ok(rep) => println!("{:<22} p_upper {:.4}  p_lower {:.4}  {}", kind.name(), rep.p_upper, rep.p_lower, verdict(rep)),
            Err(e) => println!("{:<22} not run: {e}", kind.name()),
        }
        rows.push(report_row(kind, i1, i2, (d1.n, d2.n), (d1.exposure, d2.exposure), &r));
    }
    out.table("tests.csv", &TEST_HEADER, &rows)
}

pub const POWER_HEADER: [&str; 6] = ["Proportion-q", "Sites-Number", "Bound_Type-I-error", "Pvalue_H0", "Pvalue_H1", "Power"];

pub fn power(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let p = ctx.config.power.as_ref().ok_or_else(|| CliError::Usage("the config needs a [power] table".into()))?;
    if p.q.is_empty() {
        return Err(CliError::Usage("power.q is empty".into()));
    }
    let runs = ctx.runs.unwrap_or(10_000);
    let mut results: Vec<PowerResult> = Vec::new();
    for (i, &q) in p.q.iter().enumerate() {
        let mut s = PowerScenario::symmetric(p.m1, q, p.interval_days, 1, ctx.delta, runs, ctx.seed);
        s.shape = p.shape;
        let r = match p.mode {
            PowerMode::Fixed => {
                let n = match p.centres.as_slice() {
                    [n] => *n,
                    ns if ns.len() == p.q.len() => ns[i],
                    _ => return Err(CliError::Usage("power.centres needs one value or one per q".into())),
                };
                power_analysis(&s.with_centres(n), p.kind)
            }
            PowerMode::Pvalue => min_centres_for_pvalue(&s, p.kind, p.max_centres)
                .and_then(|n| power_analysis(&s.clone().with_centres(n), p.kind)),
            PowerMode::Power => min_centres_for_power(&s, p.kind, p.target_power, p.max_centres).map(|(_, r)| r),
        }
        .during("power")?;
        println!(
            "q = {q}: N = {}, a(delta) = {:.3}, Pvalue_H0 = {:.3}, Pvalue_H1 = {:.3}, power = {:.3}",
            r.centres, r.a_delta, r.pvalue_h0, r.pvalue_h1, r.power
        );
        results.push(r);
    }
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![num(r.q), r.centres.to_string(), format!("{:.3}", r.a_delta), format!("{:.3}", r.pvalue_h0), format!("{:.3}", r.pvalue_h1), format!("{:.3}", r.power)]
        })
        .collect();
    out.table("power.csv", &POWER_HEADER, &rows)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                num(r.q),
                r.centres.to_string(),
                r.runs.to_string(),
                num(r.a_delta),
                num(r.pvalue_h0),
                num(r.stderr_pvalue_h0),
                num(r.pvalue_h1),
                num(r.stderr_pvalue_h1),
                num(r.power),
                num(r.stderr_power),
            ]
        })
        .collect();
    out.table(
        "power_detail.csv",
        &["q", "centres", "runs", "a_delta", "pvalue_h0", "stderr_pvalue_h0", "pvalue_h1", "stderr_pvalue_h1", "power", "stderr_power"],
        &rows,
    )
}

pub fn reproject_cmd(ctx: &Context, out: &mut Output) -> CliResult<()> {
    let events = ctx.events()?;
    let trial = ctx.trial()?;
    let (Some(interim), Some(deadline)) = (trial.interim, trial.deadline) else {
        return Err(CliError::Usage("reproject needs trial.interim and trial.deadline".into()));
    };
    let section = ctx.config.reproject.clone();
    let mut request = ReprojectionRequest::new(interim, deadline, trial.target, ctx.confidence);
    if let Some(s) = &section {
        request.horizon = s.horizon.unwrap_or(request.horizon);
        request.conditioning = s.conditioning.unwrap_or(request.conditioning);
    }
    let mut strategies = section.as_ref().map(|s| s.strategies.clone()).unwrap_or_default();
    if strategies.is_empty() {
        let len = section.as_ref().and_then(|s| s.interval_days).unwrap_or(ctx.window_days);
        let choice = workflow_strategy(&events, f64::from(interim), len, ctx.window_days, ctx.delta).during("reprojection")?;
        let (i1, i2) = choice.intervals;
        let d1 = interval_totals(&events, i1.0, i1.1).during("homogeneity")?;
        let d2 = interval_totals(&events, i2.0, i2.1).during("homogeneity")?;
        let rows: Vec<Vec<String>> = choice
            .poisson
            .iter()
            .chain(&choice.pg)
            .map(|r| report_row(r.kind, i1, i2, (d1.n, d2.n), (d1.exposure, d2.exposure), &Ok(r.clone())))
            .collect();
        out.table("workflow.csv", &TEST_HEADER, &rows)?;
        println!("workflow on ({}, {}] vs ({}, {}]: using {}", i1.0, i1.1, i2.0, i2.1, choice.strategy.label());
        strategies.push(choice.strategy);
    }

    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for s in &strategies {
        let rep = reproject(&events, &request, s).during("reprojection")?;
        let f = &rep.fit;
        summary.push(vec![
            rep.strategy.clone(),
            rep.observed.to_string(),
            num(f.shape),
            num(f.rate),
            num(f.mean_rate()),
            f.theta.iter().map(|t| num(*t)).collect::<Vec<_>>().join(" "),
            opt(rep.completion.mean_day),
            opt(rep.completion.lower_day),
            opt(rep.completion.upper_day),
            num(rep.prob_success),
        ]);
        forecast_rows(&rep.strategy, &rep.forecast, &mut curves);
        let show = |d: Option<f64>| d.map_or("beyond horizon".to_string(), |d| d.to_string());
        println!(
            "{:<16} observed {} by day {interim}; completion day {} [{}, {}]; P(target by day {deadline}) = {:.3}",
            rep.strategy,
            rep.observed,
            show(rep.completion.mean_day),
            show(rep.completion.lower_day),
            show(rep.completion.upper_day),
            rep.prob_success
        );
    }
    out.table(
        "reprojection.csv",
        &["strategy", "observed", "shape", "rate", "mean_rate", "theta", "mean_day", "lower_day", "upper_day", "prob_success"],
        &summary,
    )?;
    out.table("reprojection_forecast.csv", &["strategy", "day", "mean", "variance", "lower", "upper"], &curves)
}
