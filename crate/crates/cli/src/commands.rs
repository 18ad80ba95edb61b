use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;

use dcf_netcalc::bounds::{stability_check, BacklogBound, BoundProblem, Variant};
use dcf_netcalc::characterize::FitOptions;
use dcf_netcalc::mac80211::{impairment_average_rate, impairment_fit, slot_geometry, solve_fixed_point};
use dcf_netcalc::numeric::log_space;
use dcf_netcalc::sim::{self, empirical_tail, empirical_tail_stderr, SimResult, Traffic};
use dcf_netcalc::Error;

use crate::config::{ConfigError, RunConfig, TrafficKind};
use crate::output::Report;
use crate::{Command, CurveArgs, QuantileArgs, SimArgs};

pub fn dispatch(cmd: &Command, cfg: RunConfig) -> Result<Report> {
    match cmd {
        Command::FixedPoint => fixed_point(&cfg),
        Command::Characterize { theta } => characterize(&cfg, theta.as_deref()),
        Command::Bounds { q, variants, curve } => bounds(cfg, q, variants.as_deref(), curve),
        Command::Stability { lambda } => stability(&cfg, *lambda),
        Command::Simulate { lambda, sim, trace } => {
            let mut cfg = cfg;
            apply_lambda(&mut cfg, *lambda);
            simulate(cfg, sim, trace.as_deref())
        }
        Command::Compare { q, sim, curve } => compare(cfg, q, sim, curve),
    }
}

pub fn fixed_point(cfg: &RunConfig) -> Result<Report> {
    let params = cfg.params();
    let fp = solve_fixed_point(&params)?;
    let geo = slot_geometry(&params);
    let mut r = Report::new(
        "fixed-point",
        &[
            "n_nodes",
            "payload_bytes",
            "tau",
            "eta",
            "p_nt",
            "p_t",
            "p_s",
            "p_s_cond",
            "slot_length",
            "interframe_slots",
            "ack_slots",
            "data_slots",
        ],
    );
    r.push(vec![
        params.n_nodes.into(),
        params.payload_bytes.into(),
        fp.tau.into(),
        fp.eta.into(),
        fp.p_nt.into(),
        fp.p_t.into(),
        fp.p_s.into(),
        fp.p_s_cond.into(),
        fp.slot_length.into(),
        geo.interframe.into(),
        geo.ack.into(),
        geo.data.into(),
    ]);
    Ok(r)
}

pub fn characterize(cfg: &RunConfig, theta: Option<&[f64]>) -> Result<Report> {
    let thetas: Vec<f64> = match theta {
        Some([]) => return Err(ConfigError("empty theta grid".into()).into()),
        Some(list) => list.to_vec(),
        None if !cfg.run.thetas.is_empty() => cfg.run.thetas.clone(),
        None => log_space(cfg.grid.theta_min, cfg.grid.theta_max, cfg.grid.n_theta_impairment),
    };
    let params = cfg.params();
    let a_i = impairment_average_rate(&params)?;
    let mut r = Report::new("characterize", &["theta", "sigma", "rho", "t_star"]);
    r.meta("average_rate", a_i);
    for th in thetas {
        let fit = impairment_fit(&params, th, FitOptions::default()).with_context(|| format!("theta = {th}"))?;
        r.push(vec![
            th.into(),
            fit.sigma_rho.sigma.into(),
            fit.sigma_rho.rho.into(),
            fit.t_star.into(),
        ]);
    }
    Ok(r)
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    let mut v: Vec<Variant> = names
        .iter()
        .map(|s| s.parse::<Variant>())
        .collect::<std::result::Result<_, _>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(ConfigError("no bound variants selected".into()).into());
    }
    Ok(v)
}

fn p_list(cfg: &RunConfig, q: &QuantileArgs) -> Result<Vec<f64>> {
    let ps = q.p_list.clone().unwrap_or_else(|| cfg.run.p_list.clone());
    if ps.is_empty() {
        return Err(ConfigError("empty probability list".into()).into());
    }
    Ok(ps)
}

fn apply_lambda(cfg: &mut RunConfig, lambda: Option<f64>) {
    if let Some(l) = lambda {
        cfg.traffic.lambda = l;
        if cfg.traffic.kind == TrafficKind::Saturated {
            cfg.traffic.kind = TrafficKind::Poisson;
        }
    }
}

fn build_problem(cfg: &RunConfig) -> Result<BoundProblem> {
    let arrival = cfg.arrival_model()?;
    BoundProblem::new(&arrival, &cfg.params(), &cfg.grid).map_err(|e| {
        let vacuous = matches!(e, Error::InfeasibleGrid { .. });
        let err = anyhow::Error::new(e);
        if vacuous {
            err.context("the arrival rate leaves no feasible grid point, so every bound is vacuous")
        } else {
            err
        }
    })
}

/// Quantile columns for each variant; a failed quantile (typically a bound
/// that never drops below `p` within `x_max`) is a null cell and a warning.
fn quantile_columns(
    bounds: &[BacklogBound<'_>],
    ps: &[f64],
    x_max: u64,
    warnings: &mut Vec<String>,
) -> Vec<Vec<Value>> {
    bounds
        .iter()
        .map(|b| {
            ps.iter()
                .map(|&p| match b.quantile(p, x_max) {
                    Ok(x) => Value::from(x),
                    Err(e) => {
                        warnings.push(format!("{}: {e}", b.variant()));
                        Value::Null
                    }
                })
                .collect()
        })
        .collect()
}

pub fn bounds(mut cfg: RunConfig, q: &QuantileArgs, variants: Option<&[String]>, curve: &CurveArgs) -> Result<Report> {
    apply_lambda(&mut cfg, q.lambda);
    let ps = p_list(&cfg, q)?;
    let variants = parse_variants(variants.unwrap_or(&cfg.run.variants))?;
    let problem = build_problem(&cfg)?;
    let mut skipped = Vec::new();
    let bounds: Vec<BacklogBound<'_>> = variants
        .iter()
        .filter_map(|&v| {
            problem
                .bound(v)
                .map_err(|e| skipped.push(format!("{v} omitted: {e}")))
                .ok()
        })
        .collect();
    if bounds.is_empty() {
        return Err(ConfigError(skipped.join("; ")).into());
    }

    let mut columns = vec!["p"];
    columns.extend(bounds.iter().map(|b| b.variant().name()));
    let mut r = Report::new("bounds", &columns);
    r.meta("lambda", problem.arrival_rate());
    r.meta("threshold", problem.threshold());
    r.meta("grid_points", problem.grid_points());
    r.warnings = problem.warnings();
    r.warnings.extend(skipped);
    let cols = quantile_columns(&bounds, &ps, cfg.run.x_max, &mut r.warnings);
    for (i, &p) in ps.iter().enumerate() {
        let mut row = vec![Value::from(p)];
        row.extend(cols.iter().map(|c| c[i].clone()));
        r.push(row);
    }
    if let Some(path) = &curve.curve {
        write_curve(path, &problem, curve.curve_x_max, None)?;
    }
    Ok(r)
}

pub fn stability(cfg: &RunConfig, lambda: Option<f64>) -> Result<Report> {
    let rate = lambda.unwrap_or(cfg.traffic.lambda);
    let rep = stability_check(rate, &cfg.params())?;
    let mut r = Report::new("stability", &["arrival_rate", "threshold", "threshold_mbps", "verdict"]);
    let verdict = serde_json::to_value(rep.verdict)?;
    r.push(vec![
        rep.arrival_rate.into(),
        rep.threshold.into(),
        rep.threshold_mbps.into(),
        verdict,
    ]);
    Ok(r)
}

fn apply_sim_args(cfg: &mut RunConfig, a: &SimArgs) {
    if let Some(n) = a.replications {
        cfg.sim.replications = n;
    }
    if let Some(d) = a.duration {
        cfg.sim.duration_secs = d;
        if cfg.sim.sample_time_secs > d && a.sample_time.is_none() {
            cfg.sim.sample_time_secs = d / 2.0;
        }
    }
    if let Some(s) = a.sample_time {
        cfg.sim.sample_time_secs = s;
    }
    if a.saturated {
        cfg.traffic.kind = TrafficKind::Saturated;
    }
}

fn run_sim(cfg: &RunConfig) -> Result<SimResult> {
    Ok(sim::run(&cfg.sim_config()?)?)
}

fn empirical_quantile(result: &SimResult, p: f64) -> u64 {
    let max = result.backlogs().into_iter().max().unwrap_or(0);
    (0..=max).find(|&x| empirical_tail(result, x) <= p).unwrap_or(max)
}

pub fn simulate(mut cfg: RunConfig, a: &SimArgs, trace: Option<&Path>) -> Result<Report> {
    apply_sim_args(&mut cfg, a);
    if trace.is_some() && cfg.sim.trace_every_secs.is_none() {
        cfg.sim.trace_every_secs = Some(1.0);
    }
    let sc = cfg.sim_config()?;
    let result = sim::run(&sc)?;
    let mut r = Report::new(
        "simulate",
        &[
            "replication",
            "sampled_backlog",
            "arrivals",
            "departures",
            "drops",
            "attempts",
            "collisions",
        ],
    );
    match sc.traffic {
        Traffic::Poisson { lambda } => r.meta("traffic", "poisson").meta("lambda", lambda),
        Traffic::Saturated => r.meta("traffic", "saturated"),
    };
    r.meta("n_nodes", sc.params.n_nodes)
        .meta("seed", sc.seed)
        .meta("replications", sc.replications)
        .meta("duration_secs", sc.duration_secs)
        .meta("sample_time_secs", sc.sample_time_secs)
        .meta("mean_backlog", result.mean_backlog())
        .meta("drops", result.drops())
        .meta("throughput_per_node", result.throughput_per_node())
        .meta("attempt_rate", result.attempt_rate())
        .meta("collision_fraction", result.collision_fraction());
    for rep in &result.replications {
        let tagged = rep.nodes[0];
        r.push(vec![
            rep.replication.into(),
            rep.sampled_backlog.into(),
            tagged.arrivals.into(),
            tagged.departures.into(),
            tagged.drops.into(),
            rep.attempts.into(),
            rep.collisions.into(),
        ]);
    }
    if let Some(path) = trace {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["replication", "time_secs", "backlog"])?;
        for t in result.trace() {
            w.write_record([
                t.replication.to_string(),
                t.time_secs.to_string(),
                t.backlog.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(r)
}

pub fn compare(mut cfg: RunConfig, q: &QuantileArgs, a: &SimArgs, curve: &CurveArgs) -> Result<Report> {
    apply_lambda(&mut cfg, q.lambda);
    apply_sim_args(&mut cfg, a);
    if cfg.traffic.kind != TrafficKind::Poisson {
        return Err(ConfigError("compare needs poisson traffic".into()).into());
    }
    let ps = p_list(&cfg, q)?;
    let problem = build_problem(&cfg)?;
    let bounds: Vec<BacklogBound<'_>> = Variant::ALL
        .iter()
        .map(|&v| problem.bound(v))
        .collect::<Result<_, _>>()?;
    let result = run_sim(&cfg)?;

    let mut r = Report::new("compare", &["p", "bound1", "bound2", "bound3", "bound4", "sim"]);
    r.meta("lambda", problem.arrival_rate());
    r.meta("threshold", problem.threshold());
    r.meta("replications", result.replications.len());
    r.meta("mean_backlog", result.mean_backlog());
    r.warnings = problem.warnings();
    let cols = quantile_columns(&bounds, &ps, cfg.run.x_max, &mut r.warnings);
    for (i, &p) in ps.iter().enumerate() {
        let mut row = vec![Value::from(p)];
        row.extend(cols.iter().map(|c| c[i].clone()));
        row.push(empirical_quantile(&result, p).into());
        r.push(row);
    }

    // the empirical tail may exceed a bound only by Monte-Carlo noise
    let max_backlog = result.backlogs().into_iter().max().unwrap_or(0);
    let mut violations = 0u64;
    for x in 0..=max_backlog {
        let (emp, se) = (empirical_tail(&result, x), empirical_tail_stderr(&result, x));
        violations += bounds.iter().filter(|b| emp > b.evaluate(x) + 3.0 * se).count() as u64;
    }
    r.meta("validity_violations", violations);
    if violations > 0 {
        r.warnings.push(format!(
            "{violations} (x, bound) pairs where the simulated tail exceeds the bound by > 3 SE"
        ));
    }
    if let Some(path) = &curve.curve {
        write_curve(path, &problem, curve.curve_x_max, Some(&result))?;
    }
    Ok(r)
}

/// Plot data: `x,bound1,bound2,bound3,bound4,empirical`.
fn write_curve(path: &Path, problem: &BoundProblem, x_max: u64, sim: Option<&SimResult>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["x", "bound1", "bound2", "bound3", "bound4", "empirical"])?;
    let bounds: Vec<Option<BacklogBound<'_>>> = Variant::ALL.iter().map(|&v| problem.bound(v).ok()).collect();
    for x in 0..=x_max {
        let mut rec = vec![x.to_string()];
        rec.extend(
            bounds
                .iter()
                .map(|b| b.as_ref().map_or(String::new(), |b| b.evaluate(x).to_string())),
        );
        rec.push(sim.map_or(String::new(), |s| empirical_tail(s, x).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
