//! Subcommand runners.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use iml_core::constants::{c2_scaling_exponent, check_superexp, constants_report};
use iml_core::intersection::{mean_and_se, sample_intersection_pairings};
use iml_core::moment_oracle::{mean_gap, moment_approx, moment_diff_all, moment_exact, MomentPlan};
use iml_core::rate_solver::{
    empirical_exit_rate, principal_eigenpair, product_mollification_gap, rate_i, rate_i_eps, rayleigh_quotient,
    MeasureTuple,
};
use iml_core::stable_ext::{fractional_membership, rate_i_stable, sample_stable_increments, StableParams};
use iml_core::{make_lattice, DomainSpec, GridField, ImlError, Lattice};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::{num, write_artifact, Table};
use crate::plot::{read_series, render_svg};
use crate::{CliError, Subcommand};

/// Paths written by one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifact: PathBuf,
    pub sidecar: PathBuf,
    pub summary: Value,
}

/// Loads the config, applies `IML_SEED`, and runs `sub` on a pool of
/// `workers` threads, writing into `out`.
pub fn run(sub: Subcommand, config: &Path, workers: Option<usize>, out: &Path) -> Result<RunOutput, CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let cfg = ExperimentConfig::parse(&text)?.with_env_seed()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| run_config(sub, &cfg, out))
}

/// Runs an already resolved config.
pub fn run_config(sub: Subcommand, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput, CliError> {
    if sub == Subcommand::Plot {
        return plot(cfg, out);
    }
    if sub != Subcommand::Stable {
        brownian_gate(cfg)?;
    }
    let (table, summary) = match sub {
        Subcommand::Simulate => simulate(cfg)?,
        Subcommand::Moments => moments(cfg)?,
        Subcommand::Constants => constants(cfg)?,
        Subcommand::Rate => rate(cfg)?,
        Subcommand::LdpCheck => ldp_check(cfg)?,
        Subcommand::Stable => stable(cfg)?,
        Subcommand::Plot => unreachable!(),
    };
    let (artifact, sidecar) = write_artifact(out, sub.name(), cfg, "csv", &table.to_csv()?, &summary)?;
    Ok(RunOutput { artifact, sidecar, summary })
}

/// Refuses `d - p(d-2) ≤ 0`.
pub fn brownian_gate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let d = cfg.domain.as_ref().map(|dc| dc.d).ok_or_else(|| CliError::Config("missing `domain`".into()))?;
    if cfg.p == 0 {
        return Err(CliError::Config("p must be at least 1".into()));
    }
    let (d, p) = (d as i64, cfg.p as i64);
    let gap = d - p * (d - 2);
    if gap <= 0 {
        return Err(CliError::Admissibility(format!(
            "inadmissible (d, p) = ({d}, {p}): d − p(d−2) = {gap} must be positive"
        )));
    }
    Ok(())
}

struct Setup {
    dom: DomainSpec,
    lat: Arc<Lattice>,
    f: GridField,
    x0s: Vec<Vec<f64>>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let dom = cfg.domain()?;
    let lat = cfg.lattice(&dom)?;
    let f = cfg.test_function(&lat)?;
    let x0s = cfg.starts(&dom)?;
    Ok(Setup { dom, lat, f, x0s })
}

fn simulate(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let s = setup(cfg)?;
    let (t, dt, eps) = (cfg.t()?, cfg.dt()?, cfg.eps()?);
    if cfg.samples == 0 {
        return Err(CliError::Config("`samples` must be positive".into()));
    }
    let xs = sample_intersection_pairings(&s.dom, &s.x0s, t, dt, eps, &s.f, cfg.samples, cfg.seed)?;
    let hash = cfg.hash();
    let mut table = Table::new(&["sample", "pairing"]);
    for (i, v) in xs.iter().enumerate() {
        table.push(&hash, vec![i.to_string(), num(*v)]);
    }
    let (mean, se) = mean_and_se(&xs);
    let tp = t.powi(cfg.p as i32);
    Ok((table, json!({ "samples": xs.len(), "mean": mean, "std_error": se, "mean_times_tp": mean * tp, "std_error_times_tp": se * tp })))
}

fn moments(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let s = setup(cfg)?;
    let (t, eps) = (cfg.t()?, cfg.eps()?);
    let k_max = cfg.moments.as_ref().map_or(2, |m| m.k_max);
    if !(1..=2).contains(&k_max) {
        return Err(CliError::Config("moments.k_max must be 1 or 2".into()));
    }
    let hash = cfg.hash();
    let mut table = Table::new(&["k", "quantity", "value", "std_error"]);
    let mut summary = serde_json::Map::new();
    let mut push = |k: usize, q: &str, v: f64, se: Option<f64>| {
        table.push(&hash, vec![k.to_string(), q.into(), num(v), se.map(num).unwrap_or_default()]);
    };

    let mut mc = None;
    if cfg.samples > 0 {
        let xs = sample_intersection_pairings(&s.dom, &s.x0s, t, cfg.dt()?, eps, &s.f, cfg.samples, cfg.seed)?;
        let tp = t.powi(cfg.p as i32);
        let scaled: Vec<f64> = xs.iter().map(|v| v * tp).collect();
        let squares: Vec<f64> = scaled.iter().map(|v| v * v).collect();
        mc = Some((mean_and_se(&scaled), mean_and_se(&squares)));
    }

    for k in 1..=k_max {
        let plan = MomentPlan::new(s.dom.clone(), k, t, s.f.clone(), s.x0s.clone())?;
        let exact = moment_exact(&plan)?;
        let approx = moment_approx(&plan, eps)?;
        push(k, "exact", exact, None);
        push(k, "approx", approx, None);
        summary.insert(format!("exact_k{k}"), json!(exact));
        summary.insert(format!("approx_k{k}"), json!(approx));
        if k == 1 {
            push(k, "mean_gap", mean_gap(&plan, eps)?, None);
        } else {
            let dm = moment_diff_all(&plan, eps)?;
            push(k, "diff_formula", dm.formula, None);
            push(k, "diff_expanded", dm.expanded, None);
            push(k, "diff_bound", dm.bound, None);
        }
        if let Some(((m1, s1), (m2, s2))) = mc {
            let (m, se) = if k == 1 { (m1, s1) } else { (m2, s2) };
            push(k, "monte_carlo", m, Some(se));
            summary.insert(format!("mc_k{k}"), json!(m));
            summary.insert(format!("mc_se_k{k}"), json!(se));
            summary.insert(format!("mc_z_k{k}"), json!((m - approx) / se));
        }
    }
    Ok((table, Value::Object(summary)))
}

/// Bounding box of the nonzero nodes of `f`.
fn support_box(f: &GridField) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = f.lattice.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut any = false;
    for (i, v) in f.values.iter().enumerate() {
        if *v != 0.0 {
            any = true;
            for (k, c) in f.lattice.coords(i).into_iter().enumerate() {
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c);
            }
        }
    }
    any.then_some((lo, hi))
}

fn constants(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let s = setup(cfg)?;
    let cc = cfg.constants.clone().unwrap_or_default();
    let eps_list = if cc.eps_list.is_empty() { vec![cfg.eps()?] } else { cc.eps_list.clone() };
    let delta_list = if cc.delta_list.is_empty() { vec![cfg.delta()?] } else { cc.delta_list.clone() };
    let (lo, hi) = match (cc.u_lo.clone(), cc.u_hi.clone()) {
        (Some(lo), Some(hi)) => (lo, hi),
        (None, None) => {
            let grow = eps_list.iter().cloned().fold(0.0, f64::max);
            let (lo, hi) = support_box(&s.f).ok_or_else(|| CliError::Config("test function vanishes; set constants.u_lo/u_hi".into()))?;
            (lo.iter().map(|v| v - grow).collect(), hi.iter().map(|v| v + grow).collect())
        }
        _ => return Err(CliError::Config("constants.u_lo and constants.u_hi go together".into())),
    };
    let report = constants_report(&s.dom, cfg.p, &eps_list, &delta_list, &lo, &hi, &s.lat)?;
    let hash = cfg.hash();
    let mut table = Table::new(&["quantity", "k", "eps", "delta", "value", "bound"]);
    for e in &report.c1 {
        table.push(&hash, vec!["c1".into(), String::new(), num(e.eps), num(e.delta), num(e.value), e.tail_bound.map(num).unwrap_or_default()]);
    }
    for e in &report.c2 {
        table.push(&hash, vec!["c2".into(), String::new(), String::new(), num(e.delta), num(e.value), String::new()]);
    }
    table.push(&hash, vec!["c3".into(), String::new(), String::new(), String::new(), num(report.c3), String::new()]);
    let mut summary = json!({ "c3": report.c3, "u_lo": lo, "u_hi": hi });
    if report.c2.len() >= 2 {
        let slope = c2_scaling_exponent(&report.c2);
        table.push(&hash, vec!["c2_exponent".into(), String::new(), String::new(), String::new(), num(slope), String::new()]);
        summary["c2_exponent"] = json!(slope);
    }

    let mut checks = Vec::new();
    if !cc.check_k.is_empty() {
        let (t, eps, delta) = (cfg.t()?, cfg.eps()?, cfg.delta()?);
        for &k in &cc.check_k {
            match check_superexp(&s.dom, cfg.p, t, &s.f, &s.x0s, eps, delta, k) {
                Ok(r) => {
                    let row = |q: &str, v: f64| vec![q.to_string(), k.to_string(), num(eps), num(delta), num(v), String::new()];
                    table.push(&hash, row("superexp_lhs", r.lhs));
                    if let Some(x) = r.lhs_expanded {
                        table.push(&hash, row("superexp_lhs_expanded", x));
                    }
                    table.push(&hash, row("superexp_rhs", r.rhs));
                    table.push(&hash, row("superexp_holds", if r.holds { 1.0 } else { 0.0 }));
                    checks.push(json!({ "k": k, "lhs": r.lhs, "rhs": r.rhs, "holds": r.holds }));
                }
                Err(ImlError::Precondition(msg)) => {
                    table.push(&hash, vec!["superexp_refused".into(), k.to_string(), num(eps), num(delta), String::new(), String::new()]);
                    checks.push(json!({ "k": k, "refused": msg }));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    summary["superexp"] = Value::Array(checks);
    Ok((table, summary))
}

fn rate(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let dom = cfg.domain()?;
    let lat = cfg.lattice(&dom)?;
    let eig = principal_eigenpair(&dom, &lat)?;
    let density = eig.psi1.map(|v| v * v);
    let mus = vec![density; cfg.p];
    let tuple = MeasureTuple::from_densities(mus.clone())?;
    let ri = rate_i(&tuple);
    let rq = rayleigh_quotient(&dom, &eig.psi1)?;
    let p_lambda = cfg.p as f64 * eig.lambda1;
    let hash = cfg.hash();
    let mut table = Table::new(&["quantity", "eps", "value"]);
    let mut push = |q: &str, e: Option<f64>, v: f64| table.push(&hash, vec![q.into(), e.map(num).unwrap_or_default(), num(v)]);
    push("lambda1", None, eig.lambda1);
    push("residual", None, eig.residual);
    push("rayleigh_quotient", None, rq);
    push("p_lambda1", None, p_lambda);
    push("rate_i", None, ri);
    let mut summary = json!({
        "lambda1": eig.lambda1,
        "iterations": eig.iterations,
        "p_lambda1": p_lambda,
        "rate_i": ri,
        "rate_rel_error": (ri - p_lambda).abs() / p_lambda,
    });
    if let Some(eps) = cfg.eps {
        let mt = MeasureTuple::mollified_compatible(mus.clone(), eps)?;
        let rie = rate_i_eps(&mt, eps);
        let gap = product_mollification_gap(&mus, eps)?;
        push("rate_i_eps", Some(eps), rie);
        push("product_mollification_gap", Some(eps), gap);
        summary["rate_i_eps"] = json!(rie);
        summary["product_mollification_gap"] = json!(gap);
    }
    Ok((table, summary))
}

fn ldp_check(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let dom = cfg.domain()?;
    let t_list = cfg.ldp.as_ref().map(|l| l.t_list.clone()).ok_or_else(|| CliError::Config("missing `ldp.t_list`".into()))?;
    let x0 = cfg.starts(&dom)?.swap_remove(0);
    if cfg.samples == 0 {
        return Err(CliError::Config("`samples` must be positive".into()));
    }
    let tab = empirical_exit_rate(&dom, &x0, cfg.p, &t_list, cfg.dt()?, cfg.samples, cfg.seed)?;
    let hash = cfg.hash();
    let mut table = Table::new(&["t", "survivors", "survival", "rate", "std_error", "p_lambda1", "rel_gap", "low_count"]);
    let mut gaps = Vec::new();
    for r in &tab.rows {
        let gap = (r.rate - tab.p_lambda1).abs() / tab.p_lambda1;
        gaps.push(gap);
        table.push(
            &hash,
            vec![num(r.t), r.survivors.to_string(), num(r.survival), num(r.rate), num(r.std_error), num(tab.p_lambda1), num(gap), r.low_count.to_string()],
        );
    }
    let shrinking = gaps.windows(2).all(|w| w[1] < w[0]);
    Ok((table, json!({ "p_lambda1": tab.p_lambda1, "rel_gaps": gaps, "gap_shrinking": shrinking })))
}

fn stable(cfg: &ExperimentConfig) -> Result<(Table, Value), CliError> {
    let sc = cfg.stable.clone().ok_or_else(|| CliError::Config("missing `stable`".into()))?;
    let d = cfg.domain.as_ref().map(|dc| dc.d).ok_or_else(|| CliError::Config("missing `domain`".into()))?;
    let sp = StableParams::new(sc.alpha, d, cfg.p)?;
    sp.check()?;
    let hash = cfg.hash();
    let mut table = Table::new(&["quantity", "xi", "value", "reference", "std_error"]);
    let mut summary = json!({ "alpha": sp.alpha, "gap": sp.gap() });

    if cfg.samples > 0 {
        // increments over the whole horizon, where the law is far from a point mass
        let t = cfg.t()?;
        let xs = sample_stable_increments(sp.alpha, d, t, cfg.samples, cfg.seed)?;
        let mut worst: f64 = 0.0;
        for &xi in &sc.xi {
            let c: Vec<f64> = xs.iter().map(|x| (xi * x[0]).cos()).collect();
            let (m, se) = mean_and_se(&c);
            let exact = (-t * xi.abs().powf(sp.alpha)).exp();
            worst = worst.max((m - exact).abs() / se.max(f64::MIN_POSITIVE));
            table.push(&hash, vec!["char_fn".into(), num(xi), num(m), num(exact), num(se)]);
        }
        summary["char_fn_max_sigma"] = json!(worst);
    }

    if cfg.test_function.is_some() {
        let dom = cfg.domain()?;
        let g = cfg.grid.as_ref().ok_or_else(|| CliError::Config("missing `grid`".into()))?;
        let coarse_lat = cfg.lattice(&dom)?;
        let fine_lat = Arc::new(make_lattice(&dom, 0.5 * g.h, g.margin)?);
        let unit = |lat: &Arc<Lattice>| -> Result<GridField, CliError> {
            let f = cfg.test_function(lat)?;
            let n2 = f.lp_norm(2.0);
            if !(n2 > 0.0) {
                return Err(CliError::Config("test function vanishes on the lattice".into()));
            }
            Ok(f.scaled(1.0 / n2))
        };
        let (psi_c, psi_f) = (unit(&coarse_lat)?, unit(&fine_lat)?);
        let m = fractional_membership(&psi_c, &psi_f, sp.alpha)?;
        let density = psi_f.map(|v| v * v);
        let tuple = MeasureTuple::from_densities(vec![density; cfg.p])?;
        let r = if m.member { rate_i_stable(&tuple, &sp)? } else { f64::INFINITY };
        table.push(&hash, vec!["energy_coarse".into(), String::new(), num(m.coarse_energy), String::new(), String::new()]);
        table.push(&hash, vec!["energy_fine".into(), String::new(), num(m.fine_energy), String::new(), String::new()]);
        table.push(&hash, vec!["energy_growth".into(), String::new(), num(m.growth), String::new(), String::new()]);
        table.push(&hash, vec!["member".into(), String::new(), num(if m.member { 1.0 } else { 0.0 }), String::new(), String::new()]);
        table.push(&hash, vec!["rate_i_stable".into(), String::new(), num(r), String::new(), String::new()]);
        summary["member"] = json!(m.member);
        summary["energy_growth"] = json!(m.growth);
        summary["rate_i_stable"] = json!(if r.is_finite() { json!(r) } else { json!("inf") });
    }
    Ok((table, summary))
}

fn plot(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput, CliError> {
    let pc = cfg.plot.clone().ok_or_else(|| CliError::Config("missing `plot`".into()))?;
    let mut input = PathBuf::from(&pc.input);
    if input.is_relative() && !input.exists() {
        input = out.join(&pc.input);
    }
    let text = fs::read_to_string(&input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let filter = match (&pc.filter_column, &pc.filter_value) {
        (Some(c), Some(v)) => Some((c.as_str(), v.as_str())),
        (None, None) => None,
        _ => return Err(CliError::Config("plot.filter_column and plot.filter_value go together".into())),
    };
    let series = read_series(&text, &pc.x, &pc.y, pc.err.as_deref(), filter)?;
    let title = pc.title.clone().unwrap_or_else(|| format!("{} vs {}", pc.y, pc.x));
    let svg = render_svg(&series, &pc.x, &pc.y, &title);
    let summary = json!({ "points": series.x.len() });
    let (artifact, sidecar) = write_artifact(out, "plot", cfg, "svg", &svg, &summary)?;
    Ok(RunOutput { artifact, sidecar, summary })
}
