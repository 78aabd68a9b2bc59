//! One function per subcommand, each returning results, warnings, seeds and a table.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use pivotal_core::fit::{fit_constrained_warm, fit_global, AdjustmentKind};
use pivotal_core::mc::{bootstrap_pvalues, BootstrapResult};
use pivotal_core::models::Dataset;
use pivotal_core::pivots::{beta1, expansion_coefficients_with, Beta1Mode, ExpansionCoefficients, PivotContext};
use pivotal_core::rng::substream;
use pivotal_core::tensors::{derive, tensors_at};
use pivotal_core::theory::{cf_pvalue_from_value, cumulants, equivalence_check, stability_check, CumulantTriple};
use pivotal_core::verify::{
    bartlett_experiment, claimed_agreement_slope, order_of_agreement, stability_experiment, uniformity_experiment,
    ExperimentConfig, Mode, SlopeReport,
};
use pivotal_core::{AdjustmentSpec, CumulantTensors, DerivedTensors, ModelSpec, ParamPoint, PivotKind, WecVariant};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, DEFAULT_BARTLETT_REPS, DEFAULT_BOOTSTRAP_REPS, DEFAULT_OUTER, DEFAULT_TENSOR_REPS};
use crate::report::{Output, Table};
use crate::CliError;

pub fn dispatch(name: &str, cfg: &mut RunConfig) -> Result<Output, CliError> {
    match name {
        "fit" => fit(cfg),
        "pivot" => pivot(cfg),
        "equiv-check" => equiv_check(cfg),
        "stability-check" => stab_check(cfg),
        "bartlett" => bartlett(cfg),
        "verify-order" => verify_order(cfg),
        "verify-stability" => verify_stability(cfg),
        "verify-uniformity" => verify_uniformity(cfg),
        other => Err(CliError::Validation(format!("unknown subcommand `{other}`"))),
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn num(x: f64) -> String {
    x.to_string()
}

fn read_csv(path: &std::path::Path, p: usize) -> Result<Dataset, CliError> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| bad(e.to_string()))?;
    let cols = reader.headers().map_err(|e| bad(e.to_string()))?.len();
    if cols != p {
        return Err(bad(format!("expected {p} column(s), the header has {cols}")));
    }
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| bad(format!("line {}: `{field}` is not a number", i + 2)))?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(bad("no observations".into()));
    }
    Ok(Dataset::from_rows(values.len() / p, p, values)?)
}

/// The data set named by exactly one of `data` and `simulate`.
fn load_data(cfg: &RunConfig, model: &ModelSpec, seeds: &mut BTreeMap<String, u64>) -> Result<Dataset, CliError> {
    let data = match (&cfg.data, &cfg.simulate) {
        (Some(path), None) => read_csv(path, model.obs_dim())?,
        (None, Some(sim)) => {
            let seed = substream(cfg.seed()?, "data", 0);
            seeds.insert("data".into(), seed);
            model.simulate(&model.param(sim.theta.clone())?, sim.n, seed)?
        }
        (Some(_), Some(_)) => return Err(CliError::Validation("give either `data` or `simulate`, not both".into())),
        (None, None) => return Err(CliError::Validation("missing required field `data` (or `simulate`)".into())),
    };
    model.check_data(&data)?;
    Ok(data)
}

/// Seed for cumulant tensors; only families without closed forms consume one.
fn tensor_seed(cfg: &mut RunConfig, model: &ModelSpec, seeds: &mut BTreeMap<String, u64>) -> Result<(usize, u64), CliError> {
    if model.analytic_tensors() {
        return Ok((0, 0));
    }
    let reps = RunConfig::default_of(&mut cfg.tensor_reps, DEFAULT_TENSOR_REPS);
    let seed = substream(cfg.seed()?, "tensors", 0);
    seeds.insert("tensors".into(), seed);
    Ok((reps, seed))
}

struct Expansion {
    t: CumulantTensors,
    dt: DerivedTensors,
    coefficients: Vec<ExpansionCoefficients>,
}

fn expansions(
    kinds: &[PivotKind],
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    adj: Option<&AdjustmentSpec>,
    wec: WecVariant,
    (reps, seed): (usize, u64),
) -> Result<Expansion, CliError> {
    let t = tensors_at(model, theta, n, reps, seed)?;
    let dt = derive(&t)?;
    let info = match adj {
        Some(a) if a.kind != AdjustmentKind::None && kinds.iter().any(|k| k.is_adjusted()) => {
            Some(beta1(a, &t, &dt, model, theta, n, Beta1Mode::Analytic)?)
        }
        _ => None,
    };
    let coefficients = kinds.iter().map(|&k| expansion_coefficients_with(k, &t, &dt, info.as_ref(), wec)).collect::<Result<_, _>>()?;
    Ok(Expansion { t, dt, coefficients })
}

fn fit(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let mut seeds = BTreeMap::new();
    if let Some(s) = cfg.seed {
        seeds.insert("master".into(), s);
    }
    let data = load_data(cfg, &model, &mut seeds)?;
    let f = fit_global(&model, &data, None)?;
    f.require_converged()?;
    let inv = f.observed_info.clone().try_inverse().ok_or_else(|| CliError::Numerical("observed information is singular".into()))?;
    let se: Vec<f64> = (0..model.dim()).map(|i| inv[(i, i)].sqrt()).collect();
    let mut table = Table::new(&["index", "estimate", "standard_error"]);
    for (i, (v, s)) in f.theta_hat.values.iter().zip(&se).enumerate() {
        table.push(vec![i.to_string(), num(*v), num(*s)]);
    }
    let mut results = json!({
        "model": model.name(),
        "n": data.n(),
        "theta_hat": f.theta_hat.values,
        "standard_errors": se,
        "loglik": f.loglik,
        "observed_info": rows(&f.observed_info),
        "iterations": f.iterations,
        "grad_norm": f.grad_norm,
    });
    if let Some(psi0) = cfg.psi0 {
        let psi: Vec<f64> = vec![psi0; model.interest_dim()];
        let p = fit_constrained_warm(&model, &data, &psi, &f)?;
        p.require_converged()?;
        results["constrained"] = json!({
            "psi0": p.psi0,
            "theta_tilde": p.theta_tilde.values,
            "profile_loglik": p.profile_loglik,
            "w": (2.0 * (f.loglik - p.profile_loglik)).max(0.0),
        });
    }
    Ok(Output { results, warnings: vec![], seeds, table })
}

fn kinds_or(cfg: &mut RunConfig, default: Vec<PivotKind>) -> Result<Vec<PivotKind>, CliError> {
    let kinds = RunConfig::default_of(&mut cfg.pivots, default);
    if kinds.is_empty() {
        return Err(CliError::Validation("config field `pivots`: no pivot kinds given".into()));
    }
    Ok(kinds)
}

#[derive(Serialize)]
struct PivotRow {
    kind: PivotKind,
    value: f64,
    cumulants: CumulantTriple,
    cf_pvalue: f64,
    bootstrap: Option<BootstrapResult>,
}

fn pivot(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?;
    let master = cfg.seed()?;
    let mut seeds = BTreeMap::from([("master".to_string(), master)]);
    let data = load_data(cfg, &model, &mut seeds)?;
    let psi0 = RunConfig::require(&cfg.psi0, "psi0")?;
    let kinds = kinds_or(cfg, vec![PivotKind::R])?;
    let b = RunConfig::default_of(&mut cfg.bootstrap_reps, DEFAULT_BOOTSTRAP_REPS);
    let wec = RunConfig::default_of(&mut cfg.wec, WecVariant::default());
    let mut ctx = PivotContext::new(&model, &data, psi0, adj.as_ref())?;
    let values: Vec<f64> = kinds.iter().map(|&k| ctx.value(k)).collect::<Result<_, _>>()?;
    let theta_tilde = ctx.profile.theta_tilde.clone();
    let tseed = tensor_seed(cfg, &model, &mut seeds)?;
    let ex = expansions(&kinds, &model, &theta_tilde, data.n(), adj.as_ref(), wec, tseed)?;
    let boot = if b > 0 {
        let s = substream(master, "bootstrap", 0);
        seeds.insert("bootstrap".into(), s);
        Some(bootstrap_pvalues(&kinds, &model, &data, psi0, b, s, adj.as_ref())?)
    } else {
        None
    };
    let mut warnings = Vec::new();
    let mut table = Table::new(&["kind", "value", "cf_pvalue", "bootstrap_pvalue", "bootstrap_mc_se"]);
    let mut out = Vec::new();
    for (j, &kind) in kinds.iter().enumerate() {
        let k = cumulants(&ex.coefficients[j], &ex.t, &ex.dt)?;
        let cf = cf_pvalue_from_value(values[j], &k);
        let b = boot.as_ref().map(|v| v[j].clone());
        let (bp, bse) = b.as_ref().map_or((String::new(), String::new()), |r| (num(r.p_value), num(r.mc_se)));
        table.push(vec![kind.to_string(), num(values[j]), num(cf), bp, bse]);
        out.push(PivotRow { kind, value: values[j], cumulants: k, cf_pvalue: cf, bootstrap: b });
    }
    if let Some(r) = boot.as_ref().and_then(|v| v.first()) {
        if r.failed > 0 {
            warnings.push(format!("{} of {b} bootstrap replicates failed and were dropped", r.failed));
        }
    }
    let results = json!({
        "model": model.name(),
        "n": data.n(),
        "psi0": psi0,
        "theta_hat": ctx.fit.theta_hat.values,
        "theta_tilde": theta_tilde.values,
        "pivots": to_value(&out),
    });
    Ok(Output { results, warnings, seeds, table })
}

fn point(cfg: &mut RunConfig, model: &ModelSpec) -> Result<(ParamPoint, usize), CliError> {
    let theta = model.param(RunConfig::require(&cfg.theta, "theta")?)?;
    let n = RunConfig::require(&cfg.n, "n")?;
    if n < model.min_n() {
        return Err(CliError::Validation(format!("n = {n} is below the minimum {} for {}", model.min_n(), model.name())));
    }
    Ok((theta, n))
}

fn optional_master(cfg: &RunConfig, model: &ModelSpec) -> Result<BTreeMap<String, u64>, CliError> {
    let mut seeds = BTreeMap::new();
    if !model.analytic_tensors() {
        seeds.insert("master".into(), cfg.seed()?);
    } else if let Some(s) = cfg.seed {
        seeds.insert("master".into(), s);
    }
    Ok(seeds)
}

fn equiv_check(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?;
    let (theta, n) = point(cfg, &model)?;
    let pair = RunConfig::require(&cfg.pair, "pair")?;
    if pair.len() != 2 {
        return Err(CliError::Validation(format!("config field `pair`: expected two pivot kinds, got {}", pair.len())));
    }
    let wec = RunConfig::default_of(&mut cfg.wec, WecVariant::default());
    let mut seeds = optional_master(cfg, &model)?;
    let tseed = tensor_seed(cfg, &model, &mut seeds)?;
    let ex = expansions(&pair, &model, &theta, n, adj.as_ref(), wec, tseed)?;
    let conditions = equivalence_check(&ex.coefficients[0], &ex.coefficients[1], &ex.t, &ex.dt)?;
    let mut table = Table::new(&["condition", "residual", "scale", "threshold", "pass"]);
    for c in &conditions {
        table.push(vec![to_value(&c.condition).as_str().unwrap_or_default().to_string(), num(c.residual), num(c.scale), num(c.threshold), c.pass.to_string()]);
    }
    let results = json!({
        "model": model.name(),
        "pair": pair,
        "theta": theta.values,
        "n": n,
        "conditions": to_value(&conditions),
        "pass": conditions.iter().all(|c| c.pass),
        "claimed_agreement_slope": claimed_agreement_slope(pair[0], pair[1]),
    });
    Ok(Output { results, warnings: vec![], seeds, table })
}

fn stab_check(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?;
    let (theta, n) = point(cfg, &model)?;
    let adjusted_ok = adj.is_some_and(|a| a.kind != AdjustmentKind::None);
    let all: Vec<PivotKind> = PivotKind::ALL.into_iter().filter(|k| adjusted_ok || !k.is_adjusted()).collect();
    let kinds = kinds_or(cfg, all)?;
    let wec = RunConfig::default_of(&mut cfg.wec, WecVariant::default());
    let mut seeds = optional_master(cfg, &model)?;
    let tseed = tensor_seed(cfg, &model, &mut seeds)?;
    let ex = expansions(&kinds, &model, &theta, n, adj.as_ref(), wec, tseed)?;
    let mut table = Table::new(&["kind", "residual", "scale", "threshold", "pass"]);
    let mut out = Vec::new();
    for (k, c) in kinds.iter().zip(&ex.coefficients) {
        let r = stability_check(c, &ex.dt);
        table.push(vec![k.to_string(), num(r.residual), num(r.scale), num(r.threshold), r.pass.to_string()]);
        out.push(json!({ "kind": k, "report": to_value(&r) }));
    }
    let results = json!({ "model": model.name(), "theta": theta.values, "n": n, "kinds": out });
    Ok(Output { results, warnings: vec![], seeds, table })
}

fn bartlett(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?.filter(|a| a.kind != AdjustmentKind::None);
    let (theta, n) = point(cfg, &model)?;
    let reps = RunConfig::default_of(&mut cfg.reps, DEFAULT_BARTLETT_REPS);
    let master = cfg.seed()?;
    let r = bartlett_experiment(&model, &theta, n, reps, master, adj.as_ref())?;
    let mut table = Table::new(&["q", "n", "reps", "factor", "factor_mc_se", "mean_over_q_before", "mean_over_q_after", "ks_before", "ks_after"]);
    table.push(vec![
        r.q.to_string(),
        r.n.to_string(),
        r.reps.to_string(),
        num(r.factor.factor),
        num(r.factor.mc_se),
        num(r.mean_over_q_before),
        num(r.mean_over_q_after),
        num(r.ks_before),
        num(r.ks_after),
    ]);
    let seeds = BTreeMap::from([("master".to_string(), master)]);
    Ok(Output { results: to_value(&r), warnings: vec![], seeds, table })
}

fn experiment(cfg: &mut RunConfig, pivots: Vec<PivotKind>, outer_default: usize) -> Result<ExperimentConfig, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?;
    let theta0 = RunConfig::require(&cfg.theta, "theta")?;
    let n_grid = RunConfig::require(&cfg.n_grid, "n_grid")?;
    let outer = RunConfig::default_of(&mut cfg.outer, outer_default);
    let mode = RunConfig::default_of(&mut cfg.mode, Mode::Cf);
    let mut e = ExperimentConfig::new(model, theta0, n_grid, outer, pivots, mode, cfg.seed()?);
    e.bootstrap_reps = RunConfig::default_of(&mut cfg.bootstrap_reps, DEFAULT_BOOTSTRAP_REPS);
    e.tensor_reps = RunConfig::default_of(&mut cfg.tensor_reps, DEFAULT_TENSOR_REPS);
    e.adjustment = adj;
    e.wec = RunConfig::default_of(&mut cfg.wec, WecVariant::default());
    e.grid = cfg.grid;
    Ok(e)
}

fn slope_rows(table: &mut Table, r: &SlopeReport) {
    for p in &r.points {
        table.push(vec![r.label.clone(), p.n.to_string(), num(p.metric), num(p.metric_se), p.count.to_string(), p.failed.to_string()]);
    }
}

fn slope_warnings(r: &SlopeReport) -> Vec<String> {
    r.points
        .iter()
        .filter_map(|p| p.dropped.as_ref().map(|d| format!("{}: n = {} dropped from the fit: {d}", r.label, p.n)))
        .collect()
}

const SLOPE_HEADER: [&str; 6] = ["series", "n", "metric", "metric_se", "count", "failed"];

fn verify_order(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let pair = match (&cfg.pair, &cfg.pivots) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => return Err(CliError::Validation("missing required field `pair`".into())),
    };
    let e = experiment(cfg, pair, DEFAULT_OUTER)?;
    let r = order_of_agreement(&e)?;
    let mut table = Table::new(&SLOPE_HEADER);
    slope_rows(&mut table, &r);
    let seeds = BTreeMap::from([("master".to_string(), e.seed)]);
    Ok(Output { results: to_value(&r), warnings: slope_warnings(&r), seeds, table })
}

fn verify_stability(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let kinds = kinds_or(cfg, vec![PivotKind::R, PivotKind::WE])?;
    let e = experiment(cfg, kinds, 200)?;
    let reports = stability_experiment(&e)?;
    let mut table = Table::new(&SLOPE_HEADER);
    let mut warnings = Vec::new();
    for r in &reports {
        slope_rows(&mut table, r);
        warnings.extend(slope_warnings(r));
    }
    let seeds = BTreeMap::from([("master".to_string(), e.seed)]);
    Ok(Output { results: to_value(&reports), warnings, seeds, table })
}

fn verify_uniformity(cfg: &mut RunConfig) -> Result<Output, CliError> {
    let model = cfg.resolve_model()?;
    let adj = cfg.resolve_adjustment()?;
    let kinds = kinds_or(cfg, vec![PivotKind::R])?;
    if kinds.len() != 1 {
        return Err(CliError::Validation(format!("config field `pivots`: expected one pivot kind, got {}", kinds.len())));
    }
    let (theta, n) = point(cfg, &model)?;
    let outer = RunConfig::default_of(&mut cfg.outer, 500);
    let b = RunConfig::default_of(&mut cfg.bootstrap_reps, 999);
    let master = cfg.seed()?;
    let r = uniformity_experiment(kinds[0], &model, &theta, n, outer, b, master, adj.as_ref())?;
    let mut table = Table::new(&["index", "bootstrap_pvalue"]);
    for (i, p) in r.pvalues.iter().enumerate() {
        table.push(vec![i.to_string(), num(*p)]);
    }
    let seeds = BTreeMap::from([("master".to_string(), master)]);
    Ok(Output { results: to_value(&r), warnings: vec![], seeds, table })
}
