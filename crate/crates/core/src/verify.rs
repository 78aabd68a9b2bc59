//! Experiments that turn asymptotic-order claims into fitted log–log slopes
//! and pass/fail/inconclusive verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{AdjustmentKind, AdjustmentSpec};
use crate::mc::{
    bartlett_factor, bootstrap_pvalues, collect_outcomes, conditional_pivot_moments, pivot_values, replicate_outcomes,
    simulate_w, AncillaryConfig, BartlettFactor, GridSpec, MIN_BARTLETT_REPS,
};
use crate::models::{ModelSpec, ParamPoint};
use crate::numeric::{chi_squared_cdf, kolmogorov_pvalue, ks_statistic, normal_sf, summarize};
use crate::pivots::{beta1, expansion_coefficients_with, Beta1Mode, PivotKind, WecVariant};
use crate::rng::{stream_seed, substream};
use crate::tensors::{derive, tensors_at};
use crate::theory::{cf_pvalue_from_value, cumulants, expansion_terms, CumulantTriple};

/// Half-width of the acceptance band around a claimed slope.
pub const SLOPE_TOLERANCE: f64 = 0.3;
/// A grid point must exceed this many standard errors at the smallest `n`.
pub const POWER_SE: f64 = 3.0;
/// Smallest number of outer replications.
pub const MIN_OUTER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cf,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub theta0: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub outer: usize,
    pub pivots: Vec<PivotKind>,
    pub mode: Mode,
    pub seed: u64,
    /// Bootstrap size per outer dataset in bootstrap mode.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_reps: usize,
    /// Simulation size for cumulant tensors of families without closed forms.
    #[serde(default = "default_tensor_reps")]
    pub tensor_reps: usize,
    #[serde(default)]
    pub adjustment: Option<AdjustmentSpec>,
    #[serde(default)]
    pub wec: WecVariant,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

fn default_bootstrap() -> usize {
    2000
}

fn default_tensor_reps() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, theta0: Vec<f64>, n_grid: Vec<usize>, outer: usize, pivots: Vec<PivotKind>, mode: Mode, seed: u64) -> Self {
        ExperimentConfig {
            model,
            theta0,
            n_grid,
            outer,
            pivots,
            mode,
            seed,
            bootstrap_reps: default_bootstrap(),
            tensor_reps: default_tensor_reps(),
            adjustment: None,
            wec: WecVariant::default(),
            grid: None,
        }
    }

    fn validate(&self, pivots_needed: Option<usize>) -> Result<ParamPoint> {
        self.model.validate()?;
        let theta = self.model.param(self.theta0.clone())?;
        if self.n_grid.len() < 3 {
            return Err(Error::Invalid(format!("n_grid needs at least 3 sizes, got {}", self.n_grid.len())));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < self.model.min_n()) {
            return Err(Error::Invalid(format!("n = {n} is below the minimum {} for {}", self.model.min_n(), self.model.name())));
        }
        if self.outer < MIN_OUTER {
            return Err(Error::Invalid(format!("outer = {} is below {MIN_OUTER}", self.outer)));
        }
        match pivots_needed {
            Some(k) if self.pivots.len() != k => {
                return Err(Error::Invalid(format!("expected {k} pivot kinds, got {}", self.pivots.len())));
            }
            None if self.pivots.is_empty() => return Err(Error::Invalid("no pivot kinds given".into())),
            _ => {}
        }
        if self.pivots.iter().any(|k| k.is_adjusted()) && self.adjustment.is_none_or(|a| a.kind == AdjustmentKind::None) {
            return Err(Error::Invalid("adjusted pivots need an adjustment specification".into()));
        }
        Ok(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    pub n: usize,
    pub metric: f64,
    pub metric_se: f64,
    /// Replicates entering the metric.
    pub count: usize,
    pub failed: usize,
    /// Set when the point was left out of the fit.
    pub dropped: Option<String>,
    /// Experiment-specific side quantities.
    #[serde(default)]
    pub extra: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub label: String,
    pub points: Vec<SlopePoint>,
    /// Least-squares slope of log metric on log n; absent when undefined.
    pub slope: Option<f64>,
    /// Slope standard error propagated from the per-point Monte Carlo errors.
    pub slope_se: Option<f64>,
    pub claim: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub pass: bool,
}

impl SlopeReport {
    pub fn n_grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n).collect()
    }

    pub fn metrics(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.metric).collect()
    }
}

/// Fits the slope and assigns a verdict. Inconclusive when the smallest-n
/// metric is within `POWER_SE` standard errors of zero or fewer than three
/// usable points remain.
pub fn slope_report(label: String, points: Vec<SlopePoint>, claim: f64) -> SlopeReport {
    let used: Vec<&SlopePoint> = points.iter().filter(|p| p.dropped.is_none() && p.metric > 0.0).collect();
    let (slope, slope_se) = if used.len() >= 2 {
        let x: Vec<f64> = used.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = used.iter().map(|p| p.metric.ln()).collect();
        let line = crate::numeric::fit_line(&x, &y);
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        let var: f64 = used
            .iter()
            .zip(&x)
            .map(|(p, xi)| {
                let c = (xi - mx) / sxx;
                c * c * (p.metric_se / p.metric).powi(2)
            })
            .sum();
        (Some(line.slope), Some(var.sqrt()))
    } else {
        (None, None)
    };
    let powered = points.first().is_some_and(|p| p.dropped.is_none() && p.metric > POWER_SE * p.metric_se);
    let verdict = match slope {
        Some(s) if powered && used.len() >= 3 && s.is_finite() => {
            if (s - claim).abs() <= SLOPE_TOLERANCE {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        _ => Verdict::Inconclusive,
    };
    SlopeReport { label, points, slope, slope_se, claim, tolerance: SLOPE_TOLERANCE, verdict, pass: verdict == Verdict::Pass }
}

/// Claimed exponent for two pivots' p-value agreement: `n⁻¹` when both are
/// stable or both unstable (same `ξ^{rst}` family), otherwise `n^{-1/2}`.
pub fn claimed_agreement_slope(a: PivotKind, b: PivotKind) -> f64 {
    let family = |k: PivotKind| match k.base() {
        PivotKind::WE | PivotKind::WEC => 1,
        PivotKind::SE | PivotKind::SEC => 2,
        _ => 0,
    };
    if family(a) == family(b) {
        -1.0
    } else {
        -0.5
    }
}

struct CfSetup {
    cumulants: Vec<CumulantTriple>,
}

fn cf_setup(cfg: &ExperimentConfig, theta: &ParamPoint, n: usize, seed: u64) -> Result<CfSetup> {
    let t = tensors_at(&cfg.model, theta, n, cfg.tensor_reps, substream(seed, "tensors", 0))?;
    let dt = derive(&t)?;
    let info = match cfg.adjustment {
        Some(adj) if adj.kind != AdjustmentKind::None && cfg.pivots.iter().any(|k| k.is_adjusted()) => {
            Some(beta1(&adj, &t, &dt, &cfg.model, theta, n, Beta1Mode::Analytic)?)
        }
        _ => None,
    };
    let cumulants = cfg
        .pivots
        .iter()
        .map(|&k| {
            let c = expansion_coefficients_with(k, &t, &dt, info.as_ref(), cfg.wec)?;
            cumulants(&c, &t, &dt)
        })
        .collect::<Result<_>>()?;
    Ok(CfSetup { cumulants })
}

/// Mean `|p_A − p_B|` across outer datasets drawn under the null at each `n`.
pub fn order_of_agreement(cfg: &ExperimentConfig) -> Result<SlopeReport> {
    let theta = cfg.validate(Some(2))?;
    let (ka, kb) = (cfg.pivots[0], cfg.pivots[1]);
    let psi0 = theta.values[0];
    let adj = cfg.adjustment.as_ref();
    let mut points = Vec::new();
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let seed = substream(cfg.seed, "order", gi as u64);
        let setup = match cfg.mode {
            Mode::Cf => Some(cf_setup(cfg, &theta, n, seed)?),
            Mode::Bootstrap => None,
        };
        let run = |s: u64, init: Option<&ParamPoint>| -> Result<f64> {
            let data = cfg.model.simulate(&theta, n, s)?;
            let (pa, pb) = match &setup {
                Some(st) => {
                    let v = pivot_values(&cfg.pivots, &cfg.model, &data, psi0, adj, init)?;
                    (cf_pvalue_from_value(v[0], &st.cumulants[0]), cf_pvalue_from_value(v[1], &st.cumulants[1]))
                }
                None => {
                    let r = bootstrap_pvalues(&cfg.pivots, &cfg.model, &data, psi0, cfg.bootstrap_reps, stream_seed(s, "inner", 0), adj)?;
                    (r[0].p_value, r[1].p_value)
                }
            };
            Ok((pa - pb).abs())
        };
        let outcomes = replicate_outcomes(cfg.outer, seed, "outer", |s| run(s, None), |s| run(s, Some(&theta)));
        let total = outcomes.len();
        points.push(match collect_outcomes(outcomes) {
            Ok((vals, failed)) => {
                let s = summarize(&vals);
                SlopePoint { n, metric: s.mean, metric_se: s.se, count: s.count, failed: failed.len(), dropped: None, extra: vec![] }
            }
            Err(e @ (Error::TooManyFailures { .. } | Error::Replicate { .. })) => SlopePoint {
                n,
                metric: f64::NAN,
                metric_se: f64::NAN,
                count: 0,
                failed: total,
                dropped: Some(e.to_string()),
                extra: vec![],
            },
            Err(e) => return Err(e),
        });
    }
    let mode = match cfg.mode {
        Mode::Cf => "cf",
        Mode::Bootstrap => "bootstrap",
    };
    Ok(slope_report(format!("order {ka},{kb} ({mode})"), points, claimed_agreement_slope(ka, kb)))
}

/// Conditional-versus-unconditional behaviour of each pivot on a
/// location-scale family. The metric is the standard deviation across
/// simulated configurations of the conditional variance `var(T | a)`; the
/// conditional mean is reported alongside.
pub fn stability_experiment(cfg: &ExperimentConfig) -> Result<Vec<SlopeReport>> {
    let theta = cfg.validate(None)?;
    if !matches!(cfg.model, ModelSpec::LocationScale { .. }) {
        return Err(Error::Invalid(format!("stability experiments need a location-scale family, got {}", cfg.model.name())));
    }
    let spec = cfg.grid.unwrap_or_default();
    let adj = cfg.adjustment.as_ref();
    let k = cfg.pivots.len();
    let mut per_kind: Vec<Vec<SlopePoint>> = vec![Vec::new(); k];
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let seed = substream(cfg.seed, "stability", gi as u64);
        let run = |s: u64| -> Result<Vec<(f64, f64, f64)>> {
            let a = AncillaryConfig::simulate(&cfg.model, &theta, n, s)?;
            let m = conditional_pivot_moments(&cfg.pivots, &cfg.model, &a, &theta, spec, adj)?;
            Ok(m.iter().map(|c| (c.mean, c.var, c.quad_error_var.max(c.quad_error_mean))).collect())
        };
        let outcomes = replicate_outcomes(cfg.outer, seed, "config", run, run);
        let (rows, failed) = collect_outcomes(outcomes)?;
        let m = rows.len();
        for (j, pts) in per_kind.iter_mut().enumerate() {
            let means: Vec<f64> = rows.iter().map(|r| r[j].0).collect();
            let vars: Vec<f64> = rows.iter().map(|r| r[j].1).collect();
            let quad = rows.iter().map(|r| r[j].2).fold(0.0, f64::max);
            let sv = summarize(&vars);
            let sm = summarize(&means);
            pts.push(SlopePoint {
                n,
                metric: sv.sd,
                metric_se: sv.sd / (2.0 * (m as f64 - 1.0)).sqrt(),
                count: m,
                failed: failed.len(),
                dropped: None,
                extra: vec![
                    ("mean_conditional_variance".into(), sv.mean),
                    ("sd_conditional_mean".into(), sm.sd),
                    ("mean_conditional_mean".into(), sm.mean),
                    ("mean_conditional_mean_se".into(), sm.se),
                    ("max_quadrature_error".into(), quad),
                ],
            });
        }
    }
    Ok(cfg
        .pivots
        .iter()
        .zip(per_kind)
        .map(|(&kind, pts)| {
            let claim = if kind.is_stable() { -1.0 } else { -0.5 };
            slope_report(format!("stability {kind} ({})", cfg.model.name()), pts, claim)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartlettReport {
    pub q: usize,
    pub n: usize,
    pub reps: usize,
    pub adjusted: bool,
    pub factor: BartlettFactor,
    pub mean_over_q_before: f64,
    pub mean_over_q_after: f64,
    pub mc_se_before: f64,
    pub mc_se_after: f64,
    pub ks_before: f64,
    pub ks_after: f64,
    pub ks_pvalue_before: f64,
    pub ks_pvalue_after: f64,
    pub pass: bool,
}

/// Compares `W` (or `W̄`) with `χ²_q` before and after division by a
/// Bartlett factor estimated on an independent stream.
pub fn bartlett_experiment(
    model: &ModelSpec,
    theta0: &ParamPoint,
    n: usize,
    reps: usize,
    seed: u64,
    adjusted: Option<&AdjustmentSpec>,
) -> Result<BartlettReport> {
    if reps < MIN_BARTLETT_REPS {
        return Err(Error::Invalid(format!("Bartlett experiment needs at least {MIN_BARTLETT_REPS} replicates")));
    }
    let factor = bartlett_factor(model, theta0, n, reps, substream(seed, "bartlett-factor", 0), adjusted)?;
    let w = simulate_w(model, theta0, n, reps, substream(seed, "bartlett-test", 0), "bartlett-test", adjusted)?;
    let q = factor.q;
    let qf = q as f64;
    let s = summarize(&w);
    let before = s.mean / qf;
    let se_before = s.se / qf;
    let after = before / factor.factor;
    let se_after = after * ((se_before / before).powi(2) + (factor.mc_se / factor.factor).powi(2)).sqrt();
    let corrected: Vec<f64> = w.iter().map(|x| x / factor.factor).collect();
    let cdf = |x: f64| chi_squared_cdf(x, qf);
    let ks_before = ks_statistic(&w, cdf);
    let ks_after = ks_statistic(&corrected, cdf);
    Ok(BartlettReport {
        q,
        n,
        reps: w.len(),
        adjusted: adjusted.is_some(),
        factor,
        mean_over_q_before: before,
        mean_over_q_after: after,
        mc_se_before: se_before,
        mc_se_after: se_after,
        ks_before,
        ks_after,
        ks_pvalue_before: kolmogorov_pvalue(ks_before, w.len()),
        ks_pvalue_after: kolmogorov_pvalue(ks_after, w.len()),
        pass: (after - 1.0).abs() <= 4.0 * se_after && ks_after <= ks_before,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityCheck {
    pub ks: f64,
    pub ks_pvalue: f64,
    pub pass: bool,
}

impl UniformityCheck {
    fn of(p: &[f64]) -> Self {
        let ks = ks_statistic(p, |x| x.clamp(0.0, 1.0));
        let ks_pvalue = kolmogorov_pvalue(ks, p.len());
        UniformityCheck { ks, ks_pvalue, pass: ks_pvalue >= UNIFORMITY_LEVEL }
    }
}

/// Level of the Kolmogorov–Smirnov uniformity test.
pub const UNIFORMITY_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub kind: PivotKind,
    pub n: usize,
    pub outer: usize,
    pub bootstrap_reps: usize,
    pub pvalues: Vec<f64>,
    pub bootstrap: UniformityCheck,
    /// `1 − Φ(T₁)` with `T₁` left without its `η^{1/2}` scaling.
    pub unscaled_control: UniformityCheck,
    pub pass: bool,
}

/// Distribution of bootstrap p-values over outer datasets drawn under the null.
#[allow(clippy::too_many_arguments)]
pub fn uniformity_experiment(
    kind: PivotKind,
    model: &ModelSpec,
    theta0: &ParamPoint,
    n: usize,
    outer: usize,
    b: usize,
    seed: u64,
    adjustment: Option<&AdjustmentSpec>,
) -> Result<UniformityReport> {
    model.check_theta(theta0)?;
    if model.interest_dim() != 1 {
        return Err(Error::Invalid("uniformity experiment needs a scalar interest parameter".into()));
    }
    let psi0 = theta0.values[0];
    let t = tensors_at(model, theta0, n, default_tensor_reps(), substream(seed, "tensors", 0))?;
    let dt = derive(&t)?;
    let zero = expansion_coefficients_with(PivotKind::R, &t, &dt, None, WecVariant::default())?;
    let run = |s: u64| -> Result<(f64, f64)> {
        let data = model.simulate(theta0, n, s)?;
        let p = bootstrap_pvalues(&[kind], model, &data, psi0, b, stream_seed(s, "inner", 0), adjustment)?[0].p_value;
        let (t1, _) = expansion_terms(&zero, model, &data, theta0, &t, &dt)?;
        Ok((p, normal_sf(t1 / dt.eta.sqrt())))
    };
    let outcomes = replicate_outcomes(outer, substream(seed, "uniformity", 0), "outer", run, run);
    let (rows, _) = collect_outcomes(outcomes)?;
    let pvalues: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let control: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let bootstrap = UniformityCheck::of(&pvalues);
    let unscaled_control = UniformityCheck::of(&control);
    let pass = bootstrap.pass && !unscaled_control.pass;
    Ok(UniformityReport { kind, n, outer: rows.len(), bootstrap_reps: b, pvalues, bootstrap, unscaled_control, pass })
}
