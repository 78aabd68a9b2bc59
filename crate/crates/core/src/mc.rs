//! Monte Carlo engines: parametric bootstrap p-values, the bootstrap
//! standardized signed root, simulated Bartlett factors, and the exact
//! conditional distribution of location-scale estimates given the
//! configuration ancillary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_constrained_warm, fit_global, AdjustmentSpec};
use crate::models::{BaseDensity, Dataset, ModelSpec, ParamPoint};
use crate::numeric::summarize;
use crate::pivots::{PivotContext, PivotKind};
use crate::rng::stream_seed;

/// Smallest bootstrap size accepted for p-values.
pub const MIN_BOOTSTRAP: usize = 500;
/// Smallest replicate count accepted for Bartlett factors.
pub const MIN_BARTLETT_REPS: usize = 1000;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMoments {
    pub mean_star: f64,
    pub var_star: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub kind: PivotKind,
    pub observed: f64,
    pub p_value: f64,
    pub mc_se: f64,
    pub moments: BootstrapMoments,
    pub failed: usize,
    pub failures: Vec<FailedReplicate>,
}

/// Runs `f` on replicate `i`, retrying once through `retry` on failure.
/// Returns per-replicate outcomes in index order.
pub(crate) fn replicate_outcomes<T: Send>(
    count: usize,
    seed: u64,
    label: &str,
    f: impl Fn(u64) -> Result<T> + Sync,
    retry: impl Fn(u64) -> Result<T> + Sync,
) -> Vec<(u64, Result<T>)> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = stream_seed(seed, label, i as u64);
            let out = f(s).or_else(|e| retry(s).map_err(|_| e));
            (s, out)
        })
        .collect()
}

/// Index and seed of a replicate that failed twice.
pub type FailedReplicate = (usize, u64);

/// Splits outcomes into successes and failures, aborting above the failure limit.
pub(crate) fn collect_outcomes<T>(outcomes: Vec<(u64, Result<T>)>) -> Result<(Vec<T>, Vec<FailedReplicate>)> {
    let total = outcomes.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = Vec::new();
    let mut first_err = None;
    for (i, (s, r)) in outcomes.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(Error::Replicate { index: i, seed: s, source: Box::new(e) });
                }
                failed.push((i, s));
            }
        }
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        if failed.len() == total {
            return Err(first_err.expect("at least one failure"));
        }
        return Err(Error::TooManyFailures { failed: failed.len(), total });
    }
    Ok((ok, failed))
}

pub(crate) fn pivot_values(
    kinds: &[PivotKind],
    model: &ModelSpec,
    data: &Dataset,
    psi0: f64,
    adj: Option<&AdjustmentSpec>,
    init: Option<&ParamPoint>,
) -> Result<Vec<f64>> {
    let mut ctx = PivotContext::with_start(model, data, psi0, adj, init)?;
    kinds.iter().map(|k| ctx.value(*k)).collect()
}

/// Bootstrap null distributions of several pivots from one set of datasets
/// simulated at `θ̃₀ = (ψ₀, φ̃(ψ₀))`.
pub fn bootstrap_pvalues(
    kinds: &[PivotKind],
    model: &ModelSpec,
    data: &Dataset,
    psi0: f64,
    b: usize,
    seed: u64,
    adjustment: Option<&AdjustmentSpec>,
) -> Result<Vec<BootstrapResult>> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::Invalid(format!("bootstrap size {b} is below {MIN_BOOTSTRAP}")));
    }
    let mut ctx = PivotContext::new(model, data, psi0, adjustment)?;
    let observed: Vec<f64> = kinds.iter().map(|k| ctx.value(*k)).collect::<Result<_>>()?;
    let theta0 = ctx.profile.theta_tilde.clone();
    let n = data.n();
    let run = |s: u64, init: Option<&ParamPoint>| -> Result<Vec<f64>> {
        let sim = model.simulate(&theta0, n, s)?;
        pivot_values(kinds, model, &sim, psi0, adjustment, init)
    };
    let outcomes = replicate_outcomes(b, seed, "bootstrap", |s| run(s, None), |s| run(s, Some(&theta0)));
    let (stars, failures) = collect_outcomes(outcomes)?;
    let reps = stars.len();
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let col: Vec<f64> = stars.iter().map(|v| v[j]).collect();
            let exceed = col.iter().filter(|&&t| t >= observed[j]).count();
            let p = (exceed as f64 + 1.0) / (reps as f64 + 1.0);
            let s = summarize(&col);
            BootstrapResult {
                kind,
                observed: observed[j],
                p_value: p,
                mc_se: (p * (1.0 - p) / reps as f64).sqrt(),
                moments: BootstrapMoments { mean_star: s.mean, var_star: s.sd * s.sd, reps },
                failed: failures.len(),
                failures: failures.clone(),
            }
        })
        .collect())
}

/// Upper-tail parametric bootstrap p-value of one pivot.
pub fn bootstrap_pvalue(
    kind: PivotKind,
    model: &ModelSpec,
    data: &Dataset,
    psi0: f64,
    b: usize,
    seed: u64,
    adjustment: Option<&AdjustmentSpec>,
) -> Result<BootstrapResult> {
    Ok(bootstrap_pvalues(&[kind], model, data, psi0, b, seed, adjustment)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedR {
    pub value: f64,
    pub r_observed: f64,
    pub moments: BootstrapMoments,
}

/// `(R − m*)/√v*` with `m*`, `v*` the bootstrap mean and variance of `R` at `θ̃₀`.
pub fn bootstrap_standardized_r(model: &ModelSpec, data: &Dataset, psi0: f64, b: usize, seed: u64) -> Result<StandardizedR> {
    let res = bootstrap_pvalue(PivotKind::R, model, data, psi0, b, seed, None)?;
    let m = res.moments;
    if !(m.var_star > 0.0) {
        return Err(Error::Invalid("bootstrap variance of R is zero".into()));
    }
    Ok(StandardizedR { value: (res.observed - m.mean_star) / m.var_star.sqrt(), r_observed: res.observed, moments: m })
}

/// `W(ψ) = 2{L(θ̂) − M(ψ)}`, clamped at zero.
pub fn w_statistic(model: &ModelSpec, data: &Dataset, psi: &[f64], init: Option<&ParamPoint>) -> Result<f64> {
    let fit = fit_global(model, data, init)?;
    fit.require_converged()?;
    let prof = fit_constrained_warm(model, data, psi, &fit)?;
    prof.require_converged()?;
    Ok((2.0 * (fit.loglik - prof.profile_loglik)).max(0.0))
}

/// `W̄(ψ) = 2{M̄(ψ̄) − M̄(ψ)}` from an adjusted profile likelihood.
pub fn wbar_statistic(model: &ModelSpec, data: &Dataset, psi: f64, adj: &AdjustmentSpec, init: Option<&ParamPoint>) -> Result<f64> {
    let mut ctx = PivotContext::with_start(model, data, psi, Some(adj), init)?;
    let r = ctx.value(PivotKind::RBAR)?;
    Ok(r * r)
}

/// Likelihood ratio statistics (adjusted if requested) at the true `ψ` over
/// `reps` datasets drawn at `θ`, in replicate order.
pub fn simulate_w(
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    reps: usize,
    seed: u64,
    label: &str,
    adjusted: Option<&AdjustmentSpec>,
) -> Result<Vec<f64>> {
    model.check_theta(theta)?;
    let psi = theta.psi().to_vec();
    let run = |s: u64, init: Option<&ParamPoint>| -> Result<f64> {
        let data = model.simulate(theta, n, s)?;
        match adjusted {
            Some(adj) => wbar_statistic(model, &data, psi[0], adj, init),
            None => w_statistic(model, &data, &psi, init),
        }
    };
    let outcomes = replicate_outcomes(reps, seed, label, |s| run(s, None), |s| run(s, Some(theta)));
    Ok(collect_outcomes(outcomes)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BartlettFactor {
    /// `E{W}/q`, estimating `1 + ω/n`.
    pub factor: f64,
    pub omega_hat: f64,
    pub mc_se: f64,
    pub q: usize,
    pub n: usize,
    pub reps: usize,
}

impl BartlettFactor {
    fn from_sample(w: &[f64], q: usize, n: usize) -> Self {
        let s = summarize(w);
        let factor = s.mean / q as f64;
        BartlettFactor { factor, omega_hat: n as f64 * (factor - 1.0), mc_se: s.se / q as f64, q, n, reps: w.len() }
    }
}

pub fn bartlett_factor(
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    reps: usize,
    seed: u64,
    adjusted: Option<&AdjustmentSpec>,
) -> Result<BartlettFactor> {
    if reps < MIN_BARTLETT_REPS {
        return Err(Error::Invalid(format!("Bartlett factor needs at least {MIN_BARTLETT_REPS} replicates, got {reps}")));
    }
    let w = simulate_w(model, theta, n, reps, seed, "bartlett-factor", adjusted)?;
    let q = if adjusted.is_some() { 1 } else { model.interest_dim() };
    let f = BartlettFactor::from_sample(&w, q, n);
    if !(f.factor > 0.0) {
        return Err(Error::Invalid(format!("non-positive Bartlett factor {}", f.factor)));
    }
    Ok(f)
}

/// Standardized residuals `aᵢ = (yᵢ − μ̂)/σ̂` of a location-scale sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncillaryConfig {
    pub a: Vec<f64>,
}

fn location_scale_base(model: &ModelSpec) -> Result<BaseDensity> {
    match model {
        ModelSpec::LocationScale { base } => Ok(*base),
        other => Err(Error::Invalid(format!("{} is not a location-scale family", other.name()))),
    }
}

impl AncillaryConfig {
    pub fn from_data(model: &ModelSpec, data: &Dataset) -> Result<Self> {
        location_scale_base(model)?;
        let fit = fit_global(model, data, None)?;
        fit.require_converged()?;
        let (mu, sigma) = (fit.theta_hat.values[0], fit.theta_hat.values[1]);
        Ok(AncillaryConfig { a: data.column0().map(|y| (y - mu) / sigma).collect() })
    }

    pub fn simulate(model: &ModelSpec, theta: &ParamPoint, n: usize, seed: u64) -> Result<Self> {
        Self::from_data(model, &model.simulate(theta, n, seed)?)
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// The sample `y = μ̂ + σ̂a`.
    pub fn reconstruct(&self, mu_hat: f64, sigma_hat: f64) -> Result<Dataset> {
        Dataset::from_column(self.a.iter().map(|a| mu_hat + sigma_hat * a).collect())
    }
}

/// Trapezoid grid: number of points per axis and half-width in first-order
/// standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub half_width_se: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: 201, half_width_se: 6.0 }
    }
}

/// Largest probability tolerated in the outer band of the grid.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-4;

/// Conditional distribution of `(μ̂, σ̂)` given `a` on a grid in
/// `t = (μ̂ − μ)/σ̂` and `u = log σ̂`, where the density is proportional to
/// `e^{nu} ∏ f(e^u(t + aᵢ)/σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGrid {
    pub mu: f64,
    pub sigma: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    /// Cell probabilities, row-major in `(t, u)`.
    pub prob: Vec<f64>,
    pub boundary_mass: f64,
    pub spec: GridSpec,
}

impl ConditionalGrid {
    /// `(μ̂, σ̂)` at grid cell `(i, j)`.
    pub fn estimates(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.u[j].exp();
        (self.mu + s * self.t[i], s)
    }

    pub fn marginal_t(&self) -> Vec<f64> {
        let m = self.u.len();
        (0..self.t.len()).map(|i| self.prob[i * m..(i + 1) * m].iter().sum()).collect()
    }

    pub fn expectation(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let m = self.u.len();
        let mut acc = 0.0;
        for i in 0..self.t.len() {
            for j in 0..m {
                let (mh, sh) = self.estimates(i, j);
                acc += self.prob[i * m + j] * f(mh, sh);
            }
        }
        acc
    }
}

fn build_grid(base: BaseDensity, a: &AncillaryConfig, mu: f64, sigma: f64, se: (f64, f64), spec: GridSpec) -> ConditionalGrid {
    let k = spec.points;
    let axis = |c: f64, h: f64| -> Vec<f64> { (0..k).map(|i| c - h + 2.0 * h * i as f64 / (k - 1) as f64).collect() };
    let t = axis(0.0, spec.half_width_se * se.0);
    let u = axis(sigma.ln(), spec.half_width_se * se.1);
    let n = a.n() as f64;
    let trap = |i: usize| -> f64 { if i == 0 || i == k - 1 { 0.5 } else { 1.0 } };
    let mut logw = vec![0.0; k * k];
    for (i, &ti) in t.iter().enumerate() {
        for (j, &uj) in u.iter().enumerate() {
            let s = uj.exp() / sigma;
            let ll: f64 = a.a.iter().map(|ai| base.log_f(s * (ti + ai))).sum();
            logw[i * k + j] = n * uj + ll + (trap(i) * trap(j)).ln();
        }
    }
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut prob: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = prob.iter().sum();
    prob.iter_mut().for_each(|p| *p /= total);
    let band = (k / 20).max(1);
    let outer = |i: usize| i < band || i >= k - band;
    let mut boundary_mass = 0.0;
    for i in 0..k {
        for j in 0..k {
            if outer(i) || outer(j) {
                boundary_mass += prob[i * k + j];
            }
        }
    }
    ConditionalGrid { mu, sigma, t, u, prob, boundary_mass, spec }
}

pub fn conditional_distribution_location_scale(
    model: &ModelSpec,
    a: &AncillaryConfig,
    theta: &ParamPoint,
    spec: GridSpec,
) -> Result<ConditionalGrid> {
    let base = location_scale_base(model)?;
    model.check_theta(theta)?;
    if spec.points < 3 {
        return Err(Error::Invalid(format!("grid needs at least 3 points per axis, got {}", spec.points)));
    }
    let (mu, sigma) = (theta.values[0], theta.values[1]);
    let inv = model
        .expected_information(&theta.values, a.n())?
        .try_inverse()
        .ok_or_else(|| Error::Singular("expected information".into()))?;
    let se = (inv[(0, 0)].sqrt() / sigma, inv[(1, 1)].sqrt() / sigma);
    let first = build_grid(base, a, mu, sigma, se, spec);
    if first.boundary_mass <= BOUNDARY_MASS_LIMIT {
        return Ok(first);
    }
    let wide = GridSpec { half_width_se: 2.0 * spec.half_width_se, ..spec };
    let second = build_grid(base, a, mu, sigma, se, wide);
    if second.boundary_mass <= BOUNDARY_MASS_LIMIT {
        Ok(second)
    } else {
        Err(Error::GridBoundary { mass: second.boundary_mass })
    }
}

/// Conditional mean and variance of a pivot given the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    pub kind: PivotKind,
    pub mean: f64,
    pub var: f64,
    /// Difference from the same moments on a grid with half the resolution.
    pub quad_error_mean: f64,
    pub quad_error_var: f64,
}

/// Cells below this probability are skipped when evaluating pivots.
const NEGLIGIBLE_MASS: f64 = 1e-15;

/// Moments of each pivot at `ψ₀ = μ` under the conditional grid. Every pivot
/// depends on the data only through `t` once `a` is fixed, so only the
/// marginal of `t` is needed.
fn grid_moments(
    kinds: &[PivotKind],
    model: &ModelSpec,
    a: &AncillaryConfig,
    grid: &ConditionalGrid,
    adj: Option<&AdjustmentSpec>,
) -> Result<Vec<(f64, f64)>> {
    let pt = grid.marginal_t();
    let (mu, sigma) = (grid.mu, grid.sigma);
    let mut sums = vec![(0.0, 0.0); kinds.len()];
    let mut mass = 0.0;
    for (i, &ti) in grid.t.iter().enumerate() {
        if pt[i] < NEGLIGIBLE_MASS {
            continue;
        }
        let data = a.reconstruct(mu + sigma * ti, sigma)?;
        let init = model.param(vec![mu + sigma * ti, sigma])?;
        let vals = pivot_values(kinds, model, &data, mu, adj, Some(&init))?;
        for (acc, v) in sums.iter_mut().zip(&vals) {
            acc.0 += pt[i] * v;
            acc.1 += pt[i] * v * v;
        }
        mass += pt[i];
    }
    Ok(sums.into_iter().map(|(s1, s2)| {
        let m = s1 / mass;
        (m, s2 / mass - m * m)
    }).collect())
}

pub fn conditional_pivot_moments(
    kinds: &[PivotKind],
    model: &ModelSpec,
    a: &AncillaryConfig,
    theta: &ParamPoint,
    spec: GridSpec,
    adj: Option<&AdjustmentSpec>,
) -> Result<Vec<ConditionalMoments>> {
    let fine = conditional_distribution_location_scale(model, a, theta, spec)?;
    // the coarse grid reuses the fine grid's extent
    let coarse_spec = GridSpec { points: spec.points.div_ceil(2), half_width_se: fine.spec.half_width_se };
    let coarse = conditional_distribution_location_scale(model, a, theta, coarse_spec)?;
    let mf = grid_moments(kinds, model, a, &fine, adj)?;
    let mc = grid_moments(kinds, model, a, &coarse, adj)?;
    Ok(kinds
        .iter()
        .zip(mf.iter().zip(&mc))
        .map(|(&kind, (f, c))| ConditionalMoments {
            kind,
            mean: f.0,
            var: f.1,
            quad_error_mean: (f.0 - c.0).abs(),
            quad_error_var: (f.1 - c.1).abs(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t5() -> ModelSpec {
        ModelSpec::LocationScale { base: BaseDensity::StudentT { df: 5.0 } }
    }

    #[test]
    fn configuration_reconstructs_its_estimates() {
        let m = t5();
        let theta = m.param(vec![1.0, 2.0]).unwrap();
        let a = AncillaryConfig::simulate(&m, &theta, 15, 3).unwrap();
        let data = a.reconstruct(-0.5, 3.0).unwrap();
        let fit = fit_global(&m, &data, None).unwrap();
        assert_relative_eq!(fit.theta_hat.values[0], -0.5, epsilon = 1e-7);
        assert_relative_eq!(fit.theta_hat.values[1], 3.0, epsilon = 1e-7);
    }

    #[test]
    fn grid_is_normalized() {
        let m = t5();
        let theta = m.param(vec![0.0, 1.0]).unwrap();
        let a = AncillaryConfig::simulate(&m, &theta, 15, 4).unwrap();
        let g = conditional_distribution_location_scale(&m, &a, &theta, GridSpec::default()).unwrap();
        assert_relative_eq!(g.expectation(|_, _| 1.0), 1.0, epsilon = 1e-10);
        assert!(g.boundary_mass <= BOUNDARY_MASS_LIMIT);
    }

    #[test]
    fn normal_conditionals_do_not_depend_on_configuration() {
        let m = ModelSpec::LocationScale { base: BaseDensity::Normal };
        let theta = m.param(vec![0.0, 1.0]).unwrap();
        let spec = GridSpec { points: 101, half_width_se: 6.0 };
        let r: Vec<f64> = [1u64, 2]
            .iter()
            .map(|&s| {
                let a = AncillaryConfig::simulate(&m, &theta, 10, s).unwrap();
                conditional_pivot_moments(&[PivotKind::R], &m, &a, &theta, spec, None).unwrap()[0].mean
            })
            .collect();
        assert!((r[0] - r[1]).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn bootstrap_requires_enough_replicates() {
        let m = ModelSpec::Exponential;
        let data = Dataset::from_column(vec![0.5; 10]).unwrap();
        assert!(matches!(bootstrap_pvalue(PivotKind::R, &m, &data, 2.0, 100, 1, None), Err(Error::Invalid(_))));
    }

    #[test]
    fn failure_accounting() {
        let outcomes: Vec<(u64, Result<f64>)> =
            (0..200).map(|i| (i as u64, if i < 2 { Err(Error::Invalid("x".into())) } else { Ok(1.0) })).collect();
        let (ok, failed) = collect_outcomes(outcomes).unwrap();
        assert_eq!((ok.len(), failed.len()), (198, 2));
        let outcomes: Vec<(u64, Result<f64>)> =
            (0..200).map(|i| (i as u64, if i < 3 { Err(Error::Invalid("x".into())) } else { Ok(1.0) })).collect();
        assert!(matches!(collect_outcomes(outcomes), Err(Error::TooManyFailures { failed: 3, total: 200 })));
    }

    #[test]
    fn bartlett_factor_needs_replicates() {
        let m = ModelSpec::Exponential;
        let theta = m.param(vec![2.0]).unwrap();
        assert!(bartlett_factor(&m, &theta, 10, 10, 1, None).is_err());
    }
}
