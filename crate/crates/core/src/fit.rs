//! Global and constrained maximum likelihood, profile derivatives and the
//! maximizer of an adjusted profile log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec, ParamPoint};
use crate::numeric::brent_root;

pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParamPoint,
    pub loglik: f64,
    /// `J(θ̂) = −L_rs(θ̂)`.
    pub observed_info: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl FitResult {
    /// Error unless the optimizer met its gradient tolerance.
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence { iterations: self.iterations, grad_norm: self.grad_norm })
        }
    }

    /// `J^{11}`, the leading entry of `J(θ̂)⁻¹`.
    pub fn inverse_info_11(&self) -> Result<f64> {
        inverse_11(&self.observed_info)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub psi0: Vec<f64>,
    pub theta_tilde: ParamPoint,
    /// `M(ψ₀) = L(θ̃)`.
    pub profile_loglik: f64,
    /// Profile score, the interest block of `L_r(θ̃)`.
    pub m1: DVector<f64>,
    /// `M₁₁`, the Schur complement of the nuisance block of `L_rs(θ̃)`.
    pub m11: DMatrix<f64>,
    /// `J(θ̃)`.
    pub observed_info: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ProfileResult {
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence { iterations: self.iterations, grad_norm: self.grad_norm })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedFit {
    pub psi_bar: f64,
    /// `M̄(ψ̄)`.
    pub adjusted_profile_max: f64,
    /// `M̄₁₁(ψ̄)`.
    pub mbar11_at_max: f64,
}

/// `(A⁻¹)₁₁` for a symmetric positive-definite `A`.
pub fn inverse_11(a: &DMatrix<f64>) -> Result<f64> {
    let inv = a.clone().try_inverse().ok_or_else(|| Error::Singular("information matrix".into()))?;
    let v = inv[(0, 0)];
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("information matrix has (1,1) inverse entry {v}")));
    }
    Ok(v)
}

struct Optimum {
    x: Vec<f64>,
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
}

fn sub_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn sub_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn tolerance(value: f64) -> f64 {
    1e-8 * value.abs().max(1.0)
}

/// Newton ascent over the coordinates in `free`, with backtracking that keeps
/// iterates inside the parameter space and a steepest-ascent step whenever
/// the free Hessian block is not negative definite.
fn maximize(model: &ModelSpec, data: &Dataset, start: Vec<f64>, free: &[usize]) -> Result<Optimum> {
    let mut x = start;
    let mut iterations = 0;
    let mut polished = false;
    loop {
        let ld = model.loglik_derivs(&x, data, 2)?;
        let grad = ld.grad.expect("order 2");
        let hess = ld.hess.expect("order 2");
        let gf = sub_vec(&grad, free);
        let grad_norm = gf.norm();
        let tol = tolerance(ld.value);
        let done = |converged: bool, iterations: usize, x: Vec<f64>| Optimum {
            x,
            value: ld.value,
            grad: grad.clone(),
            hess: hess.clone(),
            converged,
            iterations,
            grad_norm,
        };
        if free.is_empty() || (grad_norm <= tol && polished) {
            return Ok(done(true, iterations, x));
        }
        if grad_norm <= tol {
            // one extra Newton step takes the iterate to round-off level
            polished = true;
            let hf = sub_mat(&hess, free, free);
            if let Some(ch) = (-&hf).cholesky() {
                let step = ch.solve(&gf);
                let mut trial = x.clone();
                for (k, &i) in free.iter().enumerate() {
                    trial[i] += step[k];
                }
                if model.in_domain(&trial) {
                    if let Ok(v) = model.loglik(&trial, data) {
                        if v >= ld.value - 1e-12 * ld.value.abs().max(1.0) {
                            x = trial;
                            continue;
                        }
                    }
                }
            }
            return Ok(done(true, iterations, x));
        }
        if iterations >= MAX_ITERATIONS {
            return Ok(done(false, iterations, x));
        }
        iterations += 1;
        let hf = sub_mat(&hess, free, free);
        let step = match (-&hf).cholesky() {
            Some(ch) => ch.solve(&gf),
            None => {
                let scale = hf.diagonal().amax().max(grad_norm).max(1e-12);
                &gf / scale
            }
        };
        let slope = gf.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = x.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += alpha * step[k];
            }
            if model.in_domain(&trial) {
                if let Ok(v) = model.loglik(&trial, data) {
                    if v.is_finite() && v >= ld.value + 1e-4 * alpha * slope {
                        accepted = Some(trial);
                        break;
                    }
                    // round-off plateau next to the optimum
                    if alpha == 1.0 && v.is_finite() && v >= ld.value - 1e-12 * ld.value.abs().max(1.0) && grad_norm < 1e3 * tol {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some(t) => x = t,
            None => return Ok(done(false, iterations, x)),
        }
    }
}

pub fn fit_global(model: &ModelSpec, data: &Dataset, init: Option<&ParamPoint>) -> Result<FitResult> {
    model.check_data(data)?;
    let start = match init {
        Some(p) => {
            model.check_theta(p)?;
            p.values.clone()
        }
        None => model.initial_values(data)?,
    };
    let free: Vec<usize> = (0..model.dim()).collect();
    let opt = maximize(model, data, start, &free)?;
    let observed_info = -&opt.hess;
    Ok(FitResult {
        theta_hat: ParamPoint::new(opt.x, model.interest_dim())?,
        loglik: opt.value,
        observed_info,
        converged: opt.converged,
        iterations: opt.iterations,
        grad_norm: opt.grad_norm,
    })
}

/// Constrained fit at `ψ₀` starting the nuisance slice from method-of-moments values.
pub fn fit_constrained(model: &ModelSpec, data: &Dataset, psi0: &[f64]) -> Result<ProfileResult> {
    let init = model.initial_values(data)?;
    fit_constrained_from(model, data, psi0, &init[model.interest_dim()..])
}

/// Constrained fit at `ψ₀` warm-started from a global fit's nuisance slice,
/// falling back to moment starting values if that fails.
pub fn fit_constrained_warm(model: &ModelSpec, data: &Dataset, psi0: &[f64], fit: &FitResult) -> Result<ProfileResult> {
    match fit_constrained_from(model, data, psi0, fit.theta_hat.phi()) {
        Ok(p) if p.converged => Ok(p),
        first => match fit_constrained(model, data, psi0) {
            Ok(p) if p.converged => Ok(p),
            _ => first,
        },
    }
}

pub fn fit_constrained_from(model: &ModelSpec, data: &Dataset, psi0: &[f64], phi_start: &[f64]) -> Result<ProfileResult> {
    model.check_data(data)?;
    let q = model.interest_dim();
    let d = model.dim();
    if psi0.len() != q {
        return Err(Error::Invalid(format!("ψ₀ has {} components, model interest dimension is {q}", psi0.len())));
    }
    let mut start: Vec<f64> = psi0.to_vec();
    start.extend_from_slice(phi_start);
    if !model.in_domain(&start) {
        return Err(Error::Domain(format!("ψ₀ = {psi0:?} with nuisance start {phi_start:?} is outside the parameter space")));
    }
    let free: Vec<usize> = (q..d).collect();
    let opt = maximize(model, data, start, &free)?;
    let psi_idx: Vec<usize> = (0..q).collect();
    let h = &opt.hess;
    let hpp = sub_mat(h, &psi_idx, &psi_idx);
    let m11 = if free.is_empty() {
        hpp
    } else {
        let hpf = sub_mat(h, &psi_idx, &free);
        let hff = sub_mat(h, &free, &free);
        let inv = hff.try_inverse().ok_or_else(|| Error::Singular("nuisance block of the Hessian".into()))?;
        hpp - &hpf * inv * hpf.transpose()
    };
    Ok(ProfileResult {
        psi0: psi0.to_vec(),
        theta_tilde: ParamPoint::new(opt.x, q)?,
        profile_loglik: opt.value,
        m1: sub_vec(&opt.grad, &psi_idx),
        m11,
        observed_info: -h,
        converged: opt.converged,
        iterations: opt.iterations,
        grad_norm: opt.grad_norm,
    })
}

/// Prior density used by the Tierney–Kadane adjustment, up to a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    Flat,
    /// `π(θ) ∝ θ_index^exponent`; requires that component to be positive.
    Power { index: usize, exponent: f64 },
}

impl Prior {
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match *self {
            Prior::Flat => Ok(0.0),
            Prior::Power { index, exponent } => {
                let v = *theta.get(index).ok_or_else(|| Error::Invalid(format!("prior index {index} out of range")))?;
                if v <= 0.0 {
                    return Err(Error::Domain(format!("power prior needs θ[{index}] > 0, got {v}")));
                }
                Ok(exponent * v.ln())
            }
        }
    }

    /// `∇ log π(θ)`.
    pub fn grad_log(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(theta.len());
        if let Prior::Power { index, exponent } = *self {
            self.log_density(theta)?;
            g[index] = exponent / theta[index];
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjustmentKind {
    None,
    TierneyKadane,
}

/// Adjustment `B(ψ)` added to the profile log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentSpec {
    pub kind: AdjustmentKind,
    /// Absent means flat.
    #[serde(default)]
    pub prior: Option<Prior>,
}

impl AdjustmentSpec {
    pub fn none() -> Self {
        AdjustmentSpec { kind: AdjustmentKind::None, prior: None }
    }

    pub fn tierney_kadane_flat() -> Self {
        AdjustmentSpec { kind: AdjustmentKind::TierneyKadane, prior: None }
    }

    pub fn prior(&self) -> Prior {
        self.prior.unwrap_or(Prior::Flat)
    }
}

fn nuisance_logdet(info: &DMatrix<f64>, q: usize, at: &str) -> Result<f64> {
    let d = info.nrows();
    let idx: Vec<usize> = (q..d).collect();
    let block = sub_mat(info, &idx, &idx);
    let ch = block
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("nuisance block of the observed information at {at}")))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn require_nuisance(model: &ModelSpec) -> Result<()> {
    if model.dim() == model.interest_dim() {
        return Err(Error::Domain(format!("{} has no nuisance parameter to adjust for", model.name())));
    }
    Ok(())
}

/// `B(ψ) = −½ log{det J_φφ(θ̃)/det J_φφ(θ̂)} + log{π(θ̃)/π(θ̂)}`.
pub fn adjustment_value(adj: &AdjustmentSpec, model: &ModelSpec, profile: &ProfileResult, fit: &FitResult) -> Result<f64> {
    if adj.kind == AdjustmentKind::None {
        return Ok(0.0);
    }
    require_nuisance(model)?;
    let q = model.interest_dim();
    let ld_tilde = nuisance_logdet(&profile.observed_info, q, "the constrained estimate")?;
    let ld_hat = nuisance_logdet(&fit.observed_info, q, "the global estimate")?;
    let prior = adj.prior();
    Ok(-0.5 * (ld_tilde - ld_hat) + prior.log_density(&profile.theta_tilde.values)?
        - prior.log_density(&fit.theta_hat.values)?)
}

/// Analytic `dB/dψ` at `θ̃(ψ)` for scalar `ψ`, by the chain rule through
/// `dθ̃/dψ = (1, −H_φφ⁻¹ H_φψ)`.
pub fn adjustment_derivative(adj: &AdjustmentSpec, model: &ModelSpec, data: &Dataset, profile: &ProfileResult) -> Result<f64> {
    if adj.kind == AdjustmentKind::None {
        return Ok(0.0);
    }
    require_nuisance(model)?;
    if model.interest_dim() != 1 {
        return Err(Error::Invalid("adjusted profile derivatives need a scalar interest parameter".into()));
    }
    let d = model.dim();
    let th = &profile.theta_tilde.values;
    let ld = model.loglik_derivs(th, data, 3)?;
    let h = ld.hess.expect("order 3");
    let t = ld.third.expect("order 3");
    let phi: Vec<usize> = (1..d).collect();
    let hff = sub_mat(&h, &phi, &phi);
    let hinv = hff.try_inverse().ok_or_else(|| Error::Singular("nuisance block of the Hessian".into()))?;
    let hfp = DVector::from_iterator(d - 1, phi.iter().map(|&a| h[(a, 0)]));
    let v = -&hinv * hfp;
    let dmat = DMatrix::from_fn(d - 1, d - 1, |i, j| {
        let (a, b) = (phi[i], phi[j]);
        t.get(a, b, 0) + (0..d - 1).map(|c| t.get(a, b, phi[c]) * v[c]).sum::<f64>()
    });
    let trace = (&hinv * dmat).trace();
    let gp = adj.prior().grad_log(th)?;
    let dprior = gp[0] + (0..d - 1).map(|c| gp[phi[c]] * v[c]).sum::<f64>();
    Ok(-0.5 * trace + dprior)
}

/// `M̄(ψ)` and `M̄₁(ψ)` with the profile fit that produced them.
pub struct AdjustedProfilePoint {
    pub profile: ProfileResult,
    pub value: f64,
    pub derivative: f64,
}

pub fn adjusted_profile(
    adj: &AdjustmentSpec,
    model: &ModelSpec,
    data: &Dataset,
    fit: &FitResult,
    psi: f64,
) -> Result<AdjustedProfilePoint> {
    let profile = fit_constrained_warm(model, data, &[psi], fit)?;
    profile.require_converged()?;
    let b = adjustment_value(adj, model, &profile, fit)?;
    let b1 = adjustment_derivative(adj, model, data, &profile)?;
    Ok(AdjustedProfilePoint { value: profile.profile_loglik + b, derivative: profile.m1[0] + b1, profile })
}

/// Maximize `M̄(ψ) = M(ψ) + B(ψ)` by solving `M̄₁(ψ) = 0` inside `ψ̂ ± 10` Wald
/// standard errors, widening the bracket once.
pub fn fit_adjusted(model: &ModelSpec, data: &Dataset, adj: &AdjustmentSpec, fit: &FitResult) -> Result<AdjustedFit> {
    if model.interest_dim() != 1 {
        return Err(Error::Invalid("adjusted profile likelihood needs a scalar interest parameter".into()));
    }
    fit.require_converged()?;
    let psi_hat = fit.theta_hat.values[0];
    let se = fit.inverse_info_11()?.sqrt();
    if adj.kind == AdjustmentKind::None {
        let m11 = -1.0 / fit.inverse_info_11()?;
        return Ok(AdjustedFit { psi_bar: psi_hat, adjusted_profile_max: fit.loglik, mbar11_at_max: m11 });
    }
    let mbar1 = |psi: f64| adjusted_profile(adj, model, data, fit, psi).map(|p| p.derivative);
    let mut found = None;
    for radius in [10.0 * se, 20.0 * se] {
        let mut lo = psi_hat - radius;
        if let Some(lb) = model.psi_lower_bound() {
            lo = lo.max(lb + 0.05 * (psi_hat - lb));
        }
        let hi = psi_hat + radius;
        let (flo, fhi) = (mbar1(lo)?, mbar1(hi)?);
        if flo > 0.0 && fhi < 0.0 {
            found = Some((lo, hi));
            break;
        }
        if radius > 10.0 * se {
            return Err(Error::BracketBoundary(if flo <= 0.0 { lo } else { hi }));
        }
    }
    let (lo, hi) = found.expect("bracket established or error returned");
    let psi_bar = brent_root(&mut |p| mbar1(p), lo, hi, 1e-11 * se)?;
    let at = adjusted_profile(adj, model, data, fit, psi_bar)?;
    let h = 1e-4 * se;
    let b1 = |p: f64| -> Result<f64> {
        let prof = fit_constrained_warm(model, data, &[p], fit)?;
        adjustment_derivative(adj, model, data, &prof)
    };
    let b11 = (b1(psi_bar + h)? - b1(psi_bar - h)?) / (2.0 * h);
    Ok(AdjustedFit { psi_bar, adjusted_profile_max: at.value, mbar11_at_max: at.profile.m11[(0, 0)] + b11 })
}
