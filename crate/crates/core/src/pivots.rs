//! The twelve pivots: direct evaluation from data and second-order expansion
//! coefficients `(ξ^{rst}, ξ^{rs}, ς)` from cumulant tensors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::Tensor3;
use crate::error::{Error, Result};
use crate::fit::{
    adjusted_profile, adjustment_value, fit_adjusted, fit_constrained_warm, fit_global, inverse_11, AdjustedFit,
    AdjustmentKind, AdjustmentSpec, FitResult, ProfileResult,
};
use crate::models::{Dataset, ModelSpec, ParamPoint};
use crate::numeric::summarize;
use crate::rng::stream_seed;
use crate::tensors::{rho, CumulantTensors, DerivedTensors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PivotKind {
    R,
    WO,
    SO,
    WOC,
    SOC,
    WE,
    WEC,
    SE,
    SEC,
    RBAR,
    AWO,
    ASO,
}

impl PivotKind {
    pub const ALL: [PivotKind; 12] = [
        PivotKind::R,
        PivotKind::WO,
        PivotKind::SO,
        PivotKind::WOC,
        PivotKind::SOC,
        PivotKind::WE,
        PivotKind::WEC,
        PivotKind::SE,
        PivotKind::SEC,
        PivotKind::RBAR,
        PivotKind::AWO,
        PivotKind::ASO,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PivotKind::R => "r",
            PivotKind::WO => "wo",
            PivotKind::SO => "so",
            PivotKind::WOC => "woc",
            PivotKind::SOC => "soc",
            PivotKind::WE => "we",
            PivotKind::WEC => "wec",
            PivotKind::SE => "se",
            PivotKind::SEC => "sec",
            PivotKind::RBAR => "rbar",
            PivotKind::AWO => "awo",
            PivotKind::ASO => "aso",
        }
    }

    /// Built from an adjusted profile likelihood.
    pub fn is_adjusted(self) -> bool {
        matches!(self, PivotKind::RBAR | PivotKind::AWO | PivotKind::ASO)
    }

    /// Uses expected rather than observed information.
    pub fn uses_expected_information(self) -> bool {
        matches!(self, PivotKind::WE | PivotKind::WEC | PivotKind::SE | PivotKind::SEC)
    }

    /// Satisfies `ξ^{rs1} = ½λ^{1r}λ^{1s}` and so is second-order stable.
    pub fn is_stable(self) -> bool {
        !self.uses_expected_information()
    }

    /// Unadjusted pivot sharing this kind's `ξ` arrays.
    pub fn base(self) -> PivotKind {
        match self {
            PivotKind::RBAR => PivotKind::R,
            PivotKind::AWO => PivotKind::WO,
            PivotKind::ASO => PivotKind::SO,
            k => k,
        }
    }
}

impl fmt::Display for PivotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PivotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PivotKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown pivot kind '{s}'")))
    }
}

/// Which reading of the expected-information constrained Wald coefficient to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WecVariant {
    /// `λ^{1t}λ^{ru}ν^{sv}λ_tuv + ½λ^{1t}τ^{ru}τ^{sv}λ_tu,v`, with the
    /// first term appearing twice as in the published formula.
    #[default]
    AsPrinted,
    /// The repeated term counted once.
    DropDuplicate,
    /// Obtained by expanding `λ^{11}(θ̃)` about `λ^{11}(θ̂)`: the WE
    /// coefficient plus `½λ^{1t}τ^{ru}τ^{sv}(λ_tuv + λ_tu,v)`.
    Rederived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub xi3: Tensor3,
    pub xi2: DMatrix<f64>,
    pub sigma_const: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beta1Source {
    AnalyticRho,
    AnalyticTk,
    McEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentInfo {
    pub beta1: f64,
    pub source: Beta1Source,
    /// Monte Carlo standard error when estimated by simulation.
    pub mc_se: Option<f64>,
}

/// Contractions shared by all coefficient formulas.
struct Pieces {
    a: nalgebra::DVector<f64>,
    up: DMatrix<f64>,
    tau: DMatrix<f64>,
    nu: DMatrix<f64>,
    /// `K_uv = λ^{1t} λ_tuv`.
    k: DMatrix<f64>,
    /// `G_uv = λ^{1t} λ_tu,v`.
    g: DMatrix<f64>,
}

impl Pieces {
    fn new(t: &CumulantTensors, dt: &DerivedTensors) -> Self {
        let d = t.dim();
        let a = dt.a();
        let k = DMatrix::from_fn(d, d, |u, v| (0..d).map(|s| a[s] * t.lam3.get(s, u, v)).sum());
        let g = DMatrix::from_fn(d, d, |u, v| (0..d).map(|s| a[s] * t.lam21.get(s, u, v)).sum());
        Pieces { a, up: dt.lam_up.clone(), tau: dt.tau.clone(), nu: dt.nu.clone(), k, g }
    }

    fn outer3(&self, m: &DMatrix<f64>) -> Tensor3 {
        let d = self.a.len();
        Tensor3::from_fn(d, |r, s, u| self.a[r] * m[(s, u)])
    }
}

pub fn expansion_coefficients(
    kind: PivotKind,
    t: &CumulantTensors,
    dt: &DerivedTensors,
    adj_info: Option<&AdjustmentInfo>,
) -> Result<ExpansionCoefficients> {
    expansion_coefficients_with(kind, t, dt, adj_info, WecVariant::default())
}

pub fn expansion_coefficients_with(
    kind: PivotKind,
    t: &CumulantTensors,
    dt: &DerivedTensors,
    adj_info: Option<&AdjustmentInfo>,
    wec: WecVariant,
) -> Result<ExpansionCoefficients> {
    let p = Pieces::new(t, dt);
    let akn = &p.up * &p.k * &p.nu * 0.5;
    let tkt = &p.tau * &p.k * &p.tau;
    let tga = &p.tau * &p.g * &p.up;
    let tgt = &p.tau * &p.g * &p.tau;
    let tgn = &p.tau * &p.g * &p.nu;
    use PivotKind::*;
    let xi3 = match kind.base() {
        R | WO | SO | WOC | SOC => p.outer3(&(&p.up + &p.tau * 0.5)),
        WE | WEC => p.outer3(&p.up),
        SE | SEC => p.outer3(&p.nu),
        RBAR | AWO | ASO => unreachable!("base() strips adjustment"),
    };
    let xi2 = match kind.base() {
        R => &akn + &tkt / 6.0,
        WO | SOC => akn.clone(),
        SO | WOC => &akn + &tkt * 0.5,
        WE => &akn + &tga * 0.5,
        WEC => match wec {
            WecVariant::AsPrinted => &akn * 2.0 + &tgt * 0.5,
            WecVariant::DropDuplicate => &akn + &tgt * 0.5,
            WecVariant::Rederived => &akn + &tga * 0.5 + &tkt * 0.5 + &tgt * 0.5,
        },
        SE => &akn + &tkt * 0.5 - &tga * 0.5,
        SEC => &akn - &tgn * 0.5,
        RBAR | AWO | ASO => unreachable!("base() strips adjustment"),
    };
    let sigma_const = if kind.is_adjusted() {
        let info = adj_info.ok_or_else(|| Error::Invalid(format!("pivot {kind} needs adjustment information")))?;
        info.beta1 / dt.eta
    } else {
        0.0
    };
    Ok(ExpansionCoefficients { xi3, xi2, sigma_const })
}

/// One evaluated pivot with the fits behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotValue {
    pub kind: PivotKind,
    pub psi0: f64,
    pub value: f64,
    pub fit: FitResult,
    pub profile: ProfileResult,
    pub adjusted: Option<AdjustedFit>,
}

/// Fits shared by every pivot at one `(data, ψ₀)`.
pub struct PivotContext<'a> {
    pub model: &'a ModelSpec,
    pub data: &'a Dataset,
    pub psi0: f64,
    pub fit: FitResult,
    pub profile: ProfileResult,
    adjustment: Option<AdjustmentSpec>,
    adjusted: Option<AdjustedFit>,
}

impl<'a> PivotContext<'a> {
    pub fn new(model: &'a ModelSpec, data: &'a Dataset, psi0: f64, adjustment: Option<&AdjustmentSpec>) -> Result<Self> {
        Self::with_start(model, data, psi0, adjustment, None)
    }

    /// As [`PivotContext::new`], starting the global fit from `init`.
    pub fn with_start(
        model: &'a ModelSpec,
        data: &'a Dataset,
        psi0: f64,
        adjustment: Option<&AdjustmentSpec>,
        init: Option<&ParamPoint>,
    ) -> Result<Self> {
        if model.interest_dim() != 1 {
            return Err(Error::Invalid(format!("pivots need a scalar interest parameter; {} has {}", model.name(), model.interest_dim())));
        }
        let fit = fit_global(model, data, init)?;
        fit.require_converged()?;
        let profile = fit_constrained_warm(model, data, &[psi0], &fit)?;
        profile.require_converged()?;
        Ok(PivotContext { model, data, psi0, fit, profile, adjustment: adjustment.copied(), adjusted: None })
    }

    fn psi_hat(&self) -> f64 {
        self.fit.theta_hat.values[0]
    }

    fn adjustment(&self, kind: PivotKind) -> Result<AdjustmentSpec> {
        match self.adjustment {
            Some(a) if a.kind != AdjustmentKind::None => Ok(a),
            _ => Err(Error::Invalid(format!("pivot {kind} needs an adjustment specification"))),
        }
    }

    /// The adjusted-profile maximizer, computed on first use.
    pub fn adjusted_fit(&mut self, kind: PivotKind) -> Result<AdjustedFit> {
        let adj = self.adjustment(kind)?;
        if self.adjusted.is_none() {
            self.adjusted = Some(fit_adjusted(self.model, self.data, &adj, &self.fit)?);
        }
        Ok(self.adjusted.clone().expect("just set"))
    }

    /// `W(ψ₀) = 2{L(θ̂) − M(ψ₀)}`, clamped at zero.
    pub fn w(&self) -> f64 {
        (2.0 * (self.fit.loglik - self.profile.profile_loglik)).max(0.0)
    }

    fn expected_11(&self, theta: &[f64]) -> Result<f64> {
        inverse_11(&self.model.expected_information(theta, self.data.n())?)
    }

    pub fn value(&mut self, kind: PivotKind) -> Result<f64> {
        let diff = self.psi_hat() - self.psi0;
        let m1 = self.profile.m1[0];
        let tilde = self.profile.theta_tilde.values.clone();
        let hat = self.fit.theta_hat.values.clone();
        let v = match kind {
            PivotKind::R => signed_root(diff, self.w()),
            PivotKind::WO => diff / self.fit.inverse_info_11()?.sqrt(),
            PivotKind::SO => m1 * self.fit.inverse_info_11()?.sqrt(),
            PivotKind::WOC => diff / inverse_11(&self.profile.observed_info)?.sqrt(),
            PivotKind::SOC => m1 * inverse_11(&self.profile.observed_info)?.sqrt(),
            PivotKind::WE => diff / self.expected_11(&hat)?.sqrt(),
            PivotKind::WEC => diff / self.expected_11(&tilde)?.sqrt(),
            PivotKind::SE => m1 * self.expected_11(&hat)?.sqrt(),
            PivotKind::SEC => m1 * self.expected_11(&tilde)?.sqrt(),
            PivotKind::RBAR | PivotKind::AWO | PivotKind::ASO => {
                let adj = self.adjustment(kind)?;
                let af = self.adjusted_fit(kind)?;
                let curvature = -af.mbar11_at_max;
                if !(curvature > 0.0) {
                    return Err(Error::NotPositiveDefinite(format!("adjusted profile curvature {curvature} at its maximum")));
                }
                let bar_diff = af.psi_bar - self.psi0;
                match kind {
                    PivotKind::RBAR => {
                        let b0 = adjustment_value(&adj, self.model, &self.profile, &self.fit)?;
                        let wbar = 2.0 * (af.adjusted_profile_max - (self.profile.profile_loglik + b0));
                        signed_root(bar_diff, wbar.max(0.0))
                    }
                    PivotKind::AWO => bar_diff * curvature.sqrt(),
                    _ => {
                        let at = adjusted_profile(&adj, self.model, self.data, &self.fit, self.psi0)?;
                        at.derivative / curvature.sqrt()
                    }
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Invalid(format!("pivot {kind} evaluated to {v}")));
        }
        Ok(v)
    }

    pub fn pivot_value(&mut self, kind: PivotKind) -> Result<PivotValue> {
        let value = self.value(kind)?;
        Ok(PivotValue {
            kind,
            psi0: self.psi0,
            value,
            fit: self.fit.clone(),
            profile: self.profile.clone(),
            adjusted: if kind.is_adjusted() { self.adjusted.clone() } else { None },
        })
    }
}

/// `sgn(δ)·√W`, exactly zero when `|δ| < 10⁻¹⁰`.
pub fn signed_root(diff: f64, w: f64) -> f64 {
    if diff.abs() < 1e-10 {
        0.0
    } else {
        diff.signum() * w.max(0.0).sqrt()
    }
}

pub fn evaluate_pivot(
    kind: PivotKind,
    model: &ModelSpec,
    data: &Dataset,
    psi0: f64,
    adjustment: Option<&AdjustmentSpec>,
) -> Result<PivotValue> {
    PivotContext::new(model, data, psi0, adjustment)?.pivot_value(kind)
}

/// How to obtain `β₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Beta1Mode {
    Analytic,
    Mc { reps: usize, seed: u64 },
}

/// `β₁`, the leading term of `E{B₁(ψ)}`. Analytic mode evaluates
/// `ηλ^{1r}(½ν^{st}λ_rst − π_r/π)`; simulation mode averages a central
/// difference of `B` at the true `ψ` over datasets drawn at `θ`.
pub fn beta1(
    adj: &AdjustmentSpec,
    t: &CumulantTensors,
    dt: &DerivedTensors,
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    mode: Beta1Mode,
) -> Result<AdjustmentInfo> {
    if model.dim() == model.interest_dim() {
        return Err(Error::Domain(format!("{} has no nuisance parameter, so no adjustment", model.name())));
    }
    if adj.kind == AdjustmentKind::None {
        return Err(Error::Invalid("β₁ requested for a null adjustment".into()));
    }
    match mode {
        Beta1Mode::Analytic => {
            let d = t.dim();
            let a = dt.a();
            let gp = adj.prior().grad_log(&theta.values)?;
            let mut acc = 0.0;
            for r in 0..d {
                let mut inner = -gp[r];
                for s in 0..d {
                    for u in 0..d {
                        inner += 0.5 * dt.nu[(s, u)] * t.lam3.get(r, s, u);
                    }
                }
                acc += a[r] * inner;
            }
            Ok(AdjustmentInfo { beta1: dt.eta * acc, source: Beta1Source::AnalyticTk, mc_se: None })
        }
        Beta1Mode::Mc { reps, seed } => {
            let (mean, se) = mean_adjustment_derivative(adj, model, theta, n, reps, seed)?;
            Ok(AdjustmentInfo { beta1: mean, source: Beta1Source::McEstimate, mc_se: Some(se) })
        }
    }
}

/// `β₁ = ρ` for adjustments known only through that relation.
pub fn beta1_from_rho(t: &CumulantTensors, dt: &DerivedTensors) -> AdjustmentInfo {
    AdjustmentInfo { beta1: rho(t, dt), source: Beta1Source::AnalyticRho, mc_se: None }
}

/// Mean and standard error of a central difference of `B` at the true `ψ`.
pub fn mean_adjustment_derivative(
    adj: &AdjustmentSpec,
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let psi = theta.values[0];
    let vals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let s = stream_seed(seed, "beta1", i as u64);
            let run = || -> Result<f64> {
                let data = model.simulate(theta, n, s)?;
                let fit = fit_global(model, &data, None)?;
                fit.require_converged()?;
                let h = 1e-4 * fit.inverse_info_11()?.sqrt();
                let b = |p: f64| -> Result<f64> {
                    let prof = fit_constrained_warm(model, &data, &[p], &fit)?;
                    prof.require_converged()?;
                    adjustment_value(adj, model, &prof, &fit)
                };
                Ok((b(psi + h)? - b(psi - h)?) / (2.0 * h))
            };
            run().map_err(|e| Error::Replicate { index: i, seed: s, source: Box::new(e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    let s = summarize(&vals);
    Ok((s.mean, s.se))
}
