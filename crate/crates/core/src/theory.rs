//! Second-order theory: cumulants of a pivot from its expansion coefficients,
//! Cornish–Fisher p-values, the stability condition and the conditions under
//! which two pivots give p-values agreeing to `O(n⁻¹)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec, ParamPoint};
use crate::numeric::normal_sf;
use crate::pivots::{ExpansionCoefficients, PivotValue};
use crate::tensors::{CumulantTensors, DerivedTensors};

/// Relative tolerance for exact algebraic identities.
pub const ALGEBRA_THRESHOLD: f64 = 1e-8;

/// Largest `|t|` at which the Cornish–Fisher correction is still applied.
pub const CF_FREEZE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantTriple {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionId {
    Stability,
    Equiv1,
    Equiv2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionId,
    pub residual: f64,
    pub scale: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ConditionReport {
    fn new(condition: ConditionId, residual: f64, scale: f64) -> Self {
        let threshold = ALGEBRA_THRESHOLD;
        ConditionReport { condition, residual, scale, threshold, pass: residual <= scale * threshold }
    }
}

fn check_shapes(c: &ExpansionCoefficients, t: &CumulantTensors) -> Result<()> {
    let d = t.dim();
    if c.xi3.dim() != d || c.xi2.nrows() != d || c.xi2.ncols() != d {
        return Err(Error::Invalid(format!("coefficients of dimension {} against tensors of dimension {d}", c.xi3.dim())));
    }
    Ok(())
}

/// `κ₁`, `κ₂ = 1` and `κ₃` of `T = η^{1/2}(T₁ + T₂ + ς)`.
pub fn cumulants(c: &ExpansionCoefficients, t: &CumulantTensors, dt: &DerivedTensors) -> Result<CumulantTriple> {
    check_shapes(c, t)?;
    let d = t.dim();
    let a = dt.a();
    let eta = dt.eta;
    let mut mean_t2 = 0.0;
    for r in 0..d {
        for s in 0..d {
            mean_t2 += c.xi2[(r, s)] * t.lam2[(r, s)];
            for u in 0..d {
                mean_t2 += c.xi3.get(r, s, u) * t.lam21.get(r, s, u);
            }
        }
    }
    let k1 = eta.sqrt() * (mean_t2 + c.sigma_const);

    let mut aaa_3 = 0.0;
    let mut aaa_21 = 0.0;
    let mut xi_term = 0.0;
    for r in 0..d {
        for s in 0..d {
            for u in 0..d {
                aaa_3 += a[r] * a[s] * a[u] * t.lam3.get(r, s, u);
                aaa_21 += a[r] * a[s] * a[u] * t.lam21.get(r, s, u);
                xi_term += c.xi3.get(r, s, 0) * a[u] * t.lam21.get(r, s, u);
            }
        }
    }
    let k3 = eta.powf(1.5) * (aaa_3 + 3.0 * aaa_21 - 6.0 * xi_term - 6.0 * c.xi2[(0, 0)]);
    if !(k1.is_finite() && k3.is_finite()) {
        return Err(Error::Invalid("non-finite cumulants".into()));
    }
    Ok(CumulantTriple { k1, k2: 1.0, k3 })
}

/// Argument bound inside which the Cornish–Fisher map stays increasing.
fn freeze_bound(k3: f64) -> f64 {
    if k3 == 0.0 {
        CF_FREEZE
    } else {
        CF_FREEZE.min(1.5 / k3.abs())
    }
}

/// `t − κ₁ − κ₃(t̄² − 1)/6`, with `t̄` the argument clamped to the freeze bound.
pub fn cf_normalize(t: f64, first_order: f64, k: &CumulantTriple) -> f64 {
    let b = freeze_bound(k.k3);
    let tb = first_order.clamp(-b, b);
    t - k.k1 - k.k3 * (tb * tb - 1.0) / 6.0
}

/// Upper-tail p-value against alternatives `ψ > ψ₀` from an observed pivot
/// value and its cumulants.
pub fn cf_pvalue_from_value(t: f64, k: &CumulantTriple) -> f64 {
    normal_sf(cf_normalize(t, t, k)).clamp(0.0, 1.0)
}

pub fn cf_pvalue(
    pivot: &PivotValue,
    c: &ExpansionCoefficients,
    t: &CumulantTensors,
    dt: &DerivedTensors,
) -> Result<f64> {
    Ok(cf_pvalue_from_value(pivot.value, &cumulants(c, t, dt)?))
}

pub fn cf_pvalue_lower(
    pivot: &PivotValue,
    c: &ExpansionCoefficients,
    t: &CumulantTensors,
    dt: &DerivedTensors,
) -> Result<f64> {
    Ok(1.0 - cf_pvalue(pivot, c, t, dt)?)
}

/// `(η^{1/2}T₁, η^{1/2}T₂)` from the dataset's centred derivatives at `θ`.
pub fn expansion_terms(
    c: &ExpansionCoefficients,
    model: &ModelSpec,
    data: &Dataset,
    theta: &ParamPoint,
    t: &CumulantTensors,
    dt: &DerivedTensors,
) -> Result<(f64, f64)> {
    check_shapes(c, t)?;
    let d = t.dim();
    let der = model.loglik_derivs(&theta.values, data, 2)?;
    let l = der.grad.ok_or_else(|| Error::Invalid("gradient unavailable".into()))?;
    let h = der.hess.ok_or_else(|| Error::Invalid("hessian unavailable".into()))?;
    let l2: DMatrix<f64> = h - &t.lam2;
    let a = dt.a();
    let t1 = -a.dot(&l);
    let mut t2 = 0.0;
    for r in 0..d {
        for s in 0..d {
            t2 -= c.xi2[(r, s)] * l[r] * l[s];
            for u in 0..d {
                t2 += c.xi3.get(r, s, u) * l2[(r, s)] * l[u];
            }
        }
    }
    let se = dt.eta.sqrt();
    Ok((se * t1, se * t2))
}

/// The Cornish–Fisher p-value with `T` rebuilt from its stochastic expansion
/// at `θ` rather than taken from the evaluated pivot.
pub fn cf_pvalue_expansion(
    c: &ExpansionCoefficients,
    model: &ModelSpec,
    data: &Dataset,
    theta: &ParamPoint,
    t: &CumulantTensors,
    dt: &DerivedTensors,
) -> Result<f64> {
    let k = cumulants(c, t, dt)?;
    let (t1, t2) = expansion_terms(c, model, data, theta, t, dt)?;
    let tv = t1 + t2 + dt.eta.sqrt() * c.sigma_const;
    Ok(normal_sf(cf_normalize(tv, t1, &k)).clamp(0.0, 1.0))
}

/// `ξ^{rs1} = ½λ^{1r}λ^{1s}`.
pub fn stability_check(c: &ExpansionCoefficients, dt: &DerivedTensors) -> ConditionReport {
    let d = c.xi3.dim();
    let a = dt.a();
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in 0..d {
        for s in 0..d {
            let x = c.xi3.get(r, s, 0);
            residual = residual.max((x - 0.5 * a[r] * a[s]).abs());
            scale = scale.max(x.abs());
        }
    }
    ConditionReport::new(ConditionId::Stability, residual, scale)
}

/// `ξ^{rs} + (ξ^{tu}λ_tu)τ^{rs}`, symmetrized since only `ξ^{rs}l_r l_s` enters `T`.
pub fn second_condition_form(c: &ExpansionCoefficients, t: &CumulantTensors, dt: &DerivedTensors) -> DMatrix<f64> {
    let x = (&c.xi2 + c.xi2.transpose()) * 0.5;
    let trace = x.component_mul(&t.lam2).sum();
    &x + &dt.tau * trace
}

/// The two conditions for `O(n⁻¹)` agreement of p-values from pivots `A` and `B`.
pub fn equivalence_check(
    a: &ExpansionCoefficients,
    b: &ExpansionCoefficients,
    t: &CumulantTensors,
    dt: &DerivedTensors,
) -> Result<[ConditionReport; 2]> {
    check_shapes(a, t)?;
    check_shapes(b, t)?;
    let r1 = a.xi3.zip_with(&b.xi3, |x, y| x - y).max_abs();
    let s1 = a.xi3.max_abs();
    let fa = second_condition_form(a, t, dt);
    let fb = second_condition_form(b, t, dt);
    let r2 = (&fa - &fb).amax();
    let s2 = fa.amax();
    Ok([ConditionReport::new(ConditionId::Equiv1, r1, s1), ConditionReport::new(ConditionId::Equiv2, r2, s2)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Tensor3;
    use crate::pivots::{expansion_coefficients, expansion_coefficients_with, PivotKind, WecVariant};
    use crate::tensors::{derive, tensors_at};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_tensors(d: usize, seed: u64) -> CumulantTensors {
        let mut rng = crate::rng::rng_from_seed(seed);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let lam2 = -(&b * b.transpose() + DMatrix::identity(d, d) * 0.5) * 10.0;
        let mut t = CumulantTensors::with_lam2(lam2, 10);
        t.lam3 = Tensor3::from_fn(d, |_, _, _| 10.0 * (rng.random::<f64>() - 0.5)).symmetrized();
        t.lam21 = Tensor3::from_fn(d, |_, _, _| 10.0 * (rng.random::<f64>() - 0.5)).symmetrized_first_two();
        t.lam111 = Tensor3::from_fn(d, |_, _, _| 10.0 * (rng.random::<f64>() - 0.5)).symmetrized();
        t
    }

    fn zero_coeffs(d: usize) -> ExpansionCoefficients {
        ExpansionCoefficients { xi3: Tensor3::zeros(d), xi2: DMatrix::zeros(d, d), sigma_const: 0.0 }
    }

    #[test]
    fn zero_coefficients_give_zero_mean() {
        let t = random_tensors(3, 1);
        let dt = derive(&t).unwrap();
        let k = cumulants(&zero_coeffs(3), &t, &dt).unwrap();
        assert_eq!(k.k1, 0.0);
        assert_eq!(k.k2, 1.0);
    }

    #[test]
    fn stable_skewness_simplifies() {
        for seed in 0..10 {
            let t = random_tensors(3, seed);
            let dt = derive(&t).unwrap();
            let a = dt.a();
            let c = expansion_coefficients(PivotKind::SO, &t, &dt, None).unwrap();
            let k = cumulants(&c, &t, &dt).unwrap();
            let mut aaa = 0.0;
            for r in 0..3 {
                for s in 0..3 {
                    for u in 0..3 {
                        aaa += a[r] * a[s] * a[u] * t.lam3.get(r, s, u);
                    }
                }
            }
            let simple = dt.eta.powf(1.5) * (aaa - 6.0 * c.xi2[(0, 0)]);
            assert_relative_eq!(k.k3, simple, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn trivial_cf_value() {
        let k = CumulantTriple { k1: 0.0, k2: 1.0, k3: 0.0 };
        assert_eq!(cf_pvalue_from_value(0.0, &k), 0.5);
    }

    #[test]
    fn cf_pvalue_is_monotone() {
        let k = CumulantTriple { k1: 0.1, k2: 1.0, k3: 0.9 };
        let mut prev = 1.0;
        for i in -400..=400 {
            let p = cf_pvalue_from_value(i as f64 * 0.01, &k);
            assert!(p <= prev, "reversal at {}", i as f64 * 0.01);
            prev = p;
        }
    }

    #[test]
    fn gaussian_mean_reduces_to_exact_pvalue() {
        let m = ModelSpec::NormalMean { covariance: vec![vec![1.0]] };
        let data = Dataset::from_column(vec![0.3, 1.1, -0.2, 0.9, 0.4]).unwrap();
        let psi0 = 0.1;
        let theta = m.param(vec![psi0]).unwrap();
        let t = tensors_at(&m, &theta, data.n(), 0, 0).unwrap();
        let dt = derive(&t).unwrap();
        let c = expansion_coefficients(PivotKind::R, &t, &dt, None).unwrap();
        let ybar = data.values().iter().sum::<f64>() / 5.0;
        let exact = normal_sf(5f64.sqrt() * (ybar - psi0));
        let p = cf_pvalue_expansion(&c, &m, &data, &theta, &t, &dt).unwrap();
        assert_relative_eq!(p, exact, max_relative = 1e-12);
    }

    #[test]
    fn stability_patterns() {
        for seed in 0..10 {
            let t = random_tensors(1 + seed as usize % 4, 100 + seed);
            let dt = derive(&t).unwrap();
            for k in [PivotKind::R, PivotKind::WO, PivotKind::SO, PivotKind::WOC, PivotKind::SOC] {
                assert!(stability_check(&expansion_coefficients(k, &t, &dt, None).unwrap(), &dt).pass, "{k}");
            }
            let a = dt.a();
            let half_max = (0..a.len()).flat_map(|r| (0..a.len()).map(move |s| (r, s))).map(|(r, s)| 0.5 * (a[r] * a[s]).abs()).fold(0.0, f64::max);
            for k in [PivotKind::WE, PivotKind::WEC, PivotKind::SE, PivotKind::SEC] {
                let rep = stability_check(&expansion_coefficients(k, &t, &dt, None).unwrap(), &dt);
                assert!(!rep.pass, "{k}");
                assert_relative_eq!(rep.residual, half_max, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn equivalence_pairs() {
        let t = random_tensors(3, 77);
        let dt = derive(&t).unwrap();
        let c = |k| expansion_coefficients_with(k, &t, &dt, None, WecVariant::Rederived).unwrap();
        let pass = |x, y| equivalence_check(&c(x), &c(y), &t, &dt).unwrap().iter().all(|r| r.pass);
        use PivotKind::*;
        for (x, y) in [(R, WO), (R, SO), (R, WOC), (R, SOC), (WE, WEC), (SE, SEC)] {
            assert!(pass(x, y), "{x},{y}");
        }
        for (x, y) in [(R, WE), (R, SE), (WE, SE)] {
            assert!(!pass(x, y), "{x},{y}");
        }
        let first = equivalence_check(&c(R), &c(WE), &t, &dt).unwrap()[0];
        assert!(!first.pass);
    }

    #[test]
    fn sigma_cancels_in_equivalence() {
        let t = random_tensors(2, 5);
        let dt = derive(&t).unwrap();
        let mut x = expansion_coefficients(PivotKind::R, &t, &dt, None).unwrap();
        let mut y = expansion_coefficients(PivotKind::WO, &t, &dt, None).unwrap();
        x.sigma_const = 0.3;
        y.sigma_const = -1.7;
        assert!(equivalence_check(&x, &y, &t, &dt).unwrap().iter().all(|r| r.pass));
    }
}
