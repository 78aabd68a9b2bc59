//! Monte Carlo oracles for the cumulant and Cornish–Fisher formulas.

use pivotal_core::models::ModelSpec;
use pivotal_core::numeric::skewness;
use pivotal_core::pivots::{expansion_coefficients, PivotContext, PivotKind};
use pivotal_core::rng::stream_seed;
use pivotal_core::tensors::{derive, tensors_at};
use pivotal_core::theory::{cf_pvalue_from_value, cumulants};
use rayon::prelude::*;

fn r_values(m: &ModelSpec, theta: &[f64], n: usize, reps: usize, seed: u64) -> Vec<f64> {
    let th = m.param(theta.to_vec()).unwrap();
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let data = m.simulate(&th, n, stream_seed(seed, "r", i as u64)).unwrap();
            PivotContext::new(m, &data, theta[0], None).unwrap().value(PivotKind::R).unwrap()
        })
        .collect()
}

#[test]
fn exponential_skewness_of_r_matches_theory() {
    let m = ModelSpec::Exponential;
    let n = 20;
    let theta = m.param(vec![2.0]).unwrap();
    let t = tensors_at(&m, &theta, n, 0, 0).unwrap();
    let dt = derive(&t).unwrap();
    let c = expansion_coefficients(PivotKind::R, &t, &dt, None).unwrap();
    let k = cumulants(&c, &t, &dt).unwrap();
    // λ_{11,1} = 0 here, so only the λ_111 and ξ^{11} terms remain
    let a = dt.a()[0];
    let direct = dt.eta.powf(1.5) * (a * a * a * t.lam3.get(0, 0, 0) - 6.0 * c.xi2[(0, 0)]);
    assert!((k.k3 - direct).abs() < 1e-12);
    let (g, se) = skewness(&r_values(&m, &[2.0], n, 1_000_000, 11));
    assert!((g - k.k3).abs() <= 4.0 * se, "MC skewness {g} ± {se}, theory {}", k.k3);
}

#[test]
fn cf_pvalue_tracks_simulated_tail() {
    let m = ModelSpec::Exponential;
    let n = 20;
    let theta = m.param(vec![2.0]).unwrap();
    let t = tensors_at(&m, &theta, n, 0, 0).unwrap();
    let dt = derive(&t).unwrap();
    let k = cumulants(&expansion_coefficients(PivotKind::R, &t, &dt, None).unwrap(), &t, &dt).unwrap();
    let mut null = r_values(&m, &[2.0], n, 100_000, 12);
    null.sort_by(|a, b| a.total_cmp(b));
    let observed = r_values(&m, &[2.0], n, 50, 13);
    let worst = observed
        .iter()
        .map(|&r| {
            let above = null.len() - null.partition_point(|&x| x < r);
            let tail = above as f64 / null.len() as f64;
            (cf_pvalue_from_value(r, &k) - tail).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 0.02, "max |Δp| = {worst}");
}
