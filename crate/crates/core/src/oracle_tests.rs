//! Analytic results checked against independent computations: Monte Carlo
//! sampling, numerical quadrature and direct covariance sampling.

use crate::analysis::capacity_lower_bound;
use crate::concat::{evaluate_plan, run_plan, CodePlan};
use crate::gaussian::GaussianChannel;
use crate::mc::{chi_square_test, mc_residual, McConfig};
use crate::mixture::{GaussianMixture1D, PRUNE_EPS};
use crate::reduction::random_channel;
use crate::two_mode::CodeFamily;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Adaptive Simpson integration to absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 48)
}

/// Second moment of a mixture by quadrature, split at every component so no
/// narrow peak is stepped over.
fn quadrature_moments(m: &GaussianMixture1D) -> (f64, f64) {
    let s = m.sigma();
    let mut cuts: Vec<f64> = m.terms().flat_map(|(_, t)| [t - 12.0 * s, t + 12.0 * s]).collect();
    cuts.sort_by(f64::total_cmp);
    let (mut mass, mut second) = (0.0, 0.0);
    for w in cuts.windows(2) {
        if w[1] - w[0] < 1e-15 {
            continue;
        }
        mass += adaptive_simpson(&|x| m.density(x), w[0], w[1], 1e-14);
        second += adaptive_simpson(&|x| x * x * m.density(x), w[0], w[1], 1e-16);
    }
    (mass, second)
}

#[test]
fn layered_variance_matches_quadrature() {
    for (fam, gains) in [(CodeFamily::Tms, vec![3.0, 2.2]), (CodeFamily::Sr, vec![2.0, 1.5])] {
        let plan = CodePlan::reverse(fam, vec![0.12, 0.2, 0.3], gains).unwrap();
        let (state, _) = run_plan(&plan, PRUNE_EPS).unwrap();
        for m in [&state.q, &state.p] {
            let (mass, second) = quadrature_moments(m);
            assert!((mass - 1.0).abs() < 1e-9, "{fam}: mass {mass}");
            assert!((second - m.variance()).abs() < 1e-9 * m.variance(), "{fam}: {second} vs {}", m.variance());
        }
    }
}

fn mc_agrees(plan: CodePlan, samples: u64, seed: u64) {
    let (state, _) = run_plan(&plan, PRUNE_EPS).unwrap();
    let w = 6.0 * state.q.std_dev().max(state.p.std_dev());
    let mut cfg = McConfig::new(plan.clone(), samples, seed);
    cfg.histogram = Some((-w, w, 200));
    let mc = mc_residual(&cfg).unwrap();
    let z = (mc.sigma_l - state.sigma_l()).abs() / mc.se_sigma_l;
    assert!(z < 3.0, "{plan:?}: MC {} vs analytic {} ({z:.2} SE)", mc.sigma_l, state.sigma_l());
    for (h, m) in [(&mc.histogram_q, &state.q), (&mc.histogram_p, &state.p)] {
        let p = chi_square_test(h.as_ref().unwrap(), m).p_value;
        assert!(p > 1e-3, "{plan:?}: chi-square p {p}");
    }
}

#[test]
fn two_mode_codes_match_monte_carlo() {
    for fam in [CodeFamily::Tms, CodeFamily::Sr] {
        for (data, anc, g) in [(0.1, 0.2, 3.0), (0.05, 0.1, 2.5)] {
            let plan = CodePlan::new(fam, vec![data, anc], vec![g], vec![1, 2]).unwrap();
            mc_agrees(plan, 10_000_000, 5);
        }
    }
}

#[test]
fn three_layer_plans_match_monte_carlo() {
    mc_agrees(CodePlan::reverse(CodeFamily::Tms, vec![0.08, 0.1, 0.15], vec![3.0, 4.0]).unwrap(), 10_000_000, 6);
    mc_agrees(
        CodePlan::new(CodeFamily::Sr, vec![0.1, 0.12, 0.2], vec![2.0, 2.5], vec![1, 3, 2]).unwrap(),
        10_000_000,
        7,
    );
}

#[test]
fn channel_action_matches_sampled_displacements() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c: GaussianChannel = random_channel(2, &mut rng);
    let dim = 4;
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    // any a aᵀ + vacuum/2 satisfies the uncertainty relation
    let cov = &a * a.transpose() * 0.3 + DMatrix::identity(dim, dim) * 0.5;
    let mean = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (want_mean, want_cov) = c.apply_to_gaussian_state(&mean, &cov).unwrap();

    let l_state = cov.clone().cholesky().unwrap().l();
    let l_noise = c.noise.clone().cholesky().unwrap().l();
    let n = 400_000;
    let mut sum = DVector::zeros(dim);
    let mut outer = DMatrix::zeros(dim, dim);
    for _ in 0..n {
        let x = &mean + &l_state * DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &c.t * x + &c.d + &l_noise * DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        outer += &y * y.transpose();
        sum += y;
    }
    let m = sum / n as f64;
    let v = outer / n as f64 - &m * m.transpose();
    for i in 0..dim {
        let se = (want_cov[(i, i)] / n as f64).sqrt();
        assert!((m[i] - want_mean[i]).abs() < 4.0 * se, "mean {i}");
        for j in 0..dim {
            let se = ((want_cov[(i, i)] * want_cov[(j, j)] + want_cov[(i, j)].powi(2)) / n as f64).sqrt();
            assert!(
                (v[(i, j)] - want_cov[(i, j)]).abs() < 4.0 * se,
                "cov ({i},{j}): {} vs {}",
                v[(i, j)],
                want_cov[(i, j)]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_plan_respects_the_capacity_bound(
        sigmas in prop::collection::vec(0.02f64..0.5, 2..=4),
        raw in prop::collection::vec(0.0f64..1.5, 3),
        sr in any::<bool>(),
    ) {
        let fam = if sr { CodeFamily::Sr } else { CodeFamily::Tms };
        let gains: Vec<f64> = raw[..sigmas.len() - 1].iter().map(|u| 10f64.powf(*u)).collect();
        let report = evaluate_plan(&CodePlan::reverse(fam, sigmas.clone(), gains).unwrap()).unwrap();
        let bound = capacity_lower_bound(&sigmas).unwrap();
        prop_assert!(report.sigma_l.powi(2) >= bound.exact * (1.0 - 1e-12));
    }

    #[test]
    fn layers_conserve_probability(
        sigmas in prop::collection::vec(0.02f64..0.6, 2..=4),
        raw in prop::collection::vec(0.0f64..1.5, 3),
    ) {
        for fam in [CodeFamily::Tms, CodeFamily::Sr] {
            let gains: Vec<f64> = raw[..sigmas.len() - 1].iter().map(|u| 10f64.powf(*u)).collect();
            let (state, _) = run_plan(&CodePlan::reverse(fam, sigmas.clone(), gains).unwrap(), PRUNE_EPS).unwrap();
            for m in [&state.q, &state.p] {
                prop_assert!((m.total_weight() + m.truncation_mass() - 1.0).abs() < 1e-10);
                prop_assert!(m.truncation_mass() <= 1e-11 * sigmas.len() as f64);
            }
        }
    }
}
