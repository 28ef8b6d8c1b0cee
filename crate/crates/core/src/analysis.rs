//! Capacity bounds, error-correction thresholds and squeezed-vacuum fidelity.

use std::f64::consts::{E, LN_10};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concat::{run_plan, CodePlan};
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture1D;
use crate::optimize::{optimize_gains_global, OptimizerSettings};
use crate::two_mode::{preferred_order, CodeFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `(1/e) Π σ²/(1 − σ²)`, a variance.
    pub exact: f64,
    /// `(1/e) Π σ²`.
    pub loose: f64,
    /// Achieved logical variance, when known.
    pub achieved: Option<f64>,
}

impl BoundReport {
    pub fn with_achieved(mut self, sigma_l: f64) -> Self {
        self.achieved = Some(sigma_l * sigma_l);
        self
    }

    pub fn satisfied(&self) -> Option<bool> {
        self.achieved.map(|a| a >= self.exact)
    }
}

pub fn capacity_lower_bound(sigmas: &[f64]) -> Result<BoundReport> {
    if sigmas.is_empty() {
        return Err(Error::NoUsableChannels);
    }
    if let Some(&s) = sigmas.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::ZeroCapacity(s));
    }
    let loose = sigmas.iter().map(|s| s * s).product::<f64>() / E;
    let exact = sigmas.iter().map(|s| s * s / (1.0 - s * s)).product::<f64>() / E;
    Ok(BoundReport { exact, loose, achieved: None })
}

/// Two-mode plan with the given data and ancilla noise.
pub fn two_mode_plan(code: CodeFamily, data: f64, anc: f64, gain: f64) -> CodePlan {
    CodePlan { family: code, sigmas: vec![data, anc], gains: vec![gain], permutation: vec![1, 2] }
}

/// Optimal two-mode logical STD with channels assigned by [`preferred_order`].
pub fn two_mode_optimum(code: CodeFamily, s1: f64, s2: f64, settings: &OptimizerSettings) -> Result<(CodePlan, f64)> {
    let (data, anc) = preferred_order(code, s1, s2);
    let plan = two_mode_plan(code, data, anc, 1.0);
    let opt = optimize_gains_global(&plan.sigmas, code, &plan.permutation, settings)?;
    Ok((two_mode_plan(code, data, anc, opt.gains[0]), opt.sigma_l))
}

fn light_settings() -> OptimizerSettings {
    OptimizerSettings { starts: 6, budget: 1500, ..OptimizerSettings::default() }
}

/// Largest diagonal noise `σ₁ = σ₂ = σ` at which the optimized two-mode code
/// still reduces the noise, found by bisection to `tol`.
pub fn threshold_diagonal(code: CodeFamily, tol: f64) -> Result<f64> {
    let settings = light_settings();
    let helps = |s: f64| -> Result<bool> { Ok(two_mode_optimum(code, s, s, &settings)?.1 / s < 1.0 - 1e-9) };
    let (mut lo, mut hi) = (0.1, 0.99);
    if !helps(lo)? {
        return Err(Error::Parameter(format!("{code} code gives no improvement even at sigma = {lo}")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if helps(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub sigma1: f64,
    pub sigma2: f64,
    pub gain: f64,
    pub sigma_l: f64,
    /// `sigma_l / min(sigma1, sigma2)`.
    pub ratio: f64,
}

/// Linear `resolution × resolution` grid of error-correction ratios on
/// `[min, max]²`, row-major in `sigma1`.
pub fn contour_grid(code: CodeFamily, min: f64, max: f64, resolution: usize) -> Result<Vec<ContourPoint>> {
    if resolution < 2 || !(min > 0.0 && max > min) {
        return Err(Error::Parameter(format!("bad grid [{min}, {max}] x {resolution}")));
    }
    let axis: Vec<f64> = (0..resolution).map(|i| min + (max - min) * i as f64 / (resolution - 1) as f64).collect();
    let settings = light_settings();
    let pts: Vec<(f64, f64)> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect();
    pts.par_iter()
        .map(|&(s1, s2)| {
            let (plan, sigma_l) = two_mode_optimum(code, s1, s2, &settings)?;
            Ok(ContourPoint { sigma1: s1, sigma2: s2, gain: plan.gains[0], sigma_l, ratio: sigma_l / s1.min(s2) })
        })
        .collect()
}

/// Squeezing parameter for `x` dB: `e^{-2r} = 10^{-x/10}`.
pub fn db_to_r(db: f64) -> f64 {
    db / 20.0 * LN_10
}

/// Axis factor `E[exp(-x² τ / 2)]` for `x ~ N(μ, σ²)`.
fn axis_overlap(tau: f64, sigma: f64, mean: f64) -> f64 {
    let d = 1.0 + sigma * sigma * tau;
    (-mean * mean * tau / (2.0 * d)).exp() / d.sqrt()
}

pub fn fidelity_no_qec(r: f64, sigma: f64) -> f64 {
    let (tq, tp) = ((2.0 * r).exp(), (-2.0 * r).exp());
    (axis_overlap(tq, sigma, 0.0) * axis_overlap(tp, sigma, 0.0)).sqrt()
}

fn mixture_overlap(tau: f64, m: &GaussianMixture1D) -> f64 {
    m.terms().map(|(b, t)| b * axis_overlap(tau, m.sigma(), t)).sum::<f64>() / m.total_weight()
}

/// Exact fidelity when the residual displacement has independent mixture
/// densities on q and p.
pub fn fidelity_with_qec(r: f64, q: &GaussianMixture1D, p: &GaussianMixture1D) -> f64 {
    (mixture_overlap((2.0 * r).exp(), q) * mixture_overlap((-2.0 * r).exp(), p)).sqrt()
}

pub fn fidelity_gaussian_approx(r: f64, sigma_l: f64) -> f64 {
    fidelity_no_qec(r, sigma_l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub r: f64,
    /// Sending the state through the better of the two channels.
    pub no_qec: f64,
    pub with_qec: f64,
    pub gaussian_approx: f64,
    pub plan: CodePlan,
    pub sigma_l: f64,
}

/// Fidelities for a squeezed vacuum protected by the optimized two-mode code.
pub fn fidelity_report(
    code: CodeFamily,
    r: f64,
    s1: f64,
    s2: f64,
    settings: &OptimizerSettings,
) -> Result<FidelityReport> {
    let (plan, _) = two_mode_optimum(code, s1, s2, settings)?;
    let (state, _) = run_plan(&plan, settings.prune_eps)?;
    let sigma_l = state.sigma_l();
    Ok(FidelityReport {
        r,
        no_qec: fidelity_no_qec(r, s1.min(s2)),
        with_qec: fidelity_with_qec(r, &state.q, &state.p),
        gaussian_approx: fidelity_gaussian_approx(r, sigma_l),
        plan,
        sigma_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn bound_examples() {
        let b = capacity_lower_bound(&[0.3]).unwrap();
        assert_relative_eq!(b.exact, 0.09 / (E * 0.91), max_relative = 1e-15);
        let b = capacity_lower_bound(&[0.1, 0.1]).unwrap();
        assert_relative_eq!(b.exact, (0.01f64 / 0.99).powi(2) / E, max_relative = 1e-15);
        assert!((b.exact - 3.75e-5).abs() < 1e-7);
        assert!(matches!(capacity_lower_bound(&[0.1, 1.2]), Err(Error::ZeroCapacity(_))));
        assert_eq!(b.with_achieved(0.0358).satisfied(), Some(true));
    }

    #[test]
    fn fidelity_limits() {
        assert_eq!(fidelity_no_qec(1.3, 0.0), 1.0);
        assert_relative_eq!(fidelity_no_qec(0.0, 0.2).powi(2), 1.0 / 1.04, max_relative = 1e-15);
        assert_relative_eq!(db_to_r(20.0), 10f64.ln(), max_relative = 1e-15);
        let g = GaussianMixture1D::gaussian(0.07);
        assert_relative_eq!(fidelity_with_qec(1.1, &g, &g), fidelity_gaussian_approx(1.1, 0.07), max_relative = 1e-14);
        assert_eq!(fidelity_gaussian_approx(2.0, 0.0), 1.0);
    }

    #[test]
    fn well_below_threshold_helps() {
        let (_, s) = two_mode_optimum(CodeFamily::Sr, 0.1, 0.1, &light_settings()).unwrap();
        assert!(s < 0.1);
    }

    proptest! {
        #[test]
        fn bound_is_monotone(a in 0.01f64..0.9, b in 0.01f64..0.9, d in 0.001f64..0.09) {
            let lo = capacity_lower_bound(&[a, b]).unwrap();
            let hi = capacity_lower_bound(&[a + d, b]).unwrap();
            prop_assert!(hi.exact > lo.exact);
            prop_assert!(lo.exact >= lo.loose);
        }

        #[test]
        fn no_qec_is_even_in_r(r in -3.0f64..3.0, s in 0.0f64..2.0) {
            let f = fidelity_no_qec(r, s);
            prop_assert!((f - fidelity_no_qec(-r, s)).abs() < 1e-15);
            prop_assert!(f > 0.0 && f <= 1.0);
        }
    }
}
