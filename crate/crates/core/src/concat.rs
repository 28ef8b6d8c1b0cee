//! Concatenated codes: the residual density of one layer becomes the ancilla
//! noise of the next, and every layer is evaluated exactly as a symmetric
//! Gaussian mixture.
//!
//! A plan over `n` channels with permutation `(P1, ..., Pn)` (1-based) builds
//! the layer chain bottom-up from `sigma[Pn]`: the bottom ancilla is channel
//! `Pn`, the first layer adds `sigma[P(n-1)]` with gain `G1`, and the final data
//! mode is channel `P1`. The reverse order `(n, ..., 1)` on ascending sigmas
//! therefore puts the quietest channel at the bottom.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{bin_window, shifted_bin_coeff, GaussianMixture1D, MixtureBuilder, PRUNE_EPS};
use crate::two_mode::{asymptotic_variance, sr_kappa, sr_q_slope, CodeFamily, SR_MIN_GAIN};
use crate::SQRT_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub q: GaussianMixture1D,
    pub p: GaussianMixture1D,
    /// Number of channels folded in so far.
    pub layer: usize,
}

impl LayerState {
    pub fn bottom(sigma: f64) -> Self {
        Self { q: GaussianMixture1D::gaussian(sigma), p: GaussianMixture1D::gaussian(sigma), layer: 1 }
    }

    pub fn sigma_l(&self) -> f64 {
        (0.5 * (self.q.variance() + self.p.variance())).sqrt()
    }
}

fn bin_range(center: f64, sigma: f64) -> std::ops::RangeInclusive<i64> {
    let c = (center / SQRT_2PI).round() as i64;
    let w = bin_window(sigma);
    c - w..=c + w
}

fn check_update(sigma_new: f64, gain: f64, min_gain: f64) -> Result<()> {
    if !(sigma_new > 0.0 && sigma_new.is_finite()) {
        return Err(Error::Parameter(format!("channel sigma {sigma_new} must be positive")));
    }
    if !(gain >= min_gain && gain.is_finite()) {
        return Err(Error::Parameter(format!("gain {gain} below {min_gain}")));
    }
    Ok(())
}

fn tms_axis(m: &GaussianMixture1D, sigma_new: f64, gain: f64, eps: f64) -> GaussianMixture1D {
    let (su2, s) = (sigma_new * sigma_new, m.sigma());
    let s2 = s * s;
    let sigma3 = ((gain - 1.0) * su2 + gain * s2).sqrt();
    let slope = (gain * (gain - 1.0)).sqrt() * (su2 + s2) / (sigma3 * sigma3);
    let carry = su2 / (gain.sqrt() * (su2 + s2));
    let mut b = MixtureBuilder::new(sigma_new * s / sigma3);
    b.inherit_truncation(m.truncation_mass());
    for (w, t) in m.terms() {
        let shift = gain.sqrt() * t;
        for l in bin_range(-shift, sigma3) {
            b.push(w * shifted_bin_coeff(l, sigma3, shift), slope * (SQRT_2PI * l as f64 + carry * t));
        }
    }
    b.finish(eps)
}

/// Fold a new channel with STD `sigma_new` on top of `incoming` using a TMS
/// layer of gain `gain`.
pub fn tms_layer_update(incoming: &LayerState, sigma_new: f64, gain: f64, eps: f64) -> Result<LayerState> {
    check_update(sigma_new, gain, 1.0)?;
    Ok(LayerState {
        q: tms_axis(&incoming.q, sigma_new, gain, eps),
        p: tms_axis(&incoming.p, sigma_new, gain, eps),
        layer: incoming.layer + 1,
    })
}

/// Fold a new channel on top of `incoming` using an SR layer of gain `gain`.
pub fn sr_layer_update(incoming: &LayerState, sigma_new: f64, gain: f64, eps: f64) -> Result<LayerState> {
    check_update(sigma_new, gain, 0.0)?;
    let gain = gain.max(SR_MIN_GAIN);
    let (qin, pin) = (&incoming.q, &incoming.p);
    if (qin.sigma() - pin.sigma()).abs() > 1e-12 * qin.sigma() {
        return Err(Error::Parameter("q and p mixtures must share a component sigma".into()));
    }
    let s = qin.sigma();
    let kappa = sr_kappa(sigma_new, s, gain);
    let sigma_bin = gain * s / kappa;
    let sigma_next = kappa * sigma_new / gain;
    let slope = sr_q_slope(sigma_new, s, gain, kappa);

    let mut q = MixtureBuilder::new(sigma_next);
    q.inherit_truncation(qin.truncation_mass());
    for (w, t) in qin.terms() {
        let mean = kappa / gain * t;
        for l in bin_range(mean, sigma_bin) {
            q.push(w * shifted_bin_coeff(l, sigma_bin, -mean), -slope * (SQRT_2PI * l as f64 - mean));
        }
    }
    let mut p = MixtureBuilder::new(sigma_next);
    p.inherit_truncation(pin.truncation_mass());
    for (w, t) in pin.terms() {
        let mean = gain / kappa * t;
        for l in bin_range(mean, sigma_bin) {
            p.push(w * shifted_bin_coeff(l, sigma_bin, -mean), kappa * (SQRT_2PI * l as f64));
        }
    }
    Ok(LayerState { q: q.finish(eps), p: p.finish(eps), layer: incoming.layer + 1 })
}

/// Family, channel STDs, per-layer gains and layer permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodePlan {
    pub family: CodeFamily,
    pub sigmas: Vec<f64>,
    pub gains: Vec<f64>,
    /// 1-based channel indices; see the module docs for the layer order.
    pub permutation: Vec<usize>,
}

impl CodePlan {
    pub fn new(family: CodeFamily, sigmas: Vec<f64>, gains: Vec<f64>, permutation: Vec<usize>) -> Result<Self> {
        let plan = Self { family, sigmas, gains, permutation };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan in reverse order `(n, ..., 1)`.
    pub fn reverse(family: CodeFamily, sigmas: Vec<f64>, gains: Vec<f64>) -> Result<Self> {
        let n = sigmas.len();
        Self::new(family, sigmas, gains, (1..=n).rev().collect())
    }

    pub fn n(&self) -> usize {
        self.sigmas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sigmas.len();
        if n == 0 {
            return Err(Error::Plan("no channels".into()));
        }
        if self.gains.len() + 1 != n {
            return Err(Error::Plan(format!("{n} channels need {} gains, got {}", n - 1, self.gains.len())));
        }
        let mut seen = vec![false; n];
        for &p in &self.permutation {
            if p == 0 || p > n || std::mem::replace(&mut seen[p - 1], true) {
                return Err(Error::Plan(format!("{:?} is not a permutation of 1..={n}", self.permutation)));
            }
        }
        if self.permutation.len() != n {
            return Err(Error::Plan(format!("{:?} is not a permutation of 1..={n}", self.permutation)));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Plan(format!("channel sigma {s} must be positive")));
        }
        let min_gain = match self.family {
            CodeFamily::Tms => 1.0,
            CodeFamily::Sr => 0.0,
        };
        if let Some(g) = self.gains.iter().find(|g| !(**g >= min_gain && g.is_finite()) || **g == 0.0) {
            return Err(Error::Plan(format!("gain {g} out of range for {}", self.family)));
        }
        Ok(())
    }

    /// Channel STDs from the bottom ancilla up to the data mode.
    pub fn layer_chain(&self) -> Vec<f64> {
        self.permutation.iter().rev().map(|&p| self.sigmas[p - 1]).collect()
    }

    /// The plan that applies no correction: the data mode alone.
    pub fn identity_gains(family: CodeFamily, n: usize) -> Vec<f64> {
        let g = match family {
            CodeFamily::Tms => 1.0,
            CodeFamily::Sr => SR_MIN_GAIN,
        };
        vec![g; n.saturating_sub(1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub channel_sigma: f64,
    pub gain: Option<f64>,
    pub component_sigma: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
    pub q_peaks: usize,
    pub p_peaks: usize,
    pub truncated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plan: CodePlan,
    pub sigma_l_q: f64,
    pub sigma_l_p: f64,
    pub sigma_l: f64,
    pub layers: Vec<LayerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state: Option<LayerState>,
}

fn summarize(state: &LayerState, channel_sigma: f64, gain: Option<f64>) -> LayerSummary {
    LayerSummary {
        layer: state.layer,
        channel_sigma,
        gain,
        component_sigma: state.q.sigma(),
        sigma_q: state.q.std_dev(),
        sigma_p: state.p.std_dev(),
        q_peaks: state.q.peak_count(),
        p_peaks: state.p.peak_count(),
        truncated: state.q.truncation_mass().max(state.p.truncation_mass()),
    }
}

/// Run every layer of a plan and keep the final mixtures.
pub fn run_plan(plan: &CodePlan, eps: f64) -> Result<(LayerState, Vec<LayerSummary>)> {
    plan.validate()?;
    let chain = plan.layer_chain();
    let mut state = LayerState::bottom(chain[0]);
    let mut layers = vec![summarize(&state, chain[0], None)];
    for (&sigma, &gain) in chain[1..].iter().zip(&plan.gains) {
        state = match plan.family {
            CodeFamily::Tms => tms_layer_update(&state, sigma, gain, eps)?,
            CodeFamily::Sr => sr_layer_update(&state, sigma, gain, eps)?,
        };
        layers.push(summarize(&state, sigma, Some(gain)));
    }
    Ok((state, layers))
}

/// Logical noise of a plan: only the final average STD.
pub fn plan_sigma_l(plan: &CodePlan, eps: f64) -> Result<f64> {
    Ok(run_plan(plan, eps)?.0.sigma_l())
}

pub fn evaluate_plan(plan: &CodePlan) -> Result<EvalReport> {
    evaluate_plan_with(plan, PRUNE_EPS, false)
}

pub fn evaluate_plan_with(plan: &CodePlan, eps: f64, keep_mixtures: bool) -> Result<EvalReport> {
    let (state, layers) = run_plan(plan, eps)?;
    Ok(EvalReport {
        plan: plan.clone(),
        sigma_l_q: state.q.std_dev(),
        sigma_l_p: state.p.std_dev(),
        sigma_l: state.sigma_l(),
        layers,
        final_state: keep_mixtures.then_some(state),
    })
}

/// Leading-order estimate: repeatedly apply the two-mode small-noise law,
/// starting from `sigmas[0]` and folding in the rest in order.
pub fn asymptotic_recursion(sigmas: &[f64]) -> Result<f64> {
    let (first, rest) = sigmas.split_first().ok_or_else(|| Error::Plan("no channels".into()))?;
    let mut var = first * first;
    for s in rest {
        var = asymptotic_variance(s * s, var)?;
    }
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::two_mode::{sr_residual_mixture, tms_residual_mixture, SrLayerParams, TmsLayerParams};
    use approx::assert_relative_eq;

    fn same_mixture(a: &GaussianMixture1D, b: &GaussianMixture1D) {
        assert_eq!(a.peak_count(), b.peak_count());
        assert_relative_eq!(a.sigma(), b.sigma(), max_relative = 1e-15);
        for (x, y) in a.terms().zip(b.terms()) {
            assert_relative_eq!(x.0, y.0, max_relative = 1e-14);
            assert_relative_eq!(x.1, y.1, max_relative = 1e-14);
        }
    }

    #[test]
    fn bottom_layer_reproduces_two_mode_codes() {
        for &(data, anc, g) in &[(0.1, 0.1, 4.807), (0.2, 0.05, 2.0), (0.05, 0.3, 11.0)] {
            let s = tms_layer_update(&LayerState::bottom(anc), data, g, PRUNE_EPS).unwrap();
            let (q, p) = tms_residual_mixture(&TmsLayerParams::new(data, anc, g).unwrap());
            same_mixture(&s.q, &q);
            same_mixture(&s.p, &p);
        }
        for &(data, anc, g) in &[(0.1, 0.1, 2.9), (0.3, 0.1, 1.7), (0.05, 0.2, 0.4)] {
            let s = sr_layer_update(&LayerState::bottom(anc), data, g, PRUNE_EPS).unwrap();
            let (q, p) = sr_residual_mixture(&SrLayerParams::new(data, anc, g).unwrap());
            same_mixture(&s.q, &q);
            same_mixture(&s.p, &p);
        }
    }

    #[test]
    fn table_tms_values() {
        let p = CodePlan::reverse(CodeFamily::Tms, vec![0.1; 3], vec![3.541, 6.949]).unwrap();
        assert!((evaluate_plan(&p).unwrap().sigma_l - 0.01632).abs() < 2e-5);
        let p = CodePlan::reverse(CodeFamily::Tms, vec![0.1; 4], vec![3.037, 5.376, 7.041]).unwrap();
        assert!((evaluate_plan(&p).unwrap().sigma_l - 0.008319).abs() < 2e-6);
    }

    #[test]
    fn plan_validation() {
        assert!(CodePlan::new(CodeFamily::Tms, vec![0.1, 0.2], vec![2.0], vec![1, 1]).is_err());
        assert!(CodePlan::new(CodeFamily::Tms, vec![0.1, 0.2], vec![0.5], vec![1, 2]).is_err());
        assert!(CodePlan::new(CodeFamily::Tms, vec![0.1, 0.2], vec![], vec![1, 2]).is_err());
        assert!(CodePlan::new(CodeFamily::Sr, vec![0.1, 0.2], vec![0.5], vec![2, 1]).is_ok());
        let p = CodePlan::new(CodeFamily::Tms, vec![0.1, 0.2, 0.3], vec![2.0, 3.0], vec![2, 3, 1]).unwrap();
        assert_eq!(p.layer_chain(), vec![0.1, 0.3, 0.2]);
    }

    #[test]
    fn single_channel_plan_is_uncorrected() {
        let p = CodePlan::reverse(CodeFamily::Sr, vec![0.3], vec![]).unwrap();
        assert_relative_eq!(evaluate_plan(&p).unwrap().sigma_l, 0.3, max_relative = 1e-15);
    }

    #[test]
    fn side_peak_free_limits() {
        let (su, s) = (0.3f64, 1e-3f64);
        let g = 50.0f64;
        let sigma3 = ((g - 1.0) * su * su + g * s * s).sqrt();
        assert_relative_eq!(su * s / sigma3, s / (g - 1.0).sqrt(), max_relative = 1e-3);
        let gs = 1e3f64;
        let k = sr_kappa(su, s, gs);
        assert_relative_eq!(k * su / gs, s / gs, max_relative = 1e-3);
    }

    #[test]
    fn three_mode_recursion_matches_closed_form() {
        use std::f64::consts::PI;
        let s = 1e-2f64;
        let sb6 = s.powi(6);
        let l1 = (PI.powf(1.5) / (2.0 * s.powi(4))).ln();
        let closed = 16.0 * sb6 / (PI * PI) * l1 * ((PI.powf(2.5) / (8.0 * sb6)) / l1).ln();
        let rec = asymptotic_recursion(&[s, s, s]).unwrap();
        assert_relative_eq!(rec * rec, closed, max_relative = 1e-12);
    }
}
