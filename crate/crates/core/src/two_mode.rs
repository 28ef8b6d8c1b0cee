//! Single-layer GKP codes on a pair of AWGN channels: a data mode protected by
//! a GKP ancilla, encoded either with two-mode squeezing (TMS) or with
//! squeezing plus a SUM gate (squeezing repetition, SR).
//!
//! Throughout, mode 1 carries the data and mode 2 the GKP ancilla. The
//! decoder measures both ancilla quadratures modulo √(2π) and displaces the
//! data mode by a linear estimate of its noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SymplecticUnitary;
use crate::mixture::{modular_reduce, GaussianMixture1D, PRUNE_EPS};
use crate::SQRT_2PI;

/// Smallest SR gain; `G -> 0` is the no-correction limit.
pub const SR_MIN_GAIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Tms,
    Sr,
}

impl std::str::FromStr for CodeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tms" => Ok(Self::Tms),
            "sr" => Ok(Self::Sr),
            other => Err(Error::Parameter(format!("unknown code family '{other}'"))),
        }
    }
}

impl std::fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tms => "tms",
            Self::Sr => "sr",
        })
    }
}

/// Ancilla correction: residual = `z_data - gain * R(z_ancilla)`.
/// The Monte Carlo oracle calls this same function.
#[inline]
pub fn corrected(z_data: f64, z_ancilla: f64, gain: f64) -> f64 {
    z_data - gain * modular_reduce(z_ancilla, SQRT_2PI)
}

fn check_sigma(name: &str, s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} = {s} must be positive")))
    }
}

/// Data noise `sigma_data`, ancilla noise `sigma_anc`, TMS gain `G >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmsLayerParams {
    pub sigma_data: f64,
    pub sigma_anc: f64,
    pub gain: f64,
}

impl TmsLayerParams {
    pub fn new(sigma_data: f64, sigma_anc: f64, gain: f64) -> Result<Self> {
        check_sigma("sigma_data", sigma_data)?;
        check_sigma("sigma_anc", sigma_anc)?;
        if !(gain >= 1.0 && gain.is_finite()) {
            return Err(Error::Parameter(format!("TMS gain {gain} must be >= 1")));
        }
        Ok(Self { sigma_data, sigma_anc, gain })
    }

    /// STD of the measured ancilla quadratures.
    pub fn sigma_bin(&self) -> f64 {
        let (a, b, g) = (self.sigma_data.powi(2), self.sigma_anc.powi(2), self.gain);
        ((g - 1.0) * a + g * b).sqrt()
    }

    /// Estimator slope.
    pub fn slope(&self) -> f64 {
        let (a, b, g) = (self.sigma_data.powi(2), self.sigma_anc.powi(2), self.gain);
        (g * (g - 1.0)).sqrt() * (a + b) / ((g - 1.0) * a + g * b)
    }

    /// STD of each residual peak.
    pub fn sigma_peak(&self) -> f64 {
        self.sigma_data * self.sigma_anc / self.sigma_bin()
    }

    /// Signed correction gains `(q, p)` for [`corrected`].
    pub fn correction_gains(&self) -> (f64, f64) {
        let a = self.slope();
        (-a, a)
    }
}

/// Data noise `sigma_data`, ancilla noise `sigma_anc`, SR gain `G > 0`
/// (clamped at [`SR_MIN_GAIN`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrLayerParams {
    pub sigma_data: f64,
    pub sigma_anc: f64,
    pub gain: f64,
}

impl SrLayerParams {
    pub fn new(sigma_data: f64, sigma_anc: f64, gain: f64) -> Result<Self> {
        check_sigma("sigma_data", sigma_data)?;
        check_sigma("sigma_anc", sigma_anc)?;
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Parameter(format!("SR gain {gain} must be positive")));
        }
        Ok(Self { sigma_data, sigma_anc, gain: gain.max(SR_MIN_GAIN) })
    }

    /// Squeezing that makes the q and p residual peaks equally wide.
    pub fn kappa(&self) -> f64 {
        sr_kappa(self.sigma_data, self.sigma_anc, self.gain)
    }

    /// STD of the measured ancilla quadratures (both axes).
    pub fn sigma_bin(&self) -> f64 {
        self.gain * self.sigma_anc / self.kappa()
    }

    pub fn sigma_peak(&self) -> f64 {
        self.kappa() * self.sigma_data / self.gain
    }

    /// Least-squares slope of the data q-noise on the measured ancilla q.
    pub fn q_slope(&self) -> f64 {
        sr_q_slope(self.sigma_data, self.sigma_anc, self.gain, self.kappa())
    }

    pub fn correction_gains(&self) -> (f64, f64) {
        (-self.q_slope(), self.kappa())
    }
}

/// `κ² = 2 s_a² / (√(s_d⁴ + 4 s_a⁴ / G⁴) + s_d²)`, the cancellation-free form
/// of the balancing root.
pub fn sr_kappa(sigma_data: f64, sigma_anc: f64, gain: f64) -> f64 {
    let (d2, a2) = (sigma_data * sigma_data, sigma_anc * sigma_anc);
    let r = a2 / (gain * gain);
    (2.0 * a2 / ((d2 * d2 + 4.0 * r * r).sqrt() + d2)).sqrt()
}

/// `G⁴ s_d² / (κ (κ² s_a² + G⁴ s_d²))`; reduces to `κ s_d² / s_a²` at the
/// balanced κ.
pub fn sr_q_slope(sigma_data: f64, sigma_anc: f64, gain: f64, kappa: f64) -> f64 {
    let (d2, a2) = (sigma_data * sigma_data, sigma_anc * sigma_anc);
    let g4 = gain.powi(4);
    g4 * d2 / (kappa * (kappa * kappa * a2 + g4 * d2))
}

/// Two-mode squeezing encoder on `(q1, p1, q2, p2)`.
pub fn tms_symplectic(gain: f64) -> Result<SymplecticUnitary> {
    if !(gain >= 1.0 && gain.is_finite()) {
        return Err(Error::Parameter(format!("TMS gain {gain} must be >= 1")));
    }
    let (a, b) = (gain.sqrt(), (gain - 1.0).sqrt());
    #[rustfmt::skip]
    let s = DMatrix::from_row_slice(4, 4, &[
        a, 0.0, b, 0.0,
        0.0, a, 0.0, -b,
        b, 0.0, a, 0.0,
        0.0, -b, 0.0, a,
    ]);
    SymplecticUnitary::new(s, DVector::zeros(4))
}

/// Squeezing-repetition encoder on `(q1, p1, q2, p2)`.
pub fn sr_symplectic(gain: f64, kappa: f64) -> Result<SymplecticUnitary> {
    if !(gain > 0.0 && kappa > 0.0 && gain.is_finite() && kappa.is_finite()) {
        return Err(Error::Parameter(format!("SR parameters G = {gain}, kappa = {kappa} must be positive")));
    }
    let (r, g) = (kappa / gain, gain);
    #[rustfmt::skip]
    let s = DMatrix::from_row_slice(4, 4, &[
        r, 0.0, 0.0, 0.0,
        0.0, 1.0 / r, 0.0, -g,
        g, 0.0, 1.0 / r, 0.0,
        0.0, 0.0, 0.0, r,
    ]);
    SymplecticUnitary::new(s, DVector::zeros(4))
}

/// Residual densities `(q, p)` of the data mode after TMS correction.
pub fn tms_residual_mixture(p: &TmsLayerParams) -> (GaussianMixture1D, GaussianMixture1D) {
    let m = GaussianMixture1D::lattice_family(p.sigma_bin(), p.sigma_peak(), p.slope(), PRUNE_EPS);
    (m.clone(), m)
}

/// Residual densities `(q, p)` of the data mode after SR correction.
pub fn sr_residual_mixture(p: &SrLayerParams) -> (GaussianMixture1D, GaussianMixture1D) {
    let (bin, peak) = (p.sigma_bin(), p.sigma_peak());
    (
        GaussianMixture1D::lattice_family(bin, peak, p.q_slope(), PRUNE_EPS),
        GaussianMixture1D::lattice_family(bin, peak, p.kappa(), PRUNE_EPS),
    )
}

/// `√((a² + b²)/2)` of the two quadrature STDs.
pub fn average_std(q: &GaussianMixture1D, p: &GaussianMixture1D) -> f64 {
    (0.5 * (q.variance() + p.variance())).sqrt()
}

fn log_argument(sigma_a: f64, sigma_b: f64) -> Result<f64> {
    let arg = PI.powf(1.5) / (2.0 * sigma_a.powi(2) * sigma_b.powi(2));
    if arg <= 1.0 {
        return Err(Error::AsymptoticDomain(arg));
    }
    Ok(arg)
}

/// Small-noise variance law `(4 s⁴/π) ln(π^{3/2} / (2 s⁴))` with `s⁴ = a b`
/// for the product of two variances.
pub fn asymptotic_variance(var_a: f64, var_b: f64) -> Result<f64> {
    let arg = log_argument(var_a.sqrt(), var_b.sqrt())?;
    Ok(4.0 * var_a * var_b / PI * arg.ln())
}

/// Leading-order optimum `(G*, sigma_L*)` of the TMS code.
pub fn tms_asymptotic_optimum(sigma_data: f64, sigma_anc: f64) -> Result<(f64, f64)> {
    let arg = log_argument(sigma_data, sigma_anc)?;
    let (a, b) = (sigma_data.powi(2), sigma_anc.powi(2));
    let gain = ((PI / 4.0) / arg.ln() + a) / (a + b);
    Ok((gain, (4.0 * a * b / PI * arg.ln()).sqrt()))
}

/// Leading-order optimum `sigma_L*` of the SR code including the ordering
/// correction.
pub fn sr_asymptotic_optimum(sigma_data: f64, sigma_anc: f64) -> Result<f64> {
    let arg = log_argument(sigma_data, sigma_anc)?;
    let (a, b) = (sigma_data.powi(2), sigma_anc.powi(2));
    let base = 4.0 * a * b / PI;
    Ok((base * arg.ln() + base * ((a + b) / (2.0 * a)).ln()).sqrt())
}

/// SR gain that makes the measured ancilla STD match the TMS optimum; used
/// only to seed the optimizer.
pub fn sr_asymptotic_gain(sigma_data: f64, sigma_anc: f64) -> Result<f64> {
    let arg = log_argument(sigma_data, sigma_anc)?;
    Ok(((PI / 4.0) / arg.ln()).sqrt() / sigma_data)
}

/// Assign a pair of channels to `(data, ancilla)`: TMS puts the quieter
/// channel on the data mode, SR on the ancilla.
pub fn preferred_order(code: CodeFamily, a: f64, b: f64) -> (f64, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match code {
        CodeFamily::Tms => (lo, hi),
        CodeFamily::Sr => (hi, lo),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::omega;
    use approx::assert_relative_eq;

    #[test]
    fn tms_gain_one_is_identity() {
        let e = tms_symplectic(1.0).unwrap();
        assert!((e.s - DMatrix::identity(4, 4)).amax() < 1e-15);
        let p = TmsLayerParams::new(0.2, 0.3, 1.0).unwrap();
        assert_eq!(p.slope(), 0.0);
        assert_relative_eq!(p.sigma_peak(), 0.2, max_relative = 1e-15);
        let (q, _) = tms_residual_mixture(&p);
        assert_eq!(q.peak_count(), 1);
        assert_relative_eq!(q.std_dev(), 0.2, max_relative = 1e-12);
    }

    #[test]
    fn sr_unit_structure() {
        let e = sr_symplectic(1.0, 1.0).unwrap().s;
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, -1.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        assert_eq!(e, expect);
        assert!(sr_symplectic(0.0, 1.0).is_err());
        assert!(tms_symplectic(0.5).is_err());
    }

    #[test]
    fn tms_output_covariance() {
        let (s1, s2, g) = (0.13f64, 0.27f64, 2.0f64);
        let e = tms_symplectic(g).unwrap();
        let einv = e.inverse_matrix();
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![s1 * s1, s1 * s1, s2 * s2, s2 * s2]));
        let vz = &einv * v * einv.transpose();
        let d = g * s1 * s1 + (g - 1.0) * s2 * s2;
        let a = g * s2 * s2 + (g - 1.0) * s1 * s1;
        let c = -(g * (g - 1.0)).sqrt() * (s1 * s1 + s2 * s2);
        #[rustfmt::skip]
        let expect = DMatrix::from_row_slice(4, 4, &[
            d, 0.0, c, 0.0,
            0.0, d, 0.0, -c,
            c, 0.0, a, 0.0,
            0.0, -c, 0.0, a,
        ]);
        assert!((vz - expect).amax() < 1e-14);
        assert!((einv.clone() * e.s - DMatrix::identity(4, 4)).amax() < 1e-14);
        let _ = omega(2);
    }

    #[test]
    fn kappa_balances_peaks() {
        for &(sd, sa, g) in &[(0.1, 0.1, 2.9), (0.05, 0.2, 0.3), (0.3, 0.01, 40.0), (0.2, 0.2, 1e-5)] {
            let p = SrLayerParams::new(sd, sa, g).unwrap();
            let k = p.kappa();
            // root of a² κ⁴ + G⁴ d² κ² − G⁴ a² = 0
            let (a2, d2, g4) = (sa * sa, sd * sd, g.powi(4));
            let resid = a2 * k.powi(4) + g4 * d2 * k * k - g4 * a2;
            assert!(resid.abs() < 1e-13 * g4 * a2, "{resid}");
            // measured-q variance equals the bin STD squared
            let var_z = (k / g).powi(2) * sa * sa + g * g * sd * sd;
            assert_relative_eq!(var_z, p.sigma_bin().powi(2), max_relative = 1e-12);
            assert_relative_eq!(p.q_slope(), k * sd * sd / (sa * sa), max_relative = 1e-10);
        }
    }

    #[test]
    fn sr_small_gain_is_no_correction() {
        let p = SrLayerParams::new(0.1, 0.2, 1e-9).unwrap();
        assert_eq!(p.gain, SR_MIN_GAIN);
        let (q, pm) = sr_residual_mixture(&p);
        assert_relative_eq!(q.std_dev(), 0.1, max_relative = 1e-6);
        assert_relative_eq!(pm.std_dev(), 0.1, max_relative = 1e-6);
    }

    #[test]
    fn asymptotics() {
        let (_, a) = tms_asymptotic_optimum(0.01, 0.003).unwrap();
        let (_, b) = tms_asymptotic_optimum(0.003, 0.01).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-15);
        assert_relative_eq!(sr_asymptotic_optimum(0.02, 0.02).unwrap(), tms_asymptotic_optimum(0.02, 0.02).unwrap().1);
        let base = tms_asymptotic_optimum(0.02, 0.01).unwrap().1;
        assert!(sr_asymptotic_optimum(0.02, 0.01).unwrap() < base);
        assert!(sr_asymptotic_optimum(0.01, 0.02).unwrap() > base);
        assert!(matches!(tms_asymptotic_optimum(2.0, 2.0), Err(Error::AsymptoticDomain(_))));
    }

    #[test]
    fn ordering_rule() {
        assert_eq!(preferred_order(CodeFamily::Tms, 0.3, 0.1), (0.1, 0.3));
        assert_eq!(preferred_order(CodeFamily::Sr, 0.1, 0.3), (0.3, 0.1));
        assert_eq!(preferred_order(CodeFamily::Tms, 0.2, 0.2), (0.2, 0.2));
    }

    #[test]
    fn bin_std_shrinks_with_noisier_data_mode() {
        for &(quiet, noisy, g) in &[(0.1, 0.3, 3.0), (0.02, 0.05, 50.0), (0.4, 0.41, 1.5)] {
            let noisy_data = TmsLayerParams::new(noisy, quiet, g).unwrap().sigma_bin();
            let quiet_data = TmsLayerParams::new(quiet, noisy, g).unwrap().sigma_bin();
            assert!(noisy_data < quiet_data);
        }
    }
}
