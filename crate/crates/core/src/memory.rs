//! Lossy bosonic memory channel: a cascade of beamsplitters in which every
//! channel use couples the input to a memory mode that is itself refreshed by
//! a vacuum environment.
//!
//! Per use `l`, with memory mode `m` (initially vacuum):
//!
//! ```text
//! e'     = √μ m + √(1−μ) E_l
//! out_l  = √κ a_l + √(1−κ) e'
//! m_next = −√(1−κ) a_l + √κ e'
//! ```
//!
//! The inputs reach the outputs through a real contraction `M`, so the channel
//! is `T = M ⊗ I2`, `N = (I − M Mᵀ)/2 ⊗ I2`. Passive optics on both sides turn
//! it into pure-loss channels whose transmissivities are the squared singular
//! values of `M`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianChannel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryChannelSpec {
    pub n: usize,
    /// Memory beamsplitter transmissivity.
    pub mu: f64,
    /// Input beamsplitter transmissivity.
    pub kappa_mem: f64,
}

impl MemoryChannelSpec {
    pub fn new(n: usize, mu: f64, kappa_mem: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("memory channel needs at least one use".into()));
        }
        for (name, v) in [("mu", mu), ("kappa", kappa_mem)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} = {v} not in [0, 1]")));
            }
        }
        Ok(Self { n, mu, kappa_mem })
    }

    /// Input-to-output amplitude matrix of the cascade.
    pub fn transfer_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let (sm, sk, sk_c) = (self.mu.sqrt(), self.kappa_mem.sqrt(), (1.0 - self.kappa_mem).sqrt());
        let mut m = DMatrix::zeros(n, n);
        // memory amplitude on each input
        let mut mem = DVector::<f64>::zeros(n);
        for l in 0..n {
            let env = &mem * sm;
            for j in 0..n {
                m[(l, j)] = sk_c * env[j];
            }
            m[(l, l)] += sk;
            mem = env * sk;
            mem[l] -= sk_c;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryModes {
    /// Ascending AWGN STDs `√(1 − τ)`.
    pub sigmas: Vec<f64>,
    /// Matching pure-loss transmissivities.
    pub transmissivities: Vec<f64>,
}

/// Exact finite-`n` unravelling into independent pure-loss channels.
pub fn memory_sigmas(spec: &MemoryChannelSpec) -> MemoryModes {
    let sv = spec.transfer_matrix().singular_values();
    let mut taus: Vec<f64> = sv.iter().map(|s| (s * s).min(1.0)).collect();
    taus.sort_by(|a, b| b.total_cmp(a));
    MemoryModes { sigmas: taus.iter().map(|t| (1.0 - t).max(0.0).sqrt()).collect(), transmissivities: taus }
}

/// Large-`n` transmissivities `|(√μ − √κ z)/(1 − √(κμ) z)|²` with
/// `z = e^{iπl/n}`, `l = 1..n`, paired with their index `l`.
pub fn asymptotic_transmissivities(spec: &MemoryChannelSpec) -> Result<Vec<(usize, f64)>> {
    let (sm, sk) = (spec.mu.sqrt(), spec.kappa_mem.sqrt());
    (1..=spec.n)
        .map(|l| {
            let z = Complex64::from_polar(1.0, PI * l as f64 / spec.n as f64);
            let den = Complex64::new(1.0, 0.0) - z * (sk * sm);
            if den.norm() < 1e-15 {
                return Err(Error::Parameter(format!("singular memory spectrum at l = {l}")));
            }
            Ok((l, ((Complex64::new(sm, 0.0) - z * sk) / den).norm_sqr()))
        })
        .collect()
}

/// Full correlated channel over vacuum environment and memory.
pub fn memory_full_channel(spec: &MemoryChannelSpec) -> GaussianChannel {
    let m = spec.transfer_matrix();
    let n = spec.n;
    let noise_modes = (DMatrix::identity(n, n) - &m * m.transpose()) * 0.5;
    let mut t = DMatrix::zeros(2 * n, 2 * n);
    let mut noise = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..2 {
                t[(2 * i + k, 2 * j + k)] = m[(i, j)];
                noise[(2 * i + k, 2 * j + k)] = noise_modes[(i, j)];
            }
        }
    }
    GaussianChannel { n, t, noise, d: DVector::zeros(2 * n) }
}

/// Split ascending STDs into those usable by a code with the given diagonal
/// threshold and those discarded. Channels at or above 1 are always dropped.
pub fn partition_by_threshold(sigmas: &[f64], threshold: f64) -> (Vec<f64>, Vec<f64>) {
    sigmas.iter().copied().partition(|&s| s < threshold.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_parameters() {
        let spec = MemoryChannelSpec::new(6, 0.9, 0.8).unwrap();
        let got = memory_sigmas(&spec).sigmas;
        let printed = [0.0792, 0.0881, 0.107, 0.150, 0.269, 0.839];
        let digits = [4, 4, 3, 3, 3, 3];
        for ((g, p), d) in got.iter().zip(printed).zip(digits) {
            let scale = 10f64.powi(d);
            assert!(((g * scale).round() / scale - p).abs() < 1e-12, "{g} vs {p}");
        }
    }

    #[test]
    fn trivial_limits() {
        let full = memory_sigmas(&MemoryChannelSpec::new(5, 0.7, 1.0).unwrap());
        assert!(full.sigmas.iter().all(|s| *s < 1e-7));
        let no_memory = memory_sigmas(&MemoryChannelSpec::new(4, 0.0, 0.64).unwrap());
        for s in no_memory.sigmas {
            assert_relative_eq!(s, 0.6, max_relative = 1e-12);
        }
        let single = memory_sigmas(&MemoryChannelSpec::new(1, 0.9, 0.8).unwrap());
        assert_relative_eq!(single.transmissivities[0], 0.8, max_relative = 1e-14);
        let c = memory_full_channel(&MemoryChannelSpec::new(3, 0.5, 1.0).unwrap());
        assert!(c.deviation_from_awgn(&[0.0; 3]) < 1e-15);
    }

    #[test]
    fn asymptotic_form() {
        let spec = MemoryChannelSpec::new(6, 0.0, 0.64).unwrap();
        for (_, t) in asymptotic_transmissivities(&spec).unwrap() {
            assert_relative_eq!(t, 0.64, max_relative = 1e-12);
        }
        let spec = MemoryChannelSpec::new(6, 0.5, 1.0).unwrap();
        for (_, t) in asymptotic_transmissivities(&spec).unwrap() {
            assert_relative_eq!(t, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn full_channel_is_physical() {
        let c = memory_full_channel(&MemoryChannelSpec::new(5, 0.9, 0.8).unwrap());
        assert!(c.is_completely_positive());
        assert!(MemoryChannelSpec::new(3, 1.1, 0.5).is_err());
    }

    #[test]
    fn discard_rule() {
        let (kept, dropped) = partition_by_threshold(&[0.08, 0.27, 0.84], 0.56);
        assert_eq!(kept, vec![0.08, 0.27]);
        assert_eq!(dropped, vec![0.84]);
    }
}
