//! Residual-noise densities as symmetric mixtures of Gaussians with a shared
//! component width, and the modular arithmetic of ideal GKP measurements.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::SQRT_2PI;

/// Default per-layer discard budget for light peaks.
pub const PRUNE_EPS: f64 = 1e-12;
/// Peaks whose means differ by less than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// `z - n* s` with `n* = argmin |z - n s|`, in `[-s/2, s/2)`.
pub fn modular_reduce(z: f64, s: f64) -> f64 {
    let r = z - s * (z / s + 0.5).floor();
    // guard against rounding pushing the result onto +s/2
    if r >= 0.5 * s {
        r - s
    } else if r < -0.5 * s {
        r + s
    } else {
        r
    }
}

/// Probability that `N(-shift, sigma^2)` lands in `[(l - 1/2) s, (l + 1/2) s]`
/// for the GKP spacing `s = √(2π)`.
pub fn shifted_bin_coeff(l: i64, sigma: f64, shift: f64) -> f64 {
    let lo = ((l as f64 - 0.5) * SQRT_2PI + shift) / sigma;
    let hi = ((l as f64 + 0.5) * SQRT_2PI + shift) / sigma;
    interval_mass(lo, hi)
}

/// `b_n(sigma)`: mass of a centered Gaussian in the n-th lattice bin.
pub fn gkp_bin_coeff(n: i64, sigma: f64) -> f64 {
    shifted_bin_coeff(n, sigma, 0.0)
}

/// Standard normal mass of `[lo, hi]`, evaluated in whichever tail keeps the
/// erfc difference well conditioned.
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let m = if lo >= 0.0 {
        0.5 * (erfc(lo * r) - erfc(hi * r))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * r) - erfc(-lo * r))
    } else {
        1.0 - 0.5 * erfc(-lo * r) - 0.5 * erfc(hi * r)
    };
    m.max(0.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Half-width of the lattice window that covers nine standard deviations.
pub fn bin_window(sigma: f64) -> i64 {
    (9.0 * sigma / SQRT_2PI).ceil() as i64 + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidePeak {
    /// Weight of each of the two mirrored components.
    pub weight: f64,
    /// Positive offset; the components sit at `±offset`.
    pub offset: f64,
}

/// Symmetric mixture `Σ b_k N(t_k, sigma^2)`; symmetry is structural, every
/// side peak stands for the pair at `±offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    sigma: f64,
    center: f64,
    sides: Vec<SidePeak>,
    truncated: f64,
}

impl GaussianMixture1D {
    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, center: 1.0, sides: Vec::new(), truncated: 0.0 }
    }

    /// Validate and build from a full `(weight, mean)` list.
    pub fn from_terms(sigma: f64, terms: &[(f64, f64)], truncated: f64) -> Result<Self> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::Parameter(format!("component sigma {sigma} must be >= 0")));
        }
        if let Some(&(b, _)) = terms.iter().find(|(b, _)| b.is_nan() || *b <= 0.0) {
            return Err(Error::Parameter(format!("mixture weight {b} must be positive")));
        }
        let mean: f64 = terms.iter().map(|(b, t)| b * t).sum();
        if mean.abs() > 1e-10 {
            return Err(Error::AsymmetricMixture(format!("mean {mean:.3e}")));
        }
        let mut pos: Vec<(f64, f64)> = terms.iter().filter(|(_, t)| *t > MERGE_TOL).map(|&(b, t)| (t, b)).collect();
        let mut neg: Vec<(f64, f64)> = terms.iter().filter(|(_, t)| *t < -MERGE_TOL).map(|&(b, t)| (-t, b)).collect();
        pos.sort_by(|a, b| a.0.total_cmp(&b.0));
        neg.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pos.len() != neg.len() {
            return Err(Error::AsymmetricMixture("unpaired peaks".into()));
        }
        let mut sides = Vec::with_capacity(pos.len());
        for (p, q) in pos.iter().zip(&neg) {
            if (p.0 - q.0).abs() > 1e-10 || (p.1 - q.1).abs() > 1e-10 * p.1.max(1e-300) {
                return Err(Error::AsymmetricMixture(format!("peak at {} has no mirror", p.0)));
            }
            sides.push(SidePeak { weight: 0.5 * (p.1 + q.1), offset: p.0 });
        }
        let center = terms.iter().filter(|(_, t)| t.abs() <= MERGE_TOL).map(|(b, _)| b).sum();
        let m = Self { sigma, center, sides, truncated };
        let total = m.total_weight() + truncated;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("weights plus truncation sum to {total}")));
        }
        Ok(m)
    }

    /// `Σ_n b_n(sigma_bin) N(-slope √(2π) n, sigma_peak^2)`, the single-layer
    /// residual family of both two-mode codes.
    pub fn lattice_family(sigma_bin: f64, sigma_peak: f64, slope: f64, eps: f64) -> Self {
        let w = bin_window(sigma_bin);
        let mut b = MixtureBuilder::new(sigma_peak);
        for n in -w..=w {
            b.push(gkp_bin_coeff(n, sigma_bin), slope * (SQRT_2PI * n as f64));
        }
        b.finish(eps)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn center_weight(&self) -> f64 {
        self.center
    }

    pub fn side_peaks(&self) -> &[SidePeak] {
        &self.sides
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncated
    }

    /// Number of Gaussian components in the full (mirrored) list.
    pub fn peak_count(&self) -> usize {
        2 * self.sides.len() + usize::from(self.center > 0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.center + 2.0 * self.sides.iter().map(|p| p.weight).sum::<f64>()
    }

    /// Full `(weight, mean)` list, center first then mirrored pairs.
    pub fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = (self.center > 0.0).then_some((self.center, 0.0));
        c.into_iter().chain(self.sides.iter().flat_map(|p| [(p.weight, p.offset), (p.weight, -p.offset)]))
    }

    /// Normalized second moment `Σ b (sigma^2 + t^2) / Σ b`.
    pub fn variance(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        let mut num = self.center * s2;
        for p in &self.sides {
            num += 2.0 * p.weight * (s2 + p.offset * p.offset);
        }
        num / self.total_weight()
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn density(&self, x: f64) -> f64 {
        let norm = 1.0 / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        let g = |m: f64| norm * (-0.5 * ((x - m) / self.sigma).powi(2)).exp();
        self.terms().map(|(b, t)| b * g(t)).sum::<f64>() / self.total_weight()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.terms().map(|(b, t)| b * normal_cdf((x - t) / self.sigma)).sum::<f64>() / self.total_weight()
    }

    /// Normalized `E[x² 1{lo <= x < hi}]`.
    pub fn windowed_second_moment(&self, lo: f64, hi: f64) -> f64 {
        let s = self.sigma;
        let phi = |z: f64| (-0.5 * z * z).exp() / SQRT_2PI;
        let num: f64 = self
            .terms()
            .map(|(b, t)| {
                let (a, c) = ((lo - t) / s, (hi - t) / s);
                let mass = interval_mass(a, c);
                let first = phi(a) - phi(c);
                let second = mass + a * phi(a) - c * phi(c);
                b * (t * t * mass + 2.0 * t * s * first + s * s * second)
            })
            .sum();
        num / self.total_weight()
    }

    /// Drop the peaks (mirrored pairs count together) that matter least to
    /// the second moment while the discarded mass stays within `eps` and the
    /// discarded second moment within `eps` of the total.
    pub fn prune(&self, eps: f64) -> Self {
        let mut m = self.clone();
        m.prune_in_place(eps);
        m
    }

    fn prune_in_place(&mut self, eps: f64) {
        if eps <= 0.0 {
            return;
        }
        let s2 = self.sigma * self.sigma;
        // (mass, second moment, index); usize::MAX stands for the center
        let mut units: Vec<(f64, f64, usize)> = self
            .sides
            .iter()
            .enumerate()
            .map(|(i, p)| (2.0 * p.weight, 2.0 * p.weight * (s2 + p.offset * p.offset), i))
            .collect();
        if self.center > 0.0 {
            units.push((self.center, self.center * s2, usize::MAX));
        }
        let moment_budget = eps * units.iter().map(|u| u.1).sum::<f64>();
        units.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (mut dropped, mut dropped_moment) = (0.0, 0.0);
        let mut drop = vec![false; self.sides.len()];
        for (mass, moment, idx) in units {
            if dropped + mass > eps || dropped_moment + moment > moment_budget {
                break;
            }
            dropped += mass;
            dropped_moment += moment;
            if idx == usize::MAX {
                self.center = 0.0;
            } else {
                drop[idx] = true;
            }
        }
        let mut i = 0;
        self.sides.retain(|_| {
            i += 1;
            !drop[i - 1]
        });
        self.truncated += dropped;
    }
}

/// Accumulates raw `(weight, mean)` components produced by a layer update and
/// folds them into a symmetric mixture. Components at negative means are
/// mirror images of positive ones and are skipped; callers must produce a
/// mirror-symmetric component set.
#[derive(Debug, Clone)]
pub struct MixtureBuilder {
    sigma: f64,
    center: f64,
    raw: Vec<(f64, f64)>,
    pushed: f64,
    inherited_truncation: f64,
}

impl MixtureBuilder {
    pub fn new(sigma: f64) -> Self {
        Self { sigma, center: 0.0, raw: Vec::new(), pushed: 0.0, inherited_truncation: 0.0 }
    }

    /// Carry over discarded mass from a parent mixture.
    pub fn inherit_truncation(&mut self, mass: f64) {
        self.inherited_truncation += mass;
    }

    pub fn push(&mut self, weight: f64, mean: f64) {
        if weight <= 0.0 {
            return;
        }
        if mean.abs() <= MERGE_TOL {
            self.center += weight;
            self.pushed += weight;
        } else if mean > 0.0 {
            self.raw.push((mean, weight));
            self.pushed += 2.0 * weight;
        }
    }

    /// Merge near-coincident means, prune, and account every lost unit of
    /// probability in the truncation mass.
    pub fn finish(mut self, eps: f64) -> GaussianMixture1D {
        self.raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut sides: Vec<SidePeak> = Vec::with_capacity(self.raw.len());
        let mut anchor = f64::NEG_INFINITY;
        for &(t, w) in &self.raw {
            match sides.last_mut() {
                Some(last) if t - anchor < MERGE_TOL => {
                    let tot = last.weight + w;
                    last.offset = (last.offset * last.weight + t * w) / tot;
                    last.weight = tot;
                }
                _ => {
                    anchor = t;
                    sides.push(SidePeak { weight: w, offset: t });
                }
            }
        }
        // mass outside the bin windows of the parents
        let parent_mass = 1.0 - self.inherited_truncation;
        let window_loss = (parent_mass - self.pushed).max(0.0);
        let mut m = GaussianMixture1D {
            sigma: self.sigma,
            center: self.center,
            sides,
            truncated: self.inherited_truncation + window_loss,
        };
        m.prune_in_place(eps);
        m
    }
}

#[derive(Serialize, Deserialize)]
struct MixtureJson {
    sigma: f64,
    terms: Vec<[f64; 2]>,
    truncated: f64,
}

impl Serialize for GaussianMixture1D {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        MixtureJson { sigma: self.sigma, terms: self.terms().map(|(b, t)| [b, t]).collect(), truncated: self.truncated }
            .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for GaussianMixture1D {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = MixtureJson::deserialize(de)?;
        let terms: Vec<(f64, f64)> = j.terms.iter().map(|p| (p[0], p[1])).collect();
        GaussianMixture1D::from_terms(j.sigma, &terms, j.truncated).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const S: f64 = SQRT_2PI;

    #[test]
    fn modular_reduce_examples() {
        assert_eq!(modular_reduce(0.0, S), 0.0);
        assert!(modular_reduce(S, S).abs() < 1e-15);
        assert_relative_eq!(modular_reduce(0.6 * S, S), -0.4 * S, epsilon = 1e-14);
        assert_eq!(modular_reduce(0.5 * S, S), -0.5 * S);
        assert_eq!(modular_reduce(-0.5 * S, S), -0.5 * S);
    }

    #[test]
    fn central_bin_matches_erfc_identity() {
        for sigma in [0.05, 0.3, 1.0, 2.5] {
            let b0 = gkp_bin_coeff(0, sigma);
            let expect = 1.0 - erfc(std::f64::consts::PI.sqrt() / (2.0 * sigma));
            assert_relative_eq!(b0, expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn shift_by_lattice_vector_moves_bin() {
        for l in -3..=3 {
            assert_relative_eq!(shifted_bin_coeff(l, 0.8, S), gkp_bin_coeff(l + 1, 0.8), max_relative = 1e-12);
            assert_eq!(shifted_bin_coeff(l, 0.8, 0.0), gkp_bin_coeff(l, 0.8));
        }
    }

    #[test]
    fn far_tail_bins_keep_relative_accuracy() {
        // 12.5 sigma away: a naive 1 - cdf difference would return 0
        let b = gkp_bin_coeff(2, 0.3);
        assert!(b > 1e-40 && b < 1e-30);
        let lo = 1.5 * S / 0.3;
        let hi = 2.5 * S / 0.3;
        let expect = 0.5 * (erfc(lo / 2f64.sqrt()) - erfc(hi / 2f64.sqrt()));
        assert_relative_eq!(b, expect, max_relative = 1e-12);
    }

    #[test]
    fn variance_examples() {
        assert_relative_eq!(GaussianMixture1D::gaussian(0.3).variance(), 0.09, max_relative = 1e-15);
        let m = GaussianMixture1D::from_terms(0.2, &[(0.5, 0.7), (0.5, -0.7)], 0.0).unwrap();
        assert_relative_eq!(m.variance(), 0.04 + 0.49, max_relative = 1e-14);
    }

    #[test]
    fn windowed_moment_against_quadrature() {
        let m = GaussianMixture1D::from_terms(0.2, &[(0.6, 0.0), (0.2, 0.7), (0.2, -0.7)], 0.0).unwrap();
        assert_relative_eq!(m.windowed_second_moment(-50.0, 50.0), m.variance(), max_relative = 1e-14);
        let (lo, hi, k) = (-0.3, 0.9, 200_000);
        let h = (hi - lo) / k as f64;
        let simpson: f64 = (0..=k)
            .map(|i| {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == k {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * x * x * m.density(x)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert_relative_eq!(m.windowed_second_moment(lo, hi), simpson, max_relative = 1e-10);
    }

    #[test]
    fn asymmetric_terms_rejected() {
        let r = GaussianMixture1D::from_terms(0.2, &[(0.5, 0.7), (0.5, -0.6)], 0.0);
        assert!(matches!(r, Err(Error::AsymmetricMixture(_))));
        let r = GaussianMixture1D::from_terms(0.2, &[(0.6, 0.7), (0.4, -0.7)], 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn prune_examples() {
        let terms = [(1.0 - 1e-20, 0.0), (0.5e-20, 3.0), (0.5e-20, -3.0)];
        let m = GaussianMixture1D::from_terms(0.1, &terms, 0.0).unwrap();
        assert_eq!(m.prune(0.0), m);
        let p = m.prune(1e-12);
        assert_eq!(p.peak_count(), 1);
        assert_relative_eq!(p.truncation_mass(), 1e-20, max_relative = 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = GaussianMixture1D::lattice_family(0.4, 0.05, 0.9, PRUNE_EPS);
        let s = serde_json::to_string(&m).unwrap();
        let back: GaussianMixture1D = serde_json::from_str(&s).unwrap();
        assert_eq!(back.peak_count(), m.peak_count());
        assert_relative_eq!(back.variance(), m.variance(), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn bins_are_normalized(sigma in 0.01f64..2.0) {
            let w = bin_window(sigma);
            let total: f64 = (-w..=w).map(|n| gkp_bin_coeff(n, sigma)).sum();
            prop_assert!((1.0 - total).abs() < 1e-10);
        }

        #[test]
        fn modular_reduce_is_idempotent(z in -50.0f64..50.0) {
            let r = modular_reduce(z, S);
            prop_assert!((-0.5 * S..0.5 * S).contains(&r));
            prop_assert_eq!(modular_reduce(r, S), r);
            let k = ((z - r) / S).round();
            prop_assert!((z - r - k * S).abs() < 1e-12);
        }

        #[test]
        fn lattice_family_conserves_weight(sb in 0.01f64..1.5, sp in 0.01f64..0.5, slope in 0.0f64..3.0) {
            let m = GaussianMixture1D::lattice_family(sb, sp, slope, PRUNE_EPS);
            prop_assert!((m.total_weight() + m.truncation_mass() - 1.0).abs() < 1e-12);
            prop_assert!(m.terms().all(|(b, _)| b > 0.0));
        }
    }
}
