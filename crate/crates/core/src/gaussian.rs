//! Gaussian channels `(T, N, d)` acting on means and covariances as
//! `x -> T x + d`, `V -> T V T^T + N`.
//!
//! Conversion of the photon-number parameters used for loss and amplification
//! (vacuum variance 1/2):
//!
//! | channel            | T          | N                          |
//! |--------------------|------------|----------------------------|
//! | thermal loss (η)   | √η · I2    | (N_B + (1 − η)/2) · I2     |
//! | amplifier (G)      | √G · I2    | (N_B + (G − 1)/2) · I2     |
//! | AWGN (σ)           | I2         | σ² · I2                    |
//!
//! With these, loss η after amplification 1/η is the AWGN channel with
//! `σ² = N_B + 1 − η`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYMPLECTIC_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;

/// The symplectic form `⊕ [[0, 1], [-1, 0]]`.
pub fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows() / 2;
    let w = omega(n);
    (s * &w * s.transpose() - w).amax()
}

pub fn is_symplectic(s: &DMatrix<f64>, tol: f64) -> bool {
    s.is_square() && s.nrows().is_multiple_of(2) && symplectic_defect(s) <= tol
}

/// Smallest eigenvalue of the Hermitian matrix `A + iB` (B antisymmetric),
/// through its real embedding `[[A, -B], [B, A]]`.
pub fn hermitian_min_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.nrows();
    let mut r = DMatrix::zeros(2 * m, 2 * m);
    r.view_mut((0, 0), (m, m)).copy_from(a);
    r.view_mut((m, m), (m, m)).copy_from(a);
    r.view_mut((0, m), (m, m)).copy_from(&(-b));
    r.view_mut((m, 0), (m, m)).copy_from(b);
    let r = (&r + r.transpose()) * 0.5;
    SymmetricEigen::new(r).eigenvalues.min()
}

/// Realify an n×n unitary acting on `a = (q + ip)/√2` into the 2n×2n
/// orthogonal symplectic matrix on `(q1, p1, ...)`.
pub fn realify_unitary(u: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut o = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let z = u[(j, k)];
            o[(2 * j, 2 * k)] = z.re;
            o[(2 * j, 2 * k + 1)] = -z.im;
            o[(2 * j + 1, 2 * k)] = z.im;
            o[(2 * j + 1, 2 * k + 1)] = z.re;
        }
    }
    o
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    pub n: usize,
    pub t: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl GaussianChannel {
    /// Checked constructor: shapes, symmetry of `N` and complete positivity.
    pub fn new(t: DMatrix<f64>, noise: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let c = Self::new_unchecked(t, noise, d)?;
        if (&c.noise - c.noise.transpose()).amax() > PSD_TOL {
            return Err(Error::Parameter("noise matrix is not symmetric".into()));
        }
        let ev = c.cp_min_eigenvalue();
        if ev < -PSD_TOL {
            return Err(Error::NotCompletelyPositive(ev));
        }
        Ok(c)
    }

    /// Shape-checked constructor without the physicality test. Used for
    /// intermediate stages such as inverse displacements.
    pub fn new_unchecked(t: DMatrix<f64>, noise: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let dim = t.nrows();
        if !dim.is_multiple_of(2) || !t.is_square() {
            return Err(Error::Parameter(format!("T must be 2n x 2n, got {}x{}", t.nrows(), t.ncols())));
        }
        for got in [noise.nrows(), noise.ncols(), d.len()] {
            if got != dim {
                return Err(Error::Dimension { expected: dim, got });
            }
        }
        Ok(Self { n: dim / 2, t, noise, d })
    }

    pub fn identity(n: usize) -> Self {
        let dim = 2 * n;
        Self { n, t: DMatrix::identity(dim, dim), noise: DMatrix::zeros(dim, dim), d: DVector::zeros(dim) }
    }

    /// Product of independent AWGN channels with the given standard deviations.
    pub fn awgn(sigmas: &[f64]) -> Self {
        let mut c = Self::identity(sigmas.len());
        for (k, s) in sigmas.iter().enumerate() {
            c.noise[(2 * k, 2 * k)] = s * s;
            c.noise[(2 * k + 1, 2 * k + 1)] = s * s;
        }
        c
    }

    pub fn thermal_loss(eta: f64, n_b: f64, mode: usize, n: usize) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Parameter(format!("transmissivity {eta} not in (0, 1]")));
        }
        single_mode(eta.sqrt(), n_b, (1.0 - eta) / 2.0, mode, n)
    }

    pub fn amplifier(gain: f64, n_b: f64, mode: usize, n: usize) -> Result<Self> {
        if !(gain >= 1.0 && gain.is_finite()) {
            return Err(Error::Parameter(format!("gain {gain} must be >= 1")));
        }
        single_mode(gain.sqrt(), n_b, (gain - 1.0) / 2.0, mode, n)
    }

    /// Gaussian unitary channel `x -> S x + d`.
    pub fn unitary(s: &SymplecticUnitary) -> Self {
        let dim = s.s.nrows();
        Self { n: dim / 2, t: s.s.clone(), noise: DMatrix::zeros(dim, dim), d: s.d.clone() }
    }

    /// `N + (i/2)(Ω − T Ω Tᵀ)` must be positive semidefinite.
    pub fn cp_min_eigenvalue(&self) -> f64 {
        let w = omega(self.n);
        let b = (&w - &self.t * &w * self.t.transpose()) * 0.5;
        hermitian_min_eigenvalue(&self.noise, &b)
    }

    pub fn is_completely_positive(&self) -> bool {
        self.cp_min_eigenvalue() >= -PSD_TOL
    }

    /// `x -> T x + d`, `V -> T V Tᵀ + N`.
    pub fn apply_to_gaussian_state(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let dim = 2 * self.n;
        if mean.len() != dim {
            return Err(Error::Dimension { expected: dim, got: mean.len() });
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Dimension { expected: dim, got: cov.nrows() });
        }
        if (cov - cov.transpose()).amax() > PSD_TOL {
            return Err(Error::InvalidCovariance("covariance is not symmetric".into()));
        }
        let ev = hermitian_min_eigenvalue(cov, &(omega(self.n) * 0.5));
        if ev < -PSD_TOL {
            return Err(Error::InvalidCovariance(format!("uncertainty relation violated ({ev:.3e})")));
        }
        let m = &self.t * mean + &self.d;
        let v = &self.t * cov * self.t.transpose() + &self.noise;
        Ok((m, v))
    }

    /// Deviation of this channel from the AWGN product with the given sigmas,
    /// as the max entrywise difference over `(T, N, d)`.
    pub fn deviation_from_awgn(&self, sigmas: &[f64]) -> f64 {
        let ideal = Self::awgn(sigmas);
        if ideal.n != self.n {
            return f64::INFINITY;
        }
        (&self.t - &ideal.t).amax().max((&self.noise - &ideal.noise).amax()).max((&self.d - &ideal.d).amax())
    }
}

fn single_mode(scale: f64, n_b: f64, base_noise: f64, mode: usize, n: usize) -> Result<GaussianChannel> {
    if n_b.is_nan() || n_b < 0.0 {
        return Err(Error::Parameter(format!("thermal noise {n_b} must be >= 0")));
    }
    if mode >= n {
        return Err(Error::Parameter(format!("mode {mode} out of range for {n} modes")));
    }
    let mut c = GaussianChannel::identity(n);
    for i in [2 * mode, 2 * mode + 1] {
        c.t[(i, i)] = scale;
        c.noise[(i, i)] = n_b + base_noise;
    }
    Ok(c)
}

/// `a ∘ b`: apply `b` first, then `a`.
pub fn compose(a: &GaussianChannel, b: &GaussianChannel) -> Result<GaussianChannel> {
    if a.n != b.n {
        return Err(Error::Dimension { expected: 2 * a.n, got: 2 * b.n });
    }
    Ok(GaussianChannel {
        n: a.n,
        t: &a.t * &b.t,
        noise: &a.t * &b.noise * a.t.transpose() + &a.noise,
        d: &a.t * &b.d + &a.d,
    })
}

/// Compose a sequence of channels applied in order (first element first).
pub fn compose_sequence<'a, I>(n: usize, stages: I) -> Result<GaussianChannel>
where
    I: IntoIterator<Item = &'a GaussianChannel>,
{
    stages.into_iter().try_fold(GaussianChannel::identity(n), |acc, s| compose(s, &acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticUnitary {
    pub s: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl SymplecticUnitary {
    pub fn new(s: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if !is_symplectic(&s, SYMPLECTIC_TOL) {
            return Err(Error::Parameter(format!("matrix is not symplectic (defect {:.3e})", symplectic_defect(&s))));
        }
        if d.len() != s.nrows() {
            return Err(Error::Dimension { expected: s.nrows(), got: d.len() });
        }
        Ok(Self { s, d })
    }

    pub fn linear(s: DMatrix<f64>) -> Result<Self> {
        let dim = s.nrows();
        Self::new(s, DVector::zeros(dim))
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        // S^{-1} = -Ω Sᵀ Ω
        let w = omega(self.s.nrows() / 2);
        -(&w * self.s.transpose() * &w)
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    n: usize,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    noise: Vec<Vec<f64>>,
    d: Vec<f64>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::Dimension { expected: c, got: bad.len() });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl Serialize for GaussianChannel {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ChannelJson {
            n: self.n,
            t: matrix_rows(&self.t),
            noise: matrix_rows(&self.noise),
            d: self.d.iter().copied().collect(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for GaussianChannel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = ChannelJson::deserialize(de)?;
        let t = matrix_from_rows(&j.t).map_err(D::Error::custom)?;
        let noise = matrix_from_rows(&j.noise).map_err(D::Error::custom)?;
        let c = GaussianChannel::new(t, noise, DVector::from_vec(j.d)).map_err(D::Error::custom)?;
        if c.n != j.n {
            return Err(D::Error::custom(format!("declared n = {} but matrices have n = {}", j.n, c.n)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_then_amplifier_is_awgn() {
        let (eta, nb) = (0.7, 0.05);
        let l = GaussianChannel::thermal_loss(eta, nb, 0, 1).unwrap();
        let a = GaussianChannel::amplifier(1.0 / eta, 0.0, 0, 1).unwrap();
        let c = compose(&l, &a).unwrap();
        assert!(c.deviation_from_awgn(&[(nb + 1.0 - eta).sqrt()]) < 1e-14);
    }

    #[test]
    fn half_loss_on_vacuum_is_vacuum() {
        let l = GaussianChannel::thermal_loss(0.5, 0.0, 0, 2).unwrap();
        assert_abs_diff_eq!(l.t[(0, 0)], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(l.noise[(0, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(l.noise[(2, 2)], 0.0, epsilon = 1e-15);
        let vac = DMatrix::identity(4, 4) * 0.5;
        let (_, v) = l.apply_to_gaussian_state(&DVector::zeros(4), &vac).unwrap();
        assert!((v - vac).amax() < 1e-15);
    }

    #[test]
    fn trivial_constructors_are_identity() {
        let id = GaussianChannel::identity(3);
        assert_eq!(GaussianChannel::thermal_loss(1.0, 0.0, 1, 3).unwrap(), id);
        assert_eq!(GaussianChannel::amplifier(1.0, 0.0, 2, 3).unwrap(), id);
    }

    #[test]
    fn amplifiers_compose_to_quantum_limited_amplifier() {
        let a = GaussianChannel::amplifier(2.0, 0.0, 0, 1).unwrap();
        let b = GaussianChannel::amplifier(3.5, 0.0, 0, 1).unwrap();
        let ab = compose(&a, &b).unwrap();
        let direct = GaussianChannel::amplifier(7.0, 0.0, 0, 1).unwrap();
        assert!((ab.t - direct.t).amax() < 1e-14);
        assert!((ab.noise - direct.noise).amax() < 1e-14);
    }

    #[test]
    fn out_of_range_parameters_rejected() {
        assert!(GaussianChannel::thermal_loss(0.0, 0.0, 0, 1).is_err());
        assert!(GaussianChannel::thermal_loss(1.2, 0.0, 0, 1).is_err());
        assert!(GaussianChannel::amplifier(0.5, 0.0, 0, 1).is_err());
        assert!(GaussianChannel::amplifier(2.0, -0.1, 0, 1).is_err());
        assert!(GaussianChannel::amplifier(2.0, 0.0, 3, 2).is_err());
    }

    #[test]
    fn awgn_on_vacuum() {
        let c = GaussianChannel::awgn(&[0.3]);
        let (_, v) = c.apply_to_gaussian_state(&DVector::zeros(2), &(DMatrix::identity(2, 2) * 0.5)).unwrap();
        assert_abs_diff_eq!(v[(0, 0)], 0.5 + 0.09, epsilon = 1e-15);
        assert_abs_diff_eq!(v[(1, 1)], 0.5 + 0.09, epsilon = 1e-15);
    }

    #[test]
    fn unphysical_inputs_rejected() {
        // pure phase conjugation without added noise
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            GaussianChannel::new(t, DMatrix::zeros(2, 2), DVector::zeros(2)),
            Err(Error::NotCompletelyPositive(_))
        ));
        let id = GaussianChannel::identity(1);
        let squeezed_too_much = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1]));
        assert!(id.apply_to_gaussian_state(&DVector::zeros(2), &squeezed_too_much).is_err());
        assert!(compose(&GaussianChannel::identity(1), &GaussianChannel::identity(2)).is_err());
    }

    #[test]
    fn realified_unitary_is_orthogonal_symplectic() {
        let th = 0.4f64;
        let u = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(th.cos(), 0.0),
                Complex64::new(0.0, th.sin()),
                Complex64::new(0.0, th.sin()),
                Complex64::new(th.cos(), 0.0),
            ],
        );
        let o = realify_unitary(&u);
        assert!(is_symplectic(&o, 1e-14));
        assert!((&o * o.transpose() - DMatrix::identity(4, 4)).amax() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let c = GaussianChannel::thermal_loss(0.3, 0.1, 1, 2).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"T\""));
        let back: GaussianChannel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
