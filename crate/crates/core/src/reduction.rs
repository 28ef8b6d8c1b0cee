//! Reduce a multi-mode Gaussian channel to independent AWGN channels with
//! Gaussian pre- and post-processing.
//!
//! Pipeline, in the order the stages act on the input:
//!
//! 1. conjugation `O` that brings the final noise to AWGN form,
//! 2. per-mode amplifiers with gain `1 / min(G_k², 1)`,
//! 3. passive unitary `B`,
//! 4. the channel itself,
//! 5. displacement `−d` followed by the passive unitary `A`,
//! 6. single-mode squeezers equalizing the q and p gains,
//! 7. per-mode losses with transmissivity `1 / max(G_k², 1)`,
//! 8. its inverse.
//!
//! `O` is passive when the noise left after step 7 is phase insensitive.
//! Otherwise it is taken from the Williamson normal form of that noise.
//!
//! `A T B = diag(G')` is found with orthogonal symplectic `A`, `B`: the right
//! singular vectors are grouped into `(v, −Ωv)` quadrature pairs by jointly
//! diagonalizing `TᵀT` and `Ωᵀ TᵀT Ω`. When `T` admits no such passive
//! factorization the result is flagged as degraded.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{compose_sequence, omega, realify_unitary, GaussianChannel, PSD_TOL};

/// Singular values below this count as zero transmission.
pub const ERASED_GAIN: f64 = 1e-12;
/// Surrogate STD reported for an erased mode.
pub const ERASED_SIGMA: f64 = 10.0;
const PASSIVE_TOL: f64 = 1e-6;
const CLUSTER_TOL: f64 = 1e-9;
// irrational weight separating (a², b²) pairs in one symmetric eigenproblem
const MIX: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    NoiseConjugation,
    PreAmplifiers,
    PassiveInput,
    DisplaceAndPassiveOutput,
    Squeezers,
    PostLosses,
    NoiseDeconjugation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub kind: StageKind,
    pub channel: GaussianChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionResult {
    pub sigmas: Vec<f64>,
    /// Stages applied before the channel, in order.
    pub pre: Vec<Stage>,
    /// Stages applied after the channel, in order.
    pub post: Vec<Stage>,
    /// Max deviation from diagonal, q/p-symmetric form left by the best
    /// passive conjugation of the final noise (infinite if none exists).
    pub residual_error: f64,
    /// The passive conjugation was not exact and a symplectic one was used.
    pub active_noise_conjugation: bool,
    /// Set when no passive factorization of `T` was found.
    pub degraded: bool,
    pub erased_modes: Vec<usize>,
}

impl ReductionResult {
    pub fn sorted_sigmas(&self) -> Vec<f64> {
        let mut s = self.sigmas.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

struct PassiveSvd {
    a: DMatrix<f64>,
    gains: DVector<f64>,
    b: DMatrix<f64>,
    passive: bool,
}

/// Orthonormal basis of `{P e_i}` restricted to a cluster; keeps bases
/// aligned with coordinate axes whenever the subspace allows.
fn canonical_basis(span: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let dim = span.nrows();
    let proj = span * span.transpose();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for i in 0..dim {
        if basis.len() == span.ncols() {
            break;
        }
        let mut v = proj.column(i).into_owned();
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Split the columns of `span` by the eigenvalues of `spanᵀ m span`.
fn refine(span: DMatrix<f64>, m: &DMatrix<f64>, tol: f64) -> Vec<DMatrix<f64>> {
    let k = span.ncols();
    if k == 1 {
        return vec![span];
    }
    let proj = span.transpose() * m * &span;
    let eig = SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
    let rotated = &span * &eig.eigenvectors;
    clusters(&eig.eigenvalues, tol).into_iter().map(|idx| rotated.select_columns(idx.iter())).collect()
}

fn clusters(values: &DVector<f64>, tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match out.last_mut() {
            Some(c) if (values[i] - values[c[0]]).abs() <= tol => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Quadrature pairs `(v, −Ωv)` that jointly diagonalize the symmetric `m` and
/// `Ωᵀ m Ω`. Returns the q-vectors, or `None` if no such pairing exists.
fn omega_pairs(m: &DMatrix<f64>) -> Option<Vec<DVector<f64>>> {
    let dim = m.nrows();
    let w = omega(dim / 2);
    let mp = w.transpose() * m * &w;
    let h = m + &mp * MIX;
    let scale = m.amax().max(1.0);
    let tol = CLUSTER_TOL * scale;
    let eig = SymmetricEigen::new((&h + h.transpose()) * 0.5);

    let mut groups: Vec<(DMatrix<f64>, f64, f64)> = Vec::new();
    for idx in clusters(&eig.eigenvalues, tol) {
        let span = eig.eigenvectors.select_columns(idx.iter());
        for s1 in refine(span, m, tol) {
            for s2 in refine(s1, &mp, tol) {
                let k = s2.ncols() as f64;
                let a2 = (s2.transpose() * m * &s2).trace() / k;
                let b2 = (s2.transpose() * &mp * &s2).trace() / k;
                groups.push((s2, a2, b2));
            }
        }
    }

    let mut used = vec![false; groups.len()];
    let mut q_vectors: Vec<DVector<f64>> = Vec::new();
    for i in 0..groups.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let (span, a2, b2) = &groups[i];
        if (a2 - b2).abs() <= tol {
            // Ω-invariant subspace: complex Gram-Schmidt
            let mut chosen: Vec<DVector<f64>> = Vec::new();
            for cand in canonical_basis(span) {
                let mut v = cand;
                for c in &chosen {
                    let pc = -(&w * c);
                    v -= c * c.dot(&v);
                    v -= &pc * pc.dot(&v);
                }
                let norm = v.norm();
                if norm > 1e-6 {
                    chosen.push(v / norm);
                }
                if 2 * chosen.len() == span.ncols() {
                    break;
                }
            }
            if 2 * chosen.len() != span.ncols() {
                return None;
            }
            q_vectors.extend(chosen);
        } else {
            let partner = (0..groups.len()).find(|&j| {
                !used[j]
                    && groups[j].0.ncols() == span.ncols()
                    && (groups[j].1 - b2).abs() <= tol
                    && (groups[j].2 - a2).abs() <= tol
            })?;
            used[partner] = true;
            q_vectors.extend(canonical_basis(span));
        }
    }
    if 2 * q_vectors.len() != dim {
        return None;
    }
    // keep modes near their coordinate axes
    q_vectors.sort_by_key(|v| v.iamax() / 2);
    Some(q_vectors)
}

fn pairs_to_matrix(q_vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = 2 * q_vectors.len();
    let w = omega(q_vectors.len());
    let mut k = DMatrix::zeros(dim, dim);
    for (i, v) in q_vectors.iter().enumerate() {
        k.set_column(2 * i, v);
        k.set_column(2 * i + 1, &(-(&w * v)));
    }
    k
}

fn passive_svd(t: &DMatrix<f64>) -> PassiveSvd {
    let dim = t.nrows();
    let n = dim / 2;
    let w = omega(n);
    let attempt = || -> Option<PassiveSvd> {
        let qv = omega_pairs(&(t.transpose() * t))?;
        let b = pairs_to_matrix(&qv);
        let tb = t * &b;
        let mut gains = DVector::zeros(dim);
        let mut u: Vec<Option<DVector<f64>>> = vec![None; n];
        let floor = 1e-10 * t.amax().max(1.0);
        for k in 0..n {
            let (x, y) = (tb.column(2 * k).into_owned(), tb.column(2 * k + 1).into_owned());
            let (a, bb) = (x.norm(), y.norm());
            gains[2 * k] = a;
            gains[2 * k + 1] = bb;
            u[k] = if a > floor {
                Some(x / a)
            } else if bb > floor {
                Some(&w * (y / bb))
            } else {
                None
            };
        }
        // complete columns for modes with no transmission
        let mut known: Vec<DVector<f64>> = u.iter().flatten().cloned().collect();
        for slot in u.iter_mut().filter(|s| s.is_none()) {
            let mut found = None;
            for i in 0..dim {
                let mut v = DVector::from_fn(dim, |r, _| if r == i { 1.0 } else { 0.0 });
                for c in &known {
                    let pc = -(&w * c);
                    v -= c * c.dot(&v);
                    v -= &pc * pc.dot(&v);
                }
                if v.norm() > 1e-6 {
                    found = Some(v.normalize());
                    break;
                }
            }
            let v = found?;
            known.push(v.clone());
            *slot = Some(v);
        }
        let uq: Vec<DVector<f64>> = u.into_iter().flatten().collect();
        let a = pairs_to_matrix(&uq).transpose();
        let diag = DMatrix::from_diagonal(&gains);
        let resid = (&a * t * &b - diag).amax();
        let ortho = (&a * a.transpose() - DMatrix::identity(dim, dim)).amax();
        (resid <= PASSIVE_TOL * t.amax().max(1.0) && ortho <= PASSIVE_TOL).then_some(PassiveSvd {
            a,
            gains,
            b,
            passive: true,
        })
    };
    attempt().unwrap_or_else(|| {
        let svd = t.clone().svd(true, true);
        PassiveSvd {
            a: svd.u.expect("requested U").transpose(),
            gains: svd.singular_values,
            b: svd.v_t.expect("requested V").transpose(),
            passive: false,
        }
    })
}

fn linear_stage(kind: StageKind, t: DMatrix<f64>, d: DVector<f64>) -> Stage {
    let dim = t.nrows();
    Stage { kind, channel: GaussianChannel { n: dim / 2, t, noise: DMatrix::zeros(dim, dim), d } }
}

fn per_mode_stage(kind: StageKind, n: usize, make: impl Fn(usize) -> Result<GaussianChannel>) -> Result<Stage> {
    let stages = (0..n).map(make).collect::<Result<Vec<_>>>()?;
    Ok(Stage { kind, channel: compose_sequence(n, &stages)? })
}

/// Per-mode average of the q and p diagonal entries.
fn awgn_part(noise: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = noise.nrows();
    let mut ideal = DMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        let v = 0.5 * (noise[(2 * k, 2 * k)] + noise[(2 * k + 1, 2 * k + 1)]);
        ideal[(2 * k, 2 * k)] = v;
        ideal[(2 * k + 1, 2 * k + 1)] = v;
    }
    ideal
}

/// Williamson form `W = S D Sᵀ` of a positive definite `W`, returned as
/// `(S, S⁻¹)` with `D = ⊕ ν_k I2` sorted ascending. `None` if `W` is not
/// safely positive definite.
fn williamson(wm: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let dim = wm.nrows();
    let n = dim / 2;
    let eig = SymmetricEigen::new(wm.clone());
    if eig.eigenvalues.min() <= 1e-10 * eig.eigenvalues.max() {
        return None;
    }
    let root =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * eig.eigenvectors.transpose();
    let inv_root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eig.eigenvectors.transpose();
    let m = &inv_root * omega(n) * &inv_root;
    // i·M is Hermitian; eigenvalue -λ with vector x + iy gives M x = -λ y, M y = λ x
    let h = m.map(|v| Complex64::new(0.0, v));
    let heig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..dim).filter(|&i| heig.eigenvalues[i] < 0.0).collect();
    if order.len() != n {
        return None;
    }
    // largest λ = 1/ν first so modes come out with ascending ν
    order.sort_by(|&i, &j| heig.eigenvalues[i].total_cmp(&heig.eigenvalues[j]));
    let mut k = DMatrix::zeros(dim, dim);
    let mut nu = DVector::zeros(dim);
    for (mode, &i) in order.iter().enumerate() {
        let u = heig.eigenvectors.column(i);
        let x = u.map(|c| c.re) * 2f64.sqrt();
        let y = u.map(|c| c.im) * 2f64.sqrt();
        k.set_column(2 * mode, &x);
        k.set_column(2 * mode + 1, &y);
        let v = -1.0 / heig.eigenvalues[i];
        nu[2 * mode] = v;
        nu[2 * mode + 1] = v;
    }
    let s = &root * &k * DMatrix::from_diagonal(&nu.map(|v| 1.0 / v.sqrt()));
    let s_inv = DMatrix::from_diagonal(&nu.map(f64::sqrt)) * k.transpose() * &inv_root;
    Some((s, s_inv))
}

pub fn reduce_channel(c: &GaussianChannel) -> Result<ReductionResult> {
    let cp = c.cp_min_eigenvalue();
    if cp < -PSD_TOL {
        return Err(Error::NotCompletelyPositive(cp));
    }
    let n = c.n;
    let dim = 2 * n;
    let svd = passive_svd(&c.t);

    let mut squeeze = DVector::from_element(dim, 1.0);
    let mut mode_gain = vec![1.0; n];
    let mut erased = Vec::new();
    for k in 0..n {
        let (g1, g2) = (svd.gains[2 * k], svd.gains[2 * k + 1]);
        let gk = (g1 * g2).sqrt();
        if gk < ERASED_GAIN || g1.min(g2) < ERASED_GAIN {
            erased.push(k);
            mode_gain[k] = ERASED_GAIN;
            continue;
        }
        squeeze[2 * k] = (g2 / g1).sqrt();
        squeeze[2 * k + 1] = (g1 / g2).sqrt();
        mode_gain[k] = gk;
    }

    let amp = per_mode_stage(StageKind::PreAmplifiers, n, |k| {
        GaussianChannel::amplifier(1.0 / mode_gain[k].powi(2).min(1.0), 0.0, k, n)
    })?;
    let input = linear_stage(StageKind::PassiveInput, svd.b.clone(), DVector::zeros(dim));
    let output = linear_stage(StageKind::DisplaceAndPassiveOutput, svd.a.clone(), -(&svd.a * &c.d));
    let squeezers = linear_stage(StageKind::Squeezers, DMatrix::from_diagonal(&squeeze), DVector::zeros(dim));
    let losses = per_mode_stage(StageKind::PostLosses, n, |k| {
        GaussianChannel::thermal_loss(1.0 / mode_gain[k].powi(2).max(1.0), 0.0, k, n)
    })?;

    let inner =
        compose_sequence(n, [&amp.channel, &input.channel, c, &output.channel, &squeezers.channel, &losses.channel])?;
    let noise = (&inner.noise + inner.noise.transpose()) * 0.5;

    // passive diagonalization of the phase-insensitive part of the noise
    let w = omega(n);
    let insensitive = (&noise + w.transpose() * &noise * &w) * 0.5;
    let o = omega_pairs(&insensitive).map(|qv| pairs_to_matrix(&qv));
    let (passive_out, residual_error) = match &o {
        Some(o) => {
            let out = o.transpose() * &noise * o;
            let err = (&out - awgn_part(&out)).amax();
            (Some(out), err)
        }
        None => (None, f64::INFINITY),
    };
    let scale = noise.amax().max(1.0);
    let (conj_m, deconj_m, out_noise, active) = match (o, passive_out) {
        (Some(o), Some(out)) if residual_error <= 1e-12 * scale => (o.transpose(), o, out, false),
        (o, out) => match williamson(&noise) {
            Some((s, s_inv)) => {
                let out = &s_inv * &noise * s_inv.transpose();
                (s, s_inv, out, true)
            }
            None => {
                let o = o.unwrap_or_else(|| DMatrix::identity(dim, dim));
                let out = out.unwrap_or_else(|| noise.clone());
                (o.transpose(), o, out, false)
            }
        },
    };
    let ideal = awgn_part(&out_noise);
    let sigmas = (0..n)
        .map(|k| if erased.contains(&k) { ERASED_SIGMA } else { ideal[(2 * k, 2 * k)].max(0.0).sqrt() })
        .collect();

    let conj = linear_stage(StageKind::NoiseConjugation, conj_m, DVector::zeros(dim));
    let deconj = linear_stage(StageKind::NoiseDeconjugation, deconj_m, DVector::zeros(dim));
    Ok(ReductionResult {
        sigmas,
        pre: vec![conj, amp, input],
        post: vec![output, squeezers, losses, deconj],
        residual_error,
        degraded: !svd.passive || !erased.is_empty(),
        active_noise_conjugation: active,
        erased_modes: erased,
    })
}

/// Compose the stages around `c` and measure the max entrywise distance from
/// the reported AWGN product.
pub fn verify_reduction(c: &GaussianChannel, r: &ReductionResult) -> f64 {
    let stages = r.pre.iter().map(|s| &s.channel).chain(std::iter::once(c)).chain(r.post.iter().map(|s| &s.channel));
    match compose_sequence(c.n, stages) {
        Ok(total) => total.deviation_from_awgn(&r.sigmas),
        Err(_) => f64::INFINITY,
    }
}

/// Haar-random passive linear optics on `n` modes.
pub fn random_passive<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::<Complex64>::from_fn(n, n, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix column phases so the distribution is Haar
    let phases = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| {
        let d = r[(i, i)];
        if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        }
    }));
    realify_unitary(&(q * phases))
}

/// Random completely positive channel: `T = K1 Λ K2` with passive `K1`,
/// `K2` and positive diagonal `Λ` (per-mode gain times squeezing), noise
/// `R Rᵀ` plus the smallest ridge that makes the channel physical.
pub fn random_channel<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GaussianChannel {
    let dim = 2 * n;
    let mut lambda = DVector::zeros(dim);
    for k in 0..n {
        let gain: f64 = rng.random_range(0.2..2.0);
        let r: f64 = rng.random_range(-1.0..1.0);
        lambda[2 * k] = gain * r.exp();
        lambda[2 * k + 1] = gain * (-r).exp();
    }
    let t = random_passive(n, rng) * DMatrix::from_diagonal(&lambda) * random_passive(n, rng);
    let rmat = DMatrix::from_fn(dim, dim, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let w = omega(n);
    let b = (&w - &t * &w * t.transpose()) * 0.5;
    // spectral norm of the antisymmetric part bounds its Hermitian eigenvalues
    let ridge = b.clone().svd(false, false).singular_values.max() + 0.01;
    let noise = &rmat * rmat.transpose() + DMatrix::identity(dim, dim) * ridge;
    let d = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    GaussianChannel::new(t, noise, d).expect("ridge guarantees complete positivity")
}
