//! Monte Carlo oracle: samples the physical noise, decodes with the inverse
//! encoder, measures the ancilla modulo √(2π) and applies the same linear
//! estimator as the analytic recursion.
//!
//! Layers are simulated as a sequence of two-mode blocks. The logical mode
//! produced by layer `k` plays the ancilla of layer `k + 1`, and its residual
//! displacement enters that block exactly where a channel displacement would.
//! Measuring block by block is equivalent to deferring every measurement to
//! the end because all encoders are Gaussian unitaries acting before the
//! noise and every decoder acts after it.
//!
//! Samples are split into fixed chunks, each drawn from its own ChaCha stream
//! keyed by `(seed, chunk)`, so results do not depend on the thread count.

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::concat::CodePlan;
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture1D;
use crate::two_mode::{sr_symplectic, tms_symplectic, CodeFamily, SrLayerParams, TmsLayerParams};

pub const MIN_SAMPLES: u64 = 10_000;
const GROUPS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; bins], underflow: 0, overflow: 0 }
    }

    fn add(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
        } else if x >= self.hi {
            self.overflow += 1;
        } else {
            let bins = self.counts.len();
            let k = ((x - self.lo) / (self.hi - self.lo) * bins as f64) as usize;
            self.counts[k.min(bins - 1)] += 1;
        }
    }

    fn merge(&mut self, o: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
        self.underflow += o.underflow;
        self.overflow += o.overflow;
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub plan: CodePlan,
    /// Range and bin count of the residual histograms; `None` skips them.
    pub histogram: Option<(f64, f64, usize)>,
}

impl McConfig {
    pub fn new(plan: CodePlan, samples: u64, seed: u64) -> Self {
        Self { samples, seed, plan, histogram: None }
    }

    fn check(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::Parameter(format!("need at least {MIN_SAMPLES} samples, got {}", self.samples)));
        }
        self.plan.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResidual {
    pub samples: u64,
    pub mean_q: f64,
    pub mean_p: f64,
    /// Second moments about zero.
    pub var_q: f64,
    pub var_p: f64,
    pub sigma_l: f64,
    pub se_var_q: f64,
    pub se_var_p: f64,
    pub se_sigma_l: f64,
    pub histogram_q: Option<Histogram>,
    pub histogram_p: Option<Histogram>,
    /// Second moments restricted to the histogram range; present with the
    /// histograms.
    pub windowed: Option<WindowedMoments>,
}

/// `E[x² 1{lo <= x < hi}]` per axis. Unlike the full second moment it is
/// bounded, so its jackknife error stays honest when rare far peaks dominate
/// the variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedMoments {
    pub lo: f64,
    pub hi: f64,
    pub second_q: f64,
    pub second_p: f64,
    pub se_q: f64,
    pub se_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McFidelity {
    pub fidelity: f64,
    pub standard_error: f64,
}

struct Block {
    decode: Matrix4<f64>,
    gains: (f64, f64),
    sigma: f64,
}

/// Per-layer decoders and estimator gains; the component STD of the incoming
/// logical noise fixes the estimator exactly as in the analytic update.
fn blocks(plan: &CodePlan) -> Result<(f64, Vec<Block>)> {
    let chain = plan.layer_chain();
    let mut s = chain[0];
    let mut out = Vec::with_capacity(plan.gains.len());
    for (&sigma, &g) in chain[1..].iter().zip(&plan.gains) {
        let (decode, gains, next) = match plan.family {
            CodeFamily::Tms => {
                let p = TmsLayerParams::new(sigma, s, g)?;
                (tms_symplectic(g)?.inverse_matrix(), p.correction_gains(), p.sigma_peak())
            }
            CodeFamily::Sr => {
                let p = SrLayerParams::new(sigma, s, g)?;
                (sr_symplectic(p.gain, p.kappa())?.inverse_matrix(), p.correction_gains(), p.sigma_peak())
            }
        };
        out.push(Block { decode: decode.fixed_view::<4, 4>(0, 0).into_owned(), gains, sigma });
        s = next;
    }
    Ok((chain[0], out))
}

#[derive(Clone)]
struct Moments {
    n: u64,
    sum_q: f64,
    sum_p: f64,
    sq_q: f64,
    sq_p: f64,
    win_q: f64,
    win_p: f64,
    fid: f64,
}

impl Moments {
    fn zero() -> Self {
        Self { n: 0, sum_q: 0.0, sum_p: 0.0, sq_q: 0.0, sq_p: 0.0, win_q: 0.0, win_p: 0.0, fid: 0.0 }
    }

    fn add(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum_q += o.sum_q;
        self.sum_p += o.sum_p;
        self.sq_q += o.sq_q;
        self.sq_p += o.sq_p;
        self.win_q += o.win_q;
        self.win_p += o.win_p;
        self.fid += o.fid;
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            sum_q: self.sum_q - o.sum_q,
            sum_p: self.sum_p - o.sum_p,
            sq_q: self.sq_q - o.sq_q,
            sq_p: self.sq_p - o.sq_p,
            win_q: self.win_q - o.win_q,
            win_p: self.win_p - o.win_p,
            fid: self.fid - o.fid,
        }
    }
}

/// Sum in a balanced tree so rounding does not grow with the chunk count.
fn pairwise(parts: &[Moments]) -> Moments {
    match parts.len() {
        0 => Moments::zero(),
        1 => parts[0].clone(),
        n => {
            let mut a = pairwise(&parts[..n / 2]);
            a.add(&pairwise(&parts[n / 2..]));
            a
        }
    }
}

/// Delete-one-group jackknife error of a statistic of the pooled moments.
fn jackknife(groups: &[Moments], total: &Moments, stat: impl Fn(&Moments) -> f64) -> f64 {
    let g = groups.len() as f64;
    let loo: Vec<f64> = groups.iter().map(|m| stat(&total.minus(m))).collect();
    let mean = loo.iter().sum::<f64>() / g;
    ((g - 1.0) / g * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

type Histograms = Option<(Histogram, Histogram)>;

fn simulate(cfg: &McConfig, squeeze_r: f64) -> Result<(Vec<Moments>, Histograms)> {
    cfg.check()?;
    let (bottom, blocks) = blocks(&cfg.plan)?;
    let chunk = cfg.samples.div_ceil(GROUPS);
    let groups = cfg.samples.div_ceil(chunk);
    let (tq, tp) = ((2.0 * squeeze_r).exp(), (-2.0 * squeeze_r).exp());
    let parts: Vec<(Moments, Histograms)> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(g);
            let count = chunk.min(cfg.samples - g * chunk);
            let mut m = Moments::zero();
            let mut hist =
                cfg.histogram.map(|(lo, hi, bins)| (Histogram::new(lo, hi, bins), Histogram::new(lo, hi, bins)));
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            for _ in 0..count {
                let (mut xq, mut xp) = (bottom * normal(), bottom * normal());
                for b in &blocks {
                    let xi = Vector4::new(b.sigma * normal(), b.sigma * normal(), xq, xp);
                    let z = b.decode * xi;
                    xq = crate::two_mode::corrected(z[0], z[2], b.gains.0);
                    xp = crate::two_mode::corrected(z[1], z[3], b.gains.1);
                }
                m.n += 1;
                m.sum_q += xq;
                m.sum_p += xp;
                m.sq_q += xq * xq;
                m.sq_p += xp * xp;
                m.fid += (-0.5 * (xq * xq * tq + xp * xp * tp)).exp();
                if let Some((hq, hp)) = hist.as_mut() {
                    let inside = |x: f64| (hq.lo..hq.hi).contains(&x);
                    m.win_q += if inside(xq) { xq * xq } else { 0.0 };
                    m.win_p += if inside(xp) { xp * xp } else { 0.0 };
                    hq.add(xq);
                    hp.add(xp);
                }
            }
            (m, hist)
        })
        .collect();
    let mut hist: Histograms = None;
    let mut moments = Vec::with_capacity(parts.len());
    for (m, h) in parts {
        moments.push(m);
        if let Some((hq, hp)) = h {
            match hist.as_mut() {
                Some((aq, ap)) => {
                    aq.merge(&hq);
                    ap.merge(&hp);
                }
                None => hist = Some((hq, hp)),
            }
        }
    }
    Ok((moments, hist))
}

pub fn mc_residual(cfg: &McConfig) -> Result<McResidual> {
    let (groups, hists) = simulate(cfg, 0.0)?;
    let (histogram_q, histogram_p) = hists.map_or((None, None), |(q, p)| (Some(q), Some(p)));
    let t = pairwise(&groups);
    let n = t.n as f64;
    let vq = |m: &Moments| m.sq_q / m.n as f64;
    let vp = |m: &Moments| m.sq_p / m.n as f64;
    let sl = |m: &Moments| (0.5 * (m.sq_q + m.sq_p) / m.n as f64).sqrt();
    let wq = |m: &Moments| m.win_q / m.n as f64;
    let wp = |m: &Moments| m.win_p / m.n as f64;
    let windowed = histogram_q.as_ref().map(|h| WindowedMoments {
        lo: h.lo,
        hi: h.hi,
        second_q: wq(&t),
        second_p: wp(&t),
        se_q: jackknife(&groups, &t, wq),
        se_p: jackknife(&groups, &t, wp),
    });
    Ok(McResidual {
        samples: t.n,
        mean_q: t.sum_q / n,
        mean_p: t.sum_p / n,
        var_q: vq(&t),
        var_p: vp(&t),
        sigma_l: sl(&t),
        se_var_q: jackknife(&groups, &t, vq),
        se_var_p: jackknife(&groups, &t, vp),
        se_sigma_l: jackknife(&groups, &t, sl),
        histogram_q,
        histogram_p,
        windowed,
    })
}

/// Square root of the average squared overlap of the squeezed vacuum with its
/// displaced copy.
pub fn mc_fidelity(cfg: &McConfig, r: f64) -> Result<McFidelity> {
    let (groups, _) = simulate(cfg, r)?;
    let t = pairwise(&groups);
    let f = |m: &Moments| (m.fid / m.n as f64).sqrt();
    Ok(McFidelity { fidelity: f(&t), standard_error: jackknife(&groups, &t, f) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of a histogram against a mixture CDF. Under- and
/// overflow count as cells; neighbouring cells are merged until each expects
/// at least five hits.
pub fn chi_square_test(h: &Histogram, m: &GaussianMixture1D) -> ChiSquareReport {
    let total = h.total() as f64;
    let cdf = |x: f64| m.cdf(x);
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(h.counts.len() + 2);
    cells.push((h.underflow as f64, total * cdf(h.lo)));
    for (k, &c) in h.counts.iter().enumerate() {
        cells.push((c as f64, total * (cdf(h.edge(k + 1)) - cdf(h.edge(k)))));
    }
    cells.push((h.overflow as f64, total * (1.0 - cdf(h.hi))));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cells {
        acc = (acc.0 + o, acc.1 + e);
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = merged.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let statistic: f64 = merged.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = merged.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| 1.0 - d.cdf(statistic)).unwrap_or(f64::NAN);
    ChiSquareReport { statistic, dof, p_value }
}
