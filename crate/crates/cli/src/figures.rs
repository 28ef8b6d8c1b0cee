//! CSV emitters for the figure data sets. Nothing is plotted here.

use std::path::Path;

use clap::ValueEnum;
use rayon::prelude::*;
use serde_json::{json, Value};

use gkpec::analysis::{capacity_lower_bound, contour_grid, db_to_r, fidelity_report, threshold_diagonal};
use gkpec::concat::asymptotic_recursion;
use gkpec::memory::{memory_sigmas, partition_by_threshold, MemoryChannelSpec};
use gkpec::optimize::{
    optimize_full, optimize_gains_global, optimize_gains_greedy, permutation_index, permutations, sample_generator,
    OptimizeRequest, OptimizerSettings, SampleKind,
};
use gkpec::two_mode::CodeFamily;

use crate::{join, sig9, write_csv, AnyResult, Ctx};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig3,
    Fig4,
    Fig5,
    Fig7,
    Fig8,
}

pub struct Options {
    pub samples: usize,
    pub res: usize,
    pub settings: OptimizerSettings,
}

const CODES: [CodeFamily; 2] = [CodeFamily::Tms, CodeFamily::Sr];

impl Figure {
    pub fn all() -> Vec<Figure> {
        vec![Figure::Fig3, Figure::Fig4, Figure::Fig5, Figure::Fig7, Figure::Fig8]
    }

    pub fn emit(self, dir: &Path, opts: &Options, ctx: &Ctx) -> AnyResult<Vec<Value>> {
        match self {
            Figure::Fig3 => contours(dir, opts),
            Figure::Fig4 => scaling(dir, opts, ctx.seed),
            Figure::Fig5 => permutation_averages(dir, opts, ctx.seed),
            Figure::Fig7 => memory_orders(dir, opts),
            Figure::Fig8 => fidelity_grid(dir, opts),
        }
    }
}

fn entry(file: &str, figure: &str, columns: &[&str], axes: &str) -> Value {
    json!({ "file": file, "figure": figure, "columns": columns, "axes": axes })
}

fn contours(dir: &Path, opts: &Options) -> AnyResult<Vec<Value>> {
    let header = ["sigma1", "sigma2", "G", "sigma_L", "ratio"];
    let mut out = Vec::new();
    for code in CODES {
        let grid = contour_grid(code, 0.05, 0.6, opts.res)?;
        let rows: Vec<Vec<String>> =
            grid.iter().map(|p| [p.sigma1, p.sigma2, p.gain, p.sigma_l, p.ratio].map(sig9).to_vec()).collect();
        let file = format!("fig3_{code}.csv");
        write_csv(&dir.join(&file), &header, &rows)?;
        out.push(entry(&file, "fig3", &header, "x: sigma1, y: sigma2, value: sigma_L* / min(sigma1, sigma2)"));
    }
    Ok(out)
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn scaling(dir: &Path, opts: &Options, seed: u64) -> AnyResult<Vec<Value>> {
    let header =
        ["kind", "code", "n", "sample", "sigma_bar", "sigma_L_star", "sigma_L_greedy", "bound_std", "asymptotic"];
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let configs: Vec<(SampleKind, &str, usize)> = [
        (SampleKind::TwoMode, "two_mode", 2),
        (SampleKind::Realistic, "realistic", 2),
        (SampleKind::Realistic, "realistic", 3),
        (SampleKind::Realistic, "realistic", 4),
        (SampleKind::Asymptotic, "asymptotic", 2),
        (SampleKind::Asymptotic, "asymptotic", 3),
        (SampleKind::Asymptotic, "asymptotic", 4),
        (SampleKind::Mixed, "mixed", 3),
    ]
    .to_vec();
    for (k, (kind, name, n)) in configs.into_iter().enumerate() {
        let samples = sample_generator(kind, n, opts.samples, seed.wrapping_add(k as u64));
        for code in CODES {
            let perm: Vec<usize> = (1..=n).rev().collect();
            let results: Vec<gkpec::error::Result<Vec<f64>>> = samples
                .par_iter()
                .map(|s| {
                    let global = optimize_gains_global(s, code, &perm, &opts.settings)?;
                    let greedy = optimize_gains_greedy(s, code, &perm, &opts.settings)?;
                    let bound = capacity_lower_bound(s)?.exact.sqrt();
                    let bar = s.iter().map(|v| v.ln()).sum::<f64>() / n as f64;
                    let asym = asymptotic_recursion(s).unwrap_or(f64::NAN);
                    Ok(vec![bar.exp(), global.sigma_l, greedy.sigma_l, bound, asym])
                })
                .collect();
            let mut pts = Vec::new();
            for (i, r) in results.into_iter().enumerate() {
                let v = r?;
                pts.push((v[0].ln(), v[1].ln()));
                let mut row = vec![name.to_string(), code.to_string(), n.to_string(), i.to_string()];
                row.extend(v.into_iter().map(sig9));
                rows.push(row);
            }
            slopes.push(json!({ "kind": name, "code": code, "n": n, "log_log_slope": fit_slope(&pts) }));
        }
    }
    write_csv(&dir.join("fig4.csv"), &header, &rows)?;
    let mut e = entry("fig4.csv", "fig4", &header, "x: geometric mean sigma_bar, y: sigma_L (log-log)");
    e["fits"] = json!(slopes);
    Ok(vec![e])
}

fn permutation_averages(dir: &Path, opts: &Options, seed: u64) -> AnyResult<Vec<Value>> {
    let header = ["code", "n", "index", "permutation", "mean_ratio"];
    let mut rows = Vec::new();
    for n in [3, 4] {
        let samples = sample_generator(SampleKind::Realistic, n, opts.samples, seed.wrapping_add(100 + n as u64));
        for code in CODES {
            let perms = permutations(n);
            let mut sums = vec![0.0; perms.len()];
            for s in &samples {
                let mut req = OptimizeRequest::new(s.clone(), code);
                req.settings = opts.settings.clone();
                let r = optimize_full(&req)?;
                for row in &r.table {
                    sums[row.index - 1] += row.ratio / samples.len() as f64;
                }
            }
            for (p, m) in perms.iter().zip(sums) {
                rows.push(vec![code.to_string(), n.to_string(), permutation_index(p).to_string(), join(p), sig9(m)]);
            }
        }
    }
    write_csv(&dir.join("fig5.csv"), &header, &rows)?;
    Ok(vec![entry("fig5.csv", "fig5", &header, "x: permutation index, y: average sigma_L*(perm) / min over perms")])
}

fn memory_orders(dir: &Path, opts: &Options) -> AnyResult<Vec<Value>> {
    let header = ["code", "index", "permutation", "gains", "sigma_L", "ratio"];
    let modes = memory_sigmas(&MemoryChannelSpec::new(6, 0.9, 0.8)?);
    let mut rows = Vec::new();
    for code in CODES {
        let (kept, _) = partition_by_threshold(&modes.sigmas, threshold_diagonal(code, 1e-3)?);
        let mut req = OptimizeRequest::new(kept, code);
        req.settings = opts.settings.clone();
        let r = optimize_full(&req)?;
        for row in &r.table {
            rows.push(vec![
                code.to_string(),
                row.index.to_string(),
                join(&row.permutation),
                row.gains.iter().map(|g| sig9(*g)).collect::<Vec<_>>().join(" "),
                sig9(row.sigma_l),
                sig9(row.ratio),
            ]);
        }
    }
    write_csv(&dir.join("fig7.csv"), &header, &rows)?;
    Ok(vec![entry("fig7.csv", "fig7", &header, "x: permutation index, y: sigma_L*(perm) / min over perms")])
}

fn fidelity_grid(dir: &Path, opts: &Options) -> AnyResult<Vec<Value>> {
    let header = ["sigma1", "sigma2", "F_no_qec", "F_qec", "F_gaussian", "improved"];
    let r = db_to_r(20.0);
    let axis: Vec<f64> = (0..opts.res).map(|i| 0.05 + 0.25 * i as f64 / (opts.res - 1).max(1) as f64).collect();
    let pts: Vec<(f64, f64)> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect();
    let reports: Vec<_> = pts
        .par_iter()
        .map(|&(a, b)| fidelity_report(CodeFamily::Tms, r, a, b, &opts.settings).map(|f| (a, b, f)))
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(a, b, f)| {
            let mut row = [*a, *b, f.no_qec, f.with_qec, f.gaussian_approx].map(sig9).to_vec();
            row.push((f.with_qec > f.no_qec).to_string());
            row
        })
        .collect();
    write_csv(&dir.join("fig8.csv"), &header, &rows)?;
    Ok(vec![entry("fig8.csv", "fig8", &header, "x: sigma1, y: sigma2, value: fidelity at 20 dB squeezing")])
}
