//! Clock-transition hyperbola extraction from field-resolved spectra.
//!
//! Ramsey peak frequencies versus field follow
//! `omega(B) = omega0 + sqrt(gyro^2 (B - B_min)^2 + E^2)`; strongly coupled
//! nuclei split the spectrum into branches whose minima sit at fields set
//! by the hyperfine couplings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::fit::levenberg_marquardt;
use super::spectrum::{peak_frequencies, Spectrum};

pub const PEAK_THRESHOLD_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolaModel {
    pub omega0_mhz: f64,
    pub e_mhz: f64,
    pub gyro_mhz_per_mt: f64,
    pub b_min_mt: f64,
    /// Hyperfine coupling implied by the branch minimum, 2 gyro |B_min|.
    pub inferred_a_iz_mhz: f64,
    pub points: usize,
    pub residual_norm: f64,
}

fn branch_freq(p: &[f64], b: f64) -> f64 {
    let (omega0, gyro, e, bm) = (p[0], p[1], p[2], p[3]);
    omega0 + (gyro * gyro * (b - bm) * (b - bm) + e * e).sqrt()
}

fn fit_branch(points: &[(f64, f64)], init: &[f64; 4]) -> Option<([f64; 4], f64)> {
    let eval = |p: &[f64]| -> Option<(Vec<f64>, Vec<f64>)> {
        if p[1] <= 0.0 || p[2] < 0.0 {
            return None;
        }
        let mut r = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len() * 4);
        for &(b, w) in points {
            let db = b - p[3];
            let s = (p[1] * p[1] * db * db + p[2] * p[2]).sqrt().max(1e-12);
            r.push(branch_freq(p, b) - w);
            jac.push(1.0);
            jac.push(p[1] * db * db / s);
            jac.push(p[2] / s);
            jac.push(-p[1] * p[1] * db / s);
        }
        Some((r, jac))
    };
    let fit = levenberg_marquardt(eval, init, 300)?;
    Some(([fit.params[0], fit.params[1], fit.params[2], fit.params[3]], fit.sse))
}

/// Local minima of the lower peak envelope against field, deepest first.
fn minimum_candidates(fields: &[f64], lowest_peak: &[Option<f64>]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = fields
        .iter()
        .zip(lowest_peak)
        .filter_map(|(&b, w)| w.map(|w| (b, w)))
        .collect();
    let n = pts.len();
    let mut out = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || pts[i - 1].1 >= pts[i].1;
        let right_ok = i == n - 1 || pts[i + 1].1 >= pts[i].1;
        // interior minima preferred; keep edges only as fallback
        if left_ok && right_ok && i > 0 && i < n - 1 {
            out.push(pts[i]);
        }
    }
    if out.is_empty() && !pts.is_empty() {
        let best = pts
            .iter()
            .cloned()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        out.push(best);
    }
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    out
}

/// Extracts per-field peaks, clusters them into `branch_count` branches,
/// and fits each branch to the shifted hyperbola. Returns branches sorted
/// by their minimum field.
pub fn fit_hyperbolae(
    fields_mt: &[f64],
    spectra: &[Spectrum],
    branch_count: usize,
    gyro_hint_mhz_per_mt: f64,
) -> Result<Vec<HyperbolaModel>> {
    if fields_mt.len() != spectra.len() {
        return Err(Error::Validation("one spectrum per field required".into()));
    }
    if fields_mt.len() < 5 {
        return Err(Error::Validation("hyperbola fit needs spectra for at least 5 fields".into()));
    }
    if branch_count == 0 {
        return Err(Error::Validation("branch count must be at least 1".into()));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut lowest_peak: Vec<Option<f64>> = Vec::new();
    for (&b, spec) in fields_mt.iter().zip(spectra) {
        let peaks = peak_frequencies(spec, PEAK_THRESHOLD_FACTOR);
        lowest_peak
            .push(peaks.iter().map(|p| p.0).min_by(|x, y| x.partial_cmp(y).unwrap()));
        for (f, _) in peaks {
            points.push((b, f));
        }
    }
    if points.len() < 4 * branch_count {
        return Err(Error::BranchResolution(format!(
            "{} peaks resolved, need at least {}",
            points.len(),
            4 * branch_count
        )));
    }

    // initial branch minima from the lower envelope
    let candidates = minimum_candidates(fields_mt, &lowest_peak);
    let mut seeds: Vec<(f64, f64)> = candidates.iter().take(branch_count).cloned().collect();
    // mirror seeds around zero field when the envelope does not resolve
    // every branch (minima of strong-coupling branches come in +- pairs)
    while seeds.len() < branch_count {
        let (b, w) = seeds[seeds.len() % candidates.len().max(1)];
        seeds.push((-b, w));
        seeds.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
        if seeds.len() == 1 {
            return Err(Error::BranchResolution(format!(
                "only one branch minimum resolvable, {branch_count} requested"
            )));
        }
    }
    seeds.truncate(branch_count);

    let gamma0 = gyro_hint_mhz_per_mt.abs();
    let span = fields_mt.last().unwrap() - fields_mt.first().unwrap();
    let mut branches: Vec<[f64; 4]> = seeds
        .iter()
        .map(|&(bm, wmin)| {
            // split omega0 vs E using the farthest field's envelope value
            let (bf, wf) = fields_mt
                .iter()
                .zip(&lowest_peak)
                .filter_map(|(&b, w)| w.map(|w| (b, w)))
                .max_by(|x, y| {
                    (x.0 - bm).abs().partial_cmp(&(y.0 - bm).abs()).unwrap()
                })
                .unwrap();
            let s = (wf - wmin).max(1e-6);
            let db = (bf - bm).abs().max(span / 10.0);
            let e0 = ((gamma0 * gamma0 * db * db - s * s) / (2.0 * s)).max(1e-4);
            [wmin - e0, gamma0, e0, bm]
        })
        .collect();

    let mut assignment = vec![usize::MAX; points.len()];
    for _round in 0..30 {
        let mut changed = false;
        for (i, &(b, w)) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_err = f64::INFINITY;
            for (k, p) in branches.iter().enumerate() {
                let err = (branch_freq(p, b) - w).abs();
                if err < best_err {
                    best_err = err;
                    best = k;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut new_branches = branches.clone();
        for (k, nb) in new_branches.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == k)
                .map(|(p, _)| *p)
                .collect();
            if members.len() < 4 {
                return Err(Error::BranchResolution(format!(
                    "branch {k} captured only {} peaks",
                    members.len()
                )));
            }
            if let Some((params, _)) = fit_branch(&members, nb) {
                *nb = params;
            }
        }
        branches = new_branches;
        if !changed {
            break;
        }
    }

    let mut out: Vec<HyperbolaModel> = branches
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let members: Vec<(f64, f64)> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == k)
                .map(|(q, _)| *q)
                .collect();
            let sse: f64 =
                members.iter().map(|&(b, w)| (branch_freq(p, b) - w).powi(2)).sum();
            HyperbolaModel {
                omega0_mhz: p[0],
                gyro_mhz_per_mt: p[1],
                e_mhz: p[2],
                b_min_mt: p[3],
                inferred_a_iz_mhz: 2.0 * p[1] * p[3].abs(),
                points: members.len(),
                residual_norm: sse.sqrt(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.b_min_mt.partial_cmp(&b.b_min_mt).unwrap());
    Ok(out)
}

/// All hyperbola minima implied by a set of strong couplings:
/// `B = sum(+-A_iz) / (2 gyro)` over every sign combination, grouped when
/// the coupling sums differ by less than `resolution_mhz`. Returns the
/// group centers in mT, sorted ascending.
pub fn strong_coupling_minima(
    a_iz_mhz: &[f64],
    gyro_mhz_per_mt: f64,
    resolution_mhz: f64,
) -> Vec<f64> {
    let n = a_iz_mhz.len();
    let mut sums: Vec<f64> = (0..(1usize << n))
        .map(|mask| {
            a_iz_mhz
                .iter()
                .enumerate()
                .map(|(k, a)| if mask & (1 << k) != 0 { *a } else { -*a })
                .sum()
        })
        .collect();
    sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for s in sums {
        match groups.last_mut() {
            Some(g) if (s - *g.last().unwrap()).abs() < resolution_mhz => g.push(s),
            _ => groups.push(vec![s]),
        }
    }
    groups
        .into_iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64 / (2.0 * gyro_mhz_per_mt))
        .collect()
}
