//! Observables derived from coherence curves: decay fits, Ramsey spectra,
//! field sweeps, clock-transition hyperbolae and anticrossing scans.

mod fit;
mod hyperbola;
mod spectrum;
mod sweep;

pub use fit::{fit_decay, DecayFit, FitMode};
pub use hyperbola::{fit_hyperbolae, strong_coupling_minima, HyperbolaModel};
pub use spectrum::{peak_frequencies, ramsey_spectrum, Spectrum, Taper};
pub use sweep::{
    field_sweep, gslac_scan, FieldSweepResult, GslacPoint, GslacScan, SweepSettings, T2Outcome,
};

use crate::spin_model::SpinSystem;

/// Root-sum-square hyperfine coupling of the bath, plus the per-spin values
/// sorted descending. A_iz = sqrt(A_xz^2 + A_yz^2 + A_zz^2).
pub fn bath_coupling_descriptor(system: &SpinSystem) -> (f64, Vec<f64>) {
    let mut per_spin: Vec<f64> = system.bath.iter().map(|s| s.a_iz_mhz()).collect();
    let rss = per_spin.iter().map(|a| a * a).sum::<f64>().sqrt();
    per_spin.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (rss, per_spin)
}

/// Least-squares line through (log10 x, log10 y): (slope, intercept, r2).
pub fn log_log_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
