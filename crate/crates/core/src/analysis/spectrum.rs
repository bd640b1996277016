//! Ramsey fringe spectra via discrete Fourier transform.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cce::CoherenceCurve;
use crate::error::{Error, Result};

pub const ZERO_PAD_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    None,
    Hann,
}

/// One-sided magnitude spectrum, frequency axis in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freq_mhz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

/// Magnitude spectrum of Re L(t) after demodulation at `reference_mhz`.
///
/// The coherence is multiplied by exp(+i 2 pi f_ref t) before the real part
/// is taken, which places the fringes relative to the chosen rotating
/// frame. Tapered and zero-padded fourfold.
pub fn ramsey_spectrum(
    curve: &CoherenceCurve,
    taper: Taper,
    reference_mhz: f64,
) -> Result<Spectrum> {
    let times = &curve.time_us;
    let n = times.len();
    if n < 4 {
        return Err(Error::Validation("spectrum needs at least 4 samples".into()));
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1e-12) {
            return Err(Error::Validation("spectrum requires a uniform time grid".into()));
        }
    }
    let mut samples: Vec<f64> = curve
        .normalized
        .iter()
        .zip(times)
        .map(|(v, &t)| (v * C64::from_polar(1.0, 2.0 * PI * reference_mhz * t)).re)
        .collect();
    match taper {
        Taper::None => {}
        Taper::Hann => {
            for (k, s) in samples.iter_mut().enumerate() {
                *s *= 0.5 * (1.0 - (2.0 * PI * k as f64 / (n as f64 - 1.0)).cos());
            }
        }
    }
    let padded = n * ZERO_PAD_FACTOR;
    let mut buf: Vec<C64> = samples.iter().map(|&s| C64::new(s, 0.0)).collect();
    buf.resize(padded, C64::new(0.0, 0.0));
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(padded);
    fft.process(&mut buf);
    let half = padded / 2;
    let df = 1.0 / (padded as f64 * dt);
    let freq_mhz: Vec<f64> = (0..=half).map(|j| j as f64 * df).collect();
    let magnitude: Vec<f64> = buf[..=half].iter().map(|v| v.norm()).collect();
    Ok(Spectrum { freq_mhz, magnitude })
}

/// Spectral peaks above `threshold_factor` times the median magnitude,
/// refined by three-point parabolic interpolation. Sorted by frequency.
///
/// A candidate must also be the maximum within one taper main-lobe width
/// and exceed 2% of the global maximum; both guards reject window-leakage
/// sidelobes that would otherwise clear a median-based threshold on clean
/// spectra.
pub fn peak_frequencies(spectrum: &Spectrum, threshold_factor: f64) -> Vec<(f64, f64)> {
    let m = &spectrum.magnitude;
    let n = m.len();
    if n < 3 {
        return Vec::new();
    }
    let mut sorted = m.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[n / 2];
    let global_max = sorted[n - 1];
    let threshold = (threshold_factor * median).max(0.02 * global_max);
    let window = 4 * ZERO_PAD_FACTOR;
    let df = spectrum.freq_mhz[1] - spectrum.freq_mhz[0];
    let mut peaks = Vec::new();
    for j in 1..n - 1 {
        if m[j] <= threshold || m[j] < m[j - 1] || m[j] < m[j + 1] {
            continue;
        }
        let lo = j.saturating_sub(window);
        let hi = (j + window).min(n - 1);
        if (lo..=hi).any(|k| m[k] > m[j]) {
            continue;
        }
        let denom = m[j - 1] - 2.0 * m[j] + m[j + 1];
        let delta = if denom.abs() > 1e-300 {
            0.5 * (m[j - 1] - m[j + 1]) / denom
        } else {
            0.0
        };
        let freq = spectrum.freq_mhz[j] + delta.clamp(-0.5, 0.5) * df;
        peaks.push((freq, m[j]));
    }
    peaks
}
