//! Stretched-exponential decay fitting.

use serde::{Deserialize, Serialize};

use crate::cce::CoherenceCurve;
use crate::error::{Error, Result};

pub const EXPONENT_BOUNDS: (f64, f64) = (0.5, 4.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Fit |L(t)| directly.
    Raw,
    /// Fit the interpolated local-maxima envelope of |L(t)| (for
    /// oscillatory Ramsey fringes).
    Envelope,
}

/// Result of fitting |L(t)| to a * exp(-(t/T)^n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub t_decay_us: f64,
    pub exponent: f64,
    pub amplitude: f64,
    pub residual_norm: f64,
    pub t_decay_sigma_us: f64,
    pub exponent_sigma: f64,
    pub mode: FitMode,
}

/// Dense 3x3 (or general small) linear solve by Gaussian elimination with
/// partial pivoting; used by the damped least-squares steps.
fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in (r + 1)..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

pub(crate) struct LmFit {
    pub params: Vec<f64>,
    pub sse: f64,
}

/// Damped least squares over a residual/Jacobian closure. `eval` may reject
/// a parameter vector by returning None (treated as an uphill step).
pub(crate) fn levenberg_marquardt<F>(mut eval: F, p0: &[f64], max_iter: usize) -> Option<LmFit>
where
    F: FnMut(&[f64]) -> Option<(Vec<f64>, Vec<f64>)>,
{
    let np = p0.len();
    let mut params = p0.to_vec();
    let (mut residuals, mut jac) = eval(&params)?;
    let mut sse: f64 = residuals.iter().map(|r| r * r).sum();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let n = residuals.len();
        // normal equations (J^T J + lambda diag) delta = -J^T r
        let mut jtj = vec![vec![0.0; np]; np];
        let mut jtr = vec![0.0; np];
        for i in 0..n {
            for p in 0..np {
                let jip = jac[i * np + p];
                jtr[p] -= jip * residuals[i];
                for q in 0..np {
                    jtj[p][q] += jip * jac[i * np + q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for p in 0..np {
                a[p][p] += lambda * jtj[p][p].max(1e-12);
            }
            let mut rhs = jtr.clone();
            let Some(delta) = solve_small(&mut a, &mut rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(&delta).map(|(p, d)| p + d).collect();
            if let Some((r_new, j_new)) = eval(&trial) {
                let sse_new: f64 = r_new.iter().map(|r| r * r).sum();
                if sse_new < sse {
                    let rel = (sse - sse_new) / sse.max(1e-300);
                    params = trial;
                    residuals = r_new;
                    jac = j_new;
                    sse = sse_new;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-12 {
                        return Some(LmFit { params, sse });
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                return Some(LmFit { params, sse });
            }
        }
        if !improved {
            break;
        }
    }
    Some(LmFit { params, sse })
}

/// Monotone cubic (Fritsch-Carlson) interpolation through (xs, ys),
/// evaluated at `at`. xs strictly increasing.
fn pchip_eval(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2);
    let mut h = vec![0.0; n - 1];
    let mut delta = vec![0.0; n - 1];
    for i in 0..n - 1 {
        h[i] = xs[i + 1] - xs[i];
        delta[i] = (ys[i + 1] - ys[i]) / h[i];
    }
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    at.iter()
        .map(|&x| {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[n - 1] {
                return ys[n - 1];
            }
            let mut i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                Ok(k) => return ys[k],
                Err(k) => k - 1,
            };
            if i >= n - 1 {
                i = n - 2;
            }
            let t = (x - xs[i]) / h[i];
            let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
            let h10 = t * (1.0 - t) * (1.0 - t);
            let h01 = t * t * (3.0 - 2.0 * t);
            let h11 = t * t * (t - 1.0);
            h00 * ys[i] + h10 * h[i] * d[i] + h01 * ys[i + 1] + h11 * h[i] * d[i + 1]
        })
        .collect()
}

/// Local-maxima envelope of |L|, interpolated back onto the full grid.
fn envelope(times: &[f64], mag: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = mag.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if mag[0] >= mag[1] {
        xs.push(times[0]);
        ys.push(mag[0]);
    }
    for i in 1..n - 1 {
        if mag[i] >= mag[i - 1] && mag[i] >= mag[i + 1] {
            xs.push(times[i]);
            ys.push(mag[i]);
        }
    }
    if mag[n - 1] >= mag[n - 2] {
        xs.push(times[n - 1]);
        ys.push(mag[n - 1]);
    }
    if xs.len() < 4 {
        return None;
    }
    let env = pchip_eval(&xs, &ys, times);
    Some((times.to_vec(), env))
}

fn stretched_exp_eval<'a>(
    times: &'a [f64],
    values: &'a [f64],
) -> impl FnMut(&[f64]) -> Option<(Vec<f64>, Vec<f64>)> + 'a {
    // parameters: (a, ln T, n)
    move |p: &[f64]| {
        let (a, ln_t, n) = (p[0], p[1], p[2]);
        if !(EXPONENT_BOUNDS.0..=EXPONENT_BOUNDS.1).contains(&n) || !ln_t.is_finite() {
            return None;
        }
        if a <= 0.0 || a > 2.0 {
            return None;
        }
        let t_dec = ln_t.exp();
        let mut r = Vec::with_capacity(times.len());
        let mut jac = Vec::with_capacity(times.len() * 3);
        for (&t, &y) in times.iter().zip(values) {
            let u = if t == 0.0 { 0.0 } else { (t / t_dec).powf(n) };
            let e = (-u).exp();
            r.push(a * e - y);
            jac.push(e);
            jac.push(a * e * n * u); // d/d(lnT): -a e' * du/dlnT, du/dlnT = -n u
            let dn = if t == 0.0 { 0.0 } else { -a * e * u * (t / t_dec).ln() };
            jac.push(dn);
        }
        Some((r, jac))
    }
}

/// Fits |L(t)| (or its envelope) to a stretched exponential
/// a * exp(-(t/T)^n), n in [0.5, 4].
pub fn fit_decay(curve: &CoherenceCurve, mode: FitMode) -> Result<DecayFit> {
    let times = &curve.time_us;
    let mag: Vec<f64> = curve.normalized.iter().map(|v| v.norm()).collect();
    if times.len() < 8 {
        return Err(Error::Validation("decay fit needs at least 8 time points".into()));
    }
    if mag.iter().any(|v| *v > 1.0 + 1e-6 || !v.is_finite()) {
        return Err(Error::Validation(
            "decay fit expects |L| within [0, 1 + 1e-6]".into(),
        ));
    }
    let (fit_times, fit_values, effective_mode) = match mode {
        FitMode::Raw => (times.clone(), mag.clone(), FitMode::Raw),
        FitMode::Envelope => match envelope(times, &mag) {
            Some((t, v)) => (t, v, FitMode::Envelope),
            // too few oscillation maxima: the raw magnitude is already the
            // envelope
            None => (times.clone(), mag.clone(), FitMode::Raw),
        },
    };
    let a0 = fit_values.iter().cloned().fold(0.0f64, f64::max).max(1e-6);
    let floor = a0 * (-1.0f64).exp();
    let min_val = fit_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_val > floor {
        return Err(Error::FitRange(format!(
            "coherence never decays below a/e within the simulated window (min |L| = {min_val:.4})"
        )));
    }
    // initial T: first crossing below a0/e
    let mut t0 = *fit_times.last().unwrap();
    for i in 1..fit_values.len() {
        if fit_values[i] <= floor {
            let (ta, tb) = (fit_times[i - 1], fit_times[i]);
            let (ya, yb) = (fit_values[i - 1], fit_values[i]);
            t0 = if (ya - yb).abs() > 1e-300 { ta + (ya - floor) / (ya - yb) * (tb - ta) } else { tb };
            break;
        }
    }
    t0 = t0.max(fit_times[1] * 0.5);

    let mut best: Option<LmFit> = None;
    for n0 in [1.0, 2.0, 3.0] {
        let eval = stretched_exp_eval(&fit_times, &fit_values);
        if let Some(fit) = levenberg_marquardt(eval, &[a0, t0.ln(), n0], 200) {
            if best.as_ref().map_or(true, |b| fit.sse < b.sse) {
                best = Some(fit);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Numerical("stretched-exponential fit failed".into()))?;
    let (a, t_dec, n) = (best.params[0], best.params[1].exp(), best.params[2]);

    // covariance wrt (a, T, n) from the Jacobian at the solution
    let npts = fit_times.len();
    let dof = (npts as f64 - 3.0).max(1.0);
    let sigma2 = best.sse / dof;
    let mut jtj = vec![vec![0.0f64; 3]; 3];
    for (&t, _) in fit_times.iter().zip(&fit_values) {
        let u = if t == 0.0 { 0.0 } else { (t / t_dec).powf(n) };
        let e = (-u).exp();
        let row = [
            e,
            a * e * n * u / t_dec,
            if t == 0.0 { 0.0 } else { -a * e * u * (t / t_dec).ln() },
        ];
        for p in 0..3 {
            for q in 0..3 {
                jtj[p][q] += row[p] * row[q];
            }
        }
    }
    let mut cov_t = f64::NAN;
    let mut cov_n = f64::NAN;
    {
        // invert 3x3 via solves against unit vectors
        let mut cols = Vec::new();
        for k in 0..3 {
            let mut a_ = jtj.clone();
            let mut b_ = vec![0.0; 3];
            b_[k] = 1.0;
            if let Some(x) = solve_small(&mut a_, &mut b_) {
                cols.push(x);
            }
        }
        if cols.len() == 3 {
            cov_t = (cols[1][1] * sigma2).max(0.0).sqrt();
            cov_n = (cols[2][2] * sigma2).max(0.0).sqrt();
        }
    }
    Ok(DecayFit {
        t_decay_us: t_dec,
        exponent: n,
        amplitude: a,
        residual_norm: best.sse.sqrt(),
        t_decay_sigma_us: cov_t,
        exponent_sigma: cov_n,
        mode: effective_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cce::CurveMeta;
    use num_complex::Complex64 as C64;

    fn curve_from_mag(times: Vec<f64>, mag: Vec<f64>) -> CoherenceCurve {
        let raw: Vec<C64> = mag.iter().map(|&m| C64::new(0.5 * m, 0.0)).collect();
        let normalized: Vec<C64> = mag.iter().map(|&m| C64::new(m, 0.0)).collect();
        CoherenceCurve {
            time_us: times,
            raw,
            normalized,
            pop_a: None,
            pop_b: None,
            meta: CurveMeta {
                method: "gcce".into(),
                order: 2,
                samples: 1,
                seed: 0,
                sequence: "ramsey".into(),
                divergence_count: 0,
            },
        }
    }

    #[test]
    fn recovers_gaussian_decay() {
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 2.0).collect();
        let mag: Vec<f64> = times.iter().map(|t| (-(t / 100.0).powi(2)).exp()).collect();
        let fit = fit_decay(&curve_from_mag(times, mag), FitMode::Raw).unwrap();
        assert!((fit.t_decay_us - 100.0).abs() / 100.0 < 0.01, "T = {}", fit.t_decay_us);
        assert!((fit.exponent - 2.0).abs() < 0.02, "n = {}", fit.exponent);
        assert!((fit.amplitude - 1.0).abs() < 0.01);
    }

    #[test]
    fn envelope_mode_handles_oscillations() {
        let times: Vec<f64> = (0..600).map(|k| k as f64 * 0.25).collect();
        let t2 = 40.0;
        let mag: Vec<f64> = times
            .iter()
            .map(|t| (2.0 * std::f64::consts::PI * 0.8 * t).cos().abs() * (-(t / t2)).exp())
            .collect();
        let fit = fit_decay(&curve_from_mag(times, mag), FitMode::Envelope).unwrap();
        assert!(
            (fit.t_decay_us - t2).abs() / t2 < 0.05,
            "T = {} n = {}",
            fit.t_decay_us,
            fit.exponent
        );
    }

    #[test]
    fn constant_coherence_is_a_range_error() {
        let times: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let mag = vec![1.0; 50];
        match fit_decay(&curve_from_mag(times, mag), FitMode::Raw) {
            Err(Error::FitRange(_)) => {}
            other => panic!("expected fit-range error, got {other:?}"),
        }
    }

    #[test]
    fn time_rescaling_rescales_t_exactly() {
        let times: Vec<f64> = (0..150).map(|k| k as f64 * 0.5).collect();
        let mag: Vec<f64> = times.iter().map(|t| (-(t / 30.0).powf(1.4)).exp()).collect();
        let f1 = fit_decay(&curve_from_mag(times.clone(), mag.clone()), FitMode::Raw).unwrap();
        let k = 7.0;
        let scaled: Vec<f64> = times.iter().map(|t| t * k).collect();
        let f2 = fit_decay(&curve_from_mag(scaled, mag), FitMode::Raw).unwrap();
        assert!((f2.t_decay_us / f1.t_decay_us - k).abs() < 1e-9);
        assert!((f2.exponent - f1.exponent).abs() < 1e-10);
    }

    #[test]
    fn pchip_is_monotone_between_knots() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 0.9, 0.5, 0.45, 0.1];
        let at: Vec<f64> = (0..81).map(|k| k as f64 * 0.05).collect();
        let v = pchip_eval(&xs, &ys, &at);
        for w in v.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
