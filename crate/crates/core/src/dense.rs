//! Exact dense evolution of the full central-spin + bath system.
//!
//! This is the reference path the cluster expansion is checked against: the
//! whole bath is one cluster, there is no mean field and no factorization.
//! Feasible for small baths only (the Hilbert space dimension is capped at
//! 16384, i.e. a dozen spin-1/2 nuclei for a spin-1 defect).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::cce::{CoherenceCurve, CurveMeta, PureBathState, TimeGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_cluster_hamiltonian, qubit_rotation, Axis, QubitLevels};
use crate::linalg::{self, eigh, mat_mul, mat_vec};
use crate::propagation::{initial_cluster_vector, SequenceTemplate};
use crate::spin_model::SpinSystem;

pub const DENSE_DIM_CAP: usize = 16384;

/// Initial bath preparation for the dense reference.
#[derive(Debug, Clone)]
pub enum BathInit<'a> {
    /// Completely randomized bath (identity density matrix), handled in
    /// closed form without enumerating product states.
    InfiniteTemperature,
    /// One explicit pure product state.
    Pure(&'a PureBathState),
}

/// Exact coherence (and populations) of the full system.
pub fn dense_curve(
    system: &SpinSystem,
    levels: &QubitLevels,
    template: &SequenceTemplate,
    grid: TimeGrid,
    init: BathInit<'_>,
) -> Result<CoherenceCurve> {
    grid.validate()?;
    template.validate()?;
    let nc = system.central.multiplicity();
    let bath_dim: usize = system.bath.iter().map(|s| s.multiplicity()).product();
    let dim = nc * bath_dim;
    if dim > DENSE_DIM_CAP {
        return Err(Error::Validation(format!(
            "dense evolution needs dimension {dim} > cap {DENSE_DIM_CAP}"
        )));
    }
    let all: Vec<usize> = (0..system.bath.len()).collect();
    let zeros = vec![0.0; system.bath.len()];
    let h = build_cluster_hamiltonian(system, &all, &zeros)?;
    let (vals, vecs) = eigh(&h.mat, 1e-9)?;
    let times = grid.times();

    let samples = match &init {
        BathInit::InfiniteTemperature => bath_dim,
        BathInit::Pure(_) => 1,
    };
    let (raw, pa, pb) = match init {
        BathInit::Pure(state) => {
            pure_state_series(system, levels, template, &times, &vals, &vecs, bath_dim, state)?
        }
        BathInit::InfiniteTemperature => match template {
            SequenceTemplate::Ramsey => {
                ramsey_thermal_series(levels, &times, &vals, &vecs, bath_dim)
            }
            _ => pulsed_thermal_series(levels, template, &times, &vals, &vecs, bath_dim),
        },
    };
    let base = raw[0];
    if base.norm() < 1e-14 {
        return Err(Error::Numerical("initial coherence vanished".into()));
    }
    let normalized = raw.iter().map(|v| v / base).collect();
    let curve = CoherenceCurve {
        time_us: times,
        raw,
        normalized,
        pop_a: Some(pa),
        pop_b: Some(pb),
        meta: CurveMeta {
            method: "dense".into(),
            order: system.bath.len(),
            samples,
            seed: 0,
            sequence: template.name().to_string(),
            divergence_count: 0,
        },
    };
    curve.validate()?;
    Ok(curve)
}

/// `V^dag (x (x) I_bath)` for a central-spin vector x: dim x bath_dim.
fn rotate_embedded_vector(vecs: &Array2<C64>, x: &Array1<C64>, bath_dim: usize) -> Array2<C64> {
    let dim = vecs.nrows();
    let nc = x.len();
    let mut out = Array2::<C64>::zeros((dim, bath_dim));
    for mu in 0..dim {
        for m in 0..bath_dim {
            let mut acc = C64::new(0.0, 0.0);
            for s in 0..nc {
                acc += vecs[[s * bath_dim + m, mu]].conj() * x[s];
            }
            out[[mu, m]] = acc;
        }
    }
    out
}

fn thermal_rho0(levels: &QubitLevels, vecs: &Array2<C64>, bath_dim: usize) -> Array2<C64> {
    let psi = levels.superposition();
    let psi_t = rotate_embedded_vector(vecs, &psi, bath_dim);
    let mut r = mat_mul(&psi_t, &linalg::dagger(&psi_t));
    let w = 1.0 / bath_dim as f64;
    r.mapv_inplace(|v| v * w);
    r
}

/// Closed-form infinite-temperature Ramsey: with rho0 = psi psi^dag (x) 1/nb
/// and O = |v><u| (x) 1, the matrix element reduces to a two-sided phase
/// contraction of M = rho0~ o O~^T in the eigenbasis.
fn ramsey_thermal_series(
    levels: &QubitLevels,
    times: &[f64],
    vals: &Array1<f64>,
    vecs: &Array2<C64>,
    bath_dim: usize,
) -> (Vec<C64>, Vec<f64>, Vec<f64>) {
    let dim = vecs.nrows();
    let a_t = rotate_embedded_vector(vecs, &levels.a, bath_dim);
    let b_t = rotate_embedded_vector(vecs, &levels.b, bath_dim);
    let rho0 = thermal_rho0(levels, vecs, bath_dim);
    let build_m = |u: &Array2<C64>, v: &Array2<C64>| -> Array2<C64> {
        let o = mat_mul(u, &linalg::dagger(v));
        let mut m = Array2::<C64>::zeros((dim, dim));
        for mu in 0..dim {
            for nu in 0..dim {
                m[[mu, nu]] = rho0[[mu, nu]] * o[[nu, mu]];
            }
        }
        m
    };
    // rho_ab(t) = Tr[rho(t) (|b><a| (x) 1)]
    let m_ab = build_m(&b_t, &a_t);
    let m_aa = build_m(&a_t, &a_t);
    let m_bb = build_m(&b_t, &b_t);
    let mut raw = Vec::with_capacity(times.len());
    let mut pa = Vec::with_capacity(times.len());
    let mut pb = Vec::with_capacity(times.len());
    let mut q = vec![C64::new(0.0, 0.0); dim];
    let mut tmp = vec![C64::new(0.0, 0.0); dim];
    let contract = |m: &Array2<C64>, q: &[C64], tmp: &mut Vec<C64>| -> C64 {
        let qbar: Vec<C64> = q.iter().map(|z| z.conj()).collect();
        mat_vec(m, &qbar, tmp);
        let mut acc = C64::new(0.0, 0.0);
        for mu in 0..dim {
            acc += q[mu] * tmp[mu];
        }
        acc
    };
    for &t in times {
        for mu in 0..dim {
            q[mu] = C64::from_polar(1.0, -2.0 * PI * vals[mu] * t);
        }
        raw.push(contract(&m_ab, &q, &mut tmp));
        pa.push(contract(&m_aa, &q, &mut tmp).re);
        pb.push(contract(&m_bb, &q, &mut tmp).re);
    }
    (raw, pa, pb)
}

fn pulse_matrices_eigenbasis(
    levels: &QubitLevels,
    template: &SequenceTemplate,
    vecs: &Array2<C64>,
    bath_dim: usize,
) -> Vec<((Axis, u64), Array2<C64>)> {
    let probe = template.realize(1.0);
    let mut out: Vec<((Axis, u64), Array2<C64>)> = Vec::new();
    for e in &probe.events {
        let key = (e.axis, e.angle_rad.to_bits());
        if out.iter().all(|(k, _)| *k != key) {
            let rot = qubit_rotation(levels, e.axis, e.angle_rad);
            let embedded = linalg::kron(&rot, &linalg::identity(bath_dim));
            let tilded = mat_mul(&linalg::dagger(vecs), &mat_mul(&embedded, vecs));
            out.push((key, tilded));
        }
    }
    out
}

fn eigenbasis_phases(vals: &Array1<f64>, tau: f64, out: &mut [C64]) {
    for (x, &l) in out.iter_mut().zip(vals.iter()) {
        *x = C64::from_polar(1.0, -2.0 * PI * l * tau);
    }
}

#[allow(clippy::too_many_arguments)]
fn pure_state_series(
    system: &SpinSystem,
    levels: &QubitLevels,
    template: &SequenceTemplate,
    times: &[f64],
    vals: &Array1<f64>,
    vecs: &Array2<C64>,
    bath_dim: usize,
    state: &PureBathState,
) -> Result<(Vec<C64>, Vec<f64>, Vec<f64>)> {
    let dim = vecs.nrows();
    let nc = levels.a.len();
    let dims: Vec<usize> = system.bath.iter().map(|s| s.multiplicity()).collect();
    let psi0 = initial_cluster_vector(levels, &dims, &state.projections)?;
    let mut w0 = vec![C64::new(0.0, 0.0); dim];
    for mu in 0..dim {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..dim {
            acc += vecs[[i, mu]].conj() * psi0[i];
        }
        w0[mu] = acc;
    }
    let pulses = pulse_matrices_eigenbasis(levels, template, vecs, bath_dim);
    let lookup = |axis: Axis, angle: f64| -> &Array2<C64> {
        &pulses.iter().find(|(k, _)| *k == (axis, angle.to_bits())).unwrap().1
    };
    let mut raw = Vec::with_capacity(times.len());
    let mut pa = Vec::with_capacity(times.len());
    let mut pb = Vec::with_capacity(times.len());
    let mut w = vec![C64::new(0.0, 0.0); dim];
    let mut phases = vec![C64::new(0.0, 0.0); dim];
    let mut scratch = vec![C64::new(0.0, 0.0); dim];
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    for &t in times {
        let seq = template.realize(t);
        w.copy_from_slice(&w0);
        for _ in 0..seq.repeats {
            for e in &seq.events {
                eigenbasis_phases(vals, e.delay_us, &mut phases);
                for i in 0..dim {
                    w[i] *= phases[i];
                }
                if e.angle_rad != 0.0 {
                    mat_vec(lookup(e.axis, e.angle_rad), &w, &mut scratch);
                    w.copy_from_slice(&scratch);
                }
            }
            eigenbasis_phases(vals, seq.tail_us, &mut phases);
            for i in 0..dim {
                w[i] *= phases[i];
            }
        }
        mat_vec(vecs, &w, &mut psi);
        let mut ab = C64::new(0.0, 0.0);
        let mut paa = 0.0;
        let mut pbb = 0.0;
        for m in 0..bath_dim {
            let mut alpha = C64::new(0.0, 0.0);
            let mut beta = C64::new(0.0, 0.0);
            for s in 0..nc {
                let amp = psi[s * bath_dim + m];
                alpha += levels.a[s].conj() * amp;
                beta += levels.b[s].conj() * amp;
            }
            ab += alpha * beta.conj();
            paa += alpha.norm_sqr();
            pbb += beta.norm_sqr();
        }
        raw.push(ab);
        pa.push(paa);
        pb.push(pbb);
    }
    Ok((raw, pa, pb))
}

/// Infinite-temperature bath under a pulse sequence: propagate the density
/// matrix in the eigenbasis. Cubic in the dimension per time point, so only
/// sensible for small baths.
fn pulsed_thermal_series(
    levels: &QubitLevels,
    template: &SequenceTemplate,
    times: &[f64],
    vals: &Array1<f64>,
    vecs: &Array2<C64>,
    bath_dim: usize,
) -> (Vec<C64>, Vec<f64>, Vec<f64>) {
    let dim = vecs.nrows();
    let a_t = rotate_embedded_vector(vecs, &levels.a, bath_dim);
    let b_t = rotate_embedded_vector(vecs, &levels.b, bath_dim);
    let rho0 = thermal_rho0(levels, vecs, bath_dim);
    let o_ab = mat_mul(&b_t, &linalg::dagger(&a_t));
    let o_aa = mat_mul(&a_t, &linalg::dagger(&a_t));
    let o_bb = mat_mul(&b_t, &linalg::dagger(&b_t));
    let pulses = pulse_matrices_eigenbasis(levels, template, vecs, bath_dim);
    let lookup = |axis: Axis, angle: f64| -> &Array2<C64> {
        &pulses.iter().find(|(k, _)| *k == (axis, angle.to_bits())).unwrap().1
    };
    let mut raw = Vec::with_capacity(times.len());
    let mut pa = Vec::with_capacity(times.len());
    let mut pb = Vec::with_capacity(times.len());
    for &t in times {
        let seq = template.realize(t);
        let mut block = linalg::identity(dim);
        let phase_scale_left = |m: &mut Array2<C64>, tau: f64| {
            for mu in 0..dim {
                let p = C64::from_polar(1.0, -2.0 * PI * vals[mu] * tau);
                for nu in 0..dim {
                    m[[mu, nu]] *= p;
                }
            }
        };
        for e in &seq.events {
            phase_scale_left(&mut block, e.delay_us);
            if e.angle_rad != 0.0 {
                block = mat_mul(lookup(e.axis, e.angle_rad), &block);
            }
        }
        phase_scale_left(&mut block, seq.tail_us);
        let mut u = block.clone();
        for _ in 1..seq.repeats {
            u = mat_mul(&block, &u);
        }
        let rho_t = mat_mul(&u, &mat_mul(&rho0, &linalg::dagger(&u)));
        let trace_with = |o: &Array2<C64>| -> C64 {
            let mut acc = C64::new(0.0, 0.0);
            for mu in 0..dim {
                for nu in 0..dim {
                    acc += rho_t[[mu, nu]] * o[[nu, mu]];
                }
            }
            acc
        };
        raw.push(trace_with(&o_ab));
        pa.push(trace_with(&o_aa).re);
        pb.push(trace_with(&o_bb).re);
    }
    (raw, pa, pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cce::exhaustive_bath_states;
    use crate::constants::GYRO_ELECTRON_MHZ_PER_MT;
    use crate::hamiltonian::{build_electron_hamiltonian, select_qubit_levels, LevelStrategy};
    use crate::spin_model::{BathSpin, CentralSpin};
    use approx::assert_abs_diff_eq;

    fn small_system(n: usize, field: f64) -> SpinSystem {
        let central = CentralSpin {
            spin: 1.0,
            zfs_d_mhz: 1334.0,
            zfs_e_mhz: 18.4,
            gyro_mhz_per_mt: GYRO_ELECTRON_MHZ_PER_MT,
            position_nm: [0.0; 3],
        };
        let bath = (0..n)
            .map(|k| BathSpin {
                isotope: "13C".into(),
                spin: 0.5,
                gyro_mhz_per_mt: 0.0107084,
                position_nm: [
                    0.35 + 0.11 * k as f64,
                    0.1 * ((k * 7) % 3) as f64,
                    0.3 - 0.07 * k as f64,
                ],
                hyperfine_mhz: [[0.0; 3]; 3],
            })
            .collect();
        SpinSystem::new(central, bath, field).unwrap()
    }

    #[test]
    fn thermal_ramsey_equals_exhaustive_pure_average() {
        let sys = small_system(3, 0.0);
        let he = build_electron_hamiltonian(&sys.central, sys.field_mt).unwrap();
        let levels = select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap();
        let grid = TimeGrid { t_max_us: 4.0, points: 17 };
        let thermal = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Ramsey,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let mut avg = vec![C64::new(0.0, 0.0); 17];
        for st in &states {
            let c =
                dense_curve(&sys, &levels, &SequenceTemplate::Ramsey, grid, BathInit::Pure(st))
                    .unwrap();
            for (t, v) in c.raw.iter().enumerate() {
                avg[t] += v * st.weight;
            }
        }
        for t in 0..17 {
            assert_abs_diff_eq!((thermal.raw[t] - avg[t]).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn thermal_hahn_matches_exhaustive_pure_average() {
        let sys = small_system(2, 1.1);
        let he = build_electron_hamiltonian(&sys.central, sys.field_mt).unwrap();
        let levels = select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap();
        let grid = TimeGrid { t_max_us: 6.0, points: 9 };
        let thermal = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Hahn,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let mut avg = vec![C64::new(0.0, 0.0); 9];
        for st in &states {
            let c = dense_curve(&sys, &levels, &SequenceTemplate::Hahn, grid, BathInit::Pure(st))
                .unwrap();
            for (t, v) in c.raw.iter().enumerate() {
                avg[t] += v * st.weight;
            }
        }
        for t in 0..9 {
            assert_abs_diff_eq!((thermal.raw[t] - avg[t]).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn no_bath_keeps_unit_coherence() {
        let central = CentralSpin {
            spin: 1.0,
            zfs_d_mhz: 1334.0,
            zfs_e_mhz: 18.4,
            gyro_mhz_per_mt: GYRO_ELECTRON_MHZ_PER_MT,
            position_nm: [0.0; 3],
        };
        let sys = SpinSystem::new(central, vec![], 0.0).unwrap();
        let he = build_electron_hamiltonian(&sys.central, 0.0).unwrap();
        let levels = select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap();
        let grid = TimeGrid { t_max_us: 10.0, points: 21 };
        let c = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Ramsey,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        for v in &c.normalized {
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn dimension_cap_enforced() {
        let sys = small_system(13, 0.0);
        let he = build_electron_hamiltonian(&sys.central, 0.0).unwrap();
        let levels = select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap();
        let grid = TimeGrid { t_max_us: 1.0, points: 3 };
        assert!(dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Ramsey,
            grid,
            BathInit::InfiniteTemperature
        )
        .is_err());
    }
}
