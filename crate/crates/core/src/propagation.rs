//! Time evolution of cluster density matrices under free evolution and
//! ideal pulse sequences.
//!
//! Unit contract: Hamiltonians in MHz, times in us, propagator phase is
//! 2*pi*f*t. Pulses are instantaneous rotations in the instantaneous qubit
//! frame (the tracked eigenlevels).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hamiltonian::{qubit_rotation, Axis, Operator, QubitLevels};
use crate::linalg::{self, eigh, hermiticity_deviation, kron, mat_mul};

pub const UNITARITY_TOL: f64 = 1e-12;

/// One segment of a pulse sequence: free evolution for `delay_us`, then an
/// instantaneous rotation by `angle_rad` about `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub delay_us: f64,
    pub axis: Axis,
    pub angle_rad: f64,
}

/// Pulse sequence: `repeats` repetitions of (events..., tail free evolution).
///
/// Ramsey is the empty event list with the full delay in `tail_us`;
/// Hahn-echo is one (tau, x, pi) event followed by a tau tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub events: Vec<PulseEvent>,
    pub tail_us: f64,
    pub repeats: u32,
}

impl PulseSequence {
    pub fn free(total_us: f64) -> PulseSequence {
        PulseSequence { events: vec![], tail_us: total_us, repeats: 1 }
    }

    pub fn hahn(tau_us: f64) -> PulseSequence {
        PulseSequence {
            events: vec![PulseEvent { delay_us: tau_us, axis: Axis::X, angle_rad: PI }],
            tail_us: tau_us,
            repeats: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tail_us < 0.0 || self.events.iter().any(|e| e.delay_us < 0.0) {
            return Err(Error::Validation("pulse-sequence delays must be nonnegative".into()));
        }
        if self.events.iter().any(|e| !e.angle_rad.is_finite()) {
            return Err(Error::Validation("pulse angles must be finite".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Validation("repetition count must be at least 1".into()));
        }
        Ok(())
    }

    /// Total evolved time: (sum of delays) * repeats.
    pub fn total_time_us(&self) -> f64 {
        let per: f64 = self.events.iter().map(|e| e.delay_us).sum::<f64>() + self.tail_us;
        per * self.repeats as f64
    }
}

/// A named family of sequences parameterized by total evolved time, used to
/// realize a [`PulseSequence`] at every point of a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SequenceTemplate {
    Ramsey,
    Hahn,
    Cpmg { pulses: u32 },
    Xy4 { repeats: u32 },
    Custom {
        /// Per-repetition pulse positions as fractions of the repetition
        /// time; fractions plus `tail_fraction` must sum to 1.
        pulses: Vec<(f64, Axis, f64)>,
        tail_fraction: f64,
        repeats: u32,
    },
}

impl SequenceTemplate {
    pub fn validate(&self) -> Result<()> {
        match self {
            SequenceTemplate::Cpmg { pulses } if *pulses == 0 => {
                Err(Error::Validation("cpmg needs at least one pulse".into()))
            }
            SequenceTemplate::Xy4 { repeats } if *repeats == 0 => {
                Err(Error::Validation("xy4 needs at least one repetition".into()))
            }
            SequenceTemplate::Custom { pulses, tail_fraction, repeats } => {
                if *repeats == 0 {
                    return Err(Error::Validation("custom sequence needs repeats >= 1".into()));
                }
                let total: f64 =
                    pulses.iter().map(|(f, _, _)| *f).sum::<f64>() + tail_fraction;
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "custom sequence fractions must sum to 1, got {total}"
                    )));
                }
                if pulses.iter().any(|(f, _, _)| *f < 0.0) || *tail_fraction < 0.0 {
                    return Err(Error::Validation("sequence fractions must be nonnegative".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the sequence with the given total evolved time.
    pub fn realize(&self, total_us: f64) -> PulseSequence {
        match self {
            SequenceTemplate::Ramsey => PulseSequence::free(total_us),
            SequenceTemplate::Hahn => PulseSequence::hahn(total_us / 2.0),
            SequenceTemplate::Cpmg { pulses } => {
                let tau = total_us / (2.0 * *pulses as f64);
                PulseSequence {
                    events: vec![PulseEvent { delay_us: tau, axis: Axis::X, angle_rad: PI }],
                    tail_us: tau,
                    repeats: *pulses,
                }
            }
            SequenceTemplate::Xy4 { repeats } => {
                let tau = total_us / (8.0 * *repeats as f64);
                let pi = PI;
                PulseSequence {
                    events: vec![
                        PulseEvent { delay_us: tau, axis: Axis::X, angle_rad: pi },
                        PulseEvent { delay_us: 2.0 * tau, axis: Axis::Y, angle_rad: pi },
                        PulseEvent { delay_us: 2.0 * tau, axis: Axis::X, angle_rad: pi },
                        PulseEvent { delay_us: 2.0 * tau, axis: Axis::Y, angle_rad: pi },
                    ],
                    tail_us: tau,
                    repeats: *repeats,
                }
            }
            SequenceTemplate::Custom { pulses, tail_fraction, repeats } => {
                let rep_time = total_us / *repeats as f64;
                PulseSequence {
                    events: pulses
                        .iter()
                        .map(|(f, axis, angle)| PulseEvent {
                            delay_us: f * rep_time,
                            axis: *axis,
                            angle_rad: *angle,
                        })
                        .collect(),
                    tail_us: tail_fraction * rep_time,
                    repeats: *repeats,
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SequenceTemplate::Ramsey => "ramsey",
            SequenceTemplate::Hahn => "hahn",
            SequenceTemplate::Cpmg { .. } => "cpmg",
            SequenceTemplate::Xy4 { .. } => "xy4",
            SequenceTemplate::Custom { .. } => "custom",
        }
    }

    /// True when every pulse is a pi rotation (any axis); the projected
    /// (pure-dephasing) method supports only those.
    pub fn is_pi_only(&self) -> bool {
        match self {
            SequenceTemplate::Ramsey | SequenceTemplate::Hahn => true,
            SequenceTemplate::Cpmg { .. } | SequenceTemplate::Xy4 { .. } => true,
            SequenceTemplate::Custom { pulses, .. } => {
                pulses.iter().all(|(_, _, angle)| (angle - PI).abs() < 1e-9)
            }
        }
    }
}

/// A density matrix on the same tensor-product layout as [`Operator`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub mat: Array2<C64>,
    pub dims: Vec<usize>,
}

impl DensityMatrix {
    pub fn validate(&self) -> Result<()> {
        if hermiticity_deviation(&self.mat) > 1e-10 {
            return Err(Error::Validation("density matrix is not Hermitian".into()));
        }
        let tr: C64 = (0..self.mat.nrows()).map(|i| self.mat[[i, i]]).sum();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::Validation(format!("density matrix trace {tr} is not 1")));
        }
        Ok(())
    }
}

/// Unitary `exp(-i 2 pi H t)` for a Hermitian `H`, via spectral
/// decomposition.
pub fn matrix_exponential_unitary(h: &Operator, t_us: f64) -> Result<Operator> {
    let (vals, vecs) = eigh(&h.mat, 1e-9)?;
    let n = h.dim();
    let mut phased = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let phase = C64::from_polar(1.0, -2.0 * PI * vals[j] * t_us);
        for i in 0..n {
            phased[[i, j]] = vecs[[i, j]] * phase;
        }
    }
    let u = mat_mul(&phased, &linalg::dagger(&vecs));
    Ok(Operator { mat: u, dims: h.dims.clone() })
}

/// Propagator of a full pulse sequence on the cluster space of `hc`.
///
/// Each repetition applies, in order, free evolution and the instantaneous
/// qubit rotations of every event, then the tail evolution; the pulse
/// operators act on the central-spin factor embedded in the cluster space.
pub fn sequence_propagator(
    hc: &Operator,
    levels: &QubitLevels,
    seq: &PulseSequence,
) -> Result<Operator> {
    seq.validate()?;
    let n = hc.dim();
    let bath_dim: usize = hc.dims[1..].iter().product();
    let mut unit = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        unit[[i, i]] = C64::new(1.0, 0.0);
    }
    for event in &seq.events {
        let free = matrix_exponential_unitary(hc, event.delay_us)?;
        unit = mat_mul(&free.mat, &unit);
        let rot = qubit_rotation(levels, event.axis, event.angle_rad);
        let embedded = kron(&rot, &linalg::identity(bath_dim));
        unit = mat_mul(&embedded, &unit);
    }
    let tail = matrix_exponential_unitary(hc, seq.tail_us)?;
    unit = mat_mul(&tail.mat, &unit);
    if seq.repeats > 1 {
        let block = unit.clone();
        for _ in 1..seq.repeats {
            unit = mat_mul(&block, &unit);
        }
    }
    Ok(Operator { mat: unit, dims: hc.dims.clone() })
}

/// rho -> U rho U^dagger.
pub fn evolve_density_matrix(rho: &DensityMatrix, u: &Operator) -> Result<DensityMatrix> {
    if rho.mat.nrows() != u.dim() {
        return Err(Error::Validation(format!(
            "dimension mismatch: density {} vs propagator {}",
            rho.mat.nrows(),
            u.dim()
        )));
    }
    let m = mat_mul(&u.mat, &mat_mul(&rho.mat, &linalg::dagger(&u.mat)));
    Ok(DensityMatrix { mat: m, dims: rho.dims.clone() })
}

/// Product state: qubit in (|a> + |b>)/sqrt(2), each cluster nucleus in the
/// Iz eigenstate assigned by `cluster_m` (descending-m basis).
pub fn initial_cluster_state(
    levels: &QubitLevels,
    cluster_dims: &[usize],
    cluster_m: &[f64],
) -> Result<DensityMatrix> {
    if cluster_dims.len() != cluster_m.len() {
        return Err(Error::Validation(format!(
            "cluster state needs {} projections, got {}",
            cluster_dims.len(),
            cluster_m.len()
        )));
    }
    let psi = initial_cluster_vector(levels, cluster_dims, cluster_m)?;
    let n = psi.len();
    let mut rho = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            rho[[i, j]] = psi[i] * psi[j].conj();
        }
    }
    let mut dims = vec![levels.a.len()];
    dims.extend_from_slice(cluster_dims);
    Ok(DensityMatrix { mat: rho, dims })
}

/// State-vector form of [`initial_cluster_state`].
pub fn initial_cluster_vector(
    levels: &QubitLevels,
    cluster_dims: &[usize],
    cluster_m: &[f64],
) -> Result<Array1<C64>> {
    let mut psi = levels.superposition().to_vec();
    for (&d, &m) in cluster_dims.iter().zip(cluster_m) {
        let s = (d as f64 - 1.0) / 2.0;
        let idx = s - m;
        if idx < -1e-9 || idx.fract().abs() > 1e-9 || idx.round() as usize >= d {
            return Err(Error::Validation(format!(
                "projection {m} is not an Iz eigenvalue of a {d}-level nucleus"
            )));
        }
        let idx = idx.round() as usize;
        let mut next = vec![C64::new(0.0, 0.0); psi.len() * d];
        for (i, amp) in psi.iter().enumerate() {
            next[i * d + idx] = *amp;
        }
        psi = next;
    }
    Ok(Array1::from(psi))
}

/// Matrix element of the qubit-reduced density matrix.
///
/// Traces out the cluster nuclei, then takes <u|rho_red|v> where u, v are
/// the requested qubit levels.
pub fn extract_qubit_element(
    rho: &DensityMatrix,
    levels: &QubitLevels,
    which: (QubitIndex, QubitIndex),
) -> C64 {
    let nc = rho.dims[0];
    let bath_dim: usize = rho.dims[1..].iter().product();
    let u = match which.0 {
        QubitIndex::A => &levels.a,
        QubitIndex::B => &levels.b,
    };
    let v = match which.1 {
        QubitIndex::A => &levels.a,
        QubitIndex::B => &levels.b,
    };
    let mut acc = C64::new(0.0, 0.0);
    for s in 0..nc {
        for sp in 0..nc {
            let mut partial = C64::new(0.0, 0.0);
            for m in 0..bath_dim {
                partial += rho.mat[[s * bath_dim + m, sp * bath_dim + m]];
            }
            acc += u[s].conj() * partial * v[sp];
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QubitIndex {
    A,
    B,
}
