//! Hamiltonian construction on tensor-product spin spaces.
//!
//! Basis convention: the product space is ordered central spin first, then
//! cluster nuclei in ascending bath index; each spin factor runs over its
//! magnetic quantum number in descending order (m = s, s-1, ..., -s). With
//! that fixed, matrices are bit-comparable across runs.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, eigh};
use crate::spin_model::{CentralSpin, MeanFieldTables, SpinSystem};

pub const HERMITICITY_TOL: f64 = 1e-12;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// A square operator on an explicit tensor-product space.
///
/// `dims[0]` is the central-spin multiplicity; the remaining entries are the
/// multiplicities of the cluster nuclei in ascending bath index.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub mat: Array2<C64>,
    pub dims: Vec<usize>,
}

impl Operator {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// m quantum numbers of every factor for one basis index.
    pub fn basis_label(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut out = Vec::with_capacity(self.dims.len());
        let mut strides: Vec<usize> = vec![1; self.dims.len()];
        for f in (0..self.dims.len() - 1).rev() {
            strides[f] = strides[f + 1] * self.dims[f + 1];
        }
        for (f, &d) in self.dims.iter().enumerate() {
            let i = rest / strides[f];
            rest %= strides[f];
            let s = (d as f64 - 1.0) / 2.0;
            out.push(s - i as f64);
        }
        out
    }
}

/// Standard angular-momentum matrices in the descending-m basis.
pub fn spin_operators(s: f64) -> Result<(Array2<C64>, Array2<C64>, Array2<C64>)> {
    if s <= 0.0 || (2.0 * s).fract().abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "spin quantum number must be a positive half-integer, got {s}"
        )));
    }
    let n = (2.0 * s + 1.0).round() as usize;
    let m = |i: usize| s - i as f64;
    let mut sz = Array2::<C64>::zeros((n, n));
    let mut sp = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        sz[[i, i]] = c(m(i));
        if i >= 1 {
            // S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>, and |m+1> sits one row up
            let mi = m(i);
            sp[[i - 1, i]] = c((s * (s + 1.0) - mi * (mi + 1.0)).sqrt());
        }
    }
    let sm = linalg::dagger(&sp);
    let sx = (&sp + &sm).mapv(|v| v * 0.5);
    let sy = (&sp - &sm).mapv(|v| v * C64::new(0.0, -0.5));
    Ok((sx, sy, sz))
}

/// Electron Hamiltonian: Zeeman plus zero-field splitting,
/// `-g B Sz + D (Sz^2 - S(S+1)/3) + E (Sx^2 - Sy^2)`, in MHz.
pub fn build_electron_hamiltonian(central: &CentralSpin, field_mt: f64) -> Result<Array2<C64>> {
    central.validate()?;
    let (sx, sy, sz) = spin_operators(central.spin)?;
    let n = sz.nrows();
    let sz2 = linalg::mat_mul(&sz, &sz);
    let sx2 = linalg::mat_mul(&sx, &sx);
    let sy2 = linalg::mat_mul(&sy, &sy);
    let mut h = Array2::<C64>::zeros((n, n));
    let casimir = central.spin * (central.spin + 1.0) / 3.0;
    for i in 0..n {
        for j in 0..n {
            h[[i, j]] = -c(central.gyro_mhz_per_mt * field_mt) * sz[[i, j]]
                + c(central.zfs_d_mhz) * (sz2[[i, j]] - if i == j { c(casimir) } else { c(0.0) })
                + c(central.zfs_e_mhz) * (sx2[[i, j]] - sy2[[i, j]]);
        }
    }
    Ok(h)
}

/// Tensor-product index bookkeeping for in-place operator accumulation.
struct ProductSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    dim: usize,
}

impl ProductSpace {
    fn new(dims: Vec<usize>) -> ProductSpace {
        let mut strides = vec![1usize; dims.len()];
        for f in (0..dims.len().saturating_sub(1)).rev() {
            strides[f] = strides[f + 1] * dims[f + 1];
        }
        let dim = dims.iter().product();
        ProductSpace { dims, strides, dim }
    }

    /// h += coeff * op acting on `sites` (op indexed in the listed order),
    /// identity on everything else.
    fn add_op(&self, h: &mut Array2<C64>, sites: &[usize], op: &Array2<C64>, coeff: C64) {
        let site_dims: Vec<usize> = sites.iter().map(|&f| self.dims[f]).collect();
        let local_dim: usize = site_dims.iter().product();
        debug_assert_eq!(op.nrows(), local_dim);
        let rest: Vec<usize> = (0..self.dims.len()).filter(|f| !sites.contains(f)).collect();
        let rest_dim: usize = rest.iter().map(|&f| self.dims[f]).product();
        let local_offset = |mut idx: usize| -> usize {
            let mut off = 0;
            for k in (0..sites.len()).rev() {
                off += (idx % site_dims[k]) * self.strides[sites[k]];
                idx /= site_dims[k];
            }
            off
        };
        let offsets: Vec<usize> = (0..local_dim).map(local_offset).collect();
        for r in 0..rest_dim {
            let mut base = 0usize;
            let mut idx = r;
            for k in (0..rest.len()).rev() {
                base += (idx % self.dims[rest[k]]) * self.strides[rest[k]];
                idx /= self.dims[rest[k]];
            }
            for (li, &oi) in offsets.iter().enumerate() {
                for (lj, &oj) in offsets.iter().enumerate() {
                    let v = op[[li, lj]];
                    if v != c(0.0) {
                        h[[base + oi, base + oj]] += coeff * v;
                    }
                }
            }
        }
    }
}

struct SpinOps {
    x: Array2<C64>,
    y: Array2<C64>,
    z: Array2<C64>,
}

fn spin_ops(s: f64) -> Result<SpinOps> {
    let (x, y, z) = spin_operators(s)?;
    Ok(SpinOps { x, y, z })
}

fn mean_field_sums(
    system: &SpinSystem,
    cluster: &[usize],
    bath_m: &[f64],
    tables: &MeanFieldTables,
) -> (f64, Vec<f64>) {
    // contributions of every spin outside the cluster: a Zeeman-like shift
    // on the central spin via A_zz and on each cluster nucleus via P_zz
    let mut central_shift = 0.0;
    let mut nuclear_shift = vec![0.0; cluster.len()];
    let in_cluster = |i: usize| cluster.contains(&i);
    for i in 0..system.bath.len() {
        if in_cluster(i) {
            continue;
        }
        central_shift += tables.azz(i) * bath_m[i];
        for (p, &j) in cluster.iter().enumerate() {
            nuclear_shift[p] += tables.pzz(i, j) * bath_m[i];
        }
    }
    (central_shift, nuclear_shift)
}

fn validate_cluster(system: &SpinSystem, cluster: &[usize], bath_m: &[f64]) -> Result<()> {
    if bath_m.len() != system.bath.len() {
        return Err(Error::Validation(format!(
            "bath state covers {} spins, system has {}",
            bath_m.len(),
            system.bath.len()
        )));
    }
    for &i in cluster {
        if i >= system.bath.len() {
            return Err(Error::Validation(format!(
                "cluster index {i} out of range for bath of {}",
                system.bath.len()
            )));
        }
    }
    if cluster.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("cluster indices must be strictly ascending".into()));
    }
    for (i, &m) in bath_m.iter().enumerate() {
        if m.abs() > system.bath[i].spin + 1e-9 {
            return Err(Error::Validation(format!(
                "bath state projection {m} exceeds spin {} of nucleus {i}",
                system.bath[i].spin
            )));
        }
    }
    Ok(())
}

/// Full Hamiltonian of the central spin plus one cluster of nuclei, with
/// mean-field shifts from every bath spin outside the cluster.
pub fn build_cluster_hamiltonian(
    system: &SpinSystem,
    cluster: &[usize],
    bath_m: &[f64],
) -> Result<Operator> {
    let tables = system.mean_field_tables();
    build_cluster_hamiltonian_with(system, cluster, bath_m, &tables)
}

/// As [`build_cluster_hamiltonian`] but reusing precomputed P_zz/A_zz
/// tables (the hot path of the cluster engine).
pub fn build_cluster_hamiltonian_with(
    system: &SpinSystem,
    cluster: &[usize],
    bath_m: &[f64],
    tables: &MeanFieldTables,
) -> Result<Operator> {
    validate_cluster(system, cluster, bath_m)?;
    let mut dims = vec![system.central.multiplicity()];
    dims.extend(cluster.iter().map(|&i| system.bath[i].multiplicity()));
    let space = ProductSpace::new(dims.clone());
    let mut h = Array2::<C64>::zeros((space.dim, space.dim));

    let he = build_electron_hamiltonian(&system.central, system.field_mt)?;
    space.add_op(&mut h, &[0], &he, c(1.0));

    let central_ops = spin_ops(system.central.spin)?;
    let (mf_central, mf_nuclear) = mean_field_sums(system, cluster, bath_m, tables);
    space.add_op(&mut h, &[0], &central_ops.z, c(mf_central));

    for (p, &i) in cluster.iter().enumerate() {
        let spin = &system.bath[i];
        let ops = spin_ops(spin.spin)?;
        let slot = p + 1;
        // nuclear Zeeman
        space.add_op(&mut h, &[slot], &ops.z, c(-spin.gyro_mhz_per_mt * system.field_mt));
        // mean-field P_zz shift from outside spins
        space.add_op(&mut h, &[slot], &ops.z, c(mf_nuclear[p]));
        // hyperfine S . A . I
        let a = &spin.hyperfine_mhz;
        for (k, sk) in [&central_ops.x, &central_ops.y, &central_ops.z].into_iter().enumerate() {
            for (l, il) in [&ops.x, &ops.y, &ops.z].into_iter().enumerate() {
                if a[k][l] != 0.0 {
                    let op = linalg::kron(sk, il);
                    space.add_op(&mut h, &[0, slot], &op, c(a[k][l]));
                }
            }
        }
    }
    // intra-cluster nuclear dipolar couplings
    for p in 0..cluster.len() {
        for q in (p + 1)..cluster.len() {
            let t = system.dipolar(cluster[p], cluster[q])?.tensor_mhz;
            let ops_p = spin_ops(system.bath[cluster[p]].spin)?;
            let ops_q = spin_ops(system.bath[cluster[q]].spin)?;
            for (k, ik) in [&ops_p.x, &ops_p.y, &ops_p.z].into_iter().enumerate() {
                for (l, jl) in [&ops_q.x, &ops_q.y, &ops_q.z].into_iter().enumerate() {
                    if t[k][l] != 0.0 {
                        let op = linalg::kron(ik, jl);
                        space.add_op(&mut h, &[p + 1, q + 1], &op, c(t[k][l]));
                    }
                }
            }
        }
    }
    Ok(Operator { mat: h, dims })
}

/// Bath-only Hamiltonian conditioned on one central-spin level: every
/// central operator is replaced by its expectation value in `level`.
pub fn projected_bath_hamiltonian(
    system: &SpinSystem,
    cluster: &[usize],
    level: &Array1<C64>,
    bath_m: &[f64],
) -> Result<Operator> {
    let tables = system.mean_field_tables();
    projected_bath_hamiltonian_with(system, cluster, level, bath_m, &tables)
}

pub fn projected_bath_hamiltonian_with(
    system: &SpinSystem,
    cluster: &[usize],
    level: &Array1<C64>,
    bath_m: &[f64],
    tables: &MeanFieldTables,
) -> Result<Operator> {
    validate_cluster(system, cluster, bath_m)?;
    let nc = system.central.multiplicity();
    if level.len() != nc {
        return Err(Error::Validation(format!(
            "level vector has dimension {}, central space is {nc}",
            level.len()
        )));
    }
    let nrm: f64 = level.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("level vector is not normalized: |v| = {nrm}")));
    }
    let expect = |op: &Array2<C64>| -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..nc {
            for j in 0..nc {
                acc += level[i].conj() * op[[i, j]] * level[j];
            }
        }
        acc.re
    };

    let dims: Vec<usize> = cluster.iter().map(|&i| system.bath[i].multiplicity()).collect();
    let space = ProductSpace::new(if dims.is_empty() { vec![1] } else { dims.clone() });
    let mut h = Array2::<C64>::zeros((space.dim, space.dim));

    let he = build_electron_hamiltonian(&system.central, system.field_mt)?;
    let central_ops = spin_ops(system.central.spin)?;
    let (mf_central, mf_nuclear) = mean_field_sums(system, cluster, bath_m, tables);
    let s_exp = [expect(&central_ops.x), expect(&central_ops.y), expect(&central_ops.z)];
    let scalar = expect(&he) + mf_central * s_exp[2];
    for i in 0..space.dim {
        h[[i, i]] += c(scalar);
    }

    for (p, &i) in cluster.iter().enumerate() {
        let spin = &system.bath[i];
        let ops = spin_ops(spin.spin)?;
        space.add_op(&mut h, &[p], &ops.z, c(-spin.gyro_mhz_per_mt * system.field_mt));
        space.add_op(&mut h, &[p], &ops.z, c(mf_nuclear[p]));
        let a = &spin.hyperfine_mhz;
        for (l, il) in [&ops.x, &ops.y, &ops.z].into_iter().enumerate() {
            let coeff: f64 = (0..3).map(|k| s_exp[k] * a[k][l]).sum();
            if coeff != 0.0 {
                space.add_op(&mut h, &[p], il, c(coeff));
            }
        }
    }
    for p in 0..cluster.len() {
        for q in (p + 1)..cluster.len() {
            let t = system.dipolar(cluster[p], cluster[q])?.tensor_mhz;
            let ops_p = spin_ops(system.bath[cluster[p]].spin)?;
            let ops_q = spin_ops(system.bath[cluster[q]].spin)?;
            for (k, ik) in [&ops_p.x, &ops_p.y, &ops_p.z].into_iter().enumerate() {
                for (l, jl) in [&ops_q.x, &ops_q.y, &ops_q.z].into_iter().enumerate() {
                    if t[k][l] != 0.0 {
                        let op = linalg::kron(ik, jl);
                        space.add_op(&mut h, &[p, q], &op, c(t[k][l]));
                    }
                }
            }
        }
    }
    let dims_out = if dims.is_empty() { vec![1] } else { dims };
    Ok(Operator { mat: h, dims: dims_out })
}

/// How to pick the two qubit levels out of the electron spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum LevelStrategy {
    /// Pick the eigenvectors with maximal overlap onto the given Sz
    /// eigenstates (labels are m quantum numbers).
    Sz { a: f64, b: f64 },
    /// Pick eigenvectors by ascending-energy index.
    Energy { a: usize, b: usize },
}

/// Two orthonormal central-spin eigenvectors forming the qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitLevels {
    pub a: Array1<C64>,
    pub b: Array1<C64>,
    pub labels: (String, String),
}

impl QubitLevels {
    /// (|a> + |b>) / sqrt(2), the prepared superposition.
    pub fn superposition(&self) -> Array1<C64> {
        let inv = c(1.0 / 2.0f64.sqrt());
        let mut v = Array1::<C64>::zeros(self.a.len());
        for i in 0..v.len() {
            v[i] = (self.a[i] + self.b[i]) * inv;
        }
        v
    }
}

fn fix_phase(v: &mut Array1<C64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].norm() > v[best].norm() {
            best = i;
        }
    }
    let z = v[best];
    if z.norm() > 0.0 {
        let phase = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

fn pick_by_overlap(
    vecs: &Array2<C64>,
    target: &Array1<C64>,
    what: &str,
) -> Result<usize> {
    let n = vecs.ncols();
    let mut overlaps: Vec<(usize, f64)> = (0..n)
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..vecs.nrows() {
                acc += target[i].conj() * vecs[[i, k]];
            }
            (k, acc.norm())
        })
        .collect();
    overlaps.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    if n > 1 && (overlaps[0].1 - overlaps[1].1).abs() <= 1e-10 {
        return Err(Error::Degeneracy(format!(
            "ambiguous overlap while selecting {what}: |{:.6}| vs |{:.6}|",
            overlaps[0].1, overlaps[1].1
        )));
    }
    Ok(overlaps[0].0)
}

/// Selects the two qubit levels from the electron Hamiltonian.
///
/// With `previous` given (field sweeps), each level is instead the
/// eigenvector of maximal overlap with its predecessor, which tracks the
/// levels adiabatically through avoided crossings. Eigenvector phases are
/// fixed by making the largest-magnitude component real positive.
pub fn select_qubit_levels(
    he: &Array2<C64>,
    strategy: LevelStrategy,
    previous: Option<&QubitLevels>,
) -> Result<QubitLevels> {
    let n = he.nrows();
    let (_vals, vecs) = eigh(he, HERMITICITY_TOL.max(1e-9))?;
    let column = |k: usize| -> Array1<C64> {
        let mut v = Array1::<C64>::zeros(n);
        for i in 0..n {
            v[i] = vecs[[i, k]];
        }
        fix_phase(&mut v);
        v
    };

    let (ia, ib, labels) = if let Some(prev) = previous {
        let ia = pick_by_overlap(&vecs, &prev.a, "tracked level a")?;
        let ib = pick_by_overlap(&vecs, &prev.b, "tracked level b")?;
        (ia, ib, prev.labels.clone())
    } else {
        match strategy {
            LevelStrategy::Sz { a, b } => {
                let s = (n as f64 - 1.0) / 2.0;
                let basis_vec = |m: f64| -> Result<Array1<C64>> {
                    let idx = s - m;
                    if idx < -1e-9 || idx > (n - 1) as f64 + 1e-9 || idx.fract().abs() > 1e-9 {
                        return Err(Error::Validation(format!(
                            "Sz label {m} is not a level of a spin-{s} system"
                        )));
                    }
                    let mut v = Array1::<C64>::zeros(n);
                    v[idx.round() as usize] = c(1.0);
                    Ok(v)
                };
                let ia = pick_by_overlap(&vecs, &basis_vec(a)?, "Sz-labeled level a")?;
                let ib = pick_by_overlap(&vecs, &basis_vec(b)?, "Sz-labeled level b")?;
                (ia, ib, (format!("{a}"), format!("{b}")))
            }
            LevelStrategy::Energy { a, b } => {
                if a >= n || b >= n {
                    return Err(Error::Validation(format!(
                        "energy index out of range: ({a}, {b}) for {n} levels"
                    )));
                }
                (a, b, (format!("E{a}"), format!("E{b}")))
            }
        }
    };
    if ia == ib {
        return Err(Error::Degeneracy(
            "level selection resolved both qubit levels to the same eigenvector".into(),
        ));
    }
    Ok(QubitLevels { a: column(ia), b: column(ib), labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Pauli operator on the qubit subspace, embedded in the full central-spin
/// space (zero on all other levels).
pub fn qubit_pauli(levels: &QubitLevels, axis: Axis) -> Array2<C64> {
    let n = levels.a.len();
    let mut out = Array2::<C64>::zeros((n, n));
    let a = &levels.a;
    let b = &levels.b;
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = match axis {
                Axis::X => a[i] * b[j].conj() + b[i] * a[j].conj(),
                Axis::Y => (b[i] * a[j].conj() - a[i] * b[j].conj()) * C64::new(0.0, 1.0),
                Axis::Z => a[i] * a[j].conj() - b[i] * b[j].conj(),
            };
        }
    }
    out
}

/// Ideal instantaneous rotation `exp(-i sigma_axis phi / 2)` on the qubit
/// subspace, identity on the remaining central-spin levels.
pub fn qubit_rotation(levels: &QubitLevels, axis: Axis, angle: f64) -> Array2<C64> {
    let n = levels.a.len();
    let sigma = qubit_pauli(levels, axis);
    let half = angle / 2.0;
    // exp(-i sigma phi/2) = (1 - P) + cos(phi/2) P - i sin(phi/2) sigma,
    // P the projector onto span{a, b}
    let mut out = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = c(1.0);
    }
    let a = &levels.a;
    let b = &levels.b;
    for i in 0..n {
        for j in 0..n {
            let p = a[i] * a[j].conj() + b[i] * b[j].conj();
            out[[i, j]] += p * c(half.cos() - 1.0) - sigma[[i, j]] * C64::new(0.0, half.sin());
        }
    }
    out
}
