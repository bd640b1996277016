//! Per-cluster contributions, recursive division, product assembly, and
//! bath-state averaging.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_cluster_hamiltonian_with, projected_bath_hamiltonian_with, qubit_rotation, Axis,
    QubitLevels,
};
use crate::linalg::{self, eigh, mat_mul, mat_vec};
use crate::propagation::{initial_cluster_vector, PulseSequence, SequenceTemplate};
use crate::spin_model::{MeanFieldTables, SpinSystem};

use super::{ClusterSet, CoherenceCurve, CurveMeta, PureBathState, TimeGrid};

/// Small-denominator guard of the recursive division: a cluster factor whose
/// denominator magnitude falls below this is replaced by 1 and counted.
pub const EPS_DIV: f64 = 1e-10;

/// Normalized coherence above 1 + this margin counts as a division artifact.
pub const COHERENCE_CAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Every cluster contains the central spin explicitly.
    Gcce,
    /// Bath-only clusters conditioned on the two qubit levels.
    #[serde(rename = "cce")]
    Conventional,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gcce => "gcce",
            Method::Conventional => "cce",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub method: Method,
    pub order: usize,
    pub grid: TimeGrid,
    pub template: SequenceTemplate,
    pub populations: bool,
    pub eps_div: f64,
    pub coherence_cap: f64,
}

impl EngineOptions {
    pub fn new(method: Method, order: usize, grid: TimeGrid, template: SequenceTemplate) -> Self {
        EngineOptions {
            method,
            order,
            grid,
            template,
            populations: false,
            eps_div: EPS_DIV,
            coherence_cap: COHERENCE_CAP,
        }
    }
}

/// Assembled series for one pure bath state.
#[derive(Debug, Clone)]
pub struct StateCurves {
    pub ab: Vec<C64>,
    pub aa: Option<Vec<f64>>,
    pub bb: Option<Vec<f64>>,
    pub divergences: u64,
}

// element layout inside the memo: 0 = ab, 1 = aa, 2 = bb
type ElementSeries = Vec<Vec<C64>>;

/// Time evolution of one explicit cluster (central spin + nuclei) for a
/// fixed pure bath state, in the eigenbasis of the cluster Hamiltonian.
struct ClusterEvolution {
    bath_dim: usize,
    eigvals: Vec<f64>,
    vecs: Array2<C64>,
    w0: Vec<C64>,
    a_conj: Vec<C64>,
    b_conj: Vec<C64>,
    pulse_cache: BTreeMap<(Axis, u64), Array2<C64>>,
    levels: QubitLevels,
}

impl ClusterEvolution {
    fn new(
        system: &SpinSystem,
        tables: &MeanFieldTables,
        levels: &QubitLevels,
        cluster: &[usize],
        state: &PureBathState,
    ) -> Result<ClusterEvolution> {
        let h = build_cluster_hamiltonian_with(system, cluster, &state.projections, tables)?;
        let (vals, vecs) = eigh(&h.mat, 1e-9)?;
        let cluster_dims: Vec<usize> = h.dims[1..].to_vec();
        let cluster_m: Vec<f64> = cluster.iter().map(|&i| state.projections[i]).collect();
        let psi0 = initial_cluster_vector(levels, &cluster_dims, &cluster_m)?;
        let dim = h.dim();
        let mut w0 = vec![C64::new(0.0, 0.0); dim];
        // w0 = V^dag psi0
        for j in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..dim {
                acc += vecs[[i, j]].conj() * psi0[i];
            }
            w0[j] = acc;
        }
        Ok(ClusterEvolution {
            bath_dim: cluster_dims.iter().product(),
            eigvals: vals.to_vec(),
            vecs,
            w0,
            a_conj: levels.a.iter().map(|v| v.conj()).collect(),
            b_conj: levels.b.iter().map(|v| v.conj()).collect(),
            pulse_cache: BTreeMap::new(),
            levels: levels.clone(),
        })
    }

    fn pulse_matrix(&mut self, axis: Axis, angle: f64) -> &Array2<C64> {
        let key = (axis, angle.to_bits());
        if !self.pulse_cache.contains_key(&key) {
            let rot = qubit_rotation(&self.levels, axis, angle);
            let embedded = linalg::kron(&rot, &linalg::identity(self.bath_dim));
            let tilded = mat_mul(
                &linalg::dagger(&self.vecs),
                &mat_mul(&embedded, &self.vecs),
            );
            self.pulse_cache.insert(key, tilded);
        }
        &self.pulse_cache[&key]
    }

    fn apply_phases(&self, w: &mut [C64], tau: f64) {
        for (x, &lambda) in w.iter_mut().zip(&self.eigvals) {
            *x *= C64::from_polar(1.0, -2.0 * PI * lambda * tau);
        }
    }

    /// (rho_ab, rho_aa, rho_bb) at every grid time under the sequence
    /// template realized for that total time.
    fn element_series(&mut self, template: &SequenceTemplate, times: &[f64]) -> ElementSeries {
        let dim = self.w0.len();
        let nc = self.a_conj.len();
        let mut out: ElementSeries = vec![Vec::with_capacity(times.len()); 3];
        let mut w = vec![C64::new(0.0, 0.0); dim];
        let mut scratch = vec![C64::new(0.0, 0.0); dim];
        let mut psi = vec![C64::new(0.0, 0.0); dim];
        for &t in times {
            let seq: PulseSequence = template.realize(t);
            w.copy_from_slice(&self.w0);
            for _ in 0..seq.repeats {
                for event in &seq.events {
                    self.apply_phases(&mut w, event.delay_us);
                    if event.angle_rad != 0.0 {
                        let p = self.pulse_matrix(event.axis, event.angle_rad).clone();
                        mat_vec(&p, &w, &mut scratch);
                        w.copy_from_slice(&scratch);
                    }
                }
                self.apply_phases(&mut w, seq.tail_us);
            }
            mat_vec(&self.vecs, &w, &mut psi);
            let mut ab = C64::new(0.0, 0.0);
            let mut aa = 0.0f64;
            let mut bb = 0.0f64;
            for m in 0..self.bath_dim {
                let mut alpha = C64::new(0.0, 0.0);
                let mut beta = C64::new(0.0, 0.0);
                for s in 0..nc {
                    let amp = psi[s * self.bath_dim + m];
                    alpha += self.a_conj[s] * amp;
                    beta += self.b_conj[s] * amp;
                }
                ab += alpha * beta.conj();
                aa += alpha.norm_sqr();
                bb += beta.norm_sqr();
            }
            out[0].push(ab);
            out[1].push(C64::new(aa, 0.0));
            out[2].push(C64::new(bb, 0.0));
        }
        out
    }
}

/// Level-conditioned evolution of one bath-only cluster (projected method).
struct ProjectedEvolution {
    dim: usize,
    eig: [(Vec<f64>, Array2<C64>); 2],
    j0: Vec<C64>,
}

impl ProjectedEvolution {
    fn new(
        system: &SpinSystem,
        tables: &MeanFieldTables,
        levels: &QubitLevels,
        cluster: &[usize],
        state: &PureBathState,
    ) -> Result<ProjectedEvolution> {
        let ha = projected_bath_hamiltonian_with(system, cluster, &levels.a, &state.projections, tables)?;
        let hb = projected_bath_hamiltonian_with(system, cluster, &levels.b, &state.projections, tables)?;
        let (va, ua) = eigh(&ha.mat, 1e-9)?;
        let (vb, ub) = eigh(&hb.mat, 1e-9)?;
        let dim = ha.dim();
        // initial bath basis state |J> restricted to the cluster
        let mut idx = 0usize;
        for (slot, &i) in cluster.iter().enumerate() {
            let d = system.bath[i].multiplicity();
            let k = (system.bath[i].spin - state.projections[i]).round() as usize;
            let _ = slot;
            idx = idx * d + k;
        }
        let mut j0 = vec![C64::new(0.0, 0.0); dim];
        j0[idx] = C64::new(1.0, 0.0);
        Ok(ProjectedEvolution { dim, eig: [(va.to_vec(), ua), (vb.to_vec(), ub)], j0 })
    }

    fn evolve_branch(&self, level: usize, tau: f64, w: &mut Vec<C64>, scratch: &mut Vec<C64>) {
        let (vals, vecs) = &self.eig[level];
        let dim = self.dim;
        // w <- V E(tau) V^dag w
        for j in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..dim {
                acc += vecs[[i, j]].conj() * w[i];
            }
            scratch[j] = acc * C64::from_polar(1.0, -2.0 * PI * vals[j] * tau);
        }
        for i in 0..dim {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..dim {
                acc += vecs[[i, j]] * scratch[j];
            }
            w[i] = acc;
        }
    }

    /// rho_ab(t) for the pure-dephasing ansatz. Pulses must be diagonal or
    /// antidiagonal in the qubit basis (z rotations or pi flips).
    fn series(&self, template: &SequenceTemplate, times: &[f64]) -> Result<Vec<C64>> {
        let mut out = Vec::with_capacity(times.len());
        let mut scratch = vec![C64::new(0.0, 0.0); self.dim];
        for &t in times {
            let seq = template.realize(t);
            let mut w = [self.j0.clone(), self.j0.clone()];
            let mut level = [0usize, 1usize];
            let mut coeff = [C64::new(1.0, 0.0); 2];
            for _ in 0..seq.repeats {
                for event in &seq.events {
                    for br in 0..2 {
                        self.evolve_branch(level[br], event.delay_us, &mut w[br], &mut scratch);
                    }
                    if event.angle_rad != 0.0 {
                        let half = event.angle_rad / 2.0;
                        let (cosh, sinh) = (half.cos(), half.sin());
                        // 2x2 rotation in the (a, b) basis
                        let r = match event.axis {
                            Axis::X => [
                                [C64::new(cosh, 0.0), C64::new(0.0, -sinh)],
                                [C64::new(0.0, -sinh), C64::new(cosh, 0.0)],
                            ],
                            Axis::Y => [
                                [C64::new(cosh, 0.0), C64::new(-sinh, 0.0)],
                                [C64::new(sinh, 0.0), C64::new(cosh, 0.0)],
                            ],
                            Axis::Z => [
                                [C64::new(cosh, -sinh), C64::new(0.0, 0.0)],
                                [C64::new(0.0, 0.0), C64::new(cosh, sinh)],
                            ],
                        };
                        for br in 0..2 {
                            let from = level[br];
                            let stay = r[from][from];
                            let flip = r[1 - from][from];
                            if stay.norm() < 1e-9 {
                                level[br] = 1 - from;
                                coeff[br] *= flip;
                            } else if flip.norm() < 1e-9 {
                                coeff[br] *= stay;
                            } else {
                                return Err(Error::Validation(
                                    "projected method supports only pi pulses and z rotations"
                                        .into(),
                                ));
                            }
                        }
                    }
                }
                for br in 0..2 {
                    self.evolve_branch(level[br], seq.tail_us, &mut w[br], &mut scratch);
                }
            }
            let overlap = |x: &[C64], y: &[C64]| -> C64 {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..self.dim {
                    acc += x[i].conj() * y[i];
                }
                acc
            };
            let value = if level[0] == 0 {
                // even number of flips
                coeff[0] * coeff[1].conj() * overlap(&w[1], &w[0]) * 0.5
            } else {
                coeff[1] * coeff[0].conj() * overlap(&w[0], &w[1]) * 0.5
            };
            out.push(value);
        }
        Ok(out)
    }
}

/// Memoized cluster contributions for one pure bath state.
pub struct StateEngine<'a> {
    system: &'a SpinSystem,
    tables: &'a MeanFieldTables,
    levels: &'a QubitLevels,
    opts: &'a EngineOptions,
    state: &'a PureBathState,
    times: Vec<f64>,
    zero: Option<ElementSeries>,
    memo: Vec<Option<ElementSeries>>,
    pub divergences: u64,
}

impl<'a> StateEngine<'a> {
    pub fn new(
        system: &'a SpinSystem,
        tables: &'a MeanFieldTables,
        levels: &'a QubitLevels,
        opts: &'a EngineOptions,
        set: &ClusterSet,
        state: &'a PureBathState,
    ) -> Result<StateEngine<'a>> {
        opts.grid.validate()?;
        opts.template.validate()?;
        if opts.method == Method::Conventional && !opts.template.is_pi_only() {
            return Err(Error::Validation(
                "the projected (cce) method requires pi pulses".into(),
            ));
        }
        if state.projections.len() != system.bath.len() {
            return Err(Error::Validation("bath state does not cover the bath".into()));
        }
        Ok(StateEngine {
            system,
            tables,
            levels,
            opts,
            state,
            times: opts.grid.times(),
            zero: None,
            memo: vec![None; set.clusters.len()],
            divergences: 0,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn raw_series(&mut self, spins: &[usize]) -> Result<ElementSeries> {
        match self.opts.method {
            Method::Gcce => {
                let mut ev =
                    ClusterEvolution::new(self.system, self.tables, self.levels, spins, self.state)?;
                Ok(ev.element_series(&self.opts.template, &self.times))
            }
            Method::Conventional => {
                let ev =
                    ProjectedEvolution::new(self.system, self.tables, self.levels, spins, self.state)?;
                Ok(vec![ev.series(&self.opts.template, &self.times)?])
            }
        }
    }

    /// The free-central-spin factor (the empty cluster), mean-field shifted
    /// by every bath spin.
    pub fn zero_contribution(&mut self) -> Result<&ElementSeries> {
        if self.zero.is_none() {
            let raw = self.raw_series(&[])?;
            self.zero = Some(raw);
        }
        Ok(self.zero.as_ref().unwrap())
    }

    /// The recursive cluster factor: raw element divided by the product of
    /// all sub-cluster factors (including the free-spin one).
    pub fn contribution(&mut self, set: &ClusterSet, idx: usize) -> Result<&ElementSeries> {
        // sub-clusters always precede their supersets in the sorted set
        for sub in set.clusters[idx].subclusters.clone() {
            if self.memo[sub].is_none() {
                self.compute_one(set, sub)?;
            }
        }
        if self.memo[idx].is_none() {
            self.compute_one(set, idx)?;
        }
        Ok(self.memo[idx].as_ref().unwrap())
    }

    fn compute_one(&mut self, set: &ClusterSet, idx: usize) -> Result<()> {
        self.zero_contribution()?;
        for sub in set.clusters[idx].subclusters.clone() {
            if self.memo[sub].is_none() {
                self.compute_one(set, sub)?;
            }
        }
        let raw = self.raw_series(&set.clusters[idx].spins)?;
        let n_el = raw.len();
        let n_t = self.times.len();
        let mut tilde: ElementSeries = vec![vec![C64::new(0.0, 0.0); n_t]; n_el];
        let eps = self.opts.eps_div;
        for el in 0..n_el {
            for t in 0..n_t {
                let mut denom = self.zero.as_ref().unwrap()[el][t];
                for &sub in &set.clusters[idx].subclusters {
                    denom *= self.memo[sub].as_ref().unwrap()[el][t];
                }
                if denom.norm() < eps {
                    self.divergences += 1;
                    tilde[el][t] = C64::new(1.0, 0.0);
                } else {
                    tilde[el][t] = raw[el][t] / denom;
                }
            }
        }
        self.memo[idx] = Some(tilde);
        Ok(())
    }

    /// Pointwise product of the free-spin factor and every cluster factor
    /// up to `order`, for this bath state.
    pub fn assemble(&mut self, set: &ClusterSet, order: usize) -> Result<StateCurves> {
        if order > set.order {
            return Err(Error::Validation(format!(
                "assembly order {order} exceeds the enumerated order {}",
                set.order
            )));
        }
        self.zero_contribution()?;
        for idx in 0..set.clusters.len() {
            if set.clusters[idx].spins.len() <= order && self.memo[idx].is_none() {
                self.compute_one(set, idx)?;
            }
        }
        let n_el = self.zero.as_ref().unwrap().len();
        let n_t = self.times.len();
        let mut elements: ElementSeries = self.zero.clone().unwrap();
        for idx in 0..set.clusters.len() {
            if set.clusters[idx].spins.len() > order {
                continue;
            }
            let tilde = self.memo[idx].as_ref().unwrap();
            for el in 0..n_el {
                for t in 0..n_t {
                    elements[el][t] *= tilde[el][t];
                }
            }
        }
        // coherence-cap accounting on the normalized magnitude
        let base = elements[0][0].norm();
        if base > self.opts.eps_div {
            for t in 0..n_t {
                if elements[0][t].norm() / base > 1.0 + self.opts.coherence_cap {
                    self.divergences += 1;
                }
            }
        }
        let (aa, bb) = if self.opts.method == Method::Gcce {
            (
                Some(elements[1].iter().map(|v| v.re).collect()),
                Some(elements[2].iter().map(|v| v.re).collect()),
            )
        } else {
            (None, None)
        };
        Ok(StateCurves { ab: elements.swap_remove(0), aa, bb, divergences: self.divergences })
    }
}

/// Weighted pointwise average of per-state series into one curve.
pub fn mixed_bath_average(
    times: &[f64],
    curves: &[StateCurves],
    weights: &[f64],
    mut meta: CurveMeta,
) -> Result<CoherenceCurve> {
    if curves.is_empty() {
        return Err(Error::Validation("no curves to average".into()));
    }
    if curves.len() != weights.len() {
        return Err(Error::Validation("curve/weight length mismatch".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("weights sum to {wsum}, expected 1")));
    }
    let n_t = times.len();
    if curves.iter().any(|c| c.ab.len() != n_t) {
        return Err(Error::Validation("time grid mismatch between curves".into()));
    }
    let mut raw = vec![C64::new(0.0, 0.0); n_t];
    let has_pops = curves.iter().all(|c| c.aa.is_some());
    let mut pop_a = vec![0.0f64; n_t];
    let mut pop_b = vec![0.0f64; n_t];
    for (c, &w) in curves.iter().zip(weights) {
        for t in 0..n_t {
            raw[t] += c.ab[t] * w;
        }
        if has_pops {
            for t in 0..n_t {
                pop_a[t] += c.aa.as_ref().unwrap()[t] * w;
                pop_b[t] += c.bb.as_ref().unwrap()[t] * w;
            }
        }
        meta.divergence_count += c.divergences;
    }
    let base = raw[0];
    if base.norm() < 1e-14 {
        return Err(Error::Numerical("initial coherence vanished; cannot normalize".into()));
    }
    let normalized = raw.iter().map(|v| v / base).collect();
    Ok(CoherenceCurve {
        time_us: times.to_vec(),
        raw,
        normalized,
        pop_a: if has_pops { Some(pop_a) } else { None },
        pop_b: if has_pops { Some(pop_b) } else { None },
        meta,
    })
}

pub fn run_expansion(
    system: &SpinSystem,
    levels: &QubitLevels,
    set: &ClusterSet,
    states: &[PureBathState],
    opts: &EngineOptions,
    seed: u64,
) -> Result<CoherenceCurve> {
    let tables = system.mean_field_tables();
    let times = opts.grid.times();
    let per_state: Vec<Result<StateCurves>> = states
        .par_iter()
        .map(|state| {
            let mut engine = StateEngine::new(system, &tables, levels, opts, set, state)?;
            engine.assemble(set, opts.order)
        })
        .collect();
    let mut curves = Vec::with_capacity(per_state.len());
    for r in per_state {
        curves.push(r?);
    }
    let weights: Vec<f64> = states.iter().map(|s| s.weight).collect();
    let meta = CurveMeta {
        method: opts.method.name().to_string(),
        order: opts.order,
        samples: states.len(),
        seed,
        sequence: opts.template.name().to_string(),
        divergence_count: 0,
    };
    let curve = mixed_bath_average(&times, &curves, &weights, meta)?;
    curve.validate()?;
    Ok(curve)
}

/// Generalized expansion: sampling, per-state assembly, mixed-state average.
pub fn run_gcce(
    system: &SpinSystem,
    levels: &QubitLevels,
    set: &ClusterSet,
    states: &[PureBathState],
    opts: &EngineOptions,
    seed: u64,
) -> Result<CoherenceCurve> {
    let opts = EngineOptions { method: Method::Gcce, ..opts.clone() };
    run_expansion(system, levels, set, states, &opts, seed)
}

/// Projected (pure-dephasing) expansion over the same bath states.
pub fn conventional_cce(
    system: &SpinSystem,
    levels: &QubitLevels,
    set: &ClusterSet,
    states: &[PureBathState],
    opts: &EngineOptions,
    seed: u64,
) -> Result<CoherenceCurve> {
    let opts = EngineOptions { method: Method::Conventional, ..opts.clone() };
    run_expansion(system, levels, set, states, &opts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cce::{enumerate_clusters, exhaustive_bath_states, sample_bath_states};
    use crate::constants::GYRO_ELECTRON_MHZ_PER_MT;
    use crate::dense::{dense_curve, BathInit};
    use crate::hamiltonian::{build_electron_hamiltonian, select_qubit_levels, LevelStrategy};
    use crate::spin_model::{BathSpin, CentralSpin};
    use approx::assert_abs_diff_eq;

    fn kk_central() -> CentralSpin {
        CentralSpin {
            spin: 1.0,
            zfs_d_mhz: 1305.0,
            zfs_e_mhz: 0.0,
            gyro_mhz_per_mt: GYRO_ELECTRON_MHZ_PER_MT,
            position_nm: [0.0; 3],
        }
    }

    fn kh_central() -> CentralSpin {
        CentralSpin {
            spin: 1.0,
            zfs_d_mhz: 1334.0,
            zfs_e_mhz: 18.4,
            gyro_mhz_per_mt: GYRO_ELECTRON_MHZ_PER_MT,
            position_nm: [0.0; 3],
        }
    }

    fn carbon(pos: [f64; 3]) -> BathSpin {
        BathSpin {
            isotope: "13C".into(),
            spin: 0.5,
            gyro_mhz_per_mt: 0.0107084,
            position_nm: pos,
            hyperfine_mhz: [[0.0; 3]; 3],
        }
    }

    /// Nuclear spin with zero gyromagnetic ratio: no Zeeman, no dipolar
    /// coupling, only the explicitly set hyperfine tensor.
    fn inert_spin(pos: [f64; 3], hf: [[f64; 3]; 3]) -> BathSpin {
        BathSpin {
            isotope: "13C".into(),
            spin: 0.5,
            gyro_mhz_per_mt: 0.0,
            position_nm: pos,
            hyperfine_mhz: hf,
        }
    }

    fn sz_levels(sys: &SpinSystem, a: f64, b: f64) -> QubitLevels {
        let he = build_electron_hamiltonian(&sys.central, sys.field_mt).unwrap();
        select_qubit_levels(&he, LevelStrategy::Sz { a, b }, None).unwrap()
    }

    fn clock_levels(sys: &SpinSystem) -> QubitLevels {
        let he = build_electron_hamiltonian(&sys.central, sys.field_mt).unwrap();
        select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap()
    }

    fn opts(method: Method, order: usize, t_max: f64, points: usize) -> EngineOptions {
        EngineOptions::new(
            method,
            order,
            TimeGrid { t_max_us: t_max, points },
            SequenceTemplate::Ramsey,
        )
    }

    #[test]
    fn decoupled_spin_contributes_unity() {
        let mut bath = vec![carbon([0.0, 0.0, 0.6])];
        bath[0].gyro_mhz_per_mt = 0.0107084;
        let mut sys = SpinSystem::new(kk_central(), bath, 2.0).unwrap();
        sys.bath[0].hyperfine_mhz = [[0.0; 3]; 3]; // decoupled from the qubit
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let tables = sys.mean_field_tables();
        let state = PureBathState { projections: vec![0.5], index: 0, weight: 1.0 };
        let o = opts(Method::Gcce, 1, 5.0, 41);
        let mut eng = StateEngine::new(&sys, &tables, &levels, &o, &set, &state).unwrap();
        let tilde = eng.contribution(&set, 0).unwrap();
        for v in &tilde[0] {
            assert_abs_diff_eq!((v - C64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn free_clock_qubit_is_unit_phasor_at_zero_field_gap() {
        let sys = SpinSystem::new(kh_central(), vec![], 0.0).unwrap();
        let levels = clock_levels(&sys);
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap_or(ClusterSet {
            clusters: vec![],
            order: 1,
            pair_cutoff_nm: 0.8,
        });
        let tables = sys.mean_field_tables();
        let state = PureBathState { projections: vec![], index: 0, weight: 1.0 };
        let dt = 1.0e-4;
        let o = opts(Method::Gcce, 1, 3.0 * dt, 4);
        let mut eng = StateEngine::new(&sys, &tables, &levels, &o, &set, &state).unwrap();
        let zero = eng.zero_contribution().unwrap();
        let mut prev_phase = None;
        for v in &zero[0] {
            assert_abs_diff_eq!(v.norm(), 0.5, epsilon = 1e-12);
            if let Some(p) = prev_phase {
                let df: f64 = (v.arg() - p) / (2.0 * std::f64::consts::PI * dt);
                assert_abs_diff_eq!(df.abs(), 1334.0 + 18.4, epsilon = 0.1);
            }
            prev_phase = Some(v.arg());
        }
    }

    fn secular_noninteracting_system() -> SpinSystem {
        let bath = vec![
            inert_spin([0.4, 0.0, 0.0], [[0.0; 3], [0.0; 3], [0.31, -0.12, 0.83]]),
            inert_spin([0.0, 0.5, 0.0], [[0.0; 3], [0.0; 3], [-0.21, 0.44, 0.56]]),
            inert_spin([0.0, 0.0, 0.45], [[0.0; 3], [0.0; 3], [0.09, 0.33, -0.71]]),
            inert_spin([0.3, 0.3, 0.2], [[0.0; 3], [0.0; 3], [0.5, 0.0, 0.35]]),
        ];
        SpinSystem::new(kk_central(), bath, 3.0).unwrap()
    }

    #[test]
    fn noninteracting_secular_bath_pairs_contribute_unity() {
        let sys = secular_noninteracting_system();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 5.0).unwrap();
        assert!(set.count_of_size(2) > 0);
        let tables = sys.mean_field_tables();
        let state = PureBathState { projections: vec![0.5, -0.5, 0.5, -0.5], index: 0, weight: 1.0 };
        let o = opts(Method::Gcce, 2, 10.0, 51);
        let mut eng = StateEngine::new(&sys, &tables, &levels, &o, &set, &state).unwrap();
        for (idx, c) in set.clusters.iter().enumerate() {
            if c.spins.len() != 2 {
                continue;
            }
            let tilde = eng.contribution(&set, idx).unwrap()[0].clone();
            for v in &tilde {
                assert_abs_diff_eq!((v - C64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn order_one_equals_order_two_on_noninteracting_bath() {
        let sys = secular_noninteracting_system();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 5.0).unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let o = opts(Method::Gcce, 2, 10.0, 51);
        let c2 = run_gcce(&sys, &levels, &set, &states, &o, 0).unwrap();
        let o1 = EngineOptions { order: 1, ..o };
        let c1 = run_gcce(&sys, &levels, &set, &states, &o1, 0).unwrap();
        for t in 0..c1.normalized.len() {
            assert_abs_diff_eq!((c1.normalized[t] - c2.normalized[t]).norm(), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_spin_bath_is_exact_at_any_order() {
        let bath = vec![carbon([0.0, 0.0, 0.45])];
        let sys = SpinSystem::new(kh_central(), bath, 0.3).unwrap();
        let levels = clock_levels(&sys);
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let grid = TimeGrid { t_max_us: 20.0, points: 81 };
        let states = exhaustive_bath_states(&sys).unwrap();
        let o = EngineOptions::new(Method::Gcce, 1, grid, SequenceTemplate::Ramsey);
        let cce_curve = run_gcce(&sys, &levels, &set, &states, &o, 0).unwrap();
        // exact two-body reference, averaged over the same two pure states
        for (st, _) in states.iter().zip(0..) {
            let d = dense_curve(&sys, &levels, &SequenceTemplate::Ramsey, grid, BathInit::Pure(st))
                .unwrap();
            let _ = d;
        }
        let exact = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Ramsey,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        for t in 0..grid.points {
            assert_abs_diff_eq!(
                (cce_curve.raw[t] - exact.raw[t]).norm(),
                0.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn small_bath_order_two_tracks_dense_reference() {
        // five-spin clock-transition bath, exhaustive states: the residual
        // difference is pure truncation error of the expansion
        let bath = vec![
            carbon([0.42, 0.1, 0.2]),
            carbon([-0.3, 0.4, 0.3]),
            carbon([0.2, -0.5, 0.4]),
            carbon([-0.4, -0.2, 0.5]),
            carbon([0.1, 0.5, -0.4]),
        ];
        let sys = SpinSystem::new(kh_central(), bath, 0.0).unwrap();
        let levels = clock_levels(&sys);
        let set = enumerate_clusters(&sys, 2, 1.5).unwrap();
        let grid = TimeGrid { t_max_us: 30.0, points: 61 };
        let states = exhaustive_bath_states(&sys).unwrap();
        let o = EngineOptions::new(Method::Gcce, 2, grid, SequenceTemplate::Ramsey);
        let curve = run_gcce(&sys, &levels, &set, &states, &o, 0).unwrap();
        let exact = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Ramsey,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        let mut max_dev = 0.0f64;
        for t in 0..grid.points {
            max_dev = max_dev.max((curve.normalized[t].norm() - exact.normalized[t].norm()).abs());
        }
        assert!(max_dev < 0.02, "order-2 truncation error {max_dev}");
    }

    #[test]
    fn conventional_single_secular_spin_phasor_and_thermal_cosine() {
        let azz = 0.83;
        let bath = vec![inert_spin([0.0, 0.0, 0.5], [[0.0; 3], [0.0; 3], [0.0, 0.0, azz]])];
        let sys = SpinSystem::new(kk_central(), bath, 2.0).unwrap();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let tables = sys.mean_field_tables();
        let grid = TimeGrid { t_max_us: 6.0, points: 121 };
        let o = EngineOptions::new(Method::Conventional, 1, grid, SequenceTemplate::Ramsey);
        // with the mean field on, the secular shift lives entirely in the
        // free-spin factor and the cluster factor is exactly 1
        let up = PureBathState { projections: vec![0.5], index: 0, weight: 1.0 };
        let dn = PureBathState { projections: vec![-0.5], index: 1, weight: 1.0 };
        let mut eng = StateEngine::new(&sys, &tables, &levels, &o, &set, &up).unwrap();
        let tilde = eng.contribution(&set, 0).unwrap()[0].clone();
        for v in &tilde {
            assert_abs_diff_eq!((v - C64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-9);
        }
        // each pure state gives a unit phasor; up vs down differ by the
        // projection difference, a beat at A_zz
        let times = grid.times();
        let c_up = conventional_cce(&sys, &levels, &set, &[up], &o, 0).unwrap();
        let c_dn = conventional_cce(&sys, &levels, &set, &[dn], &o, 0).unwrap();
        for (t, (u, d)) in times.iter().zip(c_up.normalized.iter().zip(&c_dn.normalized)) {
            assert_abs_diff_eq!(u.norm(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(d.norm(), 1.0, epsilon = 1e-9);
            let beat = u * d.conj();
            let want = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * azz * t);
            assert_abs_diff_eq!((beat - want).norm(), 0.0, epsilon = 1e-8);
        }
        // infinite-temperature average: |L| = |cos(pi A_zz t)|
        let states = exhaustive_bath_states(&sys).unwrap();
        let curve = conventional_cce(&sys, &levels, &set, &states, &o, 0).unwrap();
        for (t, v) in times.iter().zip(&curve.normalized) {
            let want = (std::f64::consts::PI * azz * t).cos().abs();
            assert_abs_diff_eq!(v.norm(), want, epsilon = 1e-8);
        }
    }

    #[test]
    fn secular_bath_hahn_echo_refocuses_both_methods() {
        let sys = secular_noninteracting_system();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 5.0).unwrap();
        let states = sample_bath_states(&sys, 8, 7).unwrap();
        let grid = TimeGrid { t_max_us: 40.0, points: 26 };
        for method in [Method::Gcce, Method::Conventional] {
            let o = EngineOptions::new(method, 2, grid, SequenceTemplate::Hahn);
            let curve = run_expansion(&sys, &levels, &set, &states, &o, 0).unwrap();
            for v in &curve.normalized {
                assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn flip_flopping_pair_hahn_matches_dense_oracle() {
        // two carbons close enough to flip-flop, secular hyperfine keeps the
        // Hamiltonian block-diagonal so the projected method is exact
        let mut bath = vec![carbon([0.0, 0.0, 0.35]), carbon([0.0, 0.25, 0.35])];
        bath[0].hyperfine_mhz = [[0.0; 3], [0.0; 3], [0.1, 0.0, 1.9]];
        bath[1].hyperfine_mhz = [[0.0; 3], [0.0; 3], [0.0, -0.2, 0.7]];
        let sys = SpinSystem::new(kk_central(), bath, 50.0).unwrap();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 0.8).unwrap();
        assert_eq!(set.count_of_size(2), 1);
        let grid = TimeGrid { t_max_us: 4000.0, points: 41 };
        let states = exhaustive_bath_states(&sys).unwrap();
        let o = EngineOptions::new(Method::Conventional, 2, grid, SequenceTemplate::Hahn);
        let curve = conventional_cce(&sys, &levels, &set, &states, &o, 0).unwrap();
        let exact = dense_curve(
            &sys,
            &levels,
            &SequenceTemplate::Hahn,
            grid,
            BathInit::InfiniteTemperature,
        )
        .unwrap();
        // the pair must actually decohere somewhere in the window
        assert!(curve.normalized.iter().any(|v| v.norm() < 0.99));
        for t in 0..grid.points {
            assert_abs_diff_eq!(
                curve.normalized[t].norm(),
                exact.normalized[t].norm(),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn empty_bath_keeps_unit_coherence() {
        let sys = SpinSystem::new(kk_central(), vec![], 20.0).unwrap();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 0.8).unwrap();
        let states = vec![PureBathState { projections: vec![], index: 0, weight: 1.0 }];
        let o = opts(Method::Gcce, 2, 50.0, 26);
        let curve = run_gcce(&sys, &levels, &set, &states, &o, 0).unwrap();
        for v in &curve.normalized {
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn pure_dephasing_limit_keeps_populations_constant() {
        let sys = secular_noninteracting_system();
        let levels = sz_levels(&sys, 0.0, 1.0);
        let set = enumerate_clusters(&sys, 2, 5.0).unwrap();
        let states = sample_bath_states(&sys, 6, 3).unwrap();
        let mut o = opts(Method::Gcce, 2, 20.0, 41);
        o.populations = true;
        let curve = run_gcce(&sys, &levels, &set, &states, &o, 0).unwrap();
        let pa = curve.pop_a.as_ref().unwrap();
        for v in pa {
            assert_abs_diff_eq!(*v, pa[0], epsilon = 1e-6);
        }
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let bath = vec![carbon([0.4, 0.1, 0.3]), carbon([-0.2, 0.4, 0.25])];
        let sys = SpinSystem::new(kh_central(), bath, 0.5).unwrap();
        let levels = clock_levels(&sys);
        let set = enumerate_clusters(&sys, 2, 0.8).unwrap();
        let states = sample_bath_states(&sys, 10, 77).unwrap();
        let o = opts(Method::Gcce, 2, 25.0, 61);
        let c1 = run_gcce(&sys, &levels, &set, &states, &o, 77).unwrap();
        let c2 = run_gcce(&sys, &levels, &set, &states, &o, 77).unwrap();
        assert_eq!(c1.raw, c2.raw);
        assert_eq!(c1.normalized, c2.normalized);
    }

    #[test]
    fn average_of_identical_curves_is_the_curve() {
        let times = vec![0.0, 1.0, 2.0];
        let series = vec![C64::new(0.5, 0.0), C64::new(0.3, 0.1), C64::new(0.1, -0.2)];
        let mk = || StateCurves { ab: series.clone(), aa: None, bb: None, divergences: 0 };
        let meta = CurveMeta {
            method: "gcce".into(),
            order: 1,
            samples: 2,
            seed: 0,
            sequence: "ramsey".into(),
            divergence_count: 0,
        };
        let avg = mixed_bath_average(&times, &[mk(), mk()], &[0.5, 0.5], meta).unwrap();
        assert_eq!(avg.raw, series);
    }

    #[test]
    fn symmetric_phasor_pair_averages_to_cosine() {
        let times: Vec<f64> = (0..50).map(|k| 0.1 * k as f64).collect();
        let omega = 2.7; // rad/us
        let plus = StateCurves {
            ab: times.iter().map(|t| C64::from_polar(0.5, omega * t)).collect(),
            aa: None,
            bb: None,
            divergences: 0,
        };
        let minus = StateCurves {
            ab: times.iter().map(|t| C64::from_polar(0.5, -omega * t)).collect(),
            aa: None,
            bb: None,
            divergences: 0,
        };
        let meta = CurveMeta {
            method: "gcce".into(),
            order: 1,
            samples: 2,
            seed: 0,
            sequence: "ramsey".into(),
            divergence_count: 0,
        };
        let avg = mixed_bath_average(&times, &[plus, minus], &[0.5, 0.5], meta).unwrap();
        for (t, v) in times.iter().zip(&avg.raw) {
            assert_abs_diff_eq!(v.re, 0.5 * (omega * t).cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let meta = CurveMeta {
            method: "gcce".into(),
            order: 1,
            samples: 1,
            seed: 0,
            sequence: "ramsey".into(),
            divergence_count: 0,
        };
        let c = StateCurves { ab: vec![C64::new(0.5, 0.0); 3], aa: None, bb: None, divergences: 0 };
        assert!(mixed_bath_average(&[0.0, 1.0], &[c], &[1.0], meta).is_err());
    }
}
