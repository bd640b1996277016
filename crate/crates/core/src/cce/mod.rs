//! Cluster-expansion engine: cluster enumeration, per-cluster contributions
//! with recursive division, Monte-Carlo bath-state sampling and averaging.

mod engine;
mod enumerate;
mod sampling;

pub use engine::{
    conventional_cce, mixed_bath_average, run_expansion, run_gcce, EngineOptions, Method,
    StateCurves, StateEngine, COHERENCE_CAP, EPS_DIV,
};
pub use enumerate::enumerate_clusters;
pub use sampling::{exhaustive_bath_states, sample_bath_states, EXHAUSTIVE_STATE_CAP};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid starting at zero, in us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_max_us: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max_us > 0.0) {
            return Err(Error::Validation(format!(
                "time grid must extend past zero, got t_max = {}",
                self.t_max_us
            )));
        }
        if self.points < 2 {
            return Err(Error::Validation("time grid needs at least two points".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.points;
        (0..n).map(|k| self.t_max_us * k as f64 / (n - 1) as f64).collect()
    }
}

/// One cluster of bath spins treated exactly together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Bath indices, strictly ascending.
    pub spins: Vec<usize>,
    /// Indices (into [`ClusterSet::clusters`]) of every proper sub-cluster
    /// that is itself part of the expansion.
    pub subclusters: Vec<usize>,
}

/// All clusters up to the requested order, sorted by size then
/// lexicographically, closed under the sub-cluster relation used by the
/// recursive division.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub order: usize,
    pub pair_cutoff_nm: f64,
}

impl ClusterSet {
    pub fn of_size(&self, size: usize) -> impl Iterator<Item = (usize, &Cluster)> {
        self.clusters
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.spins.len() == size)
    }

    pub fn count_of_size(&self, size: usize) -> usize {
        self.of_size(size).count()
    }
}

/// One pure product state of the bath: a definite Iz eigenvalue per nucleus.
#[derive(Debug, Clone, PartialEq)]
pub struct PureBathState {
    /// <Iz> per bath spin, in bath order.
    pub projections: Vec<f64>,
    /// Sampling index (drives the RNG stream derivation).
    pub index: u64,
    /// Statistical weight; weights of a sample set sum to one.
    pub weight: f64,
}

/// Time series of the qubit density-matrix element with optional population
/// traces, plus the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    pub time_us: Vec<f64>,
    /// Averaged rho_ab(t).
    pub raw: Vec<C64>,
    /// L(t) = rho_ab(t) / rho_ab(0).
    pub normalized: Vec<C64>,
    /// Raw rho_aa(t) / rho_bb(t) when populations were requested.
    pub pop_a: Option<Vec<f64>>,
    pub pop_b: Option<Vec<f64>>,
    pub meta: CurveMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub method: String,
    pub order: usize,
    pub samples: usize,
    pub seed: u64,
    pub sequence: String,
    /// Small-denominator and coherence-cap events accumulated over the run.
    pub divergence_count: u64,
}

impl CoherenceCurve {
    pub fn validate(&self) -> Result<()> {
        if self.time_us.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("time grid must be strictly increasing".into()));
        }
        if (self.normalized[0] - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Validation(format!(
                "normalized coherence must start at 1, got {}",
                self.normalized[0]
            )));
        }
        Ok(())
    }
}
