//! Physical system definition: the central spin, the nuclear bath, and all
//! pairwise interaction tensors.

mod bath;
mod lattice;

pub use bath::{generate_bath, import_hyperfine_table, read_bath_file, write_bath_file, ImportReport};
pub use lattice::{LatticeSite, LatticeSpec};

use serde::{Deserialize, Serialize};

use crate::constants::DIPOLE_PREFACTOR_MHZ_NM3;
use crate::error::{Error, Result};

pub type Tensor3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// The electron-spin qubit: spin quantum number, zero-field splitting and
/// gyromagnetic ratio. All couplings in MHz, gyromagnetic ratio in MHz/mT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralSpin {
    pub spin: f64,
    pub zfs_d_mhz: f64,
    pub zfs_e_mhz: f64,
    pub gyro_mhz_per_mt: f64,
    pub position_nm: Vec3,
}

impl CentralSpin {
    pub fn validate(&self) -> Result<()> {
        if self.spin <= 0.0 || (2.0 * self.spin).fract().abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "central spin quantum number must be a positive half-integer, got {}",
                self.spin
            )));
        }
        if !self.gyro_mhz_per_mt.is_finite() || self.gyro_mhz_per_mt == 0.0 {
            return Err(Error::Validation(
                "central gyromagnetic ratio must be finite and nonzero".into(),
            ));
        }
        if !self.zfs_d_mhz.is_finite() || !self.zfs_e_mhz.is_finite() {
            return Err(Error::Validation("zero-field splitting must be finite".into()));
        }
        Ok(())
    }

    pub fn multiplicity(&self) -> usize {
        (2.0 * self.spin + 1.0).round() as usize
    }
}

/// One nuclear spin of the bath with its hyperfine tensor (MHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSpin {
    pub isotope: String,
    pub spin: f64,
    pub gyro_mhz_per_mt: f64,
    pub position_nm: Vec3,
    pub hyperfine_mhz: Tensor3,
}

impl BathSpin {
    pub fn multiplicity(&self) -> usize {
        (2.0 * self.spin + 1.0).round() as usize
    }

    /// Effective longitudinal coupling sqrt(A_xz^2 + A_yz^2 + A_zz^2).
    pub fn a_iz_mhz(&self) -> f64 {
        let a = &self.hyperfine_mhz;
        (a[0][2] * a[0][2] + a[1][2] * a[1][2] + a[2][2] * a[2][2]).sqrt()
    }
}

/// Nuclear dipole-dipole coupling between two bath spins.
#[derive(Debug, Clone, PartialEq)]
pub struct DipolarTensor {
    pub i: usize,
    pub j: usize,
    pub tensor_mhz: Tensor3,
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Magnetic point-dipole coupling tensor between two moments, MHz.
///
/// `T_kl = KAPPA * g1 * g2 * (delta_kl - 3 rhat_k rhat_l) / |r|^3`,
/// symmetric and traceless by construction. `r_nm` points from one spin to
/// the other; the tensor is even in r so the direction does not matter.
pub fn dipole_coupling_tensor(r_nm: Vec3, g1: f64, g2: f64) -> Result<Tensor3> {
    let r = norm(r_nm);
    if r == 0.0 {
        return Err(Error::Singularity(
            "dipole tensor requested for coincident positions".into(),
        ));
    }
    let inv_r3 = 1.0 / (r * r * r);
    let rhat = [r_nm[0] / r, r_nm[1] / r, r_nm[2] / r];
    let c = DIPOLE_PREFACTOR_MHZ_NM3 * g1 * g2 * inv_r3;
    let mut t = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            let delta = if k == l { 1.0 } else { 0.0 };
            t[k][l] = c * (delta - 3.0 * rhat[k] * rhat[l]);
        }
    }
    Ok(t)
}

/// Point-dipole hyperfine tensor for a nucleus at `r_nm` from the electron.
pub fn point_dipole_hyperfine(r_nm: Vec3, gyro_e: f64, gyro_n: f64) -> Result<Tensor3> {
    dipole_coupling_tensor(r_nm, gyro_e, gyro_n)
}

/// Nuclear-nuclear dipolar tensor for a pair of bath spins.
pub fn dipolar_tensor(i: usize, spin_i: &BathSpin, j: usize, spin_j: &BathSpin) -> Result<DipolarTensor> {
    let r = sub(spin_j.position_nm, spin_i.position_nm);
    let tensor = dipole_coupling_tensor(r, spin_i.gyro_mhz_per_mt, spin_j.gyro_mhz_per_mt)?;
    Ok(DipolarTensor { i, j, tensor_mhz: tensor })
}

/// Provenance of a generated bath, carried along for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeMeta {
    pub lattice: String,
    pub radius_nm: f64,
    pub seed: u64,
}

/// The full system: one central spin, the bath, and the applied field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub central: CentralSpin,
    pub bath: Vec<BathSpin>,
    pub field_mt: f64,
    pub lattice_meta: Option<LatticeMeta>,
}

impl SpinSystem {
    /// Builds a system, filling any unset hyperfine tensor (all zeros) with
    /// the point-dipole value relative to the central spin.
    pub fn new(central: CentralSpin, mut bath: Vec<BathSpin>, field_mt: f64) -> Result<Self> {
        central.validate()?;
        for spin in &mut bath {
            if spin.spin <= 0.0 || (2.0 * spin.spin).fract().abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "bath spin quantum number must be a positive half-integer, got {} for {}",
                    spin.spin, spin.isotope
                )));
            }
            if spin.hyperfine_mhz == [[0.0; 3]; 3] {
                let r = sub(spin.position_nm, central.position_nm);
                spin.hyperfine_mhz =
                    point_dipole_hyperfine(r, central.gyro_mhz_per_mt, spin.gyro_mhz_per_mt)?;
            }
        }
        for i in 0..bath.len() {
            for j in (i + 1)..bath.len() {
                if norm(sub(bath[i].position_nm, bath[j].position_nm)) < 1e-9 {
                    return Err(Error::Validation(format!(
                        "bath spins {i} and {j} share a position"
                    )));
                }
            }
        }
        Ok(SpinSystem { central, bath, field_mt, lattice_meta: None })
    }

    pub fn with_field(&self, field_mt: f64) -> SpinSystem {
        SpinSystem { field_mt, ..self.clone() }
    }

    /// Drops every bath spin whose |A_zz| is at or above the cutoff,
    /// keeping only the weakly coupled bath.
    pub fn filter_weakly_coupled(&self, cutoff_mhz: f64) -> SpinSystem {
        let bath = self
            .bath
            .iter()
            .filter(|s| s.hyperfine_mhz[2][2].abs() < cutoff_mhz)
            .cloned()
            .collect();
        SpinSystem { bath, ..self.clone() }
    }

    pub fn dipolar(&self, i: usize, j: usize) -> Result<DipolarTensor> {
        if i >= self.bath.len() || j >= self.bath.len() || i == j {
            return Err(Error::Validation(format!(
                "dipolar tensor indices ({i}, {j}) out of range for bath of {}",
                self.bath.len()
            )));
        }
        dipolar_tensor(i, &self.bath[i], j, &self.bath[j])
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        norm(sub(self.bath[i].position_nm, self.bath[j].position_nm))
    }

    /// P_zz for every pair plus A_zz per spin, precomputed for the
    /// mean-field sums of the cluster engine.
    pub fn mean_field_tables(&self) -> MeanFieldTables {
        let n = self.bath.len();
        let mut pzz = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let t = dipolar_tensor(i, &self.bath[i], j, &self.bath[j])
                    .expect("distinct positions enforced at construction");
                pzz[i * n + j] = t.tensor_mhz[2][2];
                pzz[j * n + i] = t.tensor_mhz[2][2];
            }
        }
        let azz = self.bath.iter().map(|s| s.hyperfine_mhz[2][2]).collect();
        MeanFieldTables { n, pzz, azz }
    }
}

/// Cached P_zz matrix and A_zz vector for mean-field evaluation.
#[derive(Debug, Clone)]
pub struct MeanFieldTables {
    n: usize,
    pzz: Vec<f64>,
    azz: Vec<f64>,
}

impl MeanFieldTables {
    pub fn pzz(&self, i: usize, j: usize) -> f64 {
        self.pzz[i * self.n + j]
    }

    pub fn azz(&self, i: usize) -> f64 {
        self.azz[i]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
