//! Crystal lattices for bath generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::Vec3;

/// One basis site of the unit cell, in fractional coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSite {
    pub frac: Vec3,
    pub isotope: String,
}

/// A Bravais cell (rows are the cell vectors, nm) plus basis sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub name: String,
    pub cell_nm: [Vec3; 3],
    pub sites: Vec<LatticeSite>,
}

impl LatticeSpec {
    /// 4H polytype of silicon carbide (P6_3mc, ABCB stacking),
    /// a = 0.3073 nm, c = 1.0053 nm. Si layers at z = k/4 with lateral
    /// positions A, B, C, B; carbons directly above at z + 3/16.
    pub fn sic_4h() -> LatticeSpec {
        let a = 0.3073;
        let c = 1.0053;
        let lateral = |tag: char| -> [f64; 2] {
            match tag {
                'A' => [0.0, 0.0],
                'B' => [1.0 / 3.0, 2.0 / 3.0],
                'C' => [2.0 / 3.0, 1.0 / 3.0],
                _ => unreachable!(),
            }
        };
        let stacking = ['A', 'B', 'C', 'B'];
        let mut sites = Vec::new();
        for (k, tag) in stacking.iter().enumerate() {
            let [u, v] = lateral(*tag);
            let z = k as f64 / 4.0;
            sites.push(LatticeSite { frac: [u, v, z], isotope: "29Si".into() });
            sites.push(LatticeSite { frac: [u, v, z + 3.0 / 16.0], isotope: "13C".into() });
        }
        LatticeSpec {
            name: "4h-sic".into(),
            cell_nm: [
                [a, 0.0, 0.0],
                [-a / 2.0, a * 3.0f64.sqrt() / 2.0, 0.0],
                [0.0, 0.0, c],
            ],
            sites,
        }
    }

    pub fn builtin(name: &str) -> Option<LatticeSpec> {
        match name {
            "4h-sic" => Some(Self::sic_4h()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::Config(format!(
                "lattice '{}' defines no basis sites",
                self.name
            )));
        }
        let det = det3(&self.cell_nm);
        if det.abs() < 1e-12 {
            return Err(Error::Config(format!(
                "lattice '{}' cell vectors are degenerate",
                self.name
            )));
        }
        Ok(())
    }

    fn cartesian(&self, n: [i64; 3], frac: Vec3) -> Vec3 {
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = (n[0] as f64 + frac[0]) * self.cell_nm[0][d]
                + (n[1] as f64 + frac[1]) * self.cell_nm[1][d]
                + (n[2] as f64 + frac[2]) * self.cell_nm[2][d];
        }
        p
    }

    /// All lattice sites within `radius_nm` of `center`, in a deterministic
    /// (cell-index, basis-index) order.
    pub fn sites_within(&self, center: Vec3, radius_nm: f64) -> Result<Vec<(Vec3, usize)>> {
        self.validate()?;
        if radius_nm <= 0.0 {
            return Err(Error::Validation(format!(
                "bath radius must be positive, got {radius_nm}"
            )));
        }
        let inv = inv3(&self.cell_nm).ok_or_else(|| {
            Error::Config("lattice cell vectors are not invertible".into())
        })?;
        // bound |n_d| via the fractional extent of the cartesian ball
        let mut bound = [0i64; 3];
        for d in 0..3 {
            let row_norm = (inv[0][d] * inv[0][d] + inv[1][d] * inv[1][d] + inv[2][d] * inv[2][d])
                .sqrt();
            bound[d] = (radius_nm * row_norm).ceil() as i64 + 2;
        }
        let center_frac = mul_inv(&inv, center);
        let r2 = radius_nm * radius_nm;
        let mut out = Vec::new();
        for n0 in -bound[0]..=bound[0] {
            for n1 in -bound[1]..=bound[1] {
                for n2 in -bound[2]..=bound[2] {
                    let cell = [
                        n0 + center_frac[0].floor() as i64,
                        n1 + center_frac[1].floor() as i64,
                        n2 + center_frac[2].floor() as i64,
                    ];
                    for (si, site) in self.sites.iter().enumerate() {
                        let p = self.cartesian(cell, site.frac);
                        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2 {
                            out.push((p, si));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn det3(m: &[Vec3; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse of the cell matrix (rows are cell vectors); columns map cartesian
/// to fractional coordinates: frac = x . inv.
fn inv3(m: &[Vec3; 3]) -> Option<[Vec3; 3]> {
    let d = det3(m);
    if d.abs() < 1e-14 {
        return None;
    }
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let a = m[(i + 1) % 3][(j + 1) % 3];
            let b = m[(i + 1) % 3][(j + 2) % 3];
            let e = m[(i + 2) % 3][(j + 1) % 3];
            let f = m[(i + 2) % 3][(j + 2) % 3];
            // cofactor transpose directly builds the inverse
            c[j][i] = (a * f - b * e) / d;
        }
    }
    Some(c)
}

fn mul_inv(inv: &[Vec3; 3], x: Vec3) -> Vec3 {
    let mut f = [0.0; 3];
    for j in 0..3 {
        f[j] = x[0] * inv[0][j] + x[1] * inv[1][j] + x[2] * inv[2][j];
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sic_cell_geometry() {
        let lat = LatticeSpec::sic_4h();
        assert_eq!(lat.sites.len(), 8);
        // nearest Si-C bond length ~ 0.189 nm in both bond geometries
        let si = lat.cartesian([0, 0, 0], lat.sites[0].frac);
        let c_above = lat.cartesian([0, 0, 0], lat.sites[1].frac);
        let d = ((si[0] - c_above[0]).powi(2)
            + (si[1] - c_above[1]).powi(2)
            + (si[2] - c_above[2]).powi(2))
        .sqrt();
        assert!((d - 0.1885).abs() < 0.002, "axial bond {d}");
    }

    #[test]
    fn site_count_matches_density() {
        let lat = LatticeSpec::sic_4h();
        let r = 1.5;
        let sites = lat.sites_within([0.05, 0.02, 0.01], r).unwrap();
        // 8 atoms in a cell of volume a^2 sin(60) c
        let vcell = 0.3073f64 * 0.3073 * (3.0f64.sqrt() / 2.0) * 1.0053;
        let expected = 8.0 * (4.0 / 3.0) * std::f64::consts::PI * r.powi(3) / vcell;
        let n = sites.len() as f64;
        assert!((n - expected).abs() / expected < 0.05, "n={n} expected~{expected}");
    }

    #[test]
    fn inverse_roundtrip() {
        let lat = LatticeSpec::sic_4h();
        let inv = inv3(&lat.cell_nm).unwrap();
        let p = lat.cartesian([2, -1, 3], [0.25, 0.5, 0.125]);
        let f = mul_inv(&inv, p);
        assert!((f[0] - 2.25).abs() < 1e-12);
        assert!((f[1] - (-0.5)).abs() < 1e-12);
        assert!((f[2] - 3.125).abs() < 1e-12);
    }

    #[test]
    fn empty_lattice_rejected() {
        let lat = LatticeSpec { name: "x".into(), cell_nm: LatticeSpec::sic_4h().cell_nm, sites: vec![] };
        assert!(lat.sites_within([0.0; 3], 1.0).is_err());
    }
}
