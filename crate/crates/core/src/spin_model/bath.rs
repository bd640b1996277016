//! Bath generation and bath-file / hyperfine-table input and output.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constants::Isotope;
use crate::error::{Error, Result};
use crate::rng::{stream, DOMAIN_BATH};

use super::{BathSpin, LatticeSpec, SpinSystem, Tensor3, Vec3};

/// Populates lattice sites with magnetic isotopes.
///
/// Every candidate site within `radius_nm` of `center` is independently
/// occupied with the probability given for its isotope (falling back to the
/// registry abundance). Sites closer than `min_distance_nm` to the center
/// are skipped; the defect itself occupies those. Hyperfine tensors are left
/// zeroed and filled in by [`SpinSystem::new`].
pub fn generate_bath(
    lattice: &LatticeSpec,
    registry: &[Isotope],
    abundances: &BTreeMap<String, f64>,
    center: Vec3,
    radius_nm: f64,
    min_distance_nm: f64,
    seed: u64,
) -> Result<Vec<BathSpin>> {
    for (name, p) in abundances {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::Validation(format!(
                "abundance for {name} must lie in [0, 1], got {p}"
            )));
        }
    }
    let lookup = |name: &str| -> Result<&Isotope> {
        registry
            .iter()
            .find(|i| i.name == name)
            .ok_or_else(|| Error::Config(format!("isotope '{name}' not in registry")))
    };
    let sites = lattice.sites_within(center, radius_nm)?;
    let mut rng = stream(seed, DOMAIN_BATH, 0);
    let mut bath = Vec::new();
    let min2 = min_distance_nm * min_distance_nm;
    for (pos, site_idx) in sites {
        let name = &lattice.sites[site_idx].isotope;
        let iso = lookup(name)?;
        let p = abundances.get(name).copied().unwrap_or(iso.abundance);
        // one draw per candidate site keeps the stream layout stable
        let u: f64 = rng.gen();
        let d2 = (pos[0] - center[0]).powi(2)
            + (pos[1] - center[1]).powi(2)
            + (pos[2] - center[2]).powi(2);
        if d2 < min2 {
            continue;
        }
        if u < p {
            bath.push(BathSpin {
                isotope: iso.name.clone(),
                spin: iso.spin,
                gyro_mhz_per_mt: iso.gyro_mhz_per_mt,
                position_nm: pos,
                hyperfine_mhz: [[0.0; 3]; 3],
            });
        }
    }
    Ok(bath)
}

/// Bath file row: `isotope x y z Axx Axy Axz Ayx Ayy Ayz Azx Azy Azz`.
pub fn write_bath_file(path: &Path, bath: &[BathSpin]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# isotope x_nm y_nm z_nm A(3x3, MHz, row-major)")?;
    for s in bath {
        let mut row = format!(
            "{} {} {} {}",
            s.isotope, s.position_nm[0], s.position_nm[1], s.position_nm[2]
        );
        for k in 0..3 {
            for l in 0..3 {
                row.push(' ');
                row.push_str(&format!("{}", s.hyperfine_mhz[k][l]));
            }
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Reads a bath file, resolving isotope properties through `registry`.
pub fn read_bath_file(path: &Path, registry: &[Isotope]) -> Result<Vec<BathSpin>> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut bath = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected 13 fields, found {}", fields.len()),
            });
        }
        let iso = registry.iter().find(|i| i.name == fields[0]).ok_or(Error::Parse {
            line: lineno + 1,
            message: format!("unknown isotope '{}'", fields[0]),
        })?;
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad {what} value '{s}'"),
            })
        };
        let pos = [
            num(fields[1], "x")?,
            num(fields[2], "y")?,
            num(fields[3], "z")?,
        ];
        let mut hf = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                hf[k][l] = num(fields[4 + 3 * k + l], "tensor")?;
            }
        }
        bath.push(BathSpin {
            isotope: iso.name.clone(),
            spin: iso.spin,
            gyro_mhz_per_mt: iso.gyro_mhz_per_mt,
            position_nm: pos,
            hyperfine_mhz: hf,
        });
    }
    Ok(bath)
}

/// Outcome of a hyperfine-table import.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ImportReport {
    pub matched: usize,
    /// 1-based line numbers of table rows that matched no bath spin.
    pub unmatched_rows: Vec<usize>,
}

/// Overrides hyperfine tensors from a table of `x y z Axx ... Azz` rows.
///
/// Bath spins are matched by position within 1e-4 nm; unmatched spins keep
/// their current (point-dipole) tensors, unmatched rows are reported.
pub fn import_hyperfine_table(path: &Path, system: &SpinSystem) -> Result<(SpinSystem, ImportReport)> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut rows: Vec<(usize, Vec3, Tensor3)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected 12 fields (x y z + 9 tensor), found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad numeric value '{s}'"),
            })
        };
        let pos = [num(fields[0])?, num(fields[1])?, num(fields[2])?];
        let mut t = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                t[k][l] = num(fields[3 + 3 * k + l])?;
            }
        }
        rows.push((lineno + 1, pos, t));
    }
    const MATCH_TOL: f64 = 1e-4;
    for a in 0..rows.len() {
        for b in (a + 1)..rows.len() {
            let d = dist(rows[a].1, rows[b].1);
            if d < MATCH_TOL {
                return Err(Error::Validation(format!(
                    "hyperfine table rows {} and {} share a position",
                    rows[a].0, rows[b].0
                )));
            }
        }
    }
    let mut out = system.clone();
    let mut report = ImportReport::default();
    for (lineno, pos, tensor) in rows {
        let hit = out
            .bath
            .iter_mut()
            .find(|s| dist(s.position_nm, pos) < MATCH_TOL);
        match hit {
            Some(spin) => {
                spin.hyperfine_mhz = tensor;
                report.matched += 1;
            }
            None => report.unmatched_rows.push(lineno),
        }
    }
    Ok((out, report))
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
