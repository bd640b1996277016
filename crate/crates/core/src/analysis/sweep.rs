//! Field sweeps and level-anticrossing scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cce::{run_expansion, ClusterSet, CoherenceCurve, EngineOptions, PureBathState};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    build_electron_hamiltonian, select_qubit_levels, LevelStrategy, QubitLevels,
};
use crate::propagation::SequenceTemplate;
use crate::spin_model::SpinSystem;

use super::fit::{fit_decay, DecayFit, FitMode};
use super::spectrum::{ramsey_spectrum, Spectrum, Taper};

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub opts: EngineOptions,
    pub strategy: LevelStrategy,
    /// Track levels adiabatically from field to field instead of
    /// re-deriving them from the strategy at every point.
    pub track_levels: bool,
    pub fit: Option<FitMode>,
    /// Taper and rotating-frame reference for per-field spectra.
    pub spectrum: Option<(Taper, f64)>,
}

/// Per-field curves, fits and spectra; failures are recorded and the sweep
/// continues.
#[derive(Debug, Clone)]
pub struct FieldSweepResult {
    pub fields_mt: Vec<f64>,
    pub curves: Vec<Option<CoherenceCurve>>,
    pub fits: Vec<Option<DecayFit>>,
    pub spectra: Vec<Option<Spectrum>>,
    pub errors: Vec<Option<String>>,
}

fn select_levels_per_field(
    system: &SpinSystem,
    fields_mt: &[f64],
    strategy: LevelStrategy,
    track: bool,
) -> Vec<Result<QubitLevels>> {
    let mut out: Vec<Result<QubitLevels>> = Vec::with_capacity(fields_mt.len());
    let mut previous: Option<QubitLevels> = None;
    for &b in fields_mt {
        let result = build_electron_hamiltonian(&system.central, b).and_then(|he| {
            select_qubit_levels(&he, strategy, if track { previous.as_ref() } else { None })
        });
        if let Ok(levels) = &result {
            previous = Some(levels.clone());
        }
        out.push(result);
    }
    out
}

/// Runs the expansion at every field with a shared bath realization and
/// shared bath states, tracking the qubit levels across the sweep.
pub fn field_sweep(
    system: &SpinSystem,
    set: &ClusterSet,
    states: &[PureBathState],
    fields_mt: &[f64],
    settings: &SweepSettings,
    seed: u64,
) -> Result<FieldSweepResult> {
    if fields_mt.is_empty() {
        return Err(Error::Validation("field sweep needs at least one field".into()));
    }
    if fields_mt.iter().any(|b| !b.is_finite()) {
        return Err(Error::Validation("sweep fields must be finite".into()));
    }
    if fields_mt.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("sweep fields must be strictly increasing".into()));
    }
    let levels = select_levels_per_field(system, fields_mt, settings.strategy, settings.track_levels);
    let runs: Vec<(Option<CoherenceCurve>, Option<String>)> = fields_mt
        .par_iter()
        .zip(levels.par_iter())
        .map(|(&b, lv)| match lv {
            Ok(levels) => {
                let sys_b = system.with_field(b);
                match run_expansion(&sys_b, levels, set, states, &settings.opts, seed) {
                    Ok(c) => (Some(c), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            Err(e) => (None, Some(e.to_string())),
        })
        .collect();
    let mut curves = Vec::with_capacity(runs.len());
    let mut fits = Vec::with_capacity(runs.len());
    let mut spectra = Vec::with_capacity(runs.len());
    let mut errors = Vec::with_capacity(runs.len());
    for (curve, err) in runs {
        let fit = curve.as_ref().and_then(|c| {
            settings.fit.and_then(|mode| fit_decay(c, mode).ok())
        });
        let spec = curve.as_ref().and_then(|c| {
            settings
                .spectrum
                .and_then(|(taper, reference)| ramsey_spectrum(c, taper, reference).ok())
        });
        curves.push(curve);
        fits.push(fit);
        spectra.push(spec);
        errors.push(err);
    }
    Ok(FieldSweepResult { fields_mt: fields_mt.to_vec(), curves, fits, spectra, errors })
}

/// T2 outcome at one sweep field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum T2Outcome {
    Fitted(DecayFit),
    /// The echo did not decay below a/e within the simulated window; the
    /// window length is an honest lower bound, not a value.
    LowerBound { t_max_us: f64 },
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GslacPoint {
    pub field_mt: f64,
    pub t2: T2Outcome,
    /// Level gap of the bare electron Hamiltonian at this field.
    pub gap_mhz: f64,
    pub degenerate: bool,
    /// max_t |rho_aa(t)/rho_aa(0) - 1|.
    pub max_population_excursion: f64,
    /// True when the excursion leaves the +-2% band.
    pub population_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GslacScan {
    pub points: Vec<GslacPoint>,
    /// Field of minimum fitted T2, when any field resolved a fit.
    pub min_t2_field_mt: Option<f64>,
}

pub const POPULATION_BAND: f64 = 0.02;
pub const DEGENERACY_GAP_MHZ: f64 = 1e-6;

/// Hahn-echo T2 versus field plus population-fluctuation flags around a
/// ground-state level anticrossing.
pub fn gslac_scan(
    system: &SpinSystem,
    set: &ClusterSet,
    states: &[PureBathState],
    fields_mt: &[f64],
    settings: &SweepSettings,
    seed: u64,
) -> Result<GslacScan> {
    if (system.central.spin - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(
            "anticrossing scan expects a spin-1 central spin".into(),
        ));
    }
    let mut opts = settings.opts.clone();
    opts.template = SequenceTemplate::Hahn;
    opts.populations = true;
    let scan_settings = SweepSettings {
        opts,
        strategy: settings.strategy,
        track_levels: settings.track_levels,
        fit: None,
        spectrum: None,
    };
    let sweep = field_sweep(system, set, states, fields_mt, &scan_settings, seed)?;
    let levels = select_levels_per_field(
        system,
        fields_mt,
        settings.strategy,
        settings.track_levels,
    );
    let mut points = Vec::with_capacity(fields_mt.len());
    for (k, &b) in fields_mt.iter().enumerate() {
        let gap = match &levels[k] {
            Ok(lv) => {
                let he = build_electron_hamiltonian(&system.central, b)?;
                let expect = |v: &ndarray::Array1<num_complex::Complex64>| -> f64 {
                    let mut acc = num_complex::Complex64::new(0.0, 0.0);
                    for i in 0..v.len() {
                        for j in 0..v.len() {
                            acc += v[i].conj() * he[[i, j]] * v[j];
                        }
                    }
                    acc.re
                };
                expect(&lv.b) - expect(&lv.a)
            }
            Err(_) => f64::NAN,
        };
        let (t2, excursion) = match &sweep.curves[k] {
            Some(curve) => {
                let excursion = population_excursion(curve);
                let t2 = match fit_decay(curve, FitMode::Raw) {
                    Ok(fit) => T2Outcome::Fitted(fit),
                    Err(Error::FitRange(_)) => {
                        T2Outcome::LowerBound { t_max_us: *curve.time_us.last().unwrap() }
                    }
                    Err(e) => T2Outcome::Unavailable(e.to_string()),
                };
                (t2, excursion)
            }
            None => (
                T2Outcome::Unavailable(
                    sweep.errors[k].clone().unwrap_or_else(|| "run failed".into()),
                ),
                f64::NAN,
            ),
        };
        points.push(GslacPoint {
            field_mt: b,
            t2,
            gap_mhz: gap,
            degenerate: gap.is_finite() && gap.abs() < DEGENERACY_GAP_MHZ,
            max_population_excursion: excursion,
            population_flagged: excursion.is_finite() && excursion > POPULATION_BAND,
        });
    }
    let min_t2_field_mt = points
        .iter()
        .filter_map(|p| match &p.t2 {
            T2Outcome::Fitted(fit) => Some((p.field_mt, fit.t_decay_us)),
            _ => None,
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(b, _)| b);
    Ok(GslacScan { points, min_t2_field_mt })
}

fn population_excursion(curve: &CoherenceCurve) -> f64 {
    match &curve.pop_a {
        Some(pa) if pa[0].abs() > 1e-12 => pa
            .iter()
            .map(|p| (p / pa[0] - 1.0).abs())
            .fold(0.0f64, f64::max),
        _ => f64::NAN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cce::{enumerate_clusters, exhaustive_bath_states, Method, TimeGrid};
    use crate::constants::GYRO_ELECTRON_MHZ_PER_MT;
    use crate::analysis::spectrum::peak_frequencies;
    use crate::spin_model::{BathSpin, CentralSpin};

    fn kh_central(e_mhz: f64) -> CentralSpin {
        CentralSpin {
            spin: 1.0,
            zfs_d_mhz: 1334.0,
            zfs_e_mhz: e_mhz,
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

    #[test]
    fn single_field_sweep_matches_direct_run() {
        let sys = SpinSystem::new(kh_central(18.4), vec![carbon([0.4, 0.2, 0.3])], 0.0).unwrap();
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let opts = EngineOptions::new(
            Method::Gcce,
            1,
            TimeGrid { t_max_us: 10.0, points: 41 },
            SequenceTemplate::Ramsey,
        );
        let settings = SweepSettings {
            opts: opts.clone(),
            strategy: LevelStrategy::Energy { a: 0, b: 2 },
            track_levels: true,
            fit: None,
            spectrum: None,
        };
        let sweep = field_sweep(&sys, &set, &states, &[0.0], &settings, 5).unwrap();
        let he = build_electron_hamiltonian(&sys.central, 0.0).unwrap();
        let levels =
            select_qubit_levels(&he, LevelStrategy::Energy { a: 0, b: 2 }, None).unwrap();
        let direct = run_expansion(&sys, &levels, &set, &states, &opts, 5).unwrap();
        let swept = sweep.curves[0].as_ref().unwrap();
        assert_eq!(swept.raw, direct.raw);
    }

    #[test]
    fn clock_frequencies_symmetric_in_field() {
        // Eq. of the clock hyperbola is even in Bz: fitted Ramsey peak
        // frequencies must match at +-B
        let sys = SpinSystem::new(kh_central(18.4), vec![carbon([0.5, 0.3, 0.4])], 0.0).unwrap();
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let opts = EngineOptions::new(
            Method::Gcce,
            1,
            TimeGrid { t_max_us: 6.0, points: 1601 },
            SequenceTemplate::Ramsey,
        );
        let settings = SweepSettings {
            opts,
            strategy: LevelStrategy::Energy { a: 0, b: 2 },
            track_levels: true,
            fit: None,
            spectrum: Some((Taper::Hann, 1334.0)),
        };
        let fields = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let sweep = field_sweep(&sys, &set, &states, &fields, &settings, 2).unwrap();
        let peak_at = |k: usize| -> f64 {
            let spec = sweep.spectra[k].as_ref().unwrap();
            peak_frequencies(spec, 3.0)
                .into_iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap()
                .0
        };
        let bin = 2.0 / 6.0; // generous: a few bins of 1/(4 * 6 us)
        assert!((peak_at(0) - peak_at(4)).abs() < bin);
        assert!((peak_at(1) - peak_at(3)).abs() < bin);
    }

    #[test]
    fn degenerate_axial_variant_reported_at_zero_field() {
        // E = 0 variant: the +-1 pair crosses at B = 0
        let sys = SpinSystem::new(kh_central(0.0), vec![carbon([0.4, 0.0, 0.3])], 0.0).unwrap();
        let set = enumerate_clusters(&sys, 1, 0.8).unwrap();
        let states = exhaustive_bath_states(&sys).unwrap();
        let opts = EngineOptions::new(
            Method::Gcce,
            1,
            TimeGrid { t_max_us: 5.0, points: 21 },
            SequenceTemplate::Hahn,
        );
        let settings = SweepSettings {
            opts,
            strategy: LevelStrategy::Sz { a: 1.0, b: -1.0 },
            track_levels: false,
            fit: None,
            spectrum: None,
        };
        let fields = [-1.0, 0.0, 1.0];
        let scan = gslac_scan(&sys, &set, &states, &fields, &settings, 3).unwrap();
        assert!(scan.points[1].degenerate, "gap {}", scan.points[1].gap_mhz);
        assert!(!scan.points[0].degenerate && !scan.points[2].degenerate);
        // analytic gap: E(-1) - E(+1) = 2 gyro B
        let expect = 2.0 * GYRO_ELECTRON_MHZ_PER_MT;
        assert!((scan.points[2].gap_mhz - (-expect)).abs() < 1e-6
            || (scan.points[2].gap_mhz - expect).abs() < 1e-6);
    }
}
