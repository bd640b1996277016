//! Pure bath-state sampling: Monte-Carlo and exhaustive enumeration.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, DOMAIN_BATH_STATES};
use crate::spin_model::SpinSystem;

use super::PureBathState;

/// Upper bound on exhaustive enumeration (2^12 states of a spin-1/2 bath).
pub const EXHAUSTIVE_STATE_CAP: usize = 4096;

/// Draws `count` infinite-temperature pure bath states.
///
/// Every nucleus gets a uniformly random Iz eigenvalue; the stream for
/// sample `j` is derived from `(seed, j)` so the result is independent of
/// evaluation order and worker count. Weights are uniform.
pub fn sample_bath_states(system: &SpinSystem, count: usize, seed: u64) -> Result<Vec<PureBathState>> {
    if count == 0 {
        return Err(Error::Validation("bath-state sample count must be at least 1".into()));
    }
    let weight = 1.0 / count as f64;
    Ok((0..count as u64)
        .map(|j| {
            let mut rng = stream(seed, DOMAIN_BATH_STATES, j);
            let projections = system
                .bath
                .iter()
                .map(|s| {
                    let mult = s.multiplicity();
                    let k = rng.gen_range(0..mult);
                    s.spin - k as f64
                })
                .collect();
            PureBathState { projections, index: j, weight }
        })
        .collect())
}

/// Enumerates every pure product state of the bath with uniform weights.
///
/// Intended as the oracle path for small baths; errors out beyond
/// [`EXHAUSTIVE_STATE_CAP`] states.
pub fn exhaustive_bath_states(system: &SpinSystem) -> Result<Vec<PureBathState>> {
    let mut total: usize = 1;
    for s in &system.bath {
        total = total.saturating_mul(s.multiplicity());
        if total > EXHAUSTIVE_STATE_CAP {
            return Err(Error::Validation(format!(
                "exhaustive bath enumeration would need more than {EXHAUSTIVE_STATE_CAP} states"
            )));
        }
    }
    let weight = 1.0 / total as f64;
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rest = idx;
        let projections = system
            .bath
            .iter()
            .map(|s| {
                let mult = s.multiplicity();
                let k = rest % mult;
                rest /= mult;
                s.spin - k as f64
            })
            .collect();
        out.push(PureBathState { projections, index: idx as u64, weight });
    }
    Ok(out)
}
