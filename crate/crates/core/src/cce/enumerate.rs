//! Cluster enumeration: connected subgraphs of the pair graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::spin_model::SpinSystem;

use super::{Cluster, ClusterSet};

pub const MAX_ORDER: usize = 4;

/// Enumerates all clusters up to `order`.
///
/// Size-1 clusters cover every bath spin; a size-k cluster is a connected
/// subgraph of the graph whose edges join spins closer than
/// `pair_cutoff_nm`. The output is sorted by size, then lexicographically,
/// and each cluster records which of its proper subsets are present.
pub fn enumerate_clusters(
    system: &SpinSystem,
    order: usize,
    pair_cutoff_nm: f64,
) -> Result<ClusterSet> {
    if order < 1 || order > MAX_ORDER {
        return Err(Error::UnsupportedOrder { order, max: MAX_ORDER });
    }
    if !(pair_cutoff_nm > 0.0) {
        return Err(Error::Validation(format!(
            "pair cutoff must be positive, got {pair_cutoff_nm}"
        )));
    }
    let n = system.bath.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if system.distance(i, j) < pair_cutoff_nm {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }

    let mut by_size: Vec<BTreeSet<Vec<usize>>> = Vec::with_capacity(order);
    by_size.push((0..n).map(|i| vec![i]).collect());
    for size in 2..=order {
        let mut next = BTreeSet::new();
        for cluster in &by_size[size - 2] {
            for &member in cluster {
                for &cand in &neighbors[member] {
                    if !cluster.contains(&cand) {
                        let mut grown = cluster.clone();
                        grown.push(cand);
                        grown.sort_unstable();
                        next.insert(grown);
                    }
                }
            }
        }
        by_size.push(next);
    }

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for size_set in &by_size {
        for spins in size_set {
            index.insert(spins.clone(), clusters.len());
            clusters.push(Cluster { spins: spins.clone(), subclusters: Vec::new() });
        }
    }
    for ci in 0..clusters.len() {
        let spins = clusters[ci].spins.clone();
        let k = spins.len();
        if k < 2 {
            continue;
        }
        let mut subs = Vec::new();
        // all proper nonempty subsets; only those present in the expansion
        // enter the recursive denominator
        for mask in 1u32..(1 << k) - 1 {
            let subset: Vec<usize> = (0..k)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| spins[b])
                .collect();
            if let Some(&si) = index.get(&subset) {
                subs.push(si);
            }
        }
        subs.sort_unstable();
        subs.dedup();
        clusters[ci].subclusters = subs;
    }
    Ok(ClusterSet { clusters, order, pair_cutoff_nm })
}
