//! Collision statistics, prefix-group analysis, and the last-level
//! codebook-capacity check.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::{ItemId, SidIndex};

/// Aggregate collision statistics of one index.
#[derive(Clone, Debug, Serialize)]
pub struct CollisionStats {
    /// Percentage of items whose SID is shared with at least one other item.
    pub coll_percent: f64,
    /// Size of the largest collision group.
    pub g_max: usize,
    /// Group size -> number of groups of that size, including singletons, so
    /// the partition property is checkable from this object alone.
    pub group_size_histogram: BTreeMap<usize, usize>,
}

impl CollisionStats {
    /// Recompute the collision rate from the histogram. Independent of the
    /// direct per-item scan that fills `coll_percent`; the two must agree.
    pub fn coll_percent_from_histogram(&self) -> f64 {
        let n: usize = self
            .group_size_histogram
            .iter()
            .map(|(size, count)| size * count)
            .sum();
        let shared: usize = self
            .group_size_histogram
            .iter()
            .filter(|(size, _)| **size >= 2)
            .map(|(size, count)| size * count)
            .sum();
        shared as f64 / n as f64 * 100.0
    }
}

/// Collision rate, largest group, and the full group-size histogram.
pub fn collision_stats(index: &SidIndex) -> Result<CollisionStats> {
    if index.n_items() == 0 {
        return Err(Error::EmptyIndex);
    }

    // Direct scan over items for the rate itself.
    let mut shared = 0usize;
    for (_, sid) in index.assignments() {
        if index.collision_group(sid).len() > 1 {
            shared += 1;
        }
    }
    let coll_percent = shared as f64 / index.n_items() as f64 * 100.0;

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut g_max = 0usize;
    for (_, group) in index.groups() {
        *histogram.entry(group.len()).or_default() += 1;
        g_max = g_max.max(group.len());
    }

    Ok(CollisionStats {
        coll_percent,
        g_max,
        group_size_histogram: histogram,
    })
}

/// One group of items sharing the same length-(L-1) code prefix.
#[derive(Clone, Debug)]
pub struct PrefixGroup {
    pub prefix: Vec<u32>,
    /// Ascending item ids.
    pub items: Vec<ItemId>,
    /// Minimum number of last-level changes needed for distinct last codes:
    /// group size minus the number of distinct last codes present.
    pub rho: usize,
}

/// All prefix groups of an index, in lexicographic prefix order.
#[derive(Clone, Debug)]
pub struct PrefixGroupTable {
    pub groups: Vec<PrefixGroup>,
    pub max_size: usize,
    pub mean_size: f64,
}

impl PrefixGroupTable {
    pub fn rho_total(&self) -> usize {
        self.groups.iter().map(|g| g.rho).sum()
    }
}

/// Partition items by their first L-1 codes and compute each group's rho.
pub fn prefix_groups(index: &SidIndex) -> Result<PrefixGroupTable> {
    if index.sid_len() < 2 {
        return Err(Error::SidTooShort(index.sid_len()));
    }

    let mut by_prefix: BTreeMap<Vec<u32>, Vec<ItemId>> = BTreeMap::new();
    for (item, sid) in index.assignments() {
        by_prefix.entry(sid.prefix().to_vec()).or_default().push(item);
    }

    let mut groups = Vec::with_capacity(by_prefix.len());
    let mut max_size = 0usize;
    for (prefix, items) in by_prefix {
        let distinct_last: BTreeSet<u32> = items
            .iter()
            .map(|&i| index.sid_of(i).expect("valid item").last_code())
            .collect();
        max_size = max_size.max(items.len());
        groups.push(PrefixGroup {
            rho: items.len() - distinct_last.len(),
            prefix,
            items,
        });
    }
    let mean_size = index.n_items() as f64 / groups.len() as f64;

    Ok(PrefixGroupTable {
        groups,
        max_size,
        mean_size,
    })
}

/// Result of the last-level capacity condition `max group size <= V`.
#[derive(Clone, Debug, Serialize)]
pub struct CapacityReport {
    pub satisfied: bool,
    pub max_size: usize,
    pub mean_size: f64,
    pub violating_prefixes: Vec<Vec<u32>>,
}

/// Check whether every prefix group fits in the last-level codebook. Groups
/// of size exactly `V` still satisfy the bound: each item can receive its
/// own code.
pub fn capacity_check(table: &PrefixGroupTable, v: u32) -> CapacityReport {
    let violating: Vec<Vec<u32>> = table
        .groups
        .iter()
        .filter(|g| g.items.len() > v as usize)
        .map(|g| g.prefix.clone())
        .collect();
    CapacityReport {
        satisfied: violating.is_empty(),
        max_size: table.max_size,
        mean_size: table.mean_size,
        violating_prefixes: violating,
    }
}

/// Round half-up to two decimals, for report fields quoted as percentages.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
