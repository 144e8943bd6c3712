//! Maximin shares: brute-force oracle, exact engine, scaled approximation,
//! and the reduction that rebuilds a partition around already-committed
//! bundles.
//!
//! The exact engine binary-searches the target value and answers each probe
//! with a bin-covering decision ([`feasible_cover`]): can the goods be split
//! into `parts` bundles that are each worth at least the target? The
//! brute-force oracle enumerates set partitions directly and shares no code
//! with the exact path.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bundle, Instance};
use crate::ratio::{Ratio, Share};

/// Default goods cap for [`mms_bruteforce`].
pub const DEFAULT_BRUTE_FORCE_CAP: usize = 12;
/// Default goods cap for [`mms_exact`].
pub const DEFAULT_EXACT_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MmsError {
    #[error("{goods} goods exceed the {engine} engine cap of {cap}")]
    CapExceeded { engine: &'static str, goods: usize, cap: usize },
    #[error("number of parts must be positive")]
    ZeroParts,
    #[error("agent {0} out of range")]
    AgentOutOfRange(usize),
    #[error("epsilon {0} must lie strictly between 0 and 1")]
    EpsilonOutOfRange(Ratio),
    #[error("witness is not a partition of all goods into {parts} bundles: {reason}")]
    InvalidWitness { parts: usize, reason: String },
    #[error("record belongs to agent {record} but agent {requested} was requested")]
    WrongAgent { record: usize, requested: usize },
    #[error("{parts} parts minus {removed} removed bundles does not leave r = {r} (r must be positive)")]
    PartsMismatch { parts: usize, removed: usize, r: usize },
    #[error("removed bundles {first} and {second} share good {good}")]
    OverlappingRemoved { first: usize, second: usize, good: usize },
    #[error("removed bundle {index} is worth {value}, not below the threshold {threshold}")]
    RemovedTooValuable { index: usize, value: u64, threshold: Share },
    #[error("witness minimum {witness_min} is below 3/2 of the threshold {threshold}")]
    WitnessTooWeak { witness_min: u64, threshold: Share },
    #[error("reduction produced only {found} qualifying bundles, {needed} needed")]
    ShortOfBundles { needed: usize, found: usize },
}

/// An agent's (possibly approximate) maximin share with a witness partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmsRecord {
    pub agent: usize,
    pub parts: usize,
    pub value: u64,
    pub witness: Vec<Bundle>,
    /// `1` for exact records; otherwise `value >= quality * MMS` is certified.
    pub quality: Ratio,
}

impl MmsRecord {
    pub fn is_exact(&self) -> bool {
        self.quality == Ratio::ONE
    }

    /// Smallest witness bundle value under the record's agent.
    pub fn witness_min(&self, inst: &Instance) -> u64 {
        self.witness
            .iter()
            .map(|b| inst.value_of(self.agent, b.goods()))
            .min()
            .unwrap_or(0)
    }
}

fn check_common(inst: &Instance, agent: usize, parts: usize) -> Result<(), MmsError> {
    if agent >= inst.agents() {
        return Err(MmsError::AgentOutOfRange(agent));
    }
    if parts == 0 {
        return Err(MmsError::ZeroParts);
    }
    Ok(())
}

fn labels_to_bundles(labels: &[usize], parts: usize) -> Vec<Bundle> {
    let mut groups = vec![Vec::new(); parts];
    for (good, &label) in labels.iter().enumerate() {
        groups[label].push(good);
    }
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

/// Exact MMS by enumerating every partition of the goods into at most
/// `parts` blocks (restricted growth strings). Independent oracle.
pub fn mms_bruteforce(
    inst: &Instance,
    agent: usize,
    parts: usize,
    cap: usize,
) -> Result<MmsRecord, MmsError> {
    check_common(inst, agent, parts)?;
    let m = inst.goods();
    if m > cap {
        return Err(MmsError::CapExceeded { engine: "brute-force", goods: m, cap });
    }

    struct Enum<'a> {
        values: &'a [u64],
        parts: usize,
        labels: Vec<usize>,
        sums: Vec<u64>,
        best: Option<u64>,
        best_labels: Vec<usize>,
    }

    impl Enum<'_> {
        fn go(&mut self, idx: usize, used: usize) {
            if idx == self.values.len() {
                let min = if used < self.parts {
                    0
                } else {
                    *self.sums.iter().min().unwrap()
                };
                if self.best.is_none_or(|b| min > b) {
                    self.best = Some(min);
                    self.best_labels.clone_from(&self.labels);
                }
                return;
            }
            let limit = (used + 1).min(self.parts);
            for label in 0..limit {
                self.labels[idx] = label;
                self.sums[label] += self.values[idx];
                self.go(idx + 1, used.max(label + 1));
                self.sums[label] -= self.values[idx];
            }
        }
    }

    let mut e = Enum {
        values: inst.row(agent),
        parts,
        labels: vec![0; m],
        sums: vec![0; parts],
        best: None,
        best_labels: vec![0; m],
    };
    e.go(0, 0);
    Ok(MmsRecord {
        agent,
        parts,
        value: e.best.unwrap_or(0),
        witness: labels_to_bundles(&e.best_labels, parts),
        quality: Ratio::ONE,
    })
}

/// Decides whether `values` can be split into `parts` groups that each sum
/// to at least `target`. On success returns a partition of *all* item
/// indices into exactly `parts` groups. Deterministic.
pub fn feasible_cover(
    values: &[u64],
    parts: usize,
    target: u64,
    cap: usize,
) -> Result<Option<Vec<Vec<usize>>>, MmsError> {
    if parts == 0 {
        return Err(MmsError::ZeroParts);
    }
    if values.len() > cap {
        return Err(MmsError::CapExceeded { engine: "exact", goods: values.len(), cap });
    }
    Ok(cover(values, parts, target))
}

const DISCARD: usize = usize::MAX;

/// Bin-covering decision by depth-first search over items in descending
/// value order, with memoized failures keyed on the sorted capped loads.
fn cover(values: &[u64], parts: usize, target: u64) -> Option<Vec<Vec<usize>>> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); parts];
    if target == 0 {
        groups[0] = (0..values.len()).collect();
        return Some(groups);
    }

    // An item worth the target on its own fills a bin; giving each such item
    // its own bin never hurts.
    let mut big: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= target).collect();
    if big.len() >= parts {
        let rest = big.split_off(parts - 1);
        for (bin, item) in big.into_iter().enumerate() {
            groups[bin].push(item);
        }
        groups[parts - 1] = rest;
        for i in 0..values.len() {
            if values[i] < target {
                groups[0].push(i);
            }
        }
        groups.iter_mut().for_each(|g| g.sort_unstable());
        return Some(groups);
    }
    let open = parts - big.len();

    let mut items: Vec<(u64, usize)> = (0..values.len())
        .filter(|&i| values[i] > 0 && values[i] < target)
        .map(|i| (values[i], i))
        .collect();
    items.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut suffix = vec![0u128; items.len() + 1];
    for k in (0..items.len()).rev() {
        suffix[k] = suffix[k + 1] + items[k].0 as u128;
    }
    if suffix[0] < open as u128 * target as u128 {
        return None;
    }

    let mut search = CoverSearch {
        items: &items,
        suffix: &suffix,
        target,
        loads: vec![0; open],
        assign: vec![DISCARD; items.len()],
        failed: HashSet::new(),
    };
    if !search.dfs(0) {
        return None;
    }

    for (bin, item) in big.iter().enumerate() {
        groups[bin].push(*item);
    }
    let base = big.len();
    for (k, &(_, item)) in items.iter().enumerate() {
        match search.assign[k] {
            DISCARD => groups[0].push(item),
            bin => groups[base + bin].push(item),
        }
    }
    for i in 0..values.len() {
        if values[i] == 0 {
            groups[0].push(i);
        }
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());
    Some(groups)
}

struct CoverSearch<'a> {
    items: &'a [(u64, usize)],
    suffix: &'a [u128],
    target: u64,
    /// Capped at `target`.
    loads: Vec<u64>,
    assign: Vec<usize>,
    failed: HashSet<(usize, Vec<u64>)>,
}

impl CoverSearch<'_> {
    fn dfs(&mut self, idx: usize) -> bool {
        let target = self.target;
        let mut need: u128 = 0;
        let mut open = 0usize;
        for &l in &self.loads {
            if l < target {
                need += (target - l) as u128;
                open += 1;
            }
        }
        if open == 0 {
            self.assign[idx..].iter_mut().for_each(|a| *a = DISCARD);
            return true;
        }
        let remaining = self.items.len() - idx;
        if remaining < open || self.suffix[idx] < need {
            return false;
        }

        let mut key_loads = self.loads.clone();
        key_loads.sort_unstable_by(|a, b| b.cmp(a));
        let key = (idx, key_loads);
        if self.failed.contains(&key) {
            return false;
        }

        let value = self.items[idx].0;
        // Fullest open bins first; bins with equal load are interchangeable.
        let mut order: Vec<usize> = (0..self.loads.len()).filter(|&b| self.loads[b] < target).collect();
        order.sort_by(|&a, &b| self.loads[b].cmp(&self.loads[a]).then(a.cmp(&b)));
        let mut tried: Vec<u64> = Vec::with_capacity(order.len());
        for bin in order {
            let load = self.loads[bin];
            if tried.contains(&load) {
                continue;
            }
            tried.push(load);
            self.loads[bin] = (load + value).min(target);
            self.assign[idx] = bin;
            if self.dfs(idx + 1) {
                return true;
            }
            self.loads[bin] = load;
        }

        self.assign[idx] = DISCARD;
        if self.dfs(idx + 1) {
            return true;
        }
        self.failed.insert(key);
        false
    }
}

/// Largest `t` such that the items cover `parts` bins at level `t`, with a
/// witness partition. No size cap: callers enforce their own.
fn max_min_partition(values: &[u64], parts: usize) -> (u64, Vec<Vec<usize>>) {
    let total: u128 = values.iter().map(|&v| v as u128).sum();
    let upper = (total / parts as u128) as u64;

    // Greedy start: largest item onto the lightest bin.
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[b].cmp(&values[a]).then(a.cmp(&b)));
    let mut loads = vec![0u64; parts];
    let mut best: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for i in order {
        let bin = (0..parts).min_by_key(|&b| (loads[b], b)).unwrap();
        loads[bin] += values[i];
        best[bin].push(i);
    }
    best.iter_mut().for_each(|g| g.sort_unstable());
    let mut lo = *loads.iter().min().unwrap();
    let mut hi = upper;

    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        match cover(values, parts, mid) {
            Some(groups) => {
                lo = groups
                    .iter()
                    .map(|g| g.iter().map(|&i| values[i]).sum::<u64>())
                    .min()
                    .unwrap();
                best = groups;
            }
            None => hi = mid - 1,
        }
    }
    (lo, best)
}

fn groups_to_bundles(groups: Vec<Vec<usize>>) -> Vec<Bundle> {
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

/// Exact MMS via binary search over targets with the bin-covering decision.
pub fn mms_exact(
    inst: &Instance,
    agent: usize,
    parts: usize,
    cap: usize,
) -> Result<MmsRecord, MmsError> {
    check_common(inst, agent, parts)?;
    if inst.goods() > cap {
        return Err(MmsError::CapExceeded { engine: "exact", goods: inst.goods(), cap });
    }
    let (value, groups) = max_min_partition(inst.row(agent), parts);
    Ok(MmsRecord {
        agent,
        parts,
        value,
        witness: groups_to_bundles(groups),
        quality: Ratio::ONE,
    })
}

/// Scaled grand total used for the first approximation round.
const APPROX_START_SCALE: u64 = 64;

/// A `(1 - eps)`-approximate MMS.
///
/// Values are scaled to `floor(v * K / V)` (and `ceil(..)` for an upper
/// bound), solved exactly at that resolution, and `K` is doubled until the
/// witness's true minimum is certified to be at least `(1 - eps)` times an
/// upper bound on the MMS. Once `K >= V` the scaling is the identity and the
/// result is exact. The cost depends on the scaled magnitudes, not on `m`,
/// so no goods cap applies.
pub fn mms_approx(
    inst: &Instance,
    agent: usize,
    parts: usize,
    eps: Ratio,
) -> Result<MmsRecord, MmsError> {
    check_common(inst, agent, parts)?;
    if eps.is_zero() || !eps.is_proper() {
        return Err(MmsError::EpsilonOutOfRange(eps));
    }
    let quality = eps.complement().expect("eps < 1");
    let row = inst.row(agent);
    let total = inst.total(agent);
    let true_min = |groups: &[Vec<usize>]| -> u64 {
        groups
            .iter()
            .map(|g| g.iter().map(|&i| row[i]).sum::<u64>())
            .min()
            .unwrap_or(0)
    };

    if total == 0 {
        let mut witness = vec![Bundle::empty(); parts];
        witness[0] = (0..inst.goods()).collect();
        return Ok(MmsRecord { agent, parts, value: 0, witness, quality });
    }

    let simple_upper = total / parts as u64;
    let mut scale = APPROX_START_SCALE.saturating_mul(parts as u64);
    loop {
        if scale >= total {
            let (value, groups) = max_min_partition(row, parts);
            return Ok(MmsRecord {
                agent,
                parts,
                value,
                witness: groups_to_bundles(groups),
                quality: Ratio::ONE,
            });
        }
        let (k, v) = (scale as u128, total as u128);
        let floor: Vec<u64> = row.iter().map(|&x| (x as u128 * k / v) as u64).collect();
        let (_, floor_groups) = max_min_partition(&floor, parts);
        let floor_min = true_min(&floor_groups);
        if quality.le_ratio_of(floor_min, simple_upper) {
            return Ok(MmsRecord {
                agent,
                parts,
                value: floor_min,
                witness: groups_to_bundles(floor_groups),
                quality,
            });
        }

        // ceil(v * K / V) >= v * K / V, so MMS <= MMS_ceil * V / K.
        let ceil: Vec<u64> = row.iter().map(|&x| (x as u128 * k).div_ceil(v) as u64).collect();
        let (ceil_mms, ceil_groups) = max_min_partition(&ceil, parts);
        let upper = simple_upper.min((ceil_mms as u128 * v / k) as u64);
        let ceil_min = true_min(&ceil_groups);
        let (value, groups) = if ceil_min > floor_min {
            (ceil_min, ceil_groups)
        } else {
            (floor_min, floor_groups)
        };
        if quality.le_ratio_of(value, upper) {
            return Ok(MmsRecord {
                agent,
                parts,
                value,
                witness: groups_to_bundles(groups),
                quality,
            });
        }
        scale = scale.saturating_mul(2);
    }
}

/// Witness-bundle classes by how much value the committed goods removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionBuckets {
    /// Removed value `<= w - t`: the survivor alone still meets `t`.
    pub c0: Vec<usize>,
    /// Removed value in `(w - t, w - t/2]`: survivors meet `t` in pairs.
    pub c1: Vec<usize>,
    /// Everything else.
    pub c2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedPartition {
    pub bundles: Vec<Bundle>,
    pub buckets: ReductionBuckets,
}

fn check_witness(inst: &Instance, record: &MmsRecord) -> Result<(), MmsError> {
    let invalid = |reason: String| MmsError::InvalidWitness { parts: record.parts, reason };
    if record.witness.len() != record.parts {
        return Err(invalid(format!("{} bundles", record.witness.len())));
    }
    let mut seen = vec![false; inst.goods()];
    for b in &record.witness {
        for g in b.iter() {
            if g >= inst.goods() {
                return Err(invalid(format!("good {g} out of range")));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(invalid(format!("good {g} duplicated")));
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(g) => Err(invalid(format!("good {g} missing"))),
        None => Ok(()),
    }
}

/// Partitions every good outside `removed` into `r` bundles, each worth at
/// least `t` to `agent`.
///
/// Requires each removed bundle to be worth strictly less than `t`, and the
/// witness minimum `w` to satisfy `2w >= 3t`. Witness bundle `j` loses
/// `D_j = witness_j ∩ removed`; bundles with `v(D_j) <= w - t` survive alone,
/// bundles with `v(D_j) <= w - t/2` survive in consecutive pairs. Counting
/// removed value shows at least `r` such bundles exist; extras and every
/// other leftover good are merged into the last output bundle.
pub fn reduce_partition(
    inst: &Instance,
    agent: usize,
    record: &MmsRecord,
    removed: &[Bundle],
    r: usize,
    t: Share,
) -> Result<ReducedPartition, MmsError> {
    if agent >= inst.agents() {
        return Err(MmsError::AgentOutOfRange(agent));
    }
    if record.agent != agent {
        return Err(MmsError::WrongAgent { record: record.agent, requested: agent });
    }
    check_witness(inst, record)?;
    if r == 0 || record.parts.checked_sub(removed.len()) != Some(r) {
        return Err(MmsError::PartsMismatch { parts: record.parts, removed: removed.len(), r });
    }

    let mut owner: Vec<Option<usize>> = vec![None; inst.goods()];
    for (index, bundle) in removed.iter().enumerate() {
        for g in bundle.iter() {
            if g >= inst.goods() {
                return Err(MmsError::InvalidWitness {
                    parts: record.parts,
                    reason: format!("removed good {g} out of range"),
                });
            }
            if let Some(first) = owner[g].replace(index) {
                return Err(MmsError::OverlappingRemoved { first, second: index, good: g });
            }
        }
        let value = inst.value_of(agent, bundle.goods());
        if !t.exceeds(value) {
            return Err(MmsError::RemovedTooValuable { index, value, threshold: t });
        }
    }

    let w = record.witness_min(inst);
    if 2 * w as u128 * t.denom < 3 * t.numer {
        return Err(MmsError::WitnessTooWeak { witness_min: w, threshold: t });
    }

    let row = inst.row(agent);
    let wq = w as u128 * t.denom;
    let mut buckets = ReductionBuckets::default();
    let mut survivors: Vec<Bundle> = Vec::with_capacity(record.parts);
    for (j, bundle) in record.witness.iter().enumerate() {
        let (lost, kept): (Vec<usize>, Vec<usize>) = bundle.iter().partition(|&g| owner[g].is_some());
        let d = lost.iter().map(|&g| row[g]).sum::<u64>() as u128 * t.denom;
        if d + t.numer <= wq {
            buckets.c0.push(j);
        } else if 2 * d + t.numer <= 2 * wq {
            buckets.c1.push(j);
        } else {
            buckets.c2.push(j);
        }
        survivors.push(kept.into_iter().collect());
    }

    let mut qualifying: Vec<Bundle> = buckets.c0.iter().map(|&j| survivors[j].clone()).collect();
    for pair in buckets.c1.chunks_exact(2) {
        qualifying.push(survivors[pair[0]].union(&survivors[pair[1]]));
    }
    if qualifying.len() < r {
        return Err(MmsError::ShortOfBundles { needed: r, found: qualifying.len() });
    }

    let mut leftover = Bundle::empty();
    for extra in qualifying.drain(r..) {
        leftover = leftover.union(&extra);
    }
    if buckets.c1.len() % 2 == 1 {
        leftover = leftover.union(&survivors[*buckets.c1.last().unwrap()]);
    }
    for &j in &buckets.c2 {
        leftover = leftover.union(&survivors[j]);
    }
    let last = qualifying.last_mut().expect("r >= 1");
    *last = last.union(&leftover);

    Ok(ReducedPartition { bundles: qualifying, buckets })
}
