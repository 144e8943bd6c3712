//! Instances, bundles and (partial) allocations.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest admissible per-agent total valuation. Keeps `3 * total` and every
/// cross-multiplied threshold comparison inside 128-bit intermediates.
pub const MAX_AGENT_TOTAL: u64 = 1 << 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("valuation matrix has no agents")]
    NoAgents,
    #[error("row {row} has {found} entries, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("negative valuation {value} at row {row}, column {col}")]
    Negative { row: usize, col: usize, value: i64 },
    #[error("row {row} sums past the 2^60 bound")]
    Overflow { row: usize },
    #[error("header declares {declared} {what} but the matrix has {found}")]
    HeaderMismatch { what: &'static str, declared: usize, found: usize },
    #[error("agent index {0} out of range")]
    AgentOutOfRange(usize),
    #[error("good index {0} out of range")]
    GoodOutOfRange(usize),
    #[error("good {0} listed twice in one bundle")]
    DuplicateInBundle(usize),
}

/// An additive fair-division instance: `n` agents, `m` goods and an
/// `n x m` matrix of non-negative integer valuations.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct Instance {
    goods: usize,
    valuations: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

/// On-disk form: `{"agents": n, "goods": m, "valuations": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub agents: usize,
    pub goods: usize,
    pub valuations: Vec<Vec<i64>>,
}

impl Instance {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::NoAgents);
        }
        let goods = rows[0].len();
        let mut totals = Vec::with_capacity(rows.len());
        for (row, values) in rows.iter().enumerate() {
            if values.len() != goods {
                return Err(ModelError::Ragged { row, expected: goods, found: values.len() });
            }
            let mut total: u64 = 0;
            for &v in values {
                total = total
                    .checked_add(v)
                    .filter(|t| *t <= MAX_AGENT_TOTAL)
                    .ok_or(ModelError::Overflow { row })?;
            }
            totals.push(total);
        }
        Ok(Instance { goods, valuations: rows, totals })
    }

    /// Validates signed input, reporting the first negative entry.
    pub fn from_signed(rows: Vec<Vec<i64>>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::NoAgents);
        }
        let goods = rows[0].len();
        let mut out = Vec::with_capacity(rows.len());
        for (row, values) in rows.into_iter().enumerate() {
            if values.len() != goods {
                return Err(ModelError::Ragged { row, expected: goods, found: values.len() });
            }
            let converted = values
                .into_iter()
                .enumerate()
                .map(|(col, value)| {
                    u64::try_from(value).map_err(|_| ModelError::Negative { row, col, value })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(converted);
        }
        Instance::new(out)
    }

    pub fn agents(&self) -> usize {
        self.valuations.len()
    }

    pub fn goods(&self) -> usize {
        self.goods
    }

    pub fn row(&self, agent: usize) -> &[u64] {
        &self.valuations[agent]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.valuations
    }

    pub fn value(&self, agent: usize, good: usize) -> u64 {
        self.valuations[agent][good]
    }

    /// `v_agent(M)`.
    pub fn total(&self, agent: usize) -> u64 {
        self.totals[agent]
    }

    /// Additive value of a set of goods. Panics on out-of-range indices;
    /// use [`Instance::bundle_value`] for checked access.
    pub fn value_of(&self, agent: usize, goods: &[usize]) -> u64 {
        let row = &self.valuations[agent];
        goods.iter().map(|&g| row[g]).sum()
    }

    pub fn bundle_value(&self, agent: usize, bundle: &Bundle) -> Result<u64, ModelError> {
        if agent >= self.agents() {
            return Err(ModelError::AgentOutOfRange(agent));
        }
        if let Some(&g) = bundle.goods().last() {
            if g >= self.goods {
                return Err(ModelError::GoodOutOfRange(g));
            }
        }
        Ok(self.value_of(agent, bundle.goods()))
    }

    /// Multiplies every valuation of one agent by `factor`.
    pub fn with_scaled_row(&self, agent: usize, factor: u64) -> Result<Instance, ModelError> {
        let mut rows = self.valuations.clone();
        for v in &mut rows[agent] {
            *v = v.checked_mul(factor).ok_or(ModelError::Overflow { row: agent })?;
        }
        Instance::new(rows)
    }
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instance")
            .field("agents", &self.agents())
            .field("goods", &self.goods)
            .field("valuations", &self.valuations)
            .finish()
    }
}

impl TryFrom<InstanceFile> for Instance {
    type Error = ModelError;

    fn try_from(file: InstanceFile) -> Result<Self, Self::Error> {
        if file.agents != file.valuations.len() {
            return Err(ModelError::HeaderMismatch {
                what: "agents",
                declared: file.agents,
                found: file.valuations.len(),
            });
        }
        let declared_goods = file.goods;
        let inst = Instance::from_signed(file.valuations)?;
        if inst.goods() != declared_goods {
            return Err(ModelError::HeaderMismatch {
                what: "goods",
                declared: declared_goods,
                found: inst.goods(),
            });
        }
        Ok(inst)
    }
}

impl From<Instance> for InstanceFile {
    fn from(inst: Instance) -> Self {
        InstanceFile {
            agents: inst.agents(),
            goods: inst.goods,
            valuations: inst
                .valuations
                .into_iter()
                .map(|row| row.into_iter().map(|v| v as i64).collect())
                .collect(),
        }
    }
}

/// A set of goods, stored as strictly increasing indices.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Bundle(Vec<usize>);

impl Bundle {
    pub fn empty() -> Self {
        Bundle(Vec::new())
    }

    /// Sorts the goods; fails on duplicates.
    pub fn new(mut goods: Vec<usize>) -> Result<Self, ModelError> {
        goods.sort_unstable();
        if let Some(w) = goods.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::DuplicateInBundle(w[0]));
        }
        Ok(Bundle(goods))
    }

    pub fn goods(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, good: usize) -> bool {
        self.0.binary_search(&good).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn without(&self, good: usize) -> Bundle {
        Bundle(self.0.iter().copied().filter(|&g| g != good).collect())
    }

    pub fn union(&self, other: &Bundle) -> Bundle {
        let mut goods = Vec::with_capacity(self.len() + other.len());
        goods.extend_from_slice(&self.0);
        goods.extend_from_slice(&other.0);
        goods.sort_unstable();
        goods.dedup();
        Bundle(goods)
    }

    pub fn difference(&self, other: &Bundle) -> Bundle {
        Bundle(self.0.iter().copied().filter(|&g| !other.contains(g)).collect())
    }

    pub fn is_disjoint(&self, other: &Bundle) -> bool {
        self.0.iter().all(|&g| !other.contains(g))
    }

    pub fn is_subset(&self, other: &Bundle) -> bool {
        self.0.iter().all(|&g| other.contains(g))
    }
}

impl FromIterator<usize> for Bundle {
    /// Collects into a bundle, silently dropping repeated goods.
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut goods: Vec<usize> = iter.into_iter().collect();
        goods.sort_unstable();
        goods.dedup();
        Bundle(goods)
    }
}

impl TryFrom<Vec<usize>> for Bundle {
    type Error = ModelError;

    fn try_from(goods: Vec<usize>) -> Result<Self, Self::Error> {
        Bundle::new(goods)
    }
}

impl From<Bundle> for Vec<usize> {
    fn from(b: Bundle) -> Self {
        b.0
    }
}

impl fmt::Debug for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(&self.0).finish()
    }
}

/// One bundle per agent plus the pool of unallocated goods.
///
/// Agents without a bundle simply hold the empty bundle; solvers track the
/// "allocated" set separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialAllocation {
    pub bundles: Vec<Bundle>,
    pub pool: Bundle,
}

/// The first invariant an allocation breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("allocation has {found} bundles for {expected} agents")]
    AgentCount { expected: usize, found: usize },
    #[error("good {0} is out of range")]
    OutOfRange(usize),
    #[error("good {0} is duplicated")]
    Duplicated(usize),
    #[error("good {0} is unplaced")]
    Unplaced(usize),
}

impl PartialAllocation {
    /// Everything in the pool.
    pub fn empty(agents: usize, goods: usize) -> Self {
        PartialAllocation {
            bundles: vec![Bundle::empty(); agents],
            pool: (0..goods).collect(),
        }
    }

    /// Builds an allocation whose pool is every good not in `bundles`.
    pub fn with_pool_complement(goods: usize, bundles: Vec<Bundle>) -> Self {
        let pool = (0..goods).filter(|&g| bundles.iter().all(|b| !b.contains(g))).collect();
        PartialAllocation { bundles, pool }
    }

    pub fn bundle(&self, agent: usize) -> &Bundle {
        &self.bundles[agent]
    }

    pub fn is_complete(&self) -> bool {
        self.pool.is_empty()
    }

    /// `v_agent(X_agent)`.
    pub fn own_value(&self, inst: &Instance, agent: usize) -> u64 {
        inst.value_of(agent, self.bundles[agent].goods())
    }

    pub fn values(&self, inst: &Instance) -> Vec<u64> {
        (0..self.bundles.len()).map(|i| self.own_value(inst, i)).collect()
    }
}

/// Checks that bundles and pool partition `{0, .., m-1}` exactly.
pub fn validate_allocation(inst: &Instance, x: &PartialAllocation) -> Result<(), Violation> {
    if x.bundles.len() != inst.agents() {
        return Err(Violation::AgentCount { expected: inst.agents(), found: x.bundles.len() });
    }
    let mut seen = vec![false; inst.goods()];
    for bundle in x.bundles.iter().chain(std::iter::once(&x.pool)) {
        for g in bundle.iter() {
            if g >= inst.goods() {
                return Err(Violation::OutOfRange(g));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(Violation::Duplicated(g));
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(g) => Err(Violation::Unplaced(g)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    PartitionBuilt,
    BundleShrunk,
    Reallocation,
    MatchingCommitted,
    CycleRotated,
    GoodPlaced,
}

/// The lexicographic potential `(sum of allocated agents' own values, |A|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Potential {
    pub value_sum: u128,
    pub allocated: usize,
}

/// A solver state snapshot taken right after the step named by `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub iteration: usize,
    pub kind: TraceKind,
    pub allocated_set: Vec<usize>,
    pub potential: Potential,
    /// Agent bundles after the step.
    pub bundles: Vec<Bundle>,
    /// Agent bundles before the step, for rotations and placements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<Vec<Bundle>>,
    /// Candidate bundles of the current round (partition / shrink steps).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Bundle>,
    /// `(agent, candidate bundle index)` pairs, for committed matchings and
    /// reallocations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched: Vec<(usize, usize)>,
}

/// Computes the potential of an allocation over the given allocated agents.
pub fn potential(inst: &Instance, x: &PartialAllocation, allocated: &[usize]) -> Potential {
    Potential {
        value_sum: allocated.iter().map(|&i| x.own_value(inst, i) as u128).sum(),
        allocated: allocated.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(goods: &[usize]) -> Bundle {
        Bundle::new(goods.to_vec()).unwrap()
    }

    #[test]
    fn builds_minimal_instance() {
        let inst = Instance::new(vec![vec![1]]).unwrap();
        assert_eq!((inst.agents(), inst.goods()), (1, 1));
    }

    #[test]
    fn builds_repeated_rows() {
        let inst = Instance::new(vec![vec![3, 3, 1, 1, 1]; 3]).unwrap();
        assert_eq!((inst.agents(), inst.goods()), (3, 5));
        assert_eq!(inst.total(2), 9);
    }

    #[test]
    fn rejects_ragged_negative_and_overflowing_rows() {
        assert_eq!(
            Instance::new(vec![vec![1, 2], vec![3]]),
            Err(ModelError::Ragged { row: 1, expected: 2, found: 1 })
        );
        assert_eq!(
            Instance::from_signed(vec![vec![1, 2], vec![3, -4]]),
            Err(ModelError::Negative { row: 1, col: 1, value: -4 })
        );
        assert_eq!(
            Instance::new(vec![vec![1], vec![MAX_AGENT_TOTAL, 1]]),
            Err(ModelError::Ragged { row: 1, expected: 1, found: 2 })
        );
        assert_eq!(
            Instance::new(vec![vec![MAX_AGENT_TOTAL, 1]]),
            Err(ModelError::Overflow { row: 0 })
        );
        assert!(Instance::new(vec![vec![MAX_AGENT_TOTAL, 0]]).is_ok());
        assert_eq!(Instance::new(vec![]), Err(ModelError::NoAgents));
    }

    #[test]
    fn zero_goods_is_allowed() {
        let inst = Instance::new(vec![vec![], vec![]]).unwrap();
        assert_eq!(inst.goods(), 0);
        assert_eq!(validate_allocation(&inst, &PartialAllocation::empty(2, 0)), Ok(()));
    }

    #[test]
    fn bundle_values_are_additive_sums() {
        let inst = Instance::new(vec![vec![5, 4, 3], vec![1, 1, 1]]).unwrap();
        assert_eq!(inst.bundle_value(0, &bundle(&[0, 2])), Ok(8));
        assert_eq!(inst.bundle_value(0, &Bundle::empty()), Ok(0));
        assert_eq!(inst.bundle_value(1, &bundle(&[0, 1, 2])), Ok(3));
        assert_eq!(inst.bundle_value(2, &Bundle::empty()), Err(ModelError::AgentOutOfRange(2)));
        assert_eq!(inst.bundle_value(0, &bundle(&[3])), Err(ModelError::GoodOutOfRange(3)));
    }

    #[test]
    fn validates_allocations() {
        let inst = Instance::new(vec![vec![1, 1], vec![1, 1]]).unwrap();
        let ok = PartialAllocation { bundles: vec![bundle(&[0]), bundle(&[1])], pool: Bundle::empty() };
        assert_eq!(validate_allocation(&inst, &ok), Ok(()));

        let dup = PartialAllocation { bundles: vec![bundle(&[0]), bundle(&[0])], pool: Bundle::empty() };
        assert_eq!(validate_allocation(&inst, &dup), Err(Violation::Duplicated(0)));

        let missing = PartialAllocation { bundles: vec![bundle(&[0]), Bundle::empty()], pool: Bundle::empty() };
        assert_eq!(validate_allocation(&inst, &missing), Err(Violation::Unplaced(1)));

        let wide = PartialAllocation { bundles: vec![bundle(&[0, 1]), Bundle::empty()], pool: bundle(&[5]) };
        assert_eq!(validate_allocation(&inst, &wide), Err(Violation::OutOfRange(5)));
    }

    #[test]
    fn bundles_reject_duplicates_and_sort() {
        assert_eq!(Bundle::new(vec![3, 1, 3]), Err(ModelError::DuplicateInBundle(3)));
        assert_eq!(Bundle::new(vec![3, 1]).unwrap().goods(), &[1, 3]);
        let b: Bundle = [4, 2, 2].into_iter().collect();
        assert_eq!(b.goods(), &[2, 4]);
    }

    #[test]
    fn instance_json_round_trip() {
        let json = r#"{"agents":2,"goods":3,"valuations":[[1,2,3],[0,0,7]]}"#;
        let inst: Instance = serde_json::from_str(json).unwrap();
        assert_eq!(inst.value(1, 2), 7);
        assert_eq!(serde_json::to_string(&inst).unwrap(), json);

        let bad = r#"{"agents":3,"goods":3,"valuations":[[1,2,3],[0,0,7]]}"#;
        assert!(serde_json::from_str::<Instance>(bad).is_err());
        let negative = r#"{"agents":1,"goods":1,"valuations":[[-1]]}"#;
        let err = serde_json::from_str::<Instance>(negative).unwrap_err().to_string();
        assert!(err.contains("negative"), "{err}");
    }

    #[test]
    fn allocation_json_round_trip() {
        let x = PartialAllocation { bundles: vec![bundle(&[2, 0]), Bundle::empty()], pool: bundle(&[1]) };
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, r#"{"bundles":[[0,2],[]],"pool":[1]}"#);
        assert_eq!(serde_json::from_str::<PartialAllocation>(&json).unwrap(), x);
        assert!(serde_json::from_str::<PartialAllocation>(r#"{"bundles":[[1,1]],"pool":[]}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance_and_labels() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<usize>, usize)> {
            (1usize..4, 0usize..9, 1usize..5).prop_flat_map(|(n, m, k)| {
                (
                    prop::collection::vec(prop::collection::vec(0u64..100, m), n),
                    prop::collection::vec(0..k, m),
                    Just(k),
                )
            })
        }

        proptest! {
            #[test]
            fn additivity_over_partitions((rows, labels, k) in instance_and_labels()) {
                let inst = Instance::new(rows).unwrap();
                let parts: Vec<Bundle> = (0..k)
                    .map(|b| labels.iter().enumerate().filter(|(_, &l)| l == b).map(|(g, _)| g).collect())
                    .collect();
                let all: Bundle = (0..inst.goods()).collect();
                for agent in 0..inst.agents() {
                    let sum: u64 = parts.iter().map(|p| inst.bundle_value(agent, p).unwrap()).sum();
                    prop_assert_eq!(sum, inst.bundle_value(agent, &all).unwrap());
                }
            }

            #[test]
            fn validation_accepts_iff_each_good_once(
                m in 0usize..8,
                placements in prop::collection::vec(prop::collection::vec(0usize..4, 0..3), 8),
            ) {
                // placements[g] lists the slots (0..2 agents, 3 pool) holding good g.
                let inst = Instance::new(vec![vec![1; m]; 3]).unwrap();
                let mut slots: Vec<Vec<usize>> = vec![Vec::new(); 4];
                for (g, where_) in placements.iter().take(m).enumerate() {
                    for &s in where_ {
                        slots[s].push(g);
                    }
                }
                let once = placements.iter().take(m).all(|w| w.len() == 1);
                let bundles: Result<Vec<Bundle>, _> = slots.into_iter().map(Bundle::new).collect();
                match bundles {
                    Err(_) => prop_assert!(!once),
                    Ok(mut bundles) => {
                        let pool = bundles.pop().unwrap();
                        let x = PartialAllocation { bundles, pool };
                        prop_assert_eq!(validate_allocation(&inst, &x).is_ok(), once);
                    }
                }
            }
        }
    }
}
