//! Independent fairness checkers and the two separation fixtures.
//!
//! Only agents' bundles are compared; the pool of a partial allocation is
//! never treated as a rival bundle.

use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::mms::MmsRecord;
use crate::model::{Bundle, Instance, PartialAllocation};
use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("{got} MMS records for {agents} agents")]
    RecordCount { agents: usize, got: usize },
    #[error("record {index} belongs to agent {agent}")]
    RecordOrder { index: usize, agent: usize },
    #[error("record for agent {0} is not exact")]
    InexactRecord(usize),
    #[error("fixture needs n >= {min}, got {got}")]
    FixtureSize { min: usize, got: usize },
}

/// `envious` strongly envies `owner` even after `good` leaves `X_owner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Error)]
#[error("agent {envious} envies agent {owner} even without good {good}")]
pub struct EfxViolation {
    pub envious: usize,
    pub owner: usize,
    pub good: usize,
}

/// `envious` envies `owner` whichever single good is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Error)]
#[error("agent {envious} envies agent {owner} after any single removal")]
pub struct Ef1Violation {
    pub envious: usize,
    pub owner: usize,
}

/// An exact ratio or the "unbounded" marker, serialized as `"p/q"` or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Factor {
    Finite(Ratio),
    Unbounded,
}

impl Factor {
    pub fn at_least(&self, alpha: Ratio) -> bool {
        match self {
            Factor::Finite(r) => *r >= alpha,
            Factor::Unbounded => true,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Finite(r) => write!(f, "{r}"),
            Factor::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for Factor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn rival_values(inst: &Instance, i: usize, b: &Bundle) -> (u64, Option<(usize, u64)>, Option<(usize, u64)>) {
    // (total, cheapest good, dearest good); ties keep the lowest index.
    let mut cheapest: Option<(usize, u64)> = None;
    let mut dearest: Option<(usize, u64)> = None;
    for g in b.iter() {
        let v = inst.value(i, g);
        if cheapest.is_none_or(|(_, c)| v < c) {
            cheapest = Some((g, v));
        }
        if dearest.is_none_or(|(_, d)| v > d) {
            dearest = Some((g, v));
        }
    }
    (inst.value_of(i, b.goods()), cheapest, dearest)
}

fn efx_violations(inst: &Instance, x: &PartialAllocation, alpha: Ratio, first_only: bool) -> Vec<EfxViolation> {
    let n = x.bundles.len();
    let mut out = Vec::new();
    for i in 0..n {
        let own = x.own_value(inst, i);
        for j in (0..n).filter(|&j| j != i) {
            let total = inst.value_of(i, x.bundles[j].goods());
            for g in x.bundles[j].iter() {
                if !alpha.le_ratio_of(own, total - inst.value(i, g)) {
                    out.push(EfxViolation { envious: i, owner: j, good: g });
                    if first_only {
                        return out;
                    }
                }
            }
        }
    }
    out
}

fn ef1_violations(inst: &Instance, x: &PartialAllocation, alpha: Ratio, first_only: bool) -> Vec<Ef1Violation> {
    let n = x.bundles.len();
    let mut out = Vec::new();
    for i in 0..n {
        let own = x.own_value(inst, i);
        for j in (0..n).filter(|&j| j != i) {
            let (total, _, dearest) = rival_values(inst, i, &x.bundles[j]);
            if let Some((_, d)) = dearest {
                if !alpha.le_ratio_of(own, total - d) {
                    out.push(Ef1Violation { envious: i, owner: j });
                    if first_only {
                        return out;
                    }
                }
            }
        }
    }
    out
}

/// Passes iff `v_i(X_i) >= alpha * v_i(X_j \ {g})` for all `i != j`, `g`.
pub fn check_efx(inst: &Instance, x: &PartialAllocation, alpha: Ratio) -> Result<(), EfxViolation> {
    efx_violations(inst, x, alpha, true).into_iter().next().map_or(Ok(()), Err)
}

/// Passes iff every rival bundle is empty or loses some good that brings it
/// to at most `v_i(X_i) / alpha`.
pub fn check_ef1(inst: &Instance, x: &PartialAllocation, alpha: Ratio) -> Result<(), Ef1Violation> {
    ef1_violations(inst, x, alpha, true).into_iter().next().map_or(Ok(()), Err)
}

/// `min_i v_i(X_i) / mms[i]` over agents with positive share.
pub fn mms_ratio(inst: &Instance, x: &PartialAllocation, mms: &[u64]) -> Factor {
    (0..x.bundles.len())
        .filter(|&i| mms[i] > 0)
        .map(|i| Ratio::new(x.own_value(inst, i), mms[i]).expect("positive share"))
        .min()
        .map_or(Factor::Unbounded, Factor::Finite)
}

/// [`mms_ratio`] against exact records, one per agent in agent order.
pub fn check_mms_ratio(inst: &Instance, x: &PartialAllocation, records: &[MmsRecord]) -> Result<Factor, VerifyError> {
    if records.len() != inst.agents() {
        return Err(VerifyError::RecordCount { agents: inst.agents(), got: records.len() });
    }
    for (index, r) in records.iter().enumerate() {
        if r.agent != index {
            return Err(VerifyError::RecordOrder { index, agent: r.agent });
        }
        if !r.is_exact() {
            return Err(VerifyError::InexactRecord(index));
        }
    }
    let mms: Vec<u64> = records.iter().map(|r| r.value).collect();
    Ok(mms_ratio(inst, x, &mms))
}

/// The largest `alpha` for which [`check_efx`] passes.
pub fn efx_factor(inst: &Instance, x: &PartialAllocation) -> Factor {
    let n = x.bundles.len();
    let mut best = Factor::Unbounded;
    for i in 0..n {
        let own = x.own_value(inst, i);
        for j in (0..n).filter(|&j| j != i) {
            let (total, cheapest, _) = rival_values(inst, i, &x.bundles[j]);
            if let Some((_, c)) = cheapest {
                if total > c {
                    best = best.min(Factor::Finite(Ratio::new(own, total - c).expect("positive")));
                }
            }
        }
    }
    best
}

/// The largest `alpha` for which [`check_ef1`] passes.
pub fn ef1_factor(inst: &Instance, x: &PartialAllocation) -> Factor {
    let n = x.bundles.len();
    let mut best = Factor::Unbounded;
    for i in 0..n {
        let own = x.own_value(inst, i);
        for j in (0..n).filter(|&j| j != i) {
            let (total, _, dearest) = rival_values(inst, i, &x.bundles[j]);
            if let Some((_, d)) = dearest {
                if total > d {
                    best = best.min(Factor::Finite(Ratio::new(own, total - d).expect("positive")));
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FairnessReport {
    pub alpha: Ratio,
    pub efx_factor: Factor,
    pub ef1_factor: Factor,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mms_ratio: Option<Factor>,
    pub efx_pass: bool,
    pub ef1_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mms_pass: Option<bool>,
    pub efx_witnesses: Vec<EfxViolation>,
    pub ef1_witnesses: Vec<Ef1Violation>,
}

/// Full report at `alpha`; the MMS part needs exact records.
pub fn fairness_report(
    inst: &Instance,
    x: &PartialAllocation,
    alpha: Ratio,
    records: Option<&[MmsRecord]>,
) -> Result<FairnessReport, VerifyError> {
    let mms_ratio = records.map(|r| check_mms_ratio(inst, x, r)).transpose()?;
    let efx_witnesses = efx_violations(inst, x, alpha, false);
    let ef1_witnesses = ef1_violations(inst, x, alpha, false);
    Ok(FairnessReport {
        alpha,
        efx_factor: efx_factor(inst, x),
        ef1_factor: ef1_factor(inst, x),
        mms_ratio,
        efx_pass: efx_witnesses.is_empty(),
        ef1_pass: ef1_witnesses.is_empty(),
        mms_pass: mms_ratio.map(|r| r.at_least(alpha)),
        efx_witnesses,
        ef1_witnesses,
    })
}

/// Identical agents, `n - 1` goods worth `n` and `n` goods worth `1`.
/// Agent `i < n - 1` holds one good of each kind; the last agent holds a
/// single cheap good. EF1, yet only `1/n`-MMS.
pub fn fixture_prop1(n: usize) -> Result<(Instance, PartialAllocation), VerifyError> {
    if n < 2 {
        return Err(VerifyError::FixtureSize { min: 2, got: n });
    }
    let m = 2 * n - 1;
    let row: Vec<u64> = (0..m).map(|g| if g < n - 1 { n as u64 } else { 1 }).collect();
    let inst = Instance::new(vec![row; n]).expect("small fixture");
    let mut bundles: Vec<Bundle> = (0..n - 1)
        .map(|i| Bundle::new(vec![i, n - 1 + i]).expect("distinct goods"))
        .collect();
    bundles.push(Bundle::new(vec![m - 1]).expect("single good"));
    Ok((inst, PartialAllocation::with_pool_complement(m, bundles)))
}

/// `n` identical agents and two unit goods, both held by the last agent.
/// Every MMS is zero, yet the allocation is not `alpha`-EF1 for any
/// positive `alpha`.
pub fn fixture_prop2(n: usize) -> Result<(Instance, PartialAllocation), VerifyError> {
    if n < 3 {
        return Err(VerifyError::FixtureSize { min: 3, got: n });
    }
    let inst = Instance::new(vec![vec![1, 1]; n]).expect("small fixture");
    let mut bundles = vec![Bundle::empty(); n];
    bundles[n - 1] = Bundle::new(vec![0, 1]).expect("distinct goods");
    Ok((inst, PartialAllocation::with_pool_complement(2, bundles)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::mms_bruteforce;

    fn alloc(m: usize, bundles: &[&[usize]]) -> PartialAllocation {
        PartialAllocation::with_pool_complement(m, bundles.iter().map(|b| Bundle::new(b.to_vec()).unwrap()).collect())
    }

    fn records(inst: &Instance) -> Vec<MmsRecord> {
        (0..inst.agents()).map(|i| mms_bruteforce(inst, i, inst.agents(), 12).unwrap()).collect()
    }

    #[test]
    fn efx_examples() {
        let inst = Instance::new(vec![vec![3, 2, 1]; 2]).unwrap();
        assert_eq!(check_efx(&inst, &alloc(3, &[&[0], &[1, 2]]), Ratio::ONE), Ok(()));
        assert_eq!(check_efx(&inst, &alloc(3, &[&[1, 2], &[0]]), Ratio::ONE), Ok(()));
        let lopsided = alloc(3, &[&[0, 1, 2], &[]]);
        assert_eq!(
            check_efx(&inst, &lopsided, Ratio::ONE),
            Err(EfxViolation { envious: 1, owner: 0, good: 0 })
        );
        assert_eq!(check_efx(&inst, &lopsided, Ratio::ZERO), Ok(()));
        assert_eq!(efx_factor(&inst, &lopsided), Factor::Finite(Ratio::ZERO));
    }

    #[test]
    fn pool_is_not_a_rival() {
        let inst = Instance::new(vec![vec![1, 9]; 2]).unwrap();
        let x = alloc(2, &[&[0], &[]]);
        assert_eq!(check_efx(&inst, &x, Ratio::ONE), Ok(()));
        assert_eq!(check_ef1(&inst, &x, Ratio::ONE), Ok(()));
    }

    #[test]
    fn prop1_fixture() {
        for n in 2..=6 {
            let (inst, x) = fixture_prop1(n).unwrap();
            assert!(x.is_complete());
            assert_eq!(check_ef1(&inst, &x, Ratio::ONE), Ok(()));
            assert_eq!(
                check_mms_ratio(&inst, &x, &records(&inst)).unwrap(),
                Factor::Finite(Ratio::new(1, n as u64).unwrap())
            );
        }
        let (inst, x) = fixture_prop1(3).unwrap();
        assert_eq!(inst.row(0), &[3, 3, 1, 1, 1]);
        assert_eq!(x, alloc(5, &[&[0, 2], &[1, 3], &[4]]));
        let (inst, x) = fixture_prop1(2).unwrap();
        assert_eq!(inst.row(0), &[2, 1, 1]);
        assert_eq!(x, alloc(3, &[&[0, 1], &[2]]));
        assert_eq!(fixture_prop1(1), Err(VerifyError::FixtureSize { min: 2, got: 1 }));
    }

    #[test]
    fn prop2_fixture() {
        for n in 3..=5 {
            let (inst, x) = fixture_prop2(n).unwrap();
            assert_eq!(check_ef1(&inst, &x, Ratio::new(1, 1000).unwrap()), Err(Ef1Violation { envious: 0, owner: n - 1 }));
            assert_eq!(check_mms_ratio(&inst, &x, &records(&inst)).unwrap(), Factor::Unbounded);
            assert_eq!(ef1_factor(&inst, &x), Factor::Finite(Ratio::ZERO));
        }
        assert!(fixture_prop2(2).is_err());
    }

    #[test]
    fn report_lists_all_witnesses() {
        let (inst, x) = fixture_prop2(3).unwrap();
        let report = fairness_report(&inst, &x, Ratio::ONE, Some(&records(&inst))).unwrap();
        assert!(!report.efx_pass && !report.ef1_pass);
        assert_eq!(report.ef1_witnesses.len(), 2);
        assert_eq!(report.efx_witnesses.len(), 4);
        assert_eq!(report.mms_pass, Some(true));
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["mms_ratio"], "inf");
        assert_eq!(json["efx_factor"], "0/1");
    }

    #[test]
    fn records_must_be_complete_and_exact() {
        let (inst, x) = fixture_prop1(2).unwrap();
        let mut recs = records(&inst);
        recs[1].quality = Ratio::new(9, 10).unwrap();
        assert_eq!(check_mms_ratio(&inst, &x, &recs), Err(VerifyError::InexactRecord(1)));
        assert!(matches!(check_mms_ratio(&inst, &x, &recs[..1]), Err(VerifyError::RecordCount { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn setup() -> impl Strategy<Value = (Instance, PartialAllocation)> {
            (1usize..5, 0usize..9).prop_flat_map(|(n, m)| {
                (
                    prop::collection::vec(prop::collection::vec(0u64..15, m), n),
                    prop::collection::vec(0..=n, m),
                )
                    .prop_map(move |(rows, owner)| {
                        let inst = Instance::new(rows).unwrap();
                        let bundles = (0..n).map(|i| (0..m).filter(|&g| owner[g] == i).collect()).collect();
                        (inst, PartialAllocation::with_pool_complement(m, bundles))
                    })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(300))]

            #[test]
            fn checkers_match_naive_loops((inst, x) in setup(), p in 0u64..12, q in 1u64..12) {
                let alpha = Ratio::new(p, q).unwrap();
                let n = inst.agents();
                let v = |i: usize, b: &Bundle| inst.value_of(i, b.goods());
                let mut efx = true;
                let mut ef1 = true;
                for i in 0..n {
                    for j in 0..n {
                        if i == j { continue; }
                        let b = &x.bundles[j];
                        let removals: Vec<bool> = b.iter()
                            .map(|g| q as u128 * v(i, &x.bundles[i]) as u128 >= p as u128 * v(i, &b.without(g)) as u128)
                            .collect();
                        efx &= removals.iter().all(|&ok| ok);
                        ef1 &= b.is_empty() || removals.iter().any(|&ok| ok);
                    }
                }
                prop_assert_eq!(check_efx(&inst, &x, alpha).is_ok(), efx);
                prop_assert_eq!(check_ef1(&inst, &x, alpha).is_ok(), ef1);
                if efx {
                    prop_assert!(ef1);
                }
                prop_assert_eq!(efx_factor(&inst, &x).at_least(alpha), efx);
                prop_assert_eq!(ef1_factor(&inst, &x).at_least(alpha), ef1);
            }

            #[test]
            fn witnesses_recheck((inst, x) in setup()) {
                let report = fairness_report(&inst, &x, Ratio::ONE, None).unwrap();
                for w in &report.efx_witnesses {
                    let own = x.own_value(&inst, w.envious);
                    prop_assert!(inst.value_of(w.envious, x.bundles[w.owner].without(w.good).goods()) > own);
                }
                for w in &report.ef1_witnesses {
                    let own = x.own_value(&inst, w.envious);
                    let b = &x.bundles[w.owner];
                    prop_assert!(b.iter().all(|g| inst.value_of(w.envious, b.without(g).goods()) > own));
                }
            }
        }
    }
}
