//! Threshold graphs between agents and candidate bundles, maximum matchings,
//! minimal Hall violators, and closed matchings.
//!
//! Agents are addressed by their *local* position in the graph's agent list;
//! [`ClosedMatching`] translates back to instance indices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bundle, Instance};
use crate::ratio::{Ratio, Share};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchingError {
    #[error("{agents} agents but {bundles} bundles")]
    SizeMismatch { agents: usize, bundles: usize },
    #[error("{agents} agents but {thresholds} thresholds")]
    ThresholdCount { agents: usize, thresholds: usize },
    #[error("agent {0} out of range")]
    AgentOutOfRange(usize),
    #[error("agent {0} listed twice")]
    DuplicateAgent(usize),
    #[error("bundles {first} and {second} share good {good}")]
    Overlap { first: usize, second: usize, good: usize },
    #[error("bundle {bundle} contains out-of-range good {good}")]
    GoodOutOfRange { bundle: usize, good: usize },
    #[error("the matching is perfect, so no Hall violator exists")]
    PerfectMatching,
    #[error("the matching is not maximum: agent {0} is reachable and free")]
    NotMaximum(usize),
    #[error("row-full mode needs an agent adjacent to every bundle")]
    NoFullRow,
    #[error("column-covered mode needs a neighbor for every bundle; bundle {0} has none")]
    UncoveredBundle(usize),
    #[error("graph has no bundles")]
    Empty,
    #[error("internal: could not saturate the trimmed violator ({matched} of {needed})")]
    Unsaturated { matched: usize, needed: usize },
}

/// Bipartite graph joining local agent `a` to bundle `j` iff
/// `v_a(bundle_j) >= threshold_a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdGraph {
    agents: Vec<usize>,
    bundles: Vec<Bundle>,
    thresholds: Vec<Share>,
    adjacency: Vec<Vec<bool>>,
}

impl ThresholdGraph {
    /// `agents[k]` is the instance index of local agent `k`; `thresholds[k]`
    /// is that agent's share threshold.
    pub fn new(
        inst: &Instance,
        bundles: Vec<Bundle>,
        agents: Vec<usize>,
        thresholds: Vec<Share>,
    ) -> Result<Self, MatchingError> {
        if agents.len() != bundles.len() {
            return Err(MatchingError::SizeMismatch { agents: agents.len(), bundles: bundles.len() });
        }
        if agents.len() != thresholds.len() {
            return Err(MatchingError::ThresholdCount {
                agents: agents.len(),
                thresholds: thresholds.len(),
            });
        }
        let mut seen_agent = vec![false; inst.agents()];
        for &a in &agents {
            if a >= inst.agents() {
                return Err(MatchingError::AgentOutOfRange(a));
            }
            if std::mem::replace(&mut seen_agent[a], true) {
                return Err(MatchingError::DuplicateAgent(a));
            }
        }
        let mut owner: Vec<Option<usize>> = vec![None; inst.goods()];
        for (j, b) in bundles.iter().enumerate() {
            for g in b.iter() {
                if g >= inst.goods() {
                    return Err(MatchingError::GoodOutOfRange { bundle: j, good: g });
                }
                if let Some(first) = owner[g].replace(j) {
                    return Err(MatchingError::Overlap { first, second: j, good: g });
                }
            }
        }
        let adjacency = agents
            .iter()
            .zip(&thresholds)
            .map(|(&a, t)| bundles.iter().map(|b| t.met_by(inst.value_of(a, b.goods()))).collect())
            .collect();
        Ok(ThresholdGraph { agents, bundles, thresholds, adjacency })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn bundle_count(&self) -> usize {
        self.bundles.len()
    }

    /// Instance indices of the graph's agents, by local position.
    pub fn agents(&self) -> &[usize] {
        &self.agents
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.bundles
    }

    pub fn threshold(&self, local: usize) -> Share {
        self.thresholds[local]
    }

    pub fn has_edge(&self, local: usize, bundle: usize) -> bool {
        self.adjacency[local][bundle]
    }

    /// Local agents adjacent to any bundle in `set`, ascending.
    pub fn neighbors(&self, set: &[usize]) -> Vec<usize> {
        (0..self.agent_count())
            .filter(|&a| set.iter().any(|&j| self.adjacency[a][j]))
            .collect()
    }
}

/// Builds the graph with thresholds `factor * mms[a]` for each listed agent.
pub fn build_threshold_graph(
    inst: &Instance,
    bundles: Vec<Bundle>,
    agents: Vec<usize>,
    mms: &[u64],
    factor: Ratio,
) -> Result<ThresholdGraph, MatchingError> {
    if let Some(&a) = agents.iter().find(|&&a| a >= mms.len()) {
        return Err(MatchingError::AgentOutOfRange(a));
    }
    let thresholds = agents.iter().map(|&a| factor.of(mms[a])).collect();
    ThresholdGraph::new(inst, bundles, agents, thresholds)
}

/// A matching over local agent positions and bundle indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    agent_to_bundle: Vec<Option<usize>>,
    bundle_to_agent: Vec<Option<usize>>,
}

impl Matching {
    fn empty(agents: usize, bundles: usize) -> Self {
        Matching { agent_to_bundle: vec![None; agents], bundle_to_agent: vec![None; bundles] }
    }

    pub fn size(&self) -> usize {
        self.bundle_to_agent.iter().flatten().count()
    }

    pub fn agent_of(&self, bundle: usize) -> Option<usize> {
        self.bundle_to_agent[bundle]
    }

    pub fn bundle_of(&self, local: usize) -> Option<usize> {
        self.agent_to_bundle[local]
    }

    /// `(local agent, bundle)` pairs ordered by bundle.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.bundle_to_agent
            .iter()
            .enumerate()
            .filter_map(|(j, a)| a.map(|a| (a, j)))
            .collect()
    }
}

/// Kuhn's augmenting-path matching restricted to the allowed vertices.
/// Bundles are processed in ascending order and agents scanned ascending.
fn kuhn(g: &ThresholdGraph, bundle_ok: &[bool], agent_ok: &[bool]) -> Matching {
    fn augment(
        g: &ThresholdGraph,
        j: usize,
        agent_ok: &[bool],
        visited: &mut [bool],
        m: &mut Matching,
    ) -> bool {
        for a in 0..g.agent_count() {
            if !agent_ok[a] || !g.adjacency[a][j] || visited[a] {
                continue;
            }
            visited[a] = true;
            let free = match m.agent_to_bundle[a] {
                None => true,
                Some(other) => augment(g, other, agent_ok, visited, m),
            };
            if free {
                m.agent_to_bundle[a] = Some(j);
                m.bundle_to_agent[j] = Some(a);
                return true;
            }
        }
        false
    }

    let mut m = Matching::empty(g.agent_count(), g.bundle_count());
    for j in 0..g.bundle_count() {
        if bundle_ok[j] {
            let mut visited = vec![false; g.agent_count()];
            augment(g, j, agent_ok, &mut visited, &mut m);
        }
    }
    m
}

/// Maximum-cardinality matching; deterministic for a fixed graph.
pub fn max_matching(g: &ThresholdGraph) -> Matching {
    kuhn(g, &vec![true; g.bundle_count()], &vec![true; g.agent_count()])
}

/// A set of bundles whose neighborhood is smaller than the set itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallViolator {
    /// Bundle indices, ascending.
    pub bundles: Vec<usize>,
    /// Local agent positions of `N(bundles)`, ascending.
    pub neighbors: Vec<usize>,
    /// Set when some bundle has no neighbor at all.
    pub degenerate: bool,
}

/// Bundles reachable from `start` by alternating paths (edge to an agent,
/// matched edge back to a bundle). With `m` maximum over `allowed`, the
/// reached bundles form a Hall violator.
fn alternating_reach(
    g: &ThresholdGraph,
    m: &Matching,
    allowed: &[bool],
    start: usize,
) -> Result<Vec<usize>, MatchingError> {
    let mut in_set = vec![false; g.bundle_count()];
    let mut seen_agent = vec![false; g.agent_count()];
    let mut queue = vec![start];
    in_set[start] = true;
    while let Some(j) = queue.pop() {
        for a in 0..g.agent_count() {
            if !g.adjacency[a][j] || std::mem::replace(&mut seen_agent[a], true) {
                continue;
            }
            match m.agent_to_bundle[a] {
                Some(next) if allowed[next] => {
                    if !std::mem::replace(&mut in_set[next], true) {
                        queue.push(next);
                    }
                }
                _ => return Err(MatchingError::NotMaximum(a)),
            }
        }
    }
    Ok((0..g.bundle_count()).filter(|&j| in_set[j]).collect())
}

/// An inclusion-minimal Hall violator.
///
/// Starts from the alternating-path closure of the lowest unmatched bundle,
/// then repeatedly tries dropping each element in ascending order: whenever
/// `S \ {x}` still has no perfect matching into its neighborhood, `S` is
/// replaced by a violator found inside `S \ {x}` and the scan restarts. The
/// final `S` has every proper subset matchable, so `|N(S)| = |S| - 1`.
pub fn minimal_hall_violator(g: &ThresholdGraph, mm: &Matching) -> Result<HallViolator, MatchingError> {
    let start = (0..g.bundle_count())
        .find(|&j| mm.bundle_to_agent[j].is_none())
        .ok_or(MatchingError::PerfectMatching)?;
    let mut set = alternating_reach(g, mm, &vec![true; g.bundle_count()], start)?;
    let all_agents = vec![true; g.agent_count()];

    'shrink: loop {
        for &x in &set {
            let mut allowed = vec![false; g.bundle_count()];
            for &j in &set {
                allowed[j] = j != x;
            }
            let sub = kuhn(g, &allowed, &all_agents);
            if sub.size() + 1 < set.len() {
                let start = (0..g.bundle_count())
                    .find(|&j| allowed[j] && sub.bundle_to_agent[j].is_none())
                    .expect("an allowed bundle is unmatched");
                set = alternating_reach(g, &sub, &allowed, start)?;
                continue 'shrink;
            }
        }
        break;
    }

    let neighbors = g.neighbors(&set);
    let degenerate = set.iter().any(|&j| (0..g.agent_count()).all(|a| !g.adjacency[a][j]));
    Ok(HallViolator { bundles: set, neighbors, degenerate })
}

/// Which feasibility guarantee the caller relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosureMode {
    /// Some agent is adjacent to every bundle.
    RowFull,
    /// Every bundle has at least one neighbor.
    ColumnCovered,
}

/// A non-empty matching whose bundles have no unmatched neighbors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedMatching {
    /// `(instance agent, bundle index)` ordered by bundle.
    pub pairs: Vec<(usize, usize)>,
}

pub fn closed_matching(g: &ThresholdGraph, mode: ClosureMode) -> Result<ClosedMatching, MatchingError> {
    let n = g.bundle_count();
    if n == 0 {
        return Err(MatchingError::Empty);
    }
    match mode {
        ClosureMode::RowFull => {
            if !(0..g.agent_count()).any(|a| (0..n).all(|j| g.adjacency[a][j])) {
                return Err(MatchingError::NoFullRow);
            }
        }
        ClosureMode::ColumnCovered => {
            if let Some(j) = (0..n).find(|&j| (0..g.agent_count()).all(|a| !g.adjacency[a][j])) {
                return Err(MatchingError::UncoveredBundle(j));
            }
        }
    }

    let mm = max_matching(g);
    let local_pairs = if mm.size() == n && g.agent_count() == n {
        mm.pairs()
    } else {
        let violator = minimal_hall_violator(g, &mm)?;
        let mut bundle_ok = vec![false; n];
        for &j in &violator.bundles[..violator.bundles.len() - 1] {
            bundle_ok[j] = true;
        }
        let mut agent_ok = vec![false; g.agent_count()];
        for &a in &violator.neighbors {
            agent_ok[a] = true;
        }
        let inner = kuhn(g, &bundle_ok, &agent_ok);
        let needed = violator.bundles.len() - 1;
        if inner.size() != needed || needed == 0 {
            return Err(MatchingError::Unsaturated { matched: inner.size(), needed });
        }
        inner.pairs()
    };
    Ok(ClosedMatching { pairs: local_pairs.into_iter().map(|(a, j)| (g.agents[a], j)).collect() })
}

/// Re-checks the closed-matching contract by scanning every edge.
pub fn is_closed(g: &ThresholdGraph, cm: &ClosedMatching) -> bool {
    if cm.pairs.is_empty() {
        return false;
    }
    let mut agent_used = vec![false; g.agent_count()];
    let mut bundle_used = vec![false; g.bundle_count()];
    for &(agent, j) in &cm.pairs {
        let Some(local) = g.agents.iter().position(|&a| a == agent) else {
            return false;
        };
        if j >= g.bundle_count()
            || !g.adjacency[local][j]
            || std::mem::replace(&mut agent_used[local], true)
            || std::mem::replace(&mut bundle_used[j], true)
        {
            return false;
        }
    }
    (0..g.agent_count())
        .all(|a| agent_used[a] || (0..g.bundle_count()).all(|j| !bundle_used[j] || !g.adjacency[a][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Graph with edge (a, j) iff `edges[a][j]`, realized as singleton
    /// bundles with 0/1 values and unit thresholds.
    pub(crate) fn graph(edges: &[Vec<bool>]) -> ThresholdGraph {
        let n = edges.len();
        let rows = edges.iter().map(|r| r.iter().map(|&e| e as u64).collect()).collect();
        let inst = Instance::new(rows).unwrap();
        let bundles = (0..n).map(|j| Bundle::new(vec![j]).unwrap()).collect();
        ThresholdGraph::new(&inst, bundles, (0..n).collect(), vec![Share::new(1, 1); n]).unwrap()
    }

    fn brute_max_matching(edges: &[Vec<bool>]) -> usize {
        fn go(edges: &[Vec<bool>], a: usize, used: &mut Vec<bool>) -> usize {
            if a == edges.len() {
                return 0;
            }
            let mut best = go(edges, a + 1, used);
            for j in 0..used.len() {
                if edges[a][j] && !used[j] {
                    used[j] = true;
                    best = best.max(1 + go(edges, a + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let cols = edges.first().map_or(0, Vec::len);
        go(edges, 0, &mut vec![false; cols])
    }

    /// Whether `set` can be matched into the agents in full.
    fn has_perfect_matching_into(g: &ThresholdGraph, set: &[usize]) -> bool {
        let mut ok = vec![false; g.bundle_count()];
        set.iter().for_each(|&j| ok[j] = true);
        kuhn(g, &ok, &vec![true; g.agent_count()]).size() == set.len()
    }

    #[test]
    fn threshold_graph_examples() {
        let inst = Instance::new(vec![vec![2, 0]]).unwrap();
        let b = |g| Bundle::new(vec![g]).unwrap();
        let g = build_threshold_graph(&inst, vec![b(0)], vec![0], &[3], Ratio::TWO_THIRDS).unwrap();
        assert!(g.has_edge(0, 0));
        let g = build_threshold_graph(&inst, vec![b(1)], vec![0], &[3], Ratio::TWO_THIRDS).unwrap();
        assert!(!g.has_edge(0, 0));
        let g = build_threshold_graph(&inst, vec![b(1)], vec![0], &[3], Ratio::ZERO).unwrap();
        assert!(g.has_edge(0, 0));
        assert!(matches!(
            build_threshold_graph(&inst, vec![b(0), b(1)], vec![0], &[3], Ratio::ZERO),
            Err(MatchingError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn max_matching_examples() {
        assert_eq!(max_matching(&graph(&[vec![true; 3], vec![true; 3], vec![true; 3]])).size(), 3);
        assert_eq!(max_matching(&graph(&[vec![false; 2], vec![false; 2]])).size(), 0);
        // a0-b0, a1-b0, a1-b1
        assert_eq!(max_matching(&graph(&[vec![true, false], vec![true, true]])).size(), 2);
    }

    #[test]
    fn violator_examples() {
        let g = graph(&[vec![true, true], vec![false, false]]);
        let v = minimal_hall_violator(&g, &max_matching(&g)).unwrap();
        assert_eq!(v.bundles, vec![0, 1]);
        assert_eq!(v.neighbors, vec![0]);
        assert!(!v.degenerate);

        let g = graph(&[vec![true, false], vec![true, false]]);
        let v = minimal_hall_violator(&g, &max_matching(&g)).unwrap();
        assert_eq!(v.bundles, vec![1]);
        assert!(v.neighbors.is_empty() && v.degenerate);

        let g = graph(&[vec![true, false], vec![false, true]]);
        assert_eq!(minimal_hall_violator(&g, &max_matching(&g)), Err(MatchingError::PerfectMatching));
    }

    #[test]
    fn violator_stays_local() {
        // The whole bundle side violates Hall's condition, but only bundles
        // 0 and 1 (both seeing just agent 0) are needed.
        let g = graph(&[
            vec![true, true, true, false],
            vec![false, false, true, true],
            vec![false, false, false, true],
            vec![false, false, false, false],
        ]);
        let v = minimal_hall_violator(&g, &max_matching(&g)).unwrap();
        assert_eq!(v.bundles, vec![0, 1]);
        assert_eq!(v.neighbors, vec![0]);
    }

    #[test]
    fn closed_matching_examples() {
        let g = graph(&[vec![true, false], vec![false, true]]);
        let cm = closed_matching(&g, ClosureMode::ColumnCovered).unwrap();
        assert_eq!(cm.pairs, vec![(0, 0), (1, 1)]);

        let g = graph(&[vec![true, true], vec![false, false]]);
        let cm = closed_matching(&g, ClosureMode::RowFull).unwrap();
        assert_eq!(cm.pairs.len(), 1);
        assert!(is_closed(&g, &cm));

        let g = graph(&[
            vec![true, true, false],
            vec![true, true, false],
            vec![false, false, true],
        ]);
        let cm = closed_matching(&g, ClosureMode::ColumnCovered).unwrap();
        assert!(is_closed(&g, &cm));

        let g = graph(&[vec![true, false], vec![true, false]]);
        assert_eq!(closed_matching(&g, ClosureMode::ColumnCovered), Err(MatchingError::UncoveredBundle(1)));
        assert_eq!(closed_matching(&g, ClosureMode::RowFull), Err(MatchingError::NoFullRow));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn edges() -> impl Strategy<Value = Vec<Vec<bool>>> {
            (1usize..7).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(any::<bool>(), n), n))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(400))]

            #[test]
            fn max_matching_is_maximum(e in edges()) {
                prop_assert_eq!(max_matching(&graph(&e)).size(), brute_max_matching(&e));
            }

            #[test]
            fn violators_are_minimal(e in edges()) {
                let g = graph(&e);
                let mm = max_matching(&g);
                prop_assume!(mm.size() < g.bundle_count());
                let v = minimal_hall_violator(&g, &mm).unwrap();
                prop_assert_eq!(v.neighbors.len() + 1, v.bundles.len());
                prop_assert_eq!(&v.neighbors, &g.neighbors(&v.bundles));
                for skip in 0..v.bundles.len() {
                    let rest: Vec<usize> = v.bundles.iter().copied().enumerate()
                        .filter(|&(k, _)| k != skip).map(|(_, j)| j).collect();
                    prop_assert!(has_perfect_matching_into(&g, &rest));
                }
            }

            #[test]
            fn closed_matchings_are_closed(e in edges(), row_full in any::<bool>()) {
                let mut e = e;
                let n = e.len();
                if row_full {
                    let a = n / 2;
                    e[a] = vec![true; n];
                } else {
                    for j in 0..n {
                        if (0..n).all(|a| !e[a][j]) {
                            e[j % n][j] = true;
                        }
                    }
                }
                let g = graph(&e);
                let mode = if row_full { ClosureMode::RowFull } else { ClosureMode::ColumnCovered };
                let cm = closed_matching(&g, mode).unwrap();
                prop_assert!(is_closed(&g, &cm));
            }
        }
    }
}
