//! Envy graphs, strong envy with an optional `delta` relaxation, minimal
//! envied subsets, most-envious refinement, and envy-cycle elimination.

use thiserror::Error;

use crate::model::{validate_allocation, Bundle, Instance, PartialAllocation, Violation};
use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvyError {
    #[error("agent {agent} does not value the bundle above {target}")]
    NotEnvied { agent: usize, target: u64 },
    #[error("no candidate strongly envies the bundle")]
    NoStrongEnvy,
    #[error("delta {0} must be below 1")]
    DeltaOutOfRange(Ratio),
    #[error("invalid allocation: {0}")]
    Invalid(#[from] Violation),
}

/// Directed graph with `i -> j` iff `v_i(X_j) > v_i(X_i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvyGraph {
    edges: Vec<Vec<bool>>,
}

impl EnvyGraph {
    pub fn new(inst: &Instance, x: &PartialAllocation) -> Self {
        let n = x.bundles.len();
        let edges = (0..n)
            .map(|i| {
                let own = x.own_value(inst, i);
                (0..n)
                    .map(|j| j != i && inst.value_of(i, x.bundles[j].goods()) > own)
                    .collect()
            })
            .collect();
        EnvyGraph { edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn envies(&self, i: usize, j: usize) -> bool {
        self.edges[i][j]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().flatten().filter(|&&e| e).count()
    }

    /// Agents nobody envies, ascending.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| (0..self.len()).all(|i| !self.edges[i][j])).collect()
    }

    /// The first cycle found by depth-first search from the lowest possible
    /// start `s`, visiting only nodes above `s` and neighbors in ascending
    /// order. Returned as `[s, i_2, .., i_k]` with `i_k -> s`.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        let n = self.len();
        for s in 0..n {
            let mut visited = vec![false; n];
            let mut path = vec![s];
            let mut next = vec![0usize];
            visited[s] = true;
            while let Some(cursor) = next.last_mut() {
                let u = *path.last().unwrap();
                if *cursor == n {
                    next.pop();
                    path.pop();
                    continue;
                }
                let v = *cursor;
                *cursor += 1;
                if !self.edges[u][v] {
                    continue;
                }
                if v == s {
                    return Some(path);
                }
                if v > s && !visited[v] {
                    visited[v] = true;
                    path.push(v);
                    next.push(0);
                }
            }
        }
        None
    }
}

/// `1 - delta`, the multiplier applied to the rival bundle.
fn keep_factor(delta: Ratio) -> Ratio {
    delta.complement().ok().filter(|_| delta.is_proper()).unwrap_or(Ratio::ZERO)
}

/// Whether `(1 - delta) * v_a(b \ {g}) > v_a(X_a)` for some `g` in `b`.
/// Only the cheapest removal matters.
pub fn strongly_envies(inst: &Instance, x: &PartialAllocation, a: usize, b: &Bundle, delta: Ratio) -> bool {
    let own = x.own_value(inst, a);
    strongly_exceeds(inst, a, b, own, keep_factor(delta))
}

fn strongly_exceeds(inst: &Instance, a: usize, b: &Bundle, own: u64, keep: Ratio) -> bool {
    let Some(cheapest) = b.iter().map(|g| inst.value(a, g)).min() else {
        return false;
    };
    let rest = inst.value_of(a, b.goods()) - cheapest;
    keep.scaled_exceeds(rest, own)
}

/// Inclusion-minimal `Z ⊆ b` with `v_a(Z) > target`: scan goods ascending
/// and drop each one whose removal keeps the value above `target`.
pub fn min_envied_subset(inst: &Instance, a: usize, b: &Bundle, target: u64) -> Result<Bundle, EnvyError> {
    min_subset_exceeding(inst, a, b, target, Ratio::ONE)
}

/// Like [`min_envied_subset`] with the test `keep * v_a(Z) > target`.
fn min_subset_exceeding(inst: &Instance, a: usize, b: &Bundle, target: u64, keep: Ratio) -> Result<Bundle, EnvyError> {
    let mut value = inst.value_of(a, b.goods());
    if !keep.scaled_exceeds(value, target) {
        return Err(EnvyError::NotEnvied { agent: a, target });
    }
    let mut kept = Vec::with_capacity(b.len());
    for g in b.iter() {
        let without = value - inst.value(a, g);
        if keep.scaled_exceeds(without, target) {
            value = without;
        } else {
            kept.push(g);
        }
    }
    Ok(Bundle::new(kept).expect("subset of a bundle"))
}

/// Finds an agent `a*` among `candidates` and `Z ⊆ b` such that `a*`
/// prefers `Z` to its own bundle and no candidate strongly envies `Z`.
///
/// Repeatedly hands `Z` to the first candidate that strongly envies it and
/// shrinks `Z` to a minimal subset that candidate still prefers by the
/// factor `1 / (1 - delta)`. With `delta = 0` this is the plain minimal
/// envied subset.
pub fn most_envious_refine(
    inst: &Instance,
    x: &PartialAllocation,
    b: &Bundle,
    candidates: &[usize],
    delta: Ratio,
) -> Result<(usize, Bundle), EnvyError> {
    if !delta.is_proper() {
        return Err(EnvyError::DeltaOutOfRange(delta));
    }
    let keep = keep_factor(delta);
    let mut z = b.clone();
    let mut chosen = None;
    while let Some(&c) = candidates.iter().find(|&&c| strongly_envies(inst, x, c, &z, delta)) {
        z = min_subset_exceeding(inst, c, &z, x.own_value(inst, c), keep)?;
        chosen = Some(c);
    }
    chosen.map(|c| (c, z)).ok_or(EnvyError::NoStrongEnvy)
}

/// A single step of envy-cycle elimination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CycleStep {
    Rotated {
        cycle: Vec<usize>,
        before: Vec<Bundle>,
        edges_before: usize,
        edges_after: usize,
    },
    Placed {
        agent: usize,
        good: usize,
        before: Vec<Bundle>,
    },
}

fn rotate(x: &mut PartialAllocation, cycle: &[usize]) {
    // i_j receives X_{i_{j+1}}; the last receives X_{i_1}.
    let first = x.bundles[cycle[0]].clone();
    for w in cycle.windows(2) {
        x.bundles[w[0]] = x.bundles[w[1]].clone();
    }
    x.bundles[*cycle.last().unwrap()] = first;
}

fn clear_cycles(inst: &Instance, x: &mut PartialAllocation, observe: &mut dyn FnMut(&PartialAllocation, CycleStep)) {
    loop {
        let graph = EnvyGraph::new(inst, x);
        let Some(cycle) = graph.find_cycle() else {
            return;
        };
        let before = x.bundles.clone();
        rotate(x, &cycle);
        let edges_after = EnvyGraph::new(inst, x).edge_count();
        observe(x, CycleStep::Rotated { cycle, before, edges_before: graph.edge_count(), edges_after });
    }
}

/// Rotates bundles along envy cycles until the envy graph is acyclic.
pub fn eliminate_cycles(inst: &Instance, x: &PartialAllocation) -> PartialAllocation {
    let mut out = x.clone();
    clear_cycles(inst, &mut out, &mut |_, _| {});
    out
}

/// Runs envy-cycle elimination, reporting every rotation and placement.
pub fn envy_cycle_elimination_observed(
    inst: &Instance,
    x: &PartialAllocation,
    observe: &mut dyn FnMut(&PartialAllocation, CycleStep),
) -> Result<PartialAllocation, EnvyError> {
    validate_allocation(inst, x)?;
    let mut out = x.clone();
    while let Some(&good) = out.pool.goods().first() {
        clear_cycles(inst, &mut out, observe);
        let agent = EnvyGraph::new(inst, &out).sources()[0];
        let before = out.bundles.clone();
        out.bundles[agent] = out.bundles[agent].union(&Bundle::new(vec![good]).expect("single good"));
        out.pool = out.pool.without(good);
        observe(&out, CycleStep::Placed { agent, good, before });
    }
    Ok(out)
}

/// Completes `x` by handing the lowest pool good to the lowest source,
/// clearing envy cycles before every placement.
pub fn envy_cycle_elimination(inst: &Instance, x: &PartialAllocation) -> Result<PartialAllocation, EnvyError> {
    envy_cycle_elimination_observed(inst, x, &mut |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(goods: &[usize]) -> Bundle {
        Bundle::new(goods.to_vec()).unwrap()
    }

    fn alloc(m: usize, bundles: &[&[usize]]) -> PartialAllocation {
        PartialAllocation::with_pool_complement(m, bundles.iter().map(|b| bundle(b)).collect())
    }

    #[test]
    fn strong_envy_examples() {
        let inst = Instance::new(vec![vec![3, 2, 2, 1]]).unwrap();
        let holds3 = alloc(4, &[&[0]]);
        let holds1 = alloc(4, &[&[3]]);
        assert!(!strongly_envies(&inst, &holds1, 0, &bundle(&[0]), Ratio::ZERO));
        assert!(!strongly_envies(&inst, &holds3, 0, &bundle(&[1, 2]), Ratio::ZERO));
        assert!(strongly_envies(&inst, &holds1, 0, &bundle(&[1, 2]), Ratio::ZERO));
        // 0.4 * 2 = 0.8 < 1
        assert!(!strongly_envies(&inst, &holds1, 0, &bundle(&[1, 2]), Ratio::new(3, 5).unwrap()));
        assert!(!strongly_envies(&inst, &holds1, 0, &Bundle::empty(), Ratio::ZERO));
    }

    #[test]
    fn min_envied_subset_examples() {
        let inst = Instance::new(vec![vec![5, 3, 3, 1, 1, 1]]).unwrap();
        assert_eq!(min_envied_subset(&inst, 0, &bundle(&[0]), 3).unwrap(), bundle(&[0]));
        assert_eq!(min_envied_subset(&inst, 0, &bundle(&[1, 2]), 2).unwrap(), bundle(&[2]));
        assert_eq!(min_envied_subset(&inst, 0, &bundle(&[3, 4, 5]), 2).unwrap(), bundle(&[3, 4, 5]));
        assert_eq!(
            min_envied_subset(&inst, 0, &bundle(&[3]), 2),
            Err(EnvyError::NotEnvied { agent: 0, target: 2 })
        );
    }

    #[test]
    fn refinement_hands_off() {
        // Agent 0 holds value 1 and strongly envies {0,1,2,3}; its minimal
        // subset {2,3} is still strongly envied by agent 1, who ends up
        // with the singleton {3}.
        let inst = Instance::new(vec![
            vec![1, 1, 1, 1, 0, 1],
            vec![0, 0, 2, 2, 1, 0],
        ])
        .unwrap();
        let x = alloc(6, &[&[5], &[4]]);
        let b = bundle(&[0, 1, 2, 3]);
        let (agent, z) = most_envious_refine(&inst, &x, &b, &[0, 1], Ratio::ZERO).unwrap();
        assert_eq!((agent, z.clone()), (1, bundle(&[3])));
        assert!(inst.value_of(agent, z.goods()) > x.own_value(&inst, agent));
        assert!([0, 1].iter().all(|&c| !strongly_envies(&inst, &x, c, &z, Ratio::ZERO)));
        assert_eq!(
            most_envious_refine(&inst, &x, &bundle(&[2]), &[0, 1], Ratio::ZERO),
            Err(EnvyError::NoStrongEnvy)
        );
    }

    #[test]
    fn two_way_swap() {
        let inst = Instance::new(vec![vec![1, 5], vec![5, 1]]).unwrap();
        let x = alloc(2, &[&[0], &[1]]);
        let y = eliminate_cycles(&inst, &x);
        assert_eq!(y.bundles, vec![bundle(&[1]), bundle(&[0])]);
        assert_eq!(y.values(&inst), vec![5, 5]);
        assert_eq!(eliminate_cycles(&inst, &y), y);
    }

    #[test]
    fn three_cycle_rotation() {
        // i envies i+1 only.
        let inst = Instance::new(vec![vec![1, 2, 0], vec![0, 1, 2], vec![2, 0, 1]]).unwrap();
        let x = alloc(3, &[&[0], &[1], &[2]]);
        let g = EnvyGraph::new(&inst, &x);
        assert_eq!(g.find_cycle(), Some(vec![0, 1, 2]));
        let y = eliminate_cycles(&inst, &x);
        assert_eq!(y.values(&inst), vec![2, 2, 2]);
        assert_eq!(g.edge_count() - EnvyGraph::new(&inst, &y).edge_count(), 3);
    }

    #[test]
    fn cycle_elimination_examples() {
        let one = Instance::new(vec![vec![4, 1, 0]]).unwrap();
        let y = envy_cycle_elimination(&one, &PartialAllocation::empty(1, 3)).unwrap();
        assert_eq!(y.bundles, vec![bundle(&[0, 1, 2])]);

        let same = Instance::new(vec![vec![3, 2, 1]; 2]).unwrap();
        let y = envy_cycle_elimination(&same, &PartialAllocation::empty(2, 3)).unwrap();
        assert!(y.is_complete());
        assert_eq!(y.bundles, vec![bundle(&[0]), bundle(&[1, 2])]);

        // A complete allocation with a cycle is returned as is.
        let inst = Instance::new(vec![vec![1, 5], vec![5, 1]]).unwrap();
        let x = alloc(2, &[&[0], &[1]]);
        assert_eq!(envy_cycle_elimination(&inst, &x).unwrap(), x);

        let bad = PartialAllocation { bundles: vec![bundle(&[0]), bundle(&[0])], pool: bundle(&[1]) };
        assert_eq!(envy_cycle_elimination(&inst, &bad), Err(EnvyError::Invalid(Violation::Duplicated(0))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn setup() -> impl Strategy<Value = (Instance, PartialAllocation)> {
            (1usize..5, 0usize..9).prop_flat_map(|(n, m)| {
                (
                    prop::collection::vec(prop::collection::vec(0u64..20, m), n),
                    prop::collection::vec(0..=n, m),
                )
                    .prop_map(move |(rows, owner)| {
                        let inst = Instance::new(rows).unwrap();
                        let bundles = (0..n)
                            .map(|i| (0..m).filter(|&g| owner[g] == i).collect())
                            .collect();
                        (inst, PartialAllocation::with_pool_complement(m, bundles))
                    })
            })
        }

        fn all_subsets(b: &Bundle) -> Vec<Bundle> {
            let goods = b.goods();
            (0u32..1 << goods.len())
                .map(|mask| (0..goods.len()).filter(|k| mask >> k & 1 == 1).map(|k| goods[k]).collect())
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(300))]

            #[test]
            fn strong_envy_matches_removal_scan((inst, x) in setup(), a_seed in 0usize..8, d in 0u64..5) {
                let a = a_seed % inst.agents();
                let delta = Ratio::new(d, 10).unwrap();
                let keep = delta.complement().unwrap();
                let own = x.own_value(&inst, a);
                for j in 0..inst.agents() {
                    let b = &x.bundles[j];
                    let brute = b.iter().any(|g| keep.scaled_exceeds(inst.value_of(a, b.without(g).goods()), own));
                    prop_assert_eq!(strongly_envies(&inst, &x, a, b, delta), brute);
                    if b.len() <= 1 {
                        prop_assert!(!strongly_envies(&inst, &x, a, b, Ratio::ZERO));
                    }
                }
            }

            #[test]
            fn refinement_postcondition((inst, x) in setup(), d in 0u64..5) {
                let delta = Ratio::new(d, 10).unwrap();
                let candidates: Vec<usize> = (0..inst.agents()).collect();
                let b = x.pool.clone();
                match most_envious_refine(&inst, &x, &b, &candidates, delta) {
                    Ok((a, z)) => {
                        prop_assert!(z.is_subset(&b));
                        prop_assert!(inst.value_of(a, z.goods()) > x.own_value(&inst, a));
                        // Nobody strongly envies Z iff no candidate prefers a
                        // proper subset of Z (scaled by 1 - delta) to its own bundle.
                        let keep = delta.complement().unwrap();
                        for s in all_subsets(&z).into_iter().filter(|s| *s != z) {
                            for &c in &candidates {
                                prop_assert!(!keep.scaled_exceeds(inst.value_of(c, s.goods()), x.own_value(&inst, c)));
                            }
                        }
                    }
                    Err(EnvyError::NoStrongEnvy) => {
                        prop_assert!(candidates.iter().all(|&c| !strongly_envies(&inst, &x, c, &b, delta)));
                    }
                    Err(e) => prop_assert!(false, "unexpected {e}"),
                }
            }

            #[test]
            fn elimination_is_monotone_and_acyclic((inst, x) in setup()) {
                let y = eliminate_cycles(&inst, &x);
                prop_assert!(EnvyGraph::new(&inst, &y).find_cycle().is_none());
                prop_assert_eq!(&y.pool, &x.pool);
                let mut steps_ok = true;
                let z = envy_cycle_elimination_observed(&inst, &x, &mut |_, step| {
                    if let CycleStep::Rotated { edges_before, edges_after, .. } = step {
                        steps_ok &= edges_after < edges_before;
                    }
                }).unwrap();
                prop_assert!(steps_ok);
                prop_assert!(z.is_complete());
                validate_allocation(&inst, &z).unwrap();
                for i in 0..inst.agents() {
                    prop_assert!(y.own_value(&inst, i) >= x.own_value(&inst, i));
                    prop_assert!(z.own_value(&inst, i) >= x.own_value(&inst, i));
                }
            }

            #[test]
            fn cycle_search_agrees_with_reachability((inst, x) in setup()) {
                let g = EnvyGraph::new(&inst, &x);
                let n = g.len();
                // Transitive closure: a cycle exists iff some node reaches itself.
                let mut reach = vec![vec![false; n]; n];
                for i in 0..n { for j in 0..n { reach[i][j] = g.envies(i, j); } }
                for k in 0..n { for i in 0..n { for j in 0..n {
                    if reach[i][k] && reach[k][j] { reach[i][j] = true; }
                } } }
                let has_cycle = (0..n).any(|i| reach[i][i]);
                match g.find_cycle() {
                    Some(c) => {
                        prop_assert!(has_cycle);
                        for k in 0..c.len() {
                            prop_assert!(g.envies(c[k], c[(k + 1) % c.len()]));
                        }
                    }
                    None => prop_assert!(!has_cycle),
                }
            }
        }
    }
}
