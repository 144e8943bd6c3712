//! The three allocation procedures: a 2/3-MMS allocation, a partial
//! allocation that is both EFX and 2/3-MMS, and its completion by envy-cycle
//! elimination (EF1 and 2/3-MMS). Plus the lexicographic potential audit.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envy::{envy_cycle_elimination_observed, most_envious_refine, strongly_envies, CycleStep};
use crate::matching::{closed_matching, ClosedMatching, ClosureMode, ThresholdGraph};
use crate::mms::{mms_approx, mms_exact, reduce_partition, MmsError, MmsRecord, DEFAULT_EXACT_CAP};
use crate::model::{potential, Bundle, Instance, PartialAllocation, Potential, TraceEvent, TraceKind};
use crate::ratio::{Ratio, Share};
use crate::verify::{check_ef1, check_efx, mms_ratio, Ef1Violation, EfxViolation, Factor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("epsilon {0} must satisfy 0 <= epsilon < 2/3")]
    Epsilon(Ratio),
    #[error("delta {0} must satisfy 0 <= delta < 1")]
    Delta(Ratio),
    #[error(transparent)]
    Mms(#[from] MmsError),
    #[error("invariant breach at iteration {iteration}: {detail}")]
    Invariant { iteration: usize, detail: String },
}

impl SolveError {
    fn breach(iteration: usize, detail: impl fmt::Display) -> Self {
        SolveError::Invariant { iteration, detail: detail.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Goal {
    Mms,
    EfxMms,
    Ef1Mms,
}

impl Goal {
    pub const ALL: [Goal; 3] = [Goal::Mms, Goal::EfxMms, Goal::Ef1Mms];

    pub fn as_str(&self) -> &'static str {
        match self {
            Goal::Mms => "mms",
            Goal::EfxMms => "efx-mms",
            Goal::Ef1Mms => "ef1-mms",
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Goal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Goal::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown goal `{s}` (expected mms, efx-mms or ef1-mms)"))
    }
}

/// Who may receive a refined bundle when an allocated agent strongly envies
/// a candidate bundle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvyScope {
    /// Only agents that already hold a bundle.
    #[default]
    Allocated,
    /// Every agent. Experimental: an unallocated agent may be handed a bundle
    /// below its share, so the MMS guarantee is not enforced in this mode.
    AllAgents,
}

/// Every free choice resolves to the lowest index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: Ratio,
    pub delta: Ratio,
    pub exact_cap: usize,
    pub trace: bool,
    pub envy_scope: EnvyScope,
    pub tie_break: TieBreak,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: Ratio::ZERO,
            delta: Ratio::ZERO,
            exact_cap: DEFAULT_EXACT_CAP,
            trace: false,
            envy_scope: EnvyScope::Allocated,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.epsilon >= Ratio::TWO_THIRDS {
            return Err(SolveError::Epsilon(self.epsilon));
        }
        if !self.delta.is_proper() {
            return Err(SolveError::Delta(self.delta));
        }
        Ok(())
    }

    /// Guaranteed MMS fraction `2/3 - epsilon`.
    pub fn mms_factor(&self) -> Ratio {
        Ratio::TWO_THIRDS.checked_sub(&self.epsilon).unwrap_or(Ratio::ZERO)
    }

    /// Envy-freeness factor `1 - delta`.
    pub fn alpha(&self) -> Ratio {
        self.delta.complement().unwrap_or(Ratio::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolveReport {
    pub goal: Goal,
    pub allocation: PartialAllocation,
    /// Per-agent share basis: exact MMS when epsilon is zero, otherwise a
    /// certified lower bound with the matching `mms_quality`.
    pub mms: Vec<u64>,
    pub mms_quality: Vec<Ratio>,
    pub factor: Ratio,
    pub alpha: Ratio,
    pub min_mms_ratio: Factor,
    pub efx_holds: bool,
    pub efx_violation: Option<EfxViolation>,
    pub ef1_holds: bool,
    pub ef1_violation: Option<Ef1Violation>,
    pub pool_size: usize,
    /// Whether some agent values the pool above its own bundle.
    pub pool_envied: bool,
    pub iterations: usize,
    pub reallocations: Vec<usize>,
    /// Output of the EFX stage before completion (ef1-mms only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efx_stage: Option<PartialAllocation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEvent>,
}

/// Per-agent share records and the thresholds the procedures aim for.
struct Shares {
    records: Vec<MmsRecord>,
    thresholds: Vec<Share>,
}

/// With `epsilon = 0` the threshold is `2/3` of the exact MMS. Otherwise it
/// is `2/3` of a `(1 - 3 epsilon / 2)`-approximate lower bound `L`, which is
/// at least `(2/3 - epsilon) * MMS`.
fn compute_shares(inst: &Instance, cfg: &SolverConfig) -> Result<Shares, SolveError> {
    let n = inst.agents();
    let approx_eps = if cfg.epsilon.is_zero() {
        None
    } else {
        let scaled = cfg.epsilon.checked_mul(&Ratio::new(3, 2).expect("constant"));
        Some(scaled.map_err(|_| SolveError::Epsilon(cfg.epsilon))?)
    };
    let mut cache: HashMap<&[u64], MmsRecord> = HashMap::new();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let record = match cache.get(inst.row(i)) {
            Some(r) => MmsRecord { agent: i, ..r.clone() },
            None => {
                let r = match approx_eps {
                    None => mms_exact(inst, i, n, cfg.exact_cap)?,
                    Some(eps) => mms_approx(inst, i, n, eps)?,
                };
                cache.insert(inst.row(i), r.clone());
                r
            }
        };
        records.push(record);
    }
    let thresholds = records.iter().map(|r| Ratio::TWO_THIRDS.of(r.value)).collect();
    Ok(Shares { records, thresholds })
}

struct Tracer {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl Tracer {
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        inst: &Instance,
        iteration: usize,
        kind: TraceKind,
        x: &PartialAllocation,
        allocated: &[usize],
        before: Option<Vec<Bundle>>,
        candidates: Vec<Bundle>,
        matched: Vec<(usize, usize)>,
    ) {
        if self.enabled {
            self.events.push(TraceEvent {
                iteration,
                kind,
                allocated_set: allocated.to_vec(),
                potential: potential(inst, x, allocated),
                bundles: x.bundles.clone(),
                before,
                candidates,
                matched,
            });
        }
    }
}

/// Every remaining agent values every committed bundle below its threshold.
fn check_remaining(
    inst: &Instance,
    x: &PartialAllocation,
    remaining: &[usize],
    allocated: &[usize],
    thresholds: &[Share],
    iteration: usize,
) -> Result<(), SolveError> {
    for &r in remaining {
        for &a in allocated {
            let v = inst.value_of(r, x.bundles[a].goods());
            if !thresholds[r].exceeds(v) {
                return Err(SolveError::breach(
                    iteration,
                    format!("remaining agent {r} values agent {a}'s bundle at {v}, not below {}", thresholds[r]),
                ));
            }
        }
    }
    Ok(())
}

/// No allocated agent strongly envies another allocated agent's bundle.
fn check_allocated_efx(
    inst: &Instance,
    x: &PartialAllocation,
    allocated: &[usize],
    delta: Ratio,
    iteration: usize,
) -> Result<(), SolveError> {
    for &i in allocated {
        for &j in allocated {
            if i != j && strongly_envies(inst, x, i, &x.bundles[j], delta) {
                return Err(SolveError::breach(iteration, format!("allocated agent {i} strongly envies agent {j}")));
            }
        }
    }
    Ok(())
}

fn commit(
    x: &mut PartialAllocation,
    allocated: &mut Vec<usize>,
    remaining: &mut Vec<usize>,
    bundles: &[Bundle],
    cm: &ClosedMatching,
) {
    for &(agent, j) in &cm.pairs {
        x.bundles[agent] = bundles[j].clone();
        allocated.push(agent);
    }
    remaining.retain(|r| cm.pairs.iter().all(|&(a, _)| a != *r));
}

/// Rebuilds the pool after bundles changed.
fn refresh_pool(inst: &Instance, x: &mut PartialAllocation) {
    *x = PartialAllocation::with_pool_complement(inst.goods(), std::mem::take(&mut x.bundles));
}

/// Partition of the goods outside the committed bundles, each part worth the
/// dividing agent's threshold.
fn partition_round(
    inst: &Instance,
    x: &PartialAllocation,
    shares: &Shares,
    i: usize,
    remaining: &[usize],
    allocated: &[usize],
    iteration: usize,
) -> Result<Vec<Bundle>, SolveError> {
    let committed: Vec<Bundle> = allocated.iter().map(|&a| x.bundles[a].clone()).collect();
    reduce_partition(inst, i, &shares.records[i], &committed, remaining.len(), shares.thresholds[i])
        .map(|p| p.bundles)
        .map_err(|e| SolveError::breach(iteration, e))
}

fn match_round(
    inst: &Instance,
    bundles: Vec<Bundle>,
    remaining: &[usize],
    shares: &Shares,
    mode: ClosureMode,
    iteration: usize,
) -> Result<ClosedMatching, SolveError> {
    let thresholds = remaining.iter().map(|&r| shares.thresholds[r]).collect();
    let graph = ThresholdGraph::new(inst, bundles, remaining.to_vec(), thresholds)
        .map_err(|e| SolveError::breach(iteration, e))?;
    closed_matching(&graph, mode).map_err(|e| SolveError::breach(iteration, e))
}

fn run_mms(inst: &Instance, shares: &Shares, tracer: &mut Tracer) -> Result<(PartialAllocation, usize), SolveError> {
    let n = inst.agents();
    let mut x = PartialAllocation::empty(n, inst.goods());
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut allocated: Vec<usize> = Vec::new();
    let mut iteration = 0;
    while let Some(&i) = remaining.first() {
        iteration += 1;
        if tracer.enabled {
            check_remaining(inst, &x, &remaining, &allocated, &shares.thresholds, iteration)?;
        }
        let bundles = partition_round(inst, &x, shares, i, &remaining, &allocated, iteration)?;
        tracer.emit(inst, iteration, TraceKind::PartitionBuilt, &x, &allocated, None, bundles.clone(), vec![]);
        let cm = match_round(inst, bundles.clone(), &remaining, shares, ClosureMode::RowFull, iteration)?;
        commit(&mut x, &mut allocated, &mut remaining, &bundles, &cm);
        refresh_pool(inst, &mut x);
        tracer.emit(inst, iteration, TraceKind::MatchingCommitted, &x, &allocated, None, vec![], cm.pairs.clone());
    }
    Ok((x, iteration))
}

/// Drops goods in ascending order while some remaining agent still meets
/// its threshold without them.
fn shrink(inst: &Instance, bundle: &Bundle, remaining: &[usize], thresholds: &[Share]) -> Bundle {
    let mut sums: Vec<u64> = remaining.iter().map(|&r| inst.value_of(r, bundle.goods())).collect();
    let mut kept = Vec::with_capacity(bundle.len());
    for g in bundle.iter() {
        let still_ok = remaining
            .iter()
            .zip(&sums)
            .any(|(&r, &s)| thresholds[r].met_by(s - inst.value(r, g)));
        if still_ok {
            for (k, &r) in remaining.iter().enumerate() {
                sums[k] -= inst.value(r, g);
            }
        } else {
            kept.push(g);
        }
    }
    Bundle::new(kept).expect("subset of a bundle")
}

struct EfxRun {
    x: PartialAllocation,
    iterations: usize,
    reallocations: Vec<usize>,
}

fn run_efx(inst: &Instance, cfg: &SolverConfig, shares: &Shares, tracer: &mut Tracer) -> Result<EfxRun, SolveError> {
    let n = inst.agents();
    let delta = cfg.delta;
    let mut x = PartialAllocation::empty(n, inst.goods());
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut allocated: Vec<usize> = Vec::new();
    let mut reallocations = vec![0usize; n];
    // Each reallocation raises the integer potential sum; each commit raises |A|.
    let limit: u128 = n as u128 + (0..n).map(|i| inst.total(i) as u128).sum::<u128>() + 1;
    let mut iteration = 0;

    while let Some(&i) = remaining.first() {
        iteration += 1;
        if iteration as u128 > limit {
            return Err(SolveError::breach(iteration, "iteration bound exceeded"));
        }
        if tracer.enabled {
            check_remaining(inst, &x, &remaining, &allocated, &shares.thresholds, iteration)?;
            check_allocated_efx(inst, &x, &allocated, delta, iteration)?;
        }

        let bundles = partition_round(inst, &x, shares, i, &remaining, &allocated, iteration)?;
        tracer.emit(inst, iteration, TraceKind::PartitionBuilt, &x, &allocated, None, bundles.clone(), vec![]);
        let shrunk: Vec<Bundle> = bundles
            .iter()
            .map(|b| shrink(inst, b, &remaining, &shares.thresholds))
            .collect();
        tracer.emit(inst, iteration, TraceKind::BundleShrunk, &x, &allocated, None, shrunk.clone(), vec![]);

        let envied = shrunk
            .iter()
            .enumerate()
            .find(|(_, b)| allocated.iter().any(|&a| strongly_envies(inst, &x, a, b, delta)));
        if let Some((j, b)) = envied {
            let candidates: Vec<usize> = match cfg.envy_scope {
                EnvyScope::Allocated => {
                    let mut c = allocated.clone();
                    c.sort_unstable();
                    c
                }
                EnvyScope::AllAgents => (0..n).collect(),
            };
            let (a_star, z) =
                most_envious_refine(inst, &x, b, &candidates, delta).map_err(|e| SolveError::breach(iteration, e))?;
            let before = x.bundles.clone();
            x.bundles[a_star] = z;
            if !allocated.contains(&a_star) {
                allocated.push(a_star);
                remaining.retain(|&r| r != a_star);
            }
            reallocations[a_star] += 1;
            refresh_pool(inst, &mut x);
            tracer.emit(inst, iteration, TraceKind::Reallocation, &x, &allocated, Some(before), vec![], vec![(a_star, j)]);
            continue;
        }

        let cm = match_round(inst, shrunk.clone(), &remaining, shares, ClosureMode::ColumnCovered, iteration)?;
        commit(&mut x, &mut allocated, &mut remaining, &shrunk, &cm);
        refresh_pool(inst, &mut x);
        tracer.emit(inst, iteration, TraceKind::MatchingCommitted, &x, &allocated, None, vec![], cm.pairs.clone());
    }
    if tracer.enabled {
        check_allocated_efx(inst, &x, &allocated, delta, iteration)?;
    }
    Ok(EfxRun { x, iterations: iteration, reallocations })
}

fn build_report(
    inst: &Instance,
    goal: Goal,
    cfg: &SolverConfig,
    shares: &Shares,
    allocation: PartialAllocation,
    iterations: usize,
    reallocations: Vec<usize>,
    efx_stage: Option<PartialAllocation>,
    trace: Vec<TraceEvent>,
) -> Result<SolveReport, SolveError> {
    let alpha = cfg.alpha();
    let mms: Vec<u64> = shares.records.iter().map(|r| r.value).collect();
    let efx = check_efx(inst, &allocation, alpha);
    let ef1 = check_ef1(inst, &allocation, alpha);
    let pool_envied = (0..inst.agents())
        .any(|i| inst.value_of(i, allocation.pool.goods()) > allocation.own_value(inst, i));

    // The guarantees are re-derived from scratch; a failure is a bug.
    let fail = |detail: String| Err(SolveError::breach(iterations, detail));
    if goal != Goal::EfxMms && !allocation.is_complete() {
        return fail(format!("{} goods left unallocated", allocation.pool.len()));
    }
    if cfg.envy_scope == EnvyScope::Allocated {
        if let Some(i) = (0..inst.agents()).find(|&i| !shares.thresholds[i].met_by(allocation.own_value(inst, i))) {
            return fail(format!("agent {i} is below its share threshold {}", shares.thresholds[i]));
        }
    }
    match (goal, &efx, &ef1) {
        (Goal::EfxMms, Err(v), _) => return fail(v.to_string()),
        (Goal::Ef1Mms, _, Err(v)) => return fail(v.to_string()),
        _ => {}
    }

    Ok(SolveReport {
        goal,
        min_mms_ratio: mms_ratio(inst, &allocation, &mms),
        mms_quality: shares.records.iter().map(|r| r.quality).collect(),
        mms,
        factor: cfg.mms_factor(),
        alpha,
        efx_holds: efx.is_ok(),
        efx_violation: efx.err(),
        ef1_holds: ef1.is_ok(),
        ef1_violation: ef1.err(),
        pool_size: allocation.pool.len(),
        pool_envied,
        iterations,
        reallocations,
        efx_stage,
        trace,
        allocation,
    })
}

/// A complete `(2/3 - epsilon)`-MMS allocation.
pub fn approx_mms(inst: &Instance, cfg: &SolverConfig) -> Result<SolveReport, SolveError> {
    cfg.validate()?;
    let shares = compute_shares(inst, cfg)?;
    let mut tracer = Tracer { enabled: cfg.trace, events: Vec::new() };
    let (x, iterations) = run_mms(inst, &shares, &mut tracer)?;
    let n = inst.agents();
    build_report(inst, Goal::Mms, cfg, &shares, x, iterations, vec![0; n], None, tracer.events)
}

/// A partial allocation that is `(1 - delta)`-EFX and `(2/3 - epsilon)`-MMS.
pub fn approx_mms_efx(inst: &Instance, cfg: &SolverConfig) -> Result<SolveReport, SolveError> {
    cfg.validate()?;
    let shares = compute_shares(inst, cfg)?;
    let mut tracer = Tracer { enabled: cfg.trace, events: Vec::new() };
    let run = run_efx(inst, cfg, &shares, &mut tracer)?;
    build_report(inst, Goal::EfxMms, cfg, &shares, run.x, run.iterations, run.reallocations, None, tracer.events)
}

/// A complete allocation that is `(1 - delta)`-EF1 and `(2/3 - epsilon)`-MMS:
/// the EFX stage followed by envy-cycle elimination on its pool.
pub fn approx_mms_ef1(inst: &Instance, cfg: &SolverConfig) -> Result<SolveReport, SolveError> {
    cfg.validate()?;
    let shares = compute_shares(inst, cfg)?;
    let mut tracer = Tracer { enabled: cfg.trace, events: Vec::new() };
    let run = run_efx(inst, cfg, &shares, &mut tracer)?;
    let all: Vec<usize> = (0..inst.agents()).collect();
    let mut step = run.iterations;
    let mut breach = None;
    let completed = envy_cycle_elimination_observed(inst, &run.x, &mut |after, s| {
        step += 1;
        let (kind, before) = match s {
            CycleStep::Rotated { before, edges_before, edges_after, cycle } => {
                if tracer.enabled && edges_after >= edges_before && breach.is_none() {
                    breach = Some(SolveError::breach(
                        step,
                        format!("rotating {cycle:?} left {edges_after} envy edges (was {edges_before})"),
                    ));
                }
                (TraceKind::CycleRotated, before)
            }
            CycleStep::Placed { before, .. } => (TraceKind::GoodPlaced, before),
        };
        tracer.emit(inst, step, kind, after, &all, Some(before), vec![], vec![]);
    })
    .map_err(|e| SolveError::breach(step, e))?;
    if let Some(e) = breach {
        return Err(e);
    }
    if let Some(i) = all.iter().find(|&&i| completed.own_value(inst, i) < run.x.own_value(inst, i)) {
        return Err(SolveError::breach(step, format!("agent {i} lost value during completion")));
    }
    build_report(
        inst,
        Goal::Ef1Mms,
        cfg,
        &shares,
        completed,
        step,
        run.reallocations,
        Some(run.x),
        tracer.events,
    )
}

pub fn solve(inst: &Instance, goal: Goal, cfg: &SolverConfig) -> Result<SolveReport, SolveError> {
    match goal {
        Goal::Mms => approx_mms(inst, cfg),
        Goal::EfxMms => approx_mms_efx(inst, cfg),
        Goal::Ef1Mms => approx_mms_ef1(inst, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("potential did not increase correctly at trace index {index} (iteration {iteration}, {kind:?}): {before:?} -> {after:?}")]
pub struct PotentialViolation {
    pub index: usize,
    pub iteration: usize,
    pub kind: TraceKind,
    pub before: Potential,
    pub after: Potential,
}

/// Checks the EFX-stage events of a trace: every reallocation strictly
/// raises the value sum of the allocated agents, every committed matching
/// strictly raises their number without lowering the sum, and every other
/// step leaves the potential unchanged. Completion-stage events are skipped.
pub fn audit_potential(trace: &[TraceEvent]) -> Result<(), PotentialViolation> {
    let mut prev = Potential { value_sum: 0, allocated: 0 };
    for (index, e) in trace.iter().enumerate() {
        let after = e.potential;
        let ok = match e.kind {
            TraceKind::Reallocation => after.value_sum > prev.value_sum && after.allocated >= prev.allocated,
            TraceKind::MatchingCommitted => after.allocated > prev.allocated && after.value_sum >= prev.value_sum,
            TraceKind::PartitionBuilt | TraceKind::BundleShrunk => after == prev,
            TraceKind::CycleRotated | TraceKind::GoodPlaced => continue,
        };
        if !ok {
            return Err(PotentialViolation { index, iteration: e.iteration, kind: e.kind, before: prev, after });
        }
        prev = after;
    }
    Ok(())
}
