//! Zone-assignment search: exhaustive enumeration for small combinatorics,
//! best-first branch-and-bound beyond that.
//!
//! Fixing one operating zone per unit yields a continuous subproblem; the
//! search explores those assignments.  The lower bound at a node relaxes
//! three things at once, each one conservatively:
//!
//! * free units range over the hull of their remaining zones (a superset of
//!   every completion),
//! * the valve ripple is dropped (it is non-negative, so the quadratic cost
//!   under-estimates the true cost),
//! * losses are dropped while keeping demand: any loss-balanced dispatch
//!   generates more than the demand, and since marginal costs are positive
//!   it can be contracted onto the lossless balance without raising cost.
//!
//! The contraction argument needs non-decreasing cost curves over the
//! operating range; if a unit's marginal cost can go negative the bound is
//! disabled (search degrades to exhaustive enumeration) rather than risk an
//! unsound prune.  A runtime fail-safe double-checks every incumbent against
//! its node bound and likewise disables pruning if the invariant ever
//! breaks.

use crate::error::SolveError;
use crate::loss::transmission_loss;
use crate::model::{SystemCase, ValidatedCase};
use crate::subproblem::{solve_box_quadratic, solve_nlp, NlpOptions, NlpSolution, ReserveReq};
use rayon::prelude::*;
use std::collections::BinaryHeap;

/// Knobs for the assignment search.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub nlp: NlpOptions,
    /// Assignment-count threshold up to which the search enumerates
    /// exhaustively instead of branching.
    pub enum_threshold: u128,
    /// A node is pruned when its bound is within this slack of the
    /// incumbent, bounding the final optimality gap.
    pub prune_slack: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            nlp: NlpOptions::default(),
            enum_threshold: 4096,
            prune_slack: 1e-7,
        }
    }
}

/// Search-side counters for reports and tests.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SearchStats {
    pub nodes_explored: usize,
    pub subproblems_solved: usize,
    pub starts_used: usize,
    pub pruning_disabled: bool,
    /// The root relaxation was feasible and certified optimal directly.
    pub root_shortcut: bool,
}

/// A complete dispatch answer.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DispatchSolution {
    pub p: Vec<f64>,
    pub cost: f64,
    pub loss_mw: f64,
    /// Self-audit: `sum(p) - (demand + loss)`.
    pub violation_mw: f64,
    pub lambda: f64,
    pub reserve_mu: f64,
    pub reserve_available_mw: f64,
    /// Chosen zone index per unit, in each unit's original zone numbering
    /// (0-based).
    pub assignment: Vec<usize>,
    pub converged: bool,
    pub stats: SearchStats,
    pub warnings: Vec<String>,
}

/// Iterate all zone choices in lexicographic order.  `counts[i]` is the
/// number of selectable zones of unit `i`; every yielded vector holds one
/// index per unit.
pub fn enumerate_assignments(counts: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n = counts.len();
    let total: u128 = counts.iter().map(|&c| c as u128).product();
    let mut current = vec![0usize; n];
    let mut emitted: u128 = 0;
    std::iter::from_fn(move || {
        if emitted >= total || counts.contains(&0) {
            return None;
        }
        let out = current.clone();
        emitted += 1;
        for i in (0..n).rev() {
            current[i] += 1;
            if current[i] < counts[i] {
                break;
            }
            current[i] = 0;
        }
        Some(out)
    })
}

/// Number of complete assignments, saturating at `u128::MAX`.
pub fn assignment_count(counts: &[usize]) -> u128 {
    counts
        .iter()
        .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
        .unwrap_or(u128::MAX)
}

/// Per-unit selectable zones after ramp clipping: `(zone index, lo, hi)`.
fn effective(case: &SystemCase) -> Vec<Vec<(usize, f64, f64)>> {
    case.units.iter().map(|u| u.effective_zones()).collect()
}

/// Lower bound for any completion of `partial` (first `partial.len()` units
/// fixed to the given selectable-zone indices, the rest free over their
/// zone hull).  Infeasible relaxations return `+inf` — such nodes cannot
/// contain a feasible leaf.
pub fn lower_bound(
    case: &SystemCase,
    zones: &[Vec<(usize, f64, f64)>],
    partial: &[usize],
) -> (f64, Option<NlpSolution>) {
    let boxes: Vec<(f64, f64)> = zones
        .iter()
        .enumerate()
        .map(|(i, zs)| {
            if i < partial.len() {
                let (_, lo, hi) = zs[partial[i]];
                (lo, hi)
            } else {
                (zs[0].1, zs[zs.len() - 1].2)
            }
        })
        .collect();
    let reserve = case.reserve_mw.map(|r| ReserveReq { requirement_mw: r });
    match solve_box_quadratic(&case.units, &boxes, case.demand_mw, reserve) {
        Ok(sol) => (sol.cost, Some(sol)),
        Err(_) => (f64::INFINITY, None),
    }
}

fn leaf_boxes(zones: &[Vec<(usize, f64, f64)>], assignment: &[usize]) -> Vec<(f64, f64)> {
    zones
        .iter()
        .zip(assignment)
        .map(|(zs, &k)| {
            let (_, lo, hi) = zs[k];
            (lo, hi)
        })
        .collect()
}

fn solve_leaf(
    case: &SystemCase,
    zones: &[Vec<(usize, f64, f64)>],
    assignment: &[usize],
    opts: &SearchOptions,
) -> Result<NlpSolution, SolveError> {
    let boxes = leaf_boxes(zones, assignment);
    let reserve = case.reserve_mw.map(|r| ReserveReq { requirement_mw: r });
    solve_nlp(
        &case.units,
        &boxes,
        case.demand_mw,
        case.loss.as_ref(),
        reserve,
        case.has_valve(),
        &opts.nlp,
    )
}

/// Map selectable-zone indices back to original zone numbering.
fn original_assignment(zones: &[Vec<(usize, f64, f64)>], selected: &[usize]) -> Vec<usize> {
    zones
        .iter()
        .zip(selected)
        .map(|(zs, &k)| zs[k].0)
        .collect()
}

fn finish(
    case: &SystemCase,
    zones: &[Vec<(usize, f64, f64)>],
    selected: &[usize],
    sol: NlpSolution,
    stats: SearchStats,
    warnings: Vec<String>,
) -> DispatchSolution {
    let loss_mw = case
        .loss
        .as_ref()
        .map_or(0.0, |l| transmission_loss(l, &sol.p));
    let gen: f64 = sol.p.iter().sum();
    let reserve_available: f64 = case
        .units
        .iter()
        .zip(&sol.p)
        .map(|(u, &p)| u.reserve_available(p))
        .sum();
    DispatchSolution {
        violation_mw: gen - (case.demand_mw + loss_mw),
        loss_mw,
        lambda: sol.lambda,
        reserve_mu: sol.reserve_mu,
        reserve_available_mw: reserve_available,
        assignment: original_assignment(zones, selected),
        cost: sol.cost,
        converged: sol.converged,
        p: sol.p,
        stats,
        warnings,
    }
}

/// Whether a dispatch lies inside the selectable zones; returns the zone
/// choice when it does.
fn zone_feasible(zones: &[Vec<(usize, f64, f64)>], p: &[f64], tol: f64) -> Option<Vec<usize>> {
    let mut picked = Vec::with_capacity(p.len());
    for (zs, &pi) in zones.iter().zip(p) {
        let k = zs
            .iter()
            .position(|&(_, lo, hi)| pi >= lo - tol && pi <= hi + tol)?;
        picked.push(k);
    }
    Some(picked)
}

/// Heap node ordered so the smallest bound pops first, ties broken by
/// insertion order.
struct Node {
    bound: f64,
    seq: u64,
    partial: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed for a min-heap on (bound, seq).
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Solve a validated case to a zone-certified optimum.
pub fn solve(case: &ValidatedCase, opts: &SearchOptions) -> Result<DispatchSolution, SolveError> {
    let case = case.case();
    let zones = effective(case);
    let mut warnings = Vec::new();
    let mut stats = SearchStats::default();

    // The loss-dropping bound needs non-decreasing cost over the operating
    // range; see the module docs.
    let mut bound_sound = true;
    if case.loss.is_some() {
        for u in &case.units {
            if 2.0 * u.a * u.p_min + u.b < 0.0 {
                bound_sound = false;
                warnings.push(format!(
                    "unit {}: decreasing cost range, relaxation pruning disabled",
                    u.id
                ));
            }
        }
    }

    // Root relaxation.  When the case is lossless and valve-free the
    // relaxation *is* the problem apart from the zone holes, so a
    // zone-feasible relaxed dispatch is already optimal.
    let (root_bound, root_sol) = lower_bound(case, &zones, &[]);
    stats.subproblems_solved += 1;
    if root_bound.is_infinite() {
        return Err(SolveError::Infeasible(
            "relaxed dispatch infeasible: demand or reserve unattainable".into(),
        ));
    }
    if !case.has_valve() && case.loss.is_none() {
        if let Some(root) = &root_sol {
            if let Some(selected) = zone_feasible(&zones, &root.p, 1e-9) {
                stats.root_shortcut = true;
                stats.starts_used = 1;
                return Ok(finish(case, &zones, &selected, root.clone(), stats, warnings));
            }
        }
    }

    let counts: Vec<usize> = zones.iter().map(|z| z.len()).collect();
    let total = assignment_count(&counts);

    let mut best: Option<(NlpSolution, Vec<usize>)> = None;

    if total <= opts.enum_threshold {
        // Exhaustive sweep, parallel over assignments, reduced
        // deterministically by (cost, enumeration index).
        let assignments: Vec<Vec<usize>> = enumerate_assignments(&counts).collect();
        let solved: Vec<(usize, NlpSolution)> = assignments
            .par_iter()
            .enumerate()
            .filter_map(|(idx, asg)| {
                solve_leaf(case, &zones, asg, opts).ok().map(|s| (idx, s))
            })
            .collect();
        stats.subproblems_solved += assignments.len();
        stats.nodes_explored = assignments.len();
        let winner = solved
            .iter()
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)));
        if let Some((idx, sol)) = winner {
            best = Some((sol.clone(), assignments[*idx].clone()));
        }
    } else {
        // Best-first branch-and-bound on zone prefixes.
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        heap.push(Node {
            bound: if bound_sound { root_bound } else { f64::NEG_INFINITY },
            seq,
            partial: Vec::new(),
        });

        // Warm incumbent: snap the relaxed dispatch into the nearest zones.
        if let Some(root) = &root_sol {
            let snapped: Vec<usize> = zones
                .iter()
                .zip(&root.p)
                .map(|(zs, &pi)| {
                    let mut k_best = 0;
                    let mut d_best = f64::INFINITY;
                    for (k, &(_, lo, hi)) in zs.iter().enumerate() {
                        let d = if pi < lo {
                            lo - pi
                        } else if pi > hi {
                            pi - hi
                        } else {
                            0.0
                        };
                        if d < d_best {
                            d_best = d;
                            k_best = k;
                        }
                    }
                    k_best
                })
                .collect();
            if let Ok(sol) = solve_leaf(case, &zones, &snapped, opts) {
                stats.subproblems_solved += 1;
                best = Some((sol, snapped));
            }
        }

        while let Some(node) = heap.pop() {
            let incumbent_cost = best.as_ref().map_or(f64::INFINITY, |(s, _)| s.cost);
            if !stats.pruning_disabled && node.bound >= incumbent_cost - opts.prune_slack {
                // Best-first: every remaining node is at least as bad.
                break;
            }
            stats.nodes_explored += 1;

            if node.partial.len() == counts.len() {
                match solve_leaf(case, &zones, &node.partial, opts) {
                    Ok(sol) => {
                        stats.subproblems_solved += 1;
                        // Fail-safe: a leaf beating its own ancestors' bound
                        // means the bound is unsound — stop pruning.
                        if bound_sound
                            && sol.cost < node.bound - 1e-6 * (1.0 + sol.cost.abs())
                        {
                            stats.pruning_disabled = true;
                            warnings.push(format!(
                                "bound exceeded solved cost at a leaf ({} < {}); pruning disabled",
                                sol.cost, node.bound
                            ));
                        }
                        if sol.cost < incumbent_cost {
                            best = Some((sol, node.partial.clone()));
                        }
                    }
                    Err(_) => {
                        stats.subproblems_solved += 1;
                    }
                }
                continue;
            }

            let depth = node.partial.len();
            for k in 0..counts[depth] {
                let mut child = node.partial.clone();
                child.push(k);
                let (b, _) = lower_bound(case, &zones, &child);
                stats.subproblems_solved += 1;
                if b.is_infinite() {
                    continue;
                }
                let bound = if bound_sound && !stats.pruning_disabled {
                    b
                } else {
                    f64::NEG_INFINITY
                };
                let incumbent_cost = best.as_ref().map_or(f64::INFINITY, |(s, _)| s.cost);
                if !stats.pruning_disabled && bound >= incumbent_cost - opts.prune_slack {
                    continue;
                }
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    partial: child,
                });
            }
        }
    }

    let Some((sol, selected)) = best else {
        return Err(SolveError::Infeasible(
            "no zone assignment admits a balanced dispatch".into(),
        ));
    };
    stats.starts_used = sol.starts_used;
    Ok(finish(case, &zones, &selected, sol, stats, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_case, LossModel, SystemCase, Unit};
    use approx::assert_relative_eq;

    fn unit(id: u32, a: f64, b: f64, lo: f64, hi: f64) -> Unit {
        Unit {
            id,
            a,
            b,
            c: 0.0,
            valve: None,
            p_min: lo,
            p_max: hi,
            p_prev: None,
            ramp_up: None,
            ramp_down: None,
            reserve_cap: None,
            zones: vec![(lo, hi)],
        }
    }

    fn zoned_case() -> SystemCase {
        let mut u1 = unit(1, 0.02, 8.0, 10.0, 50.0);
        u1.zones = vec![(10.0, 20.0), (30.0, 50.0)];
        let mut u2 = unit(2, 0.015, 9.5, 10.0, 40.0);
        u2.zones = vec![(10.0, 14.0), (22.0, 40.0)];
        SystemCase {
            name: "zoned".into(),
            demand_mw: 55.0,
            reserve_mw: None,
            units: vec![u1, u2],
            loss: None,
        }
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete() {
        let all: Vec<_> = enumerate_assignments(&[2, 3]).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        assert_eq!(assignment_count(&[2, 3]), 6);
        assert_eq!(assignment_count(&[usize::MAX, usize::MAX, usize::MAX]), u128::MAX);
    }

    #[test]
    fn zoned_toy_picks_the_cheap_zone_combination() {
        let v = validate_case(zoned_case()).unwrap();
        let sol = solve(&v, &SearchOptions::default()).unwrap();
        assert_relative_eq!(sol.p.iter().sum::<f64>(), 55.0, epsilon = 1e-9);
        // The relaxed optimum (no holes) is p1 ~ 36.07, p2 ~ 18.93; unit 2
        // falls in its prohibited band, so one side must move.
        for (u, &p) in v.case().units.iter().zip(&sol.p) {
            assert!(u.in_some_zone(p, 1e-9), "unit {} at {p}", u.id);
        }
        // Exhaustive check over the 4 assignments.
        let mut best = f64::INFINITY;
        for asg in enumerate_assignments(&[2, 2]) {
            let zones = effective(v.case());
            if let Ok(s) = solve_leaf(v.case(), &zones, &asg, &SearchOptions::default()) {
                best = best.min(s.cost);
            }
        }
        assert_relative_eq!(sol.cost, best, epsilon = 1e-9);
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        let v = validate_case(zoned_case()).unwrap();
        let enumerated = solve(&v, &SearchOptions::default()).unwrap();
        let branched = solve(
            &v,
            &SearchOptions {
                enum_threshold: 0,
                ..SearchOptions::default()
            },
        )
        .unwrap();
        assert!((enumerated.cost - branched.cost).abs() <= 1e-6);
        assert_eq!(enumerated.assignment, branched.assignment);
    }

    #[test]
    fn feasible_relaxation_short_circuits() {
        // Demand placed so the relaxed dispatch avoids every prohibited band.
        let mut c = zoned_case();
        c.demand_mw = 80.0;
        let v = validate_case(c).unwrap();
        let sol = solve(&v, &SearchOptions::default()).unwrap();
        assert!(sol.stats.root_shortcut);
        assert_relative_eq!(sol.p.iter().sum::<f64>(), 80.0, epsilon = 1e-9);
    }

    #[test]
    fn lower_bound_never_exceeds_leaf_cost() {
        let v = validate_case(zoned_case()).unwrap();
        let zones = effective(v.case());
        let (root, _) = lower_bound(v.case(), &zones, &[]);
        for asg in enumerate_assignments(&[2, 2]) {
            if let Ok(s) = solve_leaf(v.case(), &zones, &asg, &SearchOptions::default()) {
                assert!(root <= s.cost + 1e-9, "bound {root} vs leaf {}", s.cost);
                let (node, _) = lower_bound(v.case(), &zones, &asg);
                assert!(node <= s.cost + 1e-9);
            }
        }
    }

    #[test]
    fn lossy_zoned_case_stays_feasible_and_audited() {
        let mut c = zoned_case();
        c.loss = Some(LossModel {
            base_mva: 100.0,
            b: vec![vec![2e-3, 4e-4], vec![4e-4, 2.5e-3]],
            b0: vec![1e-4, -2e-4],
            b00: 2e-4,
        });
        let v = validate_case(c).unwrap();
        let sol = solve(&v, &SearchOptions::default()).unwrap();
        assert!(sol.violation_mw.abs() < 1e-8);
        assert!(sol.loss_mw > 0.0);
        for (u, &p) in v.case().units.iter().zip(&sol.p) {
            assert!(u.in_some_zone(p, 1e-9));
        }
    }

    #[test]
    fn infeasible_zone_structure_is_reported() {
        let mut c = zoned_case();
        c.demand_mw = 22.0; // sits in the cross product of prohibited bands
        // Shrink zones so no combination can hit 22 exactly.
        c.units[0].zones = vec![(10.0, 10.0), (50.0, 50.0)];
        c.units[0].p_min = 10.0;
        c.units[0].p_max = 50.0;
        c.units[1].zones = vec![(10.0, 10.0), (40.0, 40.0)];
        c.units[1].p_min = 10.0;
        c.units[1].p_max = 40.0;
        let v = validate_case(c).unwrap();
        assert!(solve(&v, &SearchOptions::default()).is_err());
    }
}
