//! Non-learned baseline solvers and the common solver interface.

mod oracle;

pub use oracle::{exact_oracle, ORACLE_TASK_LIMIT};

use std::time::{Duration, Instant};

use crate::energy::{UavParams, WptParams};
use crate::error::{Error, Result};
use crate::eval::{ensure_reachable, evaluate, SOC_TOL};
use crate::instance::Instance;
use crate::solution::Solution;

/// Cooperative time limit checked by solvers between atomic steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Deadline(Option<Instant>);

impl Deadline {
    pub fn none() -> Self {
        Deadline(None)
    }

    pub fn after(limit: Duration) -> Self {
        Deadline(Some(Instant::now() + limit))
    }

    pub fn check(&self) -> Result<()> {
        match self.0 {
            Some(t) if Instant::now() > t => Err(Error::Timeout),
            _ => Ok(()),
        }
    }
}

/// Common in-process solver interface consumed by the benchmark harness.
pub trait Solver {
    fn name(&self) -> String;
    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution>;
}

/// Shared solve-time context: physics parameters, objective flag, deadline.
#[derive(Clone, Copy)]
pub struct SolveCtx<'a> {
    pub uav: &'a UavParams,
    pub wpt: &'a WptParams,
    pub include_final_recharge: bool,
    pub deadline: Deadline,
}

/// Greedily visits the nearest unvisited node whose visit-plus-return stays
/// within the battery budget; returns to the depot to recharge when no node
/// qualifies.
pub fn nearest_neighbor(inst: &Instance, uav: &UavParams, deadline: Deadline) -> Result<Solution> {
    ensure_reachable(inst, uav)?;
    let n = inst.n_tasks();
    let dist = inst.dist_matrix();
    let p = uav.cruise_power_w();
    let v = uav.cruise_speed_m_s;
    let e_full = uav.battery_j;

    let mut visited = vec![false; n + 1];
    let mut route = vec![0usize];
    let mut current = 0usize;
    let mut soc = 1.0f64;
    let mut remaining = n;

    while remaining > 0 {
        deadline.check()?;
        let budget_j = (soc - uav.soc_min) * e_full;
        let mut best: Option<(usize, f64)> = None;
        for i in 1..=n {
            if visited[i] {
                continue;
            }
            let required_j = p * (dist.get(current, i) + dist.get(i, 0)) * 1000.0 / v;
            if required_j > budget_j {
                continue;
            }
            if best.map_or(true, |(_, d)| dist.get(current, i) < d) {
                best = Some((i, dist.get(current, i)));
            }
        }
        match best {
            Some((i, d)) => {
                route.push(i);
                soc -= p * d * 1000.0 / v / e_full;
                visited[i] = true;
                current = i;
                remaining -= 1;
            }
            None => {
                if current == 0 {
                    // Unreachable after the up-front check; keep as an error
                    // rather than spinning.
                    return Err(Error::DeadEnd { step: route.len() });
                }
                route.push(0);
                current = 0;
                soc = 1.0;
            }
        }
    }
    if current != 0 {
        route.push(0);
    }
    Ok(Solution::new_unchecked(route))
}

/// One candidate merge of the savings construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsEntry {
    pub pair: (usize, usize),
    pub saving_km: f64,
}

/// All pairwise savings `d(0,i) + d(0,j) - d(i,j)`, sorted descending.
/// Ties break on the node pair so the construction is deterministic.
pub fn compute_savings(inst: &Instance) -> Vec<SavingsEntry> {
    let n = inst.n_tasks();
    let dist = inst.dist_matrix();
    let mut savings = Vec::with_capacity(n * (n - 1) / 2);
    for i in 1..=n {
        for j in (i + 1)..=n {
            let s = dist.get(0, i) + dist.get(0, j) - dist.get(i, j);
            savings.push(SavingsEntry {
                pair: (i, j),
                saving_km: s,
            });
        }
    }
    savings.sort_by(|a, b| {
        b.saving_km
            .partial_cmp(&a.saving_km)
            .expect("savings are finite")
            .then_with(|| a.pair.cmp(&b.pair))
    });
    savings
}

/// Savings construction under the per-sortie flight-energy cap.
///
/// Starts from one out-and-back sortie per node and merges sortie endpoints
/// in order of decreasing savings whenever the merged sortie still fits the
/// usable battery fraction.
pub fn clarke_wright(inst: &Instance, uav: &UavParams, deadline: Deadline) -> Result<Solution> {
    ensure_reachable(inst, uav)?;
    let n = inst.n_tasks();
    let dist = inst.dist_matrix();
    let p = uav.cruise_power_w();
    let v = uav.cruise_speed_m_s;
    let available_j = (1.0 - uav.soc_min) * uav.battery_j;

    let savings = compute_savings(inst);
    let mut last_saving = f64::INFINITY;

    // routes[r] is the task-node sequence of sortie r; merged-away slots are empty.
    let mut routes: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut route_of = vec![0usize; n + 1];
    let mut route_km = vec![0.0f64; n + 1];
    for i in 1..=n {
        routes[i] = vec![i];
        route_of[i] = i;
        route_km[i] = 2.0 * dist.get(0, i);
    }

    for entry in &savings {
        deadline.check()?;
        // Euclidean savings are non-negative and processed in order.
        assert!(entry.saving_km >= -1e-12, "negative saving {entry:?}");
        assert!(
            entry.saving_km <= last_saving + 1e-12,
            "savings processed out of order"
        );
        last_saving = entry.saving_km;

        let (i, j) = entry.pair;
        let (ri, rj) = (route_of[i], route_of[j]);
        if ri == rj {
            continue;
        }
        let merged_km = route_km[ri] + route_km[rj] - entry.saving_km;
        if p * merged_km * 1000.0 / v > available_j + SOC_TOL * uav.battery_j {
            continue;
        }
        let i_head = routes[ri].first() == Some(&i);
        let i_tail = routes[ri].last() == Some(&i);
        let j_head = routes[rj].first() == Some(&j);
        let j_tail = routes[rj].last() == Some(&j);
        if !(i_head || i_tail) || !(j_head || j_tail) {
            continue;
        }
        // Orient so that i ends sortie ri and j starts sortie rj, then append.
        if !i_tail {
            routes[ri].reverse();
        }
        if !j_head {
            routes[rj].reverse();
        }
        let tail = std::mem::take(&mut routes[rj]);
        for &node in &tail {
            route_of[node] = ri;
        }
        routes[ri].extend(tail);
        route_km[ri] = merged_km;
        route_km[rj] = 0.0;
    }

    let mut sorties: Vec<Vec<usize>> = routes.into_iter().filter(|r| !r.is_empty()).collect();
    sorties.sort_by_key(|s| s[0]);
    let mut route = vec![0usize];
    for sortie in sorties {
        route.extend(sortie);
        route.push(0);
    }
    Ok(Solution::new_unchecked(route))
}

/// First-improvement local search: 2-opt inside sorties and node relocation
/// between sorties, accepting only feasibility-preserving cost reductions.
///
/// `budget` bounds the number of candidate moves evaluated. The returned
/// solution never costs more than the input.
pub fn local_search_improve(
    inst: &Instance,
    sol: &Solution,
    uav: &UavParams,
    wpt: &WptParams,
    budget: usize,
    include_final_recharge: bool,
    deadline: Deadline,
) -> Result<Solution> {
    let (mut best_cost, _) = evaluate(inst, sol, uav, wpt, include_final_recharge)?;
    let mut sorties: Vec<Vec<usize>> = sol.sorties().map(|s| s.to_vec()).collect();
    let mut evaluated = 0usize;

    let assemble = |sorties: &[Vec<usize>]| -> Solution {
        let mut route = vec![0usize];
        for s in sorties {
            route.extend_from_slice(s);
            route.push(0);
        }
        Solution::new_unchecked(route)
    };

    // First improvement: accept a move, rescan from scratch; stop after a
    // full pass without improvement or when the budget runs out.
    'outer: loop {
        deadline.check()?;

        // 2-opt: reverse a segment within one sortie.
        for si in 0..sorties.len() {
            let len = sorties[si].len();
            for a in 0..len {
                for b in (a + 1)..len {
                    if evaluated >= budget {
                        break 'outer;
                    }
                    evaluated += 1;
                    let mut candidate = sorties.clone();
                    candidate[si][a..=b].reverse();
                    let cand_sol = assemble(&candidate);
                    if let Ok((cost, _)) =
                        evaluate(inst, &cand_sol, uav, wpt, include_final_recharge)
                    {
                        if cost.total_h < best_cost.total_h - 1e-12 {
                            sorties = candidate;
                            best_cost = cost;
                            continue 'outer;
                        }
                    }
                }
            }
        }

        // Relocate: move one node into another sortie.
        for si in 0..sorties.len() {
            for pos in 0..sorties[si].len() {
                for sj in 0..sorties.len() {
                    if si == sj {
                        continue;
                    }
                    for ins in 0..=sorties[sj].len() {
                        if evaluated >= budget {
                            break 'outer;
                        }
                        evaluated += 1;
                        let mut candidate = sorties.clone();
                        let node = candidate[si].remove(pos);
                        candidate[sj].insert(ins, node);
                        candidate.retain(|s| !s.is_empty());
                        let cand_sol = assemble(&candidate);
                        if let Ok((cost, _)) =
                            evaluate(inst, &cand_sol, uav, wpt, include_final_recharge)
                        {
                            if cost.total_h < best_cost.total_h - 1e-12 {
                                sorties = candidate;
                                best_cost = cost;
                                continue 'outer;
                            }
                        }
                    }
                }
            }
        }

        break;
    }

    Ok(assemble(&sorties))
}

/// Named wrappers implementing [`Solver`] for the benchmark harness.
pub struct NearestNeighborSolver;

impl Solver for NearestNeighborSolver {
    fn name(&self) -> String {
        "nn".into()
    }
    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution> {
        nearest_neighbor(inst, ctx.uav, ctx.deadline)
    }
}

pub struct ClarkeWrightSolver;

impl Solver for ClarkeWrightSolver {
    fn name(&self) -> String {
        "cw".into()
    }
    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution> {
        clarke_wright(inst, ctx.uav, ctx.deadline)
    }
}

/// Savings construction followed by local search.
pub struct ClarkeWrightLsSolver {
    pub budget: usize,
}

impl Default for ClarkeWrightLsSolver {
    fn default() -> Self {
        ClarkeWrightLsSolver { budget: 200_000 }
    }
}

impl Solver for ClarkeWrightLsSolver {
    fn name(&self) -> String {
        "cw+ls".into()
    }
    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution> {
        let start = clarke_wright(inst, ctx.uav, ctx.deadline)?;
        local_search_improve(
            inst,
            &start,
            ctx.uav,
            ctx.wpt,
            self.budget,
            ctx.include_final_recharge,
            ctx.deadline,
        )
    }
}

pub struct ExactOracleSolver;

impl Solver for ExactOracleSolver {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution> {
        exact_oracle(inst, ctx.uav, ctx.wpt, ctx.include_final_recharge, ctx.deadline)
            .map(|(sol, _)| sol)
    }
}
