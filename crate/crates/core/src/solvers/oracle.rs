//! Exhaustive optimum for tiny instances.
//!
//! Enumerates every task-node permutation and, for each, finds the optimal
//! placement of recharge returns by shortest-path dynamic programming over
//! split positions. Segment costs are accumulated directly from the distance
//! matrix and the recharge model, independently of the route simulator, so
//! the two can cross-check each other.

use crate::energy::{recharge_event, UavParams, WptParams};
use crate::error::{Error, Result};
use crate::eval::{ensure_reachable, SOC_TOL};
use crate::instance::Instance;
use crate::solution::Solution;
use crate::solvers::Deadline;

/// Permutation enumeration bound; 8! permutations with an O(n^2) inner DP
/// stays comfortably sub-second.
pub const ORACLE_TASK_LIMIT: usize = 8;

/// Cost ties below this margin (hours) are broken lexicographically.
const TIE_EPS_H: f64 = 1e-12;

/// Returns the minimum-cost feasible solution and its cost in hours.
pub fn exact_oracle(
    inst: &Instance,
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
    deadline: Deadline,
) -> Result<(Solution, f64)> {
    let n = inst.n_tasks();
    if n > ORACLE_TASK_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: ORACLE_TASK_LIMIT,
        });
    }
    ensure_reachable(inst, uav)?;

    let dist = inst.dist_matrix();
    let p = uav.cruise_power_w();
    let v = uav.cruise_speed_m_s;
    let e_full = uav.battery_j;
    let available_j = (1.0 - uav.soc_min) * e_full;

    let hover_h = |sortie_m: f64| -> Result<f64> {
        let e_rem = (e_full - p * sortie_m / v).clamp(0.0, e_full);
        Ok(recharge_event(wpt, uav, e_rem)?.t_hover_s / 3600.0)
    };

    let mut perm: Vec<usize> = (1..=n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;

    loop {
        deadline.check()?;

        // Prefix sums of consecutive distances along the permutation.
        let mut pref = vec![0.0f64; n];
        for i in 1..n {
            pref[i] = pref[i - 1] + dist.get(perm[i - 1], perm[i]);
        }
        let seg_m = |i: usize, j: usize| -> f64 {
            // Sortie serving perm[i..j].
            (dist.get(0, perm[i]) + (pref[j - 1] - pref[i]) + dist.get(perm[j - 1], 0)) * 1000.0
        };
        let feasible = |m: f64| p * m / v <= available_j + SOC_TOL * e_full;

        // dp[j]: minimal time to serve perm[..j] with a recharge after every
        // sortie so far.
        let mut dp = vec![f64::INFINITY; n + 1];
        let mut parent = vec![usize::MAX; n + 1];
        dp[0] = 0.0;
        for j in 1..=n {
            for i in 0..j {
                if !dp[i].is_finite() {
                    continue;
                }
                let m = seg_m(i, j);
                if !feasible(m) {
                    continue;
                }
                let cost = dp[i] + m / v / 3600.0 + hover_h(m)?;
                if cost < dp[j] {
                    dp[j] = cost;
                    parent[j] = i;
                }
            }
        }

        // Close with the final sortie, which recharges only on request.
        let mut total = f64::INFINITY;
        let mut last_split = usize::MAX;
        for i in 0..n {
            if !dp[i].is_finite() {
                continue;
            }
            let m = seg_m(i, n);
            if !feasible(m) {
                continue;
            }
            let mut cost = dp[i] + m / v / 3600.0;
            if include_final_recharge {
                cost += hover_h(m)?;
            }
            if cost < total {
                total = cost;
                last_split = i;
            }
        }
        if total.is_finite() {
            let strictly_better = best
                .as_ref()
                .map_or(true, |(best_cost, _)| total < best_cost - TIE_EPS_H);
            let tie = best
                .as_ref()
                .map_or(false, |(best_cost, _)| (total - best_cost).abs() <= TIE_EPS_H);
            if strictly_better {
                let route = reconstruct(&perm, &parent, last_split);
                best = Some((total, route));
            } else if tie {
                let route = reconstruct(&perm, &parent, last_split);
                if let Some((best_cost, best_route)) = &mut best {
                    if route < *best_route {
                        *best_cost = total.min(*best_cost);
                        *best_route = route;
                    }
                }
            }
        }

        if !next_permutation(&mut perm) {
            break;
        }
    }

    match best {
        Some((cost, route)) => Ok((Solution::new_unchecked(route), cost)),
        // Reachable instances always admit the all-singleton-sortie solution.
        None => Err(Error::DeadEnd { step: 0 }),
    }
}

fn reconstruct(perm: &[usize], parent: &[usize], last_split: usize) -> Vec<usize> {
    let n = perm.len();
    let mut splits = vec![n, last_split];
    let mut at = last_split;
    while at != 0 {
        at = parent[at];
        splits.push(at);
    }
    splits.reverse();
    let mut route = vec![0usize];
    for w in splits.windows(2) {
        route.extend_from_slice(&perm[w[0]..w[1]]);
        route.push(0);
    }
    route
}

/// Advances `arr` to the next lexicographic permutation; false at the last.
fn next_permutation(arr: &mut [usize]) -> bool {
    if arr.len() < 2 {
        return false;
    }
    let mut i = arr.len() - 1;
    while i > 0 && arr[i - 1] >= arr[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = arr.len() - 1;
    while arr[j] <= arr[i - 1] {
        j -= 1;
    }
    arr.swap(i - 1, j);
    arr[i..].reverse();
    true
}
