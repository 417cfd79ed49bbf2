//! Route simulation: state-of-charge tracking, mission cost and feasibility.

use crate::energy::{recharge_event, UavParams, WptParams};
use crate::error::{Error, Result};
use crate::instance::{DistMatrix, Instance};
use crate::solution::{CostBreakdown, SocTrace, Solution};

/// Absolute tolerance on state-of-charge comparisons at the feasibility
/// boundary.
pub const SOC_TOL: f64 = 1e-9;

/// Maximum feasible single-sortie distance (m): the distance flyable on the
/// usable battery fraction at cruise speed.
pub fn usable_range_m(uav: &UavParams) -> f64 {
    (1.0 - uav.soc_min) * uav.battery_j * uav.cruise_speed_m_s / uav.cruise_power_w()
}

/// Checks that every task node can be served by a dedicated out-and-back
/// sortie. Routing rollouts and the baseline solvers require this.
pub fn ensure_reachable(inst: &Instance, uav: &UavParams) -> Result<()> {
    let usable = usable_range_m(uav);
    let depot = inst.coords[0];
    for (i, c) in inst.coords.iter().enumerate().skip(1) {
        let dx = c[0] - depot[0];
        let dy = c[1] - depot[1];
        let required = 2.0 * (dx * dx + dy * dy).sqrt() * 1000.0;
        if required > usable {
            return Err(Error::UnreachableNode {
                node: i,
                required_m: required,
                usable_m: usable,
            });
        }
    }
    Ok(())
}

/// Simulates `sol` leg by leg and returns the mission cost and the
/// state-of-charge trace.
///
/// Consumption per leg is cruise power times leg flight time. At each
/// interior depot arrival a recharge is simulated and its hover time added;
/// the final arrival recharges only when `include_final_recharge` is set.
/// Returns [`Error::InfeasibleRoute`] if the arrival state of charge at any
/// depot falls below the floor.
pub fn evaluate(
    inst: &Instance,
    sol: &Solution,
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
) -> Result<(CostBreakdown, SocTrace)> {
    sol.validate(inst.n_tasks())?;
    let dist = inst.dist_matrix();
    let v = uav.cruise_speed_m_s;
    let p_fly = uav.cruise_power_w();
    let e_full = uav.battery_j;

    let mut soc = 1.0;
    let mut arrival_soc = Vec::with_capacity(sol.route.len());
    let mut hover_s = Vec::with_capacity(sol.route.len());
    arrival_soc.push(1.0);
    hover_s.push(0.0);

    let mut t_fly_s = 0.0;
    let mut t_hover_s = 0.0;
    let mut sortie = 0;

    for t in 1..sol.route.len() {
        let leg_m = dist.get(sol.route[t - 1], sol.route[t]) * 1000.0;
        let leg_time_s = leg_m / v;
        t_fly_s += leg_time_s;
        soc -= p_fly * leg_time_s / e_full;
        arrival_soc.push(soc);

        if sol.route[t] == 0 {
            if soc < uav.soc_min - SOC_TOL {
                return Err(Error::InfeasibleRoute { sortie });
            }
            let is_final = t == sol.route.len() - 1;
            if !is_final || include_final_recharge {
                let e_remaining = (soc * e_full).clamp(0.0, e_full);
                let recharge = recharge_event(wpt, uav, e_remaining)?;
                t_hover_s += recharge.t_hover_s;
                hover_s.push(recharge.t_hover_s);
                soc = 1.0;
            } else {
                hover_s.push(0.0);
            }
            sortie += 1;
        } else {
            hover_s.push(0.0);
        }
    }

    let cost = CostBreakdown::new(t_fly_s / 3600.0, t_hover_s / 3600.0, sol.k_sorties());
    Ok((cost, SocTrace { arrival_soc, hover_s }))
}

/// A single constraint violation found by [`check_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Route does not start and end at the base station.
    BadEndpoints,
    /// Two depot entries in a row.
    ConsecutiveDepot { position: usize },
    /// Route references a node the instance does not have.
    NodeOutOfRange { node: usize },
    /// A task node visited zero or multiple times.
    VisitCount { node: usize, count: usize },
    /// A sortie needs more flight energy than the usable battery fraction.
    EnergyExceeded {
        sortie: usize,
        required_j: f64,
        available_j: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BadEndpoints => write!(f, "route must start and end at the base station"),
            Violation::ConsecutiveDepot { position } => {
                write!(f, "consecutive depot entries at position {position}")
            }
            Violation::NodeOutOfRange { node } => write!(f, "unknown node {node}"),
            Violation::VisitCount { node, count } => {
                write!(f, "task node {node} visited {count} times")
            }
            Violation::EnergyExceeded {
                sortie,
                required_j,
                available_j,
            } => write!(
                f,
                "sortie {sortie} needs {required_j:.1} J, usable budget is {available_j:.1} J"
            ),
        }
    }
}

/// Checks the structural and energy constraints of `sol` and reports every
/// violation instead of failing on the first.
pub fn check_feasible(inst: &Instance, sol: &Solution, uav: &UavParams) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n_tasks = inst.n_tasks();
    let route = &sol.route;

    if route.len() < 3 || *route.first().unwrap() != 0 || *route.last().unwrap() != 0 {
        violations.push(Violation::BadEndpoints);
    }
    let mut counts = vec![0usize; n_tasks + 1];
    let mut prev = usize::MAX;
    for (pos, &node) in route.iter().enumerate() {
        if node > n_tasks {
            violations.push(Violation::NodeOutOfRange { node });
            prev = node;
            continue;
        }
        if node == 0 && prev == 0 {
            violations.push(Violation::ConsecutiveDepot { position: pos });
        }
        counts[node] += 1;
        prev = node;
    }
    for (node, &count) in counts.iter().enumerate().skip(1) {
        if count != 1 {
            violations.push(Violation::VisitCount { node, count });
        }
    }

    // Per-sortie energy, only meaningful over in-range nodes.
    if route.iter().all(|&n| n <= n_tasks) && route.len() >= 2 {
        let dist = inst.dist_matrix();
        let v = uav.cruise_speed_m_s;
        let p_fly = uav.cruise_power_w();
        let available = (1.0 - uav.soc_min) * uav.battery_j;
        let mut sortie = 0;
        let mut sortie_m = 0.0;
        for t in 1..route.len() {
            sortie_m += dist.get(route[t - 1], route[t]) * 1000.0;
            if route[t] == 0 {
                let required = p_fly * sortie_m / v;
                if required > available + SOC_TOL * uav.battery_j {
                    violations.push(Violation::EnergyExceeded {
                        sortie,
                        required_j: required,
                        available_j: available,
                    });
                }
                sortie += 1;
                sortie_m = 0.0;
            }
        }
    }

    violations
}

/// Convenience wrapper: per-sortie total distances in meters.
pub fn sortie_distances_m(dist: &DistMatrix, route: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    for t in 1..route.len() {
        acc += dist.get(route[t - 1], route[t]) * 1000.0;
        if route[t] == 0 {
            out.push(acc);
            acc = 0.0;
        }
    }
    out
}
