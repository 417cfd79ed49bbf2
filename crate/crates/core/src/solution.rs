//! Route representation and its on-disk format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into solution files.
pub const SOLUTION_FORMAT_VERSION: u32 = 1;

/// A mission route: a node index sequence starting and ending at the base
/// station (index 0). Interior zeros mark recharge returns, so the route is
/// equivalent to a concatenation of depot-rooted sorties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub route: Vec<usize>,
}

impl Solution {
    /// Builds a solution and checks the structural invariants: endpoints at
    /// the depot, no two consecutive depot entries, every task node in
    /// `1..=n_tasks` visited exactly once.
    pub fn new(route: Vec<usize>, n_tasks: usize) -> Result<Self> {
        let sol = Solution { route };
        sol.validate(n_tasks)?;
        Ok(sol)
    }

    /// Builds a solution without validation; for callers that construct
    /// routes invariant-preservingly.
    pub(crate) fn new_unchecked(route: Vec<usize>) -> Self {
        Solution { route }
    }

    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        if self.route.len() < 3 {
            return Err(Error::InvalidParameter(
                "route must contain at least one task visit".into(),
            ));
        }
        if *self.route.first().unwrap() != 0 || *self.route.last().unwrap() != 0 {
            return Err(Error::InvalidParameter(
                "route must start and end at the base station".into(),
            ));
        }
        let mut seen = vec![0usize; n_tasks + 1];
        let mut prev = usize::MAX;
        for &node in &self.route {
            if node > n_tasks {
                return Err(Error::InvalidParameter(format!(
                    "route references node {node}, instance has {n_tasks} task nodes"
                )));
            }
            if node == 0 && prev == 0 {
                return Err(Error::InvalidParameter(
                    "route contains two consecutive depot entries".into(),
                ));
            }
            seen[node] += 1;
            prev = node;
        }
        for (node, &count) in seen.iter().enumerate().skip(1) {
            if count != 1 {
                return Err(Error::InvalidParameter(format!(
                    "task node {node} visited {count} times"
                )));
            }
        }
        Ok(())
    }

    /// Number of depot departures (sorties).
    pub fn k_sorties(&self) -> usize {
        self.route.iter().filter(|&&n| n == 0).count().saturating_sub(1)
    }

    /// Iterates over sorties as slices of task nodes (depot entries omitted).
    pub fn sorties(&self) -> impl Iterator<Item = &[usize]> {
        self.route
            .split(|&n| n == 0)
            .filter(|segment| !segment.is_empty())
    }

    pub fn to_json(&self, cost: &CostBreakdown) -> String {
        let file = SolutionFile {
            format_version: SOLUTION_FORMAT_VERSION,
            route: self.route.clone(),
            cost: cost.clone(),
        };
        serde_json::to_string_pretty(&file).expect("solution serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<(Self, CostBreakdown)> {
        let file: SolutionFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("solution: {e}")))?;
        if file.format_version != SOLUTION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported solution format_version {}",
                file.format_version
            )));
        }
        Ok((Solution { route: file.route }, file.cost))
    }

    pub fn save(&self, cost: &CostBreakdown, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json(cost))?)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, CostBreakdown)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    format_version: u32,
    route: Vec<usize>,
    cost: CostBreakdown,
}

/// Mission cost split into flying and hover-charging time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Flying time (h).
    pub t_fly_h: f64,
    /// Total hover-charging time (h).
    pub t_hover_h: f64,
    /// Mission time (h); always `t_fly_h + t_hover_h`.
    pub total_h: f64,
    /// Sortie count.
    pub k: usize,
}

impl CostBreakdown {
    pub fn new(t_fly_h: f64, t_hover_h: f64, k: usize) -> Self {
        CostBreakdown {
            t_fly_h,
            t_hover_h,
            total_h: t_fly_h + t_hover_h,
            k,
        }
    }
}

/// State-of-charge trajectory aligned with the route entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SocTrace {
    /// SOC on arrival at each route entry; entry 0 is the initial full
    /// battery.
    pub arrival_soc: Vec<f64>,
    /// Hover time spent recharging at each route entry (s); zero everywhere
    /// except depot entries where a recharge happened.
    pub hover_s: Vec<f64>,
}
