//! Solution construction on top of a trained policy: greedy decoding,
//! best-of-k sampling and beam search.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::energy::{UavParams, WptParams};
use crate::error::{Error, Result};
use crate::eval::{ensure_reachable, evaluate};
use crate::instance::Instance;
use crate::policy::{
    decode_step, encode_instance, feasible_mask, rollout, DecoderState, ModelParams, Scalar,
    Strategy,
};
use crate::solution::Solution;
use crate::solvers::{Deadline, SolveCtx, Solver};

/// Single greedy rollout.
pub fn greedy_decode<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    params: &ModelParams<S>,
) -> Result<Solution> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused by the greedy path
    rollout(inst, uav, params, Strategy::Greedy, &mut rng).map(|(sol, _)| sol)
}

/// Draws `k` independent sampled rollouts and returns the cheapest feasible
/// one.
///
/// Sample `i` uses a dedicated stream derived from one draw off `rng`, so the
/// first `k'` samples of a `k`-sample run are exactly the samples of a
/// `k'`-sample run with the same generator state, and rollouts can run in
/// parallel without changing results.
pub fn sample_decode<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    wpt: &WptParams,
    params: &ModelParams<S>,
    k: usize,
    rng: &mut dyn RngCore,
    include_final_recharge: bool,
    deadline: Deadline,
) -> Result<Solution> {
    if k < 1 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    ensure_reachable(inst, uav)?;
    let base_seed = rng.next_u64();
    let enc = encode_instance(inst, params)?;
    let dist = inst.dist_matrix();

    let outcomes: Vec<Result<(f64, Solution)>> = (0..k)
        .into_par_iter()
        .map(|i| {
            deadline.check()?;
            let mut stream = ChaCha8Rng::seed_from_u64(base_seed);
            stream.set_stream(i as u64);
            let (sol, _) = crate::policy::rollout_from_encoding(
                &dist,
                uav,
                params,
                &enc,
                Strategy::Sample,
                &mut stream,
            )?;
            let (cost, _) = evaluate(inst, &sol, uav, wpt, include_final_recharge)?;
            Ok((cost.total_h, sol))
        })
        .collect();

    let mut best: Option<(f64, Solution)> = None;
    for outcome in outcomes {
        let (cost, sol) = outcome?;
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, sol));
        }
    }
    Ok(best.expect("k >= 1").1)
}

/// One beam-search candidate: the decoding state plus its cumulative
/// log-probability.
#[derive(Debug, Clone)]
pub struct Beam {
    pub state: DecoderState,
    pub logp: f64,
}

/// Breadth-first construction keeping the `width` highest log-probability
/// partial solutions per step; among completed solutions the cheapest one is
/// returned. Width 1 reduces to greedy decoding.
pub fn beam_search<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    wpt: &WptParams,
    params: &ModelParams<S>,
    width: usize,
    include_final_recharge: bool,
    deadline: Deadline,
) -> Result<Solution> {
    if width < 1 {
        return Err(Error::InvalidParameter("beam width must be at least 1".into()));
    }
    ensure_reachable(inst, uav)?;
    let enc = encode_instance(inst, params)?;
    let dist = inst.dist_matrix();
    let n_nodes = inst.n_nodes();

    let mut active = vec![Beam {
        state: DecoderState::fresh(n_nodes),
        logp: 0.0,
    }];
    let mut completed: Vec<(Solution, f64)> = Vec::new();

    while !active.is_empty() {
        deadline.check()?;
        // (parent index, node, cumulative logp, candidate route)
        let mut candidates: Vec<(usize, usize, f64, Vec<usize>)> = Vec::new();
        for (pi, beam) in active.iter().enumerate() {
            let feasible = feasible_mask(&beam.state, &dist, uav);
            if !feasible.iter().any(|&f| f) {
                return Err(Error::DeadEnd {
                    step: beam.state.step,
                });
            }
            let probs = decode_step(&enc.enc_out, &beam.state, params, &feasible)?;
            for node in 0..n_nodes {
                if !feasible[node] {
                    continue;
                }
                let logp = beam.logp + probs[node].as_f64().ln();
                let mut route = beam.state.partial_route.clone();
                route.push(node);
                candidates.push((pi, node, logp, route));
            }
        }
        // Highest log-probability first; ties prefer the shorter partial
        // route, then the lexicographically smaller one.
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .expect("log-probabilities are finite")
                .then_with(|| a.3.len().cmp(&b.3.len()))
                .then_with(|| a.3.cmp(&b.3))
        });
        candidates.truncate(width);
        debug_assert!(
            {
                let mut routes: Vec<&Vec<usize>> = candidates.iter().map(|c| &c.3).collect();
                routes.sort();
                routes.windows(2).all(|w| w[0] != w[1])
            },
            "beam candidates must be distinct"
        );

        let mut next_active = Vec::with_capacity(candidates.len());
        for (pi, node, logp, _) in candidates {
            let mut state = active[pi].state.clone();
            state.advance(node, &dist, uav);
            if node == 0 && state.all_visited() {
                let mut route = Vec::with_capacity(state.partial_route.len() + 1);
                route.push(0);
                route.extend_from_slice(&state.partial_route);
                completed.push((Solution::new_unchecked(route), logp));
            } else {
                next_active.push(Beam { state, logp });
            }
        }
        active = next_active;
    }

    let mut best: Option<(f64, Solution)> = None;
    for (sol, _) in completed {
        let (cost, _) = evaluate(inst, &sol, uav, wpt, include_final_recharge)?;
        if best.as_ref().map_or(true, |(c, _)| cost.total_h < *c) {
            best = Some((cost.total_h, sol));
        }
    }
    best.map(|(_, sol)| sol).ok_or(Error::DeadEnd { step: 0 })
}

/// How a [`PolicySolver`] turns the policy into a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    /// Best of `k` sampled rollouts.
    Sample { k: usize },
    /// Beam search with the given width.
    Beam { width: usize },
}

/// Neural solver wrapper for the benchmark harness.
pub struct PolicySolver {
    pub params: ModelParams<f32>,
    pub mode: DecodeMode,
    /// Base seed for the sampling mode; combined with the instance seed so
    /// every (solver, instance) pair is deterministic.
    pub seed: u64,
}

impl Solver for PolicySolver {
    fn name(&self) -> String {
        match self.mode {
            DecodeMode::Greedy => "greedy".into(),
            DecodeMode::Sample { k } => format!("sample:{k}"),
            DecodeMode::Beam { width } => format!("beam:{width}"),
        }
    }

    fn solve(&self, inst: &Instance, ctx: &SolveCtx) -> Result<Solution> {
        match self.mode {
            DecodeMode::Greedy => greedy_decode(inst, ctx.uav, &self.params),
            DecodeMode::Sample { k } => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(self.seed ^ inst.seed.wrapping_mul(0x9E3779B97F4A7C15));
                sample_decode(
                    inst,
                    ctx.uav,
                    ctx.wpt,
                    &self.params,
                    k,
                    &mut rng,
                    ctx.include_final_recharge,
                    ctx.deadline,
                )
            }
            DecodeMode::Beam { width } => beam_search(
                inst,
                ctx.uav,
                ctx.wpt,
                &self.params,
                width,
                ctx.include_final_recharge,
                ctx.deadline,
            ),
        }
    }
}
