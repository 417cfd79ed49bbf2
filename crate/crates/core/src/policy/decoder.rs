//! Autoregressive decoding: feasibility mask, per-step probabilities, rollout
//! and the backward pass of the log-probability of a chosen route.

use ndarray::{Array1, Array2};
use rand::RngCore;

use super::encoder::{encode_with_cache, encoder_backward, EncoderCache, EncoderOut};
use super::{embed_nodes, normalized_coords, ModelParams, Scalar};
use crate::energy::UavParams;
use crate::error::{Error, Result};
use crate::eval::ensure_reachable;
use crate::instance::{DistMatrix, Instance};
use crate::solution::Solution;

/// Construction strategies a rollout can use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Pick the highest-probability node; ties go to the lowest index.
    Greedy,
    /// Sample from the step distribution.
    Sample,
}

/// Decoding state: what has been visited, where the vehicle is, how much
/// charge remains.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub visited: Vec<bool>,
    /// Node selected at the previous step; the base station before step one.
    pub last: usize,
    pub soc: f64,
    /// Selections so far, excluding the implicit starting depot.
    pub partial_route: Vec<usize>,
    /// Next step index, starting at 1.
    pub step: usize,
}

impl DecoderState {
    pub fn fresh(n_nodes: usize) -> Self {
        DecoderState {
            visited: vec![false; n_nodes],
            last: 0,
            soc: 1.0,
            partial_route: Vec::new(),
            step: 1,
        }
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().skip(1).all(|&v| v)
    }

    /// Applies a selection: debits the traversed leg for task nodes, resets
    /// the charge at the depot.
    pub fn advance(&mut self, node: usize, dist: &DistMatrix, uav: &UavParams) {
        if node == 0 {
            self.soc = 1.0;
        } else {
            let leg_m = dist.get(self.last, node) * 1000.0;
            self.soc -=
                uav.cruise_power_w() * leg_m / uav.cruise_speed_m_s / uav.battery_j;
            self.visited[node] = true;
        }
        self.partial_route.push(node);
        self.last = node;
        self.step += 1;
    }
}

/// Selectability of every node in the current state (`true` = selectable).
///
/// Task nodes are masked once visited and whenever the leg to them plus the
/// return leg exceeds the remaining usable charge. The base station is masked
/// only directly after departing from it.
pub fn feasible_mask(state: &DecoderState, dist: &DistMatrix, uav: &UavParams) -> Vec<bool> {
    let n = dist.n_nodes();
    let p = uav.cruise_power_w();
    let v = uav.cruise_speed_m_s;
    let budget_j = (state.soc - uav.soc_min) * uav.battery_j;
    let mut feasible = vec![false; n];
    feasible[0] = state.last != 0;
    for i in 1..n {
        if state.visited[i] {
            continue;
        }
        let required_j = p * (dist.get(state.last, i) + dist.get(i, 0)) * 1000.0 / v;
        feasible[i] = required_j <= budget_j;
    }
    feasible
}

/// Per-step byproducts kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepTrace<S> {
    pub context: Array1<S>,
    pub q: Array1<S>,
    /// tanh of the scaled query-key products; zero at masked entries.
    pub tanh_z: Array1<S>,
    pub probs: Array1<S>,
    pub feasible: Vec<bool>,
    pub chosen: usize,
    /// Node whose features fed the context at this step.
    pub context_node: usize,
}

/// Complete record of one rollout, sufficient to backpropagate its
/// log-probability.
#[derive(Debug, Clone)]
pub struct RolloutTrace<S> {
    pub x_norm: Array2<S>,
    pub enc_out: EncoderOut<S>,
    pub enc_cache: EncoderCache<S>,
    pub keys: Array2<S>,
    pub steps: Vec<StepTrace<S>>,
    pub solution: Solution,
    pub logp: f64,
}

fn step_distribution<S: Scalar>(
    enc: &EncoderOut<S>,
    keys: &Array2<S>,
    state: &DecoderState,
    params: &ModelParams<S>,
    feasible: &[bool],
) -> Result<(Array1<S>, Array1<S>, Array1<S>, Array1<S>)> {
    let d = params.meta.d_h;
    let n = enc.h.nrows();
    let mut context = Array1::<S>::zeros(2 * d + 1);
    context.slice_mut(ndarray::s![0..d]).assign(&enc.h_bar);
    context
        .slice_mut(ndarray::s![d..2 * d])
        .assign(&enc.h.row(state.last));
    context[2 * d] = S::of_f64(state.soc);

    let q = context.dot(&params.w_ctx);
    let scale = S::of_f64(1.0 / (d as f64).sqrt());
    let clip = S::of_f64(params.meta.clip);

    let z = keys.dot(&q);
    let mut tanh_z = Array1::<S>::zeros(n);
    let mut max_u = S::neg_infinity();
    for i in 0..n {
        if feasible[i] {
            let t = (z[i] * scale).tanh();
            tanh_z[i] = t;
            let u = clip * t;
            if u > max_u {
                max_u = u;
            }
        }
    }
    if !max_u.is_finite() {
        return Err(Error::DeadEnd { step: state.step });
    }
    let mut probs = Array1::<S>::zeros(n);
    let mut sum = S::zero();
    for i in 0..n {
        if feasible[i] {
            let e = (clip * tanh_z[i] - max_u).exp();
            probs[i] = e;
            sum = sum + e;
        }
    }
    for i in 0..n {
        probs[i] = probs[i] / sum;
    }
    Ok((probs, context, q, tanh_z))
}

/// Selection probabilities over all nodes for the current state. Masked
/// nodes receive exactly zero.
pub fn decode_step<S: Scalar>(
    enc: &EncoderOut<S>,
    state: &DecoderState,
    params: &ModelParams<S>,
    feasible: &[bool],
) -> Result<Array1<S>> {
    if !feasible.iter().any(|&f| f) {
        return Err(Error::DeadEnd { step: state.step });
    }
    let keys = enc.h.dot(&params.w_key);
    step_distribution(enc, &keys, state, params, feasible).map(|(p, _, _, _)| p)
}

fn argmax_lowest_index<S: Scalar>(probs: &Array1<S>, feasible: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_p = S::neg_infinity();
    for i in 0..probs.len() {
        if feasible[i] && probs[i] > best_p {
            best_p = probs[i];
            best = i;
        }
    }
    best
}

fn sample_index<S: Scalar>(probs: &Array1<S>, feasible: &[bool], rng: &mut dyn RngCore) -> usize {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mut acc = 0.0f64;
    let mut last_feasible = 0;
    for i in 0..probs.len() {
        if !feasible[i] {
            continue;
        }
        last_feasible = i;
        acc += probs[i].as_f64();
        if u < acc {
            return i;
        }
    }
    last_feasible
}

enum ActionSource<'a> {
    Greedy,
    Sample(&'a mut dyn RngCore),
    Forced(std::slice::Iter<'a, usize>),
}

/// Runs the decoding loop on a prepared encoding. Returns the step traces
/// (empty unless `collect_steps`), the finished route and its
/// log-probability.
fn decode_loop<S: Scalar>(
    dist: &DistMatrix,
    uav: &UavParams,
    params: &ModelParams<S>,
    enc_out: &EncoderOut<S>,
    keys: &Array2<S>,
    mut source: ActionSource<'_>,
    collect_steps: bool,
) -> Result<(Vec<StepTrace<S>>, Solution, f64)> {
    let n_nodes = dist.n_nodes();
    let mut state = DecoderState::fresh(n_nodes);
    let mut steps = Vec::new();
    let mut logp = 0.0f64;
    // Generous hard cap: every task visit plus a recharge between any two.
    let step_cap = 2 * n_nodes + 2;

    loop {
        let feasible = feasible_mask(&state, dist, uav);
        if !feasible.iter().any(|&f| f) {
            return Err(Error::DeadEnd { step: state.step });
        }
        let (probs, context, q, tanh_z) =
            step_distribution(enc_out, keys, &state, params, &feasible)?;
        let chosen = match &mut source {
            ActionSource::Greedy => argmax_lowest_index(&probs, &feasible),
            ActionSource::Sample(rng) => sample_index(&probs, &feasible, *rng),
            ActionSource::Forced(iter) => match iter.next() {
                Some(&a) => {
                    if a >= n_nodes || !feasible[a] {
                        return Err(Error::InvalidParameter(format!(
                            "forced action {a} is masked at step {}",
                            state.step
                        )));
                    }
                    a
                }
                None => {
                    return Err(Error::InvalidParameter(
                        "forced route ended before the mission completed".into(),
                    ))
                }
            },
        };
        logp += probs[chosen].as_f64().ln();
        if collect_steps {
            steps.push(StepTrace {
                context,
                q,
                tanh_z,
                probs,
                feasible,
                chosen,
                context_node: state.last,
            });
        }
        state.advance(chosen, dist, uav);
        if chosen == 0 && state.all_visited() {
            break;
        }
        if state.step > step_cap {
            return Err(Error::NumericalFailure(
                "rollout exceeded the step cap without completing".into(),
            ));
        }
    }
    if let ActionSource::Forced(mut iter) = source {
        if iter.next().is_some() {
            return Err(Error::InvalidParameter(
                "forced route continues past mission completion".into(),
            ));
        }
    }

    let mut route = Vec::with_capacity(state.partial_route.len() + 1);
    route.push(0);
    route.extend_from_slice(&state.partial_route);
    let solution = Solution::new_unchecked(route);
    debug_assert!(solution.validate(n_nodes - 1).is_ok());
    Ok((steps, solution, logp))
}

/// Reusable per-instance encoding for repeated decoding.
#[derive(Debug, Clone)]
pub struct Encoded<S> {
    pub x_norm: Array2<S>,
    pub enc_out: EncoderOut<S>,
    pub enc_cache: EncoderCache<S>,
    pub keys: Array2<S>,
}

/// Embeds and encodes one instance, preparing the decoder keys.
pub fn encode_instance<S: Scalar>(
    inst: &Instance,
    params: &ModelParams<S>,
) -> Result<Encoded<S>> {
    let x_norm = normalized_coords::<S>(inst);
    let h0 = embed_nodes(&x_norm, params);
    let (enc_out, enc_cache) = encode_with_cache(&h0, params)?;
    let keys = enc_out.h.dot(&params.w_key);
    Ok(Encoded {
        x_norm,
        enc_out,
        enc_cache,
        keys,
    })
}

/// One rollout on an already-encoded instance. Skips the trace, so it is the
/// cheap path for repeated sampling.
pub fn rollout_from_encoding<S: Scalar>(
    dist: &DistMatrix,
    uav: &UavParams,
    params: &ModelParams<S>,
    enc: &Encoded<S>,
    strategy: Strategy,
    rng: &mut dyn RngCore,
) -> Result<(Solution, f64)> {
    let source = match strategy {
        Strategy::Greedy => ActionSource::Greedy,
        Strategy::Sample => ActionSource::Sample(rng),
    };
    decode_loop(dist, uav, params, &enc.enc_out, &enc.keys, source, false)
        .map(|(_, sol, logp)| (sol, logp))
}

fn run_rollout<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    params: &ModelParams<S>,
    source: ActionSource<'_>,
) -> Result<RolloutTrace<S>> {
    ensure_reachable(inst, uav)?;
    let enc = encode_instance(inst, params)?;
    let dist = inst.dist_matrix();
    let (steps, solution, logp) =
        decode_loop(&dist, uav, params, &enc.enc_out, &enc.keys, source, true)?;
    Ok(RolloutTrace {
        x_norm: enc.x_norm,
        enc_out: enc.enc_out,
        enc_cache: enc.enc_cache,
        keys: enc.keys,
        steps,
        solution,
        logp,
    })
}

/// Constructs a route with the policy and returns it with the total
/// log-probability of the chosen actions.
pub fn rollout<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    params: &ModelParams<S>,
    strategy: Strategy,
    rng: &mut dyn RngCore,
) -> Result<(Solution, f64)> {
    rollout_traced(inst, uav, params, strategy, rng).map(|t| (t.solution, t.logp))
}

/// [`rollout`] keeping the full activation trace for training.
pub fn rollout_traced<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    params: &ModelParams<S>,
    strategy: Strategy,
    rng: &mut dyn RngCore,
) -> Result<RolloutTrace<S>> {
    let source = match strategy {
        Strategy::Greedy => ActionSource::Greedy,
        Strategy::Sample => ActionSource::Sample(rng),
    };
    run_rollout(inst, uav, params, source)
}

/// Replays a fixed route through the decoder (teacher forcing) and returns
/// the trace with its log-probability. The route must be mask-legal.
pub fn route_log_prob<S: Scalar>(
    inst: &Instance,
    uav: &UavParams,
    params: &ModelParams<S>,
    route: &[usize],
) -> Result<RolloutTrace<S>> {
    if route.first() != Some(&0) {
        return Err(Error::InvalidParameter("route must start at the base station".into()));
    }
    run_rollout(inst, uav, params, ActionSource::Forced(route[1..].iter()))
}

/// Accumulates `weight * d(log p(route)) / d(params)` into `grad`.
pub fn trace_backward<S: Scalar>(
    trace: &RolloutTrace<S>,
    params: &ModelParams<S>,
    weight: S,
    grad: &mut ModelParams<S>,
) {
    let d = params.meta.d_h;
    let n = trace.enc_out.h.nrows();
    let scale = S::of_f64(1.0 / (d as f64).sqrt());
    let clip = S::of_f64(params.meta.clip);

    let mut d_h = Array2::<S>::zeros((n, d));
    let mut d_keys = Array2::<S>::zeros((n, d));
    let mut d_h_bar = Array1::<S>::zeros(d);

    for step in &trace.steps {
        // d log p(chosen) / d u_i = [i == chosen] - p_i on feasible entries.
        let mut dz = Array1::<S>::zeros(n);
        for i in 0..n {
            if !step.feasible[i] {
                continue;
            }
            let indicator = if i == step.chosen { S::one() } else { S::zero() };
            let du = weight * (indicator - step.probs[i]);
            dz[i] = du * clip * (S::one() - step.tanh_z[i] * step.tanh_z[i]) * scale;
        }
        // z_i = q . k_i (already includes the 1/sqrt(d) via dz above).
        let dq = trace.keys.t().dot(&dz);
        for i in 0..n {
            if dz[i] != S::zero() {
                let mut row = d_keys.row_mut(i);
                row.scaled_add(dz[i], &step.q);
            }
        }
        // q = context . w_ctx.
        for r in 0..2 * d + 1 {
            let c = step.context[r];
            if c != S::zero() {
                let mut row = grad.w_ctx.row_mut(r);
                row.scaled_add(c, &dq);
            }
        }
        let d_context = params.w_ctx.dot(&dq);
        d_h_bar = d_h_bar + d_context.slice(ndarray::s![0..d]);
        let mut row = d_h.row_mut(step.context_node);
        row.scaled_add(S::one(), &d_context.slice(ndarray::s![d..2 * d]));
        // The state-of-charge input is a constant of the fixed trajectory.
    }

    // keys = H . w_key.
    grad.w_key = &grad.w_key + &trace.enc_out.h.t().dot(&d_keys);
    d_h = d_h + d_keys.dot(&params.w_key.t());

    // h_bar = mean of rows of H.
    let inv_n = S::of_f64(1.0 / n as f64);
    for mut row in d_h.rows_mut() {
        row.scaled_add(inv_n, &d_h_bar);
    }

    let d_h0 = encoder_backward(&trace.enc_cache, params, d_h, grad);

    // h0 = X . w_embed + b_embed.
    grad.w_embed = &grad.w_embed + &trace.x_norm.t().dot(&d_h0);
    grad.b_embed = &grad.b_embed + &d_h0.sum_axis(ndarray::Axis(0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{check_feasible, usable_range_m};
    use crate::instance::generate_instance;
    use crate::policy::{init_params, ModelMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(seed: u64) -> ModelParams<f64> {
        init_params(seed, &ModelMeta::new(8, 2, 1)).unwrap()
    }

    fn reachable_instance(n: usize, side: f64, seed0: u64, uav: &UavParams) -> Instance {
        let mut seed = seed0;
        loop {
            let inst = generate_instance(n, side, seed).unwrap();
            if ensure_reachable(&inst, uav).is_ok() {
                return inst;
            }
            seed += 1;
        }
    }

    #[test]
    fn fresh_state_masks_only_the_depot() {
        let uav = UavParams::default();
        let inst = generate_instance(6, 4.0, 3).unwrap();
        let dist = inst.dist_matrix();
        let state = DecoderState::fresh(inst.n_nodes());
        let feasible = feasible_mask(&state, &dist, &uav);
        assert!(!feasible[0]);
        assert!(feasible[1..].iter().all(|&f| f));
    }

    #[test]
    fn energy_boundary_masks_at_one_meter_past() {
        let uav = UavParams::default();
        let usable = usable_range_m(&uav);
        // Node exactly on the boundary: feasible; one meter past: masked.
        for (extra_m, expect) in [(0.0, true), (1.0, false)] {
            let x_km = (usable / 2.0 + extra_m / 2.0) / 1000.0;
            let inst = Instance {
                coords: vec![[0.0, 0.0], [x_km, 0.0]],
                side_km: x_km.ceil() + 1.0,
                seed: 0,
            };
            let dist = inst.dist_matrix();
            let state = DecoderState::fresh(2);
            let feasible = feasible_mask(&state, &dist, &uav);
            assert_eq!(feasible[1], expect, "extra {extra_m} m");
        }
    }

    #[test]
    fn all_visited_leaves_only_the_depot() {
        let uav = UavParams::default();
        let inst = generate_instance(4, 4.0, 5).unwrap();
        let dist = inst.dist_matrix();
        let mut state = DecoderState::fresh(inst.n_nodes());
        for i in 1..inst.n_nodes() {
            state.visited[i] = true;
        }
        state.last = 3;
        let feasible = feasible_mask(&state, &dist, &uav);
        assert!(feasible[0]);
        assert!(!feasible[1..].iter().any(|&f| f));
    }

    #[test]
    fn probabilities_are_a_distribution_with_exact_zeros() {
        let uav = UavParams::default();
        let inst = generate_instance(7, 4.0, 11).unwrap();
        let params = tiny_params(1);
        let x = normalized_coords::<f64>(&inst);
        let enc = crate::policy::encode(&embed_nodes(&x, &params), &params).unwrap();
        let dist = inst.dist_matrix();
        let state = DecoderState::fresh(inst.n_nodes());
        let feasible = feasible_mask(&state, &dist, &uav);
        let probs = decode_step(&enc, &state, &params, &feasible).unwrap();
        let sum: f64 = probs.sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for i in 0..probs.len() {
            if feasible[i] {
                assert!(probs[i] > 0.0);
            } else {
                assert_eq!(probs[i], 0.0);
            }
        }
    }

    #[test]
    fn zero_context_projection_gives_uniform_distribution() {
        let uav = UavParams::default();
        let inst = generate_instance(5, 4.0, 2).unwrap();
        let mut params = tiny_params(3);
        params.w_ctx.fill(0.0);
        let x = normalized_coords::<f64>(&inst);
        let enc = crate::policy::encode(&embed_nodes(&x, &params), &params).unwrap();
        let dist = inst.dist_matrix();
        let state = DecoderState::fresh(inst.n_nodes());
        let feasible = feasible_mask(&state, &dist, &uav);
        let m = feasible.iter().filter(|&&f| f).count() as f64;
        let probs = decode_step(&enc, &state, &params, &feasible).unwrap();
        for i in 0..probs.len() {
            if feasible[i] {
                assert!((probs[i] - 1.0 / m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logits_respect_the_clip_bound() {
        let uav = UavParams::default();
        let inst = generate_instance(6, 4.0, 7).unwrap();
        let mut params = tiny_params(4);
        // Exaggerate the projections; tanh still bounds the logits.
        params.w_ctx.mapv_inplace(|x| x * 100.0);
        params.w_key.mapv_inplace(|x| x * 100.0);
        let x = normalized_coords::<f64>(&inst);
        let enc = crate::policy::encode(&embed_nodes(&x, &params), &params).unwrap();
        let keys = enc.h.dot(&params.w_key);
        let dist = inst.dist_matrix();
        let state = DecoderState::fresh(inst.n_nodes());
        let feasible = feasible_mask(&state, &dist, &uav);
        let (_, _, _, tanh_z) =
            step_distribution(&enc, &keys, &state, &params, &feasible).unwrap();
        for i in 0..tanh_z.len() {
            assert!(params.meta.clip * tanh_z[i].abs() <= params.meta.clip);
        }
    }

    #[test]
    fn single_task_instance_has_one_legal_route() {
        let uav = UavParams::default();
        let inst = generate_instance(1, 4.0, 9).unwrap();
        for seed in 0..5 {
            let params = tiny_params(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sol, _) = rollout(&inst, &uav, &params, Strategy::Sample, &mut rng).unwrap();
            assert_eq!(sol.route, vec![0, 1, 0]);
        }
    }

    #[test]
    fn greedy_rollout_is_deterministic() {
        let uav = UavParams::default();
        let inst = reachable_instance(10, 6.0, 31, &uav);
        let params = tiny_params(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, la) = rollout(&inst, &uav, &params, Strategy::Greedy, &mut rng).unwrap();
        let (b, lb) = rollout(&inst, &uav, &params, Strategy::Greedy, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn rollouts_always_produce_feasible_routes() {
        let uav = UavParams::default();
        let params = tiny_params(13);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..100 {
            let inst = reachable_instance(8, 7.0, 1000 + seed * 10, &uav);
            let (sol, _) = rollout(&inst, &uav, &params, Strategy::Sample, &mut rng).unwrap();
            let violations = check_feasible(&inst, &sol, &uav);
            assert!(violations.is_empty(), "seed {seed}: {violations:?}");
        }
    }

    #[test]
    fn log_probability_matches_per_step_product() {
        let uav = UavParams::default();
        let inst = reachable_instance(6, 5.0, 77, &uav);
        let params = tiny_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trace = rollout_traced(&inst, &uav, &params, Strategy::Sample, &mut rng).unwrap();
        let product: f64 = trace
            .steps
            .iter()
            .map(|s| s.probs[s.chosen])
            .product();
        let from_log = trace.logp.exp();
        assert!(
            (from_log - product).abs() / product.abs().max(1e-300) < 1e-6,
            "exp(logp) {from_log} vs product {product}"
        );
    }

    #[test]
    fn forced_replay_reproduces_the_rollout() {
        let uav = UavParams::default();
        let inst = reachable_instance(7, 5.0, 123, &uav);
        let params = tiny_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = rollout_traced(&inst, &uav, &params, Strategy::Sample, &mut rng).unwrap();
        let replay = route_log_prob(&inst, &uav, &params, &trace.solution.route).unwrap();
        assert_eq!(replay.solution, trace.solution);
        assert!((replay.logp - trace.logp).abs() < 1e-12);
    }

    #[test]
    fn permuted_tasks_traverse_the_same_physical_tour() {
        let uav = UavParams::default();
        let inst = reachable_instance(6, 5.0, 200, &uav);
        let params = tiny_params(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (sol, _) = rollout(&inst, &uav, &params, Strategy::Greedy, &mut rng).unwrap();

        // Reverse the task order: node i -> n+1-i.
        let n = inst.n_tasks();
        let mut coords = vec![inst.coords[0]];
        for i in 0..n {
            coords.push(inst.coords[n - i]);
        }
        let perm_inst = Instance {
            coords,
            side_km: inst.side_km,
            seed: inst.seed,
        };
        let (perm_sol, _) = rollout(&perm_inst, &uav, &params, Strategy::Greedy, &mut rng).unwrap();
        let remapped: Vec<usize> = perm_sol
            .route
            .iter()
            .map(|&x| if x == 0 { 0 } else { n + 1 - x })
            .collect();
        assert_eq!(remapped, sol.route);
    }

    /// Full-pipeline gradient check: d log p(route) / d params against
    /// central finite differences on a tiny model.
    #[test]
    fn route_log_prob_gradient_matches_finite_differences() {
        let uav = UavParams::default();
        let inst = reachable_instance(5, 5.0, 321, &uav);
        let params = tiny_params(14);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let trace = rollout_traced(&inst, &uav, &params, Strategy::Sample, &mut rng).unwrap();
        let route = trace.solution.route.clone();

        let mut grad = params.zeros_like();
        trace_backward(&trace, &params, 1.0, &mut grad);

        let flat = params.to_flat();
        let analytic = grad.to_flat();
        let eps = 1e-6;
        let mut idx_rng = ChaCha8Rng::seed_from_u64(44);
        use rand::Rng as _;
        for _ in 0..80 {
            let idx = idx_rng.random_range(0..flat.len());
            let mut plus = params.clone();
            let mut f = flat.clone();
            f[idx] += eps;
            plus.load_flat(&f).unwrap();
            let mut minus = params.clone();
            f[idx] -= 2.0 * eps;
            minus.load_flat(&f).unwrap();
            let lp = route_log_prob(&inst, &uav, &plus, &route).unwrap().logp;
            let lm = route_log_prob(&inst, &uav, &minus, &route).unwrap().logp;
            let fd = (lp - lm) / (2.0 * eps);
            let a = analytic[idx];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom < 1e-4,
                "param {idx}: analytic {a} vs fd {fd}"
            );
        }
    }
}
