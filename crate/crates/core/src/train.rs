//! Policy-gradient training with a greedy rollout baseline.
//!
//! Each step samples routes with the current model, scores them against the
//! frozen baseline model's greedy routes, and ascends the advantage-weighted
//! log-probability. The baseline is replaced at the end of an epoch whenever
//! the candidate beats it on a fixed validation set.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{UavParams, WptParams};
use crate::error::{Error, Result};
use crate::eval::{ensure_reachable, evaluate};
use crate::instance::{generate_instance, Instance};
use crate::policy::{
    init_params, rollout_traced, trace_backward, ModelMeta, ModelParams, Scalar, Strategy,
};

/// Gradient accumulation splits the batch into this many deterministic
/// chunks; the chunk sums are reduced in index order, so results do not
/// depend on thread count.
const GRAD_CHUNKS: usize = 8;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic source of instances on which every task node is reachable.
pub struct InstanceStream {
    pub n_tasks: usize,
    pub side_km: f64,
    salt: u64,
    counter: u64,
}

impl InstanceStream {
    pub fn new(n_tasks: usize, side_km: f64, salt: u64) -> Self {
        InstanceStream {
            n_tasks,
            side_km,
            salt,
            counter: 0,
        }
    }

    /// Next instance; uniform draws that contain an unreachable node are
    /// skipped deterministically.
    pub fn next(&mut self, uav: &UavParams) -> Instance {
        loop {
            let seed = splitmix64(self.salt ^ self.counter);
            self.counter += 1;
            let inst = generate_instance(self.n_tasks, self.side_km, seed)
                .expect("stream parameters validated");
            if ensure_reachable(&inst, uav).is_ok() {
                return inst;
            }
        }
    }

    pub fn take(&mut self, count: usize, uav: &UavParams) -> Vec<Instance> {
        (0..count).map(|_| self.next(uav)).collect()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Task nodes per generated training instance.
    pub n_tasks: usize,
    pub side_km: f64,
    /// Fixed validation set size for the baseline comparison.
    pub val_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: 5000 gradient steps on 20-node instances.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 50,
            steps_per_epoch: 100,
            learning_rate: 1e-4,
            n_tasks: 20,
            side_km: 8.0,
            val_size: 512,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.epochs == 0
            || self.steps_per_epoch == 0
            || self.n_tasks == 0
            || self.val_size == 0
        {
            return Err(Error::InvalidParameter("training sizes must be positive".into()));
        }
        if !(self.side_km > 0.0) {
            return Err(Error::InvalidParameter("side_km must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must lie in (0, 1), got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Format(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Aggregates of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Mean sampled mission time (h).
    pub mean_cost_h: f64,
    /// Mean greedy baseline mission time (h).
    pub mean_baseline_h: f64,
    /// Mean advantage (h).
    pub mean_advantage_h: f64,
    /// Mean absolute advantage (h).
    pub mean_abs_advantage_h: f64,
}

/// Per-instance record of one training step.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub route: Vec<usize>,
    pub cost_h: f64,
    pub baseline_cost_h: f64,
}

/// One policy-gradient step: returns the batch-mean gradient of
/// `(T(sample) - T(baseline greedy)) * log p(sample)` plus statistics and the
/// per-instance outcomes.
pub fn reinforce_step_detailed<S: Scalar>(
    params: &ModelParams<S>,
    baseline: &ModelParams<S>,
    batch: &[Instance],
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
    rng: &mut dyn RngCore,
) -> Result<(ModelParams<S>, BatchStats, Vec<SampleOutcome>)> {
    if params.meta != baseline.meta {
        return Err(Error::InvalidParameter(
            "main and baseline models must share one architecture".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let base_seed = rng.next_u64();
    let chunk_len = batch.len().div_ceil(GRAD_CHUNKS);

    struct ChunkOut<S> {
        grad: ModelParams<S>,
        outcomes: Vec<(usize, SampleOutcome)>,
    }

    let chunks: Vec<Result<ChunkOut<S>>> = batch
        .par_chunks(chunk_len)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut grad = params.zeros_like();
            let mut outcomes = Vec::with_capacity(chunk.len());
            for (off, inst) in chunk.iter().enumerate() {
                let idx = chunk_idx * chunk_len + off;
                let mut stream = ChaCha8Rng::seed_from_u64(base_seed);
                stream.set_stream(idx as u64);
                let trace = rollout_traced(inst, uav, params, Strategy::Sample, &mut stream)?;
                let (cost, _) =
                    evaluate(inst, &trace.solution, uav, wpt, include_final_recharge)?;
                let mut dummy = ChaCha8Rng::seed_from_u64(0);
                let (baseline_sol, _) =
                    crate::policy::rollout(inst, uav, baseline, Strategy::Greedy, &mut dummy)?;
                let (baseline_cost, _) =
                    evaluate(inst, &baseline_sol, uav, wpt, include_final_recharge)?;
                let advantage = cost.total_h - baseline_cost.total_h;
                if advantage != 0.0 {
                    trace_backward(&trace, params, S::of_f64(advantage), &mut grad);
                }
                outcomes.push((
                    idx,
                    SampleOutcome {
                        route: trace.solution.route,
                        cost_h: cost.total_h,
                        baseline_cost_h: baseline_cost.total_h,
                    },
                ));
            }
            Ok(ChunkOut { grad, outcomes })
        })
        .collect();

    let mut grad = params.zeros_like();
    let mut indexed = Vec::with_capacity(batch.len());
    for chunk in chunks {
        let chunk = chunk?;
        grad.scaled_add(S::one(), &chunk.grad);
        indexed.extend(chunk.outcomes);
    }
    indexed.sort_by_key(|(idx, _)| *idx);
    let outcomes: Vec<SampleOutcome> = indexed.into_iter().map(|(_, o)| o).collect();

    let inv_b = S::of_f64(1.0 / batch.len() as f64);
    grad.for_each_mut(|x| *x = *x * inv_b);
    if !grad.is_finite() {
        return Err(Error::NumericalFailure("non-finite policy gradient".into()));
    }

    let b = batch.len() as f64;
    let mean_cost_h = outcomes.iter().map(|o| o.cost_h).sum::<f64>() / b;
    let mean_baseline_h = outcomes.iter().map(|o| o.baseline_cost_h).sum::<f64>() / b;
    let mean_advantage_h =
        outcomes.iter().map(|o| o.cost_h - o.baseline_cost_h).sum::<f64>() / b;
    let mean_abs_advantage_h = outcomes
        .iter()
        .map(|o| (o.cost_h - o.baseline_cost_h).abs())
        .sum::<f64>()
        / b;
    Ok((
        grad,
        BatchStats {
            mean_cost_h,
            mean_baseline_h,
            mean_advantage_h,
            mean_abs_advantage_h,
        },
        outcomes,
    ))
}

/// [`reinforce_step_detailed`] without the per-instance outcomes.
pub fn reinforce_step<S: Scalar>(
    params: &ModelParams<S>,
    baseline: &ModelParams<S>,
    batch: &[Instance],
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
    rng: &mut dyn RngCore,
) -> Result<(ModelParams<S>, BatchStats)> {
    reinforce_step_detailed(params, baseline, batch, uav, wpt, include_final_recharge, rng)
        .map(|(g, s, _)| (g, s))
}

/// Adaptive-moment gradient descent state.
pub struct Adam<S> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: ModelParams<S>,
    v: ModelParams<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(like: &ModelParams<S>, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// Applies one descent step of `grad` to `params`.
    pub fn step(&mut self, params: &mut ModelParams<S>, grad: &ModelParams<S>) -> Result<()> {
        self.t += 1;
        let b1 = S::of_f64(self.beta1);
        let b2 = S::of_f64(self.beta2);
        let one = S::one();
        self.m.zip_mut_with(grad, |m, g| *m = b1 * *m + (one - b1) * g);
        self.v.zip_mut_with(grad, |v, g| *v = b2 * *v + (one - b2) * g * g);
        let corr1 = S::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = S::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::of_f64(self.learning_rate);
        let eps = S::of_f64(self.epsilon);

        // params -= lr * (m / corr1) / (sqrt(v / corr2) + eps)
        let mut ok = true;
        {
            let ms = self.m.tensors();
            let vs = self.v.tensors();
            for ((mut p, m), v) in params.tensors_mut().into_iter().zip(ms).zip(vs) {
                ndarray::Zip::from(&mut p).and(&m).and(&v).for_each(|p, &m, &v| {
                    let update = lr * (m / corr1) / ((v / corr2).sqrt() + eps);
                    *p = *p - update;
                    if !p.is_finite() {
                        ok = false;
                    }
                });
            }
        }
        if !ok {
            return Err(Error::NumericalFailure("non-finite parameter update".into()));
        }
        Ok(())
    }
}

/// Mean greedy mission time of `params` over a fixed instance set.
pub fn greedy_mean_cost<S: Scalar>(
    params: &ModelParams<S>,
    instances: &[Instance],
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
) -> Result<f64> {
    let costs: Vec<Result<f64>> = instances
        .par_iter()
        .map(|inst| {
            let mut dummy = ChaCha8Rng::seed_from_u64(0);
            let (sol, _) =
                crate::policy::rollout(inst, uav, params, Strategy::Greedy, &mut dummy)?;
            let (cost, _) = evaluate(inst, &sol, uav, wpt, include_final_recharge)?;
            Ok(cost.total_h)
        })
        .collect();
    let mut sum = 0.0;
    for c in costs {
        sum += c?;
    }
    Ok(sum / instances.len() as f64)
}

/// Replaces the baseline with the candidate iff the candidate's greedy mean
/// cost on the validation set is strictly lower. Returns (swapped, candidate
/// cost, cost of the baseline now in effect).
pub fn update_baseline<S: Scalar>(
    candidate: &ModelParams<S>,
    baseline: &mut ModelParams<S>,
    validation: &[Instance],
    uav: &UavParams,
    wpt: &WptParams,
    include_final_recharge: bool,
) -> Result<(bool, f64, f64)> {
    let cand = greedy_mean_cost(candidate, validation, uav, wpt, include_final_recharge)?;
    let base = greedy_mean_cost(baseline, validation, uav, wpt, include_final_recharge)?;
    if cand < base {
        *baseline = candidate.clone();
        Ok((true, cand, cand))
    } else {
        Ok((false, cand, base))
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean sampled training cost over the epoch (h).
    pub train_cost: f64,
    /// Greedy validation cost of the trained model (h).
    pub val_cost_main: f64,
    /// Greedy validation cost of the baseline in effect after the epoch (h).
    pub val_cost_baseline: f64,
    pub swapped: bool,
    pub wall_s: f64,
}

/// Full training log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub total_wall_s: f64,
}

impl TrainReport {
    /// CSV rendering with the header
    /// `epoch,train_cost,val_cost_main,val_cost_baseline,swapped`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_cost,val_cost_main,val_cost_baseline,swapped\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                e.epoch, e.train_cost, e.val_cost_main, e.val_cost_baseline, e.swapped
            ));
        }
        out
    }
}

/// Runs the full training loop, invoking `on_epoch` after every epoch.
pub fn train_with(
    config: &TrainConfig,
    meta: &ModelMeta,
    uav: &UavParams,
    wpt: &WptParams,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(ModelParams<f32>, TrainReport)> {
    config.validate()?;
    let start = std::time::Instant::now();

    let mut params: ModelParams<f32> = init_params(config.seed, meta)?;
    let mut baseline = params.clone();
    let mut adam = Adam::new(&params, config.learning_rate);

    let mut val_stream =
        InstanceStream::new(config.n_tasks, config.side_km, splitmix64(config.seed ^ 0x5EED_0001));
    let validation = val_stream.take(config.val_size, uav);
    let mut train_stream =
        InstanceStream::new(config.n_tasks, config.side_km, splitmix64(config.seed ^ 0x5EED_0002));

    let mut report = TrainReport::default();
    for epoch in 1..=config.epochs {
        let epoch_start = std::time::Instant::now();
        let mut epoch_cost = 0.0;
        for step in 1..=config.steps_per_epoch {
            let batch = train_stream.take(config.batch_size, uav);
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
                config.seed ^ (epoch as u64) << 24 ^ step as u64,
            ));
            let (grad, stats) = reinforce_step(
                &params, &baseline, &batch, uav, wpt, false, &mut rng,
            )?;
            adam.step(&mut params, &grad)?;
            epoch_cost += stats.mean_cost_h;
        }
        let (swapped, cand_cost, base_cost) =
            update_baseline(&params, &mut baseline, &validation, uav, wpt, false)?;
        let entry = EpochReport {
            epoch,
            train_cost: epoch_cost / config.steps_per_epoch as f64,
            val_cost_main: cand_cost,
            val_cost_baseline: base_cost,
            swapped,
            wall_s: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        report.epochs.push(entry);
    }
    report.total_wall_s = start.elapsed().as_secs_f64();
    Ok((params, report))
}

/// [`train_with`] without the epoch callback.
pub fn train(
    config: &TrainConfig,
    meta: &ModelMeta,
    uav: &UavParams,
    wpt: &WptParams,
) -> Result<(ModelParams<f32>, TrainReport)> {
    train_with(config, meta, uav, wpt, |_| {})
}
