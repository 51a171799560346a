//! Clipped-surrogate policy optimization.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::TrainConfig;
use super::trajectory::{compute_advantages, Trajectory, Transition};
use crate::env::{Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{Adam, Objective, OutputGrad, PolicyNet, PolicyOutput, Scalar};

/// Transitions with their (unnormalized) advantages and value targets.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_trajectories(trajectories: &[Trajectory], gamma: f64, lambda: f64) -> Self {
        let mut batch = Batch::default();
        for traj in trajectories {
            let (adv, ret) = compute_advantages(traj, gamma, lambda);
            batch.transitions.extend(traj.transitions.iter().cloned());
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Zero mean, unit variance across the batch. A single advantage keeps only
/// its sign, since centering would erase it.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    match adv.len() {
        0 => Vec::new(),
        1 => vec![if adv[0] == 0.0 { 0.0 } else { adv[0].signum() }],
        n => {
            let mean = adv.iter().sum::<f64>() / n as f64;
            let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
        }
    }
}

/// Batch averages reported by one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    /// Mean clipped surrogate (the quantity being maximized).
    pub surrogate: f64,
    /// Mean squared value error, unweighted.
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio lies outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

impl PpoStats {
    fn accumulate(&mut self, other: &PpoStats) {
        self.surrogate += other.surrogate;
        self.value_loss += other.value_loss;
        self.entropy += other.entropy;
        self.clip_fraction += other.clip_fraction;
        self.mean_ratio += other.mean_ratio;
    }

    fn scaled(mut self, f: f64) -> Self {
        self.surrogate *= f;
        self.value_loss *= f;
        self.entropy *= f;
        self.clip_fraction *= f;
        self.mean_ratio *= f;
        self
    }
}

/// One sample's inputs to the objective.
#[derive(Debug, Clone, Copy)]
pub struct PpoSample {
    pub raw_action: [f64; ACTION_DIM],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// Loss minimized per minibatch:
/// `mean(-min(r A, clip(r) A) + c_v (V - R)^2 - c_e H)`.
#[derive(Debug)]
pub struct PpoObjective {
    pub samples: Vec<PpoSample>,
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    last_stats: Mutex<PpoStats>,
}

impl PpoObjective {
    pub fn new(samples: Vec<PpoSample>, clip_epsilon: f64, value_coef: f64, entropy_coef: f64) -> Self {
        Self { samples, clip_epsilon, value_coef, entropy_coef, last_stats: Mutex::new(PpoStats::default()) }
    }

    /// Statistics of the most recent `evaluate` call.
    pub fn last_stats(&self) -> PpoStats {
        *self.last_stats.lock().unwrap()
    }
}

impl Objective for PpoObjective {
    fn evaluate(&self, outputs: &[PolicyOutput]) -> (f64, Vec<OutputGrad>) {
        let n = outputs.len() as f64;
        let eps = self.clip_epsilon;
        let mut loss = 0.0;
        let mut stats = PpoStats::default();
        let mut grads = Vec::with_capacity(outputs.len());
        for (out, s) in outputs.iter().zip(&self.samples) {
            let log_prob = out.log_prob(&s.raw_action);
            let ratio = (log_prob - s.old_log_prob).exp();
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            let unclipped_term = ratio * s.advantage;
            let clipped_term = clipped * s.advantage;
            let surrogate = unclipped_term.min(clipped_term);
            // d surrogate / d log_prob; zero when the clipped branch is the minimum
            let d_logp = if unclipped_term <= clipped_term { ratio * s.advantage } else { 0.0 };
            let entropy = out.entropy();
            let verr = out.value - s.value_target;
            loss += -surrogate + self.value_coef * verr * verr - self.entropy_coef * entropy;

            let mut g = OutputGrad::default();
            for d in 0..ACTION_DIM {
                let var = (2.0 * out.log_std[d]).exp();
                let diff = s.raw_action[d] - out.mean[d];
                let dlogp_dmean = diff / var;
                let dlogp_dlogstd = diff * diff / var - 1.0;
                g.mean[d] = -d_logp * dlogp_dmean / n;
                g.log_std[d] = (-d_logp * dlogp_dlogstd - self.entropy_coef) / n;
            }
            g.value = 2.0 * self.value_coef * verr / n;
            grads.push(g);

            stats.surrogate += surrogate;
            stats.value_loss += verr * verr;
            stats.entropy += entropy;
            stats.clip_fraction += f64::from(u8::from((ratio - 1.0).abs() > eps));
            stats.mean_ratio += ratio;
        }
        *self.last_stats.lock().unwrap() = stats.scaled(1.0 / n);
        (loss / n, grads)
    }
}

fn samples_for(batch: &Batch, advantages: &[f64], idx: &[usize]) -> (Vec<PpoSample>, Vec<usize>) {
    let samples = idx
        .iter()
        .map(|&i| PpoSample {
            raw_action: batch.transitions[i].raw_action,
            old_log_prob: batch.transitions[i].log_prob,
            advantage: advantages[i],
            value_target: batch.returns[i],
        })
        .collect();
    (samples, idx.to_vec())
}

/// Builds the objective over the whole batch with normalized advantages.
pub fn batch_objective(batch: &Batch, cfg: &TrainConfig) -> PpoObjective {
    let adv = normalize_advantages(&batch.advantages);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (samples, _) = samples_for(batch, &adv, &idx);
    PpoObjective::new(samples, cfg.clip_epsilon, cfg.value_coef, cfg.entropy_coef)
}

/// Statistics of the objective at the current parameters without updating them.
pub fn evaluate_batch<T: Scalar>(net: &PolicyNet<T>, batch: &Batch, cfg: &TrainConfig) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let objective = batch_objective(batch, cfg);
    let obs: Vec<&Observation> = batch.transitions.iter().map(|t| &t.observation).collect();
    let outputs: Vec<PolicyOutput> = obs.iter().map(|o| net.forward(o)).collect::<Result<_>>()?;
    objective.evaluate(&outputs);
    Ok(objective.last_stats())
}

/// `cfg.epochs` passes over shuffled minibatches, one optimizer step each.
/// Returns the statistics averaged over all steps (each measured before its step).
pub fn ppo_update<T: Scalar, R: Rng + ?Sized>(
    net: &mut PolicyNet<T>,
    optimizer: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::invalid("ppo_update needs a non-empty batch"));
    }
    let adv = normalize_advantages(&batch.advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut total = PpoStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let (samples, idx) = samples_for(batch, &adv, chunk);
            let objective = PpoObjective::new(samples, cfg.clip_epsilon, cfg.value_coef, cfg.entropy_coef);
            let obs: Vec<&Observation> = idx.iter().map(|&i| &batch.transitions[i].observation).collect();
            let (_, grads) = net.objective_gradients(&obs, &objective)?;
            optimizer.step(net, &grads);
            total.accumulate(&objective.last_stats());
            steps += 1;
        }
    }
    Ok(total.scaled(1.0 / steps as f64))
}
