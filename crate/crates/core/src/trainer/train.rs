//! The training loop: select a reference, collect episodes on it, update.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::config::{Sampling, TrainConfig};
use super::curriculum::schedule_thresh;
use super::data::Dataset;
use super::ppo::{ppo_update, Batch, PpoStats};
use super::sampling::{argmin_first, difficulty_estimates};
use super::trajectory::{collect_trajectory, Horizon, Trajectory};
use crate::canvas::Canvas;
use crate::env::{Action, Env};
use crate::error::{Error, Result};
use crate::nn::{save_params, Adam, Checkpoint, PolicyNet, Scalar};
use crate::seeding::{derived_rng, Domain};

pub const METRICS_HEADER: &str = "episode,mean_reward,surrogate,value_loss,entropy,clip_fraction,horizon";

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    /// 1-based training iteration, continuing across resumes.
    pub episode: u64,
    pub mean_reward: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Mean episode length in this iteration.
    pub horizon: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.mean_reward,
            self.surrogate,
            self.value_loss,
            self.entropy,
            self.clip_fraction,
            self.horizon
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PolicyNet<f32>,
    /// Completed iterations including any resumed ones.
    pub episodes: u64,
    pub metrics: Vec<MetricsRow>,
    /// Dataset index selected at each iteration.
    pub selections: Vec<usize>,
    pub env_steps: u64,
}

pub fn build_env(cfg: &TrainConfig) -> Result<Env> {
    Env::with_kind(cfg.env, cfg.loss)
}

/// Canvas painted by `steps` deterministic policy actions from white.
fn policy_canvas<T: Scalar>(env: &Env, net: &PolicyNet<T>, reference: &Canvas, steps: usize) -> Result<Canvas> {
    let mut state = env.reset(reference, None, None)?;
    for _ in 0..steps {
        let out = net.forward(&env.observe(&state))?;
        env.apply(&mut state, &out.mean_action())?;
    }
    Ok(state.canvas)
}

fn choose_reference<T: Scalar, R: Rng + ?Sized>(
    cfg: &TrainConfig,
    env: &Env,
    net: &PolicyNet<T>,
    dataset: &mut Dataset,
    rng: &mut R,
) -> Result<usize> {
    let n = dataset.len();
    let candidates: Vec<usize> = if cfg.dataset_size == 0 || cfg.dataset_size >= n {
        (0..n).collect()
    } else {
        let mut picked = sample(rng, n, cfg.dataset_size).into_vec();
        picked.sort_unstable();
        picked
    };
    let local = match cfg.sampling {
        Sampling::Uniform => rng.random_range(0..candidates.len()),
        Sampling::MeanReward => {
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&i| {
                    let s = &dataset.stats[i];
                    if s.episodes == 0 {
                        f64::NEG_INFINITY
                    } else {
                        s.mean_return
                    }
                })
                .collect();
            argmin_first(&scores).unwrap()
        }
        Sampling::Value => {
            let refs: Vec<&Canvas> = candidates.iter().map(|&i| &dataset.patches()[i]).collect();
            let estimates = difficulty_estimates(&refs, env, net)?;
            for (&i, &e) in candidates.iter().zip(&estimates) {
                dataset.stats[i].last_estimate = Some(e);
            }
            argmin_first(&estimates).unwrap()
        }
    };
    Ok(candidates[local])
}

struct MetricsLog {
    file: Option<(PathBuf, BufWriter<File>)>,
}

impl MetricsLog {
    fn open(out_dir: Option<&Path>, append: bool) -> Result<Self> {
        let Some(dir) = out_dir else { return Ok(Self { file: None }) };
        let path = dir.join("metrics.csv");
        let exists = path.exists();
        let file = if append && exists { fs::OpenOptions::new().append(true).open(&path) } else { File::create(&path) }
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        if !(append && exists) {
            writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { file: Some((path, w)) })
    }

    fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some((path, w)) = self.file.as_mut() {
            writeln!(w, "{}", row.to_csv()).map_err(|e| Error::io(&*path, e))?;
            w.flush().map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    }
}

/// Runs `cfg.iterations` iterations, or fewer when `cfg.step_budget` is
/// exhausted first. With `resume`, training continues from
/// that checkpoint and iteration numbering picks up where it stopped (the
/// optimizer state starts fresh). With `out_dir`, writes `metrics.csv`
/// (appending on resume), periodic `ckpt_<n>.ckpt` and `final.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    dataset: &mut Dataset,
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = build_env(cfg)?;
    let spec = cfg.net_spec()?;
    let (mut net, start) = match resume {
        Some(ck) => {
            let want = (spec.obs_height, spec.obs_width);
            if ck.net.observation_dims() != want {
                return Err(Error::invalid(format!(
                    "checkpoint expects {:?} observations but the config produces {:?}",
                    ck.net.observation_dims(),
                    want
                )));
            }
            (ck.net, ck.episodes)
        }
        None => (PolicyNet::<f32>::init(&spec, cfg.seed)?, 0),
    };
    let (ph, pw) = dataset.patch_dims();
    if ph < 1 || pw < 1 {
        return Err(Error::invalid("empty patches"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = MetricsLog::open(out_dir, start > 0)?;
    let mut optimizer = Adam::new(cfg.learning_rate, cfg.max_grad_norm);
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut selections = Vec::with_capacity(cfg.iterations);
    let mut env_steps = 0u64;

    for local in 0..cfg.iterations {
        let iteration = start + local as u64;
        let thresh = schedule_thresh(local, cfg);
        let mut sel_rng = derived_rng(cfg.seed, Domain::Selection, iteration);
        let index = choose_reference(cfg, &env, &net, dataset, &mut sel_rng)?;
        selections.push(index);
        dataset.stats[index].selections += 1;
        let reference = &dataset.patches()[index];

        let horizon = Horizon { cap: cfg.t_max, thresh };
        let episodes_per = cfg.episodes_per_iteration as u64;
        let snapshot = &net;
        let trajectories: Vec<Trajectory> = (0..cfg.episodes_per_iteration)
            .into_par_iter()
            .map(|k| {
                let mut rng = derived_rng(cfg.seed, Domain::Episode, iteration * episodes_per + k as u64);
                let init = if cfg.rollout_init_fraction > 0.0 && rng.random_bool(cfg.rollout_init_fraction) {
                    Some(policy_canvas(&env, snapshot, reference, cfg.rollout_init_steps)?)
                } else {
                    None
                };
                let mut state = env.reset(reference, init.as_ref(), None)?;
                collect_trajectory(&env, &mut state, snapshot, horizon, index, &mut rng)
            })
            .collect::<Result<_>>()?;

        for t in &trajectories {
            dataset.stats[index].record_return(t.episode_return);
            env_steps += t.len() as u64;
        }
        let batch = Batch::from_trajectories(&trajectories, cfg.gamma, cfg.lambda);
        let mut mb_rng = derived_rng(cfg.seed, Domain::Minibatch, iteration);
        let stats: PpoStats = ppo_update(&mut net, &mut optimizer, &batch, cfg, &mut mb_rng)?;

        let n = trajectories.len() as f64;
        let row = MetricsRow {
            episode: iteration + 1,
            mean_reward: trajectories.iter().map(|t| t.episode_return).sum::<f64>() / n,
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            horizon: trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / n,
        };
        log.write(&row)?;
        metrics.push(row);

        if let Some(dir) = out_dir {
            let done = iteration + 1;
            if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every as u64) {
                save_params(&net, done, dir.join(format!("ckpt_{done}.ckpt")))?;
            }
        }
        if cfg.step_budget > 0 && env_steps >= cfg.step_budget {
            break;
        }
    }
    let episodes = start + metrics.len() as u64;
    if let Some(dir) = out_dir {
        save_params(&net, episodes, dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { net, episodes, metrics, selections, env_steps })
}

/// How actions are chosen during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalPolicy {
    /// The policy mean.
    Deterministic,
    /// Gaussian samples from the policy.
    Stochastic,
    /// Uniform random actions, ignoring the network.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_reward: f64,
    /// Mean of `L_end / L_0` over references with `L_0 > 0`.
    pub mean_loss_ratio: f64,
    pub per_reference: Vec<(f64, f64)>,
}

/// Runs one fixed-length episode per reference from a white canvas.
pub fn evaluate<T: Scalar>(
    net: &PolicyNet<T>,
    env: &Env,
    references: &[Canvas],
    steps: usize,
    policy: EvalPolicy,
    seed: u64,
) -> Result<EvalReport> {
    if references.is_empty() {
        return Err(Error::invalid("evaluation needs at least one reference"));
    }
    if steps == 0 {
        return Err(Error::invalid("evaluation needs at least one step"));
    }
    let per_reference: Vec<(f64, f64)> = references
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = derived_rng(seed, Domain::Eval, i as u64);
            let mut state = env.reset(r, None, None)?;
            let mut total = 0.0;
            for _ in 0..steps {
                let action = match policy {
                    EvalPolicy::Random => Action::clamped(std::array::from_fn(|_| rng.random())),
                    EvalPolicy::Deterministic => net.forward(&env.observe(&state))?.mean_action(),
                    EvalPolicy::Stochastic => {
                        crate::nn::sample_action(&net.forward(&env.observe(&state))?, &mut rng).action
                    }
                };
                total += env.step(&mut state, &action)?.reward;
            }
            let ratio = if state.initial_loss > 0.0 { state.current_loss() / state.initial_loss } else { f64::NAN };
            Ok((total, ratio))
        })
        .collect::<Result<_>>()?;
    let n = per_reference.len() as f64;
    let ratios: Vec<f64> = per_reference.iter().map(|p| p.1).filter(|r| !r.is_nan()).collect();
    Ok(EvalReport {
        mean_reward: per_reference.iter().map(|p| p.0).sum::<f64>() / n,
        mean_loss_ratio: if ratios.is_empty() { 0.0 } else { ratios.iter().sum::<f64>() / ratios.len() as f64 },
        per_reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::load_params;

    fn toy() -> Dataset {
        Dataset::new(vec![Canvas::new(32, 32, [1.0, 0.0, 0.0]).unwrap(), Canvas::new(32, 32, [0.0, 0.0, 1.0]).unwrap()])
            .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 2,
            episodes_per_iteration: 2,
            t_max: 3,
            epochs: 1,
            minibatch_size: 4,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn single_iteration_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { iterations: 1, ..tiny_cfg() };
        let out = train(&cfg, &mut toy(), None, Some(dir.path())).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.selections.len(), 1);
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        let ck = load_params(dir.path().join("final.ckpt")).unwrap();
        assert_eq!(ck.episodes, 1);
        assert_eq!(ck.net, out.net);
    }

    #[test]
    fn identical_runs_identical_metrics() {
        let a = train(&tiny_cfg(), &mut toy(), None, None).unwrap();
        let b = train(&tiny_cfg(), &mut toy(), None, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn resume_continues_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let first = train(&tiny_cfg(), &mut toy(), None, Some(dir.path())).unwrap();
        let ck = load_params(dir.path().join("final.ckpt")).unwrap();
        let second = train(&tiny_cfg(), &mut toy(), Some(ck), Some(dir.path())).unwrap();
        assert_eq!(first.metrics.last().unwrap().episode, 2);
        assert_eq!(second.metrics[0].episode, 3);
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let eps: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(eps, ["1", "2", "3", "4"]);
    }

    #[test]
    fn horizons_respect_cap() {
        let cfg = TrainConfig { thresh_start: -1.0, thresh_max: -1.0, ..tiny_cfg() };
        let out = train(&cfg, &mut toy(), None, None).unwrap();
        assert!(out.metrics.iter().all(|m| m.horizon == 1.0));
        let off = TrainConfig { curriculum: false, ..cfg };
        let out = train(&off, &mut toy(), None, None).unwrap();
        assert!(out.metrics.iter().all(|m| m.horizon == 3.0));
    }

    #[test]
    fn evaluation_reports() {
        let cfg = tiny_cfg();
        let env = build_env(&cfg).unwrap();
        let net = PolicyNet::<f32>::init(&cfg.net_spec().unwrap(), 0).unwrap();
        let ds = toy();
        let r = evaluate(&net, &env, ds.patches(), 4, EvalPolicy::Random, 1).unwrap();
        assert_eq!(r.per_reference.len(), 2);
        assert!(r.mean_loss_ratio > 0.0);
        assert!(evaluate(&net, &env, &[], 4, EvalPolicy::Random, 1).is_err());
    }
}
