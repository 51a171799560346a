//! Episode collection and generalized advantage estimation.

use rand::Rng;

use super::curriculum::curriculum_horizon;
use crate::env::{Action, Env, EnvState, Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{sample_action, PolicyNet, Scalar};

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    /// Clipped action that was executed.
    pub action: Action,
    /// Unclipped Gaussian draw the log-probability refers to.
    pub raw_action: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
    pub reference_index: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

/// Episode length limits: stop after the first reward above `thresh`, or at `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub cap: usize,
    pub thresh: f64,
}

impl Horizon {
    pub fn fixed(cap: usize) -> Self {
        Self { cap, thresh: f64::INFINITY }
    }
}

/// Runs the stochastic policy from `state` until the horizon rule ends the
/// episode. `state` is left at the final canvas.
pub fn collect_trajectory<T: Scalar, R: Rng + ?Sized>(
    env: &Env,
    state: &mut EnvState,
    net: &PolicyNet<T>,
    horizon: Horizon,
    reference_index: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if horizon.cap == 0 {
        return Err(Error::invalid("horizon cap must be at least 1"));
    }
    let initial_loss = state.initial_loss;
    let mut transitions: Vec<Transition> = Vec::with_capacity(horizon.cap);
    let mut observation = env.observe(state);
    let mut rewards = Vec::with_capacity(horizon.cap);
    loop {
        let out = net.forward(&observation)?;
        let sampled = sample_action(&out, rng);
        let step = env.step(state, &sampled.action)?;
        rewards.push(step.reward);
        let done = curriculum_horizon(&rewards, horizon.thresh, horizon.cap) == rewards.len();
        transitions.push(Transition {
            observation,
            action: sampled.action,
            raw_action: sampled.raw,
            log_prob: sampled.log_prob,
            reward: step.reward,
            value: out.value,
            done,
        });
        if done {
            break;
        }
        observation = step.observation;
    }
    Ok(Trajectory {
        episode_return: rewards.iter().sum(),
        transitions,
        reference_index,
        initial_loss,
        final_loss: state.current_loss(),
    })
}

/// Generalized advantage estimates and value targets for one episode; the
/// value after the last step is taken as 0.
pub fn compute_advantages(traj: &Trajectory, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = traj.transitions.iter().map(|t| t.value).collect();
    advantages_from(&rewards, &values, gamma, lambda)
}

pub(crate) fn advantages_from(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::Canvas;
    use crate::env::EnvConfig;
    use crate::losses::{LossKind, Metric};
    use crate::nn::NetSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct double sum over future TD errors.
    fn oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let v = |i: usize| if i < n { values[i] } else { 0.0 };
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                for k in 0..n - t {
                    let delta = rewards[t + k] + gamma * v(t + k + 1) - v(t + k);
                    sum += (gamma * lambda).powi(k as i32) * delta;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn gamma_zero_is_one_step_error() {
        let (adv, ret) = advantages_from(&[0.5, 0.1, -0.2], &[0.2, 0.3, 0.0], 0.0, 0.9);
        for (a, b) in adv.iter().zip([0.3, -0.2, -0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in ret.iter().zip([0.5, 0.1, -0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn undiscounted_is_reward_to_go() {
        let (adv, _) = advantages_from(&[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 1.0);
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (g, l) = (rng.random::<f64>(), rng.random::<f64>());
            let (adv, ret) = advantages_from(&r, &v, g, l);
            for (a, b) in adv.iter().zip(oracle(&r, &v, g, l)) {
                assert!((a - b).abs() < 1e-12);
            }
            for i in 0..5 {
                assert!((ret[i] - adv[i] - v[i]).abs() < 1e-15);
            }
        }
    }

    fn setup() -> (Env, Canvas, PolicyNet<f32>) {
        let env = Env::with_kind(EnvConfig::desk(), LossKind::new(Metric::L2)).unwrap();
        let reference = Canvas::from_fn(32, 32, |r, c| [r as f64 / 31.0, c as f64 / 31.0, 0.5]).unwrap();
        (env, reference, PolicyNet::init(&NetSpec::desk(), 3).unwrap())
    }

    #[test]
    fn cap_one_gives_single_step() {
        let (env, reference, net) = setup();
        let mut state = env.reset(&reference, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = collect_trajectory(&env, &mut state, &net, Horizon::fixed(1), 0, &mut rng).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.transitions[0].done);
    }

    #[test]
    fn seeded_collection_repeats_and_telescopes() {
        let (env, reference, net) = setup();
        let run = |seed| {
            let mut state = env.reset(&reference, None, None).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = collect_trajectory(&env, &mut state, &net, Horizon::fixed(12), 0, &mut rng).unwrap();
            (traj, state)
        };
        let (a, state) = run(9);
        let (b, _) = run(9);
        assert_eq!(a.rewards(), b.rewards());
        assert_eq!(a.len(), 12);
        let l0 = crate::losses::loss_l2(&Canvas::white(32, 32).unwrap(), &reference).unwrap();
        let lt = crate::losses::loss_l2(&state.canvas, &reference).unwrap();
        assert!((a.episode_return - (l0 - lt) / l0).abs() < 1e-9);
        assert!(a.transitions.iter().all(|t| t.log_prob.is_finite()));
    }

    #[test]
    fn threshold_stops_early() {
        let (env, reference, net) = setup();
        let mut state = env.reset(&reference, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = Horizon { cap: 10, thresh: -2.0 };
        let traj = collect_trajectory(&env, &mut state, &net, h, 0, &mut rng).unwrap();
        assert_eq!(traj.len(), 1);
    }
}
