//! Training hyperparameters and the `key = value` config file format.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys and malformed values are errors naming the key.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Metric};
use crate::nn::NetSpec;

/// How the difficulty sampler picks the next reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Lowest value-network estimate on the reset observation.
    Value,
    /// Lowest mean observed episode return; unvisited references first.
    MeanReward,
    /// Uniformly at random (baseline).
    Uniform,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Sampling::Value),
            "mean_reward" => Ok(Sampling::MeanReward),
            "uniform" => Ok(Sampling::Uniform),
            other => {
                Err(Error::invalid(format!("unknown sampling `{other}` (expected value, mean_reward or uniform)")))
            }
        }
    }
}

impl Sampling {
    fn as_str(self) -> &'static str {
        match self {
            Sampling::Value => "value",
            Sampling::MeanReward => "mean_reward",
            Sampling::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Training iterations; each selects one reference and performs one
    /// collect / advantage / update cycle.
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    /// Stop after the iteration in which this many environment steps have
    /// been collected; 0 means no limit.
    pub step_budget: u64,
    /// Candidates examined per selection round; 0 means the whole dataset.
    pub dataset_size: usize,
    pub curriculum: bool,
    pub thresh_start: f64,
    pub thresh_max: f64,
    /// Fraction of `iterations` over which the threshold ramps up.
    pub thresh_ramp: f64,
    pub t_max: usize,
    pub sampling: Sampling,
    /// Fraction of episodes that start from a canvas painted by the current policy.
    pub rollout_init_fraction: f64,
    pub rollout_init_steps: usize,
    pub checkpoint_every: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub network: String,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda: 0.9,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatch_size: 64,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            iterations: 1000,
            episodes_per_iteration: 8,
            step_budget: 0,
            dataset_size: 0,
            curriculum: true,
            thresh_start: 0.05,
            thresh_max: 1.0,
            thresh_ramp: 0.5,
            t_max: 16,
            sampling: Sampling::Value,
            rollout_init_fraction: 0.0,
            rollout_init_steps: 4,
            checkpoint_every: 0,
            loss: LossKind::new(Metric::L2),
            seed: 0,
            network: "full".to_string(),
            env: EnvConfig::default(),
        }
    }
}

/// Every key accepted in a config file, with a short description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("gamma", "discount factor in [0,1]"),
    ("lambda", "advantage smoothing in [0,1]"),
    ("clip_epsilon", "PPO ratio clip range (> 0)"),
    ("epochs", "optimization passes over each batch"),
    ("minibatch_size", "transitions per gradient step"),
    ("learning_rate", "Adam step size"),
    ("max_grad_norm", "global gradient-norm clip; 0 disables"),
    ("entropy_coef", "entropy bonus weight"),
    ("value_coef", "value loss weight"),
    ("iterations", "number of select/collect/update iterations (N)"),
    ("episodes_per_iteration", "episodes collected on the selected reference per iteration"),
    ("step_budget", "stop once this many environment steps are collected; 0 = no limit"),
    ("dataset_size", "references examined per selection round (n); 0 = all"),
    ("curriculum", "true/false: terminate episodes at the first reward above the threshold"),
    ("thresh_start", "reward threshold at the first iteration"),
    ("thresh_max", "reward threshold after the ramp"),
    ("thresh_ramp", "fraction of iterations over which the threshold rises"),
    ("t_max", "episode length cap"),
    ("sampling", "value | mean_reward | uniform"),
    ("rollout_init_fraction", "fraction of episodes starting from a policy-painted canvas"),
    ("rollout_init_steps", "policy steps used to paint that starting canvas"),
    ("checkpoint_every", "write ckpt_<iteration>.ckpt every this many iterations; 0 = only final"),
    ("loss", "l2 | lhalf | perceptual"),
    ("blur_sigma", "Gaussian blur of the observed reference, pixels"),
    ("seed", "global random seed"),
    ("network", "full | desk"),
    ("max_length", "stroke length at action value 1, pixels"),
    ("max_width", "stroke width at action value 1, pixels"),
    ("min_width", "narrower strokes do not paint, pixels"),
    ("blend", "color blending factor in [0,1]"),
    ("obs_height", "egocentric patch height (odd)"),
    ("obs_width", "egocentric patch width (odd)"),
    ("pad_value", "intensity outside the canvas"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config { key: key.to_string(), message: format!("cannot parse `{value}`") })
}

impl TrainConfig {
    /// Preset for 32x32 references, 21x42 observations and the small network.
    pub fn desk() -> Self {
        Self { network: "desk".to_string(), env: EnvConfig::desk(), learning_rate: 1e-3, t_max: 8, ..Self::default() }
    }

    pub fn net_spec(&self) -> Result<NetSpec> {
        let mut spec = NetSpec::preset(&self.network)?;
        let (h, w) = self.env.observation_dims();
        spec.obs_height = h;
        spec.obs_width = w;
        spec.conv_shapes()?;
        Ok(spec)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "clip_epsilon" => self.clip_epsilon = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "minibatch_size" => self.minibatch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "entropy_coef" => self.entropy_coef = parse(key, value)?,
            "value_coef" => self.value_coef = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "episodes_per_iteration" => self.episodes_per_iteration = parse(key, value)?,
            "step_budget" => self.step_budget = parse(key, value)?,
            "dataset_size" => self.dataset_size = parse(key, value)?,
            "curriculum" => self.curriculum = parse(key, value)?,
            "thresh_start" => self.thresh_start = parse(key, value)?,
            "thresh_max" => self.thresh_max = parse(key, value)?,
            "thresh_ramp" => self.thresh_ramp = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "sampling" => {
                self.sampling =
                    value.parse().map_err(|e: Error| Error::Config { key: key.to_string(), message: e.to_string() })?
            }
            "rollout_init_fraction" => self.rollout_init_fraction = parse(key, value)?,
            "rollout_init_steps" => self.rollout_init_steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "loss" => {
                self.loss.metric =
                    value.parse().map_err(|e: Error| Error::Config { key: key.to_string(), message: e.to_string() })?
            }
            "blur_sigma" => self.loss.blur_sigma = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "network" => {
                NetSpec::preset(value).map_err(|e| Error::Config { key: key.to_string(), message: e.to_string() })?;
                self.network = value.to_string();
            }
            "max_length" => self.env.max_length = parse(key, value)?,
            "max_width" => self.env.max_width = parse(key, value)?,
            "min_width" => self.env.min_width = parse(key, value)?,
            "blend" => self.env.blend = parse(key, value)?,
            "obs_height" => self.env.obs_height = parse(key, value)?,
            "obs_width" => self.env.obs_width = parse(key, value)?,
            "pad_value" => self.env.pad_value = parse(key, value)?,
            other => return Err(Error::Config { key: other.to_string(), message: "unknown key".to_string() }),
        }
        Ok(())
    }

    /// Parses config text on top of `base`.
    pub fn parse_with_base(text: &str, base: TrainConfig) -> Result<Self> {
        let mut cfg = base;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, TrainConfig::default())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.to_string(), message: message.to_string() });
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must lie in [0,1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if self.episodes_per_iteration == 0 {
            return bad("episodes_per_iteration", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size", "must be at least 1");
        }
        if self.t_max == 0 {
            return bad("t_max", "must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.thresh_ramp) {
            return bad("thresh_ramp", "must lie in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.rollout_init_fraction) {
            return bad("rollout_init_fraction", "must lie in [0,1]");
        }
        if !(self.loss.blur_sigma >= 0.0) {
            return bad("blur_sigma", "must be >= 0");
        }
        self.env.validate().map_err(|e| Error::Config { key: "env".to_string(), message: e.to_string() })?;
        self.net_spec().map_err(|e| Error::Config { key: "network".to_string(), message: e.to_string() })?;
        Ok(())
    }

    /// Serializes every key; parsing the result reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let values: Vec<(&str, String)> = vec![
            ("gamma", self.gamma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("clip_epsilon", self.clip_epsilon.to_string()),
            ("epochs", self.epochs.to_string()),
            ("minibatch_size", self.minibatch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("iterations", self.iterations.to_string()),
            ("episodes_per_iteration", self.episodes_per_iteration.to_string()),
            ("step_budget", self.step_budget.to_string()),
            ("dataset_size", self.dataset_size.to_string()),
            ("curriculum", self.curriculum.to_string()),
            ("thresh_start", self.thresh_start.to_string()),
            ("thresh_max", self.thresh_max.to_string()),
            ("thresh_ramp", self.thresh_ramp.to_string()),
            ("t_max", self.t_max.to_string()),
            ("sampling", self.sampling.as_str().to_string()),
            ("rollout_init_fraction", self.rollout_init_fraction.to_string()),
            ("rollout_init_steps", self.rollout_init_steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("loss", self.loss.metric.to_string()),
            ("blur_sigma", self.loss.blur_sigma.to_string()),
            ("seed", self.seed.to_string()),
            ("network", self.network.clone()),
            ("max_length", self.env.max_length.to_string()),
            ("max_width", self.env.max_width.to_string()),
            ("min_width", self.env.min_width.to_string()),
            ("blend", self.env.blend.to_string()),
            ("obs_height", self.env.obs_height.to_string()),
            ("obs_width", self.env.obs_width.to_string()),
            ("pad_value", self.env.pad_value.to_string()),
        ];
        for ((key, value), (doc_key, doc)) in values.iter().zip(CONFIG_KEYS) {
            debug_assert_eq!(key, doc_key);
            let _ = writeln!(s, "# {doc}\n{key} = {value}");
        }
        s
    }
}
