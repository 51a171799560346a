//! Shared convolutional trunk with a Gaussian policy head and a value head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::layers::{cast, conv_output_len, relu_backward_inplace, relu_inplace, Conv2d, Dense, Scalar};
use crate::env::{Action, Observation, ACTION_DIM};
use crate::error::{Error, Result};

/// Bounds applied to the learned log standard deviation.
pub const LOG_STD_MIN: f64 = -4.605_170_185_988_091; // ln 0.01
pub const LOG_STD_MAX: f64 = 0.0;
pub const LOG_STD_INIT: f64 = -1.203_972_804_326_936; // ln 0.3

/// Samples per gradient-accumulation chunk; chunk partial sums are reduced in
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture description: observation size, conv stack and hidden width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub obs_height: usize,
    pub obs_width: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
}

impl NetSpec {
    /// 41x82x3 input; 64 8x8/4, 64 4x4/2, 64 3x3/1 convolutions; 512 hidden units.
    pub fn full() -> Self {
        Self {
            obs_height: 41,
            obs_width: 82,
            convs: vec![
                ConvSpec { filters: 64, kernel: 8, stride: 4 },
                ConvSpec { filters: 64, kernel: 4, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 1 },
            ],
            hidden: 512,
        }
    }

    /// Smaller network for 21x42x3 observations.
    pub fn desk() -> Self {
        Self {
            obs_height: 21,
            obs_width: 42,
            convs: vec![
                ConvSpec { filters: 16, kernel: 5, stride: 2 },
                ConvSpec { filters: 32, kernel: 3, stride: 2 },
                ConvSpec { filters: 32, kernel: 3, stride: 1 },
            ],
            hidden: 128,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::invalid(format!("unknown network preset `{other}` (expected full or desk)"))),
        }
    }

    /// Output `(height, width, channels)` of every conv layer.
    pub fn conv_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut h, mut w) = (self.obs_height, self.obs_width);
        let mut shapes = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            let oh = conv_output_len(h, c.kernel, c.stride);
            let ow = conv_output_len(w, c.kernel, c.stride);
            match (oh, ow) {
                (Some(oh), Some(ow)) => {
                    shapes.push((oh, ow, c.filters));
                    (h, w) = (oh, ow);
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "{}x{} observation too small: conv layer {} ({}x{} stride {}) does not fit its {h}x{w} input",
                        self.obs_height, self.obs_width, i, c.kernel, c.kernel, c.stride
                    )))
                }
            }
        }
        Ok(shapes)
    }

    pub fn flattened_len(&self) -> Result<usize> {
        let shapes = self.conv_shapes()?;
        Ok(shapes.last().map(|&(h, w, c)| h * w * c).unwrap_or(self.obs_height * self.obs_width * 3))
    }
}

/// Network evaluation for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    /// Gaussian mean, squashed into [0,1] by a logistic sigmoid.
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

impl PolicyOutput {
    pub fn std(&self) -> [f64; ACTION_DIM] {
        self.log_std.map(f64::exp)
    }

    /// Diagonal Gaussian log density of a raw (unclipped) sample.
    pub fn log_prob(&self, raw: &[f64; ACTION_DIM]) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        (0..ACTION_DIM)
            .map(|d| {
                let s = self.log_std[d].exp();
                let z = (raw[d] - self.mean[d]) / s;
                -0.5 * z * z - self.log_std[d] - half_log_2pi
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        self.log_std.iter().map(|l| l + c).sum()
    }

    /// The deterministic action: the mean.
    pub fn mean_action(&self) -> Action {
        Action::clamped(self.mean)
    }
}

/// A sampled action: the clipped action, the raw Gaussian draw, and the log
/// density of the raw draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    pub action: Action,
    pub raw: [f64; ACTION_DIM],
    pub log_prob: f64,
}

/// Draws `mean + std * N(0,1)` per dimension, clipped to [0,1].
pub fn sample_action<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> SampledAction {
    let std = out.std();
    let mut raw = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        let eps: f64 = rng.sample(StandardNormal);
        raw[d] = out.mean[d] + std[d] * eps;
    }
    SampledAction { action: Action::clamped(raw), raw, log_prob: out.log_prob(&raw) }
}

/// Gradient of a scalar objective with respect to one sample's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

/// A scalar function of a batch of network outputs.
pub trait Objective: Sync {
    /// The objective value and its gradient with respect to each output.
    fn evaluate(&self, outputs: &[PolicyOutput]) -> (f64, Vec<OutputGrad>);
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    cols: Vec<Vec<T>>,
    /// Post-ReLU output of each conv layer.
    acts: Vec<Vec<T>>,
    /// Post-ReLU hidden layer.
    hidden: Vec<T>,
    mean: [f64; ACTION_DIM],
    log_std_active: [bool; ACTION_DIM],
}

impl<T> ForwardCache<T> {
    /// Post-ReLU activations, conv layers first then the hidden layer; used to
    /// detect activation-pattern changes.
    pub fn relu_pattern(&self) -> Vec<bool>
    where
        T: Scalar,
    {
        self.acts.iter().chain(std::iter::once(&self.hidden)).flat_map(|a| a.iter().map(|v| *v > T::zero())).collect()
    }
}

/// Parameter-shaped gradient buffers, one per tensor in
/// [`PolicyNet::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &PolicyNet<T>) -> Self {
        Self { tensors: net.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.tensors.iter_mut().flatten().for_each(|v| *v = *v * factor);
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| {
                let x = v.to_f64().unwrap_or(0.0);
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    obs_height: usize,
    obs_width: usize,
    pub convs: Vec<Conv2d<T>>,
    pub fc: Dense<T>,
    pub policy: Dense<T>,
    pub log_std: Vec<T>,
    pub value: Dense<T>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> PolicyNet<T> {
    /// Seeded initialization: uniform weights scaled by fan-in, zero biases,
    /// `log_std = ln 0.3`.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        let shapes = spec.conv_shapes()?;
        if spec.hidden == 0 {
            return Err(Error::invalid("hidden layer must have at least one unit"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [T], bound: f64| {
            for v in w.iter_mut() {
                *v = cast(rng.random_range(-bound..bound));
            }
        };
        let mut convs = Vec::with_capacity(spec.convs.len());
        let mut in_c = 3;
        for c in &spec.convs {
            let mut conv = Conv2d::zeros(in_c, c.filters, c.kernel, c.kernel, c.stride);
            let bound = (6.0 / conv.patch_len() as f64).sqrt();
            fill(&mut conv.weight, bound);
            convs.push(conv);
            in_c = c.filters;
        }
        let flat = shapes.last().map(|&(h, w, c)| h * w * c).unwrap_or(spec.obs_height * spec.obs_width * 3);
        let mut fc = Dense::zeros(flat, spec.hidden);
        fill(&mut fc.weight, (6.0 / flat as f64).sqrt());
        let mut policy = Dense::zeros(spec.hidden, ACTION_DIM);
        fill(&mut policy.weight, 0.01 * (1.0 / spec.hidden as f64).sqrt());
        let mut value = Dense::zeros(spec.hidden, 1);
        fill(&mut value.weight, (1.0 / spec.hidden as f64).sqrt());
        Ok(Self {
            obs_height: spec.obs_height,
            obs_width: spec.obs_width,
            convs,
            fc,
            policy,
            log_std: vec![cast(LOG_STD_INIT); ACTION_DIM],
            value,
        })
    }

    /// Assembles a network from layers, checking that shapes chain together.
    pub fn from_parts(
        obs_height: usize,
        obs_width: usize,
        convs: Vec<Conv2d<T>>,
        fc: Dense<T>,
        policy: Dense<T>,
        log_std: Vec<T>,
        value: Dense<T>,
    ) -> Result<Self> {
        let net = Self { obs_height, obs_width, convs, fc, policy, log_std, value };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let (mut h, mut w, mut c) = (self.obs_height, self.obs_width, 3);
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.in_channels != c {
                return Err(Error::invalid(format!(
                    "conv layer {i} expects {} input channels, gets {c}",
                    conv.in_channels
                )));
            }
            let (oh, ow) = conv
                .output_shape(h, w)
                .ok_or_else(|| Error::invalid(format!("conv layer {i} does not fit its {h}x{w} input")))?;
            (h, w, c) = (oh, ow, conv.out_channels);
        }
        if self.fc.inputs != h * w * c {
            return Err(Error::invalid(format!(
                "hidden layer expects {} inputs, conv stack gives {}",
                self.fc.inputs,
                h * w * c
            )));
        }
        if self.policy.inputs != self.fc.outputs || self.policy.outputs != ACTION_DIM {
            return Err(Error::invalid("policy head shape does not match hidden layer / action size"));
        }
        if self.value.inputs != self.fc.outputs || self.value.outputs != 1 {
            return Err(Error::invalid("value head shape does not match hidden layer"));
        }
        if self.log_std.len() != ACTION_DIM {
            return Err(Error::invalid("log_std must have one entry per action dimension"));
        }
        Ok(())
    }

    pub fn observation_dims(&self) -> (usize, usize) {
        (self.obs_height, self.obs_width)
    }

    /// Output shape `(h, w, c)` of each conv layer.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.obs_height, self.obs_width);
        self.convs
            .iter()
            .map(|c| {
                (h, w) = c.output_shape(h, w).expect("validated");
                (h, w, c.out_channels)
            })
            .collect()
    }

    pub fn hidden_units(&self) -> usize {
        self.fc.outputs
    }

    /// Parameter tensors in canonical order: each conv (weight, bias), hidden
    /// (weight, bias), policy (weight, bias), log_std, value (weight, bias).
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend([
            &self.fc.weight[..],
            &self.fc.bias,
            &self.policy.weight,
            &self.policy.bias,
            &self.log_std,
            &self.value.weight,
            &self.value.bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.extend([
            &mut self.fc.weight[..],
            &mut self.fc.bias,
            &mut self.policy.weight,
            &mut self.policy.bias,
            &mut self.log_std,
            &mut self.value.weight,
            &mut self.value.bias,
        ]);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.convs.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        for n in
            ["hidden.weight", "hidden.bias", "policy.weight", "policy.bias", "log_std", "value.weight", "value.bias"]
        {
            out.push(n.to_string());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> PolicyNet<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel_h: c.kernel_h,
            kernel_w: c.kernel_w,
            stride: c.stride,
            weight: c.weight.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            bias: c.bias.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        };
        let dense = |d: &Dense<T>| Dense {
            inputs: d.inputs,
            outputs: d.outputs,
            weight: d.weight.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            bias: d.bias.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        };
        PolicyNet {
            obs_height: self.obs_height,
            obs_width: self.obs_width,
            convs: self.convs.iter().map(conv).collect(),
            fc: dense(&self.fc),
            policy: dense(&self.policy),
            log_std: self.log_std.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            value: dense(&self.value),
        }
    }

    fn check_observation(&self, obs: &Observation) -> Result<()> {
        if (obs.height(), obs.width()) != (self.obs_height, self.obs_width) {
            return Err(Error::invalid(format!(
                "observation is {}x{}x3 but the network expects {}x{}x3",
                obs.height(),
                obs.width(),
                self.obs_height,
                self.obs_width
            )));
        }
        Ok(())
    }

    fn input_chw(&self, obs: &Observation) -> Vec<T> {
        let (h, w) = (self.obs_height, self.obs_width);
        let mut out = vec![T::zero(); 3 * h * w];
        for (i, px) in obs.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * h * w + i] = cast(px[c]);
            }
        }
        out
    }

    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput> {
        self.forward_cached(obs).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, obs: &Observation) -> Result<(PolicyOutput, ForwardCache<T>)> {
        self.check_observation(obs)?;
        let (mut h, mut w) = (self.obs_height, self.obs_width);
        let mut x = self.input_chw(obs);
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let mut col = Vec::new();
            let mut out = Vec::new();
            conv.forward(&x, h, w, &mut col, &mut out);
            relu_inplace(&mut out);
            (h, w) = conv.output_shape(h, w).expect("validated");
            cols.push(col);
            x = out.clone();
            acts.push(out);
        }
        let mut hidden = Vec::new();
        self.fc.forward(&x, &mut hidden);
        relu_inplace(&mut hidden);
        let mut logits = Vec::new();
        self.policy.forward(&hidden, &mut logits);
        let mut v = Vec::new();
        self.value.forward(&hidden, &mut v);

        let mut mean = [0.0; ACTION_DIM];
        let mut log_std = [0.0; ACTION_DIM];
        let mut log_std_active = [false; ACTION_DIM];
        for d in 0..ACTION_DIM {
            mean[d] = sigmoid(logits[d].to_f64().unwrap());
            let raw = self.log_std[d].to_f64().unwrap();
            log_std[d] = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            log_std_active[d] = raw > LOG_STD_MIN && raw < LOG_STD_MAX;
        }
        let out = PolicyOutput { mean, log_std, value: v[0].to_f64().unwrap() };
        Ok((out, ForwardCache { cols, acts, hidden, mean, log_std_active }))
    }

    /// Accumulates the parameter gradient for one sample into `grads`.
    pub fn backward(&self, obs: &Observation, cache: &ForwardCache<T>, grad: &OutputGrad, grads: &mut Gradients<T>) {
        let n_conv = self.convs.len();
        let base = 2 * n_conv;
        let (g_fc_w, rest) = grads.tensors[base..].split_at_mut(1);
        let (g_fc_b, rest) = rest.split_at_mut(1);
        let (g_pol_w, rest) = rest.split_at_mut(1);
        let (g_pol_b, rest) = rest.split_at_mut(1);
        let (g_log_std, rest) = rest.split_at_mut(1);
        let (g_val_w, g_val_b) = rest.split_at_mut(1);

        for ((g, &active), &d) in g_log_std[0].iter_mut().zip(&cache.log_std_active).zip(&grad.log_std) {
            if active {
                *g = *g + cast(d);
            }
        }

        let hidden = &cache.hidden;
        let mut g_hidden = vec![T::zero(); hidden.len()];
        let dv = [cast::<T>(grad.value)];
        self.value.backward(hidden, &dv, &mut g_val_w[0], &mut g_val_b[0], Some(&mut g_hidden));
        let dz: Vec<T> = (0..ACTION_DIM)
            .map(|d| {
                let m = cache.mean[d];
                cast(grad.mean[d] * m * (1.0 - m))
            })
            .collect();
        let mut g_hidden_pol = vec![T::zero(); hidden.len()];
        self.policy.backward(hidden, &dz, &mut g_pol_w[0], &mut g_pol_b[0], Some(&mut g_hidden_pol));
        for (a, b) in g_hidden.iter_mut().zip(&g_hidden_pol) {
            *a = *a + *b;
        }
        relu_backward_inplace(hidden, &mut g_hidden);

        let input_owned;
        let fc_input: &[T] = match cache.acts.last() {
            Some(a) => a,
            None => {
                input_owned = self.input_chw(obs);
                &input_owned
            }
        };
        let mut g_x = vec![T::zero(); fc_input.len()];
        self.fc.backward(fc_input, &g_hidden, &mut g_fc_w[0], &mut g_fc_b[0], Some(&mut g_x));

        let mut dims = Vec::with_capacity(n_conv + 1);
        dims.push((self.obs_height, self.obs_width));
        for conv in &self.convs {
            let &(h, w) = dims.last().unwrap();
            dims.push(conv.output_shape(h, w).expect("validated"));
        }
        for i in (0..n_conv).rev() {
            relu_backward_inplace(&cache.acts[i], &mut g_x);
            let (h, w) = dims[i];
            let conv = &self.convs[i];
            let (gw, gb) = grads.tensors[2 * i..2 * i + 2].split_at_mut(1);
            if i > 0 {
                let mut g_in = vec![T::zero(); conv.in_channels * h * w];
                conv.backward(&cache.cols[i], h, w, &g_x, &mut gw[0], &mut gb[0], Some(&mut g_in));
                g_x = g_in;
            } else {
                conv.backward(&cache.cols[i], h, w, &g_x, &mut gw[0], &mut gb[0], None);
            }
        }
    }

    /// Evaluates `objective` on a batch and returns its value and exact
    /// gradient with respect to every parameter.
    pub fn objective_gradients(
        &self,
        observations: &[&Observation],
        objective: &dyn Objective,
    ) -> Result<(f64, Gradients<T>)> {
        let forwards: Vec<(PolicyOutput, ForwardCache<T>)> =
            observations.par_iter().map(|o| self.forward_cached(o)).collect::<Result<_>>()?;
        let outputs: Vec<PolicyOutput> = forwards.iter().map(|(o, _)| *o).collect();
        let (value, output_grads) = objective.evaluate(&outputs);
        if output_grads.len() != observations.len() {
            return Err(Error::invalid("objective returned the wrong number of output gradients"));
        }
        let partials: Vec<Gradients<T>> = (0..observations.len())
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = Gradients::zeros_like(self);
                for &i in chunk {
                    self.backward(observations[i], &forwards[i].1, &output_grads[i], &mut g);
                }
                g
            })
            .collect();
        let mut total = Gradients::zeros_like(self);
        for p in &partials {
            total.add_assign(p);
        }
        Ok((value, total))
    }
}
