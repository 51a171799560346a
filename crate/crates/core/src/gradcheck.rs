//! Central finite-difference verification of the analytic gradients.
//!
//! Every layer type is checked on a seeded random instance with a nonlinear
//! scalar readout, then the whole network under the clipped PPO objective.
//! Coordinates whose perturbation flips a ReLU are skipped and counted.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::layers::{relu_backward_inplace, relu_inplace, Conv2d, Dense};
use crate::nn::{sample_action, NetSpec, Objective, PolicyNet};
use crate::trainer::{PpoObjective, PpoSample};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Spatial sizes of the random instances; for the network check, the
    /// observation patch side (the input is `size x 2*size`).
    pub sizes: Vec<usize>,
    /// Coordinates sampled per tensor (all of them if the tensor is smaller).
    pub per_tensor: usize,
    /// Perturbs one analytic gradient entry, to prove the check can fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seed: 0, sizes: vec![17, 21], per_tensor: 16, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < TOLERANCE && self.entries.iter().all(|e| e.checked > 0)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<40} checked {:>4}  skipped {:>3}  max rel err {:.3e}",
                e.name, e.checked, e.skipped, e.max_rel_error
            )?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error(),
            TOLERANCE,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn coords(rng: &mut ChaCha8Rng, len: usize, per_tensor: usize) -> Vec<usize> {
    if len <= per_tensor {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, per_tensor).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares `analytic[i]` against central differences of `loss` at the
/// sampled coordinates of `params`. `loss` returns the value and an activation
/// pattern; a coordinate is skipped if the pattern differs between the two
/// probes.
fn check_vector(
    name: String,
    params: &mut [f64],
    analytic: &[f64],
    picks: &[usize],
    corrupt: &mut bool,
    mut loss: impl FnMut(&[f64]) -> (f64, Vec<bool>),
) -> CheckEntry {
    let mut entry = CheckEntry { name, checked: 0, skipped: 0, max_rel_error: 0.0 };
    for &i in picks {
        let orig = params[i];
        params[i] = orig + STEP;
        let (plus, pat_plus) = loss(params);
        params[i] = orig - STEP;
        let (minus, pat_minus) = loss(params);
        params[i] = orig;
        if pat_plus != pat_minus {
            entry.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        let mut a = analytic[i];
        if *corrupt {
            a = a * 1.01 + 1e-3;
            *corrupt = false;
        }
        entry.checked += 1;
        entry.max_rel_error = entry.max_rel_error.max(relative_error(a, numeric));
    }
    entry
}

/// Readout `sum(r * y) + 0.5 * sum(y^2)` and its gradient `r + y`.
fn readout(y: &[f64], r: &[f64]) -> (f64, Vec<f64>) {
    let v = y.iter().zip(r).map(|(a, b)| a * b + 0.5 * a * a).sum();
    (v, y.iter().zip(r).map(|(a, b)| b + a).collect())
}

fn check_conv(size: usize, rng: &mut ChaCha8Rng, cfg: &GradcheckConfig, corrupt: &mut bool) -> Vec<CheckEntry> {
    let (cin, cout, k, stride) = (3, 4, 3, 2);
    let mut conv = Conv2d::<f64>::zeros(cin, cout, k, k, stride);
    conv.weight = uniform(rng, conv.weight.len(), 0.5);
    conv.bias = uniform(rng, cout, 0.5);
    let mut x = uniform(rng, cin * size * size, 1.0);
    let (oh, ow) = conv.output_shape(size, size).expect("size >= kernel");
    let r = uniform(rng, cout * oh * ow, 1.0);

    let (mut col, mut out) = (Vec::new(), Vec::new());
    conv.forward(&x, size, size, &mut col, &mut out);
    let (_, g_out) = readout(&out, &r);
    let mut gw = vec![0.0; conv.weight.len()];
    let mut gb = vec![0.0; cout];
    let mut gx = vec![0.0; x.len()];
    conv.backward(&col, size, size, &g_out, &mut gw, &mut gb, Some(&mut gx));

    let eval = |conv: &Conv2d<f64>, x: &[f64]| {
        let (mut col, mut out) = (Vec::new(), Vec::new());
        conv.forward(x, size, size, &mut col, &mut out);
        (readout(&out, &r).0, Vec::new())
    };
    let tag = format!("conv {cin}->{cout} k{k} s{stride} @{size}");
    let pw = coords(rng, gw.len(), cfg.per_tensor);
    let pb = coords(rng, gb.len(), cfg.per_tensor);
    let px = coords(rng, gx.len(), cfg.per_tensor);
    let mut w = conv.weight.clone();
    let e_w = check_vector(format!("{tag} weight"), &mut w, &gw, &pw, corrupt, |w| {
        let c = Conv2d { weight: w.to_vec(), ..conv.clone() };
        eval(&c, &x)
    });
    let mut b = conv.bias.clone();
    let e_b = check_vector(format!("{tag} bias"), &mut b, &gb, &pb, corrupt, |b| {
        let c = Conv2d { bias: b.to_vec(), ..conv.clone() };
        eval(&c, &x)
    });
    let e_x = check_vector(format!("{tag} input"), &mut x, &gx, &px, corrupt, |xs| eval(&conv, xs));
    vec![e_w, e_b, e_x]
}

fn check_dense(size: usize, rng: &mut ChaCha8Rng, cfg: &GradcheckConfig, corrupt: &mut bool) -> Vec<CheckEntry> {
    let (nin, nout) = (size, 7);
    let mut d = Dense::<f64>::zeros(nin, nout);
    d.weight = uniform(rng, nin * nout, 0.5);
    d.bias = uniform(rng, nout, 0.5);
    let x = uniform(rng, nin, 1.0);
    let r = uniform(rng, nout, 1.0);
    let mut y = Vec::new();
    d.forward(&x, &mut y);
    let (_, gy) = readout(&y, &r);
    let mut gw = vec![0.0; d.weight.len()];
    let mut gb = vec![0.0; nout];
    let mut gx = vec![0.0; nin];
    d.backward(&x, &gy, &mut gw, &mut gb, Some(&mut gx));
    let eval = |d: &Dense<f64>, x: &[f64]| {
        let mut y = Vec::new();
        d.forward(x, &mut y);
        (readout(&y, &r).0, Vec::new())
    };
    let tag = format!("dense {nin}->{nout}");
    let (pw, pb, px) =
        (coords(rng, gw.len(), cfg.per_tensor), coords(rng, nout, cfg.per_tensor), coords(rng, nin, cfg.per_tensor));
    vec![
        check_vector(format!("{tag} weight"), &mut d.weight.clone(), &gw, &pw, corrupt, |w| {
            eval(&Dense { weight: w.to_vec(), ..d.clone() }, &x)
        }),
        check_vector(format!("{tag} bias"), &mut d.bias.clone(), &gb, &pb, corrupt, |b| {
            eval(&Dense { bias: b.to_vec(), ..d.clone() }, &x)
        }),
        check_vector(format!("{tag} input"), &mut x.clone(), &gx, &px, corrupt, |xs| eval(&d, xs)),
    ]
}

fn check_relu(size: usize, rng: &mut ChaCha8Rng, cfg: &GradcheckConfig, corrupt: &mut bool) -> CheckEntry {
    let x = uniform(rng, size * size, 1.0);
    let r = uniform(rng, x.len(), 1.0);
    let eval = |x: &[f64]| {
        let mut y = x.to_vec();
        relu_inplace(&mut y);
        let pattern = y.iter().map(|v| *v > 0.0).collect();
        (readout(&y, &r).0, pattern)
    };
    let mut y = x.clone();
    relu_inplace(&mut y);
    let (_, mut g) = readout(&y, &r);
    relu_backward_inplace(&y, &mut g);
    let picks = coords(rng, x.len(), cfg.per_tensor);
    check_vector(format!("relu @{size}x{size}"), &mut x.clone(), &g, &picks, corrupt, eval)
}

/// Random observations and a PPO objective whose old log-probabilities come
/// from a slightly different parameter vector, so ratios differ from 1.
fn ppo_instance(net: &PolicyNet<f64>, size: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Observation>, PpoObjective)> {
    let mut old = net.clone();
    for t in old.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-2e-3..2e-3);
        }
    }
    let mut observations = Vec::new();
    let mut samples = Vec::new();
    for _ in 0..4 {
        let data = (0..size * 2 * size * 3).map(|_| rng.random::<f64>()).collect();
        let obs = Observation::from_data(size, 2 * size, data)?;
        let out = old.forward(&obs)?;
        let s = sample_action(&out, rng);
        samples.push(PpoSample {
            raw_action: s.raw,
            old_log_prob: s.log_prob,
            advantage: rng.random_range(-1.5..1.5),
            value_target: rng.random_range(-1.0..1.0),
        });
        observations.push(obs);
    }
    Ok((observations, PpoObjective::new(samples, 0.2, 0.5, 1e-2)))
}

fn check_network(
    size: usize,
    rng: &mut ChaCha8Rng,
    cfg: &GradcheckConfig,
    corrupt: &mut bool,
) -> Result<Vec<CheckEntry>> {
    let spec = NetSpec { obs_height: size, obs_width: 2 * size, ..NetSpec::desk() };
    spec.conv_shapes()
        .map_err(|_| Error::invalid(format!("size {size} is too small for the network check (need at least 17)")))?;
    let mut net = PolicyNet::<f64>::init(&spec, rng.random())?;
    // larger heads than the default init so every path carries signal
    for v in net.policy.weight.iter_mut() {
        *v *= 30.0;
    }
    let (observations, objective) = ppo_instance(&net, size, rng)?;
    let refs: Vec<&Observation> = observations.iter().collect();
    let (_, grads) = net.objective_gradients(&refs, &objective)?;
    let names = net.tensor_names();
    let mut entries = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let len = grads.tensors[t].len();
        let picks = coords(rng, len, cfg.per_tensor);
        let mut params = net.tensors()[t].to_vec();
        let mut probe = net.clone();
        let entry =
            check_vector(format!("network@{size} {name}"), &mut params, &grads.tensors[t], &picks, corrupt, |p| {
                probe.tensors_mut()[t].copy_from_slice(p);
                let mut outputs = Vec::with_capacity(refs.len());
                let mut pattern = Vec::new();
                for o in &refs {
                    let (out, cache) = probe.forward_cached(o).expect("shape checked");
                    pattern.extend(cache.relu_pattern());
                    outputs.push(out);
                }
                (objective.evaluate(&outputs).0, pattern)
            });
        entries.push(entry);
    }
    Ok(entries)
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.sizes.is_empty() {
        return Err(Error::invalid("at least one size is required"));
    }
    if cfg.per_tensor == 0 {
        return Err(Error::invalid("per_tensor must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corrupt = cfg.corrupt;
    let mut entries = Vec::new();
    for &size in &cfg.sizes {
        if size < 3 {
            return Err(Error::invalid(format!("size {size} is smaller than the 3x3 kernel")));
        }
        entries.extend(check_conv(size, &mut rng, cfg, &mut corrupt));
        entries.extend(check_dense(size, &mut rng, cfg, &mut corrupt));
        entries.push(check_relu(size, &mut rng, cfg, &mut corrupt));
        entries.extend(check_network(size, &mut rng, cfg, &mut corrupt)?);
    }
    Ok(GradcheckReport { entries })
}
