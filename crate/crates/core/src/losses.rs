//! Image distances used as painting rewards, the reference blur, and the
//! per-step reward normalization.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canvas::Canvas;
use crate::error::{Error, Result};
use crate::nn::layers::{relu_inplace, Conv2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    L2,
    /// Mean of `|difference|^(1/2)`.
    LHalf,
    Perceptual,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "lhalf" | "l1/2" | "l_half" | "half" => Ok(Metric::LHalf),
            "perceptual" | "percept" => Ok(Metric::Perceptual),
            other => Err(Error::invalid(format!("unknown loss `{other}` (expected l2, lhalf or perceptual)"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::LHalf => "lhalf",
            Metric::Perceptual => "perceptual",
        })
    }
}

/// Which distance to use, and how much to blur the reference the agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossKind {
    pub metric: Metric,
    /// Gaussian sigma in pixels applied to the observed reference; 0 disables.
    pub blur_sigma: f64,
}

impl LossKind {
    pub fn new(metric: Metric) -> Self {
        Self { metric, blur_sigma: 0.0 }
    }

    pub fn with_blur(mut self, sigma: f64) -> Self {
        self.blur_sigma = sigma;
        self
    }
}

fn check_shapes(a: &Canvas, b: &Canvas) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!("image shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

#[inline]
fn l2_term(d: f64) -> f64 {
    d * d
}

#[inline]
fn lhalf_term(d: f64) -> f64 {
    d.abs().sqrt()
}

/// Sum of `term(a - b)` over one image row.
#[inline]
pub(crate) fn row_sum(a: &Canvas, b: &Canvas, row: usize, term: fn(f64) -> f64) -> f64 {
    let n = a.width() * 3;
    let (ra, rb) = (&a.data()[row * n..(row + 1) * n], &b.data()[row * n..(row + 1) * n]);
    ra.iter().zip(rb).map(|(x, y)| term(x - y)).sum()
}

/// Rows are summed first, then the row sums, so incremental updates that
/// recompute whole rows reproduce this value exactly.
fn pixelwise_mean(a: &Canvas, b: &Canvas, term: fn(f64) -> f64) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = (0..a.height()).map(|r| row_sum(a, b, r, term)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Mean squared difference over all `h * w * c` entries.
pub fn loss_l2(image: &Canvas, reference: &Canvas) -> Result<f64> {
    pixelwise_mean(image, reference, l2_term)
}

/// Mean square-rooted absolute difference over all entries.
pub fn loss_lhalf(image: &Canvas, reference: &Canvas) -> Result<f64> {
    pixelwise_mean(image, reference, lhalf_term)
}

/// Shape of one feature-stack layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

/// A fixed convolution + ReLU stack whose activations define the perceptual
/// distance. Weights are drawn from a seeded generator, so two stacks built
/// with the same seed and layer specs are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: Vec<Conv2d<f64>>,
    seed: u64,
}

impl FeatureStack {
    pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

    pub fn default_layers() -> Vec<FeatureLayerSpec> {
        vec![FeatureLayerSpec { kernel: 3, stride: 2, channels: 16 }; 3]
    }

    pub fn seeded(seed: u64, specs: &[FeatureLayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::invalid("feature stack needs at least one layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_channels = 3;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.kernel == 0 || spec.stride == 0 || spec.channels == 0 {
                return Err(Error::invalid(format!("degenerate feature layer {spec:?}")));
            }
            let mut conv = Conv2d::zeros(in_channels, spec.channels, spec.kernel, spec.kernel, spec.stride);
            let bound = (6.0 / conv.patch_len() as f64).sqrt();
            for w in conv.weight.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            layers.push(conv);
            in_channels = spec.channels;
        }
        Ok(Self { layers, seed })
    }

    /// Builds a stack from explicit layers. The first layer must take 3 channels
    /// and consecutive channel counts must agree.
    pub fn from_layers(layers: Vec<Conv2d<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature stack needs at least one layer"));
        }
        let mut expected = 3;
        for l in &layers {
            if l.in_channels != expected {
                return Err(Error::invalid(format!(
                    "feature layer expects {} input channels, previous layer gives {expected}",
                    l.in_channels
                )));
            }
            expected = l.out_channels;
        }
        Ok(Self { layers, seed: 0 })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Conv2d<f64>] {
        &self.layers
    }

    /// `(h_n, w_n, c_n)` for every layer, or an error when the input is too small.
    pub fn output_shapes(&self, height: usize, width: usize) -> Result<Vec<(usize, usize, usize)>> {
        let (mut h, mut w) = (height, width);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (oh, ow) = l.output_shape(h, w).ok_or_else(|| {
                Error::invalid(format!(
                    "{height}x{width} input too small for feature layer {i} ({}x{} kernel on {h}x{w})",
                    l.kernel_h, l.kernel_w
                ))
            })?;
            shapes.push((oh, ow, l.out_channels));
            (h, w) = (oh, ow);
        }
        Ok(shapes)
    }

    /// Post-ReLU activations of every layer, channel-major.
    pub fn features(&self, image: &Canvas) -> Result<Vec<Vec<f64>>> {
        self.output_shapes(image.height(), image.width())?;
        let (mut h, mut w) = image.dims();
        let mut x = to_chw(image);
        let mut col = Vec::new();
        let mut out = Vec::new();
        let mut maps = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            l.forward(&x, h, w, &mut col, &mut out);
            relu_inplace(&mut out);
            (h, w) = l.output_shape(h, w).expect("checked above");
            x = out.clone();
            maps.push(out.clone());
        }
        Ok(maps)
    }
}

impl Default for FeatureStack {
    fn default() -> Self {
        Self::seeded(Self::DEFAULT_SEED, &Self::default_layers()).expect("default layers are valid")
    }
}

pub(crate) fn to_chw(image: &Canvas) -> Vec<f64> {
    let (h, w) = image.dims();
    let mut out = vec![0.0; 3 * h * w];
    for (i, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = px[c];
        }
    }
    out
}

/// Sum over layers of the squared feature distance normalized by the layer's
/// `h_n * w_n * c_n`.
pub fn loss_perceptual(image: &Canvas, reference: &Canvas, stack: &FeatureStack) -> Result<f64> {
    check_shapes(image, reference)?;
    let a = stack.features(image)?;
    let b = stack.features(reference)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(fa, fb)| {
            let sq: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum();
            sq / fa.len() as f64
        })
        .sum())
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid for
/// any offset.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`, `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with reflect padding. `sigma = 0` returns the input.
pub fn gaussian_blur(image: &Canvas, sigma: f64) -> Result<Canvas> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = image.dims();
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 3];
            for (t, &k) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + t as isize - radius, w);
                let i = (r * w + cc) * 3;
                for ch in 0..3 {
                    acc[ch] += k * src[i + ch];
                }
            }
            tmp[(r * w + c) * 3..(r * w + c) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 3];
            for (t, &k) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + t as isize - radius, h);
                let i = (rr * w + c) * 3;
                for ch in 0..3 {
                    acc[ch] += k * tmp[i + ch];
                }
            }
            for ch in 0..3 {
                out[(r * w + c) * 3 + ch] = acc[ch].clamp(0.0, 1.0);
            }
        }
    }
    Canvas::from_data(h, w, out)
}

/// `(L_prev - L_cur) / L_0`.
pub fn normalized_reward(prev_loss: f64, cur_loss: f64, initial_loss: f64) -> Result<f64> {
    if !(initial_loss > 0.0) {
        return Err(Error::invalid(format!("initial loss must be positive to normalize rewards, got {initial_loss}")));
    }
    Ok((prev_loss - cur_loss) / initial_loss)
}

/// A ready-to-evaluate loss: the metric plus, for the perceptual distance,
/// its feature stack.
#[derive(Debug, Clone)]
pub struct Loss {
    kind: LossKind,
    features: Option<FeatureStack>,
}

impl Loss {
    pub fn new(kind: LossKind) -> Self {
        let features = (kind.metric == Metric::Perceptual).then(FeatureStack::default);
        Self { kind, features }
    }

    pub fn with_features(kind: LossKind, stack: FeatureStack) -> Self {
        Self { kind, features: Some(stack) }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn eval(&self, image: &Canvas, reference: &Canvas) -> Result<f64> {
        match self.kind.metric {
            Metric::L2 => loss_l2(image, reference),
            Metric::LHalf => loss_lhalf(image, reference),
            Metric::Perceptual => {
                loss_perceptual(image, reference, self.features.as_ref().expect("perceptual loss has a feature stack"))
            }
        }
    }

    /// Per-entry term for losses that are a mean over pixel entries; `None`
    /// for the perceptual loss.
    pub(crate) fn pixel_term(&self) -> Option<fn(f64) -> f64> {
        match self.kind.metric {
            Metric::L2 => Some(l2_term),
            Metric::LHalf => Some(lhalf_term),
            Metric::Perceptual => None,
        }
    }
}
