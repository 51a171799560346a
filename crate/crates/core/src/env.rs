//! The simulated painting environment: action decoding, pen motion, capsule
//! stroke rasterization, egocentric observations and the reset/step contract.

use std::f64::consts::TAU;

use crate::canvas::{Canvas, Rgb};
use crate::error::{Error, Result};
use crate::losses::{gaussian_blur, normalized_reward, row_sum, Loss, LossKind};

pub const ACTION_DIM: usize = 6;

/// Raw policy output `[angle, length, width, r, g, b]`, every entry in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action([f64; ACTION_DIM]);

impl Action {
    pub fn new(components: [f64; ACTION_DIM]) -> Result<Self> {
        if let Some(v) = components.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("action component {v} outside [0,1]")));
        }
        Ok(Self(components))
    }

    /// Clamps each component into [0,1]; NaN maps to 0.
    pub fn clamped(components: [f64; ACTION_DIM]) -> Self {
        Self(components.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn components(&self) -> [f64; ACTION_DIM] {
        self.0
    }
}

/// A decoded action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeParams {
    /// Radians in `[0, 2pi)`.
    pub angle: f64,
    pub length: f64,
    pub width: f64,
    pub color: Rgb,
}

/// Pen position in continuous pixel coordinates; `x` is the column, `y` the
/// row (growing downward). Pixel `(row, col)` has its center at `(x=col, y=row)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenState {
    pub x: f64,
    pub y: f64,
}

impl PenState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// The center pixel of a `height x width` canvas.
    pub fn center_of(height: usize, width: usize) -> Self {
        Self::new((width / 2) as f64, (height / 2) as f64)
    }

    pub fn clamped(self, height: usize, width: usize) -> Self {
        Self::new(self.x.clamp(0.0, (width - 1) as f64), self.y.clamp(0.0, (height - 1) as f64))
    }

    fn pixel(self) -> (isize, isize) {
        (self.y.round() as isize, self.x.round() as isize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub max_length: f64,
    pub max_width: f64,
    /// Strokes narrower than this move the pen without painting.
    pub min_width: f64,
    /// Fraction of the stroke color mixed into covered pixels.
    pub blend: f64,
    pub obs_height: usize,
    /// Width of one patch; the observation is twice as wide.
    pub obs_width: usize,
    pub pad_value: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_length: 16.0,
            max_width: 8.0,
            min_width: 0.5,
            blend: 1.0,
            obs_height: 41,
            obs_width: 41,
            pad_value: 1.0,
        }
    }
}

impl EnvConfig {
    /// Small environment used for quick training runs on 32x32 references.
    pub fn desk() -> Self {
        Self { max_length: 16.0, max_width: 20.0, obs_height: 21, obs_width: 21, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_length > 0.0) || !self.max_length.is_finite() {
            return Err(Error::invalid(format!("max_length must be positive, got {}", self.max_length)));
        }
        if !(self.max_width > 0.0) || !self.max_width.is_finite() {
            return Err(Error::invalid(format!("max_width must be positive, got {}", self.max_width)));
        }
        if !(0.0..self.max_width).contains(&self.min_width) {
            return Err(Error::invalid(format!("min_width must lie in [0, max_width), got {}", self.min_width)));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::invalid(format!("blend must lie in [0,1], got {}", self.blend)));
        }
        if self.obs_height.is_multiple_of(2) || self.obs_width.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "observation patch must have odd dimensions, got {}x{}",
                self.obs_height, self.obs_width
            )));
        }
        if !(0.0..=1.0).contains(&self.pad_value) {
            return Err(Error::invalid("pad_value must lie in [0,1]"));
        }
        Ok(())
    }

    /// `(height, width)` of the concatenated observation.
    pub fn observation_dims(&self) -> (usize, usize) {
        (self.obs_height, 2 * self.obs_width)
    }
}

pub fn decode_action(action: &Action, cfg: &EnvConfig) -> StrokeParams {
    let [a, l, w, r, g, b] = action.0;
    StrokeParams {
        angle: (TAU * a).rem_euclid(TAU),
        length: l * cfg.max_length,
        width: w * cfg.max_width,
        color: [r, g, b],
    }
}

/// Moves the pen by `length` along `angle`: `x += l sin(angle)`, `y += l cos(angle)`.
/// No clamping.
pub fn advance_pen(pen: PenState, angle: f64, length: f64) -> PenState {
    PenState::new(pen.x + length * angle.sin(), pen.y + length * angle.cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Brush {
    pub width: f64,
    pub color: Rgb,
    pub blend: f64,
    pub min_width: f64,
}

/// Inclusive pixel rectangle `(row0, row1, col0, col1)`.
pub type PixelRect = (usize, usize, usize, usize);

/// Pixel rectangle that may be touched by a capsule, or `None` if it misses the canvas.
pub fn capsule_bounds(height: usize, width: usize, from: PenState, to: PenState, radius: f64) -> Option<PixelRect> {
    let x0 = (from.x.min(to.x) - radius).ceil().max(0.0);
    let x1 = (from.x.max(to.x) + radius).floor().min((width - 1) as f64);
    let y0 = (from.y.min(to.y) - radius).ceil().max(0.0);
    let y1 = (from.y.max(to.y) + radius).floor().min((height - 1) as f64);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((y0 as usize, y1 as usize, x0 as usize, x1 as usize))
}

#[inline]
fn dist2_to_segment(px: f64, py: f64, from: PenState, dx: f64, dy: f64, len2: f64) -> f64 {
    let (rx, ry) = (px - from.x, py - from.y);
    let t = if len2 > 0.0 { ((rx * dx + ry * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (rx - t * dx, ry - t * dy);
    ex * ex + ey * ey
}

/// Paints the capsule of diameter `brush.width` around the segment `from -> to`.
/// Every pixel whose center lies within `width / 2` of the segment becomes
/// `blend * color + (1 - blend) * old`. Returns the pixel rectangle that may
/// have changed, or `None` if nothing was painted.
pub fn render_segment(canvas: &mut Canvas, from: PenState, to: PenState, brush: &Brush) -> Option<PixelRect> {
    if !(brush.width >= brush.min_width) || brush.width <= 0.0 {
        return None;
    }
    let radius = brush.width / 2.0;
    let (h, w) = canvas.dims();
    let rect = capsule_bounds(h, w, from, to, radius)?;
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    let beta = brush.blend;
    let paint = brush.color.map(|c| beta * c);
    let keep = 1.0 - beta;
    let data = canvas.data_mut();
    for row in rect.0..=rect.1 {
        for col in rect.2..=rect.3 {
            if dist2_to_segment(col as f64, row as f64, from, dx, dy, len2) <= r2 {
                let i = (row * w + col) * 3;
                for k in 0..3 {
                    data[i + k] = (paint[k] + keep * data[i + k]).clamp(0.0, 1.0);
                }
            }
        }
    }
    Some(rect)
}

/// Canvas and reference patches centered on the pen, side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    height: usize,
    width: usize,
    /// Row-major, channels interleaved.
    data: Vec<f64>,
}

impl Observation {
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::invalid("observation data length does not match its shape"));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn copy_patch(src: &Canvas, center: (isize, isize), cfg: &EnvConfig, out: &mut [f64], col_offset: usize) {
    let (ph, pw) = (cfg.obs_height as isize, cfg.obs_width as isize);
    let out_w = 2 * cfg.obs_width;
    let (h, w) = (src.height() as isize, src.width() as isize);
    for pr in 0..ph {
        let sr = center.0 + pr - ph / 2;
        for pc in 0..pw {
            let sc = center.1 + pc - pw / 2;
            let px = if (0..h).contains(&sr) && (0..w).contains(&sc) {
                src.get(sr as usize, sc as usize)
            } else {
                [cfg.pad_value; 3]
            };
            let i = (pr as usize * out_w + col_offset + pc as usize) * 3;
            out[i..i + 3].copy_from_slice(&px);
        }
    }
}

/// Extracts the `obs_height x 2*obs_width` egocentric observation around
/// `round(pen)`: canvas on the left, reference on the right, `pad_value`
/// outside the image.
pub fn extract_observation(canvas: &Canvas, reference: &Canvas, pen: PenState, cfg: &EnvConfig) -> Observation {
    let (height, width) = cfg.observation_dims();
    let mut data = vec![0.0; height * width * 3];
    let center = pen.pixel();
    copy_patch(canvas, center, cfg, &mut data, 0);
    copy_patch(reference, center, cfg, &mut data, cfg.obs_width);
    Observation { height, width, data }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub canvas: Canvas,
    reference: Canvas,
    /// Blurred copy of the reference shown to the agent, when blur is enabled.
    observed_reference: Option<Canvas>,
    pub pen: PenState,
    pub step_count: usize,
    pub initial_loss: f64,
    pub prev_loss: f64,
    /// Per-row sums of the loss terms, for pixelwise losses.
    row_sums: Option<Vec<f64>>,
}

impl EnvState {
    pub fn reference(&self) -> &Canvas {
        &self.reference
    }

    /// The reference as the agent sees it (blurred if configured).
    pub fn observed_reference(&self) -> &Canvas {
        self.observed_reference.as_ref().unwrap_or(&self.reference)
    }

    pub fn current_loss(&self) -> f64 {
        self.prev_loss
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Step {
    pub reward: f64,
    pub stroke: StrokeParams,
    /// Pen position before the stroke.
    pub from: PenState,
    pub observation: Observation,
}

/// Environment configuration plus the loss used for rewards.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    loss: Loss,
}

impl Env {
    pub fn new(cfg: EnvConfig, loss: Loss) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, loss })
    }

    pub fn with_kind(cfg: EnvConfig, kind: LossKind) -> Result<Self> {
        Self::new(cfg, Loss::new(kind))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn loss(&self) -> &Loss {
        &self.loss
    }

    /// Starts an episode: white canvas (or `init_canvas`), pen at the center
    /// pixel (or `init_pen`, clamped), losses evaluated once.
    pub fn reset(
        &self,
        reference: &Canvas,
        init_canvas: Option<&Canvas>,
        init_pen: Option<PenState>,
    ) -> Result<EnvState> {
        let (h, w) = reference.dims();
        let canvas = match init_canvas {
            Some(c) if !c.same_shape(reference) => {
                return Err(Error::invalid(format!(
                    "initial canvas {:?} does not match reference {:?}",
                    c.dims(),
                    reference.dims()
                )))
            }
            Some(c) => c.clone(),
            None => Canvas::white(h, w)?,
        };
        let pen = init_pen.unwrap_or_else(|| PenState::center_of(h, w)).clamped(h, w);
        let sigma = self.loss.kind().blur_sigma;
        let observed_reference = if sigma > 0.0 { Some(gaussian_blur(reference, sigma)?) } else { None };
        let (loss, row_sums) = match self.loss.pixel_term() {
            Some(term) => {
                let rows: Vec<f64> = (0..h).map(|r| row_sum(&canvas, reference, r, term)).collect();
                (rows.iter().sum::<f64>() / canvas.data().len() as f64, Some(rows))
            }
            None => (self.loss.eval(&canvas, reference)?, None),
        };
        Ok(EnvState {
            canvas,
            reference: reference.clone(),
            observed_reference,
            pen,
            step_count: 0,
            initial_loss: loss,
            prev_loss: loss,
            row_sums,
        })
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        extract_observation(&state.canvas, state.observed_reference(), state.pen, &self.cfg)
    }

    /// Paints one segment without computing a reward; returns the decoded
    /// stroke and the pen position it started from.
    pub fn apply(&self, state: &mut EnvState, action: &Action) -> Result<(StrokeParams, PenState)> {
        let stroke = decode_action(action, &self.cfg);
        let (h, w) = state.canvas.dims();
        let from = state.pen;
        let to = advance_pen(from, stroke.angle, stroke.length).clamped(h, w);
        let brush =
            Brush { width: stroke.width, color: stroke.color, blend: self.cfg.blend, min_width: self.cfg.min_width };
        if let Some(rect) = render_segment(&mut state.canvas, from, to, &brush) {
            match (self.loss.pixel_term(), state.row_sums.as_mut()) {
                (Some(term), Some(rows)) => {
                    for (r, slot) in (rect.0..=rect.1).zip(&mut rows[rect.0..=rect.1]) {
                        *slot = row_sum(&state.canvas, &state.reference, r, term);
                    }
                    state.prev_loss = rows.iter().sum::<f64>() / state.canvas.data().len() as f64;
                }
                _ => state.prev_loss = self.loss.eval(&state.canvas, &state.reference)?,
            }
        }
        state.pen = to;
        state.step_count += 1;
        Ok((stroke, from))
    }

    /// Decodes, moves the pen (clamped to the canvas), renders, and returns the
    /// normalized reward `(L_{i-1} - L_i) / L_0` (0 when `L_0 = 0`).
    pub fn step(&self, state: &mut EnvState, action: &Action) -> Result<Step> {
        let prev = state.prev_loss;
        let (stroke, from) = self.apply(state, action)?;
        let reward =
            if state.initial_loss > 0.0 { normalized_reward(prev, state.prev_loss, state.initial_loss)? } else { 0.0 };
        Ok(Step { reward, stroke, from, observation: self.observe(state) })
    }
}
