//! Run-time painting: repeated strokes from random start points, each
//! continued while the value head predicts further improvement, optionally
//! coarse-to-fine over a pyramid of scales.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canvas::{Canvas, Rgb};
use crate::env::{advance_pen, render_segment, Brush, Env, EnvConfig, PenState};
use crate::error::{Error, Result};
use crate::nn::{PolicyNet, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    /// Stop starting new strokes once the loss is at or below this.
    pub thresh_sim: f64,
    /// A stroke ends when the predicted value is at or below this.
    pub value_stop: f64,
    /// Stroke budget per scale.
    pub max_strokes: usize,
    pub max_segments: usize,
    /// Pyramid factors, strictly increasing, ending at 1.0.
    pub scales: Vec<f64>,
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { thresh_sim: 1e-3, value_stop: 0.0, max_strokes: 200, max_segments: 16, scales: vec![1.0], seed: 0 }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thresh_sim >= 0.0) {
            return Err(Error::invalid("thresh_sim must be >= 0"));
        }
        if self.max_strokes == 0 || self.max_segments == 0 {
            return Err(Error::invalid("stroke and segment caps must be at least 1"));
        }
        validate_scales(&self.scales)
    }
}

pub fn validate_scales(scales: &[f64]) -> Result<()> {
    if scales.last() != Some(&1.0) {
        return Err(Error::invalid("scales must end with 1.0"));
    }
    if scales.iter().any(|&s| !(s > 0.0)) || scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("scales must be positive and strictly increasing, got {scales:?}")));
    }
    Ok(())
}

/// Canvas size at pyramid factor `scale`.
pub fn scaled_dims(height: usize, width: usize, scale: f64) -> (usize, usize) {
    let f = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    (f(height), f(width))
}

/// One executed segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeRecord {
    /// Index into the scale list.
    pub scale: usize,
    /// Stroke number within its scale.
    pub stroke: usize,
    pub segment: usize,
    /// Pen position where the segment starts.
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub length: f64,
    pub width: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone)]
pub struct PaintResult {
    pub canvas: Canvas,
    pub strokes: Vec<StrokeRecord>,
    /// Outer-loop iterations, including strokes with no segments.
    pub strokes_started: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn check_net<T: Scalar>(net: &PolicyNet<T>, env: &Env) -> Result<()> {
    let want = env.config().observation_dims();
    if net.observation_dims() != want {
        return Err(Error::invalid(format!(
            "checkpoint takes {}x{} observations but the environment produces {}x{}",
            net.observation_dims().0,
            net.observation_dims().1,
            want.0,
            want.1
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn paint_scale<T: Scalar, R: Rng + ?Sized>(
    reference: &Canvas,
    init: Option<&Canvas>,
    net: &PolicyNet<T>,
    cfg: &RolloutConfig,
    env: &Env,
    scale: usize,
    rng: &mut R,
    log: &mut Vec<StrokeRecord>,
) -> Result<(Canvas, usize, f64, f64)> {
    let mut state = env.reset(reference, init, None)?;
    let initial = state.current_loss();
    let (h, w) = reference.dims();
    let mut strokes = 0;
    while state.current_loss() > cfg.thresh_sim && strokes < cfg.max_strokes {
        state.pen = PenState::new(rng.random_range(0..w) as f64, rng.random_range(0..h) as f64);
        let mut segment = 0;
        loop {
            let out = net.forward(&env.observe(&state))?;
            if out.value <= cfg.value_stop || segment >= cfg.max_segments {
                break;
            }
            let (stroke, from) = env.apply(&mut state, &out.mean_action())?;
            log.push(StrokeRecord {
                scale,
                stroke: strokes,
                segment,
                x: from.x,
                y: from.y,
                angle: stroke.angle,
                length: stroke.length,
                width: stroke.width,
                color: stroke.color,
            });
            segment += 1;
        }
        strokes += 1;
    }
    let final_loss = state.current_loss();
    Ok((state.canvas, strokes, initial, final_loss))
}

/// Paints `reference` from a white canvas at its native resolution.
pub fn paint<T: Scalar>(reference: &Canvas, net: &PolicyNet<T>, cfg: &RolloutConfig, env: &Env) -> Result<PaintResult> {
    let single = RolloutConfig { scales: vec![1.0], ..cfg.clone() };
    paint_multiscale(reference, net, &single, env)
}

/// Paints each pyramid level in turn: the reference is area-downsampled to the
/// level, the running canvas bilinearly upsampled to it (white at the first
/// level), and strokes are added on top. One seeded generator drives all levels.
pub fn paint_multiscale<T: Scalar>(
    reference: &Canvas,
    net: &PolicyNet<T>,
    cfg: &RolloutConfig,
    env: &Env,
) -> Result<PaintResult> {
    cfg.validate()?;
    check_net(net, env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = reference.dims();
    let mut log = Vec::new();
    let mut canvas: Option<Canvas> = None;
    let mut started = 0;
    let mut initial_loss = None;
    let mut final_loss = 0.0;
    for (i, &s) in cfg.scales.iter().enumerate() {
        let (sh, sw) = scaled_dims(h, w, s);
        let level_ref = reference.resize_area(sh, sw)?;
        let init = canvas.as_ref().map(|c| c.resize_bilinear(sh, sw)).transpose()?;
        let (painted, n, l0, lt) = paint_scale(&level_ref, init.as_ref(), net, cfg, env, i, &mut rng, &mut log)?;
        initial_loss.get_or_insert(l0);
        started += n;
        final_loss = lt;
        canvas = Some(painted);
    }
    Ok(PaintResult {
        canvas: canvas.expect("at least one scale"),
        strokes: log,
        strokes_started: started,
        initial_loss: initial_loss.unwrap_or(0.0),
        final_loss,
    })
}

/// Re-renders a stroke log from white, reproducing the scale transitions of
/// [`paint_multiscale`].
pub fn replay(
    records: &[StrokeRecord],
    height: usize,
    width: usize,
    scales: &[f64],
    env_cfg: &EnvConfig,
) -> Result<Canvas> {
    validate_scales(scales)?;
    if let Some(r) = records.iter().find(|r| r.scale >= scales.len()) {
        return Err(Error::invalid(format!(
            "stroke log refers to scale {} but only {} scales were given",
            r.scale,
            scales.len()
        )));
    }
    let mut canvas: Option<Canvas> = None;
    for (i, &s) in scales.iter().enumerate() {
        let (sh, sw) = scaled_dims(height, width, s);
        let mut c = match &canvas {
            None => Canvas::white(sh, sw)?,
            Some(prev) => prev.resize_bilinear(sh, sw)?,
        };
        for r in records.iter().filter(|r| r.scale == i) {
            let from = PenState::new(r.x, r.y);
            let to = advance_pen(from, r.angle, r.length).clamped(sh, sw);
            let brush = Brush { width: r.width, color: r.color, blend: env_cfg.blend, min_width: env_cfg.min_width };
            render_segment(&mut c, from, to, &brush);
        }
        canvas = Some(c);
    }
    Ok(canvas.expect("at least one scale"))
}

pub const STROKE_LOG_HEADER: &str = "scale,stroke,segment,x,y,angle,length,width,r,g,b";

/// Comma-separated stroke log. Floats use the shortest representation that
/// parses back to the same value.
pub fn format_stroke_log(records: &[StrokeRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(STROKE_LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scale, r.stroke, r.segment, r.x, r.y, r.angle, r.length, r.width, r.color[0], r.color[1], r.color[2]
        );
    }
    s
}

pub fn parse_stroke_log(text: &str) -> Result<Vec<StrokeRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == STROKE_LOG_HEADER => {}
        _ => return Err(Error::format(format!("stroke log must start with `{STROKE_LOG_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(format!("stroke log line {}: {what}", n + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(bad(&format!("expected 11 fields, found {}", f.len())));
        }
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| bad(&format!("bad integer `{}`", f[i])));
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(&format!("bad number `{}`", f[i])));
        out.push(StrokeRecord {
            scale: int(0)?,
            stroke: int(1)?,
            segment: int(2)?,
            x: num(3)?,
            y: num(4)?,
            angle: num(5)?,
            length: num(6)?,
            width: num(7)?,
            color: [num(8)?, num(9)?, num(10)?],
        });
    }
    Ok(out)
}

pub fn write_stroke_log(path: impl AsRef<Path>, records: &[StrokeRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_stroke_log(records)).map_err(|e| Error::io(path, e))
}

pub fn read_stroke_log(path: impl AsRef<Path>) -> Result<Vec<StrokeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stroke_log(&text)
}
