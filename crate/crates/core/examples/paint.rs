//! Paints an image coarse-to-fine with a checkpoint (or a freshly initialized
//! network), writes the stroke log, and re-renders the log to confirm it
//! reproduces the canvas.
//!
//! cargo run --release --example paint -- [checkpoint] [out_dir]

use std::path::PathBuf;

use paintbot::nn::load_params;
use paintbot::rollout::{paint_multiscale, replay, write_stroke_log, RolloutConfig};
use paintbot::{Canvas, Env, EnvConfig, LossKind, Metric, NetSpec, PolicyNet};

fn main() -> paintbot::Result<()> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().filter(|s| s != "-");
    let out: PathBuf = args.next().unwrap_or_else(|| ".".into()).into();
    std::fs::create_dir_all(&out).map_err(|e| paintbot::Error::io(&out, e))?;

    let net = match checkpoint {
        Some(p) => load_params(p)?.net,
        None => PolicyNet::<f32>::init(&NetSpec::desk(), 0)?,
    };
    let (oh, ow) = net.observation_dims();
    let env_cfg = EnvConfig { obs_height: oh, obs_width: ow / 2, ..EnvConfig::desk() };
    let env = Env::with_kind(env_cfg, LossKind::new(Metric::L2))?;
    let reference = Canvas::from_fn(96, 128, |r, c| {
        let (y, x) = (r as f64 / 95.0, c as f64 / 127.0);
        let sun = ((x - 0.7).powi(2) + (y - 0.3).powi(2)).sqrt() < 0.15;
        if sun {
            [1.0, 0.85, 0.2]
        } else if y > 0.65 {
            [0.2, 0.5, 0.2]
        } else {
            [0.4, 0.6, 0.9]
        }
    })?;
    let cfg = RolloutConfig {
        scales: vec![0.25, 0.5, 1.0],
        max_strokes: 150,
        max_segments: 8,
        value_stop: f64::NEG_INFINITY,
        ..RolloutConfig::default()
    };
    let start = std::time::Instant::now();
    let result = paint_multiscale(&reference, &net, &cfg, &env)?;
    println!(
        "{} segments in {} strokes, loss {:.4} -> {:.4} in {:.2}s",
        result.strokes.len(),
        result.strokes_started,
        result.initial_loss,
        result.final_loss,
        start.elapsed().as_secs_f64()
    );
    reference.save_png(out.join("paint_reference.png"))?;
    result.canvas.save_png(out.join("paint_output.png"))?;
    write_stroke_log(out.join("paint_strokes.csv"), &result.strokes)?;

    let redrawn = replay(&result.strokes, 96, 128, &cfg.scales, env.config())?;
    println!("replay matches: {}", redrawn == result.canvas);
    Ok(())
}
