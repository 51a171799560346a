//! Drives the painting environment with a few hand-written actions and saves
//! the canvas next to the reference.
//!
//! cargo run --release --example stroke_env -- [out_dir]

use std::path::PathBuf;

use paintbot::{Action, Canvas, Env, EnvConfig, LossKind, Metric};

fn main() -> paintbot::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| ".".into()).into();
    std::fs::create_dir_all(&out).map_err(|e| paintbot::Error::io(&out, e))?;
    let reference =
        Canvas::from_fn(48, 48, |r, c| if (r / 12 + c / 12) % 2 == 0 { [0.9, 0.3, 0.1] } else { [0.1, 0.3, 0.8] })?;
    let env = Env::with_kind(EnvConfig::desk(), LossKind::new(Metric::L2))?;
    let mut state = env.reset(&reference, None, None)?;
    println!("start: pen ({:.1}, {:.1}), loss {:.4}", state.pen.x, state.pen.y, state.current_loss());

    // angle, length, width, r, g, b (all in [0,1])
    let actions = [
        [0.0, 1.0, 0.6, 0.9, 0.3, 0.1],
        [0.25, 0.75, 0.6, 0.1, 0.3, 0.8],
        [0.5, 1.0, 0.3, 0.9, 0.3, 0.1],
        [0.75, 0.5, 0.05, 0.0, 0.0, 0.0],
        [0.125, 1.0, 1.0, 0.5, 0.3, 0.45],
    ];
    let mut total = 0.0;
    for a in actions {
        let step = env.step(&mut state, &Action::new(a)?)?;
        total += step.reward;
        println!(
            "angle {:.2} rad  length {:>5.2}  width {:>5.2}  -> pen ({:>5.2}, {:>5.2})  reward {:>7.4}",
            step.stroke.angle, step.stroke.length, step.stroke.width, state.pen.x, state.pen.y, step.reward
        );
    }
    let ratio = state.current_loss() / state.initial_loss;
    println!("sum of rewards {total:.4} = 1 - L_end/L_0 = {:.4}", 1.0 - ratio);

    let obs = env.observe(&state);
    println!("observation {:?} (canvas patch | reference patch)", obs.shape());
    state.canvas.save_png(out.join("stroke_env_canvas.png"))?;
    reference.save_png(out.join("stroke_env_reference.png"))?;
    println!("wrote {}", out.join("stroke_env_canvas.png").display());
    Ok(())
}
