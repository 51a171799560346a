//! Builds both network presets, prints their layer shapes, samples actions
//! from the Gaussian head and round-trips a checkpoint.
//!
//! cargo run --release --example policy_net

use paintbot::nn::{load_params, sample_action, save_params};
use paintbot::{Canvas, Env, EnvConfig, LossKind, NetSpec, PolicyNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> paintbot::Result<()> {
    for (name, spec) in [("full", NetSpec::full()), ("desk", NetSpec::desk())] {
        let net = PolicyNet::<f32>::init(&spec, 0)?;
        println!(
            "{name}: input {}x{}x3, convs {:?}, fc {} -> {}, heads 6 means + 6 log-stds + 1 value",
            spec.obs_height,
            spec.obs_width,
            net.conv_shapes(),
            net.fc.inputs,
            net.fc.outputs
        );
    }

    let net = PolicyNet::<f32>::init(&NetSpec::desk(), 0)?;
    let env = Env::with_kind(EnvConfig::desk(), LossKind::default())?;
    let state = env.reset(&Canvas::new(32, 32, [0.2, 0.4, 0.9])?, None, None)?;
    let out = net.forward(&env.observe(&state))?;
    println!("mean {:.3?}\nstd  {:.3?}\nvalue {:.4}", out.mean, out.std(), out.value);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let s = sample_action(&out, &mut rng);
        println!("sample {:.3?} log-prob {:.3}", s.action.components(), s.log_prob);
    }

    let path = std::env::temp_dir().join("paintbot_policy_net_example.ckpt");
    save_params(&net, 0, &path)?;
    let back = load_params(&path)?;
    println!("checkpoint round trip identical: {}", back.net == net);
    let _ = std::fs::remove_file(&path);
    Ok(())
}
