//! Trains the small network on four 32x32 color patches and compares the
//! learned policy with uniform random actions. The defaults stop at 2e5
//! environment steps, roughly ten minutes on one core.
//!
//! cargo run --release --example train_toy -- [iterations] [seed]

use paintbot::trainer::{build_env, evaluate, train, Dataset, EvalPolicy, Sampling, TrainConfig};
use paintbot::{Canvas, LossKind, Metric, PolicyNet};

fn toy_patches() -> Vec<Canvas> {
    vec![
        Canvas::new(32, 32, [1.0, 0.0, 0.0]).unwrap(),
        Canvas::new(32, 32, [0.0, 1.0, 0.0]).unwrap(),
        Canvas::new(32, 32, [0.0, 0.0, 1.0]).unwrap(),
        Canvas::from_fn(32, 32, |_, c| {
            let t = c as f64 / 31.0;
            [1.0 - t, 0.0, t]
        })
        .unwrap(),
    ]
}

fn main() -> paintbot::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(1500, |s| s.parse().expect("iterations"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = TrainConfig {
        iterations,
        seed,
        loss: LossKind::new(Metric::LHalf),
        learning_rate: 3e-4,
        episodes_per_iteration: 16,
        sampling: Sampling::Uniform,
        step_budget: 200_000,
        ..TrainConfig::desk()
    };
    let patches = toy_patches();
    let mut dataset = Dataset::new(patches.clone())?;
    let env = build_env(&cfg)?;
    let untrained = PolicyNet::<f32>::init(&cfg.net_spec()?, cfg.seed)?;

    let start = std::time::Instant::now();
    let outcome = train(&cfg, &mut dataset, None, None)?;
    let secs = start.elapsed().as_secs_f64();
    for row in outcome.metrics.iter().step_by((outcome.metrics.len() / 10).max(1)) {
        println!(
            "iter {:>5}  reward {:>7.4}  value_loss {:.5}  entropy {:>7.3}  horizon {:.2}",
            row.episode, row.mean_reward, row.value_loss, row.entropy, row.horizon
        );
    }
    println!("{} env steps in {secs:.1}s", outcome.env_steps);

    let steps = cfg.t_max;
    for (name, net, policy) in [
        ("random actions", &untrained, EvalPolicy::Random),
        ("untrained mean", &untrained, EvalPolicy::Deterministic),
        ("trained mean", &outcome.net, EvalPolicy::Deterministic),
    ] {
        let r = evaluate(net, &env, &patches, steps, policy, 7)?;
        println!("{name:<16} loss ratio {:.3}  reward {:.3}", r.mean_loss_ratio, r.mean_reward);
    }
    Ok(())
}
