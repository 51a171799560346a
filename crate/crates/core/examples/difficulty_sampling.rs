//! Trains briefly on three flat colors plus one noise patch and reports how
//! often the value-based sampler picked each reference.
//!
//! cargo run --release --example difficulty_sampling -- [iterations]

use paintbot::trainer::{train, Dataset, Sampling, TrainConfig};
use paintbot::{Canvas, LossKind, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> paintbot::Result<()> {
    let iterations = std::env::args().nth(1).map_or(200, |s| s.parse().expect("iterations"));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let patches = vec![
        Canvas::new(32, 32, [1.0, 0.0, 0.0])?,
        Canvas::new(32, 32, [0.0, 1.0, 0.0])?,
        Canvas::new(32, 32, [0.0, 0.0, 1.0])?,
        Canvas::from_fn(32, 32, |_, _| [rng.random(), rng.random(), rng.random()])?,
    ];
    let names = ["red", "green", "blue", "noise"];
    for sampling in [Sampling::Value, Sampling::MeanReward, Sampling::Uniform] {
        let cfg = TrainConfig { iterations, sampling, loss: LossKind::new(Metric::LHalf), ..TrainConfig::desk() };
        let mut dataset = Dataset::new(patches.clone())?;
        let outcome = train(&cfg, &mut dataset, None, None)?;
        let counts: Vec<String> = (0..patches.len())
            .map(|i| format!("{} {}", names[i], outcome.selections.iter().filter(|&&s| s == i).count()))
            .collect();
        println!("{sampling:?}: {}", counts.join(", "));
        for (name, s) in names.iter().zip(&dataset.stats) {
            println!(
                "  {name:<6} mean return {:>7.4}  last value estimate {:?}",
                s.mean_return,
                s.last_estimate.map(|v| (v * 1e4).round() / 1e4)
            );
        }
    }
    Ok(())
}
