//! Samples training patches from synthetic source images across a scale
//! pyramid, then keeps one representative per perceptual cluster.
//!
//! cargo run --release --example prep_dataset -- [count] [clusters]

use paintbot::losses::FeatureStack;
use paintbot::trainer::{cluster_representatives, prepare_dataset, PrepOptions};
use paintbot::Canvas;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> paintbot::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().map_or(24, |s| s.parse().expect("count"));
    let clusters = args.next().map_or(4, |s| s.parse().expect("clusters"));
    let sources = vec![
        Canvas::from_fn(128, 96, |r, c| [r as f64 / 127.0, c as f64 / 95.0, 0.4])?,
        Canvas::from_fn(96, 96, |r, c| if ((r / 8) + (c / 8)) % 2 == 0 { [0.1; 3] } else { [0.95, 0.9, 0.2] })?,
        Canvas::new(64, 64, [0.2, 0.6, 0.3])?,
    ];
    let opts = PrepOptions::new(count, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dataset = prepare_dataset(&sources, &opts, &mut rng)?;
    println!("{} patches of {:?}", dataset.len(), dataset.patch_dims());
    for o in dataset.origins().iter().take(6) {
        println!(
            "  source {} scale {:.2} crop {} at ({}, {}) rot {} flip {}",
            o.source, o.scale, o.crop, o.row, o.col, o.quarter_turns, o.flipped
        );
    }
    let kept = cluster_representatives(&dataset, &FeatureStack::default(), clusters, &mut rng)?;
    println!("kept {} representatives:", kept.len());
    for o in kept.origins() {
        println!("  source {} scale {:.2}", o.source, o.scale);
    }
    Ok(())
}
