//! Compares the pixel and feature losses on a few image pairs, with and
//! without blurring the reference.
//!
//! cargo run --release --example losses

use paintbot::losses::{gaussian_blur, loss_l2, loss_lhalf, loss_perceptual, FeatureStack};
use paintbot::Canvas;

fn main() -> paintbot::Result<()> {
    let stripes = Canvas::from_fn(32, 32, |_, c| if c % 4 < 2 { [1.0; 3] } else { [0.0; 3] })?;
    let shifted = Canvas::from_fn(32, 32, |_, c| if (c + 1) % 4 < 2 { [1.0; 3] } else { [0.0; 3] })?;
    let gray = Canvas::new(32, 32, [0.5; 3])?;
    let white = Canvas::white(32, 32)?;
    let stack = FeatureStack::default();

    println!("{:<22} {:>8} {:>8} {:>10}", "pair", "l2", "lhalf", "perceptual");
    for (name, a, b) in [
        ("stripes vs shifted", &stripes, &shifted),
        ("stripes vs gray", &stripes, &gray),
        ("stripes vs white", &stripes, &white),
        ("gray vs white", &gray, &white),
    ] {
        println!(
            "{name:<22} {:>8.4} {:>8.4} {:>10.5}",
            loss_l2(a, b)?,
            loss_lhalf(a, b)?,
            loss_perceptual(a, b, &stack)?
        );
    }

    // Blurring the reference shrinks the gap between stripes and flat gray.
    for sigma in [0.0, 0.5, 1.0, 2.0] {
        let blurred = gaussian_blur(&stripes, sigma)?;
        println!("blur sigma {sigma:.1}: l2(gray, blurred stripes) = {:.4}", loss_l2(&gray, &blurred)?);
    }
    Ok(())
}
