//! Checks every layer's analytic gradients, and the full PPO objective through
//! the small network, against central finite differences.
//!
//! cargo run --release --example gradcheck -- [seed]

use paintbot::gradcheck::{run, GradcheckConfig};

fn main() -> paintbot::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let report = run(&GradcheckConfig { seed, ..GradcheckConfig::default() })?;
    println!("{report}");
    let broken = run(&GradcheckConfig { seed, corrupt: true, ..GradcheckConfig::default() })?;
    println!(
        "with one gradient entry corrupted: max rel error {:.3e}, passed = {}",
        broken.max_rel_error(),
        broken.passed()
    );
    Ok(())
}
