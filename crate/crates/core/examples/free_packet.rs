//! Collapse switched off: a free Gaussian spreads exactly as the
//! Schrödinger equation says.
//!
//! ```bash
//! cargo run --release --example free_packet
//! ```

use collapse_sim::config::{RunConfig, ScenarioKind};
use collapse_sim::runner::free_packet;

fn main() -> collapse_sim::Result<()> {
    let mut cfg = RunConfig::preset(ScenarioKind::FreePacket);
    cfg.physics.gain = 0.0;
    cfg.numerics.record_every = 100;

    let (res, _record) = free_packet(&cfg)?;
    println!("{:>8} {:>14} {:>14}", "t", "width", "closed form");
    for ((t, w), c) in res.times.iter().zip(&res.widths).zip(&res.closed_form) {
        println!("{t:8.2} {w:14.10} {c:14.10}");
    }
    println!("max |width - closed form| = {:.3e}", res.max_width_error);
    println!("identical to the pure Schrödinger stepper: {}", res.matches_reference);
    Ok(())
}
