//! Grid-refinement check that collapse conserves momentum (1-D) or orbital
//! angular momentum (2-D, pass `angular`). The 2-D run takes several minutes.
//!
//! ```bash
//! cargo run --release --example conservation
//! cargo run --release --example conservation -- angular
//! ```

use collapse_sim::config::{RunConfig, ScenarioKind};
use collapse_sim::runner::conservation_suite;

fn main() -> collapse_sim::Result<()> {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("angular") => RunConfig::preset_angular_momentum(),
        _ => RunConfig::preset(ScenarioKind::ConservationSuite),
    };
    let suite = conservation_suite(&cfg)?;
    println!("{:>6} {:>5} {:>12} {:>12}", "gain", "N", "residual", "drift");
    for e in &suite.entries {
        println!("{:6} {:5} {:12.4e} {:12.4e}", e.gain, e.points_per_axis, e.report.max_residual, e.report.drift);
    }
    for ((gain, rr), (_, dr)) in suite.residual_ratios.iter().zip(&suite.drift_ratios) {
        println!("gain {gain}: residual ratios {rr:.3?}, drift ratios {dr:.3?}");
    }
    for (gain, r) in &suite.spectral_residuals {
        println!("gain {gain}: spectral residual {r:.3e}");
    }
    if suite.passed() {
        println!("second-order convergence confirmed");
    } else {
        for f in &suite.failures {
            println!("FAILED: {f}");
        }
    }
    Ok(())
}
