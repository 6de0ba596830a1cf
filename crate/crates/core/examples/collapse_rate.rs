//! Rate parameter of a colliding pair along a short deterministic run.
//!
//! ```bash
//! cargo run --release --example collapse_rate
//! ```

use collapse_sim::collapse::gamma;
use collapse_sim::config::{RunConfig, ScenarioKind};
use collapse_sim::scenarios::build_integrator;
use collapse_sim::system::System;

fn main() -> collapse_sim::Result<()> {
    let mut cfg = RunConfig::preset(ScenarioKind::GridScattering);
    cfg.physics.gain = 0.0;
    cfg.numerics.n_steps = 50;
    let (integ, mut psi) = build_integrator(&cfg)?;
    let System::Grid(sys) = integ.system() else { unreachable!("grid preset") };
    let pot = &sys.potentials[0];
    let kind = cfg.numerics.scheme.kinetic_kind();

    println!("{:>6} {:>12} {:>12} {:>12}", "t", "|d<V>/dt|", "depth", "gamma");
    let mut t = 0.0;
    for _ in 0..12 {
        let r = gamma(&psi, pot, kind)?;
        println!("{t:6.2} {:12.4e} {:12.4e} {:12.4e}", r.numerator, r.denominator, r.gamma);
        let (_, end) = integ.run_with_state(&psi, 0, 0)?;
        psi = end;
        t += cfg.numerics.dt * cfg.numerics.n_steps as f64;
    }
    Ok(())
}
