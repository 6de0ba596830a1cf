//! Two packets scattering off an attractive well: the collapse-induced energy
//! deviation compared with the first relativistic correction.
//!
//! ```bash
//! cargo run --release --example scattering_energy
//! ```

use collapse_sim::config::{RunConfig, ScenarioKind};
use collapse_sim::diagnostics::{deviation_ratio_benchmark, energy_deviation_study};
use collapse_sim::scenarios::build_integrator;

fn main() -> collapse_sim::Result<()> {
    let cfg = RunConfig::preset(ScenarioKind::GridScattering);
    let (integ, psi) = build_integrator(&cfg)?;
    let total_mass: f64 = cfg.physics.particles.iter().map(|p| p.mass).sum();

    for seed in 0..2 {
        let study = energy_deviation_study(&integ, &psi, seed)?;
        let bench = deviation_ratio_benchmark(study.delta_ke, total_mass, cfg.physics.c)?;
        println!("seed {seed}");
        println!("  kinetic energy exchanged   {:.4e}", study.delta_ke);
        println!("  deviation (rms)            {:.4e}", study.deviation_rms);
        println!("  deviation / exchange       {:.4e}", study.deviation_ratio);
        println!("  dKE / (M c^2)              {:.4e}", study.expected_ratio);
        println!("  agreement                  {:.3}", study.agreement());
        println!("  first relativistic term    {:.4e}", bench.first_order);
        println!("  positive term: total {:.3e}, min {:.3e}", study.positive_total, study.positive_min);
    }
    Ok(())
}
