//! Energy deviation from thermal collisions in a cubic metre of air.
//!
//! ```bash
//! cargo run --release --example thermal -- 300
//! ```

use collapse_sim::collapse::{characteristic_time, UnitSystem};
use collapse_sim::experiments::{thermal_estimate, ThermalInput};

fn main() -> collapse_sim::Result<()> {
    let mut inp = ThermalInput::air_at_stp();
    if let Some(t) = std::env::args().nth(1) {
        inp.temperature = t.parse().expect("temperature in K");
    }
    let est = thermal_estimate(&inp)?;
    println!("temperature          {} K", inp.temperature);
    println!("kT / mc^2            {:.3e}", est.ratio);
    println!("collisions per s     {:.3e}", est.collision_rate);
    println!("fractional rate      {:.3e} /s", est.fractional_rate);
    println!("thermal energy       {:.3e} J", est.thermal_energy);
    println!("deviation            {:.3e} J/yr", est.joules_per_year);

    for ev in [1.0, 100.0, 1e4] {
        println!("interaction of {ev:>7} eV lasts ~{:.2e} s", characteristic_time(ev, UnitSystem::SiElectronVolt)?);
    }
    Ok(())
}
