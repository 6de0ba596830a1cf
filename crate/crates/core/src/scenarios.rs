//! Build systems, initial states and integrators from a [`RunConfig`].

use std::sync::Arc;

use num_complex::Complex64;

use crate::config::{Backend, RunConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sde::Integrator;
use crate::state::HilbertState;
use crate::system::{FiniteSystem, GridSystem, System};

pub fn build_grid(cfg: &RunConfig) -> Result<Arc<Grid>> {
    let spec = cfg
        .grid
        .ok_or_else(|| Error::config("grid", "grid scenarios need a [grid] section"))?;
    Grid::new(spec, cfg.physics.particles.clone()).map_err(|e| Error::config("grid", e.to_string()))
}

/// The system a scenario integrates.
pub fn build_system(cfg: &RunConfig) -> Result<System> {
    match cfg.backend() {
        Some(Backend::Grid) => {
            let grid = build_grid(cfg)?;
            let sys = GridSystem::new(grid, cfg.physics.potentials.clone(), cfg.physics.c)
                .map_err(|e| Error::config("physics", e.to_string()))?
                .with_derivative(cfg.numerics.scheme.kinetic_kind());
            Ok(System::Grid(sys))
        }
        Some(Backend::Finite) => {
            let t = cfg.physics.two_level;
            FiniteSystem::two_level(t.v, t.gamma, t.energy_denominator)
                .map(System::Finite)
                .map_err(|e| Error::config("physics.two_level", e.to_string()))
        }
        None => Err(Error::config(
            "scenario",
            format!("{} does not integrate a state", cfg.scenario.name()),
        )),
    }
}

/// Normalized starting state for `system`.
pub fn build_initial(cfg: &RunConfig, system: &System) -> Result<HilbertState> {
    match system {
        System::Grid(g) => HilbertState::product_gaussians(&g.grid, &cfg.initial.packets)
            .map_err(|e| Error::config("initial.packets", e.to_string()))?
            .normalized(),
        System::Finite(f) => two_level_state(cfg.initial.weight, f.labels.iter().cloned()),
    }
}

/// `sqrt(w) |I> + sqrt(1 - w) |O>`.
pub fn two_level_state<S: Into<String>>(weight: f64, labels: impl IntoIterator<Item = S>) -> Result<HilbertState> {
    if !(weight > 0.0 && weight < 1.0) {
        return Err(Error::config("initial.weight", format!("must lie in (0, 1), got {weight}")));
    }
    HilbertState::finite(
        labels,
        vec![Complex64::new(weight.sqrt(), 0.0), Complex64::new((1.0 - weight).sqrt(), 0.0)],
    )
}

/// Integrator and initial state of a config.
pub fn build_integrator(cfg: &RunConfig) -> Result<(Integrator, HilbertState)> {
    let system = build_system(cfg)?;
    let initial = build_initial(cfg, &system)?;
    let integ = Integrator::new(system, cfg.integrator_config())?;
    Ok((integ, initial))
}

/// Closed-form standard deviation of a free Gaussian: `sigma sqrt(1 + (t / (2 m sigma^2))^2)`.
pub fn free_width(sigma: f64, mass: f64, t: f64) -> f64 {
    let tau = t / (2.0 * mass * sigma * sigma);
    sigma * (1.0 + tau * tau).sqrt()
}

/// Position standard deviation of particle `p` along `axis`.
pub fn position_width(state: &HilbertState, particle: usize, axis: usize) -> Result<f64> {
    let grid = state
        .grid()
        .ok_or_else(|| Error::UnsupportedOperator("width needs a grid state".into()))?;
    let a = grid.axis(particle, axis);
    let mut n = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (i, z) in state.amplitudes.iter().enumerate() {
        let xi = grid.coordinate(i, a);
        let p = z.norm_sqr();
        n += p;
        m1 += p * xi;
        m2 += p * xi * xi;
    }
    let mean = m1 / n;
    Ok((m2 / n - mean * mean).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioKind;

    #[test]
    fn presets_build() {
        for kind in [
            ScenarioKind::FreePacket,
            ScenarioKind::TwoLevelCollapse,
            ScenarioKind::GridScattering,
            ScenarioKind::ConservationSuite,
        ] {
            let (integ, psi) = build_integrator(&RunConfig::preset(kind)).unwrap();
            assert!((psi.norm() - 1.0).abs() < 1e-12);
            assert_eq!(integ.system().grid().is_some(), kind != ScenarioKind::TwoLevelCollapse);
        }
    }

    #[test]
    fn two_level_weight() {
        let s = two_level_state(0.3, ["I", "O"]).unwrap();
        assert!((s.amplitudes[0].norm_sqr() - 0.3).abs() < 1e-15);
        assert!(two_level_state(1.0, ["I", "O"]).is_err());
    }

    #[test]
    fn initial_width_matches_packet() {
        let cfg = RunConfig::preset(ScenarioKind::FreePacket);
        let (_, psi) = build_integrator(&cfg).unwrap();
        assert!((position_width(&psi, 0, 0).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(free_width(1.0, 1.0, 0.0), 1.0);
        assert!((free_width(1.0, 0.5, 1.0) - 2f64.sqrt()).abs() < 1e-15);
    }
}
