//! The stochastic collapse operator for each interacting pair.
//!
//! For a pair `(j, k)` with potential `V` the operator is the diagonal field
//!
//! ```text
//! gain * sqrt(gamma) * (V - <V>) / ((m_j + m_k) c^2)
//! ```
//!
//! where the rate `gamma` is the magnitude of the rate of change of `<V>`
//! in the interacting component `psi_jk = (V / <V>) psi`, divided by the
//! largest potential-energy change available to that component.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{partial, DerivativeKind, PairPotential};
use crate::state::{diagonal_mean, BranchDecomposition, HilbertState};
use crate::system::{FiniteCoupling, GridSystem, System};

/// Reduced Planck constant in J s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;
/// One electronvolt in joules.
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;
/// Ratio above which a pair is outside the nonrelativistic regime.
pub const NONRELATIVISTIC_RATIO: f64 = 1e-3;

/// Relative size below which `<V>` counts as zero.
const DEGENERACY_TOLERANCE: f64 = 1e-14;

/// Numerator, denominator and their ratio `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateParams {
    /// Magnitude of `d<V>/dt` in the interacting component (energy / time).
    pub numerator: f64,
    /// Largest available change of potential energy (energy).
    pub denominator: f64,
    pub gamma: f64,
}

/// Diagonal stochastic operator for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseOperator {
    pub pair: (usize, usize),
    /// `V - <V>` at every basis point.
    pub centered_potential: Vec<f64>,
    /// `(m_j + m_k) c^2`.
    pub energy_denominator: f64,
    pub rate: RateParams,
    pub gain: f64,
}

impl CollapseOperator {
    pub fn gamma(&self) -> f64 {
        self.rate.gamma
    }

    /// Scalar multiplying the centered potential.
    pub fn coefficient(&self) -> f64 {
        self.gain * self.rate.gamma.sqrt() / self.energy_denominator
    }

    /// Diagonal of the operator.
    pub fn diagonal(&self) -> Vec<f64> {
        let c = self.coefficient();
        self.centered_potential.iter().map(|v| v * c).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coefficient() == 0.0
    }

    /// `max |V - <V>| / ((m_j + m_k) c^2)`.
    pub fn energy_ratio(&self) -> f64 {
        let m = self
            .centered_potential
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        m / self.energy_denominator
    }

    /// Flags pairs whose energy ratio exceeds the nonrelativistic bound.
    pub fn exceeds_nonrelativistic_bound(&self) -> bool {
        self.energy_ratio() > NONRELATIVISTIC_RATIO
    }

    /// Interacting / noninteracting split induced by this operator.
    pub fn branches(&self, state: &HilbertState) -> BranchDecomposition {
        BranchDecomposition::from_centered(&self.centered_potential, state)
    }
}

/// Sum of the diagonals of several operators.
pub fn total_diagonal(ops: &[CollapseOperator], len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for op in ops {
        let c = op.coefficient();
        if c == 0.0 {
            continue;
        }
        total
            .par_iter_mut()
            .zip(op.centered_potential.par_iter())
            .for_each(|(t, v)| *t += v * c);
    }
    total
}

fn grid_of(state: &HilbertState) -> Result<&Grid> {
    state
        .grid()
        .map(|g| g.as_ref())
        .ok_or_else(|| Error::UnsupportedOperator("pair potentials need a grid basis".into()))
}

/// `psi_jk = (V / <psi|V|psi>) psi`, unnormalized.
pub fn interacting_component(state: &HilbertState, potential: &PairPotential) -> Result<HilbertState> {
    let grid = grid_of(state)?;
    let v = potential.value_field(grid)?;
    interacting_component_field(state, &v)
}

fn interacting_component_field(state: &HilbertState, v: &[f64]) -> Result<HilbertState> {
    let mean = diagonal_mean(v, state);
    let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 || mean.abs() < DEGENERACY_TOLERANCE * scale {
        return Err(Error::DegenerateProjection(format!(
            "<V> = {mean:e} against |V|max = {scale:e}"
        )));
    }
    let amps = state
        .amplitudes
        .par_iter()
        .zip(v.par_iter())
        .map(|(a, x)| a * (x / mean))
        .collect();
    Ok(state.with_amplitudes(amps))
}

fn normalized_component(state: &HilbertState, potential: &PairPotential) -> Result<HilbertState> {
    let mut c = interacting_component(state, potential)?;
    c.normalize()?;
    Ok(c)
}

/// Magnitude of the rate of change of `<V>` in the normalized interacting
/// component; 0 when there is no interacting component.
pub fn rate_numerator(state: &HilbertState, potential: &PairPotential, kind: DerivativeKind) -> Result<f64> {
    let phi = match normalized_component(state, potential) {
        Ok(p) => p,
        Err(Error::DegenerateProjection(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    Ok(energy_exchange_rate(&phi, potential, kind)?.norm())
}

/// `i * integral[ |phi|^2 (lap_j V / 2m_j + lap_k V / 2m_k)
///   + phi* grad_j V . (grad_j phi / m_j - grad_k phi / m_k) ]`
/// for a normalized `phi`; equals `d<V>/dt` under the Schrödinger flow.
pub fn energy_exchange_rate(phi: &HilbertState, potential: &PairPotential, kind: DerivativeKind) -> Result<Complex64> {
    let grid = grid_of(phi)?;
    if potential.is_constant() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (j, k) = potential.particles;
    let mj = grid.particles()[j].mass;
    let mk = grid.particles()[k].mass;
    let lap = potential.laplacian_field(grid, j)?;
    let amps = &phi.amplitudes;
    let mut acc: Complex64 = amps
        .par_iter()
        .zip(lap.par_iter())
        .map(|(a, l)| a.norm_sqr() * l * (0.5 / mj + 0.5 / mk))
        .sum::<f64>()
        .into();
    for c in 0..grid.dims() {
        let grad = potential.gradient_field(grid, j, c)?;
        let dj = partial(grid, amps, grid.axis(j, c), kind);
        let dk = partial(grid, amps, grid.axis(k, c), kind);
        acc += amps
            .par_iter()
            .zip(grad.par_iter())
            .zip(dj.par_iter().zip(dk.par_iter()))
            .map(|((a, g), (dj, dk))| a.conj() * g * (dj / mj - dk / mk))
            .sum::<Complex64>();
    }
    Ok(Complex64::new(0.0, 1.0) * acc * grid.volume_element())
}

/// Relative-coordinate derivative `(m_k d_j - m_j d_k) / (m_j + m_k)` along `component`.
fn relative_partial(
    grid: &Grid,
    data: &[Complex64],
    pair: (usize, usize),
    component: usize,
    kind: DerivativeKind,
) -> Vec<Complex64> {
    let (j, k) = pair;
    let mj = grid.particles()[j].mass;
    let mk = grid.particles()[k].mass;
    let m = mj + mk;
    let dj = partial(grid, data, grid.axis(j, component), kind);
    let dk = partial(grid, data, grid.axis(k, component), kind);
    dj.par_iter()
        .zip(dk.par_iter())
        .map(|(a, b)| (a * mk - b * mj) / m)
        .collect()
}

/// Second derivative along the separation direction.
fn radial_second_derivative(
    grid: &Grid,
    data: &[Complex64],
    potential: &PairPotential,
    kind: DerivativeKind,
) -> Vec<Complex64> {
    let pair = potential.particles;
    if grid.dims() == 1 {
        let d = relative_partial(grid, data, pair, 0, kind);
        return relative_partial(grid, &d, pair, 0, kind);
    }
    let dx = relative_partial(grid, data, pair, 0, kind);
    let dy = relative_partial(grid, data, pair, 1, kind);
    let dxx = relative_partial(grid, &dx, pair, 0, kind);
    let dyy = relative_partial(grid, &dy, pair, 1, kind);
    let dxy = relative_partial(grid, &dx, pair, 1, kind);
    let dir = potential.direction_field(grid);
    (0..data.len())
        .into_par_iter()
        .map(|f| match dir[f] {
            Some([ux, uy]) => dxx[f] * (ux * ux) + dyy[f] * (uy * uy) + dxy[f] * (2.0 * ux * uy),
            // angular average at contact
            None => (dxx[f] + dyy[f]) * 0.5,
        })
        .collect()
}

/// `<L_rel^2>` of `phi` in the pair's center-of-mass frame (2-D grids).
fn relative_angular_momentum_sqr(grid: &Grid, phi: &HilbertState, potential: &PairPotential, kind: DerivativeKind) -> f64 {
    let (j, k) = potential.particles;
    let pair = potential.particles;
    let dx = relative_partial(grid, &phi.amplitudes, pair, 0, kind);
    let dy = relative_partial(grid, &phi.amplitudes, pair, 1, kind);
    let l2: f64 = (0..phi.len())
        .into_par_iter()
        .map(|f| {
            let rx = grid.separation(f, j, k, 0);
            let ry = grid.separation(f, j, k, 1);
            // L = -i (r_x d_y - r_y d_x)
            (dy[f] * rx - dx[f] * ry).norm_sqr()
        })
        .sum();
    l2 * grid.volume_element() / phi.norm_sqr()
}

/// Depth of the effective potential `V(r) + L^2 / (2 mu r^2)` at its minimum.
///
/// This is the convention used for "the lowest available state" of an
/// attractive pair: `L = 0` reduces it to `|min_r V(r)|`. When the
/// centrifugal term removes every negative region, `|min_r V(r)|` is used.
pub fn lowest_state_depth(potential: &PairPotential, l_sqr: f64, reduced_mass: f64, r_max: f64) -> f64 {
    const SAMPLES: usize = 4096;
    let bare = (0..=SAMPLES)
        .map(|i| potential.radial_value(r_max * i as f64 / SAMPLES as f64))
        .fold(f64::INFINITY, f64::min);
    if l_sqr <= 0.0 {
        return bare.abs();
    }
    let effective = (1..=SAMPLES)
        .map(|i| {
            let r = r_max * i as f64 / SAMPLES as f64;
            potential.radial_value(r) + l_sqr / (2.0 * reduced_mass * r * r)
        })
        .fold(f64::INFINITY, f64::min);
    if effective < 0.0 {
        effective.abs()
    } else {
        bare.abs()
    }
}

/// Largest potential-energy change available to the interacting component.
///
/// Repulsive pairs (`sign = +1`): `|integral phi* [V phi - (1/mu) d^2 phi / dr^2]|`.
/// Attractive pairs: [`lowest_state_depth`] with the component's relative
/// angular momentum (zero on 1-D grids).
pub fn rate_denominator(state: &HilbertState, potential: &PairPotential, kind: DerivativeKind) -> Result<f64> {
    let grid = grid_of(state)?;
    let phi = normalized_component(state, potential)?;
    let (j, k) = potential.particles;
    let mj = grid.particles()[j].mass;
    let mk = grid.particles()[k].mass;
    let mu = mj * mk / (mj + mk);
    if potential.sign > 0.0 {
        let v = potential.value_field(grid)?;
        let d2 = radial_second_derivative(grid, &phi.amplitudes, potential, kind);
        let total: Complex64 = phi
            .amplitudes
            .par_iter()
            .zip(v.par_iter())
            .zip(d2.par_iter())
            .map(|((a, v), d2)| a.conj() * (a * v - d2 / mu))
            .sum::<Complex64>()
            * grid.volume_element();
        Ok(total.norm())
    } else {
        let l2 = if grid.dims() == 2 {
            relative_angular_momentum_sqr(grid, &phi, potential, kind)
        } else {
            0.0
        };
        let r_max = grid.spec().extent * (grid.dims() as f64).sqrt();
        Ok(lowest_state_depth(potential, l2, mu, r_max))
    }
}

/// Rate parameter of a pair; zero when no interaction is in progress.
pub fn gamma(state: &HilbertState, potential: &PairPotential, kind: DerivativeKind) -> Result<RateParams> {
    let numerator = rate_numerator(state, potential, kind)?;
    if numerator == 0.0 {
        return Ok(RateParams::default());
    }
    let denominator = match rate_denominator(state, potential, kind) {
        Ok(d) => d,
        Err(Error::DegenerateProjection(_)) => return Ok(RateParams::default()),
        Err(e) => return Err(e),
    };
    if denominator <= 0.0 {
        return Ok(RateParams {
            numerator,
            denominator,
            gamma: 0.0,
        });
    }
    Ok(RateParams {
        numerator,
        denominator,
        gamma: numerator / denominator,
    })
}

/// Build the operator for one grid pair.
pub fn build_collapse_operator(
    state: &HilbertState,
    system: &GridSystem,
    potential: &PairPotential,
    gain: f64,
) -> Result<CollapseOperator> {
    let grid = grid_of(state)?;
    let v = potential.value_field(grid)?;
    let mean = diagonal_mean(&v, state);
    let centered = v.iter().map(|x| x - mean).collect();
    // gamma is built from the unscaled potential, so skip it only when nothing would use it
    let rate = if gain == 0.0 {
        RateParams::default()
    } else {
        gamma(state, potential, system.derivative)?
    };
    Ok(CollapseOperator {
        pair: potential.particles,
        centered_potential: centered,
        energy_denominator: system.energy_denominator(potential.particles),
        rate,
        gain,
    })
}

/// Build the operator for one finite-basis coupling (fixed `gamma`).
pub fn build_finite_operator(state: &HilbertState, coupling: &FiniteCoupling, gain: f64) -> CollapseOperator {
    let mean = diagonal_mean(&coupling.potential, state);
    CollapseOperator {
        pair: coupling.pair,
        centered_potential: coupling.potential.iter().map(|x| x - mean).collect(),
        energy_denominator: coupling.energy_denominator,
        rate: RateParams {
            numerator: coupling.gamma,
            denominator: 1.0,
            gamma: coupling.gamma,
        },
        gain,
    }
}

/// Rebuild every pair's operator from the current state.
pub fn collapse_sum(state: &HilbertState, system: &System, gain: f64) -> Result<Vec<CollapseOperator>> {
    match system {
        System::Grid(g) => g
            .potentials
            .iter()
            .map(|p| build_collapse_operator(state, g, p, gain))
            .collect(),
        System::Finite(f) => Ok(f
            .couplings
            .iter()
            .map(|c| build_finite_operator(state, c, gain))
            .collect()),
    }
}

/// Unit system for [`characteristic_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    /// hbar = 1; energy and time in reciprocal units.
    Natural,
    /// Energy in electronvolts, time in seconds.
    SiElectronVolt,
}

/// `hbar / delta_v`: the time over which an interaction changing the
/// potential energy by `delta_v` proceeds.
pub fn characteristic_time(delta_v: f64, units: UnitSystem) -> Result<f64> {
    if !(delta_v > 0.0) || !delta_v.is_finite() {
        return Err(Error::Domain(format!(
            "characteristic time needs a positive energy change, got {delta_v}"
        )));
    }
    Ok(match units {
        UnitSystem::Natural => 1.0 / delta_v,
        UnitSystem::SiElectronVolt => HBAR_SI / (delta_v * ELECTRON_VOLT),
    })
}
