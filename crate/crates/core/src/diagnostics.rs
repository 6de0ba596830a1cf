//! Conservation diagnostics for the collapse sub-step.
//!
//! For an observable `Q` the collapse sub-step changes `psi* Q psi` pointwise by
//!
//! ```text
//! -1/2 psi* [V^2 Q + Q V^2] psi dt + psi* V Q V psi dt
//!     + psi* V Q psi dxi* + psi* Q V psi dxi
//! ```
//!
//! which equals `psi* V Q psi (dxi* + dxi)` whenever `[Q, V] = 0`. The residual
//! of that identity isolates the discretization error of the commutator.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collapse::CollapseOperator;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{apply_angular_momentum_z, apply_kinetic, apply_momentum, partial, DerivativeKind, LinearOperator};
use crate::sde::{Integrator, StepView, TrajectoryRecord};
use crate::state::HilbertState;
use crate::system::{GridSystem, System};

/// Conserved quantity under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Momentum { component: usize },
    AngularMomentumZ,
    Energy,
}

impl Quantity {
    /// Column name used in trajectory records.
    pub fn record_name(&self, dims: usize) -> &'static str {
        match self {
            Quantity::Momentum { .. } if dims == 1 => "momentum",
            Quantity::Momentum { component: 0 } => "momentum_x",
            Quantity::Momentum { .. } => "momentum_y",
            Quantity::AngularMomentumZ => "angular_momentum_z",
            Quantity::Energy => "energy",
        }
    }
}

/// `Q psi` for a quantity on a grid system.
pub fn apply_quantity(
    quantity: Quantity,
    system: &System,
    state: &HilbertState,
    data: &[Complex64],
    derivative: DerivativeKind,
    kinetic: DerivativeKind,
) -> Result<Vec<Complex64>> {
    match quantity {
        Quantity::Momentum { component } => {
            let grid = grid_of(state)?;
            if component >= grid.dims() {
                return Err(Error::UnsupportedOperator(format!("momentum component {component}")));
            }
            Ok(apply_momentum(grid, data, component, derivative))
        }
        Quantity::AngularMomentumZ => apply_angular_momentum_z(grid_of(state)?, data, derivative),
        Quantity::Energy => system.apply_hamiltonian(&state.with_amplitudes(data.to_vec()), kinetic),
    }
}

fn grid_of(state: &HilbertState) -> Result<&Grid> {
    state
        .grid()
        .map(|g| g.as_ref())
        .ok_or_else(|| Error::UnsupportedOperator("grid basis required".into()))
}

fn scale(v: &[f64], data: &[Complex64]) -> Vec<Complex64> {
    v.par_iter().zip(data.par_iter()).map(|(a, b)| b * a).collect()
}

/// Weighted L2 norm of the pointwise difference between the actual collapse
/// change of `psi* Q psi` and `psi* V Q psi (dxi* + dxi)`, divided by `<psi|psi>`.
///
/// `apply_q` maps amplitudes to `Q` applied to them; `diagonal` is the summed
/// collapse operator.
pub fn pointwise_proportionality_residual<F>(
    state: &HilbertState,
    diagonal: &[f64],
    dxi: Complex64,
    dt: f64,
    apply_q: F,
) -> Result<f64>
where
    F: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    let psi = &state.amplitudes;
    if diagonal.is_empty() || diagonal.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if diagonal.len() != psi.len() {
        return Err(Error::Structural("collapse diagonal length mismatch".into()));
    }
    let v2: Vec<f64> = diagonal.iter().map(|v| v * v).collect();
    let q_psi = apply_q(psi)?;
    let v_psi = scale(diagonal, psi);
    let q_v_psi = apply_q(&v_psi)?;
    let q_v2_psi = apply_q(&scale(&v2, psi))?;
    let dxi_c = dxi.conj();
    let sum_sq: f64 = (0..psi.len())
        .into_par_iter()
        .map(|i| {
            let c = psi[i].conj();
            let v = diagonal[i];
            let lhs = -0.5 * c * (q_psi[i] * v2[i] + q_v2_psi[i]) * dt
                + c * v * q_v_psi[i] * dt
                + c * v * q_psi[i] * dxi_c
                + c * q_v_psi[i] * dxi;
            let rhs = c * v * q_psi[i] * (dxi_c + dxi);
            (lhs - rhs).norm_sqr()
        })
        .sum();
    let w = state.basis.weight();
    Ok((sum_sq * w).sqrt() / state.norm_sqr())
}

/// [`pointwise_proportionality_residual`] for a named quantity.
pub fn pointwise_proportionality_check(
    state: &HilbertState,
    system: &System,
    diagonal: &[f64],
    dxi: Complex64,
    dt: f64,
    quantity: Quantity,
    derivative: DerivativeKind,
) -> Result<f64> {
    pointwise_proportionality_residual(state, diagonal, dxi, dt, |d| {
        apply_quantity(quantity, system, state, d, derivative, derivative)
    })
}

/// Residual for an arbitrary operator.
pub fn pointwise_proportionality_operator(
    state: &HilbertState,
    diagonal: &[f64],
    dxi: Complex64,
    dt: f64,
    q: &LinearOperator,
) -> Result<f64> {
    pointwise_proportionality_residual(state, diagonal, dxi, dt, |d| q.apply_slice(&state.basis, d))
}

/// Conservation summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub quantity: Quantity,
    /// Identity residual at every step where collapse was active.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `|<Q>(T) - <Q>(0)|` of normalized expectations.
    pub drift: f64,
    /// `drift / |<Q>(0)|`, or the drift itself when `<Q>(0) = 0`.
    pub relative_drift: f64,
    pub h: f64,
    pub dt: f64,
    pub gain: f64,
    pub seed: u64,
    pub config_hash: Option<String>,
}

impl ConservationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Drift of a recorded quantity; `None` when it was not recorded.
pub fn conserved_drift(record: &TrajectoryRecord, name: &str) -> Option<(f64, f64)> {
    let s = record.series(name)?;
    let first = *s.first()?;
    let drift = (s.last()? - first).abs();
    let rel = if first != 0.0 { drift / first.abs() } else { drift };
    Some((drift, rel))
}

/// Run one trajectory and collect the identity residual at every step plus
/// the cumulative drift of `quantity`.
pub fn conservation_run(
    integrator: &Integrator,
    initial: &HilbertState,
    seed: u64,
    quantity: Quantity,
) -> Result<(ConservationReport, TrajectoryRecord)> {
    let system = integrator.system();
    let (derivative, h, dims) = match system {
        System::Grid(g) => (g.derivative, g.grid.spacing(), g.grid.dims()),
        System::Finite(_) => (DerivativeKind::Spectral, 0.0, 1),
    };
    let mut residuals = Vec::new();
    let mut failure = None;
    let mut observe = |v: &StepView| {
        if v.collapse_diagonal.is_empty() || failure.is_some() {
            return;
        }
        match pointwise_proportionality_check(v.mid, system, v.collapse_diagonal, v.dxi, v.dt, quantity, derivative) {
            Ok(r) => residuals.push(r),
            Err(e) => failure = Some(e),
        }
    };
    let record = integrator.run_trajectory_observed(initial, seed, 0, Some(&mut observe))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let name = quantity.record_name(dims);
    let (drift, relative_drift) = conserved_drift(&record, name)
        .ok_or_else(|| Error::Domain(format!("{name} was not recorded")))?;
    let cfg = integrator.config();
    Ok((
        ConservationReport {
            quantity,
            max_residual: residuals.iter().copied().fold(0.0, f64::max),
            residuals,
            drift,
            relative_drift,
            h,
            dt: cfg.dt,
            gain: cfg.gain,
            seed,
            config_hash: None,
        },
        record,
    ))
}

/// The three pieces by which the collapse sub-step fails to commute with the
/// kinetic energy, integrated over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeviation {
    /// `-sum_p (1/m_p) integral psi* grad_p V . grad_p psi dxi`.
    pub gradient_term: Complex64,
    /// `-sum_p (1/2m_p) integral psi* (lap_p V) psi dxi`.
    pub laplacian_term: Complex64,
    /// `sum_p (1/2m_p) integral |psi|^2 |grad_p V|^2 dt`; never negative.
    pub positive_definite_term: f64,
}

impl EnergyDeviation {
    /// Gradient plus Laplacian term.
    pub fn middle(&self) -> Complex64 {
        self.gradient_term + self.laplacian_term
    }
}

/// Evaluate the energy-deviation integrals for operators built on `state`.
///
/// With `dxi = 1` and `dt = 0` the middle terms are the coefficient of `dxi`.
pub fn energy_deviation_terms(
    state: &HilbertState,
    system: &GridSystem,
    ops: &[CollapseOperator],
    dxi: Complex64,
    dt: f64,
) -> Result<EnergyDeviation> {
    let grid = grid_of(state)?;
    let psi = &state.amplitudes;
    let n = psi.len();
    let masses = system.masses();
    let mut grad_total = Complex64::new(0.0, 0.0);
    let mut lap_total = Complex64::new(0.0, 0.0);
    let mut pos_total = 0.0;
    for p in 0..grid.n_particles() {
        let inv_m = 1.0 / masses[p];
        let mut lap = vec![0.0; n];
        let mut grads = vec![vec![0.0; n]; grid.dims()];
        let mut any = false;
        for (op, pot) in ops.iter().zip(&system.potentials) {
            let c = op.coefficient();
            if c == 0.0 || (pot.particles.0 != p && pot.particles.1 != p) {
                continue;
            }
            any = true;
            let l = pot.laplacian_field(grid, p)?;
            lap.par_iter_mut().zip(l.par_iter()).for_each(|(a, b)| *a += c * b);
            for (comp, g) in grads.iter_mut().enumerate() {
                let gv = pot.gradient_field(grid, p, comp)?;
                g.par_iter_mut().zip(gv.par_iter()).for_each(|(a, b)| *a += c * b);
            }
        }
        if !any {
            continue;
        }
        let lap_int: f64 = psi.par_iter().zip(lap.par_iter()).map(|(a, l)| a.norm_sqr() * l).sum();
        lap_total += -0.5 * inv_m * lap_int;
        let mut g2 = vec![0.0; n];
        for (comp, g) in grads.iter().enumerate() {
            let d = partial(grid, psi, grid.axis(p, comp), system.derivative);
            let s: Complex64 = psi
                .par_iter()
                .zip(d.par_iter())
                .zip(g.par_iter())
                .map(|((a, d), g)| a.conj() * d * g)
                .sum();
            grad_total += -inv_m * s;
            g2.par_iter_mut().zip(g.par_iter()).for_each(|(a, b)| *a += b * b);
        }
        let pos: f64 = psi.par_iter().zip(g2.par_iter()).map(|(a, g)| a.norm_sqr() * g).sum();
        pos_total += 0.5 * inv_m * pos;
    }
    let w = grid.volume_element();
    Ok(EnergyDeviation {
        gradient_term: grad_total * w * dxi,
        laplacian_term: lap_total * w * dxi,
        positive_definite_term: pos_total * w * dt,
    })
}

/// Kinetic energy expectation `<T>` (normalized).
pub fn kinetic_expectation(state: &HilbertState, masses: &[f64], kind: DerivativeKind) -> Result<f64> {
    let grid = grid_of(state)?;
    let t = apply_kinetic(grid, &state.amplitudes, masses, kind);
    let num: Complex64 = state.amplitudes.par_iter().zip(t.par_iter()).map(|(a, b)| a.conj() * b).sum();
    Ok(num.re * grid.volume_element() / state.norm_sqr())
}

/// Reference sizes of the nonrelativistic bookkeeping gaps, with
/// `x = KE / (M c^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBenchmark {
    pub ratio: f64,
    /// `3/2 x`: first relativistic kinetic correction, relative to `KE`.
    pub first_order: f64,
    /// `5/2 x^2`.
    pub second_order: f64,
    /// `(v/c) x`, with `v = sqrt(2 KE / M)`.
    pub radiative: f64,
    /// `x^2`.
    pub antiparticle: f64,
}

pub fn deviation_ratio_benchmark(delta_ke: f64, total_mass: f64, c: f64) -> Result<DeviationBenchmark> {
    if !(delta_ke >= 0.0) || !(total_mass > 0.0) || !(c > 0.0) {
        return Err(Error::Domain("need KE >= 0, M > 0, c > 0".into()));
    }
    let x = delta_ke / (total_mass * c * c);
    let v_over_c = (2.0 * delta_ke / total_mass).sqrt() / c;
    Ok(DeviationBenchmark {
        ratio: x,
        first_order: 1.5 * x,
        second_order: 2.5 * x * x,
        radiative: v_over_c * x,
        antiparticle: x * x,
    })
}

/// Accumulated energy bookkeeping over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDeviationStudy {
    /// `sqrt(sum_n |c_n|^2 dt)`, `c_n` the coefficient of `dxi` at step `n`.
    pub deviation_rms: f64,
    /// Largest `|<T>(t) - <T>(0)|` along the run.
    pub delta_ke: f64,
    /// `deviation_rms / delta_ke`.
    pub deviation_ratio: f64,
    /// `delta_ke / ((m_j + m_k) c^2)`.
    pub expected_ratio: f64,
    /// Sum of the positive-definite term over the run.
    pub positive_total: f64,
    /// Smallest per-step positive-definite term.
    pub positive_min: f64,
    /// Steps with active collapse.
    pub active_steps: usize,
}

impl EnergyDeviationStudy {
    /// `deviation_ratio / expected_ratio`.
    pub fn agreement(&self) -> f64 {
        self.deviation_ratio / self.expected_ratio
    }
}

/// Integrate one trajectory of a single-pair grid system and accumulate the
/// energy-deviation terms.
pub fn energy_deviation_study(integrator: &Integrator, initial: &HilbertState, seed: u64) -> Result<EnergyDeviationStudy> {
    let grid_system = integrator
        .system()
        .grid()
        .ok_or_else(|| Error::UnsupportedOperator("energy deviation needs a grid system".into()))?
        .clone();
    let pair = grid_system
        .potentials
        .first()
        .ok_or_else(|| Error::Domain("no pair potential".into()))?
        .particles;
    let masses = grid_system.masses();
    let kind = integrator.config().scheme.kinetic_kind();
    let gain = integrator.config().gain;
    let t0 = kinetic_expectation(initial, &masses, kind)?;
    let mut sum_c2 = 0.0;
    let mut delta_ke: f64 = 0.0;
    let mut positive_total = 0.0;
    let mut positive_min = f64::INFINITY;
    let mut active = 0;
    let mut failure: Option<Error> = None;
    let mut observe = |v: &StepView| {
        if failure.is_some() {
            return;
        }
        let mut run = || -> Result<()> {
            let t = kinetic_expectation(v.end_raw, &masses, kind)?;
            delta_ke = delta_ke.max((t - t0).abs());
            if v.collapse_diagonal.is_empty() {
                return Ok(());
            }
            let ops = crate::collapse::collapse_sum(v.mid, &System::Grid(grid_system.clone()), gain)?;
            let coeff = energy_deviation_terms(v.mid, &grid_system, &ops, Complex64::new(1.0, 0.0), 0.0)?;
            let last = energy_deviation_terms(v.mid, &grid_system, &ops, Complex64::new(0.0, 0.0), v.dt)?;
            sum_c2 += coeff.middle().norm_sqr() * v.dt;
            positive_total += last.positive_definite_term;
            positive_min = positive_min.min(last.positive_definite_term);
            active += 1;
            Ok(())
        };
        if let Err(e) = run() {
            failure = Some(e);
        }
    };
    integrator.run_trajectory_observed(initial, seed, 0, Some(&mut observe))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let deviation_rms = sum_c2.sqrt();
    let expected_ratio = delta_ke / grid_system.energy_denominator(pair);
    Ok(EnergyDeviationStudy {
        deviation_rms,
        delta_ke,
        deviation_ratio: if delta_ke > 0.0 { deviation_rms / delta_ke } else { f64::NAN },
        expected_ratio,
        positive_total,
        positive_min: if active > 0 { positive_min } else { 0.0 },
        active_steps: active,
    })
}

/// One row of a grid-refinement study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub points_per_axis: usize,
    pub h: f64,
    pub residual: f64,
    pub drift: f64,
}

/// `log2` of successive error ratios; 2 means second order.
pub fn observed_orders(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

pub fn write_refinement_csv<W: std::io::Write>(rows: &[RefinementRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["points_per_axis", "h", "residual", "drift"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.points_per_axis.to_string(),
            r.h.to_string(),
            r.residual.to_string(),
            r.drift.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collapse::{build_collapse_operator, total_diagonal};
    use crate::grid::{GridSpec, ParticleSpec};
    use crate::operators::{PairPotential, PotentialForm};
    use crate::state::GaussianPacket;

    fn scattering(n: usize, form: PotentialForm, sign: f64) -> (GridSystem, HilbertState) {
        let g = Grid::new(
            GridSpec::new(1, n, 10.0).unwrap(),
            vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 1.0)],
        )
        .unwrap();
        let sys = GridSystem::new(g.clone(), vec![PairPotential::new(form, (0, 1), sign)], 1.0).unwrap();
        let psi = HilbertState::product_gaussians(
            &g,
            &[GaussianPacket::new_1d(-1.2, 0.8, 1.0), GaussianPacket::new_1d(1.2, -0.8, 1.0)],
        )
        .unwrap()
        .normalized()
        .unwrap();
        (sys, psi)
    }

    fn diag(sys: &GridSystem, psi: &HilbertState, gain: f64) -> (Vec<CollapseOperator>, Vec<f64>) {
        let op = build_collapse_operator(psi, sys, &sys.potentials[0], gain).unwrap();
        let d = total_diagonal(std::slice::from_ref(&op), psi.len());
        (vec![op], d)
    }

    #[test]
    fn identity_operator_residual_vanishes() {
        let (sys, psi) = scattering(32, PotentialForm::SoftCoulomb { strength: 1.0, softening: 0.5 }, 1.0);
        let (_, d) = diag(&sys, &psi, 10.0);
        let r = pointwise_proportionality_operator(&psi, &d, Complex64::new(0.03, -0.02), 1e-3, &LinearOperator::Identity)
            .unwrap();
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn constant_potential_residual_is_zero() {
        let (sys, psi) = scattering(32, PotentialForm::Constant { value: 2.0 }, 1.0);
        let (ops, d) = diag(&sys, &psi, 1.0);
        let r = pointwise_proportionality_check(
            &psi,
            &System::Grid(sys.clone()),
            &d,
            Complex64::new(0.1, 0.1),
            1e-3,
            Quantity::Momentum { component: 0 },
            DerivativeKind::Stencil,
        )
        .unwrap();
        assert_eq!(r, 0.0);
        let e = energy_deviation_terms(&psi, &sys, &ops, Complex64::new(1.0, 0.0), 1.0).unwrap();
        assert_eq!(e.middle(), Complex64::new(0.0, 0.0));
        assert_eq!(e.positive_definite_term, 0.0);
    }

    #[test]
    fn momentum_residual_is_second_order_for_stencil() {
        let form = PotentialForm::SoftCoulomb { strength: 1.0, softening: 0.5 };
        let mut res = Vec::new();
        for n in [64, 128] {
            let (sys, psi) = scattering(n, form, 1.0);
            let (_, d) = diag(&sys, &psi, 5.0);
            res.push(
                pointwise_proportionality_check(
                    &psi,
                    &System::Grid(sys.clone()),
                    &d,
                    Complex64::new(0.05, 0.02),
                    1e-3,
                    Quantity::Momentum { component: 0 },
                    DerivativeKind::Stencil,
                )
                .unwrap(),
            );
        }
        let ratio = res[0] / res[1];
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio} residuals {res:?}");
    }

    #[test]
    fn spectral_momentum_residual_is_tiny() {
        let (sys, psi) = scattering(64, PotentialForm::GaussianWell { depth: 1.0, width: 1.0 }, -1.0);
        let (_, d) = diag(&sys, &psi, 10.0);
        let r = pointwise_proportionality_check(
            &psi,
            &System::Grid(sys.clone()),
            &d,
            Complex64::new(0.05, 0.02),
            1e-3,
            Quantity::Momentum { component: 0 },
            DerivativeKind::Spectral,
        )
        .unwrap();
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn benchmark_arithmetic() {
        let b = deviation_ratio_benchmark(1e-3, 1.0, 1.0).unwrap();
        assert!((b.first_order - 1.5e-3).abs() < 1e-18);
        let b = deviation_ratio_benchmark(1e-2, 1.0, 1.0).unwrap();
        assert!((b.second_order - 2.5e-4).abs() < 1e-18);
        let z = deviation_ratio_benchmark(0.0, 1.0, 1.0).unwrap();
        assert_eq!((z.first_order, z.second_order, z.radiative, z.antiparticle), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn orders_from_ratios() {
        let o = observed_orders(&[1.0, 0.25, 0.0625]);
        assert!(o.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }
}
