//! Itô integration of the collapse equation
//!
//! ```text
//! d psi = -i H psi dt + V psi dxi - (1/2) V^2 psi dt,   V = sum_{j<k} V_jk
//! ```
//!
//! Each step applies one deterministic Hamiltonian sub-step and then one
//! Euler–Maruyama collapse sub-step with operators rebuilt from the state the
//! kick acts on. A single Wiener process drives every pair.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collapse::{collapse_sum, total_diagonal};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{apply_angular_momentum_z, apply_kinetic, apply_momentum, DerivativeKind};
use crate::state::{diagonal_mean, HilbertState};
use crate::stats::{mean_stderr, wilson_interval, Z95};
use crate::system::{GridSystem, System};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// The global noise `xi(t)`.
///
/// Complex increments are `(dW1 + i dW2) / sqrt(2)` so that `E[dxi* dxi] = dt`
/// and `E[dxi^2] = 0`; real increments are `dW` with `E[dxi^2] = dt`.
#[derive(Debug, Clone)]
pub struct WienerProcess {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    xi: Complex64,
    real: bool,
}

impl WienerProcess {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        WienerProcess {
            seed,
            stream,
            rng,
            xi: Complex64::new(0.0, 0.0),
            real: false,
        }
    }

    pub fn real(seed: u64, stream: u64) -> Self {
        WienerProcess {
            real: true,
            ..WienerProcess::new(seed, stream)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    /// Accumulated `xi(t)`.
    pub fn value(&self) -> Complex64 {
        self.xi
    }

    /// Draw the next increment over `dt`.
    pub fn increment(&mut self, dt: f64) -> Complex64 {
        let a: f64 = StandardNormal.sample(&mut self.rng);
        let d = if self.real {
            Complex64::new(a * dt.sqrt(), 0.0)
        } else {
            let b: f64 = StandardNormal.sample(&mut self.rng);
            Complex64::new(a, b) * (0.5 * dt).sqrt()
        };
        self.xi += d;
        d
    }
}

/// Deterministic sub-step discretization on grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Strang splitting with exact Fourier kinetic propagation.
    #[default]
    SplitStepSpectral,
    /// Crank–Nicolson on the central-difference Hamiltonian.
    CrankNicolsonStencil,
}

impl Scheme {
    /// Kinetic discretization that the scheme propagates.
    pub fn kinetic_kind(self) -> DerivativeKind {
        match self {
            Scheme::SplitStepSpectral => DerivativeKind::Spectral,
            Scheme::CrankNicolsonStencil => DerivativeKind::Stencil,
        }
    }
}

fn default_gain() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_record_every() -> usize {
    1
}
fn default_theta() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Dimensionless multiplier on every collapse operator.
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_true")]
    pub renormalize_each_step: bool,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Branch weight below which (or above one minus which) a run is absorbed.
    #[serde(default = "default_theta")]
    pub theta_abs: f64,
    #[serde(default)]
    pub real_noise: bool,
    /// End the run as soon as the branch weight is absorbed.
    #[serde(default = "default_true")]
    pub stop_on_absorption: bool,
    /// Record momentum, angular momentum and energy expectations.
    #[serde(default = "default_true")]
    pub record_expectations: bool,
}

impl IntegratorConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        IntegratorConfig {
            dt,
            n_steps,
            scheme: Scheme::default(),
            gain: default_gain(),
            renormalize_each_step: true,
            record_every: 1,
            theta_abs: default_theta(),
            real_noise: false,
            stop_on_absorption: true,
            record_expectations: true,
        }
    }

    /// Largest stable `dt` for the stencil scheme: `0.25 h^2 min(m)`.
    pub fn stencil_dt_bound(grid: &Grid) -> f64 {
        let m = grid
            .particles()
            .iter()
            .map(|p| p.mass)
            .fold(f64::INFINITY, f64::min);
        0.25 * grid.spacing() * grid.spacing() * m
    }

    /// Check ranges; errors name the offending `numerics.*` key.
    pub fn validate(&self, system: &System) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("numerics.dt", format!("must be positive, got {}", self.dt)));
        }
        if let (Scheme::CrankNicolsonStencil, System::Grid(g)) = (self.scheme, system) {
            let bound = Self::stencil_dt_bound(&g.grid);
            if self.dt > bound {
                return Err(Error::config(
                    "numerics.dt",
                    format!("{} exceeds the stencil stability bound {bound:e}", self.dt),
                ));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::config("numerics.n_steps", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("numerics.record_every", "must be at least 1"));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::config("physics.gain", format!("must be nonnegative, got {}", self.gain)));
        }
        if !(self.theta_abs > 0.0 && self.theta_abs < 0.5) {
            return Err(Error::config(
                "numerics.theta_abs",
                format!("must lie in (0, 0.5), got {}", self.theta_abs),
            ));
        }
        Ok(())
    }
}

/// Unitary propagator for one `dt`, precomputed for a fixed Hamiltonian.
#[derive(Debug, Clone)]
pub struct HamiltonianStepper {
    kind: StepperKind,
}

#[derive(Debug, Clone)]
enum StepperKind {
    Identity,
    Split {
        grid: Arc<Grid>,
        half_potential: Option<Vec<Complex64>>,
        kinetic: Vec<Complex64>,
    },
    Crank {
        grid: Arc<Grid>,
        masses: Vec<f64>,
        potential: Vec<f64>,
        half_dt: f64,
    },
    Matrix(DMatrix<Complex64>),
}

const CG_TOLERANCE: f64 = 1e-14;
const CG_MAX_ITER: usize = 500;

impl HamiltonianStepper {
    pub fn new(system: &System, scheme: Scheme, dt: f64) -> Result<Self> {
        let kind = match system {
            System::Grid(g) => grid_stepper(g, scheme, dt)?,
            System::Finite(f) => {
                if f.hamiltonian.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                    StepperKind::Identity
                } else {
                    let eig = nalgebra::SymmetricEigen::new(f.hamiltonian.clone());
                    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
                        eig.eigenvalues.len(),
                        eig.eigenvalues.iter().map(|&l| (-I * l * dt).exp()),
                    ));
                    let q = &eig.eigenvectors;
                    StepperKind::Matrix(q * phases * q.adjoint())
                }
            }
        };
        Ok(HamiltonianStepper { kind })
    }

    /// Advance amplitudes by one `dt`.
    pub fn step(&self, data: &mut [Complex64]) -> Result<()> {
        match &self.kind {
            StepperKind::Identity => Ok(()),
            StepperKind::Split {
                grid,
                half_potential,
                kinetic,
            } => {
                if let Some(hp) = half_potential {
                    data.par_iter_mut().zip(hp.par_iter()).for_each(|(a, p)| *a *= p);
                }
                grid.fft(data);
                data.par_iter_mut().zip(kinetic.par_iter()).for_each(|(a, p)| *a *= p);
                grid.ifft(data);
                if let Some(hp) = half_potential {
                    data.par_iter_mut().zip(hp.par_iter()).for_each(|(a, p)| *a *= p);
                }
                Ok(())
            }
            StepperKind::Crank {
                grid,
                masses,
                potential,
                half_dt,
            } => crank_nicolson(grid, masses, potential, *half_dt, data),
            StepperKind::Matrix(u) => {
                let v = u * DVector::from_column_slice(data);
                data.copy_from_slice(v.as_slice());
                Ok(())
            }
        }
    }
}

fn grid_stepper(g: &GridSystem, scheme: Scheme, dt: f64) -> Result<StepperKind> {
    let grid = g.grid.clone();
    let potential = g.total_potential()?;
    let masses = g.masses();
    Ok(match scheme {
        Scheme::SplitStepSpectral => {
            let half_potential = if g.potentials.is_empty() {
                None
            } else {
                Some(potential.iter().map(|&v| (-I * v * (0.5 * dt)).exp()).collect())
            };
            let dims = grid.dims();
            let kinetic = (0..grid.len())
                .into_par_iter()
                .map(|f| {
                    let e: f64 = (0..grid.n_axes())
                        .map(|a| {
                            let k = grid.wavenumber(f, a);
                            k * k / (2.0 * masses[a / dims])
                        })
                        .sum();
                    (-I * e * dt).exp()
                })
                .collect();
            StepperKind::Split {
                grid,
                half_potential,
                kinetic,
            }
        }
        Scheme::CrankNicolsonStencil => StepperKind::Crank {
            grid,
            masses,
            potential,
            half_dt: 0.5 * dt,
        },
    })
}

fn plain_dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.par_iter().zip(b.par_iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Solve `(1 + iK) x = (1 - iK) b` with `K = H dt / 2` by conjugate gradients
/// on `(1 + K^2) x = (1 - iK)^2 b`.
fn crank_nicolson(
    grid: &Grid,
    masses: &[f64],
    potential: &[f64],
    half_dt: f64,
    data: &mut [Complex64],
) -> Result<()> {
    let apply_k = |v: &[Complex64]| -> Vec<Complex64> {
        let mut out = apply_kinetic(grid, v, masses, DerivativeKind::Stencil);
        out.par_iter_mut()
            .zip(v.par_iter().zip(potential.par_iter()))
            .for_each(|(o, (a, p))| *o = (*o + a * p) * half_dt);
        out
    };
    let minus_ik = |v: &[Complex64]| -> Vec<Complex64> {
        let k = apply_k(v);
        v.par_iter().zip(k.par_iter()).map(|(a, b)| a - I * b).collect()
    };
    let normal = |v: &[Complex64]| -> Vec<Complex64> {
        let k2 = apply_k(&apply_k(v));
        v.par_iter().zip(k2.par_iter()).map(|(a, b)| a + b).collect()
    };
    let rhs = minus_ik(&minus_ik(data));
    let rhs_norm = plain_dot(&rhs, &rhs).re.sqrt();
    if rhs_norm == 0.0 {
        return Ok(());
    }
    // first-order guess (1 - iK)(1 - iK)b / (1 + K^2) ~ (1 - 2iK) b
    let mut x = minus_ik(data);
    let mx = normal(&x);
    let mut r: Vec<Complex64> = rhs.par_iter().zip(mx.par_iter()).map(|(a, b)| a - b).collect();
    let mut p = r.clone();
    let mut rr = plain_dot(&r, &r).re;
    for _ in 0..CG_MAX_ITER {
        if rr.sqrt() <= CG_TOLERANCE * rhs_norm {
            data.copy_from_slice(&x);
            return Ok(());
        }
        let mp = normal(&p);
        let alpha = rr / plain_dot(&p, &mp).re;
        x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += pi * alpha);
        r.par_iter_mut().zip(mp.par_iter()).for_each(|(ri, mi)| *ri -= mi * alpha);
        let rr_new = plain_dot(&r, &r).re;
        let beta = rr_new / rr;
        rr = rr_new;
        p.par_iter_mut().zip(r.par_iter()).for_each(|(pi, ri)| *pi = ri + *pi * beta);
    }
    Err(Error::NumericalAbort {
        step: 0,
        reason: format!("Crank-Nicolson solve did not converge (residual {:e})", rr.sqrt() / rhs_norm),
    })
}

/// `psi <- psi + v psi dxi - (1/2) v^2 psi dt` pointwise for a diagonal `v`.
pub fn stochastic_update(data: &mut [Complex64], diagonal: &[f64], dxi: Complex64, dt: f64) {
    data.par_iter_mut().zip(diagonal.par_iter()).for_each(|(a, &v)| {
        *a *= Complex64::new(1.0 - 0.5 * v * v * dt, 0.0) + dxi * v;
    });
}

/// Everything one step saw, handed to observers.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub dt: f64,
    /// State at the start of the step.
    pub start: &'a HilbertState,
    /// After the Hamiltonian sub-step; the collapse operators were built here.
    pub mid: &'a HilbertState,
    /// After the collapse sub-step, before renormalization.
    pub end_raw: &'a HilbertState,
    /// Diagonal of the summed collapse operator (empty when inactive).
    pub collapse_diagonal: &'a [f64],
    pub dxi: Complex64,
    pub gammas: &'a [f64],
}

/// Per-step bookkeeping returned by [`Integrator::ito_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub dxi: Complex64,
    /// `| ||psi|| - 1 |` before renormalization.
    pub norm_drift: f64,
    /// Rate parameter per pair.
    pub gammas: Vec<f64>,
    /// False when every collapse operator vanished and the kick was skipped.
    pub collapse_active: bool,
}

/// Which branch a run ended in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseFlag {
    None,
    ToI,
    ToO,
}

impl CollapseFlag {
    pub fn classify(weight: f64, theta: f64) -> Self {
        if weight > 1.0 - theta {
            CollapseFlag::ToI
        } else if weight < theta {
            CollapseFlag::ToO
        } else {
            CollapseFlag::None
        }
    }
}

/// Expectation of one observable, whole state and per branch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchValues {
    pub total: f64,
    pub interacting: f64,
    pub noninteracting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub step: usize,
    pub time: f64,
    pub norm_drift: f64,
    /// `mu* mu`.
    pub branch_weight: f64,
    /// Sum of the pair rate parameters at this step.
    pub gamma: f64,
    /// One entry per name in [`TrajectoryRecord::quantities`].
    pub expectations: Vec<BranchValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub step: usize,
    pub reason: String,
}

/// Time series of one stochastic realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub stream: u64,
    pub quantities: Vec<String>,
    pub rows: Vec<RecordRow>,
    pub collapse_flag: CollapseFlag,
    pub final_weight: f64,
    pub steps_taken: usize,
    /// First step at which the branch weight left `[theta, 1 - theta]`.
    pub absorbed_at: Option<usize>,
    pub abort: Option<AbortInfo>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.time).collect()
    }

    pub fn norm_drift(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.norm_drift).collect()
    }

    pub fn branch_weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.branch_weight).collect()
    }

    /// Total expectation series of a named quantity.
    pub fn series(&self, quantity: &str) -> Option<Vec<f64>> {
        let i = self.quantities.iter().position(|q| q == quantity)?;
        Some(self.rows.iter().map(|r| r.expectations[i].total).collect())
    }

    /// `|<Q>(T) - <Q>(0)|` for a named quantity.
    pub fn drift(&self, quantity: &str) -> Option<f64> {
        let s = self.series(quantity)?;
        Some((s.last()? - s.first()?).abs())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "time", "norm_drift", "branch_weight", "gamma"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for q in &self.quantities {
            h.push(format!("{q}_total"));
            h.push(format!("{q}_I"));
            h.push(format!("{q}_O"));
        }
        h
    }

    /// One CSV row per recorded step.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(self.csv_header()).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.step.to_string(),
                r.time.to_string(),
                r.norm_drift.to_string(),
                r.branch_weight.to_string(),
                r.gamma.to_string(),
            ];
            for e in &r.expectations {
                rec.push(e.total.to_string());
                rec.push(e.interacting.to_string());
                rec.push(e.noninteracting.to_string());
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Observables recorded along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Observable {
    Momentum(usize),
    AngularMomentumZ,
    Energy,
}

impl Observable {
    fn name(self, dims: usize) -> String {
        match self {
            Observable::Momentum(c) if dims == 1 => {
                debug_assert_eq!(c, 0);
                "momentum".into()
            }
            Observable::Momentum(0) => "momentum_x".into(),
            Observable::Momentum(_) => "momentum_y".into(),
            Observable::AngularMomentumZ => "angular_momentum_z".into(),
            Observable::Energy => "energy".into(),
        }
    }
}

/// Itô integrator for one system and configuration.
#[derive(Debug, Clone)]
pub struct Integrator {
    system: System,
    config: IntegratorConfig,
    stepper: HamiltonianStepper,
    primary: Option<Vec<f64>>,
    observables: Vec<Observable>,
}

impl Integrator {
    pub fn new(system: System, config: IntegratorConfig) -> Result<Self> {
        config.validate(&system)?;
        let stepper = HamiltonianStepper::new(&system, config.scheme, config.dt)?;
        let primary = system.primary_potential()?;
        let mut observables = Vec::new();
        if config.record_expectations {
            if let System::Grid(g) = &system {
                for c in 0..g.grid.dims() {
                    observables.push(Observable::Momentum(c));
                }
                if g.grid.dims() == 2 {
                    observables.push(Observable::AngularMomentumZ);
                }
            }
            observables.push(Observable::Energy);
        }
        Ok(Integrator {
            system,
            config,
            stepper,
            primary,
            observables,
        })
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn stepper(&self) -> &HamiltonianStepper {
        &self.stepper
    }

    fn derivative_kind(&self) -> DerivativeKind {
        match &self.system {
            System::Grid(g) => g.derivative,
            System::Finite(_) => DerivativeKind::Spectral,
        }
    }

    pub fn quantity_names(&self) -> Vec<String> {
        let dims = self.system.grid().map(|g| g.grid.dims()).unwrap_or(1);
        self.observables.iter().map(|o| o.name(dims)).collect()
    }

    /// `mu* mu` of the primary pair; 0 when no pair is defined.
    pub fn branch_weight(&self, state: &HilbertState) -> f64 {
        match &self.primary {
            Some(v) => interacting_weight(v, state),
            None => 0.0,
        }
    }

    /// One step: Hamiltonian sub-step, then collapse sub-step.
    pub fn ito_step(&self, state: &mut HilbertState, wiener: &mut WienerProcess, step: usize) -> Result<StepReport> {
        self.ito_step_observed(state, wiener, step, None)
    }

    pub fn ito_step_observed(
        &self,
        state: &mut HilbertState,
        wiener: &mut WienerProcess,
        step: usize,
        observer: Option<&mut dyn FnMut(&StepView)>,
    ) -> Result<StepReport> {
        let dt = self.config.dt;
        let start = observer.as_ref().map(|_| state.clone());
        self.stepper.step(&mut state.amplitudes).map_err(|e| match e {
            Error::NumericalAbort { reason, .. } => Error::NumericalAbort { step, reason },
            other => other,
        })?;
        state.time += dt;
        let ops = collapse_sum(state, &self.system, self.config.gain)?;
        let gammas: Vec<f64> = ops.iter().map(|o| o.gamma()).collect();
        let dxi = wiener.increment(dt);
        let active = ops.iter().any(|o| !o.is_zero());
        let mid = observer.as_ref().map(|_| state.clone());
        let diagonal = if active {
            let d = total_diagonal(&ops, state.len());
            stochastic_update(&mut state.amplitudes, &d, dxi, dt);
            d
        } else {
            Vec::new()
        };
        let norm = state.norm();
        if !norm.is_finite() || !state.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                reason: "non-finite amplitudes".into(),
            });
        }
        if let Some(obs) = observer {
            let view = StepView {
                step,
                dt,
                start: start.as_ref().unwrap(),
                mid: mid.as_ref().unwrap(),
                end_raw: state,
                collapse_diagonal: &diagonal,
                dxi,
                gammas: &gammas,
            };
            obs(&view);
        }
        if active && self.config.renormalize_each_step {
            if norm == 0.0 {
                return Err(Error::NumericalAbort {
                    step,
                    reason: "state collapsed to zero norm".into(),
                });
            }
            let inv = 1.0 / norm;
            state.amplitudes.par_iter_mut().for_each(|a| *a *= inv);
        }
        Ok(StepReport {
            dxi,
            norm_drift: (norm - 1.0).abs(),
            gammas,
            collapse_active: active,
        })
    }

    fn expectations(&self, state: &HilbertState, mask: Option<&[bool]>) -> Result<Vec<BranchValues>> {
        let kind = self.derivative_kind();
        let kinetic_kind = self.config.scheme.kinetic_kind();
        self.observables
            .iter()
            .map(|&o| {
                let apply = |data: &[Complex64]| -> Result<Vec<Complex64>> {
                    let view = state.with_amplitudes(data.to_vec());
                    match o {
                        Observable::Momentum(c) => Ok(apply_momentum(grid_ref(state)?, data, c, kind)),
                        Observable::AngularMomentumZ => apply_angular_momentum_z(grid_ref(state)?, data, kind),
                        Observable::Energy => self.system.apply_hamiltonian(&view, kinetic_kind),
                    }
                };
                let total = ratio_expectation(&state.amplitudes, &apply(&state.amplitudes)?);
                let (mut vi, mut vo) = (0.0, 0.0);
                if let Some(m) = mask {
                    let split = |keep: bool| -> Vec<Complex64> {
                        state
                            .amplitudes
                            .iter()
                            .zip(m)
                            .map(|(a, &b)| if b == keep { *a } else { Complex64::new(0.0, 0.0) })
                            .collect()
                    };
                    let pi = split(true);
                    let po = split(false);
                    vi = ratio_expectation(&pi, &apply(&pi)?);
                    vo = ratio_expectation(&po, &apply(&po)?);
                }
                Ok(BranchValues {
                    total,
                    interacting: vi,
                    noninteracting: vo,
                })
            })
            .collect()
    }

    fn record_row(&self, state: &HilbertState, step: usize, norm_drift: f64, gamma: f64) -> Result<RecordRow> {
        let mask = self.primary.as_ref().map(|v| {
            let mean = diagonal_mean(v, state);
            v.iter().map(|x| x - mean > 0.0).collect::<Vec<bool>>()
        });
        Ok(RecordRow {
            step,
            time: state.time,
            norm_drift,
            branch_weight: self.branch_weight(state),
            gamma,
            expectations: self.expectations(state, mask.as_deref())?,
        })
    }

    /// Integrate from `initial` with the Wiener stream `(seed, stream)`.
    pub fn run_trajectory(&self, initial: &HilbertState, seed: u64, stream: u64) -> Result<TrajectoryRecord> {
        self.run_trajectory_observed(initial, seed, stream, None::<&mut fn(&StepView)>)
    }

    /// As [`Integrator::run_trajectory`], calling `observer` after every collapse sub-step.
    pub fn run_trajectory_observed<F>(
        &self,
        initial: &HilbertState,
        seed: u64,
        stream: u64,
        mut observer: Option<&mut F>,
    ) -> Result<TrajectoryRecord>
    where
        F: FnMut(&StepView),
    {
        let (record, _) = self.integrate(initial, seed, stream, &mut observer)?;
        Ok(record)
    }

    /// Run and also return the final state.
    pub fn run_with_state(&self, initial: &HilbertState, seed: u64, stream: u64) -> Result<(TrajectoryRecord, HilbertState)> {
        self.integrate(initial, seed, stream, &mut None::<&mut fn(&StepView)>)
    }

    fn integrate<F>(
        &self,
        initial: &HilbertState,
        seed: u64,
        stream: u64,
        observer: &mut Option<&mut F>,
    ) -> Result<(TrajectoryRecord, HilbertState)>
    where
        F: FnMut(&StepView),
    {
        let cfg = &self.config;
        let mut state = initial.clone();
        // an already normalized input is left bit-for-bit untouched
        if cfg.renormalize_each_step && (state.norm() - 1.0).abs() > 1e-12 {
            state.normalize()?;
        }
        let mut wiener = if cfg.real_noise {
            WienerProcess::real(seed, stream)
        } else {
            WienerProcess::new(seed, stream)
        };
        let mut rows = vec![self.record_row(&state, 0, (state.norm() - 1.0).abs(), 0.0)?];
        let mut absorbed_at = None;
        let mut abort = None;
        let mut steps_taken = 0;
        for step in 1..=cfg.n_steps {
            let report = {
                let obs: Option<&mut dyn FnMut(&StepView)> = match observer {
                    Some(f) => Some(&mut **f as &mut dyn FnMut(&StepView)),
                    None => None,
                };
                self.ito_step_observed(&mut state, &mut wiener, step, obs)
            };
            let report = match report {
                Ok(r) => r,
                Err(Error::NumericalAbort { step, reason }) => {
                    abort = Some(AbortInfo { step, reason });
                    break;
                }
                Err(e) => return Err(e),
            };
            steps_taken = step;
            let w = self.branch_weight(&state);
            let absorbed = self.primary.is_some() && CollapseFlag::classify(w, cfg.theta_abs) != CollapseFlag::None;
            if absorbed && absorbed_at.is_none() {
                absorbed_at = Some(step);
            }
            let stop = absorbed && cfg.stop_on_absorption;
            if step % cfg.record_every == 0 || stop || step == cfg.n_steps {
                let gamma = report.gammas.iter().sum();
                rows.push(self.record_row(&state, step, report.norm_drift, gamma)?);
            }
            if stop {
                break;
            }
        }
        let final_weight = self.branch_weight(&state);
        let collapse_flag = if self.primary.is_some() {
            CollapseFlag::classify(final_weight, cfg.theta_abs)
        } else {
            CollapseFlag::None
        };
        Ok((
            TrajectoryRecord {
                seed,
                stream,
                quantities: self.quantity_names(),
                rows,
                collapse_flag,
                final_weight,
                steps_taken,
                absorbed_at,
                abort,
            },
            state,
        ))
    }

    /// Pure Schrödinger evolution with the same deterministic stepper.
    pub fn schrodinger_reference(&self, initial: &HilbertState, n_steps: usize) -> Result<HilbertState> {
        let mut s = initial.clone();
        for step in 1..=n_steps {
            self.stepper.step(&mut s.amplitudes).map_err(|e| match e {
                Error::NumericalAbort { reason, .. } => Error::NumericalAbort { step, reason },
                other => other,
            })?;
            s.time += self.config.dt;
        }
        Ok(s)
    }

    /// Many independent trajectories; stream `i` drives trajectory `i`.
    pub fn run_ensemble(&self, initial: &HilbertState, n_traj: usize, master_seed: u64) -> Result<EnsembleSummary> {
        if n_traj == 0 {
            return Err(Error::config("ensemble.n_traj", "must be at least 1"));
        }
        let outcomes: Vec<Result<TrajectoryOutcome>> = (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let rec = self.run_trajectory(initial, master_seed, i as u64)?;
                Ok(TrajectoryOutcome::from_record(&rec, self.config.record_every))
            })
            .collect();
        let outcomes: Vec<TrajectoryOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
        Ok(EnsembleSummary::aggregate(
            &outcomes,
            master_seed,
            self.branch_weight(&initial.clone().normalized()?),
            self.config.dt,
            self.config.record_every,
            &self.quantity_names(),
        ))
    }

    /// Full records for every trajectory, in stream order.
    pub fn run_ensemble_records(&self, initial: &HilbertState, n_traj: usize, master_seed: u64) -> Result<Vec<TrajectoryRecord>> {
        (0..n_traj)
            .into_par_iter()
            .map(|i| self.run_trajectory(initial, master_seed, i as u64))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

fn grid_ref(state: &HilbertState) -> Result<&Grid> {
    state
        .grid()
        .map(|g| g.as_ref())
        .ok_or_else(|| Error::UnsupportedOperator("observable needs a grid basis".into()))
}

fn ratio_expectation(psi: &[Complex64], q_psi: &[Complex64]) -> f64 {
    let n: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    if n == 0.0 {
        return 0.0;
    }
    plain_dot(psi, q_psi).re / n
}

/// Weight of the points where `v - <v>` is strictly positive.
pub fn interacting_weight(v: &[f64], state: &HilbertState) -> f64 {
    let mean = diagonal_mean(v, state);
    let (inside, total) = state
        .amplitudes
        .par_iter()
        .zip(v.par_iter())
        .map(|(a, x)| {
            let p = a.norm_sqr();
            (if x - mean > 0.0 { p } else { 0.0 }, p)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// Pointwise change of `psi* psi` over one step, split as
/// `2 Im(psi* H psi) dt` (Hamiltonian) and `psi* V psi (dxi* + dxi)` (stochastic).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityChange {
    pub hamiltonian: Vec<f64>,
    pub stochastic: Vec<f64>,
    /// `|psi_end|^2 - |psi_start|^2` before renormalization.
    pub measured: Vec<f64>,
    /// Quadrature weight of the basis.
    pub weight: f64,
}

impl DensityChange {
    fn integrate(&self, f: &[f64], mask: Option<&[bool]>) -> f64 {
        let s: f64 = match mask {
            Some(m) => f.iter().zip(m).filter(|(_, &b)| b).map(|(x, _)| x).sum(),
            None => f.iter().sum(),
        };
        s * self.weight
    }

    pub fn integrated_stochastic(&self, mask: Option<&[bool]>) -> f64 {
        self.integrate(&self.stochastic, mask)
    }

    pub fn integrated_hamiltonian(&self, mask: Option<&[bool]>) -> f64 {
        self.integrate(&self.hamiltonian, mask)
    }

    pub fn integrated_measured(&self, mask: Option<&[bool]>) -> f64 {
        self.integrate(&self.measured, mask)
    }

    /// `measured - hamiltonian - stochastic` pointwise.
    pub fn remainder(&self) -> Vec<f64> {
        self.measured
            .iter()
            .zip(&self.hamiltonian)
            .zip(&self.stochastic)
            .map(|((m, h), s)| m - h - s)
            .collect()
    }

    /// Weighted L2 norm of [`DensityChange::remainder`].
    pub fn remainder_norm(&self) -> f64 {
        (self.remainder().iter().map(|r| r * r).sum::<f64>() * self.weight).sqrt()
    }
}

/// Reconstruct the two terms of the density change for one observed step.
///
/// The Hamiltonian term is evaluated on the start state and the stochastic
/// term on the state the kick was applied to.
pub fn density_change_decomposition(view: &StepView, system: &System, kinetic: DerivativeKind) -> Result<DensityChange> {
    let h_psi = system.apply_hamiltonian(view.start, kinetic)?;
    let hamiltonian = view
        .start
        .amplitudes
        .par_iter()
        .zip(h_psi.par_iter())
        .map(|(a, h)| 2.0 * (a.conj() * h).im * view.dt)
        .collect();
    let factor = 2.0 * view.dxi.re;
    let stochastic = if view.collapse_diagonal.is_empty() {
        vec![0.0; view.mid.len()]
    } else {
        view.mid
            .amplitudes
            .par_iter()
            .zip(view.collapse_diagonal.par_iter())
            .map(|(a, v)| a.norm_sqr() * v * factor)
            .collect()
    };
    let measured = view
        .end_raw
        .amplitudes
        .par_iter()
        .zip(view.start.amplitudes.par_iter())
        .map(|(e, s)| e.norm_sqr() - s.norm_sqr())
        .collect();
    Ok(DensityChange {
        hamiltonian,
        stochastic,
        measured,
        weight: view.start.basis.weight(),
    })
}

/// Compact per-trajectory result used for ensemble statistics.
#[derive(Debug, Clone, PartialEq)]
struct TrajectoryOutcome {
    flag: CollapseFlag,
    absorbed_at: Option<usize>,
    aborted: bool,
    /// Branch weight at steps `0, r, 2r, ...`.
    weights: Vec<f64>,
    max_norm_drift: f64,
    drifts: Vec<f64>,
}

impl TrajectoryOutcome {
    fn from_record(rec: &TrajectoryRecord, record_every: usize) -> Self {
        let weights = rec
            .rows
            .iter()
            .filter(|r| r.step % record_every == 0)
            .map(|r| r.branch_weight)
            .collect();
        TrajectoryOutcome {
            flag: rec.collapse_flag,
            absorbed_at: rec.absorbed_at,
            aborted: rec.abort.is_some(),
            weights,
            max_norm_drift: rec.rows.iter().map(|r| r.norm_drift).fold(0.0, f64::max),
            drifts: rec.quantities.iter().map(|q| rec.drift(q).unwrap_or(0.0)).collect(),
        }
    }
}

/// Ensemble mean of the branch weight at one recorded step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub step: usize,
    pub time: f64,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_traj: usize,
    pub master_seed: u64,
    pub initial_weight: f64,
    pub to_interacting: usize,
    pub to_noninteracting: usize,
    pub unabsorbed: usize,
    pub aborted: usize,
    pub freq_interacting: f64,
    /// 95% Wilson interval.
    pub ci_interacting: (f64, f64),
    pub freq_noninteracting: f64,
    pub ci_noninteracting: (f64, f64),
    /// Mean step of absorption over absorbed trajectories.
    pub mean_absorption_steps: Option<f64>,
    /// `E[mu* mu]` per recorded step; absorbed runs hold their final value.
    pub weight_series: Vec<WeightPoint>,
    pub max_norm_drift: f64,
    /// Mean `|<Q>(T) - <Q>(0)|` per recorded quantity.
    pub mean_drifts: Vec<(String, f64)>,
}

impl EnsembleSummary {
    fn aggregate(
        outcomes: &[TrajectoryOutcome],
        master_seed: u64,
        initial_weight: f64,
        dt: f64,
        record_every: usize,
        quantities: &[String],
    ) -> Self {
        let n = outcomes.len();
        let count = |f: CollapseFlag| outcomes.iter().filter(|o| o.flag == f && !o.aborted).count();
        let to_i = count(CollapseFlag::ToI);
        let to_o = count(CollapseFlag::ToO);
        let aborted = outcomes.iter().filter(|o| o.aborted).count();
        let absorbed: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.absorbed_at.map(|s| s as f64))
            .collect();
        let len = outcomes.iter().map(|o| o.weights.len()).max().unwrap_or(0);
        let weight_series = (0..len)
            .map(|i| {
                let xs: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.weights.get(i).or(o.weights.last()).copied())
                    .collect();
                let (mean, std_err) = mean_stderr(&xs);
                WeightPoint {
                    step: i * record_every,
                    time: (i * record_every) as f64 * dt,
                    mean,
                    std_err,
                }
            })
            .collect();
        let mean_drifts = quantities
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let s: f64 = outcomes.iter().map(|o| o.drifts.get(qi).copied().unwrap_or(0.0)).sum();
                (q.clone(), s / n as f64)
            })
            .collect();
        EnsembleSummary {
            n_traj: n,
            master_seed,
            initial_weight,
            to_interacting: to_i,
            to_noninteracting: to_o,
            unabsorbed: n - to_i - to_o - aborted,
            aborted,
            freq_interacting: to_i as f64 / n as f64,
            ci_interacting: wilson_interval(to_i, n, Z95),
            freq_noninteracting: to_o as f64 / n as f64,
            ci_noninteracting: wilson_interval(to_o, n, Z95),
            mean_absorption_steps: if absorbed.is_empty() {
                None
            } else {
                Some(absorbed.iter().sum::<f64>() / absorbed.len() as f64)
            },
            weight_series,
            max_norm_drift: outcomes.iter().map(|o| o.max_norm_drift).fold(0.0, f64::max),
            mean_drifts,
        }
    }

    /// Largest `|E[mu* mu](t) - mu* mu(0)|` in units of its standard error.
    pub fn max_martingale_deviation_sigma(&self) -> f64 {
        self.weight_series
            .iter()
            .skip(1)
            .map(|p| {
                let d = (p.mean - self.initial_weight).abs();
                if p.std_err > 0.0 {
                    d / p.std_err
                } else if d < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}
