//! Physical systems: what the Hamiltonian is and which pairs drive collapse.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::{apply_kinetic, DerivativeKind, LinearOperator, PairPotential};
use crate::state::{Basis, HilbertState};

/// Particles on a grid interacting through pair potentials.
///
/// The same potentials enter the Hamiltonian and drive collapse.
#[derive(Debug, Clone)]
pub struct GridSystem {
    pub grid: Arc<Grid>,
    pub potentials: Vec<PairPotential>,
    /// Speed of light in the simulation's natural units.
    pub c: f64,
    /// Discretization used for gradients inside rate and energy integrals.
    pub derivative: DerivativeKind,
}

impl GridSystem {
    pub fn new(grid: Arc<Grid>, potentials: Vec<PairPotential>, c: f64) -> Result<Self> {
        for p in &potentials {
            p.validate(grid.n_particles())?;
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("speed of light must be positive, got {c}")));
        }
        Ok(GridSystem {
            grid,
            potentials,
            c,
            derivative: DerivativeKind::Spectral,
        })
    }

    pub fn with_derivative(mut self, kind: DerivativeKind) -> Self {
        self.derivative = kind;
        self
    }

    pub fn masses(&self) -> Vec<f64> {
        self.grid.particles().iter().map(|p| p.mass).collect()
    }

    /// `(m_j + m_k) c^2` for a pair.
    pub fn energy_denominator(&self, pair: (usize, usize)) -> f64 {
        let ps = self.grid.particles();
        ps[pair.0].rest_energy(self.c) + ps[pair.1].rest_energy(self.c)
    }

    /// Sum of all pair potentials at every grid point.
    pub fn total_potential(&self) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.grid.len()];
        for p in &self.potentials {
            let v = p.value_field(&self.grid)?;
            total.par_iter_mut().zip(v.par_iter()).for_each(|(t, x)| *t += x);
        }
        Ok(total)
    }
}

/// One collapse-driving pair on a finite basis.
///
/// There is no spatial structure to differentiate on a finite basis, so the
/// rate parameter is supplied directly.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteCoupling {
    pub pair: (usize, usize),
    /// Diagonal of the pair potential in the basis.
    pub potential: Vec<f64>,
    pub gamma: f64,
    /// `(m_j + m_k) c^2`.
    pub energy_denominator: f64,
}

/// A few-level model: dense Hamiltonian plus diagonal couplings.
#[derive(Debug, Clone)]
pub struct FiniteSystem {
    pub labels: Arc<Vec<String>>,
    pub hamiltonian: DMatrix<Complex64>,
    pub couplings: Vec<FiniteCoupling>,
}

impl FiniteSystem {
    pub fn new(
        labels: Vec<String>,
        hamiltonian: DMatrix<Complex64>,
        couplings: Vec<FiniteCoupling>,
    ) -> Result<Self> {
        let n = labels.len();
        if hamiltonian.nrows() != n || hamiltonian.ncols() != n {
            return Err(Error::Structural(format!(
                "Hamiltonian is {}x{} for {} basis states",
                hamiltonian.nrows(),
                hamiltonian.ncols(),
                n
            )));
        }
        if !LinearOperator::FiniteMatrix(hamiltonian.clone()).is_hermitian_kind() {
            return Err(Error::Domain("Hamiltonian must be Hermitian".into()));
        }
        for c in &couplings {
            if c.potential.len() != n {
                return Err(Error::Structural("coupling length mismatch".into()));
            }
            if !(c.gamma >= 0.0) {
                return Err(Error::Domain("gamma must be nonnegative".into()));
            }
            if !(c.energy_denominator > 0.0) {
                return Err(Error::Domain("energy denominator must be positive".into()));
            }
        }
        Ok(FiniteSystem {
            labels: Arc::new(labels),
            hamiltonian,
            couplings,
        })
    }

    /// Two-level model `V = diag(v, 0)`, `H = 0`.
    pub fn two_level(v: f64, gamma: f64, energy_denominator: f64) -> Result<Self> {
        FiniteSystem::new(
            vec!["I".into(), "O".into()],
            DMatrix::zeros(2, 2),
            vec![FiniteCoupling {
                pair: (0, 1),
                potential: vec![v, 0.0],
                gamma,
                energy_denominator,
            }],
        )
    }

    pub fn basis(&self) -> Basis {
        Basis::Finite(self.labels.clone())
    }
}

#[derive(Debug, Clone)]
pub enum System {
    Grid(GridSystem),
    Finite(FiniteSystem),
}

impl System {
    pub fn grid(&self) -> Option<&GridSystem> {
        match self {
            System::Grid(g) => Some(g),
            System::Finite(_) => None,
        }
    }

    /// `H psi`. Grid Hamiltonians use the kinetic discretization `kind`.
    pub fn apply_hamiltonian(&self, state: &HilbertState, kind: DerivativeKind) -> Result<Vec<Complex64>> {
        match self {
            System::Grid(g) => {
                let grid = state
                    .grid()
                    .ok_or_else(|| Error::Structural("grid system with a finite state".into()))?;
                let mut out = apply_kinetic(grid, &state.amplitudes, &g.masses(), kind);
                let v = g.total_potential()?;
                out.par_iter_mut()
                    .zip(v.par_iter())
                    .zip(state.amplitudes.par_iter())
                    .for_each(|((o, v), a)| *o += a * v);
                Ok(out)
            }
            System::Finite(f) => {
                LinearOperator::FiniteMatrix(f.hamiltonian.clone()).apply_slice(&state.basis, &state.amplitudes)
            }
        }
    }

    /// Diagonal potential of the first coupling; defines the recorded branch split.
    pub fn primary_potential(&self) -> Result<Option<Vec<f64>>> {
        match self {
            System::Grid(g) => match g.potentials.first() {
                Some(p) => Ok(Some(p.value_field(&g.grid)?)),
                None => Ok(None),
            },
            System::Finite(f) => Ok(f.couplings.first().map(|c| c.potential.clone())),
        }
    }
}
