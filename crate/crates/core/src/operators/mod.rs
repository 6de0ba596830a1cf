//! Linear operators on both backends: kinetic energy, total momentum,
//! orbital angular momentum, multiplicative potentials and dense matrices.

mod derivative;
mod potential;

pub use derivative::{
    fourier_multiply, mixed_partial, odd_wavenumber, partial, second_partial, DerivativeKind,
};
pub use potential::{PairPotential, PotentialForm};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::state::{Basis, HilbertState};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// An operator acting on [`HilbertState`] amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Identity,
    /// Pointwise multiplication.
    DiagonalMultiply(Vec<Complex64>),
    /// `sum_p -(1/2 m_p) nabla_p^2` with central differences.
    StencilKinetic { masses: Vec<f64> },
    /// `sum_p -(1/2 m_p) nabla_p^2` in Fourier space.
    SpectralKinetic { masses: Vec<f64> },
    /// Total momentum component `-i sum_p d/dw_{p,component}`.
    Momentum { kind: DerivativeKind, component: usize },
    /// `sum_p (x_p p_{y,p} - y_p p_{x,p})`; two-dimensional grids only.
    AngularMomentumZ { kind: DerivativeKind },
    FiniteMatrix(DMatrix<Complex64>),
}

impl LinearOperator {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LinearOperator::Identity => "Identity",
            LinearOperator::DiagonalMultiply(_) => "DiagonalMultiply",
            LinearOperator::StencilKinetic { .. } => "StencilKinetic",
            LinearOperator::SpectralKinetic { .. } => "SpectralKinetic",
            LinearOperator::Momentum { .. } => "Momentum",
            LinearOperator::AngularMomentumZ { .. } => "AngularMomentumZ",
            LinearOperator::FiniteMatrix(_) => "FiniteMatrix",
        }
    }

    /// Kinetic operator for the particle masses of `grid`.
    pub fn kinetic(grid: &Grid, kind: DerivativeKind) -> Self {
        let masses = grid.particles().iter().map(|p| p.mass).collect();
        match kind {
            DerivativeKind::Stencil => LinearOperator::StencilKinetic { masses },
            DerivativeKind::Spectral => LinearOperator::SpectralKinetic { masses },
        }
    }

    pub fn momentum(kind: DerivativeKind, component: usize) -> Self {
        LinearOperator::Momentum { kind, component }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        LinearOperator::DiagonalMultiply(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn is_hermitian_kind(&self) -> bool {
        match self {
            LinearOperator::DiagonalMultiply(d) => d.iter().all(|z| z.im == 0.0),
            LinearOperator::FiniteMatrix(m) => {
                let n = m.nrows();
                m.ncols() == n
                    && (0..n).all(|i| (0..n).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() < 1e-14))
            }
            _ => true,
        }
    }

    /// Apply to a state.
    pub fn apply(&self, state: &HilbertState) -> Result<HilbertState> {
        let out = self.apply_slice(&state.basis, &state.amplitudes)?;
        Ok(state.with_amplitudes(out))
    }

    /// Apply to raw amplitudes in `basis`.
    pub fn apply_slice(&self, basis: &Basis, data: &[Complex64]) -> Result<Vec<Complex64>> {
        if data.len() != basis.len() {
            return Err(Error::Structural(format!(
                "vector length {} vs basis {}",
                data.len(),
                basis.len()
            )));
        }
        match self {
            LinearOperator::Identity => Ok(data.to_vec()),
            LinearOperator::DiagonalMultiply(d) => {
                if d.len() != data.len() {
                    return Err(Error::Structural(format!(
                        "diagonal length {} vs state {}",
                        d.len(),
                        data.len()
                    )));
                }
                Ok(d.par_iter().zip(data.par_iter()).map(|(a, b)| a * b).collect())
            }
            LinearOperator::FiniteMatrix(m) => {
                if m.nrows() != data.len() || m.ncols() != data.len() {
                    return Err(Error::Structural(format!(
                        "matrix {}x{} vs state {}",
                        m.nrows(),
                        m.ncols(),
                        data.len()
                    )));
                }
                let v = DVector::from_column_slice(data);
                Ok((m * v).as_slice().to_vec())
            }
            LinearOperator::StencilKinetic { masses } | LinearOperator::SpectralKinetic { masses } => {
                let grid = require_grid(basis, self)?;
                if masses.len() != grid.n_particles() {
                    return Err(Error::Structural(format!(
                        "{} masses for {} particles",
                        masses.len(),
                        grid.n_particles()
                    )));
                }
                let kind = if matches!(self, LinearOperator::StencilKinetic { .. }) {
                    DerivativeKind::Stencil
                } else {
                    DerivativeKind::Spectral
                };
                Ok(apply_kinetic(grid, data, masses, kind))
            }
            LinearOperator::Momentum { kind, component } => {
                let grid = require_grid(basis, self)?;
                if *component >= grid.dims() {
                    return Err(Error::UnsupportedOperator(format!(
                        "momentum component {component} on a {}-D grid",
                        grid.dims()
                    )));
                }
                Ok(apply_momentum(grid, data, *component, *kind))
            }
            LinearOperator::AngularMomentumZ { kind } => {
                let grid = require_grid(basis, self)?;
                apply_angular_momentum_z(grid, data, *kind)
            }
        }
    }
}

fn require_grid<'a>(basis: &'a Basis, op: &LinearOperator) -> Result<&'a Grid> {
    basis.grid().map(|g| g.as_ref()).ok_or_else(|| {
        Error::UnsupportedOperator(format!("{} needs a grid basis", op.kind_name()))
    })
}

/// `sum_p -(1/2 m_p) nabla_p^2 psi`, periodic boundaries.
pub fn apply_kinetic(
    grid: &Grid,
    data: &[Complex64],
    masses: &[f64],
    kind: DerivativeKind,
) -> Vec<Complex64> {
    let dims = grid.dims();
    match kind {
        DerivativeKind::Spectral => fourier_multiply(grid, data, |k| {
            let mut t = 0.0;
            for (p, m) in masses.iter().enumerate() {
                for c in 0..dims {
                    let kc = k[p * dims + c];
                    t += kc * kc / (2.0 * m);
                }
            }
            Complex64::new(t, 0.0)
        }),
        DerivativeKind::Stencil => {
            let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
            for (p, m) in masses.iter().enumerate() {
                for c in 0..dims {
                    let d2 = second_partial(grid, data, grid.axis(p, c), kind);
                    let f = -1.0 / (2.0 * m);
                    out.par_iter_mut().zip(d2.par_iter()).for_each(|(o, d)| *o += d * f);
                }
            }
            out
        }
    }
}

/// Total momentum along `component`.
pub fn apply_momentum(
    grid: &Grid,
    data: &[Complex64],
    component: usize,
    kind: DerivativeKind,
) -> Vec<Complex64> {
    let np = grid.n_particles();
    let dims = grid.dims();
    match kind {
        DerivativeKind::Spectral => fourier_multiply(grid, data, |k| {
            let s: f64 = (0..np).map(|p| odd_wavenumber(grid, k[p * dims + component])).sum();
            Complex64::new(s, 0.0)
        }),
        DerivativeKind::Stencil => {
            let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
            for p in 0..np {
                let d = partial(grid, data, grid.axis(p, component), kind);
                out.par_iter_mut().zip(d.par_iter()).for_each(|(o, d)| *o += -I * d);
            }
            out
        }
    }
}

/// `L_z` summed over particles.
pub fn apply_angular_momentum_z(
    grid: &Grid,
    data: &[Complex64],
    kind: DerivativeKind,
) -> Result<Vec<Complex64>> {
    if grid.dims() != 2 {
        return Err(Error::UnsupportedOperator(
            "angular momentum needs two spatial dimensions per particle".into(),
        ));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for p in 0..grid.n_particles() {
        let ax = grid.axis(p, 0);
        let ay = grid.axis(p, 1);
        let dy = partial(grid, data, ay, kind);
        let dx = partial(grid, data, ax, kind);
        out.par_iter_mut().enumerate().for_each(|(f, o)| {
            let x = grid.coordinate(f, ax);
            let y = grid.coordinate(f, ay);
            *o += -I * (dy[f] * x - dx[f] * y);
        });
    }
    Ok(out)
}

/// `|| Q(V psi) - V(Q psi) || / || psi ||` for the potential `v`.
pub fn commutator_residual(q: &LinearOperator, v: &PairPotential, state: &HilbertState) -> Result<f64> {
    let grid = state
        .grid()
        .ok_or_else(|| Error::UnsupportedOperator("pair potentials need a grid basis".into()))?;
    let field = v.value_field(grid)?;
    commutator_residual_field(q, &field, state)
}

/// Commutator residual for an arbitrary real multiplicative field.
pub fn commutator_residual_field(q: &LinearOperator, field: &[f64], state: &HilbertState) -> Result<f64> {
    let n = state.norm();
    if n == 0.0 {
        return Err(Error::Domain("commutator residual of the zero state".into()));
    }
    let vpsi: Vec<Complex64> = state
        .amplitudes
        .par_iter()
        .zip(field.par_iter())
        .map(|(a, v)| a * v)
        .collect();
    let q_vpsi = q.apply_slice(&state.basis, &vpsi)?;
    let q_psi = q.apply_slice(&state.basis, &state.amplitudes)?;
    let w = state.basis.weight();
    let r2: f64 = q_vpsi
        .par_iter()
        .zip(q_psi.par_iter())
        .zip(field.par_iter())
        .map(|((a, b), v)| (a - b * v).norm_sqr())
        .sum::<f64>()
        * w;
    Ok(r2.sqrt() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ParticleSpec};
    use crate::state::{expectation, GaussianPacket};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn one_particle(n: usize, extent: f64, mass: f64) -> Arc<Grid> {
        Grid::new(
            GridSpec::new(1, n, extent).unwrap(),
            vec![ParticleSpec::new("e", mass)],
        )
        .unwrap()
    }

    fn plane_wave(grid: &Arc<Grid>, k: f64) -> HilbertState {
        HilbertState::from_fn(grid, |x| Complex64::from_polar(1.0, k * x[0])).unwrap()
    }

    #[test]
    fn stencil_kinetic_plane_wave_eigenvalue() {
        let m = 1.7;
        let g = one_particle(32, 4.0, m);
        let h = g.spacing();
        let k = 5.0 * PI / 4.0;
        let psi = plane_wave(&g, k);
        let t = LinearOperator::kinetic(&g, DerivativeKind::Stencil).apply(&psi).unwrap();
        let lambda = (1.0 - (k * h).cos()) / (m * h * h);
        for (a, b) in t.amplitudes.iter().zip(&psi.amplitudes) {
            assert!((a - b * lambda).norm() < 1e-11);
        }
    }

    #[test]
    fn spectral_kinetic_plane_wave_eigenvalue() {
        let m = 0.6;
        let g = one_particle(32, 4.0, m);
        let k = 3.0 * PI / 4.0;
        let psi = plane_wave(&g, k);
        let t = LinearOperator::kinetic(&g, DerivativeKind::Spectral).apply(&psi).unwrap();
        for (a, b) in t.amplitudes.iter().zip(&psi.amplitudes) {
            assert!((a - b * (k * k / (2.0 * m))).norm() < 1e-11);
        }
    }

    #[test]
    fn kinetic_of_constant_is_zero() {
        let g = one_particle(16, 2.0, 1.0);
        let psi = HilbertState::from_fn(&g, |_| Complex64::new(0.3, 0.1)).unwrap();
        for kind in [DerivativeKind::Stencil, DerivativeKind::Spectral] {
            let t = LinearOperator::kinetic(&g, kind).apply(&psi).unwrap();
            assert!(t.amplitudes.iter().all(|z| z.norm() < 1e-14));
        }
    }

    #[test]
    fn boosted_gaussian_momentum() {
        let g = one_particle(256, 20.0, 1.0);
        let h = g.spacing();
        let k0 = 1.3;
        let psi = HilbertState::product_gaussians(&g, &[GaussianPacket::new_1d(0.0, k0, 1.5)])
            .unwrap()
            .normalized()
            .unwrap();
        let sym = HilbertState::product_gaussians(&g, &[GaussianPacket::new_1d(0.0, 0.0, 1.5)])
            .unwrap()
            .normalized()
            .unwrap();
        let stencil = LinearOperator::momentum(DerivativeKind::Stencil, 0);
        let spectral = LinearOperator::momentum(DerivativeKind::Spectral, 0);
        assert!(expectation(&stencil, &sym).unwrap().norm() < 1e-10);
        // stencil symbol sin(kh)/h averaged over the packet's momentum spread
        let sigma_k = 1.0 / (2.0 * 1.5);
        let expected = (k0 * h).sin() / h * (-(sigma_k * h).powi(2) / 2.0).exp();
        let p = expectation(&stencil, &psi).unwrap();
        assert!((p.re - expected).abs() < 1e-10, "{} vs {}", p.re, expected);
        assert!(p.im.abs() < 1e-10);
        let ps = expectation(&spectral, &psi).unwrap();
        assert!((ps.re - k0).abs() < 1e-10);
    }

    #[test]
    fn angular_momentum_requires_two_dims() {
        let g = one_particle(16, 2.0, 1.0);
        let psi = plane_wave(&g, 0.0);
        let l = LinearOperator::AngularMomentumZ {
            kind: DerivativeKind::Stencil,
        };
        assert!(matches!(l.apply(&psi), Err(Error::UnsupportedOperator(_))));
    }

    #[test]
    fn angular_momentum_of_symmetric_state_vanishes() {
        let g = Grid::new(
            GridSpec::new(2, 32, 6.0).unwrap(),
            vec![ParticleSpec::new("e", 1.0)],
        )
        .unwrap();
        let psi = HilbertState::from_fn(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            Complex64::new((-r2 / 2.0).exp(), 0.0)
        })
        .unwrap()
        .normalized()
        .unwrap();
        for kind in [DerivativeKind::Stencil, DerivativeKind::Spectral] {
            let l = expectation(&LinearOperator::AngularMomentumZ { kind }, &psi).unwrap();
            assert!(l.norm() < 1e-10);
        }
        // vortex state x + i y carries L_z = 1
        let vortex = HilbertState::from_fn(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            Complex64::new(x[0], x[1]) * (-r2 / 2.0).exp()
        })
        .unwrap()
        .normalized()
        .unwrap();
        let l = expectation(
            &LinearOperator::AngularMomentumZ {
                kind: DerivativeKind::Spectral,
            },
            &vortex,
        )
        .unwrap();
        assert!((l.re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn commutator_with_constant_vanishes() {
        let g = Grid::new(
            GridSpec::new(1, 32, 6.0).unwrap(),
            vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 1.0)],
        )
        .unwrap();
        let psi = HilbertState::product_gaussians(
            &g,
            &[GaussianPacket::new_1d(-1.0, 0.5, 1.0), GaussianPacket::new_1d(1.0, -0.5, 1.0)],
        )
        .unwrap();
        let v = PairPotential::new(PotentialForm::Constant { value: 2.5 }, (0, 1), 1.0);
        for q in [
            LinearOperator::momentum(DerivativeKind::Stencil, 0),
            LinearOperator::kinetic(&g, DerivativeKind::Spectral),
        ] {
            assert!(commutator_residual(&q, &v, &psi).unwrap() < 1e-13);
        }
        let well = PairPotential::new(
            PotentialForm::GaussianWell {
                depth: 1.0,
                width: 1.0,
            },
            (0, 1),
            -1.0,
        );
        let t = LinearOperator::kinetic(&g, DerivativeKind::Spectral);
        assert!(commutator_residual(&t, &well, &psi).unwrap() > 1e-3);
    }
}
