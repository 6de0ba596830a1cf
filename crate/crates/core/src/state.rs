//! Quantum states on a configuration-space grid or a labelled finite basis,
//! plus the interacting / noninteracting branch split.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::operators::LinearOperator;

/// State space of a [`HilbertState`].
#[derive(Debug, Clone)]
pub enum Basis {
    Grid(Arc<Grid>),
    Finite(Arc<Vec<String>>),
}

impl Basis {
    pub fn finite<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Basis::Finite(Arc::new(labels.into_iter().map(Into::into).collect()))
    }

    pub fn len(&self) -> usize {
        match self {
            Basis::Grid(g) => g.len(),
            Basis::Finite(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one basis point: `h^D` on a grid, 1 otherwise.
    pub fn weight(&self) -> f64 {
        match self {
            Basis::Grid(g) => g.volume_element(),
            Basis::Finite(_) => 1.0,
        }
    }

    pub fn grid(&self) -> Option<&Arc<Grid>> {
        match self {
            Basis::Grid(g) => Some(g),
            Basis::Finite(_) => None,
        }
    }

    pub fn same_as(&self, other: &Basis) -> bool {
        match (self, other) {
            (Basis::Grid(a), Basis::Grid(b)) => Arc::ptr_eq(a, b) || **a == **b,
            (Basis::Finite(a), Basis::Finite(b)) => a == b,
            _ => false,
        }
    }
}

/// Amplitudes over a basis at time `time`.
#[derive(Debug, Clone)]
pub struct HilbertState {
    pub basis: Basis,
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl HilbertState {
    pub fn new(basis: Basis, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != basis.len() {
            return Err(Error::Structural(format!(
                "amplitude length {} does not match basis cardinality {}",
                amplitudes.len(),
                basis.len()
            )));
        }
        Ok(HilbertState {
            basis,
            amplitudes,
            time: 0.0,
        })
    }

    pub fn finite<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        amplitudes: Vec<Complex64>,
    ) -> Result<Self> {
        Self::new(Basis::finite(labels), amplitudes)
    }

    /// Same basis and time, new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: Vec<Complex64>) -> Self {
        debug_assert_eq!(amplitudes.len(), self.amplitudes.len());
        HilbertState {
            basis: self.basis.clone(),
            amplitudes,
            time: self.time,
        }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn grid(&self) -> Option<&Arc<Grid>> {
        self.basis.grid()
    }

    pub fn norm_sqr(&self) -> f64 {
        let w = self.basis.weight();
        self.amplitudes.par_iter().map(|a| a.norm_sqr()).sum::<f64>() * w
    }

    pub fn norm(&self) -> f64 {
        norm(self)
    }

    /// Scale to unit norm. Errors on the zero state.
    pub fn normalize(&mut self) -> Result<f64> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Domain(format!("cannot normalize state with norm {n}")));
        }
        let inv = 1.0 / n;
        self.amplitudes.par_iter_mut().for_each(|a| *a *= inv);
        Ok(n)
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `<self|other>` with the basis quadrature weight.
    pub fn inner(&self, other: &HilbertState) -> Result<Complex64> {
        if !self.basis.same_as(&other.basis) {
            return Err(Error::Structural("inner product across different bases".into()));
        }
        Ok(weighted_inner(&self.amplitudes, &other.amplitudes) * self.basis.weight())
    }

    /// `|psi|^2` at every basis point (no quadrature weight).
    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.amplitudes.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }
}

/// Unweighted `sum conj(a_i) b_i`.
pub(crate) fn weighted_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| x.conj() * y)
        .sum()
}

/// `sqrt(sum |psi_i|^2 w)`.
pub fn norm(state: &HilbertState) -> f64 {
    state.norm_sqr().sqrt()
}

/// `<psi|Q|psi>` for a normalized state.
pub fn expectation(op: &LinearOperator, state: &HilbertState) -> Result<Complex64> {
    let applied = op.apply_slice(&state.basis, &state.amplitudes)?;
    Ok(weighted_inner(&state.amplitudes, &applied) * state.basis.weight())
}

/// `<psi|Q|psi> / <psi|psi>`, for states that are not normalized.
pub fn normalized_expectation(op: &LinearOperator, state: &HilbertState) -> Result<Complex64> {
    let n2 = state.norm_sqr();
    if n2 == 0.0 {
        return Err(Error::Domain("expectation on the zero state".into()));
    }
    Ok(expectation(op, state)? / n2)
}

/// Interacting (I) and noninteracting (O) parts of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDecomposition {
    pub interacting_mask: Vec<bool>,
    pub noninteracting_mask: Vec<bool>,
    /// `mu* mu`: weight of the interacting branch.
    pub weight_interacting: f64,
    /// `nu* nu`: weight of the noninteracting branch.
    pub weight_noninteracting: f64,
}

impl BranchDecomposition {
    /// Build from a centered diagonal field: strictly positive points form I.
    pub fn from_centered(centered: &[f64], state: &HilbertState) -> Self {
        let interacting_mask: Vec<bool> = centered.iter().map(|&v| v > 0.0).collect();
        let noninteracting_mask = interacting_mask.iter().map(|&b| !b).collect();
        let total: f64 = state.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let inside: f64 = state
            .amplitudes
            .iter()
            .zip(&interacting_mask)
            .filter(|(_, &m)| m)
            .map(|(a, _)| a.norm_sqr())
            .sum();
        let (wi, wo) = if total > 0.0 {
            let wi = inside / total;
            (wi, 1.0 - wi)
        } else {
            (0.0, 0.0)
        };
        BranchDecomposition {
            interacting_mask,
            noninteracting_mask,
            weight_interacting: wi,
            weight_noninteracting: wo,
        }
    }

    pub fn interacting_count(&self) -> usize {
        self.interacting_mask.iter().filter(|&&b| b).count()
    }
}

/// Diagonal entries of an operator that acts multiplicatively.
pub fn diagonal_of(op: &LinearOperator, basis: &Basis) -> Result<Vec<f64>> {
    match op {
        LinearOperator::Identity => Ok(vec![1.0; basis.len()]),
        LinearOperator::DiagonalMultiply(d) => {
            if d.len() != basis.len() {
                return Err(Error::Structural(format!(
                    "diagonal length {} vs basis {}",
                    d.len(),
                    basis.len()
                )));
            }
            if d.iter().any(|z| z.im != 0.0) {
                return Err(Error::UnsupportedOperator(
                    "branch split needs a real potential".into(),
                ));
            }
            Ok(d.iter().map(|z| z.re).collect())
        }
        LinearOperator::FiniteMatrix(m) => {
            let n = basis.len();
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Structural("matrix dimension mismatch".into()));
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && m[(i, j)] != Complex64::new(0.0, 0.0) {
                        return Err(Error::UnsupportedOperator(
                            "branch split needs a diagonal operator".into(),
                        ));
                    }
                }
            }
            Ok((0..n).map(|i| m[(i, i)].re).collect())
        }
        other => Err(Error::UnsupportedOperator(format!(
            "{} is not diagonal in the state basis",
            other.kind_name()
        ))),
    }
}

/// Mean of a real diagonal field in `state`, normalized by `<psi|psi>`.
pub fn diagonal_mean(field: &[f64], state: &HilbertState) -> f64 {
    let (num, den) = state
        .amplitudes
        .par_iter()
        .zip(field.par_iter())
        .map(|(a, v)| {
            let p = a.norm_sqr();
            (p * v, p)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Split the state by the sign of `V - <V>`; exact zeros go to O.
pub fn branch_decompose(state: &HilbertState, v_op: &LinearOperator) -> Result<BranchDecomposition> {
    let v = diagonal_of(v_op, &state.basis)?;
    let mean = diagonal_mean(&v, state);
    let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
    Ok(BranchDecomposition::from_centered(&centered, state))
}

/// Minimum-uncertainty Gaussian for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPacket {
    /// Center; only the first `dims` entries are used.
    pub center: [f64; 2],
    #[serde(default)]
    pub momentum: [f64; 2],
    /// Position standard deviation of `|psi|^2` along each axis.
    pub width: f64,
}

impl GaussianPacket {
    pub fn new_1d(center: f64, momentum: f64, width: f64) -> Self {
        GaussianPacket {
            center: [center, 0.0],
            momentum: [momentum, 0.0],
            width,
        }
    }

    pub fn new_2d(center: [f64; 2], momentum: [f64; 2], width: f64) -> Self {
        GaussianPacket {
            center,
            momentum,
            width,
        }
    }

    /// Analytically normalized amplitude at `x` (length `dims`).
    pub fn amplitude(&self, x: &[f64]) -> Complex64 {
        let d = x.len() as f64;
        let s2 = self.width * self.width;
        let pref = (2.0 * PI * s2).powf(-d / 4.0);
        let mut arg = 0.0;
        let mut phase = 0.0;
        for (c, &xc) in x.iter().enumerate() {
            let dx = xc - self.center[c];
            arg -= dx * dx / (4.0 * s2);
            phase += self.momentum[c] * xc;
        }
        Complex64::from_polar(pref * arg.exp(), phase)
    }
}

impl HilbertState {
    /// Product of one Gaussian per particle on `grid`.
    pub fn product_gaussians(grid: &Arc<Grid>, packets: &[GaussianPacket]) -> Result<Self> {
        if packets.len() != grid.n_particles() {
            return Err(Error::Structural(format!(
                "{} packets for {} particles",
                packets.len(),
                grid.n_particles()
            )));
        }
        let dims = grid.dims();
        let amps = grid.tabulate(|x| {
            packets
                .iter()
                .enumerate()
                .map(|(p, g)| g.amplitude(&x[p * dims..(p + 1) * dims]))
                .product()
        });
        HilbertState::new(Basis::Grid(grid.clone()), amps)
    }

    /// Tabulate an arbitrary amplitude function over a grid.
    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        HilbertState::new(Basis::Grid(grid.clone()), grid.tabulate(f))
    }
}
