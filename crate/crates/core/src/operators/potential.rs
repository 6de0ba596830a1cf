//! Distance-dependent two-particle potentials with closed-form derivatives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Radial profile of a pair potential (before the overall sign).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialForm {
    /// `g / sqrt(r^2 + a^2)`.
    SoftCoulomb { strength: f64, softening: f64 },
    /// `V0 exp(-r^2 / (2 sigma^2))`.
    GaussianWell { depth: f64, width: f64 },
    /// Position-independent offset.
    Constant { value: f64 },
}

impl PotentialForm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PotentialForm::SoftCoulomb { strength, softening } => {
                if !(softening > 0.0) || !strength.is_finite() {
                    return Err(Error::Domain("soft Coulomb needs softening > 0".into()));
                }
            }
            PotentialForm::GaussianWell { depth, width } => {
                if !(width > 0.0) || !depth.is_finite() {
                    return Err(Error::Domain("Gaussian well needs width > 0".into()));
                }
            }
            PotentialForm::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Domain("constant potential must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            PotentialForm::SoftCoulomb { strength, softening } => {
                strength / (r * r + softening * softening).sqrt()
            }
            PotentialForm::GaussianWell { depth, width } => {
                depth * (-r * r / (2.0 * width * width)).exp()
            }
            PotentialForm::Constant { value } => value,
        }
    }

    /// `V'(r) / r`, finite at `r = 0`.
    pub fn slope_over_r(&self, r: f64) -> f64 {
        match *self {
            PotentialForm::SoftCoulomb { strength, softening } => {
                -strength * (r * r + softening * softening).powf(-1.5)
            }
            PotentialForm::GaussianWell { width, .. } => -self.value(r) / (width * width),
            PotentialForm::Constant { .. } => 0.0,
        }
    }

    /// `V''(r)`.
    pub fn curvature(&self, r: f64) -> f64 {
        match *self {
            PotentialForm::SoftCoulomb { strength, softening } => {
                let s = r * r + softening * softening;
                strength * (2.0 * r * r - softening * softening) * s.powf(-2.5)
            }
            PotentialForm::GaussianWell { width, .. } => {
                let w2 = width * width;
                (r * r / (w2 * w2) - 1.0 / w2) * self.value(r)
            }
            PotentialForm::Constant { .. } => 0.0,
        }
    }

    /// Value at the separation where the profile is extremal (r = 0).
    pub fn peak(&self) -> f64 {
        self.value(0.0)
    }
}

/// `sign * form(|w_j - w_k|)` between particles `j` and `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPotential {
    pub form: PotentialForm,
    pub particles: (usize, usize),
    /// +1 repulsive / barrier, -1 attractive / well.
    pub sign: f64,
}

impl PairPotential {
    pub fn new(form: PotentialForm, particles: (usize, usize), sign: f64) -> Self {
        PairPotential {
            form,
            particles,
            sign,
        }
    }

    pub fn validate(&self, n_particles: usize) -> Result<()> {
        self.form.validate()?;
        let (j, k) = self.particles;
        if j == k || j >= n_particles || k >= n_particles {
            return Err(Error::Structural(format!(
                "pair ({j}, {k}) invalid for {n_particles} particles"
            )));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::Domain(format!("sign must be +1 or -1, got {}", self.sign)));
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.form, PotentialForm::Constant { .. })
    }

    pub fn radial_value(&self, r: f64) -> f64 {
        self.sign * self.form.value(r)
    }

    /// Separation vector (length `dims`) and its norm at a grid point.
    fn separation(&self, grid: &Grid, flat: usize) -> ([f64; 2], f64) {
        let (j, k) = self.particles;
        let mut s = [0.0; 2];
        for (c, sc) in s.iter_mut().enumerate().take(grid.dims()) {
            *sc = grid.separation(flat, j, k, c);
        }
        let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
        (s, r)
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        self.validate(grid.n_particles())
    }

    /// Potential at every grid point.
    pub fn value_field(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.check(grid)?;
        Ok((0..grid.len())
            .into_par_iter()
            .map(|f| self.radial_value(self.separation(grid, f).1))
            .collect())
    }

    /// `dV / d w_{particle, component}`. Zero for particles outside the pair.
    pub fn gradient_field(&self, grid: &Grid, particle: usize, component: usize) -> Result<Vec<f64>> {
        self.check(grid)?;
        if component >= grid.dims() {
            return Err(Error::Structural(format!("component {component} out of range")));
        }
        let (j, k) = self.particles;
        let orient = if particle == j {
            1.0
        } else if particle == k {
            -1.0
        } else {
            return Ok(vec![0.0; grid.len()]);
        };
        Ok((0..grid.len())
            .into_par_iter()
            .map(|f| {
                let (s, r) = self.separation(grid, f);
                let g = self.sign * self.form.slope_over_r(r) * s[component];
                // d/dw_k = -d/dw_j exactly
                if orient > 0.0 {
                    g
                } else {
                    -g
                }
            })
            .collect())
    }

    /// `nabla_particle^2 V`. Identical for both members of the pair.
    pub fn laplacian_field(&self, grid: &Grid, particle: usize) -> Result<Vec<f64>> {
        self.check(grid)?;
        let (j, k) = self.particles;
        if particle != j && particle != k {
            return Ok(vec![0.0; grid.len()]);
        }
        let extra = (grid.dims() - 1) as f64;
        Ok((0..grid.len())
            .into_par_iter()
            .map(|f| {
                let r = self.separation(grid, f).1;
                self.sign * (self.form.curvature(r) + extra * self.form.slope_over_r(r))
            })
            .collect())
    }

    /// Unit separation vector components `(s_x, s_y) / r` at each point;
    /// at `r = 0` returns `None`.
    pub(crate) fn direction_field(&self, grid: &Grid) -> Vec<Option<[f64; 2]>> {
        (0..grid.len())
            .into_par_iter()
            .map(|f| {
                let (s, r) = self.separation(grid, f);
                if r == 0.0 {
                    None
                } else {
                    Some([s[0] / r, s[1] / r])
                }
            })
            .collect()
    }

    /// Separation `r` at every point.
    pub fn separation_field(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.len())
            .into_par_iter()
            .map(|f| self.separation(grid, f).1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ParticleSpec};

    fn grid(dims: usize, n: usize) -> std::sync::Arc<Grid> {
        Grid::new(
            GridSpec::new(dims, n, 4.0).unwrap(),
            vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn soft_coulomb_gradient_vanishes_at_contact() {
        let f = PotentialForm::SoftCoulomb {
            strength: 2.0,
            softening: 0.5,
        };
        assert_eq!(f.slope_over_r(0.0) * 0.0, 0.0);
        let p = PairPotential::new(f, (0, 1), 1.0);
        let g = grid(1, 16);
        let grad = p.gradient_field(&g, 0, 0).unwrap();
        // diagonal points have r = 0
        for i in 0..16 {
            assert_eq!(grad[i * 16 + i], 0.0);
        }
    }

    #[test]
    fn gradients_are_antisymmetric_pointwise() {
        for dims in [1, 2] {
            let g = grid(dims, 8);
            for form in [
                PotentialForm::SoftCoulomb {
                    strength: 1.3,
                    softening: 0.4,
                },
                PotentialForm::GaussianWell {
                    depth: 2.0,
                    width: 0.7,
                },
            ] {
                let p = PairPotential::new(form, (0, 1), -1.0);
                for c in 0..dims {
                    let gj = p.gradient_field(&g, 0, c).unwrap();
                    let gk = p.gradient_field(&g, 1, c).unwrap();
                    assert!(gj.iter().zip(&gk).all(|(a, b)| a + b == 0.0));
                }
            }
        }
    }

    #[test]
    fn gaussian_well_laplacian_at_origin() {
        // V0 exp(-r^2/2s^2) has V''(0) = -V0/s^2
        let f = PotentialForm::GaussianWell {
            depth: 3.0,
            width: 0.8,
        };
        let p = PairPotential::new(f, (0, 1), 1.0);
        let g = grid(1, 16);
        let lap = p.laplacian_field(&g, 0).unwrap();
        assert!((lap[0] - (-3.0 / 0.64)).abs() < 1e-14);
        assert_eq!(p.laplacian_field(&g, 1).unwrap(), lap);
    }

    #[test]
    fn closed_form_derivatives_match_finite_differences() {
        let forms = [
            PotentialForm::SoftCoulomb {
                strength: 1.7,
                softening: 0.3,
            },
            PotentialForm::GaussianWell {
                depth: -0.9,
                width: 1.2,
            },
        ];
        let eps = 1e-5;
        for f in forms {
            for &r in &[0.1, 0.5, 1.3, 2.7] {
                let d1 = (f.value(r + eps) - f.value(r - eps)) / (2.0 * eps);
                let d2 = (f.value(r + eps) - 2.0 * f.value(r) + f.value(r - eps)) / (eps * eps);
                assert!((f.slope_over_r(r) * r - d1).abs() < 1e-8);
                assert!((f.curvature(r) - d2).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn fields_are_translation_invariant() {
        let g = grid(1, 16);
        let p = PairPotential::new(
            PotentialForm::SoftCoulomb {
                strength: 1.0,
                softening: 0.5,
            },
            (0, 1),
            1.0,
        );
        let v = p.value_field(&g).unwrap();
        let gr = p.gradient_field(&g, 0, 0).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let a = i * 16 + j;
                let b = ((i + 5) % 16) * 16 + (j + 5) % 16;
                assert_eq!(v[a], v[b]);
                assert_eq!(gr[a], gr[b]);
            }
        }
    }

    #[test]
    fn invalid_pairs() {
        let p = PairPotential::new(PotentialForm::Constant { value: 1.0 }, (0, 0), 1.0);
        assert!(p.validate(2).is_err());
        let p = PairPotential::new(PotentialForm::Constant { value: 1.0 }, (0, 2), 1.0);
        assert!(p.validate(2).is_err());
    }
}
