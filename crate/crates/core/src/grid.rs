//! Periodic configuration-space grids.
//!
//! A grid holds `n_particles` particles, each living in `dims` spatial
//! dimensions, so the configuration space has `dims * n_particles` axes.
//! Amplitudes are stored row-major with the last axis fastest; axis
//! `p * dims + c` is component `c` of particle `p`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest configuration-space dimension the grid backend accepts.
pub const MAX_PARTICLES: usize = 3;

/// Discretization of one particle's coordinate space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Spatial dimensions per particle (1 or 2).
    pub dims: usize,
    pub points_per_axis: usize,
    /// Box half-width; each axis covers `[-extent, extent)`.
    pub extent: f64,
}

impl GridSpec {
    pub fn new(dims: usize, points_per_axis: usize, extent: f64) -> Result<Self> {
        let spec = GridSpec {
            dims,
            points_per_axis,
            extent,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dims) {
            return Err(Error::Structural(format!(
                "grid dims must be 1 or 2, got {}",
                self.dims
            )));
        }
        if self.points_per_axis < 8 || !self.points_per_axis.is_power_of_two() {
            return Err(Error::Structural(format!(
                "points_per_axis must be a power of two >= 8, got {}",
                self.points_per_axis
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::Structural(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        Ok(())
    }

    /// Grid spacing `h = 2 * extent / points_per_axis`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / self.points_per_axis as f64
    }

    /// Same box, twice the points per axis.
    pub fn refined(&self) -> Self {
        GridSpec {
            points_per_axis: self.points_per_axis * 2,
            ..*self
        }
    }
}

/// A particle with its mass and coupling (natural units, hbar = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub label: String,
    pub mass: f64,
    #[serde(default)]
    pub charge: f64,
}

impl ParticleSpec {
    pub fn new(label: impl Into<String>, mass: f64) -> Self {
        ParticleSpec {
            label: label.into(),
            mass,
            charge: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Domain(format!(
                "particle `{}` must have positive mass",
                self.label
            )));
        }
        Ok(())
    }

    /// `m c^2`.
    pub fn rest_energy(&self, c: f64) -> f64 {
        self.mass * c * c
    }
}

/// A concrete grid: spec, particles, coordinates and FFT plans.
pub struct Grid {
    spec: GridSpec,
    particles: Vec<ParticleSpec>,
    n_axes: usize,
    len: usize,
    strides: Vec<usize>,
    coords: Vec<f64>,
    wavenumbers: Vec<f64>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.spec)
            .field("particles", &self.particles)
            .field("len", &self.len)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.particles == other.particles
    }
}

impl Grid {
    pub fn new(spec: GridSpec, particles: Vec<ParticleSpec>) -> Result<Arc<Self>> {
        spec.validate()?;
        if particles.is_empty() || particles.len() > MAX_PARTICLES {
            return Err(Error::Structural(format!(
                "grid backend supports 1..={} particles, got {}",
                MAX_PARTICLES,
                particles.len()
            )));
        }
        for p in &particles {
            p.validate()?;
        }
        let n = spec.points_per_axis;
        let n_axes = spec.dims * particles.len();
        let len = n.pow(n_axes as u32);
        let strides = (0..n_axes).map(|a| n.pow((n_axes - 1 - a) as u32)).collect();
        let h = spec.spacing();
        let coords = (0..n).map(|i| -spec.extent + i as f64 * h).collect();
        let dk = PI / spec.extent;
        let wavenumbers = (0..n)
            .map(|i| {
                let m = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
                m as f64 * dk
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(n);
        let fft_inverse = planner.plan_fft_inverse(n);
        Ok(Arc::new(Grid {
            spec,
            particles,
            n_axes,
            len,
            strides,
            coords,
            wavenumbers,
            fft_forward,
            fft_inverse,
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn particles(&self) -> &[ParticleSpec] {
        &self.particles
    }

    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn n_axes(&self) -> usize {
        self.n_axes
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn points_per_axis(&self) -> usize {
        self.spec.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spec.spacing()
    }

    /// `h^D` with `D` the configuration-space dimension.
    pub fn volume_element(&self) -> f64 {
        self.spacing().powi(self.n_axes as i32)
    }

    /// Axis index of spatial component `component` of `particle`.
    pub fn axis(&self, particle: usize, component: usize) -> usize {
        debug_assert!(particle < self.n_particles() && component < self.dims());
        particle * self.spec.dims + component
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Coordinate values shared by every axis.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// FFT wavenumbers in standard order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Index along `axis` of the flat index `flat`.
    #[inline]
    pub fn index_along(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.spec.points_per_axis
    }

    #[inline]
    pub fn coordinate(&self, flat: usize, axis: usize) -> f64 {
        self.coords[self.index_along(flat, axis)]
    }

    /// All axis indices of a flat index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.spec.points_per_axis;
        let mut out = vec![0; self.n_axes];
        for a in (0..self.n_axes).rev() {
            out[a] = flat % n;
            flat /= n;
        }
        out
    }

    /// Evaluate `f` on every point; `f` receives the coordinates of all axes.
    pub fn tabulate<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync,
    {
        (0..self.len)
            .into_par_iter()
            .map_init(
                || vec![0.0; self.n_axes],
                |x, flat| {
                    let idx = self.multi_index(flat);
                    for (xa, ia) in x.iter_mut().zip(idx) {
                        *xa = self.coords[ia];
                    }
                    f(x)
                },
            )
            .collect()
    }

    /// Minimum-image separation `w_j - w_k` along `component` at `flat`,
    /// computed from index differences so that it is exactly invariant
    /// under joint translations.
    #[inline]
    pub fn separation(&self, flat: usize, j: usize, k: usize, component: usize) -> f64 {
        let n = self.spec.points_per_axis as i64;
        let ij = self.index_along(flat, self.axis(j, component)) as i64;
        let ik = self.index_along(flat, self.axis(k, component)) as i64;
        let mut d = (ij - ik).rem_euclid(n);
        if d > n / 2 {
            d -= n;
        }
        d as f64 * self.spacing()
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.spec.points_per_axis;
        let stride = self.stride(axis);
        let block = n * stride;
        let n_lines = self.len / n;
        let mut lines = vec![Complex64::new(0.0, 0.0); self.len];
        // gather into contiguous lines
        for line in 0..n_lines {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * block + inner;
            let dst = &mut lines[line * n..(line + 1) * n];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = data[base + i * stride];
            }
        }
        let fft = if inverse {
            &self.fft_inverse
        } else {
            &self.fft_forward
        };
        let chunk = n * 64;
        lines.par_chunks_mut(chunk).for_each(|c| fft.process(c));
        let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
        for line in 0..n_lines {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * block + inner;
            let src = &lines[line * n..(line + 1) * n];
            for (i, s) in src.iter().enumerate() {
                data[base + i * stride] = *s * scale;
            }
        }
    }

    /// Forward FFT along one axis (unnormalized).
    pub fn fft_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, false);
    }

    /// Inverse FFT along one axis, normalized so `ifft(fft(x)) = x`.
    pub fn ifft_axis(&self, data: &mut [Complex64], axis: usize) {
        self.transform_axis(data, axis, true);
    }

    /// Forward FFT over all axes.
    pub fn fft(&self, data: &mut [Complex64]) {
        for a in 0..self.n_axes {
            self.fft_axis(data, a);
        }
    }

    /// Inverse FFT over all axes.
    pub fn ifft(&self, data: &mut [Complex64]) {
        for a in 0..self.n_axes {
            self.ifft_axis(data, a);
        }
    }

    /// Wavenumber along `axis` of the Fourier-space flat index.
    #[inline]
    pub fn wavenumber(&self, flat: usize, axis: usize) -> f64 {
        self.wavenumbers[self.index_along(flat, axis)]
    }
}
