//! Periodic finite-difference and Fourier derivatives on a [`Grid`].

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;

/// How spatial derivatives are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeKind {
    /// Second-order central differences.
    Stencil,
    /// Exact derivative of the trigonometric interpolant.
    Spectral,
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Wavenumber used for odd derivatives: the Nyquist mode is dropped.
#[inline]
fn odd_k(grid: &Grid, idx: usize) -> f64 {
    let n = grid.points_per_axis();
    if idx == n / 2 {
        0.0
    } else {
        grid.wavenumbers()[idx]
    }
}

/// Three-point periodic stencil along `axis`: `out = f(left, centre, right)`.
///
/// Rows of `stride` contiguous entries share one index along `axis`, so the
/// neighbours of a row are whole rows and no per-point index arithmetic is needed.
fn stencil3<F>(grid: &Grid, data: &[Complex64], axis: usize, f: F) -> Vec<Complex64>
where
    F: Fn(Complex64, Complex64, Complex64) -> Complex64 + Sync,
{
    let n = grid.points_per_axis();
    let stride = grid.stride(axis);
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    out.par_chunks_mut(stride).enumerate().for_each(|(row, dst)| {
        let i = row % n;
        let base = (row - i) * stride;
        let l = &data[base + ((i + n - 1) % n) * stride..][..stride];
        let c = &data[base + i * stride..][..stride];
        let r = &data[base + ((i + 1) % n) * stride..][..stride];
        for (o, z) in dst.iter_mut().enumerate() {
            *z = f(l[o], c[o], r[o]);
        }
    });
    out
}

/// `d/dx_axis` of `data`.
pub fn partial(grid: &Grid, data: &[Complex64], axis: usize, kind: DerivativeKind) -> Vec<Complex64> {
    match kind {
        DerivativeKind::Stencil => {
            let inv = 1.0 / (2.0 * grid.spacing());
            stencil3(grid, data, axis, |l, _, r| (r - l) * inv)
        }
        DerivativeKind::Spectral => {
            let mut out = data.to_vec();
            grid.fft_axis(&mut out, axis);
            out.par_iter_mut().enumerate().for_each(|(f, z)| {
                *z *= I * odd_k(grid, grid.index_along(f, axis));
            });
            grid.ifft_axis(&mut out, axis);
            out
        }
    }
}

/// `d^2/dx_axis^2` of `data`.
pub fn second_partial(
    grid: &Grid,
    data: &[Complex64],
    axis: usize,
    kind: DerivativeKind,
) -> Vec<Complex64> {
    match kind {
        DerivativeKind::Stencil => {
            let inv = 1.0 / (grid.spacing() * grid.spacing());
            stencil3(grid, data, axis, |l, c, r| (l - c * 2.0 + r) * inv)
        }
        DerivativeKind::Spectral => {
            let mut out = data.to_vec();
            grid.fft_axis(&mut out, axis);
            out.par_iter_mut().enumerate().for_each(|(f, z)| {
                let k = grid.wavenumber(f, axis);
                *z *= -k * k;
            });
            grid.ifft_axis(&mut out, axis);
            out
        }
    }
}

/// Apply a Fourier multiplier over the full grid.
pub fn fourier_multiply<F>(grid: &Grid, data: &[Complex64], symbol: F) -> Vec<Complex64>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let mut out = data.to_vec();
    grid.fft(&mut out);
    let n_axes = grid.n_axes();
    out.par_iter_mut().enumerate().for_each_init(
        || vec![0.0; n_axes],
        |k, (f, z)| {
            for (a, ka) in k.iter_mut().enumerate() {
                *ka = grid.wavenumber(f, a);
            }
            *z *= symbol(k);
        },
    );
    grid.ifft(&mut out);
    out
}

/// Odd-derivative wavenumber along `axis` with the Nyquist mode removed,
/// for use inside [`fourier_multiply`] symbols.
pub fn odd_wavenumber(grid: &Grid, k: f64) -> f64 {
    let nyq = std::f64::consts::PI / grid.spacing();
    if (k.abs() - nyq).abs() < 1e-9 * nyq {
        0.0
    } else {
        k
    }
}

/// `d^2/(dx_a dx_b)` for `a != b`.
pub fn mixed_partial(
    grid: &Grid,
    data: &[Complex64],
    a: usize,
    b: usize,
    kind: DerivativeKind,
) -> Vec<Complex64> {
    debug_assert_ne!(a, b);
    let first = partial(grid, data, a, kind);
    partial(grid, &first, b, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ParticleSpec};

    #[test]
    fn spectral_derivative_of_band_limited_wave_is_exact() {
        let g = Grid::new(
            GridSpec::new(1, 32, 5.0).unwrap(),
            vec![ParticleSpec::new("x", 1.0)],
        )
        .unwrap();
        let k = 3.0 * std::f64::consts::PI / 5.0;
        let data: Vec<Complex64> = g.coords().iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
        let d = partial(&g, &data, 0, DerivativeKind::Spectral);
        let d2 = second_partial(&g, &data, 0, DerivativeKind::Spectral);
        for i in 0..data.len() {
            assert!((d[i] - I * k * data[i]).norm() < 1e-12);
            assert!((d2[i] + k * k * data[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn stencil_symbol() {
        let g = Grid::new(
            GridSpec::new(1, 16, 2.0).unwrap(),
            vec![ParticleSpec::new("x", 1.0)],
        )
        .unwrap();
        let h = g.spacing();
        let k = 2.0 * std::f64::consts::PI / 4.0;
        let data: Vec<Complex64> = g.coords().iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
        let d = partial(&g, &data, 0, DerivativeKind::Stencil);
        for i in 0..data.len() {
            assert!((d[i] - I * ((k * h).sin() / h) * data[i]).norm() < 1e-12);
        }
    }
}
