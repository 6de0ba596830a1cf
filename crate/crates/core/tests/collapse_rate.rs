use collapse_sim::collapse::{gamma, rate_denominator, rate_numerator};
use collapse_sim::grid::{Grid, GridSpec, ParticleSpec};
use collapse_sim::operators::{DerivativeKind, PairPotential, PotentialForm};
use collapse_sim::sde::{HamiltonianStepper, Scheme};
use collapse_sim::state::{GaussianPacket, HilbertState};
use collapse_sim::system::{GridSystem, System};
use num_complex::Complex64;

fn pair_grid(n: usize, extent: f64) -> std::sync::Arc<Grid> {
    Grid::new(
        GridSpec::new(1, n, extent).unwrap(),
        vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 1.0)],
    )
    .unwrap()
}

fn mean_v(data: &[Complex64], v: &[f64]) -> f64 {
    let norm: f64 = data.iter().map(|z| z.norm_sqr()).sum();
    data.iter().zip(v).map(|(z, x)| z.norm_sqr() * x).sum::<f64>() / norm
}

#[test]
fn rate_numerator_matches_finite_difference_of_mean_potential() {
    let grid = pair_grid(256, 16.0);
    let well = PairPotential::new(PotentialForm::GaussianWell { depth: 1.5, width: 1.2 }, (0, 1), -1.0);
    let psi = HilbertState::product_gaussians(
        &grid,
        &[GaussianPacket::new_1d(-1.5, 0.8, 1.0), GaussianPacket::new_1d(1.5, -0.8, 1.0)],
    )
    .unwrap()
    .normalized()
    .unwrap();
    let numerator = rate_numerator(&psi, &well, DerivativeKind::Spectral).unwrap();

    // interacting component built by hand, then pushed forward and backward
    // along the unitary flow
    let v = well.value_field(&grid).unwrap();
    let phi: Vec<Complex64> = psi.amplitudes.iter().zip(&v).map(|(a, x)| a * x).collect();
    let system = System::Grid(GridSystem::new(grid.clone(), vec![well.clone()], 1.0).unwrap());
    let dt = 1e-4;
    let stepper = HamiltonianStepper::new(&system, Scheme::SplitStepSpectral, dt).unwrap();
    let mut fwd = phi.clone();
    stepper.step(&mut fwd).unwrap();
    // real Hamiltonian: backward evolution is the conjugate of forward evolution of the conjugate
    let mut bwd: Vec<Complex64> = phi.iter().map(|z| z.conj()).collect();
    stepper.step(&mut bwd).unwrap();
    let fd = (mean_v(&fwd, &v) - mean_v(&bwd, &v)) / (2.0 * dt);

    assert!(fd.abs() > 1e-3, "test state must be exchanging energy, got {fd}");
    let rel = (numerator - fd.abs()).abs() / fd.abs();
    assert!(rel < 0.02, "numerator {numerator} vs finite difference {fd} (rel {rel:.2e})");
}

#[test]
fn barrier_denominator_matches_relative_coordinate_quadrature() {
    let (x0, p, sigma, w, v0) = (1.0, 1.1, 1.0, 1.0, 1.0);
    let grid = pair_grid(256, 16.0);
    let barrier = PairPotential::new(PotentialForm::GaussianWell { depth: v0, width: w }, (0, 1), 1.0);
    let psi = HilbertState::product_gaussians(
        &grid,
        &[GaussianPacket::new_1d(-x0, p, sigma), GaussianPacket::new_1d(x0, -p, sigma)],
    )
    .unwrap()
    .normalized()
    .unwrap();
    let got = rate_denominator(&psi, &barrier, DerivativeKind::Spectral).unwrap();

    // Equal masses and widths: psi = G(R) f(r) with r = x_a - x_b,
    // f ~ exp(-(r - r0)^2 / (8 sigma^2) + i k r), k = p, mu = 1/2.
    let (r0, k, mu) = (-2.0 * x0, p, 0.5);
    let f = |r: f64| {
        let env = (-(r - r0) * (r - r0) / (8.0 * sigma * sigma)).exp();
        let vr = v0 * (-r * r / (2.0 * w * w)).exp();
        Complex64::from_polar(env * vr, k * r)
    };
    let h = 1e-3;
    let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
    let mut r = -20.0;
    while r < 20.0 {
        let c = f(r);
        let d2 = (f(r + h) - c * 2.0 + f(r - h)) / (h * h);
        let vr = v0 * (-r * r / (2.0 * w * w)).exp();
        num += c.conj() * (c * vr - d2 / mu);
        den += c.norm_sqr();
        r += h;
    }
    let oracle = (num / den).norm();
    let rel = (got - oracle).abs() / oracle;
    assert!(rel < 0.05, "denominator {got} vs quadrature {oracle} (rel {rel:.2e})");
}

#[test]
fn integrated_rate_over_a_well_transit_is_of_order_one() {
    let grid = pair_grid(128, 16.0);
    let well = PairPotential::new(PotentialForm::GaussianWell { depth: 0.5, width: 1.0 }, (0, 1), -1.0);
    let mut psi = HilbertState::product_gaussians(
        &grid,
        &[GaussianPacket::new_1d(-4.0, 2.0, 1.0), GaussianPacket::new_1d(4.0, -2.0, 1.0)],
    )
    .unwrap()
    .normalized()
    .unwrap();
    let system = System::Grid(GridSystem::new(grid.clone(), vec![well.clone()], 1.0).unwrap());
    let dt = 0.01;
    let stepper = HamiltonianStepper::new(&system, Scheme::SplitStepSpectral, dt).unwrap();
    let v = well.value_field(&grid).unwrap();

    let mut series = Vec::new();
    for _ in 0..500 {
        let g = gamma(&psi, &well, DerivativeKind::Spectral).unwrap().gamma;
        series.push((mean_v(&psi.amplitudes, &v), g));
        stepper.step(&mut psi.amplitudes).unwrap();
    }
    // transit window: |<V>| above 5% of its peak
    let peak = series.iter().map(|(m, _)| m.abs()).fold(0.0, f64::max);
    let first = series.iter().position(|(m, _)| m.abs() >= 0.05 * peak).unwrap();
    let last = series.iter().rposition(|(m, _)| m.abs() >= 0.05 * peak).unwrap();
    assert!(first > 0 && last < series.len() - 1, "run must cover the whole transit");
    let integral: f64 = series[first..=last].iter().map(|(_, g)| g * dt).sum();
    assert!((0.3..=3.0).contains(&integral), "integral of gamma over the transit = {integral}");
}
