use std::sync::Arc;

use collapse_sim::collapse::collapse_sum;
use collapse_sim::config::{parse_config_str, RunConfig, ScenarioKind};
use collapse_sim::grid::{Grid, GridSpec, ParticleSpec};
use collapse_sim::operators::{DerivativeKind, LinearOperator, PairPotential, PotentialForm};
use collapse_sim::state::{Basis, HilbertState};
use collapse_sim::stats::wilson_interval;
use collapse_sim::system::{GridSystem, System};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid(dims: usize, n: usize) -> Arc<Grid> {
    Grid::new(
        GridSpec::new(dims, n, 4.0).unwrap(),
        vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 2.5)],
    )
    .unwrap()
}

fn state(g: &Arc<Grid>, re: &[f64], im: &[f64]) -> HilbertState {
    let amps = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
    HilbertState::new(Basis::Grid(g.clone()), amps).unwrap()
}

fn amps(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let v = || prop::collection::vec(-1.0f64..1.0, len);
    (v(), v(), v(), v())
}

/// `|<a|Q b> - <Q a|b>|` relative to `|a| |Q b|`.
fn hermiticity_defect(q: &LinearOperator, a: &HilbertState, b: &HilbertState) -> f64 {
    let qa = q.apply(a).unwrap();
    let qb = q.apply(b).unwrap();
    let lhs = a.inner(&qb).unwrap();
    let rhs = qa.inner(b).unwrap();
    (lhs - rhs).norm() / (a.norm() * qb.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_dimensional_operators_are_hermitian((ar, ai, br, bi) in amps(16 * 16)) {
        let g = grid(1, 16);
        let (a, b) = (state(&g, &ar, &ai), state(&g, &br, &bi));
        for kind in [DerivativeKind::Stencil, DerivativeKind::Spectral] {
            for q in [LinearOperator::kinetic(&g, kind), LinearOperator::momentum(kind, 0)] {
                let d = hermiticity_defect(&q, &a, &b);
                prop_assert!(d < 1e-12, "{} {:?}: {:e}", q.kind_name(), kind, d);
            }
        }
    }

    #[test]
    fn angular_momentum_is_hermitian((ar, ai, br, bi) in amps(8usize.pow(4))) {
        let g = grid(2, 8);
        let (a, b) = (state(&g, &ar, &ai), state(&g, &br, &bi));
        for kind in [DerivativeKind::Stencil, DerivativeKind::Spectral] {
            let d = hermiticity_defect(&LinearOperator::AngularMomentumZ { kind }, &a, &b);
            prop_assert!(d < 1e-12, "{:?}: {:e}", kind, d);
        }
    }

    #[test]
    fn collapse_operator_has_zero_mean_in_its_state(
        (ar, ai, _, _) in amps(32 * 32),
        depth in 0.1f64..3.0,
        width in 0.5f64..2.0,
    ) {
        let g = grid(1, 32);
        let psi = state(&g, &ar, &ai).normalized().unwrap();
        let well = PairPotential::new(PotentialForm::GaussianWell { depth, width }, (0, 1), -1.0);
        let system = System::Grid(GridSystem::new(g.clone(), vec![well], 3.0).unwrap());
        for op in collapse_sum(&psi, &system, 1.0).unwrap() {
            let w = psi.basis.weight();
            let mean: f64 = psi
                .amplitudes
                .iter()
                .zip(&op.centered_potential)
                .map(|(z, v)| z.norm_sqr() * v * w)
                .sum();
            prop_assert!(mean.abs() < 1e-12 * depth, "mean {:e}", mean);
        }
    }

    #[test]
    fn config_round_trips_through_toml(
        kind_idx in 0usize..7,
        seed in 0..=i64::MAX as u64,
        gain in 0.0f64..200.0,
        weight in 0.01f64..0.99,
        real_noise in any::<bool>(),
        n_traj in 1usize..5000,
    ) {
        let mut cfg = RunConfig::preset(ScenarioKind::ALL[kind_idx]);
        cfg.ensemble.master_seed = seed;
        cfg.ensemble.n_traj = Some(n_traj);
        cfg.physics.gain = gain;
        cfg.initial.weight = weight;
        cfg.numerics.real_noise = real_noise;
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = parse_config_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.content_hash().unwrap(), cfg.content_hash().unwrap());
    }

    #[test]
    fn wilson_interval_brackets_frequency(n in 1usize..100_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, 1.96);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}
