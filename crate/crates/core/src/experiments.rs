//! Packaged scenarios: the quantum-eraser cross-term test and the thermal
//! energy-deviation estimate.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{Integrator, IntegratorConfig};
use crate::state::HilbertState;
use crate::stats::{linear_fit, mean_stderr, wilson_interval, LinearFit, Z95};
use crate::system::{FiniteCoupling, FiniteSystem, System};

/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Seconds per year used in the thermal estimate.
pub const SECONDS_PER_YEAR: f64 = 3.16e7;
/// Nonrelativistic bound on the eraser cross-term probability.
pub const ERASER_PROBABILITY_BOUND: f64 = 1e-6;

/// Basis order: `T_I D_I`, `T_I D_O`, `T_O D_I`, `T_O D_O`.
pub const ERASER_LABELS: [&str; 4] = ["TI_DI", "TI_DO", "TO_DI", "TO_DO"];

/// How the collapse perturbation is applied in each run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KickMode {
    /// The same `+epsilon` kick every run.
    Coherent,
    /// `+-epsilon` with a fair random sign per run.
    RandomSign,
    /// `epsilon Z` with `Z` standard normal per run.
    Gaussian,
    /// A resolved collapse-equation run over one unit of interaction time.
    Sde,
}

fn default_amplitudes() -> [f64; 2] {
    [std::f64::consts::FRAC_1_SQRT_2; 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EraserConfig {
    /// Average collapse ratio of one interaction.
    pub epsilon: f64,
    pub n_traj: usize,
    pub mode: KickMode,
    /// Amplitudes of the `I I` and `O O` branches.
    #[serde(default = "default_amplitudes")]
    pub amplitudes: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Steps of the resolved run in [`KickMode::Sde`].
    #[serde(default = "default_sde_steps")]
    pub sde_steps: usize,
}

fn default_sde_steps() -> usize {
    200
}

impl EraserConfig {
    pub fn new(epsilon: f64, n_traj: usize, mode: KickMode, seed: u64) -> Self {
        EraserConfig {
            epsilon,
            n_traj,
            mode,
            amplitudes: default_amplitudes(),
            seed,
            sde_steps: default_sde_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon < 0.5) {
            return Err(Error::config("eraser.epsilon", format!("must lie in [0, 0.5), got {}", self.epsilon)));
        }
        if self.n_traj == 0 {
            return Err(Error::config("eraser.n_traj", "must be at least 1"));
        }
        let [a, b] = self.amplitudes;
        if !((a * a + b * b - 1.0).abs() < 1e-12) || a <= 0.0 || b <= 0.0 {
            return Err(Error::config("eraser.amplitudes", "must be positive with squares summing to 1"));
        }
        if self.mode == KickMode::Sde && self.sde_steps == 0 {
            return Err(Error::config("eraser.sde_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Post-interaction state `a |T_I D_I> + b |T_O D_O>`.
    pub fn initial_state(&self) -> HilbertState {
        let [a, b] = self.amplitudes;
        let z = Complex64::new(0.0, 0.0);
        HilbertState::finite(ERASER_LABELS, vec![Complex64::new(a, 0.0), z, z, Complex64::new(b, 0.0)])
            .expect("four labels, four amplitudes")
    }
}

/// Unitary change from `{I, O} x {I, O}` to `{S, A} x {S, A}`, with
/// `S = (I + O)/sqrt 2`, `A = (I - O)/sqrt 2`. Output order `SS, SA, AS, AA`.
pub fn symmetric_basis_matrix() -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
    one.kronecker(&one).map(|x| Complex64::new(x, 0.0))
}

/// `|<SS|, <SA|, <AS|, <AA| psi|^2`.
pub fn sa_probabilities(state: &HilbertState) -> [f64; 4] {
    let u = symmetric_basis_matrix();
    let v = &u * nalgebra::DVector::from_column_slice(&state.amplitudes);
    let n: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    [0, 1, 2, 3].map(|i| v[i].norm_sqr() / n)
}

/// Apply a collapse kick of signed size `k` (in units of epsilon):
/// `psi_II += 2k nu^2 psi_II`, `psi_OO -= 2k mu^2 psi_OO`.
pub fn apply_kick(state: &mut HilbertState, k: f64) {
    let mu2 = state.amplitudes[0].norm_sqr();
    let nu2 = state.amplitudes[3].norm_sqr();
    let total = mu2 + nu2;
    let (mu2, nu2) = (mu2 / total, nu2 / total);
    state.amplitudes[0] *= 1.0 + 2.0 * k * nu2;
    state.amplitudes[3] *= 1.0 - 2.0 * k * mu2;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraserResult {
    pub epsilon: f64,
    pub mode: KickMode,
    pub n_traj: usize,
    /// Mean outcome probabilities `[[SS, SA], [AS, AA]]` (target row, detector column).
    pub correlation: [[f64; 2]; 2],
    /// Mean per-run probability of a mixed `S A` or `A S` outcome.
    pub cross_prob: f64,
    pub cross_stderr: f64,
    /// Sampled outcome counts `[[SS, SA], [AS, AA]]`.
    pub counts: [[usize; 2]; 2],
    pub cross_freq: f64,
    pub freq_ci: (f64, f64),
}

impl EraserResult {
    /// 95% interval of the mean per-run probability.
    pub fn prob_ci(&self) -> (f64, f64) {
        (
            (self.cross_prob - Z95 * self.cross_stderr).max(0.0),
            self.cross_prob + Z95 * self.cross_stderr,
        )
    }
}

fn sde_kick_state(cfg: &EraserConfig, stream: u64) -> Result<HilbertState> {
    // V = diag(v, 0, 0, 0) over one unit of time with gamma = 1, scaled so the
    // accumulated kick on equal branches has size epsilon
    let v = 1.0;
    let energy = if cfg.epsilon > 0.0 { v / (2.0 * cfg.epsilon) } else { 1.0 };
    let gain = if cfg.epsilon > 0.0 { 1.0 } else { 0.0 };
    let system = System::Finite(FiniteSystem::new(
        ERASER_LABELS.iter().map(|s| s.to_string()).collect(),
        DMatrix::zeros(4, 4),
        vec![FiniteCoupling {
            pair: (0, 1),
            potential: vec![v, 0.0, 0.0, 0.0],
            gamma: 1.0,
            energy_denominator: energy,
        }],
    )?);
    let mut icfg = IntegratorConfig::new(1.0 / cfg.sde_steps as f64, cfg.sde_steps);
    icfg.gain = gain;
    icfg.stop_on_absorption = false;
    icfg.record_expectations = false;
    icfg.record_every = cfg.sde_steps;
    let integ = Integrator::new(system, icfg)?;
    let (_, end) = integ.run_with_state(&cfg.initial_state(), cfg.seed, stream)?;
    Ok(end)
}

/// Evolve the eraser model through one perturbed interaction per run and
/// measure both particles in the `S/A` basis.
pub fn eraser_run(cfg: &EraserConfig) -> Result<EraserResult> {
    cfg.validate()?;
    let per_run: Vec<([f64; 4], usize)> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let state = match cfg.mode {
                KickMode::Sde => sde_kick_state(cfg, i as u64)?,
                mode => {
                    let k = match mode {
                        KickMode::Coherent => cfg.epsilon,
                        KickMode::RandomSign => {
                            if rng.gen::<bool>() {
                                cfg.epsilon
                            } else {
                                -cfg.epsilon
                            }
                        }
                        _ => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            cfg.epsilon * z
                        }
                    };
                    let mut s = cfg.initial_state();
                    apply_kick(&mut s, k);
                    s
                }
            };
            let p = sa_probabilities(&state);
            // sample one joint outcome
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut outcome = 3;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    outcome = j;
                    break;
                }
            }
            Ok((p, outcome))
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let n = cfg.n_traj as f64;
    let mut correlation = [[0.0; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for (p, o) in &per_run {
        for j in 0..4 {
            correlation[j / 2][j % 2] += p[j] / n;
        }
        counts[o / 2][o % 2] += 1;
    }
    let cross: Vec<f64> = per_run.iter().map(|(p, _)| p[1] + p[2]).collect();
    let (cross_prob, cross_stderr) = mean_stderr(&cross);
    let mixed = counts[0][1] + counts[1][0];
    Ok(EraserResult {
        epsilon: cfg.epsilon,
        mode: cfg.mode,
        n_traj: cfg.n_traj,
        correlation,
        cross_prob,
        cross_stderr,
        counts,
        cross_freq: mixed as f64 / n,
        freq_ci: wilson_interval(mixed, cfg.n_traj, Z95),
    })
}

/// Largest deviation of `U U^dagger` from the identity for the `S/A` change of basis.
pub fn basis_change_unitarity_residual() -> f64 {
    let u = symmetric_basis_matrix();
    let d = &u * u.adjoint() - DMatrix::<Complex64>::identity(4, 4);
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Cross-term probabilities over a set of epsilons with a log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EraserSweep {
    pub rows: Vec<EraserResult>,
    /// Fit of `ln(cross_prob)` against `ln(epsilon)`.
    pub fit: LinearFit,
    /// Same fit on sampled frequencies; absent when a frequency is zero.
    pub sampled_fit: Option<LinearFit>,
}

impl EraserSweep {
    /// Columns `epsilon, cross_prob, ci_low, ci_high, cross_freq, freq_ci_low, freq_ci_high`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["epsilon", "cross_prob", "ci_low", "ci_high", "cross_freq", "freq_ci_low", "freq_ci_high"])
            .map_err(io)?;
        for r in &self.rows {
            let (lo, hi) = r.prob_ci();
            w.write_record([
                r.epsilon.to_string(),
                r.cross_prob.to_string(),
                lo.to_string(),
                hi.to_string(),
                r.cross_freq.to_string(),
                r.freq_ci.0.to_string(),
                r.freq_ci.1.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Run [`eraser_run`] at each epsilon; point `i` uses seed `base.seed + i`.
pub fn eraser_sweep(base: &EraserConfig, epsilons: &[f64]) -> Result<EraserSweep> {
    let rows = epsilons
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut cfg = base.clone();
            cfg.epsilon = e;
            cfg.seed = base.seed.wrapping_add(i as u64);
            eraser_run(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.cross_prob.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::Domain("sweep needs two distinct epsilons".into()))?;
    let sampled_fit = if rows.iter().all(|r| r.cross_freq > 0.0) {
        let fy: Vec<f64> = rows.iter().map(|r| r.cross_freq.ln()).collect();
        linear_fit(&lx, &fy)
    } else {
        None
    };
    Ok(EraserSweep { rows, fit, sampled_fit })
}

/// Squared interaction ratio and whether it lies under the nonrelativistic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub ratio: f64,
    pub probability: f64,
    pub below_bound: bool,
}

pub fn eraser_bound_check(ratio: f64) -> Result<BoundCheck> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Domain(format!("ratio {ratio} outside [0, 1)")));
    }
    let probability = ratio * ratio;
    Ok(BoundCheck {
        ratio,
        probability,
        below_bound: probability <= ERASER_PROBABILITY_BOUND,
    })
}

/// Inputs of the thermal estimate, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalInput {
    pub temperature: f64,
    pub mass: f64,
    pub mean_speed: f64,
    pub mean_separation: f64,
    pub particle_count: f64,
    /// Interactions per second per particle; `mean_speed / mean_separation` if absent.
    #[serde(default)]
    pub collision_rate: Option<f64>,
    /// Energy per interaction; `k T` if absent.
    #[serde(default)]
    pub interaction_energy: Option<f64>,
    /// Total thermal energy; `N k T` if absent.
    #[serde(default)]
    pub thermal_energy: Option<f64>,
}

impl ThermalInput {
    /// One cubic metre of air at 0 C and one atmosphere.
    pub fn air_at_stp() -> Self {
        ThermalInput {
            temperature: 273.15,
            mass: 5e-26,
            mean_speed: 500.0,
            mean_separation: 5e-8,
            particle_count: 2.69e25,
            collision_rate: Some(1e10),
            interaction_energy: None,
            thermal_energy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("thermal.{key}"), format!("must be positive, got {v}")))
            }
        };
        check("temperature", self.temperature)?;
        check("mass", self.mass)?;
        check("mean_speed", self.mean_speed)?;
        check("mean_separation", self.mean_separation)?;
        check("particle_count", self.particle_count)?;
        if let Some(x) = self.collision_rate {
            check("collision_rate", x)?;
        }
        if let Some(x) = self.interaction_energy {
            check("interaction_energy", x)?;
        }
        if let Some(x) = self.thermal_energy {
            check("thermal_energy", x)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalEstimate {
    pub interaction_energy: f64,
    pub rest_energy: f64,
    /// `kT / (m c^2)`.
    pub ratio: f64,
    pub collision_rate: f64,
    /// `ratio^2 * X`, per second.
    pub fractional_rate: f64,
    pub thermal_energy: f64,
    pub joules_per_year: f64,
}

/// Possible fractional increase of nonrelativistic energy `(kT/mc^2)^2 X`.
///
/// A zero temperature gives a zero rate; other inputs must be positive.
pub fn thermal_estimate(inp: &ThermalInput) -> Result<ThermalEstimate> {
    if inp.temperature == 0.0 && inp.interaction_energy.is_none() {
        let mut warm = inp.clone();
        warm.temperature = 1.0;
        warm.validate()?;
        let x = inp.collision_rate.unwrap_or(inp.mean_speed / inp.mean_separation);
        return Ok(ThermalEstimate {
            interaction_energy: 0.0,
            rest_energy: inp.mass * SPEED_OF_LIGHT * SPEED_OF_LIGHT,
            ratio: 0.0,
            collision_rate: x,
            fractional_rate: 0.0,
            thermal_energy: inp.thermal_energy.unwrap_or(0.0),
            joules_per_year: 0.0,
        });
    }
    inp.validate()?;
    let kt = BOLTZMANN * inp.temperature;
    let energy = inp.interaction_energy.unwrap_or(kt);
    let rest_energy = inp.mass * SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    let ratio = energy / rest_energy;
    let x = inp.collision_rate.unwrap_or(inp.mean_speed / inp.mean_separation);
    let fractional_rate = ratio * ratio * x;
    let thermal_energy = inp.thermal_energy.unwrap_or(inp.particle_count * kt);
    Ok(ThermalEstimate {
        interaction_energy: energy,
        rest_energy,
        ratio,
        collision_rate: x,
        fractional_rate,
        thermal_energy,
        joules_per_year: fractional_rate * thermal_energy * SECONDS_PER_YEAR,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_gives_perfect_correlation() {
        let r = eraser_run(&EraserConfig::new(0.0, 1000, KickMode::RandomSign, 1)).unwrap();
        assert!(r.cross_prob < 1e-30);
        assert_eq!(r.counts[0][1] + r.counts[1][0], 0);
        assert!((r.correlation[0][0] - 0.5).abs() < 1e-12);
        assert!((r.correlation[1][1] - 0.5).abs() < 1e-12);
        assert!(basis_change_unitarity_residual() < 1e-12);
    }

    #[test]
    fn coherent_kick_amplitudes() {
        // cross amplitudes are +-eps/sqrt 2 before renormalization
        let eps = 0.1;
        let mut s = EraserConfig::new(eps, 1, KickMode::Coherent, 0).initial_state();
        apply_kick(&mut s, eps);
        let u = symmetric_basis_matrix();
        let v = &u * nalgebra::DVector::from_column_slice(&s.amplitudes);
        let expect = eps / 2f64.sqrt();
        assert!((v[1].re - expect).abs() < 1e-15);
        assert!((v[2].re - expect).abs() < 1e-15);
        assert!((v[1].norm_sqr() + v[2].norm_sqr() - eps * eps).abs() < 1e-15);
        let p = sa_probabilities(&s);
        assert!((p[1] + p[2] - eps * eps / (1.0 + eps * eps)).abs() < 1e-15);
    }

    #[test]
    fn kick_sign_does_not_matter() {
        let mut a = EraserConfig::new(0.07, 1, KickMode::Coherent, 0).initial_state();
        let mut b = a.clone();
        apply_kick(&mut a, 0.07);
        apply_kick(&mut b, -0.07);
        let pa = sa_probabilities(&a);
        let pb = sa_probabilities(&b);
        assert!((pa[1] + pa[2] - pb[1] - pb[2]).abs() < 1e-15);
    }

    #[test]
    fn bound_check_values() {
        let b = eraser_bound_check(1e-3).unwrap();
        assert_eq!(b.probability, 1e-6);
        assert!(b.below_bound);
        assert_eq!(eraser_bound_check(0.0).unwrap().probability, 0.0);
        assert!((eraser_bound_check(1e-7).unwrap().probability / 1e-14 - 1.0).abs() < 1e-12);
        assert!(eraser_bound_check(1.5).is_err());
    }

    #[test]
    fn thermal_air() {
        let mut inp = ThermalInput::air_at_stp();
        inp.interaction_energy = Some(4e-21);
        inp.thermal_energy = Some(1e5);
        let e = thermal_estimate(&inp).unwrap();
        assert!(e.ratio > 0.5e-12 && e.ratio < 2e-12);
        assert!(e.fractional_rate > 0.5e-14 && e.fractional_rate < 2e-14);
        assert!(e.joules_per_year > 0.015 && e.joules_per_year < 0.06);
    }

    #[test]
    fn thermal_scaling() {
        let base = ThermalInput::air_at_stp();
        let a = thermal_estimate(&base).unwrap();
        let mut doubled = base.clone();
        doubled.collision_rate = Some(2e10);
        let b = thermal_estimate(&doubled).unwrap();
        assert!((b.fractional_rate / a.fractional_rate - 2.0).abs() < 1e-12);
        let mut hot = base.clone();
        hot.temperature *= 3.0;
        let c = thermal_estimate(&hot).unwrap();
        assert!((c.fractional_rate / a.fractional_rate - 9.0).abs() < 1e-9);
        let mut cold = base;
        cold.temperature = 0.0;
        assert_eq!(thermal_estimate(&cold).unwrap().fractional_rate, 0.0);
    }

    #[test]
    fn resolved_run_matches_kick_scale() {
        let mut cfg = EraserConfig::new(0.05, 400, KickMode::Sde, 3);
        cfg.sde_steps = 50;
        let r = eraser_run(&cfg).unwrap();
        let ratio = r.cross_prob / (0.05 * 0.05);
        assert!(ratio > 0.7 && ratio < 1.3, "ratio {ratio}");
    }

    #[test]
    fn bad_config_names_key() {
        let cfg = EraserConfig::new(0.7, 10, KickMode::Coherent, 0);
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "eraser.epsilon"),
            other => panic!("{other:?}"),
        }
    }
}
