//! Reduced model of collapse: a multiplicative martingale walk of the
//! interacting-branch weight `x = mu* mu`.
//!
//! Each step moves `x` by `+-x(1 - x) s` with equal probability, so `x` is a
//! martingale and the probability of absorption at 1 equals the start value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{linear_fit, wilson_interval, LinearFit, Z95};

/// How the per-step scale `s` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepScale {
    Constant { s: f64 },
    /// `|N(mean, spread)|` drawn every step, capped at 1.
    Sampled { mean: f64, spread: f64 },
}

impl StepScale {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepScale::Constant { s } if s > 0.0 && s <= 1.0 => Ok(()),
            StepScale::Sampled { mean, spread } if mean > 0.0 && mean <= 1.0 && spread >= 0.0 => Ok(()),
            other => Err(Error::Domain(format!("invalid step scale {other:?}"))),
        }
    }

    /// Typical `s`, used for the default barrier.
    pub fn nominal(&self) -> f64 {
        match *self {
            StepScale::Constant { s } => s,
            StepScale::Sampled { mean, .. } => mean,
        }
    }

    /// Default absorbing threshold `s^2 / 4`.
    pub fn default_theta(&self) -> f64 {
        let s = self.nominal();
        s * s / 4.0
    }
}

/// One walker with its own random stream.
#[derive(Debug, Clone)]
pub struct WalkState {
    pub weight: f64,
    pub scale: StepScale,
    rng: ChaCha8Rng,
    bits: u64,
    bits_left: u32,
    normal: Option<Normal<f64>>,
}

impl WalkState {
    pub fn new(weight: f64, scale: StepScale, seed: u64, stream: u64) -> Result<Self> {
        scale.validate()?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::Domain(format!("weight {weight} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let normal = match scale {
            StepScale::Sampled { mean, spread } => Some(Normal::new(mean, spread).map_err(|e| Error::Domain(e.to_string()))?),
            StepScale::Constant { .. } => None,
        };
        Ok(WalkState {
            weight,
            scale,
            rng,
            bits: 0,
            bits_left: 0,
            normal,
        })
    }

    fn coin(&mut self) -> bool {
        if self.bits_left == 0 {
            self.bits = self.rng.gen();
            self.bits_left = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.bits_left -= 1;
        b
    }

    fn scale_sample(&mut self) -> f64 {
        match (self.scale, &self.normal) {
            (StepScale::Constant { s }, _) => s,
            (_, Some(n)) => n.sample(&mut self.rng).abs().min(1.0),
            _ => unreachable!("sampled scale always carries its distribution"),
        }
    }

    /// One fair step of size `x(1 - x) s`; a no-op at the barriers 0 and 1.
    pub fn step(&mut self) {
        let x = self.weight;
        if x <= 0.0 || x >= 1.0 {
            return;
        }
        let delta = x * (1.0 - x) * self.scale_sample();
        let up = self.coin();
        self.weight = if up { x + delta } else { x - delta }.clamp(0.0, 1.0);
    }
}

/// Free-function form of [`WalkState::step`].
pub fn walk_step(w: &mut WalkState) {
    w.step();
}

/// Outcome of [`absorb`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    /// 1 at the upper barrier, 0 at the lower, `None` if `max_steps` ran out.
    pub outcome: Option<u8>,
    pub steps: u64,
    pub final_weight: f64,
}

/// Step until `x <= theta` or `x >= 1 - theta`.
pub fn absorb(w: &mut WalkState, theta: f64, max_steps: u64) -> Absorption {
    let mut steps = 0;
    loop {
        let x = w.weight;
        if x >= 1.0 - theta {
            return Absorption {
                outcome: Some(1),
                steps,
                final_weight: x,
            };
        }
        if x <= theta {
            return Absorption {
                outcome: Some(0),
                steps,
                final_weight: x,
            };
        }
        if steps >= max_steps {
            return Absorption {
                outcome: None,
                steps,
                final_weight: x,
            };
        }
        w.step();
        steps += 1;
    }
}

/// Expected absorption time of the small-step diffusion limit,
/// `(2/s^2) [G(theta) - G(x)]` with `G(x) = (2x - 1) ln(x / (1 - x))`.
pub fn expected_steps_diffusion(x0: f64, s: f64, theta: f64) -> f64 {
    let g = |x: f64| (2.0 * x - 1.0) * (x / (1.0 - x)).ln();
    2.0 / (s * s) * (g(theta) - g(x0))
}

/// Per-walk `s` that matches a two-level collapse run: the branch weight moves
/// by `x(1 - x) a (dxi + dxi*)` per step, whose RMS is `x(1 - x) a sqrt(2 dt)`
/// for complex noise and `x(1 - x) a 2 sqrt(dt)` for real noise.
pub fn matched_step_scale(coefficient: f64, dt: f64, real_noise: bool) -> f64 {
    if real_noise {
        2.0 * coefficient * dt.sqrt()
    } else {
        coefficient * (2.0 * dt).sqrt()
    }
}

/// Summary of many walks from one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkEnsemble {
    pub start: f64,
    pub n: usize,
    pub up: usize,
    pub unabsorbed: usize,
    pub p_up: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_steps: f64,
    /// Mean `min(x_T, 1 - x_T)`: bounds `|P(up) - start|`.
    pub mean_residual: f64,
}

/// `n` independent walks; walk `i` uses stream `i` of `seed`.
pub fn walk_ensemble(start: f64, scale: StepScale, theta: f64, n: usize, seed: u64, max_steps: u64) -> Result<WalkEnsemble> {
    scale.validate()?;
    if n == 0 {
        return Err(Error::Domain("need at least one walk".into()));
    }
    let results: Vec<Absorption> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut w = WalkState::new(start, scale, seed, i as u64)?;
            Ok(absorb(&mut w, theta, max_steps))
        })
        .collect::<Result<_>>()?;
    let up = results.iter().filter(|a| a.outcome == Some(1)).count();
    let unabsorbed = results.iter().filter(|a| a.outcome.is_none()).count();
    let (lo, hi) = wilson_interval(up, n, Z95);
    Ok(WalkEnsemble {
        start,
        n,
        up,
        unabsorbed,
        p_up: up as f64 / n as f64,
        ci_low: lo,
        ci_high: hi,
        mean_steps: results.iter().map(|a| a.steps as f64).sum::<f64>() / n as f64,
        mean_residual: results
            .iter()
            .map(|a| a.final_weight.min(1.0 - a.final_weight))
            .sum::<f64>()
            / n as f64,
    })
}

/// Absorption probabilities over a set of starting weights with a fitted line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityScan {
    pub scale: StepScale,
    pub theta: f64,
    pub rows: Vec<WalkEnsemble>,
    pub fit: LinearFit,
}

impl LinearityScan {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["start_weight", "n", "p_up", "ci_low", "ci_high", "mean_steps", "unabsorbed"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.start.to_string(),
                r.n.to_string(),
                r.p_up.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.mean_steps.to_string(),
                r.unabsorbed.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Absorption probability against starting weight.
///
/// Start `i` uses seed `seed + i`, so points are independent.
pub fn born_linearity_scan(scale: StepScale, starts: &[f64], n_per_point: usize, seed: u64) -> Result<LinearityScan> {
    born_linearity_scan_with_theta(scale, scale.default_theta(), starts, n_per_point, seed, u64::MAX)
}

pub fn born_linearity_scan_with_theta(
    scale: StepScale,
    theta: f64,
    starts: &[f64],
    n_per_point: usize,
    seed: u64,
    max_steps: u64,
) -> Result<LinearityScan> {
    if starts.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Domain("starting weights must lie in (0, 1)".into()));
    }
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::Domain(format!("theta {theta} outside (0, 0.5)")));
    }
    let rows = starts
        .iter()
        .enumerate()
        .map(|(i, &x)| walk_ensemble(x, scale, theta, n_per_point, seed.wrapping_add(i as u64), max_steps))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.start).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.p_up).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Domain("need two distinct starting weights".into()))?;
    Ok(LinearityScan { scale, theta, rows, fit })
}

/// Step counts needed to collapse when each interaction moves the weight by
/// `ratio * floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCountEstimate {
    /// `1 / (ratio * floor)^2`: the spread `sqrt(N) delta` reaches order 1.
    pub rough: f64,
    /// Expected exit time from 1/2 of a walk with constant step `delta`: `0.25 / delta^2`.
    pub martingale: f64,
}

/// `floor` is the smallest value of `mu* mu nu* nu` along the walk.
pub fn step_count_estimate(ratio: f64, floor: f64) -> Result<StepCountEstimate> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("ratio {ratio} outside (0, 1]")));
    }
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::Domain(format!("floor {floor} outside (0, 1]")));
    }
    let delta = ratio * floor;
    Ok(StepCountEstimate {
        rough: 1.0 / (delta * delta),
        martingale: 0.25 / (delta * delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_values() {
        let mut w = WalkState::new(0.5, StepScale::Constant { s: 0.1 }, 1, 0).unwrap();
        w.step();
        assert!((w.weight - 0.525).abs() < 1e-15 || (w.weight - 0.475).abs() < 1e-15);
    }

    #[test]
    fn barriers_are_absorbing() {
        for x in [0.0, 1.0] {
            let mut w = WalkState::new(x, StepScale::Constant { s: 0.5 }, 1, 0).unwrap();
            for _ in 0..10 {
                w.step();
            }
            assert_eq!(w.weight, x);
        }
    }

    #[test]
    fn start_at_upper_threshold_absorbs_immediately() {
        let scale = StepScale::Constant { s: 0.1 };
        let theta = scale.default_theta();
        let mut w = WalkState::new(1.0 - theta, scale, 3, 0).unwrap();
        let a = absorb(&mut w, theta, 10);
        assert_eq!(a.outcome, Some(1));
        assert!(a.steps <= 3);
    }

    #[test]
    fn increments_have_zero_mean() {
        let mut w = WalkState::new(0.5, StepScale::Constant { s: 0.2 }, 42, 0).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let before = w.weight;
            w.step();
            let d = w.weight - before;
            sum += d;
            sum2 += d * d;
            // keep sampling the step law at 0.5
            w.weight = 0.5;
        }
        let mean = sum / n as f64;
        let sigma = (sum2 / n as f64 - mean * mean).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 4.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn walk_stays_in_unit_interval() {
        let mut w = WalkState::new(0.3, StepScale::Sampled { mean: 0.8, spread: 0.5 }, 5, 0).unwrap();
        for _ in 0..10_000 {
            w.step();
            assert!((0.0..=1.0).contains(&w.weight));
        }
    }

    #[test]
    fn step_count_reference_values() {
        let e = step_count_estimate(1e-3, 1.0).unwrap();
        assert!((e.rough - 1e6).abs() < 1e-6);
        assert!((e.martingale - 2.5e5).abs() < 1e-6);
        assert!((step_count_estimate(1e-3, 1e-3).unwrap().rough / 1e12 - 1.0).abs() < 1e-12);
        assert!((step_count_estimate(1e-7, 1e-3).unwrap().rough / 1e20 - 1.0).abs() < 1e-12);
        assert_eq!(step_count_estimate(1.0, 1.0).unwrap().rough, 1.0);
        assert!(step_count_estimate(0.0, 1.0).is_err());
        assert!(step_count_estimate(0.5, 0.0).is_err());
    }

    #[test]
    fn diffusion_oracle_vanishes_at_barrier() {
        let theta = 1e-3;
        assert!(expected_steps_diffusion(theta, 0.1, theta).abs() < 1e-9);
        assert!(expected_steps_diffusion(1.0 - theta, 0.1, theta).abs() < 1e-6);
        assert!(expected_steps_diffusion(0.5, 0.1, theta) > 0.0);
    }

    #[test]
    fn small_scan_is_reproducible() {
        let scale = StepScale::Constant { s: 0.2 };
        let a = born_linearity_scan(scale, &[0.2, 0.5, 0.8], 2000, 7).unwrap();
        let b = born_linearity_scan(scale, &[0.2, 0.5, 0.8], 2000, 7).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("start_weight,n,p_up"));
        assert_eq!(text.lines().count(), 4);
    }
}
