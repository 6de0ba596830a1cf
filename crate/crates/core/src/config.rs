//! Run configuration: a strict TOML schema with scenario presets.
//!
//! Every section has defaults, unknown keys are rejected, and every
//! validation error names the dotted key it refers to.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::Quantity;
use crate::error::{Error, Result};
use crate::experiments::{KickMode, ThermalInput};
use crate::grid::{GridSpec, ParticleSpec};
use crate::operators::{PairPotential, PotentialForm};
use crate::sde::{IntegratorConfig, Scheme};
use crate::state::GaussianPacket;
use crate::walk::StepScale;

/// Version stamped into every artifact.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FreePacket,
    TwoLevelCollapse,
    GridScattering,
    Eraser,
    WalkScan,
    ConservationSuite,
    Thermal,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::FreePacket,
        ScenarioKind::TwoLevelCollapse,
        ScenarioKind::GridScattering,
        ScenarioKind::Eraser,
        ScenarioKind::WalkScan,
        ScenarioKind::ConservationSuite,
        ScenarioKind::Thermal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FreePacket => "free_packet",
            ScenarioKind::TwoLevelCollapse => "two_level_collapse",
            ScenarioKind::GridScattering => "grid_scattering",
            ScenarioKind::Eraser => "eraser",
            ScenarioKind::WalkScan => "walk_scan",
            ScenarioKind::ConservationSuite => "conservation_suite",
            ScenarioKind::Thermal => "thermal",
        }
    }

    /// Backend the scenario runs on, if it integrates a state at all.
    pub fn backend(self) -> Option<Backend> {
        match self {
            ScenarioKind::FreePacket | ScenarioKind::GridScattering | ScenarioKind::ConservationSuite => {
                Some(Backend::Grid)
            }
            ScenarioKind::TwoLevelCollapse | ScenarioKind::Eraser => Some(Backend::Finite),
            ScenarioKind::WalkScan | ScenarioKind::Thermal => None,
        }
    }

    /// Trajectories (or walks, or runs per point) when none are configured.
    pub fn default_n_traj(self) -> usize {
        match self {
            ScenarioKind::TwoLevelCollapse => 1000,
            ScenarioKind::Eraser | ScenarioKind::WalkScan => 10_000,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Grid,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Text,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_particles() -> Vec<ParticleSpec> {
    vec![ParticleSpec::new("a", 1.0), ParticleSpec::new("b", 1.0)]
}

/// `V = diag(v, 0)` with a supplied rate and energy scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelPhysics {
    #[serde(default = "one")]
    pub v: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub energy_denominator: f64,
}

impl Default for TwoLevelPhysics {
    fn default() -> Self {
        TwoLevelPhysics {
            v: 1.0,
            gamma: 1.0,
            energy_denominator: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default = "default_particles")]
    pub particles: Vec<ParticleSpec>,
    /// Speed of light in natural units.
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub potentials: Vec<PairPotential>,
    /// Artifact-only multiplier on collapse strength.
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub two_level: TwoLevelPhysics,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            particles: default_particles(),
            c: 1.0,
            potentials: Vec::new(),
            gain: 1.0,
            two_level: TwoLevelPhysics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// One packet per grid particle.
    #[serde(default)]
    pub packets: Vec<GaussianPacket>,
    /// Starting branch weight `mu* mu` of finite scenarios.
    #[serde(default = "half")]
    pub weight: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            packets: Vec::new(),
            weight: 0.5,
        }
    }
}

fn default_dt() -> f64 {
    1e-3
}
fn default_n_steps() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_record_every() -> usize {
    1
}
fn default_theta() -> f64 {
    1e-3
}

/// Integrator settings; the gain lives in `physics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_true")]
    pub renormalize_each_step: bool,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_theta")]
    pub theta_abs: f64,
    #[serde(default)]
    pub real_noise: bool,
    /// Defaults to true on the finite backend and false on grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_on_absorption: Option<bool>,
    #[serde(default = "default_true")]
    pub record_expectations: bool,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            dt: default_dt(),
            n_steps: default_n_steps(),
            scheme: Scheme::default(),
            renormalize_each_step: true,
            record_every: 1,
            theta_abs: default_theta(),
            real_noise: false,
            stop_on_absorption: None,
            record_expectations: true,
        }
    }
}

impl NumericsConfig {
    pub fn integrator(&self, gain: f64, backend: Backend) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            n_steps: self.n_steps,
            scheme: self.scheme,
            gain,
            renormalize_each_step: self.renormalize_each_step,
            record_every: self.record_every,
            theta_abs: self.theta_abs,
            real_noise: self.real_noise,
            stop_on_absorption: self.stop_on_absorption.unwrap_or(backend == Backend::Finite),
            record_expectations: self.record_expectations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    /// At most `i64::MAX`: TOML integers are signed.
    #[serde(default)]
    pub master_seed: u64,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

fn default_starts() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn default_walk_scale() -> StepScale {
    StepScale::Constant { s: 0.05 }
}

fn default_max_steps() -> u64 {
    100_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    #[serde(default = "default_starts")]
    pub starts: Vec<f64>,
    #[serde(default = "default_walk_scale")]
    pub scale: StepScale,
    /// Absorption threshold; `s^2/4` of the nominal scale if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

impl Default for WalkSection {
    fn default() -> Self {
        WalkSection {
            starts: default_starts(),
            scale: default_walk_scale(),
            theta: None,
            max_steps: default_max_steps(),
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![0.02, 0.05, 0.1]
}

fn default_modes() -> Vec<KickMode> {
    vec![KickMode::Coherent, KickMode::RandomSign]
}

fn default_amplitudes() -> [f64; 2] {
    [std::f64::consts::FRAC_1_SQRT_2; 2]
}

fn default_sde_steps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EraserSection {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<KickMode>,
    #[serde(default = "default_amplitudes")]
    pub amplitudes: [f64; 2],
    #[serde(default = "default_sde_steps")]
    pub sde_steps: usize,
}

impl Default for EraserSection {
    fn default() -> Self {
        EraserSection {
            epsilons: default_epsilons(),
            modes: default_modes(),
            amplitudes: default_amplitudes(),
            sde_steps: default_sde_steps(),
        }
    }
}

fn default_quantity() -> Quantity {
    Quantity::Momentum { component: 0 }
}

fn default_refinement() -> Vec<usize> {
    vec![64, 128]
}

fn default_gains() -> Vec<f64> {
    vec![1.0, 100.0]
}

fn default_order_window() -> [f64; 2] {
    [3.0, 5.0]
}

fn default_spectral_tolerance() -> f64 {
    1e-10
}

/// Grid-refinement study of one conserved quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservationSection {
    #[serde(default = "default_quantity")]
    pub quantity: Quantity,
    /// Points per axis, each the double of the previous.
    #[serde(default = "default_refinement")]
    pub refinement: Vec<usize>,
    #[serde(default = "default_gains")]
    pub gains: Vec<f64>,
    /// Accepted range of the error ratio under `h -> h/2`.
    #[serde(default = "default_order_window")]
    pub order_window: [f64; 2],
    /// Bound on the spectral identity residual.
    #[serde(default = "default_spectral_tolerance")]
    pub spectral_tolerance: f64,
    /// Points per axis of the spectral check; the finest refinement when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_points: Option<usize>,
}

impl Default for ConservationSection {
    fn default() -> Self {
        ConservationSection {
            quantity: default_quantity(),
            refinement: default_refinement(),
            gains: default_gains(),
            order_window: default_order_window(),
            spectral_tolerance: default_spectral_tolerance(),
            spectral_points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eraser: Option<EraserSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation: Option<ConservationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalInput>,
}

fn key_err(key: impl Into<String>, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(key, other.to_string()),
    }
}

impl RunConfig {
    /// Bare config for a scenario with every default applied.
    pub fn minimal(scenario: ScenarioKind) -> Self {
        let mut cfg = RunConfig {
            scenario,
            backend: None,
            physics: PhysicsConfig::default(),
            grid: None,
            initial: InitialConfig::default(),
            numerics: NumericsConfig::default(),
            ensemble: EnsembleConfig::default(),
            output: OutputConfig::default(),
            walk: None,
            eraser: None,
            conservation: None,
            thermal: None,
        };
        cfg.fill_defaults();
        cfg
    }

    /// The shipped configuration of each scenario.
    pub fn preset(scenario: ScenarioKind) -> Self {
        let mut cfg = RunConfig::minimal(scenario);
        match scenario {
            ScenarioKind::FreePacket => {
                cfg.physics.particles = vec![ParticleSpec::new("a", 1.0)];
                cfg.grid = Some(GridSpec {
                    dims: 1,
                    points_per_axis: 512,
                    extent: 40.0,
                });
                cfg.initial.packets = vec![GaussianPacket::new_1d(0.0, 0.0, 1.0)];
                cfg.numerics.dt = 0.01;
                cfg.numerics.n_steps = 1000;
                cfg.numerics.record_every = 10;
            }
            ScenarioKind::TwoLevelCollapse => {
                cfg.numerics.dt = 1e-3;
                cfg.numerics.n_steps = 50_000;
                cfg.numerics.record_every = 100;
                cfg.numerics.record_expectations = false;
                cfg.ensemble.n_traj = Some(1000);
            }
            ScenarioKind::GridScattering => {
                cfg.physics.c = 10.0;
                cfg.physics.potentials = vec![PairPotential::new(
                    PotentialForm::GaussianWell { depth: 2.0, width: 1.0 },
                    (0, 1),
                    -1.0,
                )];
                cfg.grid = Some(GridSpec {
                    dims: 1,
                    points_per_axis: 128,
                    extent: 16.0,
                });
                cfg.initial.packets = vec![GaussianPacket::new_1d(-3.0, 1.0, 1.0), GaussianPacket::new_1d(3.0, -1.0, 1.0)];
                cfg.numerics.dt = 0.005;
                cfg.numerics.n_steps = 600;
                cfg.numerics.record_every = 10;
                cfg.ensemble.n_traj = Some(1);
            }
            ScenarioKind::ConservationSuite => {
                cfg.physics.c = 10.0;
                cfg.physics.potentials = vec![PairPotential::new(
                    PotentialForm::GaussianWell { depth: 1.0, width: 1.0 },
                    (0, 1),
                    1.0,
                )];
                cfg.grid = Some(GridSpec {
                    dims: 1,
                    points_per_axis: 64,
                    extent: 16.0,
                });
                cfg.initial.packets = vec![GaussianPacket::new_1d(-2.5, 1.2, 1.0), GaussianPacket::new_1d(2.5, -0.6, 1.0)];
                cfg.numerics.scheme = Scheme::CrankNicolsonStencil;
                cfg.numerics.dt = 0.005;
                cfg.numerics.n_steps = 600;
                cfg.numerics.record_every = 10;
            }
            ScenarioKind::Eraser | ScenarioKind::WalkScan | ScenarioKind::Thermal => {}
        }
        cfg
    }

    /// Two-dimensional angular-momentum variant of the conservation suite.
    pub fn preset_angular_momentum() -> Self {
        let mut cfg = RunConfig::preset(ScenarioKind::ConservationSuite);
        cfg.physics.potentials = vec![PairPotential::new(
            PotentialForm::GaussianWell { depth: 1.0, width: 2.0 },
            (0, 1),
            1.0,
        )];
        cfg.grid = Some(GridSpec {
            dims: 2,
            points_per_axis: 32,
            extent: 8.0,
        });
        // Relative momentum antiparallel to the separation: the pair approaches
        // head on while <L_z> sits in the centre of mass, so L_z is uncorrelated
        // with the collapse operator and exactly conserved in the continuum.
        cfg.initial.packets = vec![
            GaussianPacket::new_2d([-0.4, 0.5], [0.6, 0.0], 1.0),
            GaussianPacket::new_2d([0.4, 0.3], [-0.2, 0.2], 1.0),
        ];
        cfg.numerics.dt = 0.008;
        cfg.numerics.n_steps = 2;
        cfg.numerics.record_every = 1;
        if let Some(c) = cfg.conservation.as_mut() {
            c.quantity = Quantity::AngularMomentumZ;
            c.refinement = vec![32, 64];
            c.spectral_points = Some(32);
        }
        cfg
    }

    /// Insert the default section of the chosen scenario when absent.
    pub fn fill_defaults(&mut self) {
        match self.scenario {
            ScenarioKind::WalkScan => {
                self.walk.get_or_insert_with(WalkSection::default);
            }
            ScenarioKind::Eraser => {
                self.eraser.get_or_insert_with(EraserSection::default);
            }
            ScenarioKind::ConservationSuite => {
                self.conservation.get_or_insert_with(ConservationSection::default);
            }
            ScenarioKind::Thermal => {
                self.thermal.get_or_insert_with(ThermalInput::air_at_stp);
            }
            _ => {}
        }
    }

    pub fn n_traj(&self) -> usize {
        self.ensemble.n_traj.unwrap_or(self.scenario.default_n_traj())
    }

    pub fn backend(&self) -> Option<Backend> {
        self.backend.or(self.scenario.backend())
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        self.numerics
            .integrator(self.physics.gain, self.backend().unwrap_or(Backend::Finite))
    }

    /// Range and consistency checks; builds every system the run would use.
    pub fn validate(&self) -> Result<()> {
        if let (Some(b), Some(expected)) = (self.backend, self.scenario.backend()) {
            if b != expected {
                return Err(Error::config(
                    "backend",
                    format!("{} runs on the {expected:?} backend", self.scenario.name()),
                ));
            }
        }
        let p = &self.physics;
        if !(p.c > 0.0 && p.c.is_finite()) {
            return Err(Error::config("physics.c", format!("must be positive, got {}", p.c)));
        }
        if !(p.gain >= 0.0 && p.gain.is_finite()) {
            return Err(Error::config("physics.gain", format!("must be nonnegative, got {}", p.gain)));
        }
        for (i, part) in p.particles.iter().enumerate() {
            part.validate().map_err(|e| key_err(format!("physics.particles[{i}]"), e))?;
        }
        for (i, pot) in p.potentials.iter().enumerate() {
            pot.validate(p.particles.len())
                .map_err(|e| key_err(format!("physics.potentials[{i}]"), e))?;
        }
        if self.ensemble.n_traj == Some(0) {
            return Err(Error::config("ensemble.n_traj", "must be at least 1"));
        }
        if self.ensemble.master_seed > i64::MAX as u64 {
            return Err(Error::config("ensemble.master_seed", "must not exceed 2^63 - 1"));
        }
        if !self.output.directory.is_empty() && self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "at least one format is required"));
        }
        match self.backend() {
            Some(Backend::Grid) => self.validate_grid()?,
            Some(Backend::Finite) if self.scenario == ScenarioKind::TwoLevelCollapse => {
                let t = &p.two_level;
                if !t.v.is_finite() || t.v == 0.0 {
                    return Err(Error::config("physics.two_level.v", "must be finite and nonzero"));
                }
                if !(t.gamma >= 0.0 && t.gamma.is_finite()) {
                    return Err(Error::config("physics.two_level.gamma", "must be nonnegative"));
                }
                if !(t.energy_denominator > 0.0 && t.energy_denominator.is_finite()) {
                    return Err(Error::config("physics.two_level.energy_denominator", "must be positive"));
                }
                let w = self.initial.weight;
                if !(w > 0.0 && w < 1.0) {
                    return Err(Error::config("initial.weight", format!("must lie in (0, 1), got {w}")));
                }
                let system = crate::scenarios::build_system(self)?;
                self.integrator_config().validate(&system)?;
            }
            _ => {}
        }
        if let Some(w) = &self.walk {
            w.scale.validate().map_err(|e| key_err("walk.scale", e))?;
            if w.starts.is_empty() || w.starts.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(Error::config("walk.starts", "each start must lie in (0, 1)"));
            }
            if let Some(t) = w.theta {
                if !(t > 0.0 && t < 0.5) {
                    return Err(Error::config("walk.theta", format!("must lie in (0, 0.5), got {t}")));
                }
            }
            if w.max_steps == 0 {
                return Err(Error::config("walk.max_steps", "must be at least 1"));
            }
        }
        if let Some(e) = &self.eraser {
            if e.epsilons.is_empty() || e.epsilons.iter().any(|&x| !(x >= 0.0 && x < 0.5)) {
                return Err(Error::config("eraser.epsilons", "each epsilon must lie in [0, 0.5)"));
            }
            if e.modes.is_empty() {
                return Err(Error::config("eraser.modes", "at least one mode is required"));
            }
            let [a, b] = e.amplitudes;
            if !(a > 0.0 && b > 0.0 && (a * a + b * b - 1.0).abs() < 1e-12) {
                return Err(Error::config("eraser.amplitudes", "must be positive and normalized"));
            }
            if e.sde_steps == 0 {
                return Err(Error::config("eraser.sde_steps", "must be at least 1"));
            }
        }
        if let Some(t) = &self.thermal {
            t.validate()?;
        }
        Ok(())
    }

    fn validate_grid(&self) -> Result<()> {
        let spec = self
            .grid
            .ok_or_else(|| Error::config("grid", "grid scenarios need a [grid] section"))?;
        spec.validate().map_err(|e| key_err("grid", e))?;
        if self.initial.packets.len() != self.physics.particles.len() {
            return Err(Error::config(
                "initial.packets",
                format!(
                    "{} packets for {} particles",
                    self.initial.packets.len(),
                    self.physics.particles.len()
                ),
            ));
        }
        for (i, pk) in self.initial.packets.iter().enumerate() {
            if !(pk.width > 0.0 && pk.width.is_finite()) {
                return Err(Error::config(format!("initial.packets[{i}].width"), "must be positive"));
            }
        }
        if let Some(c) = &self.conservation {
            if c.refinement.len() < 2 {
                return Err(Error::config("conservation.refinement", "needs at least two grids"));
            }
            for (i, w) in c.refinement.windows(2).enumerate() {
                if w[1] != 2 * w[0] {
                    return Err(Error::config(
                        format!("conservation.refinement[{}]", i + 1),
                        "each grid must double the previous",
                    ));
                }
            }
            for &n in &c.refinement {
                GridSpec { points_per_axis: n, ..spec }
                    .validate()
                    .map_err(|e| key_err("conservation.refinement", e))?;
            }
            if c.gains.is_empty() || c.gains.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
                return Err(Error::config("conservation.gains", "gains must be nonnegative"));
            }
            if !(c.order_window[0] > 0.0 && c.order_window[0] < c.order_window[1]) {
                return Err(Error::config("conservation.order_window", "must be an increasing positive pair"));
            }
            if !(c.spectral_tolerance > 0.0) {
                return Err(Error::config("conservation.spectral_tolerance", "must be positive"));
            }
            if let Some(n) = c.spectral_points {
                GridSpec { points_per_axis: n, ..spec }
                    .validate()
                    .map_err(|e| key_err("conservation.spectral_points", e))?;
            }
            if let Quantity::Momentum { component } = c.quantity {
                if component >= spec.dims {
                    return Err(Error::config("conservation.quantity", "momentum component out of range"));
                }
            }
            if c.quantity == Quantity::AngularMomentumZ && spec.dims != 2 {
                return Err(Error::config("conservation.quantity", "angular momentum needs dims = 2"));
            }
            for &n in &c.refinement {
                let mut probe = self.clone();
                probe.grid = Some(GridSpec { points_per_axis: n, ..spec });
                let system = crate::scenarios::build_system(&probe)?;
                probe.integrator_config().validate(&system)?;
            }
        } else {
            let system = crate::scenarios::build_system(self)?;
            self.integrator_config().validate(&system)?;
        }
        Ok(())
    }

    /// TOML text of the config; parsing it back yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML serialization, output section excluded.
    pub fn content_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let text = canonical.to_toml()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parse TOML text into a config; errors name the offending dotted key.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::new(text);
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.message().to_string();
        let key = match unknown_field(&message) {
            Some(field) if path == "." || path.is_empty() => field,
            Some(field) if path == field || path.ends_with(&format!(".{field}")) => path,
            Some(field) => format!("{path}.{field}"),
            None if path == "." || path.is_empty() => "<root>".into(),
            None => path,
        };
        Error::config(key, message)
    })?;
    cfg.fill_defaults();
    cfg.validate()?;
    Ok(cfg)
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config_str("scenario = \"two_level_collapse\"\n").unwrap();
        assert_eq!(cfg.physics.gain, 1.0);
        assert_eq!(cfg.numerics.theta_abs, 1e-3);
        assert_eq!(cfg.n_traj(), 1000);
        assert!(cfg.integrator_config().stop_on_absorption);
    }

    #[test]
    fn unknown_keys_are_named() {
        assert_eq!(key_of(parse_config_str("scenario = \"thermal\"\nbogus = 1\n")), "bogus");
        assert_eq!(
            key_of(parse_config_str("scenario = \"thermal\"\n[numerics]\ndtt = 0.1\n")),
            "numerics.dtt"
        );
    }

    #[test]
    fn bad_values_are_named() {
        assert_eq!(
            key_of(parse_config_str("scenario = \"two_level_collapse\"\n[numerics]\ndt = -1.0\n")),
            "numerics.dt"
        );
        assert_eq!(
            key_of(parse_config_str("scenario = \"two_level_collapse\"\n[numerics]\ndt = \"x\"\n")),
            "numerics.dt"
        );
        assert_eq!(
            key_of(parse_config_str("scenario = \"two_level_collapse\"\n[initial]\nweight = 1.5\n")),
            "initial.weight"
        );
    }

    #[test]
    fn stencil_dt_bound_names_dt() {
        let mut cfg = RunConfig::preset(ScenarioKind::ConservationSuite);
        cfg.numerics.dt = 1.0;
        let text = cfg.to_toml().unwrap();
        assert_eq!(key_of(parse_config_str(&text)), "numerics.dt");
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in ScenarioKind::ALL {
            let cfg = RunConfig::preset(kind);
            cfg.validate().unwrap_or_else(|e| panic!("{kind:?}: {e}"));
            let back = parse_config_str(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{kind:?}");
        }
        let l = RunConfig::preset_angular_momentum();
        l.validate().unwrap();
        assert_eq!(parse_config_str(&l.to_toml().unwrap()).unwrap(), l);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset(ScenarioKind::Eraser);
        let mut b = a.clone();
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.ensemble.master_seed = 9;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert_eq!(a.content_hash().unwrap().len(), 64);
        let mut c = a.clone();
        c.output.directory = "elsewhere".into();
        assert_eq!(a.content_hash().unwrap(), c.content_hash().unwrap());
    }
}
