//! Execute a [`RunConfig`] and write its artifacts.
//!
//! All files are written after aggregation, each through a temporary file
//! that is renamed into place. Every artifact carries the config hash, the
//! master seed and the artifact version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{OutputFormat, RunConfig, ScenarioKind, ARTIFACT_VERSION};
use crate::diagnostics::{
    conservation_run, deviation_ratio_benchmark, energy_deviation_study, observed_orders, ConservationReport,
    DeviationBenchmark, EnergyDeviationStudy,
};
use crate::error::{Error, Result};
use crate::experiments::{
    basis_change_unitarity_residual, eraser_bound_check, eraser_sweep, thermal_estimate, BoundCheck, EraserConfig,
    EraserSweep, ThermalEstimate,
};
use crate::scenarios::{build_integrator, free_width, position_width};
use crate::sde::{EnsembleSummary, Scheme, StepView, TrajectoryRecord};
use crate::walk::{born_linearity_scan_with_theta, expected_steps_diffusion, LinearityScan};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// A configured check did not hold.
    ChecksFailed { failures: Vec<String> },
    /// At least one trajectory hit a non-finite state; results are partial.
    Aborted { trajectories: usize, first_step: usize, reason: String },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::ChecksFailed { .. } => "checks_failed",
            RunStatus::Aborted { .. } => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub artifact_version: u32,
    pub scenario: ScenarioKind,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: ScenarioKind,
    pub n_traj: usize,
    pub statistic: (&'static str, f64),
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    /// `scenario n_traj statistic status path` on one line.
    pub fn summary_line(&self) -> String {
        format!(
            "{} n_traj={} {}={:.6e} status={} out={}",
            self.scenario.name(),
            self.n_traj,
            self.statistic.0,
            self.statistic.1,
            self.status.label(),
            self.out_dir.display()
        )
    }
}

/// Atomic writer for one run's artifacts.
struct Artifacts<'a> {
    dir: &'a Path,
    meta: Meta,
    cfg: &'a RunConfig,
    written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

impl<'a> Artifacts<'a> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::create_dir_all(self.dir)?;
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        if !self.cfg.output.wants(OutputFormat::Json) {
            return Ok(());
        }
        let text = serde_json::to_string_pretty(&Envelope { meta: &self.meta, result })
            .map_err(|e| Error::Io(e.to_string()))?;
        self.put(name, format!("{text}\n").as_bytes())
    }

    /// CSV preceded by `#` comment lines carrying the run metadata.
    fn csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        if !self.cfg.output.wants(OutputFormat::Csv) {
            return Ok(());
        }
        let mut buf = format!(
            "# artifact_version={}\n# scenario={}\n# config_hash={}\n# seed={}\n# status={}\n",
            self.meta.artifact_version,
            self.meta.scenario.name(),
            self.meta.config_hash,
            self.meta.seed,
            self.meta.status.label()
        )
        .into_bytes();
        body(&mut buf)?;
        self.put(name, &buf)
    }

    fn text(&mut self, name: &str, rows: &[(&str, String)]) -> Result<()> {
        if !self.cfg.output.wants(OutputFormat::Text) {
            return Ok(());
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = format!(
            "{:width$}  {}\n{:width$}  {}\n{:width$}  {}\n",
            "scenario",
            self.meta.scenario.name(),
            "config_hash",
            self.meta.config_hash,
            "seed",
            self.meta.seed,
            width = width.max(11)
        );
        for (k, v) in rows {
            s.push_str(&format!("{k:width$}  {v}\n", width = width.max(11)));
        }
        self.put(name, s.as_bytes())
    }
}

fn abort_status(records: &[&TrajectoryRecord]) -> RunStatus {
    let aborted: Vec<_> = records.iter().filter_map(|r| r.abort.as_ref()).collect();
    match aborted.first() {
        None => RunStatus::Ok,
        Some(a) => RunStatus::Aborted {
            trajectories: aborted.len(),
            first_step: a.step,
            reason: a.reason.clone(),
        },
    }
}

/// Free packet width against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreePacketResult {
    pub times: Vec<f64>,
    pub widths: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub max_width_error: f64,
    /// Final state equals the deterministic reference stepper bit for bit.
    pub matches_reference: bool,
}

pub fn free_packet(cfg: &RunConfig) -> Result<(FreePacketResult, TrajectoryRecord)> {
    let (integ, psi) = build_integrator(cfg)?;
    let sigma = cfg.initial.packets[0].width;
    let mass = cfg.physics.particles[0].mass;
    let every = cfg.numerics.record_every;
    let mut times = vec![0.0];
    let mut widths = vec![position_width(&psi, 0, 0)?];
    let mut failure = None;
    let mut observe = |v: &StepView| {
        if v.step % every == 0 || v.step == cfg.numerics.n_steps {
            match position_width(v.end_raw, 0, 0) {
                Ok(w) => {
                    times.push(v.step as f64 * v.dt);
                    widths.push(w);
                }
                Err(e) => failure = Some(e),
            }
        }
    };
    let record = integ.run_trajectory_observed(&psi, cfg.ensemble.master_seed, 0, Some(&mut observe))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let (_, end) = integ.run_with_state(&psi, cfg.ensemble.master_seed, 0)?;
    let reference = integ.schrodinger_reference(&psi, record.steps_taken)?;
    let matches_reference = end.amplitudes == reference.amplitudes;
    let closed_form: Vec<f64> = times.iter().map(|&t| free_width(sigma, mass, t)).collect();
    let max_width_error = widths
        .iter()
        .zip(&closed_form)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((
        FreePacketResult {
            times,
            widths,
            closed_form,
            max_width_error,
            matches_reference,
        },
        record,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoLevelResult {
    pub summary: EnsembleSummary,
    pub max_martingale_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatteringResult {
    pub energy: EnergyDeviationStudy,
    pub benchmark: DeviationBenchmark,
    /// Per trajectory: `(stream, final branch weight, absorbed_at)`.
    pub trajectories: Vec<(u64, f64, Option<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EraserReport {
    pub sweeps: Vec<EraserSweep>,
    pub bound_check: BoundCheck,
    pub unitarity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkReport {
    pub scan: LinearityScan,
    /// Diffusion-limit mean absorption steps from each start.
    pub diffusion_steps: Vec<f64>,
}

/// One grid in the refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementEntry {
    pub gain: f64,
    pub points_per_axis: usize,
    pub report: ConservationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationSuite {
    pub entries: Vec<RefinementEntry>,
    /// Per gain: successive residual ratios under `h -> h/2`.
    pub residual_ratios: Vec<(f64, Vec<f64>)>,
    pub drift_ratios: Vec<(f64, Vec<f64>)>,
    /// Per gain: spectral identity residual on the finest grid.
    pub spectral_residuals: Vec<(f64, f64)>,
    pub failures: Vec<String>,
}

impl ConservationSuite {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Refinement study over `conservation.refinement` and `conservation.gains`.
pub fn conservation_suite(cfg: &RunConfig) -> Result<ConservationSuite> {
    let sec = cfg
        .conservation
        .clone()
        .ok_or_else(|| Error::config("conservation", "section missing"))?;
    let spec = cfg.grid.ok_or_else(|| Error::config("grid", "section missing"))?;
    let seed = cfg.ensemble.master_seed;
    let hash = cfg.content_hash()?;
    let mut entries = Vec::new();
    let mut residual_ratios = Vec::new();
    let mut drift_ratios = Vec::new();
    let mut spectral_residuals = Vec::new();
    let mut failures = Vec::new();
    let [lo, hi] = sec.order_window;
    for &gain in &sec.gains {
        let mut res = Vec::new();
        let mut drift = Vec::new();
        for &n in &sec.refinement {
            let mut c = cfg.clone();
            c.grid = Some(crate::grid::GridSpec { points_per_axis: n, ..spec });
            c.physics.gain = gain;
            let (integ, psi) = build_integrator(&c)?;
            let (mut report, record) = conservation_run(&integ, &psi, seed, sec.quantity)?;
            if let Some(a) = &record.abort {
                return Err(Error::NumericalAbort {
                    step: a.step,
                    reason: a.reason.clone(),
                });
            }
            report.config_hash = Some(hash.clone());
            res.push(report.max_residual);
            drift.push(report.drift);
            entries.push(RefinementEntry {
                gain,
                points_per_axis: n,
                report,
            });
        }
        let rr: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
        let dr: Vec<f64> = drift.windows(2).map(|w| w[0] / w[1]).collect();
        for (i, r) in rr.iter().enumerate() {
            if !(lo..=hi).contains(r) {
                failures.push(format!("gain {gain}: residual ratio {r:.3} at refinement {i} outside [{lo}, {hi}]"));
            }
        }
        for (i, r) in dr.iter().enumerate() {
            if !(lo..=hi).contains(r) {
                failures.push(format!("gain {gain}: drift ratio {r:.3} at refinement {i} outside [{lo}, {hi}]"));
            }
        }
        residual_ratios.push((gain, rr));
        drift_ratios.push((gain, dr));

        let mut c = cfg.clone();
        c.grid = Some(crate::grid::GridSpec {
            points_per_axis: sec
                .spectral_points
                .unwrap_or(*sec.refinement.last().expect("validated nonempty")),
            ..spec
        });
        c.physics.gain = gain;
        c.numerics.scheme = Scheme::SplitStepSpectral;
        let (integ, psi) = build_integrator(&c)?;
        let (report, _) = conservation_run(&integ, &psi, seed, sec.quantity)?;
        if report.max_residual >= sec.spectral_tolerance {
            failures.push(format!(
                "gain {gain}: spectral residual {:.3e} not below {:.1e}",
                report.max_residual, sec.spectral_tolerance
            ));
        }
        spectral_residuals.push((gain, report.max_residual));
    }
    Ok(ConservationSuite {
        entries,
        residual_ratios,
        drift_ratios,
        spectral_residuals,
        failures,
    })
}

fn write_records(art: &mut Artifacts, records: &[TrajectoryRecord], limit: usize) -> Result<()> {
    for rec in records.iter().take(limit) {
        art.csv(&format!("trajectory_{}.csv", rec.stream), |buf| rec.write_csv(&mut *buf))?;
    }
    Ok(())
}

/// Trajectory CSVs written per run at most.
const MAX_TRAJECTORY_FILES: usize = 16;

/// Execute the scenario and write its artifacts under `output.directory`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.content_hash()?;
    let seed = cfg.ensemble.master_seed;
    let n_traj = cfg.n_traj();
    let dir = PathBuf::from(&cfg.output.directory);
    let mut art = Artifacts {
        dir: &dir,
        meta: Meta {
            artifact_version: ARTIFACT_VERSION,
            scenario: cfg.scenario,
            config_hash: hash.clone(),
            seed,
            status: RunStatus::Ok,
        },
        cfg,
        written: Vec::new(),
    };
    let statistic = match cfg.scenario {
        ScenarioKind::FreePacket => {
            let (res, rec) = free_packet(cfg)?;
            art.meta.status = abort_status(&[&rec]);
            art.csv("width.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                let io = |e: csv::Error| Error::Io(e.to_string());
                w.write_record(["time", "width", "closed_form", "error"]).map_err(io)?;
                for ((t, a), b) in res.times.iter().zip(&res.widths).zip(&res.closed_form) {
                    w.write_record([t.to_string(), a.to_string(), b.to_string(), (a - b).to_string()])
                        .map_err(io)?;
                }
                w.flush().map_err(|e| Error::Io(e.to_string()))
            })?;
            art.json("free_packet.json", &res)?;
            art.text(
                "summary.txt",
                &[
                    ("max_width_error", format!("{:.3e}", res.max_width_error)),
                    ("matches_reference", res.matches_reference.to_string()),
                ],
            )?;
            ("max_width_error", res.max_width_error)
        }
        ScenarioKind::TwoLevelCollapse => {
            let (integ, psi) = build_integrator(cfg)?;
            let summary = integ.run_ensemble(&psi, n_traj, seed)?;
            let first = integ.run_trajectory(&psi, seed, 0)?;
            if summary.aborted > 0 {
                art.meta.status = RunStatus::Aborted {
                    trajectories: summary.aborted,
                    first_step: first.abort.as_ref().map_or(0, |a| a.step),
                    reason: "non-finite state".into(),
                };
            }
            let res = TwoLevelResult {
                max_martingale_sigma: summary.max_martingale_deviation_sigma(),
                summary,
            };
            art.csv("weight_series.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                let io = |e: csv::Error| Error::Io(e.to_string());
                w.write_record(["step", "time", "mean_weight", "std_err"]).map_err(io)?;
                for p in &res.summary.weight_series {
                    w.write_record([p.step.to_string(), p.time.to_string(), p.mean.to_string(), p.std_err.to_string()])
                        .map_err(io)?;
                }
                w.flush().map_err(|e| Error::Io(e.to_string()))
            })?;
            write_records(&mut art, std::slice::from_ref(&first), 1)?;
            art.json("two_level.json", &res)?;
            let s = &res.summary;
            art.text(
                "summary.txt",
                &[
                    ("initial_weight", format!("{:.6}", s.initial_weight)),
                    (
                        "freq_interacting",
                        format!("{:.6} [{:.6}, {:.6}]", s.freq_interacting, s.ci_interacting.0, s.ci_interacting.1),
                    ),
                    ("unabsorbed", s.unabsorbed.to_string()),
                    ("max_martingale_sigma", format!("{:.3}", res.max_martingale_sigma)),
                ],
            )?;
            ("freq_interacting", res.summary.freq_interacting)
        }
        ScenarioKind::GridScattering => {
            let (integ, psi) = build_integrator(cfg)?;
            let records = integ.run_ensemble_records(&psi, n_traj, seed)?;
            art.meta.status = abort_status(&records.iter().collect::<Vec<_>>());
            let energy = energy_deviation_study(&integ, &psi, seed)?;
            let pair = cfg.physics.potentials.first().map_or((0, 1), |p| p.particles);
            let masses = cfg.physics.particles[pair.0].mass + cfg.physics.particles[pair.1].mass;
            let benchmark = deviation_ratio_benchmark(energy.delta_ke, masses, cfg.physics.c)?;
            let res = ScatteringResult {
                energy,
                benchmark,
                trajectories: records.iter().map(|r| (r.stream, r.final_weight, r.absorbed_at)).collect(),
            };
            write_records(&mut art, &records, MAX_TRAJECTORY_FILES)?;
            art.json("scattering.json", &res)?;
            art.text(
                "summary.txt",
                &[
                    ("delta_ke", format!("{:.6e}", res.energy.delta_ke)),
                    ("deviation_ratio", format!("{:.6e}", res.energy.deviation_ratio)),
                    ("expected_ratio", format!("{:.6e}", res.energy.expected_ratio)),
                    ("agreement", format!("{:.4}", res.energy.agreement())),
                    ("positive_min", format!("{:.3e}", res.energy.positive_min)),
                ],
            )?;
            ("energy_agreement", res.energy.agreement())
        }
        ScenarioKind::Eraser => {
            let sec = cfg.eraser.clone().unwrap_or_default();
            let mut sweeps = Vec::new();
            for &mode in &sec.modes {
                let base = EraserConfig {
                    epsilon: sec.epsilons[0],
                    n_traj,
                    mode,
                    amplitudes: sec.amplitudes,
                    seed,
                    sde_steps: sec.sde_steps,
                };
                sweeps.push(eraser_sweep(&base, &sec.epsilons)?);
            }
            let res = EraserReport {
                sweeps,
                bound_check: eraser_bound_check(1e-3)?,
                unitarity_residual: basis_change_unitarity_residual(),
            };
            for (mode, sweep) in sec.modes.iter().zip(&res.sweeps) {
                let name = serde_json::to_value(mode)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                art.csv(&format!("eraser_{name}.csv"), |buf| sweep.write_csv(&mut *buf))?;
            }
            art.json("eraser.json", &res)?;
            let mut rows = Vec::new();
            for (mode, sweep) in sec.modes.iter().zip(&res.sweeps) {
                rows.push((
                    "slope",
                    format!("{:?}: {:.4} +- {:.4}", mode, sweep.fit.slope, sweep.fit.slope_stderr),
                ));
            }
            art.text("summary.txt", &rows)?;
            ("slope", res.sweeps[0].fit.slope)
        }
        ScenarioKind::WalkScan => {
            let sec = cfg.walk.clone().unwrap_or_default();
            let theta = sec.theta.unwrap_or(sec.scale.default_theta());
            let scan = born_linearity_scan_with_theta(sec.scale, theta, &sec.starts, n_traj, seed, sec.max_steps)?;
            let s = sec.scale.nominal();
            let diffusion_steps = sec
                .starts
                .iter()
                .map(|&x| expected_steps_diffusion(x, s, theta))
                .collect();
            let res = WalkReport { scan, diffusion_steps };
            if res.scan.rows.iter().any(|r| r.unabsorbed > 0) {
                art.meta.status = RunStatus::ChecksFailed {
                    failures: vec!["some walks hit walk.max_steps before absorption".into()],
                };
            }
            art.csv("walk_scan.csv", |buf| res.scan.write_csv(&mut *buf))?;
            art.json("walk_scan.json", &res)?;
            art.text(
                "summary.txt",
                &[
                    ("slope", format!("{:.5} +- {:.5}", res.scan.fit.slope, res.scan.fit.slope_stderr)),
                    (
                        "intercept",
                        format!("{:.5} +- {:.5}", res.scan.fit.intercept, res.scan.fit.intercept_stderr),
                    ),
                ],
            )?;
            ("slope", res.scan.fit.slope)
        }
        ScenarioKind::ConservationSuite => {
            let res = conservation_suite(cfg)?;
            if !res.passed() {
                art.meta.status = RunStatus::ChecksFailed {
                    failures: res.failures.clone(),
                };
            }
            art.csv("refinement.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                let io = |e: csv::Error| Error::Io(e.to_string());
                w.write_record(["gain", "points_per_axis", "h", "max_residual", "drift", "observed_order"])
                    .map_err(io)?;
                for (gain, _) in &res.residual_ratios {
                    let rows: Vec<&RefinementEntry> = res.entries.iter().filter(|e| e.gain == *gain).collect();
                    let orders = observed_orders(&rows.iter().map(|e| e.report.max_residual).collect::<Vec<_>>());
                    for (i, e) in rows.iter().enumerate() {
                        let order = if i == 0 { String::new() } else { orders[i - 1].to_string() };
                        w.write_record([
                            gain.to_string(),
                            e.points_per_axis.to_string(),
                            e.report.h.to_string(),
                            e.report.max_residual.to_string(),
                            e.report.drift.to_string(),
                            order,
                        ])
                        .map_err(io)?;
                    }
                }
                w.flush().map_err(|e| Error::Io(e.to_string()))
            })?;
            art.json("conservation.json", &res)?;
            let mut rows = Vec::new();
            for ((g, rr), (_, dr)) in res.residual_ratios.iter().zip(&res.drift_ratios) {
                rows.push(("ratios", format!("gain {g}: residual {rr:.3?} drift {dr:.3?}")));
            }
            art.text("summary.txt", &rows)?;
            let worst = res
                .residual_ratios
                .iter()
                .chain(&res.drift_ratios)
                .flat_map(|(_, r)| r.iter().copied())
                .fold(f64::NAN, |acc, r| if acc.is_nan() || (r - 4.0).abs() > (acc - 4.0).abs() { r } else { acc });
            ("worst_ratio", worst)
        }
        ScenarioKind::Thermal => {
            let inp = cfg.thermal.clone().unwrap_or_else(crate::experiments::ThermalInput::air_at_stp);
            let est: ThermalEstimate = thermal_estimate(&inp)?;
            art.json("thermal.json", &est)?;
            art.text(
                "summary.txt",
                &[
                    ("interaction_energy_J", format!("{:.4e}", est.interaction_energy)),
                    ("rest_energy_J", format!("{:.4e}", est.rest_energy)),
                    ("ratio", format!("{:.4e}", est.ratio)),
                    ("collision_rate_per_s", format!("{:.4e}", est.collision_rate)),
                    ("fractional_rate_per_s", format!("{:.4e}", est.fractional_rate)),
                    ("thermal_energy_J", format!("{:.4e}", est.thermal_energy)),
                    ("joules_per_year", format!("{:.4e}", est.joules_per_year)),
                ],
            )?;
            ("joules_per_year", est.joules_per_year)
        }
    };
    let status = art.meta.status.clone();
    let artifacts = art.written;
    Ok(RunOutcome {
        scenario: cfg.scenario,
        n_traj,
        statistic,
        status,
        config_hash: hash,
        seed,
        out_dir: dir,
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_dir(mut cfg: RunConfig, dir: &Path) -> RunConfig {
        cfg.output.directory = dir.display().to_string();
        cfg.output.formats = vec![OutputFormat::Csv, OutputFormat::Json, OutputFormat::Text];
        cfg
    }

    #[test]
    fn two_level_artifacts_are_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset(ScenarioKind::TwoLevelCollapse);
        cfg.ensemble.n_traj = Some(50);
        cfg.ensemble.master_seed = 11;
        let a = run(&in_dir(cfg.clone(), &tmp.path().join("a"))).unwrap();
        let b = run(&in_dir(cfg, &tmp.path().join("b"))).unwrap();
        assert_eq!(a.status, RunStatus::Ok);
        assert_eq!(a.artifacts.len(), b.artifacts.len());
        for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        assert!(a.summary_line().starts_with("two_level_collapse n_traj=50 freq_interacting="));
        assert!(!tmp.path().join("a").read_dir().unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    }

    #[test]
    fn walk_scan_csv_is_monotone() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset(ScenarioKind::WalkScan);
        cfg.ensemble.n_traj = Some(200);
        if let Some(w) = cfg.walk.as_mut() {
            w.scale = crate::walk::StepScale::Constant { s: 0.2 };
        }
        let out = run(&in_dir(cfg, tmp.path())).unwrap();
        let text = fs::read_to_string(tmp.path().join("walk_scan.csv")).unwrap();
        let starts: Vec<f64> = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(starts.len(), 9);
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
        assert!(text.contains(&format!("# config_hash={}", out.config_hash)));
    }

    #[test]
    fn thermal_writes_report() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&in_dir(RunConfig::preset(ScenarioKind::Thermal), tmp.path())).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("thermal.json")).unwrap()).unwrap();
        assert_eq!(v["meta"]["artifact_version"], ARTIFACT_VERSION);
        assert_eq!(v["meta"]["config_hash"], out.config_hash.as_str());
        assert!(v["result"]["fractional_rate"].as_f64().unwrap() > 0.0);
        assert!(tmp.path().join("summary.txt").exists());
    }
}
