//! Two-level collapse ensemble: the interacting weight is a martingale and
//! trajectories end in |I> with probability equal to its starting weight.
//!
//! ```bash
//! cargo run --release --example two_level_collapse -- 0.3 2000
//! ```

use collapse_sim::config::{RunConfig, ScenarioKind};
use collapse_sim::scenarios::build_integrator;

fn main() -> collapse_sim::Result<()> {
    let mut args = std::env::args().skip(1);
    let weight: f64 = args.next().map_or(0.3, |s| s.parse().expect("weight"));
    let n_traj: usize = args.next().map_or(1000, |s| s.parse().expect("trajectory count"));

    let mut cfg = RunConfig::preset(ScenarioKind::TwoLevelCollapse);
    cfg.initial.weight = weight;
    cfg.validate()?;
    let (integ, psi) = build_integrator(&cfg)?;
    let summary = integ.run_ensemble(&psi, n_traj, cfg.ensemble.master_seed)?;

    println!("start weight        {weight}");
    println!(
        "absorbed in |I>     {} / {}  (freq {:.4}, 95% CI {:.4}..{:.4})",
        summary.to_interacting, n_traj, summary.freq_interacting, summary.ci_interacting.0, summary.ci_interacting.1
    );
    println!("absorbed in |O>     {}", summary.to_noninteracting);
    println!("unabsorbed          {}", summary.unabsorbed);
    println!("worst martingale deviation {:.2} sigma", summary.max_martingale_deviation_sigma());
    for p in summary.weight_series.iter().step_by(summary.weight_series.len().max(10) / 10) {
        println!("  t={:8.3}  E[w]={:.4} ± {:.4}", p.time, p.mean, p.std_err);
    }
    Ok(())
}
