//! Multiplicative random walk: absorption probability is linear in the
//! starting weight, and step-count estimates for weak interactions.
//!
//! ```bash
//! cargo run --release --example born_walk -- 20000
//! ```

use collapse_sim::walk::{born_linearity_scan, expected_steps_diffusion, step_count_estimate, StepScale};

fn main() -> collapse_sim::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(5000, |s| s.parse().expect("walks per point"));
    let scale = StepScale::Constant { s: 0.05 };
    let starts: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let scan = born_linearity_scan(scale, &starts, n, 11)?;

    println!("{:>6} {:>8} {:>17} {:>12}", "start", "p_up", "95% CI", "mean steps");
    for r in &scan.rows {
        println!("{:6.2} {:8.4} {:8.4}..{:.4} {:12.1}", r.start, r.p_up, r.ci_low, r.ci_high, r.mean_steps);
    }
    println!(
        "fit: slope {:.4} ± {:.4}, intercept {:.4} ± {:.4}",
        scan.fit.slope, scan.fit.slope_stderr, scan.fit.intercept, scan.fit.intercept_stderr
    );
    println!(
        "diffusion estimate from 0.5: {:.1} steps",
        expected_steps_diffusion(0.5, 0.05, scan.theta)
    );

    for (ratio, floor) in [(1e-3, 1.0), (1e-6, 1.0), (1e-10, 1.0)] {
        let est = step_count_estimate(ratio, floor)?;
        println!("ratio {ratio:.0e}: ~{:.0e} steps (martingale exit {:.1e})", est.rough, est.martingale);
    }
    Ok(())
}
