//! Eraser with a weak collapse kick: the probability of the forbidden S-A
//! outcome grows as epsilon squared.
//!
//! ```bash
//! cargo run --release --example quantum_eraser -- 20000
//! ```

use collapse_sim::experiments::{eraser_bound_check, eraser_sweep, EraserConfig, KickMode};

fn main() -> collapse_sim::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(20_000, |s| s.parse().expect("runs per point"));
    let epsilons = [0.02, 0.05, 0.1];
    for mode in [KickMode::Coherent, KickMode::RandomSign, KickMode::Gaussian] {
        let sweep = eraser_sweep(&EraserConfig::new(0.0, n, mode, 5), &epsilons)?;
        println!("{mode:?}");
        for r in &sweep.rows {
            println!(
                "  eps {:5.3}  P(S-A) {:.3e} ± {:.1e}  sampled {:.3e}",
                r.epsilon, r.cross_prob, r.cross_stderr, r.cross_freq
            );
        }
        println!("  log-log slope {:.3} ± {:.3}", sweep.fit.slope, sweep.fit.slope_stderr);
    }
    let b = eraser_bound_check(1e-3)?;
    println!("ratio 1e-3 -> cross probability {:e} (below 1e-6: {})", b.probability, b.below_bound);
    Ok(())
}
