//! Run any scenario from a TOML file and write its artifacts, the library
//! path behind the `collapse-sim run` command.
//!
//! ```bash
//! cargo run --release --example run_config -- configs/walk_scan.toml
//! ```

use std::path::PathBuf;

use collapse_sim::config::parse_config;
use collapse_sim::runner::run;

fn main() -> collapse_sim::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs/free_packet.toml".into()));
    let cfg = parse_config(&path)?;
    println!("{} (hash {})", cfg.scenario.name(), &cfg.content_hash()?[..12]);
    let outcome = run(&cfg)?;
    println!("{}", outcome.summary_line());
    for a in &outcome.artifacts {
        println!("  wrote {}", a.display());
    }
    Ok(())
}
