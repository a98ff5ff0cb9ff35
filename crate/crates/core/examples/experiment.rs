//! Multi-seed experiment driven by a TOML config, with per-seed traces, a
//! mean/2SE summary and a constants report written to an output directory.
//!
//! ```text
//! cargo run --release --example experiment -- examples/configs/frozenlake_async.toml runs/fl
//! ```

use std::path::{Path, PathBuf};

use pgda_rl::experiment::{run_experiment, ExperimentConfig};

fn main() -> pgda_rl::Result<()> {
    let mut args = std::env::args().skip(1);
    let config_path = PathBuf::from(
        args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/rate3_async.toml").into()),
    );
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example".into()));

    let config = ExperimentConfig::load(&config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let result = run_experiment(&config, base, Some(&out), true)?;

    let last = result.summary.last().map(|r| r.k).unwrap_or(0);
    for row in result.summary.iter().filter(|r| r.k == last) {
        println!("{:<30} {:>12.5} +/- {:.5}", row.metric, row.mean, row.two_se);
    }
    for f in &result.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
