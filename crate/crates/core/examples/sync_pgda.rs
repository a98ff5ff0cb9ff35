//! Synchronous primal-dual iterations with a generative model on a small
//! random instance, printing the dual error as it shrinks.
//!
//! ```text
//! cargo run --release --example sync_pgda
//! ```

use pgda_rl::lagrangian::RegParams;
use pgda_rl::linalg::norm2;
use pgda_rl::mdp::pilot_4x2;
use pgda_rl::oracle::solve_oracle;
use pgda_rl::sync::{SyncConfig, SyncSolver};
use pgda_rl::trace::Checkpoints;

fn main() -> pgda_rl::Result<()> {
    let mdp = pilot_4x2(0.8).validate()?;
    let params = RegParams::for_mdp(&mdp, 0.1, 0.1)?;
    let oracle = solve_oracle(&mdp, &params, 1e-12)?;
    let scale = norm2(oracle.rho_star.as_slice());

    let mut config = SyncConfig::new(params, 200_000, 0);
    config.checkpoints = Checkpoints::log_grid(200_000, 2);
    let solver = SyncSolver::new(&mdp, config)?;
    println!("{:>8} {:>12} {:>12} {:>12}", "k", "|rho-rho*|", "relative", "|V-V*|");
    solver.run(Some(&oracle), &mut |row| {
        let e = row.rho_err_l2.unwrap_or(f64::NAN);
        println!("{:>8} {:>12.4e} {:>12.4} {:>12.4e}", row.k, e, e / scale, row.v_err_l2.unwrap_or(f64::NAN));
    })?;
    Ok(())
}
