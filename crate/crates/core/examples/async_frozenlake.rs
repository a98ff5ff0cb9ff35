//! Single-trajectory primal-dual learning on FrozenLake with a capped
//! experience replay and an on-policy behavior policy.
//!
//! ```text
//! cargo run --release --example async_frozenlake -- [k_max] [seed]
//! ```

use pgda_rl::asynchronous::{run_async, AsyncConfig};
use pgda_rl::lagrangian::RegParams;
use pgda_rl::mdp::frozen_lake_4x4;
use pgda_rl::oracle::solve_oracle;
use pgda_rl::trace::Checkpoints;

fn main() -> pgda_rl::Result<()> {
    let mut args = std::env::args().skip(1);
    let k_max: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let mdp = frozen_lake_4x4(true, 0.9).validate()?;
    let params = RegParams::for_mdp(&mdp, 0.1, 0.1)?;
    let oracle = solve_oracle(&mdp, &params, 1e-12)?;
    println!("V*_r(start) = {:.4}", oracle.v_star[mdp.start_state()]);

    let mut config = AsyncConfig::new(params, k_max, seed);
    config.checkpoints = Checkpoints::log_grid(k_max, 2);
    println!("{:>8} {:>10} {:>10} {:>10} {:>8}", "k", "rRMSE", "KL", "V(start)", "min nu");
    run_async(&mdp, config, Some(&oracle), &mut |row| {
        println!(
            "{:>8} {:>10.4} {:>10.3} {:>10.4} {:>8}",
            row.k, row.rrmse_dualpolicy_reg, row.kl_to_optimal, row.value_start_dualpolicy, row.min_visits
        );
    })?;
    Ok(())
}
