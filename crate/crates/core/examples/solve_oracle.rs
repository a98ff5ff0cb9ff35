//! Exact regularized and unregularized solutions of FrozenLake.
//!
//! ```text
//! cargo run --release --example solve_oracle
//! ```

use pgda_rl::lagrangian::{dual_box, RegParams};
use pgda_rl::mdp::frozen_lake_4x4;
use pgda_rl::oracle::solve_oracle;

fn main() -> pgda_rl::Result<()> {
    let mdp = frozen_lake_4x4(true, 0.9).validate()?;
    let params = RegParams::for_mdp(&mdp, 0.1, 0.1)?;
    let sol = solve_oracle(&mdp, &params, 1e-12)?;

    println!("state   V*_r      V*_ur     pi*_r(.|s)");
    for s in 0..mdp.n_states() {
        let row: Vec<String> = sol.pi_star.row(s).iter().map(|p| format!("{p:.3}")).collect();
        println!("{s:>5} {:>9.4} {:>9.4}   [{}]", sol.v_star[s], sol.v_star_ur[s], row.join(", "));
    }
    let b = dual_box(&mdp, &params);
    println!("dual box: log C^L = {:.1}, C^U = {:.3e}", b.log_c_low, b.c_high);
    println!(
        "residuals: fixed point {:.1e}, grad_V {:.1e}, grad_rho {:.1e}",
        sol.residuals.fixed_point, sol.residuals.grad_v_inf, sol.residuals.grad_rho_inf
    );
    Ok(())
}
