//! Theory-facing diagnostics: stationary laws, the visitation floor, the
//! concavity modulus, replay bias, and a log-log rate fit.
//!
//! ```text
//! cargo run --release --example diagnostics
//! ```

use pgda_rl::asynchronous::{AsyncConfig, AsyncSolver};
use pgda_rl::diagnostics::{buffer_bias, rate_fit, stationary_distribution, theory_constants};
use pgda_rl::lagrangian::{dual_box, RegParams};
use pgda_rl::mdp::{rate3, Policy};
use pgda_rl::oracle::solve_oracle;
use pgda_rl::schedule::LocalSchedule;
use pgda_rl::trace::Checkpoints;

fn main() -> pgda_rl::Result<()> {
    let mdp = rate3(0.9).validate()?;
    let params = RegParams::for_mdp(&mdp, 0.1, 0.1)?;
    let oracle = solve_oracle(&mdp, &params, 1e-12)?;

    let uniform = stationary_distribution(&mdp, &Policy::uniform(3, 2), 1e-12)?;
    println!("stationary law under the uniform policy: {:.4?}", uniform.as_slice());

    let b = dual_box(&mdp, &params);
    let t = theory_constants(&mdp, &params, &b, 1e-12, 50, 0)?;
    println!("p_star estimate {:.4}, mu_opt {:.3e} (runtime box {:.3e})", t.p_star_hat, t.mu_opt, t.mu_opt_runtime);
    println!("best-response Lipschitz constant {:.3}", t.lambda_lipschitz);

    let mut config = AsyncConfig::new(params, 100_000, 0);
    config.schedule = LocalSchedule::rate(1.0, 5.0);
    config.project_primal = true;
    config.buffer_cap = None;
    config.checkpoints = Checkpoints::log_grid(100_000, 4);
    let mut errors = Vec::new();
    AsyncSolver::new(&mdp, config)?.run_with(&oracle, &mut |state, row| {
        if state.k >= 100 {
            let bias = buffer_bias(&mdp, &state.buffer, &oracle.rho_star).unwrap_or(f64::NAN);
            println!("k {:>7}  |rho - rho*|^2 {:.3e}  replay bias {:.3e}", row.k, row.rho_err_l2.powi(2), bias);
            errors.push((row.k as f64, row.rho_err_l2.powi(2)));
        }
    })?;
    let fit = rate_fit(&errors, (1e3, 1e5))?;
    println!("fitted slope {:.3} (r2 {:.3})", fit.slope, fit.r2);
    Ok(())
}
