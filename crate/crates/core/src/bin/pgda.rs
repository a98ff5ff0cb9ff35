use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgda_rl::diagnostics::{rate_fit, theory_constants, visitation_floor_check};
use pgda_rl::experiment::{
    constants_report, oracle_rows, run_experiment, trace_file_name, Algorithm, ExperimentConfig,
};
use pgda_rl::lagrangian::{dual_box, RegParams};
use pgda_rl::oracle::solve_oracle;
use pgda_rl::trace::{read_csv_file, write_csv_file, AsyncRow, SyncRow};
use pgda_rl::{Error, Result};

#[derive(Parser)]
#[command(name = "pgda", version, about = "Primal-dual solvers for entropy-regularized tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out` in the config, then `runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Also compute and write the theory constants report.
    #[arg(long)]
    constants: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Exact oracle: regularized and unregularized optima of the configured MDP.
    Solve(Common),
    /// Synchronous solver with a generative model.
    Sync(Common),
    /// Asynchronous single-trajectory solver with experience replay.
    Async(Common),
    /// Reads trace CSVs from `--out` and reports rate fits, trends and floors.
    Diagnose(Common),
    /// Runs the experiment exactly as configured.
    Experiment(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(name))
}

fn solve(common: &Common) -> Result<()> {
    let (cfg, base) = load(common)?;
    let mdp = cfg.mdp.load(&base)?;
    let params = RegParams::for_mdp(&mdp, cfg.params.eta_v, cfg.params.eta_rho)?;
    let oracle = solve_oracle(&mdp, &params, cfg.oracle_tol)?;
    let start = mdp.start_state();
    println!("V*_r(start)  = {:.6}", oracle.v_star[start]);
    println!("V*_ur(start) = {:.6}", oracle.v_star_ur[start]);
    println!(
        "residuals: fixed point {:.2e}, grad_V {:.2e}, grad_rho {:.2e}",
        oracle.residuals.fixed_point, oracle.residuals.grad_v_inf, oracle.residuals.grad_rho_inf
    );
    let dir = out_dir(common, &cfg, "solve");
    std::fs::create_dir_all(&dir)?;
    write_csv_file(&oracle_rows(&mdp, &params, &oracle)?, dir.join("oracle.csv"))?;
    if common.constants {
        let report = constants_report(&mdp, &params, &oracle, cfg.numeric_floor, cfg.probes, cfg.seeds.first().copied().unwrap_or(0))?;
        let text = toml::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join("constants.toml"), &text)?;
        print!("{text}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(common: &Common, forced: Option<Algorithm>, name: &str) -> Result<()> {
    let (mut cfg, base) = load(common)?;
    if let Some(a) = forced {
        cfg.algorithm = a;
    }
    let dir = out_dir(common, &cfg, name);
    let out = run_experiment(&cfg, &base, Some(&dir), common.constants)?;
    let last_k = out.summary.last().map(|r| r.k).unwrap_or(0);
    for row in out.summary.iter().filter(|r| r.k == last_k) {
        println!("k={:<8} {:<30} {:>14.6e} +/- {:.3e}", row.k, row.metric, row.mean, row.two_se);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn mean_series(traces: &[Vec<(u64, f64)>]) -> Result<Vec<(f64, f64)>> {
    let first = traces.first().ok_or_else(|| Error::InsufficientData("no traces".into()))?;
    for t in traces {
        if t.len() != first.len() || t.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::GridMismatch("traces differ in their checkpoints".into()));
        }
    }
    Ok((0..first.len())
        .map(|i| (first[i].0 as f64, traces.iter().map(|t| t[i].1).sum::<f64>() / traces.len() as f64))
        .collect())
}

fn fit_line(report: &mut String, label: &str, series: &[(f64, f64)], window: (f64, f64), band: (f64, f64)) {
    match rate_fit(series, window) {
        Ok(f) => {
            let pass = f.slope >= band.0 && f.slope <= band.1;
            let _ = writeln!(
                report,
                "[{}] {label}: slope {:.3} (r2 {:.3}) over k in [{:.0e}, {:.0e}], band [{}, {}]",
                if pass { "PASS" } else { "FAIL" },
                f.slope,
                f.r2,
                window.0,
                window.1,
                band.0,
                band.1
            );
        }
        Err(e) => {
            let _ = writeln!(report, "[SKIP] {label}: {e}");
        }
    }
}

fn diagnose(common: &Common) -> Result<()> {
    let (cfg, base) = load(common)?;
    let dir = out_dir(common, &cfg, &format!("{:?}", cfg.algorithm).to_lowercase());
    let mdp = cfg.mdp.load(&base)?;
    let params = RegParams::for_mdp(&mdp, cfg.params.eta_v, cfg.params.eta_rho)?;
    let mut report = String::new();
    let _ = writeln!(report, "diagnostics for {}", dir.display());
    let window = (1e3, 1e5);
    match cfg.algorithm {
        Algorithm::Sync => {
            let mut errs = Vec::new();
            for &seed in &cfg.seeds {
                let rows: Vec<SyncRow> = read_csv_file(dir.join(trace_file_name(seed)))?;
                errs.push(rows.iter().filter_map(|r| r.rho_err_l2.map(|e| (r.k, e * e))).collect::<Vec<_>>());
            }
            let mean = mean_series(&errs)?;
            let _ = writeln!(report, "seeds: {}", cfg.seeds.len());
            fit_line(&mut report, "mean squared dual error", &mean, window, (-1.1, -0.35));
        }
        Algorithm::Async => {
            let mut traces = Vec::new();
            for &seed in &cfg.seeds {
                let rows: Vec<AsyncRow> = read_csv_file(dir.join(trace_file_name(seed)))?;
                traces.push(rows);
            }
            let series = |f: &dyn Fn(&AsyncRow) -> f64| -> Result<Vec<(f64, f64)>> {
                mean_series(&traces.iter().map(|t| t.iter().map(|r| (r.k, f(r))).collect()).collect::<Vec<_>>())
            };
            let _ = writeln!(report, "seeds: {}", cfg.seeds.len());
            fit_line(&mut report, "mean squared dual error", &series(&|r| r.rho_err_l2.powi(2))?, window, (-1.1, -0.35));
            let kl = series(&|r| r.kl_to_optimal)?;
            let rr = series(&|r| r.rrmse_dualpolicy_reg)?;
            for (label, s) in [("KL(pi* || pi_rho)", &kl), ("rRMSE of dual-policy value", &rr)] {
                if let (Some(first), Some(last)) = (s.iter().find(|p| p.0 >= window.0), s.last()) {
                    let _ = writeln!(
                        report,
                        "[{}] {label}: {:.4} at k={} -> {:.4} at k={}",
                        if last.1 < first.1 { "PASS" } else { "FAIL" },
                        first.1,
                        first.0,
                        last.1,
                        last.0
                    );
                }
            }
            let b = dual_box(&mdp, &params);
            let theory = theory_constants(&mdp, &params, &b, cfg.numeric_floor, cfg.probes, cfg.seeds[0])?;
            let _ = writeln!(
                report,
                "p_star estimate {:.3e}, mu_opt {:.3e} (runtime box {:.3e})",
                theory.p_star_hat,
                theory.mu_opt,
                theory.mu_opt_runtime
            );
            for t in &traces {
                let points: Vec<(u64, u64)> = t.iter().map(|r| (r.k, r.min_visits)).collect();
                let floor = visitation_floor_check(&points, theory.p_star_hat);
                let _ = writeln!(
                    report,
                    "[{}] seed {} visitation floor: burn-in {}",
                    if floor.attained() { "PASS" } else { "FAIL" },
                    t.first().map(|r| r.seed).unwrap_or(0),
                    floor.burn_in.map(|k| k.to_string()).unwrap_or_else(|| "not attained".into())
                );
            }
        }
    }
    print!("{report}");
    std::fs::write(dir.join("diagnose.txt"), report)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => solve(c),
        Command::Sync(c) => run(c, Some(Algorithm::Sync), "sync"),
        Command::Async(c) => run(c, Some(Algorithm::Async), "async"),
        Command::Experiment(c) => run(c, None, "experiment"),
        Command::Diagnose(c) => diagnose(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
