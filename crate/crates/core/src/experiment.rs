//! Multi-seed experiments driven by a TOML file.
//!
//! ```toml
//! algorithm = "async"
//! seeds = [0, 1, 2]
//! checkpoints = 1000
//!
//! [mdp]
//! builtin = "frozenlake4x4"
//! gamma = 0.9
//!
//! [async]
//! k_max = 100000
//! ```
//!
//! Every field other than `algorithm`, `seeds` and the MDP source has a
//! default. A run writes one trace CSV per seed, a `summary.csv` with the
//! cross-seed mean and `2 * SE` of every metric, a `constants.toml` report
//! and `config.toml`, the effective configuration.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asynchronous::{run_async, AsyncConfig, Behavior};
use crate::diagnostics::{theory_constants, TheoryConstants};
use crate::error::{Error, Result};
use crate::lagrangian::{dual_box, primal_box, RegParams, NUMERIC_FLOOR};
use crate::mdp::{frozen_lake_4x4, pilot_4x2, random_mdp, rate3, Mdp, MdpSpec, Policy, RngStream};
use crate::metrics::{aggregate, SummaryRow};
use crate::oracle::{policy_value_regularized, solve_oracle, OracleSolution, Residuals, DEFAULT_TOL};
use crate::schedule::{EpsilonSchedule, LocalSchedule, SyncSchedule};
use crate::sync::{run_sync, SyncConfig};
use crate::trace::{write_csv_file, AsyncRow, Checkpoints, SyncRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    #[serde(rename = "frozenlake4x4")]
    FrozenLake4x4,
    Rate3,
    #[serde(rename = "pilot4x2")]
    Pilot4x2,
    Random,
}

/// Where the MDP comes from: a builtin generator or an MDP TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    pub builtin: Option<Builtin>,
    pub path: Option<PathBuf>,
    /// Overrides the discount of a file; default 0.9 for builtins.
    pub gamma: Option<f64>,
    #[serde(default = "yes")]
    pub slippery: bool,
    #[serde(default = "default_random_states")]
    pub n_states: usize,
    #[serde(default = "default_random_actions")]
    pub n_actions: usize,
    #[serde(default)]
    pub min_prob: f64,
    #[serde(default)]
    pub instance_seed: u64,
}

fn yes() -> bool {
    true
}
fn default_random_states() -> usize {
    4
}
fn default_random_actions() -> usize {
    2
}

impl MdpSource {
    pub fn builtin(b: Builtin) -> Self {
        Self {
            builtin: Some(b),
            path: None,
            gamma: None,
            slippery: true,
            n_states: default_random_states(),
            n_actions: default_random_actions(),
            min_prob: 0.0,
            instance_seed: 0,
        }
    }

    /// Relative paths resolve against `base` (the config file's directory).
    pub fn load(&self, base: &Path) -> Result<Mdp> {
        let spec = match (&self.builtin, &self.path) {
            (Some(_), Some(_)) => return Err(Error::Config("mdp: set either `builtin` or `path`, not both".into())),
            (None, None) => return Err(Error::Config("mdp: one of `builtin` or `path` is required".into())),
            (None, Some(p)) => {
                let mut spec = MdpSpec::load(base.join(p))?;
                if let Some(g) = self.gamma {
                    spec.gamma = g;
                }
                spec
            }
            (Some(b), None) => {
                let g = self.gamma.unwrap_or(0.9);
                match b {
                    Builtin::FrozenLake4x4 => frozen_lake_4x4(self.slippery, g),
                    Builtin::Rate3 => rate3(g),
                    Builtin::Pilot4x2 => pilot_4x2(g),
                    Builtin::Random => {
                        if self.n_states == 0 || self.n_actions == 0 || self.min_prob * self.n_states as f64 > 1.0 {
                            return Err(Error::Config("mdp: invalid random instance shape or min_prob".into()));
                        }
                        let mut rng = RngStream::new(self.instance_seed);
                        random_mdp(self.n_states, self.n_actions, g, self.min_prob, &mut rng)
                    }
                }
            }
        };
        spec.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(default = "tenth")]
    pub eta_v: f64,
    #[serde(default = "tenth")]
    pub eta_rho: f64,
}

fn tenth() -> f64 {
    0.1
}

impl Default for ParamsBlock {
    fn default() -> Self {
        Self { eta_v: 0.1, eta_rho: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncBlock {
    pub k_max: u64,
    pub schedule: SyncSchedule,
    pub rho_init: Option<f64>,
}

impl Default for SyncBlock {
    fn default() -> Self {
        Self { k_max: 500_000, schedule: SyncSchedule::default(), rho_init: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorMode {
    OnPolicy,
    /// Fixed uniform behavior policy.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsyncBlock {
    pub k_max: u64,
    pub schedule: LocalSchedule,
    pub epsilon: EpsilonSchedule,
    pub behavior: BehaviorMode,
    /// Per-pair list capacity; 0 keeps every observation.
    pub buffer_cap: usize,
    pub project_primal: bool,
    pub rho_init: Option<f64>,
}

impl Default for AsyncBlock {
    fn default() -> Self {
        Self {
            k_max: 100_000,
            schedule: LocalSchedule::frozen_lake(),
            epsilon: EpsilonSchedule::default(),
            behavior: BehaviorMode::OnPolicy,
            buffer_cap: 1000,
            project_primal: false,
            rho_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub mdp: MdpSource,
    #[serde(default)]
    pub params: ParamsBlock,
    #[serde(default)]
    pub checkpoints: Checkpoints,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_floor")]
    pub numeric_floor: f64,
    #[serde(default = "default_tol")]
    pub oracle_tol: f64,
    /// Random probes per kind when estimating the visitation floor.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub sync: SyncBlock,
    #[serde(default, rename = "async")]
    pub asynchronous: AsyncBlock,
}

fn default_floor() -> f64 {
    NUMERIC_FLOOR
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_probes() -> usize {
    50
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, mdp: MdpSource, seeds: Vec<u64>) -> Self {
        Self {
            algorithm,
            seeds,
            mdp,
            params: ParamsBlock::default(),
            checkpoints: Checkpoints::default(),
            out: None,
            numeric_floor: NUMERIC_FLOOR,
            oracle_tol: DEFAULT_TOL,
            probes: default_probes(),
            sync: SyncBlock::default(),
            asynchronous: AsyncBlock::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !self.checkpoints.is_valid() {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        if !(self.oracle_tol > 0.0) || !(self.numeric_floor > 0.0) {
            return Err(Error::Config("oracle_tol and numeric_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn sync_config(&self, params: RegParams, seed: u64) -> SyncConfig {
        SyncConfig {
            k_max: self.sync.k_max,
            schedule: self.sync.schedule,
            seed,
            params,
            checkpoints: self.checkpoints.clone(),
            rho_init: self.sync.rho_init,
            numeric_floor: self.numeric_floor,
        }
    }

    pub fn async_config(&self, mdp: &Mdp, params: RegParams, seed: u64) -> AsyncConfig {
        let a = &self.asynchronous;
        AsyncConfig {
            k_max: a.k_max,
            params,
            schedule: a.schedule,
            behavior: match a.behavior {
                BehaviorMode::OnPolicy => Behavior::OnPolicy,
                BehaviorMode::Uniform => Behavior::Fixed(Policy::uniform(mdp.n_states(), mdp.n_actions())),
            },
            epsilon: a.epsilon,
            buffer_cap: (a.buffer_cap > 0).then_some(a.buffer_cap),
            project_primal: a.project_primal,
            numeric_floor: self.numeric_floor,
            seed,
            checkpoints: self.checkpoints.clone(),
            rho_init: a.rho_init,
        }
    }
}

/// Constants of one instance, written to `constants.toml`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub eta_v: f64,
    pub eta_rho: f64,
    pub c_r: f64,
    pub c_high: f64,
    pub log_c_low: f64,
    pub runtime_low: f64,
    pub v_max: f64,
    pub start_state: usize,
    pub v_star_start: f64,
    pub v_star_ur_start: f64,
    /// Unregularized value of the optimal regularized policy at the start state.
    pub v_pi_star_ur_start: f64,
    pub residuals: Residuals,
    /// Estimated by probing the dual box; an upper bound on the true floor.
    pub theory: TheoryConstants,
}

pub fn constants_report(
    mdp: &Mdp,
    params: &RegParams,
    oracle: &OracleSolution,
    floor: f64,
    probes: usize,
    probe_seed: u64,
) -> Result<ConstantsReport> {
    let b = dual_box(mdp, params);
    let start = mdp.start_state();
    let v_pi_ur = mdp.policy_value_unregularized(&oracle.pi_star)?;
    Ok(ConstantsReport {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.gamma(),
        eta_v: params.eta_v,
        eta_rho: params.eta_rho,
        c_r: mdp.c_r(),
        c_high: b.c_high,
        log_c_low: b.log_c_low,
        runtime_low: b.runtime_low(floor),
        v_max: primal_box(mdp, params).v_max,
        start_state: start,
        v_star_start: oracle.v_star[start],
        v_star_ur_start: oracle.v_star_ur[start],
        v_pi_star_ur_start: v_pi_ur[start],
        residuals: oracle.residuals,
        theory: theory_constants(mdp, params, &b, floor, probes, probe_seed)?,
    })
}

/// Per-seed traces of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Traces {
    Sync(Vec<(u64, Vec<SyncRow>)>),
    Async(Vec<(u64, Vec<AsyncRow>)>),
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub oracle: OracleSolution,
    pub traces: Traces,
    pub summary: Vec<SummaryRow>,
    pub constants: Option<ConstantsReport>,
    pub files: Vec<PathBuf>,
}

pub const SYNC_METRICS: [&str; 5] = ["v_err_l2", "rho_err_l2", "grad_v_inf", "grad_rho_inf", "lagrangian"];
pub const ASYNC_METRICS: [&str; 9] = [
    "rrmse_v_reg",
    "rrmse_dualpolicy_reg",
    "rrmse_v_unreg",
    "value_start_dualpolicy",
    "kl_to_optimal",
    "min_visits",
    "tracking_err",
    "rho_err_l2",
    "value_start_dualpolicy_unreg",
];

fn sync_values(r: &SyncRow) -> Vec<f64> {
    vec![
        r.v_err_l2.unwrap_or(f64::NAN),
        r.rho_err_l2.unwrap_or(f64::NAN),
        r.grad_v_inf,
        r.grad_rho_inf,
        r.lagrangian,
    ]
}

pub fn async_values(r: &AsyncRow) -> Vec<f64> {
    vec![
        r.rrmse_v_reg,
        r.rrmse_dualpolicy_reg,
        r.rrmse_v_unreg,
        r.value_start_dualpolicy,
        r.kl_to_optimal,
        r.min_visits as f64,
        r.tracking_err,
        r.rho_err_l2,
        r.value_start_dualpolicy_unreg,
    ]
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

/// Runs every seed in parallel and, when `out` is given, writes the
/// per-seed traces, the summary, the constants report and the effective config.
///
/// `base` resolves relative MDP paths. `with_constants` controls whether the
/// (probe-based, hence slower) constants report is computed.
pub fn run_experiment(
    config: &ExperimentConfig,
    base: &Path,
    out: Option<&Path>,
    with_constants: bool,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let mdp = config.mdp.load(base)?;
    let params = RegParams::for_mdp(&mdp, config.params.eta_v, config.params.eta_rho)?;
    let oracle = solve_oracle(&mdp, &params, config.oracle_tol)?;

    let (traces, summary) = match config.algorithm {
        Algorithm::Sync => {
            let runs: Vec<(u64, Vec<SyncRow>)> = config
                .seeds
                .par_iter()
                .map(|&seed| run_sync(&mdp, config.sync_config(params, seed), Some(&oracle)).map(|(_, t)| (seed, t)))
                .collect::<Result<_>>()?;
            let table: Vec<Vec<(u64, Vec<f64>)>> =
                runs.iter().map(|(_, t)| t.iter().map(|r| (r.k, sync_values(r))).collect()).collect();
            let summary = aggregate(&SYNC_METRICS, &table)?;
            (Traces::Sync(runs), summary)
        }
        Algorithm::Async => {
            let runs: Vec<(u64, Vec<AsyncRow>)> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    run_async(&mdp, config.async_config(&mdp, params, seed), Some(&oracle), &mut |_| {})
                        .map(|(_, t)| (seed, t))
                })
                .collect::<Result<_>>()?;
            let table: Vec<Vec<(u64, Vec<f64>)>> =
                runs.iter().map(|(_, t)| t.iter().map(|r| (r.k, async_values(r))).collect()).collect();
            let summary = aggregate(&ASYNC_METRICS, &table)?;
            (Traces::Async(runs), summary)
        }
    };

    let constants = if with_constants {
        Some(constants_report(&mdp, &params, &oracle, config.numeric_floor, config.probes, config.seeds[0])?)
    } else {
        None
    };

    let mut files = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        match &traces {
            Traces::Sync(runs) => {
                for (seed, rows) in runs {
                    let p = dir.join(trace_file_name(*seed));
                    write_csv_file(rows, &p)?;
                    files.push(p);
                }
            }
            Traces::Async(runs) => {
                for (seed, rows) in runs {
                    let p = dir.join(trace_file_name(*seed));
                    write_csv_file(rows, &p)?;
                    files.push(p);
                }
            }
        }
        let p = dir.join("summary.csv");
        write_csv_file(&summary, &p)?;
        files.push(p);
        if let Some(c) = &constants {
            let p = dir.join("constants.toml");
            let text = toml::to_string_pretty(c).map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(&p, text)?;
            files.push(p);
        }
        let p = dir.join("config.toml");
        std::fs::write(&p, config.to_toml_string()?)?;
        files.push(p);
    }
    Ok(ExperimentOutput { oracle, traces, summary, constants, files })
}

/// Per-state oracle quantities, one row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub state: usize,
    pub non_terminal: bool,
    pub v_star: f64,
    pub v_star_ur: f64,
    /// Regularized value of the greedy unregularized policy.
    pub v_reg_of_greedy: f64,
    pub rho_star_marginal: f64,
}

pub fn oracle_rows(mdp: &Mdp, params: &RegParams, oracle: &OracleSolution) -> Result<Vec<OracleRow>> {
    let greedy = policy_value_regularized(mdp, params.eta_rho, &oracle.pi_star_ur)?;
    let marg = oracle.rho_star.marginal();
    let mask = mdp.non_terminal_mask();
    Ok((0..mdp.n_states())
        .map(|s| OracleRow {
            state: s,
            non_terminal: mask[s],
            v_star: oracle.v_star[s],
            v_star_ur: oracle.v_star_ur[s],
            v_reg_of_greedy: greedy[s],
            rho_star_marginal: marg[s],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            algorithm = "async"
            seeds = [1]
            [mdp]
            builtin = "frozenlake4x4"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.asynchronous, AsyncBlock::default());
        assert_eq!(cfg.params, ParamsBlock::default());
        assert_eq!(cfg.checkpoints, Checkpoints::Stride(1000));
        let echoed = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::from_toml_str("algorithm = \"async\"\nseeds = [1]").is_err());
        let unknown = "algorithm = \"sync\"\nseeds = [1]\nbogus = 3\n[mdp]\nbuiltin = \"rate3\"";
        assert!(ExperimentConfig::from_toml_str(unknown).unwrap_err().is_config());
        let mut cfg = ExperimentConfig::new(Algorithm::Sync, MdpSource::builtin(Builtin::Rate3), vec![]);
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![0];
        cfg.checkpoints = Checkpoints::List(vec![5, 3]);
        assert!(cfg.validate().is_err());
        let mut both = MdpSource::builtin(Builtin::Rate3);
        both.path = Some("x.toml".into());
        assert!(both.load(Path::new(".")).unwrap_err().is_config());
    }

    #[test]
    fn sync_experiment_in_memory() {
        let mut cfg = ExperimentConfig::new(Algorithm::Sync, MdpSource::builtin(Builtin::Rate3), vec![3, 4]);
        cfg.sync.k_max = 200;
        cfg.checkpoints = Checkpoints::Stride(100);
        let out = run_experiment(&cfg, Path::new("."), None, false).unwrap();
        let Traces::Sync(runs) = &out.traces else { panic!() };
        assert_eq!(runs.len(), 2);
        assert_eq!(out.summary.len(), 3 * SYNC_METRICS.len());
        assert!(out.files.is_empty());
    }
}
