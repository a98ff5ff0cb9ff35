//! Synchronous projected stochastic gradient descent-ascent with a
//! generative model: every iteration draws one fresh next state for every
//! state-action pair, takes a descent step in `V` and a projected ascent
//! step in `rho`.

use crate::error::{Error, Result};
use crate::lagrangian::{dual_box, lagrangian_value, BoxH, RegParams, NUMERIC_FLOOR};
use crate::linalg::dist2;
use crate::mdp::{Mdp, RngStream, StateActionVec, StateVec};
use crate::oracle::{saddle_residual, OracleSolution};
use crate::schedule::SyncSchedule;
use crate::trace::{Checkpoints, SyncRow};

#[derive(Debug, Clone, PartialEq)]
pub struct SyncConfig {
    pub k_max: u64,
    pub schedule: SyncSchedule,
    pub seed: u64,
    pub params: RegParams,
    pub checkpoints: Checkpoints,
    /// Initial dual value for every entry; defaults to the midpoint of `H`.
    pub rho_init: Option<f64>,
    pub numeric_floor: f64,
}

impl SyncConfig {
    pub fn new(params: RegParams, k_max: u64, seed: u64) -> Self {
        Self {
            k_max,
            schedule: SyncSchedule::default(),
            seed,
            params,
            checkpoints: Checkpoints::default(),
            rho_init: None,
            numeric_floor: NUMERIC_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    pub v: StateVec,
    pub rho: StateActionVec,
    pub k: u64,
}

/// One generative draw per pair, row-major by `(s, a)`.
pub fn draw_samples(mdp: &Mdp, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(mdp.n_pairs());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.push(rng.categorical(mdp.next_dist(s, a)));
        }
    }
    out
}

fn check_samples(mdp: &Mdp, samples: &[usize]) -> Result<()> {
    if samples.len() < mdp.n_pairs() {
        let i = samples.len();
        return Err(Error::MissingSample { state: i / mdp.n_actions(), action: i % mdp.n_actions() });
    }
    if let Some(&bad) = samples.iter().find(|&&x| x >= mdp.n_states()) {
        return Err(Error::IndexOutOfRange(format!("sampled state {bad}")));
    }
    Ok(())
}

/// `eta_V V(s') - rho~(s') + gamma sum rho(s,a) 1{s~(s,a) = s'}`
pub fn stoch_grad_v_sync(
    mdp: &Mdp,
    params: &RegParams,
    v: &StateVec,
    rho: &StateActionVec,
    samples: &[usize],
) -> Result<StateVec> {
    check_samples(mdp, samples)?;
    let marg = rho.marginal();
    let mut out: Vec<f64> = (0..mdp.n_states()).map(|s| params.eta_v * v[s] - marg[s]).collect();
    let g = mdp.gamma();
    for (i, &next) in samples.iter().take(mdp.n_pairs()).enumerate() {
        out[next] += g * rho.as_slice()[i];
    }
    Ok(StateVec(out))
}

/// `-V(s) + r(s,a) + gamma V(s~(s,a)) - eta_rho log(rho(s,a) / rho~(s))`
pub fn stoch_grad_rho_sync(
    mdp: &Mdp,
    params: &RegParams,
    v: &StateVec,
    rho: &StateActionVec,
    samples: &[usize],
) -> Result<StateActionVec> {
    check_samples(mdp, samples)?;
    rho.check_positive()?;
    let marg = rho.marginal();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let next = samples[s * na + a];
            out.push(-v[s] + mdp.reward(s, a) + g * v[next] - params.eta_rho * (rho.get(s, a) / marg[s]).ln());
        }
    }
    StateActionVec::new(ns, na, out)
}

/// Owns the box and configuration of one synchronous run.
#[derive(Debug, Clone)]
pub struct SyncSolver<'a> {
    mdp: &'a Mdp,
    config: SyncConfig,
    dual_box: BoxH,
    low: f64,
    high: f64,
}

impl<'a> SyncSolver<'a> {
    pub fn new(mdp: &'a Mdp, config: SyncConfig) -> Result<Self> {
        if !config.schedule.is_valid() {
            return Err(Error::Config(format!("invalid schedule {:?}", config.schedule)));
        }
        if !config.checkpoints.is_valid() {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        let dual_box = dual_box(mdp, &config.params);
        let (low, high) = dual_box.runtime(config.numeric_floor);
        Ok(Self { mdp, config, dual_box, low, high })
    }

    pub fn config(&self) -> &SyncConfig {
        &self.config
    }

    pub fn dual_box(&self) -> &BoxH {
        &self.dual_box
    }

    /// `(low, high)` edges of the runtime projection.
    pub fn bounds(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    /// `V_0 = 0`, `rho_0` = midpoint of `H` (or the configured value), clipped to the runtime box.
    pub fn initial_state(&self) -> SyncState {
        let init = self.config.rho_init.unwrap_or_else(|| self.dual_box.midpoint());
        SyncState {
            v: StateVec::zeros(self.mdp.n_states()),
            rho: StateActionVec::filled(self.mdp.n_states(), self.mdp.n_actions(), init.clamp(self.low, self.high)),
            k: 0,
        }
    }

    /// One iteration given pre-drawn samples.
    pub fn step_with_samples(&self, state: &SyncState, samples: &[usize]) -> Result<SyncState> {
        let params = &self.config.params;
        let gv = stoch_grad_v_sync(self.mdp, params, &state.v, &state.rho, samples)?;
        let gr = stoch_grad_rho_sync(self.mdp, params, &state.v, &state.rho, samples)?;
        let k = state.k + 1;
        let alpha = self.config.schedule.alpha(k);
        let beta = self.config.schedule.beta(k);
        let v = StateVec(state.v.0.iter().zip(&gv.0).map(|(x, g)| x - alpha * g).collect());
        let mut rho = state.rho.clone();
        for (x, g) in rho.as_mut_slice().iter_mut().zip(gr.as_slice()) {
            *x = (*x + beta * g).clamp(self.low, self.high);
        }
        Ok(SyncState { v, rho, k })
    }

    pub fn step(&self, state: &SyncState, rng: &mut RngStream) -> Result<SyncState> {
        if state.k >= self.config.k_max {
            return Err(Error::Config(format!("iteration budget {} exhausted", self.config.k_max)));
        }
        let samples = draw_samples(self.mdp, rng);
        self.step_with_samples(state, &samples)
    }

    pub fn checkpoint(&self, state: &SyncState, oracle: Option<&OracleSolution>) -> Result<SyncRow> {
        let params = &self.config.params;
        let (grad_v_inf, grad_rho_inf) = saddle_residual(self.mdp, params, &state.v, &state.rho)?;
        Ok(SyncRow {
            k: state.k,
            v_err_l2: oracle.map(|o| dist2(state.v.as_slice(), o.v_star.as_slice())),
            rho_err_l2: oracle.map(|o| dist2(state.rho.as_slice(), o.rho_star.as_slice())),
            grad_v_inf,
            grad_rho_inf,
            lagrangian: lagrangian_value(self.mdp, params, &state.v, &state.rho)?,
        })
    }

    /// Runs `k_max` iterations from the initial state, recording checkpoints.
    pub fn run(
        &self,
        oracle: Option<&OracleSolution>,
        sink: &mut dyn FnMut(&SyncRow),
    ) -> Result<(SyncState, Vec<SyncRow>)> {
        let mut rng = RngStream::new(self.config.seed);
        let mut state = self.initial_state();
        let mut trace = Vec::new();
        let first = self.checkpoint(&state, oracle)?;
        sink(&first);
        trace.push(first);
        while state.k < self.config.k_max {
            state = self.step(&state, &mut rng)?;
            if self.config.checkpoints.contains(state.k) {
                let row = self.checkpoint(&state, oracle)?;
                sink(&row);
                trace.push(row);
            }
        }
        Ok((state, trace))
    }
}

/// Runs the synchronous solver to completion.
pub fn run_sync(
    mdp: &Mdp,
    config: SyncConfig,
    oracle: Option<&OracleSolution>,
) -> Result<(SyncState, Vec<SyncRow>)> {
    SyncSolver::new(mdp, config)?.run(oracle, &mut |_| {})
}
