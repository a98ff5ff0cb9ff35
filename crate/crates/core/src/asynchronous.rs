//! Asynchronous projected stochastic gradient descent-ascent on a single
//! trajectory with structured experience replay.
//!
//! Every step observes one transition `X_{k-1} = (s_{k-1}, a_{k-1}) -> s_k`,
//! stores it in the replay buffer, and updates exactly one coordinate of
//! `V` (at `s_k`) and one of `rho` (at `X_{k-1}`). Stepsizes run on local
//! clocks: the visit counts of the coordinate being updated.
//!
//! Per step, the primal estimate resamples every pair in `incoming(s_k)`,
//! so the cost is `O(|incoming(s_k)|) <= O(|S||A|)`.

use crate::error::{Error, Result};
use crate::lagrangian::{best_response, dual_box, primal_box, BoxH, RegParams, NUMERIC_FLOOR};
use crate::linalg::dist2;
use crate::metrics::{kl_policy, rrmse};
use crate::mdp::{Mdp, Policy, RngStream, StateActionVec, StateVec};
use crate::oracle::{policy_value_regularized, solve_oracle, OracleSolution, DEFAULT_TOL};
use crate::replay::{buffer_push, sample_incoming, IncomingSets, ReplayBuffer};
use crate::schedule::{EpsilonSchedule, LocalSchedule};
use crate::trace::{AsyncRow, Checkpoints};

/// How actions are chosen along the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    /// A fixed, strictly positive policy.
    Fixed(Policy),
    /// `(1 - eps_k) pi_rho_k + eps_k Uniform(A)`, refreshed every step.
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncConfig {
    pub k_max: u64,
    pub params: RegParams,
    pub schedule: LocalSchedule,
    pub behavior: Behavior,
    pub epsilon: EpsilonSchedule,
    /// Per-pair list capacity; `None` keeps every observation.
    pub buffer_cap: Option<usize>,
    /// Clamp `V` to `[0, v_max]` after every update.
    pub project_primal: bool,
    pub numeric_floor: f64,
    pub seed: u64,
    pub checkpoints: Checkpoints,
    /// Initial dual value for every entry; defaults to `C^U / 1000`.
    pub rho_init: Option<f64>,
}

impl AsyncConfig {
    /// FrozenLake experiment defaults: on-policy behavior, `eps` from 1 to 0.1,
    /// lists capped at 1000, no primal projection.
    pub fn new(params: RegParams, k_max: u64, seed: u64) -> Self {
        Self {
            k_max,
            params,
            schedule: LocalSchedule::frozen_lake(),
            behavior: Behavior::OnPolicy,
            epsilon: EpsilonSchedule::default(),
            buffer_cap: Some(1000),
            project_primal: false,
            numeric_floor: NUMERIC_FLOOR,
            seed,
            checkpoints: Checkpoints::default(),
            rho_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsyncState {
    pub v: StateVec,
    pub rho: StateActionVec,
    pub buffer: ReplayBuffer,
    pub incoming: IncomingSets,
    /// The pair `X_k` whose successor is observed next.
    pub current: (usize, usize),
    /// The latest observed transition `(X_k, s_k)`.
    pub last_transition: Option<((usize, usize), usize)>,
    pub behavior: Policy,
    pub k: u64,
}

/// Value of the single nonzero coordinate `s_k` of the primal estimate:
/// `eta_V V(s_k) - rho~(s_k) + gamma sum_{incoming} rho(s,a) 1{xi(s,a) = s_k}`.
pub fn stoch_grad_v_async(
    mdp: &Mdp,
    params: &RegParams,
    v: &StateVec,
    rho: &StateActionVec,
    s_k: usize,
    indicators: &[(usize, bool)],
) -> (usize, f64) {
    let marg: f64 = rho.row(s_k).iter().sum();
    let hits: f64 = indicators.iter().filter(|(_, hit)| *hit).map(|&(p, _)| rho.as_slice()[p]).sum();
    (s_k, params.eta_v * v[s_k] - marg + mdp.gamma() * hits)
}

/// Value of the single nonzero coordinate `X_k = (s, a)` of the dual estimate:
/// `-V(s) + r(s,a) + gamma V(s_k) - eta_rho log(rho(s,a) / rho~(s))`.
pub fn stoch_grad_rho_async(
    mdp: &Mdp,
    params: &RegParams,
    v: &StateVec,
    rho: &StateActionVec,
    x_k: (usize, usize),
    s_k: usize,
) -> Result<((usize, usize), f64)> {
    let (s, a) = x_k;
    let x = rho.get(s, a);
    if !(x > 0.0) {
        return Err(Error::NonPositiveEntry { index: s * mdp.n_actions() + a, value: x });
    }
    let marg: f64 = rho.row(s).iter().sum();
    let value = -v[s] + mdp.reward(s, a) + mdp.gamma() * v[s_k] - params.eta_rho * (x / marg).ln();
    Ok((x_k, value))
}

/// `(1 - eps) pi_rho + eps Uniform(A)`
pub fn update_behavior(rho: &StateActionVec, eps: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("exploration rate {eps} outside [0, 1]")));
    }
    let pi = Policy::from_dual(rho)?;
    let na = rho.n_actions();
    let u = eps / na as f64;
    let probs = pi.as_slice().iter().map(|p| (1.0 - eps) * p + u).collect();
    Policy::new(rho.n_states(), na, probs)
}

/// Owns the boxes and configuration of one asynchronous run.
#[derive(Debug, Clone)]
pub struct AsyncSolver<'a> {
    mdp: &'a Mdp,
    config: AsyncConfig,
    dual_box: BoxH,
    low: f64,
    high: f64,
    v_max: f64,
}

impl<'a> AsyncSolver<'a> {
    pub fn new(mdp: &'a Mdp, config: AsyncConfig) -> Result<Self> {
        if !config.schedule.is_valid() {
            return Err(Error::Config(format!("invalid local schedule {:?}", config.schedule)));
        }
        if !config.checkpoints.is_valid() {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        if config.buffer_cap == Some(0) {
            return Err(Error::Config("buffer_cap must be positive".into()));
        }
        for e in [config.epsilon.eps0, config.epsilon.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("exploration rate {e} outside [0, 1]")));
            }
        }
        if let Behavior::Fixed(pi) = &config.behavior {
            if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
                return Err(Error::Shape(format!(
                    "behavior policy is {}x{}, MDP is {}x{}",
                    pi.n_states(),
                    pi.n_actions(),
                    mdp.n_states(),
                    mdp.n_actions()
                )));
            }
            if !(pi.min_entry() > 0.0) {
                return Err(Error::Config("fixed behavior policy must be strictly positive".into()));
            }
        }
        let dual_box = dual_box(mdp, &config.params);
        let (low, high) = dual_box.runtime(config.numeric_floor);
        let v_max = primal_box(mdp, &config.params).v_max;
        Ok(Self { mdp, config, dual_box, low, high, v_max })
    }

    pub fn config(&self) -> &AsyncConfig {
        &self.config
    }

    pub fn dual_box(&self) -> &BoxH {
        &self.dual_box
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    fn behavior_at(&self, rho: &StateActionVec, k: u64) -> Result<Policy> {
        match &self.config.behavior {
            Behavior::Fixed(pi) => Ok(pi.clone()),
            Behavior::OnPolicy => update_behavior(rho, self.config.epsilon.at(k, self.config.k_max)),
        }
    }

    /// `V_0 = 0`, uniform `rho_0`, `s_0 ~ mu`, `a_0 ~ pi^b_0`.
    pub fn initial_state(&self, rng: &mut RngStream) -> Result<AsyncState> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let init = self.config.rho_init.unwrap_or(self.dual_box.c_high * 1e-3);
        let rho = StateActionVec::filled(ns, na, init.clamp(self.low, self.high));
        let behavior = self.behavior_at(&rho, 0)?;
        let s0 = rng.categorical(self.mdp.mu());
        let a0 = rng.categorical(behavior.row(s0));
        Ok(AsyncState {
            v: StateVec::zeros(ns),
            rho,
            buffer: ReplayBuffer::new(ns, na, self.config.buffer_cap),
            incoming: IncomingSets::new(ns, na),
            current: (s0, a0),
            last_transition: None,
            behavior,
            k: 0,
        })
    }

    /// One environment transition and the two coordinate updates, in place.
    ///
    /// Draw order: `s_k`, then `a_k` from the current behavior policy, then one
    /// replay draw per incoming pair of `s_k`.
    pub fn step(&self, state: &mut AsyncState, rng: &mut RngStream) -> Result<()> {
        if state.k >= self.config.k_max {
            return Err(Error::Config(format!("iteration budget {} exhausted", self.config.k_max)));
        }
        let params = &self.config.params;
        let x = state.current;
        let s_k = self.mdp.sample_transition(x.0, x.1, rng)?;
        let a_k = rng.categorical(state.behavior.row(s_k));

        buffer_push(&mut state.buffer, &mut state.incoming, x, s_k)?;
        let indicators = sample_incoming(&state.buffer, &state.incoming, s_k, rng)?;

        let (_, g) = stoch_grad_v_async(self.mdp, params, &state.v, &state.rho, s_k, &indicators);
        let (_, h) = stoch_grad_rho_async(self.mdp, params, &state.v, &state.rho, x, s_k)?;

        let alpha = self.config.schedule.alpha(state.buffer.nu_tilde(s_k));
        let beta = self.config.schedule.beta(state.buffer.nu(x.0, x.1));
        let mut v_new = state.v[s_k] - alpha * g;
        if self.config.project_primal {
            v_new = v_new.clamp(0.0, self.v_max);
        }
        state.v[s_k] = v_new;
        let r = state.rho.get_mut(x.0, x.1);
        *r = (*r + beta * h).clamp(self.low, self.high);

        state.k += 1;
        state.current = (s_k, a_k);
        state.last_transition = Some((x, s_k));
        if self.config.behavior == Behavior::OnPolicy {
            state.behavior = self.behavior_at(&state.rho, state.k)?;
        }
        if !v_new.is_finite() || !state.rho.get(x.0, x.1).is_finite() {
            return Err(Error::SolveFailure(format!("non-finite iterate at step {}", state.k)));
        }
        Ok(())
    }

    /// Metrics of the current iterate against the oracle.
    pub fn checkpoint(&self, state: &AsyncState, oracle: &OracleSolution) -> Result<AsyncRow> {
        let mdp = self.mdp;
        let params = &self.config.params;
        let mask = mdp.non_terminal_mask();
        let start = mdp.start_state();
        let pi = Policy::from_dual(&state.rho)?;
        let v_pi_reg = policy_value_regularized(mdp, params.eta_rho, &pi)?;
        let v_pi_ur = mdp.policy_value_unregularized(&pi)?;
        let lambda = best_response(mdp, params, &state.rho);
        Ok(AsyncRow {
            seed: self.config.seed,
            k: state.k,
            rrmse_v_reg: rrmse(state.v.as_slice(), oracle.v_star.as_slice(), &mask)?,
            rrmse_dualpolicy_reg: rrmse(v_pi_reg.as_slice(), oracle.v_star.as_slice(), &mask)?,
            rrmse_v_unreg: rrmse(v_pi_ur.as_slice(), oracle.v_star_ur.as_slice(), &mask)?,
            value_start_dualpolicy: v_pi_reg[start],
            kl_to_optimal: kl_policy(&oracle.pi_star, &pi, &mask)?,
            min_visits: state.buffer.min_visits(),
            tracking_err: dist2(state.v.as_slice(), lambda.as_slice()),
            rho_err_l2: dist2(state.rho.as_slice(), oracle.rho_star.as_slice()),
            value_start_dualpolicy_unreg: v_pi_ur[start],
        })
    }

    /// Runs `k_max` steps. `on_checkpoint` sees the state and its metrics at
    /// every checkpoint (including `k = 0`).
    pub fn run_with(
        &self,
        oracle: &OracleSolution,
        on_checkpoint: &mut dyn FnMut(&AsyncState, &AsyncRow),
    ) -> Result<(AsyncState, Vec<AsyncRow>)> {
        let mut rng = RngStream::new(self.config.seed);
        let mut state = self.initial_state(&mut rng)?;
        let mut trace = Vec::new();
        let first = self.checkpoint(&state, oracle)?;
        on_checkpoint(&state, &first);
        trace.push(first);
        while state.k < self.config.k_max {
            self.step(&mut state, &mut rng)?;
            if self.config.checkpoints.contains(state.k) {
                let row = self.checkpoint(&state, oracle)?;
                on_checkpoint(&state, &row);
                trace.push(row);
            }
        }
        Ok((state, trace))
    }
}

/// Runs the asynchronous solver; the oracle is computed when not supplied.
pub fn run_async(
    mdp: &Mdp,
    config: AsyncConfig,
    oracle: Option<&OracleSolution>,
    sink: &mut dyn FnMut(&AsyncRow),
) -> Result<(AsyncState, Vec<AsyncRow>)> {
    let owned;
    let oracle = match oracle {
        Some(o) => o,
        None => {
            owned = solve_oracle(mdp, &config.params, DEFAULT_TOL)?;
            &owned
        }
    };
    AsyncSolver::new(mdp, config)?.run_with(oracle, &mut |_, row| sink(row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{grad_rho, grad_v};
    use crate::mdp::{frozen_lake_4x4, random_mdp, rate3, two_state_chain};

    fn params(m: &Mdp) -> RegParams {
        RegParams::for_mdp(m, 0.1, 0.1).unwrap()
    }

    #[test]
    fn behavior_mixing() {
        let rho = StateActionVec::new(1, 2, vec![1.0, 3.0]).unwrap();
        let u = update_behavior(&rho, 1.0).unwrap();
        assert_eq!(u.row(0), &[0.5, 0.5]);
        let p = update_behavior(&rho, 0.0).unwrap();
        assert_eq!(p.row(0), &[0.25, 0.75]);
        let h = update_behavior(&rho, 0.5).unwrap();
        assert!((h.prob(0, 0) - 0.375).abs() < 1e-15 && (h.prob(0, 1) - 0.625).abs() < 1e-15);
        assert!(update_behavior(&rho, 1.5).is_err());
        let bad = StateActionVec::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(update_behavior(&bad, 0.5).is_err());
    }

    #[test]
    fn grad_v_async_closed_forms() {
        let m = rate3(0.9).validate().unwrap();
        let p = params(&m);
        let v = StateVec(vec![1.0, 2.0, 3.0]);
        let rho = StateActionVec::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let (s, g) = stoch_grad_v_async(&m, &p, &v, &rho, 1, &[]);
        assert_eq!(s, 1);
        assert!((g - (0.1 * 2.0 - 0.7)).abs() < 1e-15);
        let (_, g) = stoch_grad_v_async(&m, &p, &v, &rho, 1, &[(0, true), (5, true), (2, false)]);
        assert!((g - (0.2 - 0.7 + 0.9 * (0.1 + 0.6))).abs() < 1e-15);
    }

    #[test]
    fn grad_v_async_exact_buffer_is_unbiased() {
        // Fill each list with a multiset matching the kernel exactly; the
        // conditional mean of the estimate is then the s_k entry of grad_v.
        let m = rate3(0.9).validate().unwrap();
        let p = params(&m);
        let v = StateVec(vec![1.0, -2.0, 0.5]);
        let rho = StateActionVec::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut b = ReplayBuffer::new(3, 2, None);
        let mut inc = IncomingSets::new(3, 2);
        for s in 0..3 {
            for a in 0..2 {
                for (t, &q) in m.next_dist(s, a).iter().enumerate() {
                    for _ in 0..(q * 10.0).round() as usize {
                        buffer_push(&mut b, &mut inc, (s, a), t).unwrap();
                    }
                }
            }
        }
        let exact = grad_v(&m, &p, &v, &rho);
        let mut rng = RngStream::new(3);
        let n = 100_000;
        for s_k in 0..3 {
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let ind = sample_incoming(&b, &inc, s_k, &mut rng).unwrap();
                    stoch_grad_v_async(&m, &p, &v, &rho, s_k, &ind).1
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - exact[s_k]).abs() <= 3.0 * se + 1e-12, "s {s_k}: {mean} vs {}", exact[s_k]);
        }
    }

    #[test]
    fn grad_rho_async_cases() {
        let m = rate3(0.9).validate().unwrap();
        let p = params(&m);
        let rho = StateActionVec::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let zero = StateVec::zeros(3);
        let ((s, a), h) = stoch_grad_rho_async(&m, &p, &zero, &rho, (2, 1), 0).unwrap();
        assert_eq!((s, a), (2, 1));
        assert!((h - (0.9 - 0.1 * (0.6f64 / 1.1).ln())).abs() < 1e-15);

        // deterministic kernel: equals the exact gradient entry
        let c = two_state_chain(0.5).validate().unwrap();
        let pc = params(&c);
        let v = StateVec(vec![0.3, -0.7]);
        let rc = StateActionVec::new(2, 2, vec![0.2, 0.3, 0.4, 0.1]).unwrap();
        let exact = grad_rho(&c, &pc, &v, &rc).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                let next = c.next_dist(s, a).iter().position(|&q| q == 1.0).unwrap();
                let (_, h) = stoch_grad_rho_async(&c, &pc, &v, &rc, (s, a), next).unwrap();
                assert!((h - exact.get(s, a)).abs() < 1e-14);
            }
        }

        // Monte Carlo over s_k | X_k
        let v = StateVec(vec![1.0, -2.0, 0.5]);
        let exact = grad_rho(&m, &p, &v, &rho).unwrap();
        let mut rng = RngStream::new(17);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let s_k = m.sample_transition(1, 0, &mut rng).unwrap();
                stoch_grad_rho_async(&m, &p, &v, &rho, (1, 0), s_k).unwrap().1
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - exact.get(1, 0)).abs() <= 3.0 * (var / n as f64).sqrt());

        let bad = StateActionVec::new(3, 2, vec![0.0, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert!(matches!(
            stoch_grad_rho_async(&m, &p, &v, &bad, (0, 0), 1),
            Err(Error::NonPositiveEntry { .. })
        ));
    }

    #[test]
    fn step_contract() {
        let m = frozen_lake_4x4(true, 0.9).validate().unwrap();
        let mut cfg = AsyncConfig::new(params(&m), 2000, 9);
        cfg.buffer_cap = None;
        let solver = AsyncSolver::new(&m, cfg).unwrap();
        let (low, high) = solver.bounds();
        let mut rng = RngStream::new(9);
        let mut state = solver.initial_state(&mut rng).unwrap();
        for _ in 0..2000 {
            let prev = state.clone();
            solver.step(&mut state, &mut rng).unwrap();
            let dv = prev.v.0.iter().zip(&state.v.0).filter(|(a, b)| a != b).count();
            let dr = prev.rho.as_slice().iter().zip(state.rho.as_slice()).filter(|(a, b)| a != b).count();
            assert!(dv <= 1 && dr <= 1);
            assert_eq!(state.buffer.total_visits(), state.k);
            for s in 0..m.n_states() {
                let row: u64 = (0..m.n_actions()).map(|a| state.buffer.nu(s, a)).sum();
                assert!(state.buffer.nu_tilde(s).abs_diff(row) <= 1);
            }
            assert!(state.rho.as_slice().iter().all(|&x| x >= low && x <= high));
            let eps = cfg_eps(&solver, state.k);
            assert!(state.behavior.min_entry() >= eps / 4.0 - 1e-15);
        }
        for s_next in 0..m.n_states() {
            for &pair in state.incoming.members(s_next) {
                assert!(state.buffer.list(pair / 4, pair % 4).contains(&s_next));
            }
        }
    }

    fn cfg_eps(solver: &AsyncSolver, k: u64) -> f64 {
        solver.config().epsilon.at(k, solver.config().k_max)
    }

    #[test]
    fn primal_projection_holds() {
        let m = rate3(0.9).validate().unwrap();
        let mut cfg = AsyncConfig::new(params(&m), 5000, 1);
        cfg.project_primal = true;
        cfg.schedule = LocalSchedule::rate(1.0, 1.0);
        let solver = AsyncSolver::new(&m, cfg).unwrap();
        let mut rng = RngStream::new(1);
        let mut state = solver.initial_state(&mut rng).unwrap();
        for _ in 0..5000 {
            solver.step(&mut state, &mut rng).unwrap();
            assert!(state.v.0.iter().all(|&x| (0.0..=solver.v_max()).contains(&x)));
        }
        assert!(solver.step(&mut state, &mut rng).is_err());
    }

    #[test]
    fn determinism_and_zero_budget() {
        let m = frozen_lake_4x4(true, 0.9).validate().unwrap();
        let oracle = solve_oracle(&m, &params(&m), DEFAULT_TOL).unwrap();
        let mut cfg = AsyncConfig::new(params(&m), 1000, 77);
        cfg.checkpoints = Checkpoints::Stride(250);
        let (a, ta) = run_async(&m, cfg.clone(), Some(&oracle), &mut |_| {}).unwrap();
        let (b, tb) = run_async(&m, cfg.clone(), Some(&oracle), &mut |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 5);

        cfg.k_max = 0;
        let (s, t) = run_async(&m, cfg, Some(&oracle), &mut |_| {}).unwrap();
        assert_eq!(s.k, 0);
        assert_eq!(t.len(), 1);
        assert!(t[0].rrmse_v_reg.is_finite());
    }

    #[test]
    fn fixed_behavior_is_validated() {
        let mut rng = RngStream::new(4);
        let m = random_mdp(3, 2, 0.9, 0.0, &mut rng).validate().unwrap();
        let mut cfg = AsyncConfig::new(params(&m), 10, 0);
        cfg.behavior = Behavior::Fixed(Policy::deterministic(2, &[0, 1, 0]));
        assert!(AsyncSolver::new(&m, cfg.clone()).is_err());
        cfg.behavior = Behavior::Fixed(Policy::uniform(2, 2));
        assert!(matches!(AsyncSolver::new(&m, cfg.clone()), Err(Error::Shape(_))));
        cfg.behavior = Behavior::Fixed(Policy::uniform(3, 2));
        let (s, _) = run_async(&m, cfg, None, &mut |_| {}).unwrap();
        assert!(s.behavior == Policy::uniform(3, 2));
    }
}
