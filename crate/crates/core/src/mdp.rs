//! Finite MDPs, policies, state and state-action vectors, and the seeded
//! random stream every stochastic routine draws from.
//!
//! State-action quantities are stored row-major: entry `s * n_actions + a`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;

const ROW_SUM_TOL: f64 = 1e-9;
const POLICY_ROW_TOL: f64 = 1e-12;

/// Unvalidated model description, one-to-one with the MDP file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub mu: Vec<f64>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `(terminal, restart)` pairs; terminal cells are excluded from
    /// evaluation masks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminal_loopback: Vec<(usize, usize)>,
}

impl MdpSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("MdpSpec serializes to TOML")
    }

    pub fn validate(&self) -> Result<Mdp> {
        Mdp::new(self)
    }
}

/// A validated, immutable MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    mu: Vec<f64>,
    reward: Vec<f64>,
    transition: Vec<f64>,
    terminal_loopback: Vec<(usize, usize)>,
    c_r: f64,
}

impl Mdp {
    pub fn new(spec: &MdpSpec) -> Result<Self> {
        let (ns, na) = (spec.n_states, spec.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::Shape("n_states and n_actions must be positive".into()));
        }
        if !(spec.gamma > 0.0 && spec.gamma < 1.0) {
            return Err(Error::InvalidGamma(spec.gamma));
        }
        if spec.mu.len() != ns {
            return Err(Error::Shape(format!("mu has {} entries, expected {ns}", spec.mu.len())));
        }
        if spec.reward.len() != ns || spec.reward.iter().any(|r| r.len() != na) {
            return Err(Error::Shape(format!("reward must be {ns}x{na}")));
        }
        if spec.transition.len() != ns
            || spec
                .transition
                .iter()
                .any(|row| row.len() != na || row.iter().any(|p| p.len() != ns))
        {
            return Err(Error::Shape(format!("transition must be {ns}x{na}x{ns}")));
        }

        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, rows) in spec.transition.iter().enumerate() {
            for (a, row) in rows.iter().enumerate() {
                for (next, &p) in row.iter().enumerate() {
                    if p < 0.0 || !p.is_finite() {
                        return Err(Error::NegativeProbability {
                            state: s,
                            action: a,
                            next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::RowSum { state: s, action: a, sum });
                }
                transition.extend_from_slice(row);
            }
        }

        let mut reward = Vec::with_capacity(ns * na);
        for (s, row) in spec.reward.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                if r < 0.0 || !r.is_finite() {
                    return Err(Error::RewardOutOfRange { state: s, action: a, value: r });
                }
                reward.push(r);
            }
        }

        for (s, &m) in spec.mu.iter().enumerate() {
            if m <= 0.0 || !m.is_finite() {
                return Err(Error::DegenerateMu { state: s, value: m });
            }
        }
        let mu_sum: f64 = spec.mu.iter().sum();
        if (mu_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Shape(format!("mu sums to {mu_sum}, expected 1")));
        }

        for &(t, r) in &spec.terminal_loopback {
            if t >= ns || r >= ns {
                return Err(Error::IndexOutOfRange(format!("loopback pair ({t}, {r})")));
            }
        }

        let c_r = reward.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            n_states: ns,
            n_actions: na,
            gamma: spec.gamma,
            mu: spec.mu.clone(),
            reward,
            transition,
            terminal_loopback: spec.terminal_loopback.clone(),
            c_r,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Largest reward entry.
    pub fn c_r(&self) -> f64 {
        self.c_r
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Next-state distribution of `(s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn terminal_loopback(&self) -> &[(usize, usize)] {
        &self.terminal_loopback
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal_loopback.iter().any(|&(t, _)| t == s)
    }

    /// Restart state of the first loopback pair, or the most likely initial state.
    pub fn start_state(&self) -> usize {
        if let Some(&(_, restart)) = self.terminal_loopback.first() {
            return restart;
        }
        let mut best = 0;
        for s in 1..self.n_states {
            if self.mu[s] > self.mu[best] {
                best = s;
            }
        }
        best
    }

    /// Mask of states used for evaluation metrics (all non-terminal states).
    pub fn non_terminal_mask(&self) -> Vec<bool> {
        (0..self.n_states).map(|s| !self.is_terminal(s)).collect()
    }

    pub fn to_spec(&self) -> MdpSpec {
        let (ns, na) = (self.n_states, self.n_actions);
        MdpSpec {
            n_states: ns,
            n_actions: na,
            gamma: self.gamma,
            mu: self.mu.clone(),
            reward: (0..ns)
                .map(|s| self.reward[s * na..(s + 1) * na].to_vec())
                .collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.next_dist(s, a).to_vec()).collect())
                .collect(),
            terminal_loopback: self.terminal_loopback.clone(),
        }
    }

    /// Same model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidGamma(gamma));
        }
        Ok(Self { gamma, ..self.clone() })
    }

    /// `sum_s' P(s'|s,a) v(s')`
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.next_dist(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// Draws `s' ~ P(.|s,a)`.
    pub fn sample_transition(&self, s: usize, a: usize, rng: &mut RngStream) -> Result<usize> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::IndexOutOfRange(format!("pair ({s}, {a})")));
        }
        Ok(rng.categorical(self.next_dist(s, a)))
    }

    /// State transition matrix and reward vector of a stationary policy.
    pub fn policy_kernel(&self, pi: &Policy) -> (Vec<f64>, Vec<f64>) {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut p = vec![0.0; ns * ns];
        let mut r = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.reward(s, a);
                for (dst, q) in p[s * ns..(s + 1) * ns].iter_mut().zip(self.next_dist(s, a)) {
                    *dst += w * q;
                }
            }
        }
        (p, r)
    }

    /// Solves `(I - gamma P^pi) V = rhs` for a per-state right-hand side.
    pub(crate) fn solve_policy_system(&self, p_pi: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let ns = self.n_states;
        let mut a = vec![0.0; ns * ns];
        for i in 0..ns {
            for j in 0..ns {
                a[i * ns + j] = -self.gamma * p_pi[i * ns + j];
            }
            a[i * ns + i] += 1.0;
        }
        solve_dense(ns, &a, rhs)
    }

    /// Unregularized value `V = (I - gamma P^pi)^{-1} r^pi`.
    pub fn policy_value_unregularized(&self, pi: &Policy) -> Result<StateVec> {
        let (p, r) = self.policy_kernel(pi);
        Ok(StateVec(self.solve_policy_system(&p, &r)?))
    }
}

/// Per-state vector (values, state marginals, visit counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for StateVec {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

impl std::ops::IndexMut<usize> for StateVec {
    fn index_mut(&mut self, s: usize) -> &mut f64 {
        &mut self.0[s]
    }
}

/// Row-major state-action vector (dual variables, gradients, visit counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionVec {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl StateActionVec {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "state-action vector has {} entries, expected {}",
                values.len(),
                n_states * n_actions
            )));
        }
        Ok(Self { n_states, n_actions, values })
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn get_mut(&mut self, s: usize, a: usize) -> &mut f64 {
        &mut self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// `rho~(s) = sum_a rho(s, a)`
    pub fn marginal(&self) -> StateVec {
        StateVec((0..self.n_states).map(|s| self.row(s).iter().sum()).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Fails with the first entry that is not strictly positive.
    pub fn check_positive(&self) -> Result<()> {
        match self.values.iter().position(|&v| !(v > 0.0)) {
            Some(index) => Err(Error::NonPositiveEntry { index, value: self.values[index] }),
            None => Ok(()),
        }
    }
}

/// Stationary randomized policy, one probability row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!("policy must be {n_states}x{n_actions}")));
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            if let Some(a) = row.iter().position(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::NegativeProbability { state: s, action: a, next: a, value: row[a] });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_ROW_TOL {
                return Err(Error::RowSum { state: s, action: 0, sum });
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self { n_states: actions.len(), n_actions, probs }
    }

    /// `pi(a|s) = rho(s,a) / rho~(s)`
    pub fn from_dual(rho: &StateActionVec) -> Result<Self> {
        rho.check_positive()?;
        let na = rho.n_actions();
        let mut probs = Vec::with_capacity(rho.as_slice().len());
        for s in 0..rho.n_states() {
            let row = rho.row(s);
            let total: f64 = row.iter().sum();
            probs.extend(row.iter().map(|v| v / total));
        }
        Ok(Self { n_states: rho.n_states(), n_actions: na, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Shannon entropy of each row.
    pub fn entropies(&self) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                -self
                    .row(s)
                    .iter()
                    .filter(|&&p| p > 0.0)
                    .map(|p| p * p.ln())
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Convenience alias for [`Policy::from_dual`].
pub fn policy_from_dual(rho: &StateActionVec) -> Result<Policy> {
    Policy::from_dual(rho)
}

/// Seeded ChaCha8 stream. Identical seeds give bit-identical draw sequences
/// on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Inverse-CDF draw from a probability vector.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }
}

/// Gymnasium FrozenLake-v1 action indices.
pub mod frozen_lake {
    pub const LEFT: usize = 0;
    pub const DOWN: usize = 1;
    pub const RIGHT: usize = 2;
    pub const UP: usize = 3;

    pub const MAP_4X4: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];
    pub const GOAL_REWARD: f64 = 100.0;
}

/// The 4x4 FrozenLake grid as an infinite-horizon MDP.
///
/// Holes and the goal loop back to the start cell with probability one under
/// every action. The goal reward of 100 is paid on the goal cell's loopback
/// transition, so `C_r = 100` in both modes. In slippery mode the agent moves
/// in the intended direction or either perpendicular direction with
/// probability 1/3 each; moves into a wall leave the agent in place.
/// `gamma` defaults to 0.9 in the experiment presets; `mu` is uniform.
pub fn frozen_lake_4x4(slippery: bool, gamma: f64) -> MdpSpec {
    use frozen_lake::*;
    let n = 4usize;
    let ns = n * n;
    let na = 4;
    let cell = |s: usize| MAP_4X4[s / n].as_bytes()[s % n];
    let start = (0..ns).find(|&s| cell(s) == b'S').unwrap();

    let step = |s: usize, dir: usize| -> usize {
        let (row, col) = (s / n, s % n);
        match dir {
            LEFT => row * n + col.saturating_sub(1),
            DOWN => (row + 1).min(n - 1) * n + col,
            RIGHT => row * n + (col + 1).min(n - 1),
            UP => row.saturating_sub(1) * n + col,
            _ => unreachable!(),
        }
    };

    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = vec![vec![0.0; na]; ns];
    let mut loopback = Vec::new();
    for s in 0..ns {
        let c = cell(s);
        if c == b'H' || c == b'G' {
            loopback.push((s, start));
            for a in 0..na {
                transition[s][a][start] = 1.0;
                if c == b'G' {
                    reward[s][a] = GOAL_REWARD;
                }
            }
            continue;
        }
        for a in 0..na {
            if slippery {
                for dir in [(a + 3) % 4, a, (a + 1) % 4] {
                    transition[s][a][step(s, dir)] += 1.0 / 3.0;
                }
            } else {
                transition[s][a][step(s, a)] = 1.0;
            }
        }
    }

    MdpSpec {
        n_states: ns,
        n_actions: na,
        gamma,
        mu: vec![1.0 / ns as f64; ns],
        reward,
        transition,
        terminal_loopback: loopback,
    }
}

/// Two states, two actions: `a0` at `s0` moves to `s1` with reward 1, `a1`
/// at `s0` stays; both actions at `s1` return to `s0` with reward 0.
pub fn two_state_chain(gamma: f64) -> MdpSpec {
    MdpSpec {
        n_states: 2,
        n_actions: 2,
        gamma,
        mu: vec![0.5, 0.5],
        reward: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
        transition: vec![
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        ],
        terminal_loopback: Vec::new(),
    }
}

/// Three states, two actions, every kernel entry at least 0.1, so every
/// policy (deterministic ones included) induces a uniformly ergodic chain.
pub fn rate3(gamma: f64) -> MdpSpec {
    MdpSpec {
        n_states: 3,
        n_actions: 2,
        gamma,
        mu: vec![1.0 / 3.0; 3],
        reward: vec![vec![1.0, 0.2], vec![0.0, 0.6], vec![0.4, 0.9]],
        transition: vec![
            vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.2, 0.7]],
            vec![vec![0.2, 0.7, 0.1], vec![0.5, 0.1, 0.4]],
            vec![vec![0.3, 0.3, 0.4], vec![0.1, 0.6, 0.3]],
        ],
        terminal_loopback: Vec::new(),
    }
}

/// Random dense MDP: rewards uniform in `[0, 1)`, transition rows from
/// normalized exponentials mixed with `min_prob` mass on every successor.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    min_prob: f64,
    rng: &mut RngStream,
) -> MdpSpec {
    assert!(min_prob * n_states as f64 <= 1.0, "min_prob too large");
    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            reward[s][a] = rng.uniform();
            let w: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.uniform()).ln()).collect();
            let z: f64 = w.iter().sum();
            let free = 1.0 - min_prob * n_states as f64;
            let row = &mut transition[s][a];
            for (dst, wi) in row.iter_mut().zip(&w) {
                *dst = min_prob + free * wi / z;
            }
            // absorb rounding so the row sums to one to machine precision
            let sum: f64 = row.iter().sum();
            row[n_states - 1] += 1.0 - sum;
        }
    }
    MdpSpec {
        n_states,
        n_actions,
        gamma,
        mu: vec![1.0 / n_states as f64; n_states],
        reward,
        transition,
        terminal_loopback: Vec::new(),
    }
}

/// The 4-state, 2-action instance used for synchronous convergence runs:
/// `random_mdp(4, 2, gamma, 0.0)` drawn from seed 1 with rewards scaled
/// into `[0, 0.1)`. The smaller reward scale keeps the curvature of the
/// reduced objective at the optimum large enough that a `1/k` dual stepsize
/// converges at close to its nominal rate.
pub fn pilot_4x2(gamma: f64) -> MdpSpec {
    let mut spec = random_mdp(4, 2, gamma, 0.0, &mut RngStream::new(1));
    for r in spec.reward.iter_mut().flatten() {
        *r *= 0.1;
    }
    spec
}
