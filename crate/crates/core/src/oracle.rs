//! Exact reference solutions: the regularized fixed point `V*`, its Boltzmann
//! policy, the saddle dual `rho*`, and the unregularized optimum.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::{grad_rho, grad_v, RegParams};
use crate::linalg::{dist_inf, logsumexp, norm_inf, softmax_into};
use crate::mdp::{Mdp, Policy, StateActionVec, StateVec};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Residual norms recorded alongside an oracle solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `|T V* - V*|_inf`
    pub fixed_point: f64,
    pub grad_v_inf: f64,
    pub grad_rho_inf: f64,
    /// `|T_ur V*_ur - V*_ur|_inf`
    pub unregularized_fixed_point: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub v_star: StateVec,
    pub pi_star: Policy,
    pub rho_star: StateActionVec,
    pub v_star_ur: StateVec,
    pub pi_star_ur: Policy,
    pub residuals: Residuals,
}

/// `(T V)(s) = eta_rho logsumexp_a((r(s,a) + gamma P V)(s,a) / eta_rho)`
pub fn soft_bellman_opt(mdp: &Mdp, eta_rho: f64, v: &StateVec) -> StateVec {
    let na = mdp.n_actions();
    let g = mdp.gamma();
    let mut q = vec![0.0; na];
    StateVec(
        (0..mdp.n_states())
            .map(|s| {
                for (a, qa) in q.iter_mut().enumerate() {
                    *qa = (mdp.reward(s, a) + g * mdp.expected_next(s, a, v.as_slice())) / eta_rho;
                }
                eta_rho * logsumexp(&q)
            })
            .collect(),
    )
}

/// `(T_ur V)(s) = max_a (r(s,a) + gamma P V)(s,a)`
pub fn bellman_opt(mdp: &Mdp, v: &StateVec) -> StateVec {
    let g = mdp.gamma();
    StateVec(
        (0..mdp.n_states())
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| mdp.reward(s, a) + g * mdp.expected_next(s, a, v.as_slice()))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect(),
    )
}

fn fixed_point(mdp: &Mdp, tol: f64, op: impl Fn(&StateVec) -> StateVec) -> Result<StateVec> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let g = mdp.gamma();
    let stop = tol * (1.0 - g) / g;
    let mut v = StateVec::zeros(mdp.n_states());
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let next = op(&v);
        residual = dist_inf(next.as_slice(), v.as_slice());
        v = next;
        if residual <= stop {
            return Ok(v);
        }
    }
    Err(Error::MaxIterExceeded { iterations: MAX_SWEEPS, residual })
}

/// Regularized optimal value, accurate to `tol` in sup norm.
pub fn solve_regularized(mdp: &Mdp, eta_rho: f64, tol: f64) -> Result<StateVec> {
    fixed_point(mdp, tol, |v| soft_bellman_opt(mdp, eta_rho, v))
}

/// `pi(a|s) ∝ exp(Delta[V](s,a) / eta_rho)`
pub fn boltzmann_policy(mdp: &Mdp, eta_rho: f64, v: &StateVec) -> Policy {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut q = vec![0.0; na];
    let mut probs = vec![0.0; ns * na];
    for s in 0..ns {
        for (a, qa) in q.iter_mut().enumerate() {
            *qa = (mdp.reward(s, a) + g * mdp.expected_next(s, a, v.as_slice())) / eta_rho;
        }
        softmax_into(&q, &mut probs[s * na..(s + 1) * na]);
    }
    Policy::new(ns, na, probs).expect("softmax rows are distributions")
}

/// Saddle dual from first-order conditions: `rho~* = eta_V (I - gamma P^T)^{-1} V*`,
/// `rho*(s,a) = rho~*(s) pi*(a|s)`.
pub fn optimal_dual(mdp: &Mdp, params: &RegParams, v_star: &StateVec, pi_star: &Policy) -> Result<StateActionVec> {
    let ns = mdp.n_states();
    let (p, _) = mdp.policy_kernel(pi_star);
    let mut transposed = vec![0.0; ns * ns];
    for i in 0..ns {
        for j in 0..ns {
            transposed[j * ns + i] = p[i * ns + j];
        }
    }
    let rhs: Vec<f64> = v_star.0.iter().map(|v| params.eta_v * v).collect();
    let marg = mdp.solve_policy_system(&transposed, &rhs)?;
    let na = mdp.n_actions();
    let mut values = Vec::with_capacity(ns * na);
    for (s, m) in marg.iter().enumerate() {
        values.extend(pi_star.row(s).iter().map(|p| m * p));
    }
    StateActionVec::new(ns, na, values)
}

/// Unregularized optimal value and its greedy policy (ties to the lowest action).
pub fn solve_unregularized(mdp: &Mdp, tol: f64) -> Result<(StateVec, Policy)> {
    let v = fixed_point(mdp, tol, |v| bellman_opt(mdp, v))?;
    Ok((v.clone(), greedy_policy(mdp, &v)))
}

pub fn greedy_policy(mdp: &Mdp, v: &StateVec) -> Policy {
    let g = mdp.gamma();
    let actions: Vec<usize> = (0..mdp.n_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions() {
                let q = mdp.reward(s, a) + g * mdp.expected_next(s, a, v.as_slice());
                if q > best_q {
                    best_q = q;
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(mdp.n_actions(), &actions)
}

/// Regularized value of a fixed policy: the fixed point of
/// `V = r^pi + eta_rho H(pi) + gamma P^pi V`.
pub fn policy_value_regularized(mdp: &Mdp, eta_rho: f64, pi: &Policy) -> Result<StateVec> {
    let (p, r) = mdp.policy_kernel(pi);
    let rhs: Vec<f64> = r
        .iter()
        .zip(pi.entropies())
        .map(|(r, h)| r + eta_rho * h)
        .collect();
    Ok(StateVec(mdp.solve_policy_system(&p, &rhs)?))
}

/// `(|grad_V L|_inf, |grad_rho L|_inf)`
pub fn saddle_residual(mdp: &Mdp, params: &RegParams, v: &StateVec, rho: &StateActionVec) -> Result<(f64, f64)> {
    let gr = grad_rho(mdp, params, v, rho)?;
    let gv = grad_v(mdp, params, v, rho);
    Ok((norm_inf(gv.as_slice()), norm_inf(gr.as_slice())))
}

/// Runs every exact solver and records the residuals.
pub fn solve_oracle(mdp: &Mdp, params: &RegParams, tol: f64) -> Result<OracleSolution> {
    let v_star = solve_regularized(mdp, params.eta_rho, tol)?;
    let pi_star = boltzmann_policy(mdp, params.eta_rho, &v_star);
    let rho_star = optimal_dual(mdp, params, &v_star, &pi_star)?;
    rho_star.check_positive()?;
    let (v_star_ur, pi_star_ur) = solve_unregularized(mdp, tol)?;
    let (grad_v_inf, grad_rho_inf) = saddle_residual(mdp, params, &v_star, &rho_star)?;
    let fp = dist_inf(soft_bellman_opt(mdp, params.eta_rho, &v_star).as_slice(), v_star.as_slice());
    let fp_ur = dist_inf(bellman_opt(mdp, &v_star_ur).as_slice(), v_star_ur.as_slice());
    Ok(OracleSolution {
        v_star,
        pi_star,
        rho_star,
        v_star_ur,
        pi_star_ur,
        residuals: Residuals {
            fixed_point: fp,
            grad_v_inf,
            grad_rho_inf,
            unregularized_fixed_point: fp_ur,
        },
    })
}
