//! The double-regularized Lagrangian
//!
//! ```text
//! L(V, rho) = (eta_V / 2) |V|^2 + sum_{s,a} rho(s,a) (Delta[V](s,a) - eta_rho log(rho(s,a) / rho~(s)))
//! ```
//!
//! with its exact gradients, best response, reduced objective and the
//! constant boxes that confine the primal and dual iterates.

use crate::error::{Error, Result};
use crate::mdp::{Mdp, StateActionVec, StateVec};

/// Lower edge applied to dual iterates when the theoretical `C^L` underflows.
pub const NUMERIC_FLOOR: f64 = 1e-12;

/// Regularization weights and the entropy bounds `L_G = 0`, `U_G = log|A|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub eta_v: f64,
    pub eta_rho: f64,
    pub u_g: f64,
    pub l_g: f64,
}

impl RegParams {
    pub fn new(eta_v: f64, eta_rho: f64, n_actions: usize) -> Result<Self> {
        if !(eta_v > 0.0 && eta_v.is_finite()) || !(eta_rho > 0.0 && eta_rho.is_finite()) {
            return Err(Error::Config(format!(
                "regularization weights must be positive (eta_v = {eta_v}, eta_rho = {eta_rho})"
            )));
        }
        if n_actions == 0 {
            return Err(Error::Shape("n_actions must be positive".into()));
        }
        Ok(Self { eta_v, eta_rho, u_g: (n_actions as f64).ln(), l_g: 0.0 })
    }

    pub fn for_mdp(mdp: &Mdp, eta_v: f64, eta_rho: f64) -> Result<Self> {
        Self::new(eta_v, eta_rho, mdp.n_actions())
    }
}

/// The dual box `H = [C^L, C^U]^{S x A}`.
///
/// `C^L` is typically far below the smallest positive double on reward-scale
/// instances; `log_c_low` keeps the exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxH {
    pub c_low: f64,
    pub c_high: f64,
    pub log_c_low: f64,
    /// Lower bound on every entry of the optimal regularized policy.
    pub log_policy_floor: f64,
    /// Lower bound on every state marginal of the optimal dual variable.
    pub log_marginal_floor: f64,
}

impl BoxH {
    /// Lower edge used by the projected iterations: `max(C^L, floor)`.
    pub fn runtime_low(&self, floor: f64) -> f64 {
        self.c_low.max(floor)
    }

    /// `(low, high)` of the projection actually applied at runtime.
    pub fn runtime(&self, floor: f64) -> (f64, f64) {
        (self.runtime_low(floor), self.c_high)
    }

    /// `log C^L < log x` without leaving log space.
    pub fn strictly_above_low(&self, x: f64) -> bool {
        x > 0.0 && x.ln() > self.log_c_low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.c_low + self.c_high)
    }
}

/// The primal box `[0, v_max]^S`, `v_max = (C_r + eta_rho U_G) / (1 - gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalBox {
    pub v_max: f64,
}

/// `Delta[V](s,a) = -V(s) + r(s,a) + gamma sum_s' P(s'|s,a) V(s')`
pub fn bellman_error(mdp: &Mdp, v: &StateVec) -> StateActionVec {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            out.push(-v[s] + mdp.reward(s, a) + g * mdp.expected_next(s, a, v.as_slice()));
        }
    }
    StateActionVec::new(ns, na, out).expect("shape matches mdp")
}

/// `g(rho) = -sum rho(s,a) log(rho(s,a) / rho~(s))`
pub fn conditional_entropy(rho: &StateActionVec) -> Result<f64> {
    rho.check_positive()?;
    let marg = rho.marginal();
    let mut g = 0.0;
    for s in 0..rho.n_states() {
        for &x in rho.row(s) {
            g -= x * (x / marg[s]).ln();
        }
    }
    Ok(g)
}

pub fn lagrangian_value(mdp: &Mdp, params: &RegParams, v: &StateVec, rho: &StateActionVec) -> Result<f64> {
    let grad = grad_rho(mdp, params, v, rho)?;
    let quad = 0.5 * params.eta_v * v.0.iter().map(|x| x * x).sum::<f64>();
    let linear: f64 = rho.as_slice().iter().zip(grad.as_slice()).map(|(r, d)| r * d).sum();
    Ok(quad + linear)
}

/// `sum_{s,a} rho(s,a) P(.|s,a)`: the discounted-free inflow into each state.
pub fn inflow(mdp: &Mdp, rho: &StateActionVec) -> StateVec {
    let ns = mdp.n_states();
    let mut out = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..mdp.n_actions() {
            let w = rho.get(s, a);
            for (o, p) in out.iter_mut().zip(mdp.next_dist(s, a)) {
                *o += w * p;
            }
        }
    }
    StateVec(out)
}

/// `grad_V L(s') = eta_V V(s') - rho~(s') + gamma sum rho(s,a) P(s'|s,a)`
pub fn grad_v(mdp: &Mdp, params: &RegParams, v: &StateVec, rho: &StateActionVec) -> StateVec {
    let marg = rho.marginal();
    let inc = inflow(mdp, rho);
    let g = mdp.gamma();
    StateVec(
        (0..mdp.n_states())
            .map(|s| params.eta_v * v[s] - marg[s] + g * inc[s])
            .collect(),
    )
}

/// `grad_rho L(s,a) = Delta[V](s,a) - eta_rho log(rho(s,a) / rho~(s))`
///
/// This is the full derivative of `L` in `rho`: the `-1` from
/// differentiating `x log x` cancels against the `rho~` dependence.
pub fn grad_rho(mdp: &Mdp, params: &RegParams, v: &StateVec, rho: &StateActionVec) -> Result<StateActionVec> {
    rho.check_positive()?;
    let mut delta = bellman_error(mdp, v);
    let marg = rho.marginal();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            *delta.get_mut(s, a) -= params.eta_rho * (rho.get(s, a) / marg[s]).ln();
        }
    }
    Ok(delta)
}

/// Closed-form `C^L` and `C^U`.
pub fn dual_box(mdp: &Mdp, params: &RegParams) -> BoxH {
    let ns = mdp.n_states() as f64;
    let na = mdp.n_actions() as f64;
    let g = mdp.gamma();
    let c_r = mdp.c_r();
    let (eta_v, eta_rho, u_g) = (params.eta_v, params.eta_rho, params.u_g);

    let c_max = ns * eta_v * (c_r + eta_rho * u_g) / ((1.0 - g) * (1.0 - g));
    let c_high = 2.0 * c_max;

    let log_c1 = -na.ln() - (2.0 * c_r / eta_rho + (1.0 + g) * u_g) / (1.0 - g);

    let delta_bar = (2.0 * c_r + (1.0 + g) * eta_rho * u_g) / (1.0 - g);
    let k1 = na - 1.0;
    // x = K1 K2(delta_bar); C^L_2 = eta_V x (eta_rho ln(1+x)/x + delta_bar/(1+x))
    let log_x = k1.ln() - delta_bar / eta_rho;
    let x = log_x.exp();
    let ratio = if x > 0.0 { x.ln_1p() / x } else { 1.0 };
    let log_c2 = eta_v.ln() + log_x + (eta_rho * ratio + delta_bar / (1.0 + x)).ln();

    let log_c_low = 0.5f64.ln() + log_c1 + log_c2;
    BoxH {
        c_low: log_c_low.exp(),
        c_high,
        log_c_low,
        log_policy_floor: log_c1,
        log_marginal_floor: log_c2,
    }
}

pub fn primal_box(mdp: &Mdp, params: &RegParams) -> PrimalBox {
    PrimalBox { v_max: (mdp.c_r() + params.eta_rho * params.u_g) / (1.0 - mdp.gamma()) }
}

/// Euclidean projection onto `[low, high]^n` (componentwise clamp).
pub fn project_box(x: &[f64], low: f64, high: f64) -> Result<Vec<f64>> {
    if !(low <= high) {
        return Err(Error::InvalidBox { low, high });
    }
    Ok(x.iter().map(|v| v.clamp(low, high)).collect())
}

/// `lambda(rho) = (rho~ - gamma sum rho P) / eta_V`, the unique zero of `grad_v`.
pub fn best_response(mdp: &Mdp, params: &RegParams, rho: &StateActionVec) -> StateVec {
    let marg = rho.marginal();
    let inc = inflow(mdp, rho);
    let g = mdp.gamma();
    StateVec(
        (0..mdp.n_states())
            .map(|s| (marg[s] - g * inc[s]) / params.eta_v)
            .collect(),
    )
}

/// Global Lipschitz constant of the best-response map in the l2 norm.
pub fn best_response_lipschitz(mdp: &Mdp, params: &RegParams) -> f64 {
    let g = mdp.gamma();
    ((mdp.n_pairs() as f64) * (1.0 + g * g)).sqrt() / params.eta_v
}

/// `f(rho) = min_V L(V, rho) = L(lambda(rho), rho)`
pub fn reduced_objective(mdp: &Mdp, params: &RegParams, rho: &StateActionVec) -> Result<f64> {
    let v = best_response(mdp, params, rho);
    lagrangian_value(mdp, params, &v, rho)
}

/// `grad f(rho) = grad_rho L(lambda(rho), rho)` (envelope theorem).
pub fn reduced_gradient(mdp: &Mdp, params: &RegParams, rho: &StateActionVec) -> Result<StateActionVec> {
    let v = best_response(mdp, params, rho);
    grad_rho(mdp, params, &v, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{frozen_lake_4x4, random_mdp, MdpSpec, RngStream};

    fn one_state(reward: Vec<f64>, gamma: f64) -> Mdp {
        let na = reward.len();
        MdpSpec {
            n_states: 1,
            n_actions: na,
            gamma,
            mu: vec![1.0],
            reward: vec![reward],
            transition: vec![vec![vec![1.0]; na]],
            terminal_loopback: vec![],
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn bellman_error_cases() {
        let m = one_state(vec![2.0], 0.5);
        let d = bellman_error(&m, &StateVec(vec![1.0]));
        assert!((d.get(0, 0) - 1.5).abs() < 1e-15);

        let m = frozen_lake_4x4(true, 0.9).validate().unwrap();
        let d = bellman_error(&m, &StateVec::zeros(16));
        assert_eq!(d.as_slice(), m.rewards());
    }

    #[test]
    fn entropy_values() {
        let rho = StateActionVec::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!((conditional_entropy(&rho).unwrap() - 2f64.ln()).abs() < 1e-15);

        let rho = StateActionVec::new(1, 2, vec![0.2, 0.6]).unwrap();
        let direct = -0.2 * 0.25f64.ln() - 0.6 * 0.75f64.ln();
        assert!((conditional_entropy(&rho).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.449868).abs() < 1e-6);

        let rho = StateActionVec::new(2, 2, vec![1.0, 1e-300, 1e-300, 3.0]).unwrap();
        assert!(conditional_entropy(&rho).unwrap() < 1e-296);

        let rho = StateActionVec::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(conditional_entropy(&rho), Err(Error::NonPositiveEntry { .. })));
    }

    #[test]
    fn lagrangian_entropy_only_and_homogeneity() {
        let m = one_state(vec![0.0; 3], 0.7);
        let p = RegParams::for_mdp(&m, 0.1, 0.3).unwrap();
        let v = StateVec::zeros(1);
        let rho = StateActionVec::filled(1, 3, 1.0 / 3.0);
        let l = lagrangian_value(&m, &p, &v, &rho).unwrap();
        assert!((l - 0.3 * 3f64.ln()).abs() < 1e-15);

        let rho = StateActionVec::new(1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        let l1 = lagrangian_value(&m, &p, &v, &rho).unwrap();
        let l2 = lagrangian_value(&m, &p, &v, &rho.scaled(2.0)).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);
    }

    #[test]
    fn grad_v_zero_cases() {
        let mut rng = RngStream::new(5);
        let m = random_mdp(4, 3, 0.8, 0.0, &mut rng).validate().unwrap();
        let p = RegParams::for_mdp(&m, 0.2, 0.1).unwrap();
        let rho = StateActionVec::new(4, 3, (0..12).map(|_| 0.1 + rng.uniform()).collect()).unwrap();
        let v = best_response(&m, &p, &rho);
        assert!(grad_v(&m, &p, &v, &rho).0.iter().all(|g| g.abs() < 1e-12));

        // gamma = 0: grad is eta_V V - rho~ regardless of dynamics
        let m0 = one_state(vec![0.3, 0.1], 0.5);
        let m0 = m0.with_gamma(1e-300).unwrap();
        let rho = StateActionVec::new(1, 2, vec![0.2, 0.3]).unwrap();
        let v = StateVec(vec![0.5 / 0.2]);
        let p = RegParams::for_mdp(&m0, 0.2, 0.1).unwrap();
        assert!(grad_v(&m0, &p, &v, &rho)[0].abs() < 1e-15);
    }

    #[test]
    fn grad_rho_uniform_rows() {
        let m = one_state(vec![0.0; 4], 0.5);
        let p = RegParams::for_mdp(&m, 1.0, 0.25).unwrap();
        let rho = StateActionVec::filled(1, 4, 0.7);
        let g = grad_rho(&m, &p, &StateVec::zeros(1), &rho).unwrap();
        for x in g.as_slice() {
            assert!((x - 0.25 * 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_lake_boxes() {
        let m = frozen_lake_4x4(true, 0.9).validate().unwrap();
        let p = RegParams::for_mdp(&m, 0.1, 0.1).unwrap();
        let b = dual_box(&m, &p);
        let expected = 2.0 * 16.0 * 0.1 * (100.0 + 0.1 * 4f64.ln()) / 0.01;
        assert!((b.c_high - expected).abs() < 1e-9 * expected);
        assert!((b.c_high - 3.2044e4).abs() < 1.0);
        assert_eq!(b.c_low, 0.0);
        assert!(b.log_c_low.is_finite() && b.log_c_low < -700.0);
        assert_eq!(b.runtime_low(NUMERIC_FLOOR), NUMERIC_FLOOR);

        let v = primal_box(&m, &p);
        assert!((v.v_max - (100.0 + 0.1 * 4f64.ln()) / 0.1).abs() < 1e-9);
        assert!((v.v_max - 1001.386).abs() < 1e-3);
    }

    #[test]
    fn box_limits() {
        // C_r = 0 and gamma -> 0: C^L_1 = exp(-U_G) / |A| = 1 / |A|^2
        let m = one_state(vec![0.0; 3], 0.5).with_gamma(1e-300).unwrap();
        let p = RegParams::for_mdp(&m, 1.0, 0.5).unwrap();
        let b = dual_box(&m, &p);
        assert!((b.log_policy_floor - (1.0f64 / 9.0).ln()).abs() < 1e-12);
        assert!(b.c_low > 0.0 && b.c_low < b.c_high);

        let m = one_state(vec![1.0, 0.5], 0.5);
        let p = RegParams::for_mdp(&m, 1.0, 1e-300).unwrap();
        assert!((primal_box(&m, &p).v_max - 2.0).abs() < 1e-12);
        let m = one_state(vec![0.0, 0.0], 0.5);
        let p = RegParams::for_mdp(&m, 1.0, 1e-12).unwrap();
        assert!(primal_box(&m, &p).v_max < 1e-11);
    }

    #[test]
    fn projection_basics() {
        assert_eq!(project_box(&[5.0], 1.0, 3.0).unwrap(), vec![3.0]);
        assert_eq!(project_box(&[2.0, 1.5], 1.0, 3.0).unwrap(), vec![2.0, 1.5]);
        assert!(matches!(project_box(&[0.0], 2.0, 1.0), Err(Error::InvalidBox { .. })));
    }

    #[test]
    fn projection_matches_grid_search() {
        let mut rng = RngStream::new(99);
        for _ in 0..50 {
            let low = rng.uniform() * 2.0 - 1.0;
            let high = low + rng.uniform() * 2.0;
            let x = [rng.uniform() * 6.0 - 3.0, rng.uniform() * 6.0 - 3.0];
            let y = project_box(&x, low, high).unwrap();
            let n = 400;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=n {
                    let c = [
                        low + (high - low) * i as f64 / n as f64,
                        low + (high - low) * j as f64 / n as f64,
                    ];
                    let d = (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2);
                    best = best.min(d);
                }
            }
            let dy = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
            assert!(dy <= best + 1e-12);
        }
    }

    #[test]
    fn best_response_closed_form_at_gamma_zero() {
        let m = one_state(vec![0.3, 0.1], 0.5).with_gamma(1e-300).unwrap();
        let p = RegParams::for_mdp(&m, 0.25, 0.1).unwrap();
        let rho = StateActionVec::new(1, 2, vec![0.2, 0.3]).unwrap();
        assert!((best_response(&m, &p, &rho)[0] - 0.5 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn reduced_objective_symbolic_one_state() {
        // r = 0, gamma -> 0: f(rho) = -rho~^2 / (2 eta_V) + eta_rho g(rho)
        let m = one_state(vec![0.0, 0.0], 0.5).with_gamma(1e-300).unwrap();
        let p = RegParams::for_mdp(&m, 0.4, 0.3).unwrap();
        let rho = StateActionVec::new(1, 2, vec![0.7, 1.1]).unwrap();
        let total = 1.8f64;
        let g = -0.7 * (0.7f64 / total).ln() - 1.1 * (1.1f64 / total).ln();
        let expected = -total * total / (2.0 * 0.4) + 0.3 * g;
        assert!((reduced_objective(&m, &p, &rho).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn reduced_objective_lower_bounds_lagrangian() {
        let mut rng = RngStream::new(17);
        let m = random_mdp(3, 2, 0.7, 0.0, &mut rng).validate().unwrap();
        let p = RegParams::for_mdp(&m, 0.3, 0.2).unwrap();
        let rho = StateActionVec::new(3, 2, (0..6).map(|_| 0.05 + rng.uniform()).collect()).unwrap();
        let f = reduced_objective(&m, &p, &rho).unwrap();
        for _ in 0..100 {
            let v = StateVec((0..3).map(|_| 10.0 * rng.uniform() - 5.0).collect());
            assert!(f <= lagrangian_value(&m, &p, &v, &rho).unwrap() + 1e-12);
        }
    }
}
