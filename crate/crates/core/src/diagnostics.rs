//! Empirical checks of the finite-time theory: stationary laws and the
//! visitation floor, curvature of the reduced objective, replay-buffer bias,
//! tracking error, log-log rate fits and mixing coefficients.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::{best_response, best_response_lipschitz, BoxH, RegParams};
use crate::linalg::dist2;
use crate::mdp::{Mdp, Policy, RngStream, StateActionVec, StateVec};
use crate::replay::ReplayBuffer;

/// Closed-form and estimated constants of the finite-time analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Estimated uniform floor of the stationary state-action law over `H`.
    /// Probing only ever finds an upper bound on the true infimum.
    pub p_star_hat: f64,
    /// Strong-concavity modulus of the reduced objective on `H`. Underflows
    /// to 0 when `C^L` does.
    pub mu_opt: f64,
    /// The same modulus with `C^L` replaced by the runtime lower edge.
    pub mu_opt_runtime: f64,
    pub lambda_lipschitz: f64,
    /// `log(2 / C^L)`, the log of the gradient Lipschitz constant of the entropy term.
    pub log_grad_g_lipschitz: f64,
    /// `eta_V p_star |A|`
    pub eta_v_tilde: f64,
}

fn check_chain(p: &[f64], n: usize) -> Result<()> {
    // forward and backward reachability from state 0
    for backward in [false, true] {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if backward { p[j * n + i] } else { p[i * n + j] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(bad) = seen.iter().position(|&x| !x) {
            return Err(Error::Reducible(bad));
        }
    }
    Ok(())
}

fn strictly_positive(pi: &Policy) -> Result<()> {
    match pi.as_slice().iter().position(|&p| !(p > 0.0)) {
        Some(i) => Err(Error::NonPositiveEntry { index: i, value: pi.as_slice()[i] }),
        None => Ok(()),
    }
}

fn lift(mu_state: &[f64], pi: &Policy) -> StateActionVec {
    let na = pi.n_actions();
    let values = (0..mu_state.len() * na).map(|i| mu_state[i / na] * pi.prob(i / na, i % na)).collect();
    StateActionVec::new(mu_state.len(), na, values).expect("shape matches by construction")
}

/// `|mu P - mu|_1` for the state chain `P` (row-major `n x n`).
pub fn stationarity_residual(p: &[f64], mu: &[f64]) -> f64 {
    let n = mu.len();
    (0..n)
        .map(|j| ((0..n).map(|i| mu[i] * p[i * n + j]).sum::<f64>() - mu[j]).abs())
        .sum()
}

/// Stationary law of the state-action chain `(s,a) -> (s', a')` with
/// `s' ~ P(.|s,a)`, `a' ~ pi(.|s')`.
///
/// The state marginal comes from Grassmann-Taksar-Heyman elimination, which
/// involves no subtractions and so keeps tiny stationary probabilities
/// accurate even for nearly reducible chains; the state-action law is
/// `mu(s) pi(a|s)`.
pub fn stationary_distribution(mdp: &Mdp, pi: &Policy, tol: f64) -> Result<StateActionVec> {
    strictly_positive(pi)?;
    let n = mdp.n_states();
    let (p, _) = mdp.policy_kernel(pi);
    check_chain(&p, n)?;
    let mu = gth(&p, n)?;
    let residual = stationarity_residual(&p, &mu);
    if residual > tol {
        return Err(Error::MaxIterExceeded { iterations: 1, residual });
    }
    Ok(lift(&mu, pi))
}

fn gth(p: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = p.to_vec();
    for k in (1..n).rev() {
        let out: f64 = (0..k).map(|j| a[k * n + j]).sum();
        if !(out > 0.0) {
            return Err(Error::Reducible(k));
        }
        for i in 0..k {
            a[i * n + k] /= out;
        }
        for i in 0..k {
            let w = a[i * n + k];
            if w != 0.0 {
                for j in 0..k {
                    a[i * n + j] += w * a[k * n + j];
                }
            }
        }
    }
    let mut mu = vec![0.0; n];
    mu[0] = 1.0;
    for k in 1..n {
        mu[k] = (0..k).map(|i| mu[i] * a[i * n + k]).sum();
    }
    let z: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= z);
    Ok(mu)
}

/// Power iteration on the lazy chain `(I + P^pi) / 2` from `start` (a state
/// law), used to cross-check the direct solve.
pub fn stationary_distribution_power(
    mdp: &Mdp,
    pi: &Policy,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<StateActionVec> {
    strictly_positive(pi)?;
    let n = mdp.n_states();
    let (p, _) = mdp.policy_kernel(pi);
    check_chain(&p, n)?;
    let mut mu = start.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next: Vec<f64> = (0..n)
            .map(|j| 0.5 * mu[j] + 0.5 * (0..n).map(|i| mu[i] * p[i * n + j]).sum::<f64>())
            .collect();
        mu = next;
        residual = stationarity_residual(&p, &mu);
        if residual <= tol {
            return Ok(lift(&mu, pi));
        }
    }
    Err(Error::MaxIterExceeded { iterations: max_iter, residual })
}

/// Largest `|S||A|` for which every vertex of the box is probed.
pub const EXHAUSTIVE_VERTEX_PAIRS: usize = 12;

/// Minimum stationary state-action probability over dual-induced policies
/// `pi_rho`, probed at the vertices of `[low, high]^{S x A}` (all of them when
/// `|S||A| <= 12`, otherwise `n_probes` random ones), `n_probes` random
/// interior points, and the uniform policy.
pub fn p_star_estimate(mdp: &Mdp, low: f64, high: f64, n_probes: usize, rng: &mut RngStream) -> Result<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut best = f64::INFINITY;
    let mut probe = |rho: StateActionVec| -> Result<()> {
        let pi = Policy::from_dual(&rho)?;
        let mu = stationary_distribution(mdp, &pi, 1e-8)?;
        best = best.min(mu.as_slice().iter().copied().fold(f64::INFINITY, f64::min));
        Ok(())
    };
    let n = ns * na;
    probe(StateActionVec::filled(ns, na, high))?;
    if n <= EXHAUSTIVE_VERTEX_PAIRS {
        for mask in 0..1u32 << n {
            let vertex = (0..n).map(|i| if mask >> i & 1 == 1 { high } else { low }).collect();
            probe(StateActionVec::new(ns, na, vertex)?)?;
        }
    }
    for _ in 0..n_probes {
        if n > EXHAUSTIVE_VERTEX_PAIRS {
            let vertex = (0..n).map(|_| if rng.uniform() < 0.5 { low } else { high }).collect();
            probe(StateActionVec::new(ns, na, vertex)?)?;
        }
        let interior = (0..ns * na).map(|_| low + (high - low) * rng.uniform()).collect();
        probe(StateActionVec::new(ns, na, interior)?)?;
    }
    Ok(best)
}

/// Strong-concavity modulus of the reduced objective on `[c_low, c_high]^{S x A}`:
///
/// ```text
/// mu_opt = (1/4) [(A + B + C) - sqrt((A + B + C)^2 - 4 A C)]
/// A = eta_rho / C^U,  B = |S||A|(1 + gamma^2) / eta_V,  C = (1 - gamma)^2 |A| (C^L)^2 / (eta_V (C^U)^2)
/// ```
///
/// evaluated as `A C / (S + sqrt(S^2 - 4 A C))` to avoid cancellation.
/// `log_c_low` is the log of the lower edge (pass `box.log_c_low` for the
/// exact modulus or `floor.ln()` for the runtime one).
pub fn mu_opt(mdp: &Mdp, params: &RegParams, c_high: f64, log_c_low: f64) -> f64 {
    let g = mdp.gamma();
    let na = mdp.n_actions() as f64;
    let a = params.eta_rho / c_high;
    let b = mdp.n_pairs() as f64 * (1.0 + g * g) / params.eta_v;
    let log_c = 2.0 * (1.0 - g).ln() + na.ln() + 2.0 * log_c_low - params.eta_v.ln() - 2.0 * c_high.ln();
    let c = log_c.exp();
    let s = a + b + c;
    let ac = (a.ln() + log_c).exp();
    ac / (s + (s * s - 4.0 * ac).max(0.0).sqrt())
}

/// Constants of the finite-time analysis for one instance.
pub fn theory_constants(
    mdp: &Mdp,
    params: &RegParams,
    dual_box: &BoxH,
    floor: f64,
    n_probes: usize,
    seed: u64,
) -> Result<TheoryConstants> {
    let (low, high) = dual_box.runtime(floor);
    let mut rng = RngStream::new(seed);
    let p_star_hat = p_star_estimate(mdp, low, high, n_probes, &mut rng)?;
    Ok(TheoryConstants {
        p_star_hat,
        mu_opt: mu_opt(mdp, params, dual_box.c_high, dual_box.log_c_low),
        mu_opt_runtime: mu_opt(mdp, params, high, low.ln()),
        lambda_lipschitz: best_response_lipschitz(mdp, params),
        log_grad_g_lipschitz: 2f64.ln() - dual_box.log_c_low,
        eta_v_tilde: params.eta_v * p_star_hat * mdp.n_actions() as f64,
    })
}

/// Outcome of the `(p_star / 2) k` visitation-floor check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorReport {
    pub p_star: f64,
    /// First checkpoint from which `min nu_k / k >= p_star / 2` holds at every
    /// later checkpoint; `None` if never attained.
    pub burn_in: Option<u64>,
    /// `(k, min nu_k / k)` per checkpoint with `k > 0`.
    pub ratios: Vec<(u64, f64)>,
}

impl FloorReport {
    pub fn attained(&self) -> bool {
        self.burn_in.is_some()
    }
}

/// `checkpoints` holds `(k, min_{s,a} nu_k(s,a))` in increasing `k`.
pub fn visitation_floor_check(checkpoints: &[(u64, u64)], p_star: f64) -> FloorReport {
    let ratios: Vec<(u64, f64)> = checkpoints
        .iter()
        .filter(|(k, _)| *k > 0)
        .map(|&(k, n)| (k, n as f64 / k as f64))
        .collect();
    let mut burn_in = None;
    for &(k, r) in ratios.iter().rev() {
        if r >= 0.5 * p_star {
            burn_in = Some(k);
        } else {
            break;
        }
    }
    FloorReport { p_star, burn_in, ratios }
}

fn bias_from_kernel(mdp: &Mdp, rho: &StateActionVec, kernel: impl Fn(usize, usize) -> Vec<f64>) -> f64 {
    let ns = mdp.n_states();
    let mut e = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..mdp.n_actions() {
            let est = kernel(s, a);
            let w = rho.get(s, a);
            for (t, (q, p)) in est.iter().zip(mdp.next_dist(s, a)).enumerate() {
                e[t] += w * (q - p);
            }
        }
    }
    mdp.gamma() * e.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `|gamma sum_{s,a} rho(s,a) (P_D(.|s,a) - P(.|s,a))|_inf` for the buffer's
/// empirical kernel `P_D`; pairs with an empty list use `P_D = 0`.
pub fn buffer_bias(mdp: &Mdp, buffer: &ReplayBuffer, rho: &StateActionVec) -> Result<f64> {
    if buffer.capacity().is_some() {
        return Err(Error::CappedBuffer);
    }
    Ok(bias_from_kernel(mdp, rho, |s, a| buffer.empirical(s, a)))
}

/// Bias of the conditional mean of the replay estimator right after the
/// transition `fresh = ((s, a), s_next)` was pushed: that pair's estimator
/// mixes the previous empirical law (weight `(nu - 1) / nu`) with the
/// true kernel (weight `1 / nu`), since the fresh sample is unbiased.
pub fn buffer_bias_cond_exp(
    mdp: &Mdp,
    buffer: &ReplayBuffer,
    rho: &StateActionVec,
    fresh: ((usize, usize), usize),
) -> Result<f64> {
    if buffer.capacity().is_some() {
        return Err(Error::CappedBuffer);
    }
    let ((fs, fa), s_next) = fresh;
    let nu = buffer.nu(fs, fa);
    if nu == 0 || buffer.list(fs, fa).back() != Some(&s_next) {
        return Err(Error::InsufficientData(format!("({fs}, {fa}) -> {s_next} is not the latest push")));
    }
    Ok(bias_from_kernel(mdp, rho, |s, a| {
        let emp = buffer.empirical(s, a);
        if (s, a) != (fs, fa) {
            return emp;
        }
        let n = nu as f64;
        let p = mdp.next_dist(s, a);
        // nu P_{D_k} = (nu - 1) P_{D_{k-1}} + e_{s_next}
        (0..emp.len())
            .map(|t| emp[t] - (t == s_next) as u8 as f64 / n + p[t] / n)
            .collect()
    }))
}

/// `|V - lambda(rho)|_2^2`
pub fn tracking_error(mdp: &Mdp, params: &RegParams, v: &StateVec, rho: &StateActionVec) -> f64 {
    dist2(v.as_slice(), best_response(mdp, params, rho).as_slice()).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fewest checkpoints [`rate_fit`] accepts inside its window.
pub const MIN_RATE_POINTS: usize = 5;

/// Least-squares fit of `log(y) = slope log(k) + intercept` over points with
/// `k` in `[k_lo, k_hi]`. Needs at least [`MIN_RATE_POINTS`] of them.
pub fn rate_fit(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    rate_fit_min(points, window, MIN_RATE_POINTS)
}

/// [`rate_fit`] with an explicit minimum point count (at least 2), for
/// sparse grids such as one checkpoint per decade.
pub fn rate_fit_min(points: &[(f64, f64)], window: (f64, f64), min_points: usize) -> Result<RateFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, _)| *k >= window.0 && *k <= window.1)
        .map(|&(k, y)| {
            if k > 0.0 && y > 0.0 {
                Ok((k.ln(), y.ln()))
            } else {
                Err(Error::InsufficientData(format!("non-positive point ({k}, {y})")))
            }
        })
        .collect::<Result<_>>()?;
    if logs.len() < min_points.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} points in window, need {}",
            logs.len(),
            min_points.max(2)
        )));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all points share one k".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit { slope, intercept: my - slope * mx, r2 })
}

/// Dobrushin coefficient `max_{x,y} TV(Q(x,.), Q(y,.))` of a row-stochastic `n x n` matrix.
pub fn dobrushin(q: &[f64], n: usize) -> Result<f64> {
    if q.len() != n * n {
        return Err(Error::Shape(format!("expected {} entries, got {}", n * n, q.len())));
    }
    for i in 0..n {
        let row = &q[i * n..(i + 1) * n];
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotStochastic(format!("row {i} sums to {sum}")));
        }
    }
    let mut best = 0.0f64;
    for x in 0..n {
        for y in x + 1..n {
            let tv: f64 = (0..n).map(|j| (q[x * n + j] - q[y * n + j]).abs()).sum::<f64>() / 2.0;
            best = best.max(tv);
        }
    }
    Ok(best.min(1.0))
}
