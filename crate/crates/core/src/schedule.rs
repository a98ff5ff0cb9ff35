//! Two-timescale stepsize sequences.

use serde::{Deserialize, Serialize};

/// Global-clock schedules for the synchronous solver. Both presets satisfy
/// `sum alpha = sum beta = inf`, `sum alpha^2 + beta^2 < inf`, `beta/alpha -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyncSchedule {
    /// `alpha_k = k^{-q}`, `beta_k = 1/k`, `q` in `(1/2, 1)`.
    Power { q: f64 },
    /// `alpha_k = 1/k`, `beta_k = 1/(1 + k log k)`.
    Log,
}

impl Default for SyncSchedule {
    fn default() -> Self {
        SyncSchedule::Power { q: 0.6 }
    }
}

impl SyncSchedule {
    /// Fast (primal) stepsize; `k >= 1`.
    pub fn alpha(&self, k: u64) -> f64 {
        let k = k as f64;
        match *self {
            SyncSchedule::Power { q } => k.powf(-q),
            SyncSchedule::Log => 1.0 / k,
        }
    }

    /// Slow (dual) stepsize; `k >= 1`.
    pub fn beta(&self, k: u64) -> f64 {
        let k = k as f64;
        match *self {
            SyncSchedule::Power { .. } => 1.0 / k,
            SyncSchedule::Log => 1.0 / (1.0 + k * k.ln()),
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            SyncSchedule::Power { q } => q > 0.5 && q < 1.0,
            SyncSchedule::Log => true,
        }
    }
}

/// Local-clock schedule for the asynchronous solver, evaluated at a visit count `n >= 1`:
///
/// ```text
/// alpha(n) = alpha0 (1 + shift + n / scale)^{-alpha_exp}
/// beta(n)  = beta0  (1 + shift + n / scale)^{-beta_exp}
/// ```
///
/// `shift = 0, scale = 1` gives `alpha0 (n+1)^{-2/3}` and `beta0 / (n+1)`;
/// `shift = 9, scale = 100` is the FrozenLake preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSchedule {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha_exp: f64,
    pub beta_exp: f64,
    pub k_shift: f64,
    pub k_scale: f64,
}

impl LocalSchedule {
    pub fn rate(alpha0: f64, beta0: f64) -> Self {
        Self { alpha0, beta0, alpha_exp: 2.0 / 3.0, beta_exp: 1.0, k_shift: 0.0, k_scale: 1.0 }
    }

    pub fn frozen_lake() -> Self {
        Self { alpha0: 1.0, beta0: 1.0, alpha_exp: 2.0 / 3.0, beta_exp: 1.0, k_shift: 9.0, k_scale: 100.0 }
    }

    fn clock(&self, n: u64) -> f64 {
        1.0 + self.k_shift + n as f64 / self.k_scale
    }

    pub fn alpha(&self, n: u64) -> f64 {
        self.alpha0 * self.clock(n).powf(-self.alpha_exp)
    }

    pub fn beta(&self, n: u64) -> f64 {
        self.beta0 * self.clock(n).powf(-self.beta_exp)
    }

    /// Monotone, square-summable and `beta/alpha -> 0`.
    pub fn is_valid(&self) -> bool {
        self.alpha0 > 0.0
            && self.beta0 > 0.0
            && self.alpha_exp > 0.5
            && self.beta_exp <= 1.0
            && self.beta_exp > self.alpha_exp
            && self.k_scale > 0.0
            && self.k_shift >= 0.0
    }
}

impl Default for LocalSchedule {
    fn default() -> Self {
        Self::frozen_lake()
    }
}

/// Linear exploration schedule `eps_k = eps0 + (eps_end - eps0) k / K`, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub eps_end: f64,
}

impl EpsilonSchedule {
    pub fn at(&self, k: u64, k_max: u64) -> f64 {
        let t = if k_max == 0 { 1.0 } else { (k as f64 / k_max as f64).min(1.0) };
        (self.eps0 + (self.eps_end - self.eps0) * t).clamp(0.0, 1.0)
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { eps0: 1.0, eps_end: 0.1 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_vanishing_ratio() {
        for s in [SyncSchedule::Power { q: 0.6 }, SyncSchedule::Log] {
            assert!(s.is_valid());
            let mut prev = f64::INFINITY;
            for k in (2..1_000_000u64).step_by(997) {
                let r = s.beta(k) / s.alpha(k);
                assert!(r <= prev);
                prev = r;
            }
            assert!(prev < 0.1);
        }
        assert!(!SyncSchedule::Power { q: 0.5 }.is_valid());
    }

    #[test]
    fn square_sums_match_closed_forms() {
        // sum k^{-1.2} <= zeta(1.2), sum 1/k^2 <= pi^2/6
        let s = SyncSchedule::Power { q: 0.6 };
        let (mut a2, mut b2) = (0.0, 0.0);
        for k in 1..1_000_000u64 {
            a2 += s.alpha(k).powi(2);
            b2 += s.beta(k).powi(2);
        }
        assert!(a2 < 5.5916); // zeta(1.2) = 5.5916
        assert!(b2 < std::f64::consts::PI.powi(2) / 6.0);
        let s = SyncSchedule::Log;
        assert_eq!(s.beta(1), 1.0);
        assert!((s.beta(10) - 1.0 / (1.0 + 10.0 * 10f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn local_schedules() {
        let r = LocalSchedule::rate(2.0, 3.0);
        assert!(r.is_valid());
        assert!((r.alpha(7) - 2.0 * 8f64.powf(-2.0 / 3.0)).abs() < 1e-15);
        assert!((r.beta(7) - 3.0 / 8.0).abs() < 1e-15);
        let f = LocalSchedule::frozen_lake();
        assert!((f.alpha(100) - 11f64.powf(-2.0 / 3.0)).abs() < 1e-15);
        assert!((f.beta(1000) - 1.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn epsilon_is_linear_and_clamped() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.at(0, 100), 1.0);
        assert!((e.at(50, 100) - 0.55).abs() < 1e-15);
        assert!((e.at(100, 100) - 0.1).abs() < 1e-15);
        assert!((e.at(500, 100) - 0.1).abs() < 1e-15);
    }
}
