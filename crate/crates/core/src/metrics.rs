//! Evaluation metrics and multi-seed aggregation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::Policy;

/// Relative l2 error `|v - v_ref|_2 / |v_ref|_2` restricted to `mask`.
pub fn rrmse(v: &[f64], v_ref: &[f64], mask: &[bool]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for ((x, r), &m) in v.iter().zip(v_ref).zip(mask) {
        if m {
            num += (x - r) * (x - r);
            den += r * r;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// `sum_{s in mask, a} p*(a|s) log(p*(a|s) / p(a|s))`
pub fn kl_policy(p_star: &Policy, p: &Policy, mask: &[bool]) -> Result<f64> {
    let na = p.n_actions();
    let mut kl = 0.0;
    for (s, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for a in 0..na {
            let q = p.prob(s, a);
            if !(q > 0.0) {
                return Err(Error::NonPositiveEntry { index: s * na + a, value: q });
            }
            let ps = p_star.prob(s, a);
            if ps > 0.0 {
                kl += ps * (ps / q).ln();
            }
        }
    }
    Ok(kl.max(0.0))
}

/// Mean and `2 * SE` of one metric at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub k: u64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub two_se: f64,
    /// `false` when `n = 1` and the standard error is undefined (reported as 0).
    pub se_defined: bool,
}

/// Per-checkpoint mean and `2 * SE` (sample std / sqrt(n)) across seeds.
///
/// `traces[i]` holds one seed's `(k, values)` rows; `names` labels the value columns.
pub fn aggregate(names: &[&str], traces: &[Vec<(u64, Vec<f64>)>]) -> Result<Vec<SummaryRow>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InsufficientData("no traces to aggregate".into()))?;
    let grid: Vec<u64> = first.iter().map(|(k, _)| *k).collect();
    for (i, t) in traces.iter().enumerate() {
        let ks: Vec<u64> = t.iter().map(|(k, _)| *k).collect();
        if ks != grid {
            return Err(Error::GridMismatch(format!("trace {i} differs from trace 0")));
        }
        if let Some((k, row)) = t.iter().find(|(_, row)| row.len() != names.len()) {
            return Err(Error::GridMismatch(format!("trace {i} at k = {k} has {} columns", row.len())));
        }
    }
    let n = traces.len();
    let mut out = Vec::with_capacity(grid.len() * names.len());
    for (j, &k) in grid.iter().enumerate() {
        for (c, name) in names.iter().enumerate() {
            let xs: Vec<f64> = traces.iter().map(|t| t[j].1[c]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let (two_se, se_defined) = if n > 1 {
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
                (2.0 * (var / n as f64).sqrt(), true)
            } else {
                (0.0, false)
            };
            out.push(SummaryRow { k, metric: name.to_string(), n, mean, two_se, se_defined });
        }
    }
    Ok(out)
}
