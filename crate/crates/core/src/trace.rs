//! Checkpoint grids and CSV trace rows.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Iterations at which metrics are recorded. Iteration 0 (the initial
/// point) is always recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Checkpoints {
    Stride(u64),
    List(Vec<u64>),
}

impl Checkpoints {
    /// `per_decade` log-spaced points from 1 to `k_max`, plus `k_max`.
    pub fn log_grid(k_max: u64, per_decade: u32) -> Self {
        let mut ks = vec![];
        if k_max > 0 {
            let decades = (k_max as f64).log10();
            let n = (decades * per_decade as f64).ceil() as u32;
            for i in 0..=n {
                let k = 10f64.powf(i as f64 / per_decade as f64).round() as u64;
                if k <= k_max && ks.last() != Some(&k) {
                    ks.push(k);
                }
            }
            if ks.last() != Some(&k_max) {
                ks.push(k_max);
            }
        }
        Checkpoints::List(ks)
    }

    pub fn contains(&self, k: u64) -> bool {
        match self {
            _ if k == 0 => true,
            Checkpoints::Stride(n) => *n > 0 && k.is_multiple_of(*n),
            Checkpoints::List(ks) => ks.binary_search(&k).is_ok(),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Checkpoints::Stride(n) => *n > 0,
            Checkpoints::List(ks) => ks.windows(2).all(|w| w[0] < w[1]),
        }
    }
}

impl Default for Checkpoints {
    fn default() -> Self {
        Checkpoints::Stride(1000)
    }
}

/// One checkpoint of the synchronous solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRow {
    pub k: u64,
    pub v_err_l2: Option<f64>,
    pub rho_err_l2: Option<f64>,
    pub grad_v_inf: f64,
    pub grad_rho_inf: f64,
    pub lagrangian: f64,
}

/// One checkpoint of the asynchronous solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncRow {
    pub seed: u64,
    pub k: u64,
    /// rRMSE of the primal iterate against `V*_r`.
    pub rrmse_v_reg: f64,
    /// rRMSE of the regularized value of `pi_rho_k` against `V*_r`.
    pub rrmse_dualpolicy_reg: f64,
    /// rRMSE of the unregularized value of `pi_rho_k` against `V*_ur`.
    pub rrmse_v_unreg: f64,
    /// Regularized value of `pi_rho_k` at the start state.
    pub value_start_dualpolicy: f64,
    pub kl_to_optimal: f64,
    pub min_visits: u64,
    /// `|V_k - lambda(rho_k)|_2`
    pub tracking_err: f64,
    pub rho_err_l2: f64,
    /// Unregularized value of `pi_rho_k` at the start state.
    pub value_start_dualpolicy_unreg: f64,
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv<T: DeserializeOwned>(input: impl Read) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn read_csv_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_grid_shape() {
        let Checkpoints::List(ks) = Checkpoints::log_grid(100_000, 4) else { panic!() };
        assert_eq!(ks.first(), Some(&1));
        assert_eq!(ks.last(), Some(&100_000));
        assert!(ks.contains(&1000) && ks.contains(&10_000));
        assert!(Checkpoints::List(ks).is_valid());
    }

    #[test]
    fn stride_contains() {
        let c = Checkpoints::Stride(10);
        assert!(c.contains(0) && c.contains(20) && !c.contains(25));
    }

    #[test]
    fn sync_row_header() {
        let mut buf = Vec::new();
        let row = SyncRow {
            k: 0,
            v_err_l2: None,
            rho_err_l2: Some(1.5),
            grad_v_inf: 0.0,
            grad_rho_inf: 1.0,
            lagrangian: -2.0,
        };
        write_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,v_err_l2,rho_err_l2,grad_v_inf,grad_rho_inf,lagrangian\n"));
        assert_eq!(read_csv::<SyncRow>(&buf[..]).unwrap(), vec![row]);
    }

    proptest! {
        #[test]
        fn async_rows_round_trip(vals in proptest::collection::vec(-1e12f64..1e12, 9), k in 0u64..u64::MAX / 2, seed: u64) {
            let row = AsyncRow {
                seed,
                k,
                rrmse_v_reg: vals[0],
                rrmse_dualpolicy_reg: vals[1],
                rrmse_v_unreg: vals[2],
                value_start_dualpolicy: vals[3],
                kl_to_optimal: vals[4],
                min_visits: k / 3,
                tracking_err: vals[5],
                rho_err_l2: vals[6],
                value_start_dualpolicy_unreg: vals[7] * vals[8],
            };
            let mut buf = Vec::new();
            write_csv(&[row.clone(), row.clone()], &mut buf).unwrap();
            let back: Vec<AsyncRow> = read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back, vec![row.clone(), row]);
        }
    }
}
