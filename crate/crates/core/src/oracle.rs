//! Discretized reference market solved by proportional response dynamics.
//!
//! `[0, 1]` is cut into `m` equal cells, each an item worth `v_i(cell)` to
//! buyer `i`. Bids follow `b_ij ← B_i v_ij x_ij / u_i`; in quasilinear mode
//! the denominator is `max(u_i, B_i)` and unspent budget is kept.

use serde::{Deserialize, Serialize};

use crate::envelope::gap_constant;
use crate::error::{Error, Result};
use crate::market::{Interval, MarketInstance, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub cells: usize,
    pub max_rounds: usize,
    pub gap_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cells: 2000,
            max_rounds: 200_000,
            gap_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub beta: Vec<f64>,
    pub utilities: Vec<f64>,
    pub prices: Vec<f64>,
    pub gap: f64,
    pub rounds: usize,
}

/// Item values `v_ij` of the discretized market, row per buyer.
pub fn cell_values(inst: &MarketInstance, m: usize) -> Vec<Vec<f64>> {
    (0..inst.n())
        .map(|i| {
            (0..m)
                .map(|j| inst.value(i, Interval::new(j as f64 / m as f64, (j + 1) as f64 / m as f64)))
                .collect()
        })
        .collect()
}

/// Dual value of the finite market minus the primal value of the current allocation.
fn finite_gap(budgets: &[f64], values: &[Vec<f64>], beta: &[f64], won: &[f64], mode: Mode) -> f64 {
    let n = budgets.len();
    let m = values[0].len();
    let env: f64 = (0..m)
        .map(|j| (0..n).map(|i| beta[i] * values[i][j]).fold(0.0, f64::max))
        .sum();
    let mut psi = env;
    let mut primal = 0.0;
    for i in 0..n {
        let delta = match mode {
            Mode::Linear => 0.0,
            Mode::Quasilinear => (budgets[i] - won[i]).max(0.0),
        };
        psi -= budgets[i] * beta[i].ln();
        primal += budgets[i] * (won[i] + delta).ln() - delta;
    }
    psi - primal - gap_constant(budgets)
}

/// Runs proportional response on `cfg.cells` equal cells until the duality
/// gap of the discretized market drops below `cfg.gap_tol`.
pub fn discretized_oracle(inst: &MarketInstance, cfg: &OracleConfig) -> Result<OracleResult> {
    let n = inst.n();
    let m = cfg.cells.max(1);
    let b = inst.budgets();
    let mode = inst.mode();
    let values = cell_values(inst, m);

    let mut bids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let total: f64 = values[i].iter().sum();
            values[i].iter().map(|v| b[i] * v / total).collect()
        })
        .collect();
    let mut prices = vec![0.0; m];
    let mut won = vec![0.0; n];
    let mut beta = vec![1.0; n];
    let mut gap = f64::INFINITY;
    let mut rounds = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        prices.iter_mut().for_each(|p| *p = 0.0);
        for row in &bids {
            for (p, x) in prices.iter_mut().zip(row) {
                *p += x;
            }
        }
        for i in 0..n {
            won[i] = (0..m)
                .filter(|&j| prices[j] > 0.0)
                .map(|j| values[i][j] * bids[i][j] / prices[j])
                .sum();
        }
        let denom: Vec<f64> = (0..n)
            .map(|i| match mode {
                Mode::Linear => won[i],
                Mode::Quasilinear => won[i].max(b[i]),
            })
            .collect();
        for i in 0..n {
            beta[i] = b[i] / denom[i];
        }
        gap = finite_gap(b, &values, &beta, &won, mode);
        if gap <= cfg.gap_tol {
            break;
        }
        for i in 0..n {
            for j in 0..m {
                if prices[j] > 0.0 {
                    let bid = b[i] * values[i][j] * bids[i][j] / (prices[j] * denom[i]);
                    bids[i][j] = if bid < 1e-200 { 0.0 } else { bid };
                }
            }
        }
    }
    if gap > cfg.gap_tol {
        return Err(Error::OracleNotConverged { rounds, gap });
    }
    Ok(OracleResult {
        beta,
        utilities: won,
        prices,
        gap,
        rounds,
    })
}
