//! Stochastic dual averaging on `ψ(β) = E_θ max_i β_i v_i(θ) − Σ B_i log β_i`
//! with `θ ~ Unif[0, 1]`, and its mean-square-error diagnostics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::MarketInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub beta: Vec<f64>,
    /// `β̃^t = (1/t) Σ_{τ ≤ t} β^τ`.
    pub beta_avg: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sqerr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdaTrace {
    pub seed: u64,
    pub iterations: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl SdaTrace {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trace has at least one checkpoint")
    }

    /// CSV with columns `t, beta_1.., betaavg_1.., sqerr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.checkpoints.first().map_or(0, |c| c.beta.len());
        let with_err = self.checkpoints.iter().any(|c| c.sqerr.is_some());
        write!(out, "t")?;
        for i in 1..=n {
            write!(out, ",beta_{i}")?;
        }
        for i in 1..=n {
            write!(out, ",betaavg_{i}")?;
        }
        if with_err {
            write!(out, ",sqerr")?;
        }
        writeln!(out)?;
        for c in &self.checkpoints {
            write!(out, "{}", c.t)?;
            for x in c.beta.iter().chain(&c.beta_avg) {
                write!(out, ",{x}")?;
            }
            if let Some(e) = c.sqerr {
                write!(out, ",{e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Powers of two up to `t_max`, then `t_max` itself.
pub fn checkpoint_times(t_max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|&t| t <= t_max)
        .collect();
    if out.last() != Some(&t_max) && t_max > 0 {
        out.push(t_max);
    }
    out
}

/// Winner at `theta` (smallest index on ties) and its value `v_{i*}(θ)`.
pub fn stochastic_subgradient(inst: &MarketInstance, beta: &[f64], theta: f64) -> (usize, f64) {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, b) in beta.iter().enumerate() {
        let v = b * inst.density(i, theta);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    (best, inst.density(best, theta))
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs `iterations` steps from the centre of the box. With a `reference`
/// `β*` the checkpoints carry `‖β̃^t − β*‖²`.
pub fn sda_run(inst: &MarketInstance, iterations: usize, seed: u64, reference: Option<&[f64]>) -> SdaTrace {
    let n = inst.n();
    let b = inst.budgets();
    let lo = inst.beta_lower();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta: Vec<f64> = lo.iter().map(|l| 0.5 * (l + 1.0)).collect();
    let mut gbar = vec![0.0; n];
    let mut sum = vec![0.0; n];
    let times = checkpoint_times(iterations);
    let mut next = 0;
    let mut checkpoints = Vec::with_capacity(times.len());
    for t in 1..=iterations {
        for (s, x) in sum.iter_mut().zip(&beta) {
            *s += x;
        }
        if next < times.len() && times[next] == t {
            let beta_avg: Vec<f64> = sum.iter().map(|s| s / t as f64).collect();
            checkpoints.push(Checkpoint {
                t,
                beta: beta.clone(),
                sqerr: reference.map(|r| sqdist(&beta_avg, r)),
                beta_avg,
            });
            next += 1;
        }
        let theta: f64 = rng.gen();
        let (winner, value) = stochastic_subgradient(inst, &beta, theta);
        let w = 1.0 / t as f64;
        for (i, g) in gbar.iter_mut().enumerate() {
            let gi = if i == winner { value } else { 0.0 };
            *g += w * (gi - *g);
        }
        for i in 0..n {
            beta[i] = if gbar[i] > 0.0 {
                (b[i] / gbar[i]).clamp(lo[i], 1.0)
            } else {
                1.0
            };
        }
    }
    SdaTrace {
        seed,
        iterations,
        checkpoints,
    }
}

/// `(6(1 + log t) + ½(log t)²)/t · G²/σ²` with `G = max_i sup v_i` and `σ = min_i B_i`.
pub fn mse_envelope(inst: &MarketInstance, t: usize) -> f64 {
    let g = inst.max_density();
    let sigma = inst.budgets().iter().copied().fold(f64::INFINITY, f64::min);
    let lt = (t as f64).ln();
    (6.0 * (1.0 + lt) + 0.5 * lt * lt) / t as f64 * g * g / (sigma * sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub t: Vec<usize>,
    pub mse: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `‖β̃^T − β*‖` of each replication.
    pub final_errors: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl MseCurve {
    pub fn below_envelope(&self) -> bool {
        self.mse.iter().zip(&self.envelope).all(|(m, e)| m <= e)
    }
}

/// Mean of `‖β̃^t − β*‖²` over one run per seed, run in parallel.
pub fn mse_curve(inst: &MarketInstance, iterations: usize, seeds: &[u64], reference: &[f64]) -> MseCurve {
    let traces: Vec<SdaTrace> = seeds
        .par_iter()
        .map(|&s| sda_run(inst, iterations, s, Some(reference)))
        .collect();
    let t = checkpoint_times(iterations);
    let r = traces.len().max(1) as f64;
    let mse = (0..t.len())
        .map(|c| {
            traces
                .iter()
                .map(|tr| tr.checkpoints[c].sqerr.unwrap_or(0.0))
                .sum::<f64>()
                / r
        })
        .collect();
    MseCurve {
        envelope: t.iter().map(|&x| mse_envelope(inst, x)).collect(),
        final_errors: traces.iter().map(|tr| tr.last().sqerr.unwrap_or(0.0).sqrt()).collect(),
        t,
        mse,
        seeds: seeds.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve, SolveConfig};
    use crate::envelope::winning_utilities;
    use crate::fixtures;
    use crate::market::Mode;

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoint_times(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(checkpoint_times(8), vec![1, 2, 4, 8]);
        assert!(checkpoint_times(0).is_empty());
    }

    #[test]
    fn iterates_stay_in_box() {
        let inst = fixtures::piecewise_four();
        let lo = inst.beta_lower();
        for c in &sda_run(&inst, 5000, 3, None).checkpoints {
            for i in 0..4 {
                assert!(c.beta[i] >= lo[i] && c.beta[i] <= 1.0);
            }
        }
    }

    #[test]
    fn single_buyer_reaches_one() {
        let inst = MarketInstance::new(Mode::Linear, vec![1.0], &[0.0, 1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let tr = sda_run(&inst, 100, 0, Some(&[1.0]));
        assert_eq!(tr.last().beta, vec![1.0]);
        assert!(tr.last().sqerr.unwrap() < 1e-3);
    }

    #[test]
    fn same_seed_same_trace() {
        let inst = fixtures::linear_four();
        let a = sda_run(&inst, 3000, 42, None);
        let b = sda_run(&inst, 3000, 42, None);
        let c = sda_run(&inst, 3000, 43, None);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn converges_on_linear_four() {
        let inst = fixtures::linear_four();
        let star = solve(&inst, &SolveConfig::default()).unwrap().beta;
        let tr = sda_run(&inst, 100_000, 9, Some(&star));
        assert!(tr.last().sqerr.unwrap().sqrt() <= 0.05);
    }

    #[test]
    fn symmetric_constant_buyers() {
        let inst = MarketInstance::new(
            Mode::Linear,
            vec![1.0; 3],
            &[0.0, 1.0],
            vec![vec![0.0]; 3],
            vec![vec![1.0]; 3],
        )
        .unwrap();
        let star = solve(&inst, &SolveConfig::default()).unwrap().beta;
        let tr = sda_run(&inst, 50_000, 1, Some(&star));
        assert!(
            tr.last().sqerr.unwrap().sqrt() < 0.05,
            "{:?} vs {star:?}",
            tr.last().beta_avg
        );
    }

    #[test]
    fn subgradient_is_unbiased() {
        let inst = fixtures::piecewise_four();
        let beta = [0.5, 0.7, 0.6, 0.4];
        let m = 1_000_000;
        let mut avg = [0.0; 4];
        for s in 0..m {
            let theta = (s as f64 + 0.5) / m as f64;
            let (i, v) = stochastic_subgradient(&inst, &beta, theta);
            avg[i] += v / m as f64;
        }
        let exact = winning_utilities(&inst, &beta);
        for i in 0..4 {
            assert!((avg[i] - exact[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn single_replication_curve_is_its_own_error() {
        let inst = fixtures::linear_four();
        let star = solve(&inst, &SolveConfig::default()).unwrap().beta;
        let curve = mse_curve(&inst, 1000, &[5], &star);
        let tr = sda_run(&inst, 1000, 5, Some(&star));
        let errs: Vec<f64> = tr.checkpoints.iter().map(|c| c.sqerr.unwrap()).collect();
        assert_eq!(curve.mse, errs);
    }

    #[test]
    fn envelope_decreases_after_eight() {
        let inst = fixtures::linear_four();
        for t in [8, 16, 100, 1000, 65536] {
            assert!(mse_envelope(&inst, 2 * t) < mse_envelope(&inst, t));
        }
    }

    #[test]
    fn trace_csv_columns() {
        let inst = fixtures::linear_four();
        let mut buf = Vec::new();
        sda_run(&inst, 16, 0, Some(&[0.8, 0.8, 0.7, 0.7]))
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 1 + 4 + 4 + 1);
        assert_eq!(text.lines().count(), 1 + 5);
    }
}
