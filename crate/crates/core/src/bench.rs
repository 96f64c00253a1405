//! Timing grid over random instances: model building and dual solve timed
//! separately, mean and standard error per `(n, K)` cell.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::emit_conic_program;
use crate::dual::{solve, SolveConfig};
use crate::error::{Error, Result};
use crate::generate::sample_document;
use crate::market::{MarketInstance, Mode};

pub const THREADS_ENV: &str = "FISHER_FAIR_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub build_secs: f64,
    pub solve_secs: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub samples: usize,
    pub build_mean: f64,
    pub build_stderr: f64,
    pub solve_mean: f64,
    pub solve_stderr: f64,
    pub total_mean: f64,
    pub total_stderr: f64,
    pub max_gap: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// One timed cell. Build covers loading and normalizing the instance plus
/// emitting its conic program; solve is the dual solve and allocation recovery.
pub fn run_cell(n: usize, k: usize, seed: u64, cfg: &SolveConfig) -> Result<Sample> {
    let doc = sample_document(n, k, seed, Mode::Linear);
    let start = Instant::now();
    let inst = MarketInstance::from_document(doc)?;
    let cp = emit_conic_program(&inst);
    let build_secs = start.elapsed().as_secs_f64();
    std::hint::black_box(&cp);
    let start = Instant::now();
    let res = solve(&inst, cfg)?;
    let solve_secs = start.elapsed().as_secs_f64();
    Ok(Sample {
        n,
        k,
        seed,
        build_secs,
        solve_secs,
        gap: res.gap,
    })
}

/// Thread cap from `FISHER_FAIR_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t| t > 0)
}

/// Runs every `(n, K, seed)` cell in parallel, at most `threads` at a time.
pub fn run_grid(
    ns: &[usize],
    ks: &[usize],
    seeds: &[u64],
    cfg: &SolveConfig,
    threads: Option<usize>,
) -> Result<Vec<BenchRow>> {
    let jobs: Vec<(usize, usize, u64)> = ns
        .iter()
        .flat_map(|&n| ks.iter().flat_map(move |&k| seeds.iter().map(move |&s| (n, k, s))))
        .collect();
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Format(e.to_string()))?;
    let samples: Vec<Sample> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, k, s)| run_cell(n, k, s, cfg))
            .collect::<Result<_>>()
    })?;
    Ok(summarize(&samples))
}

/// Groups samples by `(n, K)` in first-seen order.
pub fn summarize(samples: &[Sample]) -> Vec<BenchRow> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for s in samples {
        if !keys.contains(&(s.n, s.k)) {
            keys.push((s.n, s.k));
        }
    }
    keys.into_iter()
        .map(|(n, k)| {
            let cell: Vec<&Sample> = samples.iter().filter(|s| s.n == n && s.k == k).collect();
            let build: Vec<f64> = cell.iter().map(|s| s.build_secs).collect();
            let solve: Vec<f64> = cell.iter().map(|s| s.solve_secs).collect();
            let total: Vec<f64> = cell.iter().map(|s| s.build_secs + s.solve_secs).collect();
            let (build_mean, build_stderr) = mean_stderr(&build);
            let (solve_mean, solve_stderr) = mean_stderr(&solve);
            let (total_mean, total_stderr) = mean_stderr(&total);
            BenchRow {
                n,
                k,
                samples: cell.len(),
                build_mean,
                build_stderr,
                solve_mean,
                solve_stderr,
                total_mean,
                total_stderr,
                max_gap: cell.iter().map(|s| s.gap).fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "n,k,samples,build_mean,build_stderr,solve_mean,solve_stderr,total_mean,total_stderr,max_gap"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:e}",
            r.n,
            r.k,
            r.samples,
            r.build_mean,
            r.build_stderr,
            r.solve_mean,
            r.solve_stderr,
            r.total_mean,
            r.total_stderr,
            r.max_gap
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_is_empty_table() {
        let rows = run_grid(&[], &[5], &[1, 2], &SolveConfig::default(), Some(1)).unwrap();
        assert!(rows.is_empty());
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn one_row_per_cell() {
        let rows = run_grid(&[3, 4], &[2], &[1, 2, 3], &SolveConfig::default(), Some(2)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.samples == 3 && r.max_gap <= 1e-8));
        assert_eq!((rows[0].n, rows[1].n), (3, 4));
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
