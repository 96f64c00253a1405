//! Deterministic equilibrium solver on the reduced dual
//! `min_β ∫ max_i β_i v_i − Σ B_i log β_i` over the box of utility prices,
//! followed by pure-allocation recovery.

use serde::{Deserialize, Serialize};

use crate::envelope::{
    duality_gap, upper_envelope, utility_jacobian, winning_utilities_by_segment, DualPoint, PiecewiseLinearFunction,
};
use crate::error::{Error, Result};
use crate::feasible::{membership, normalize_segment, partition};
use crate::market::{Interval, MarketInstance, Mode};

pub const GAP_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;
/// Projected-gradient threshold for the Newton iteration.
const PG_TOL: f64 = 1e-11;
/// `β_i` this close to 1 counts as priced at the cap.
pub const BETA_CAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepSchedule {
    /// Projected Newton with the exact piecewise Hessian and Armijo backtracking.
    Newton,
    /// Projected subgradient with `η_t = η_0/√t`.
    Diminishing { eta0: f64 },
    /// Projected subgradient with Polyak steps toward the target
    /// `ψ_best − min(½(ψ_best − L), 0.01/√t)`, `L` the best primal bound.
    Polyak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub schedule: StepSchedule,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iter: 500,
            gap_tol: GAP_TOL,
            schedule: StepSchedule::Newton,
        }
    }
}

impl SolveConfig {
    pub fn subgradient(max_iter: usize) -> Self {
        SolveConfig {
            max_iter,
            gap_tol: GAP_TOL,
            schedule: StepSchedule::Diminishing { eta0: 0.1 },
        }
    }
}

/// Per buyer, disjoint closed intervals; plus the unassigned remainder.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PureAllocation {
    pub intervals: Vec<Vec<Interval>>,
    pub leftover: Vec<Interval>,
}

impl PureAllocation {
    /// `⟨v_i, x_j⟩`.
    pub fn value(&self, inst: &MarketInstance, i: usize, j: usize) -> f64 {
        self.intervals[j].iter().map(|&iv| inst.value(i, iv)).sum()
    }

    pub fn utilities(&self, inst: &MarketInstance) -> Vec<f64> {
        (0..inst.n()).map(|i| self.value(inst, i, i)).collect()
    }

    /// `⟨v_i, x_i⟩` split by grid segment.
    pub fn segment_utilities(&self, inst: &MarketInstance) -> Vec<Vec<f64>> {
        (0..inst.n())
            .map(|i| {
                (0..inst.k())
                    .map(|k| {
                        let seg = inst.grid().segment(k);
                        self.intervals[i]
                            .iter()
                            .filter_map(|iv| iv.intersect(&seg))
                            .map(|iv| inst.value(i, iv))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    fn sorted(&self) -> Vec<Interval> {
        let mut all: Vec<Interval> = self
            .intervals
            .iter()
            .flatten()
            .copied()
            .filter(|iv| !iv.is_empty())
            .collect();
        all.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        all
    }

    /// Parts of `[0, 1]` not covered by any buyer.
    pub fn uncovered(&self) -> Vec<Interval> {
        let mut out = Vec::new();
        let mut reach = 0.0;
        for iv in self.sorted() {
            if iv.lo > reach {
                out.push(Interval::new(reach, iv.lo));
            }
            reach = f64::max(reach, iv.hi);
        }
        if reach < 1.0 {
            out.push(Interval::new(reach, 1.0));
        }
        out
    }

    /// Total length assigned to more than one buyer.
    pub fn overlap(&self) -> f64 {
        let mut total = 0.0;
        let mut reach = f64::NEG_INFINITY;
        for iv in self.sorted() {
            if iv.lo < reach {
                total += reach.min(iv.hi) - iv.lo;
            }
            reach = reach.max(iv.hi);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub mode: Mode,
    pub beta: Vec<f64>,
    /// `⟨v_i, x_i⟩` in normalized units.
    pub utilities: Vec<f64>,
    /// Utilities in the units of the loaded document.
    pub raw_utilities: Vec<f64>,
    pub segment_utilities: Vec<Vec<f64>>,
    pub allocation: PureAllocation,
    pub prices: PiecewiseLinearFunction,
    pub gap: f64,
    pub iterations: usize,
    /// Best duality gap seen up to each iteration.
    pub gap_history: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<Vec<f64>>,
    /// `(1 − β_i)·B_i/β_i`, quasilinear only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ql_utilities: Option<Vec<f64>>,
}

impl EquilibriumResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn project(beta: &mut [f64], lo: &[f64]) {
    for (b, l) in beta.iter_mut().zip(lo) {
        *b = b.clamp(*l, 1.0);
    }
}

fn projected_gradient_norm(pt: &DualPoint, lo: &[f64]) -> f64 {
    pt.beta
        .iter()
        .zip(&pt.gradient)
        .zip(lo)
        .map(|((b, g), l)| (b - (b - g).clamp(*l, 1.0)).abs())
        .fold(0.0, f64::max)
}

fn initial_beta(lo: &[f64]) -> Vec<f64> {
    let mut beta: Vec<f64> = lo.iter().map(|l| l.sqrt()).collect();
    project(&mut beta, lo);
    beta
}

struct Run {
    best: DualPoint,
    iterations: usize,
    history: Vec<f64>,
}

/// Solves `H_FF d = r` by diagonally preconditioned conjugate gradients.
fn cg_solve(free: &[usize], diag: &[f64], off: &[(usize, usize, f64)], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut is_free = vec![false; n];
    for &i in free {
        is_free[i] = true;
    }
    let matvec = |x: &[f64], out: &mut [f64]| {
        for &i in free {
            out[i] = diag[i] * x[i];
        }
        for &(r, c, v) in off {
            if is_free[r] && is_free[c] {
                out[r] += v * x[c];
            }
        }
    };
    let dot = |a: &[f64], b: &[f64]| free.iter().map(|&i| a[i] * b[i]).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = (0..n).map(|i| if is_free[i] { r[i] / diag[i] } else { 0.0 }).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let r0 = dot(&r, &r).sqrt();
    let mut ap = vec![0.0; n];
    for _ in 0..(2 * free.len() + 10) {
        let rn = dot(&r, &r).sqrt();
        if rn <= 1e-15 * r0 || rn == 0.0 {
            break;
        }
        matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for &i in free {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let ratio = rz_new / rz;
        rz = rz_new;
        for &i in free {
            p[i] = z[i] + ratio * p[i];
        }
    }
    x
}

/// Armijo backtracking along the projection arc `P(β + α·dir)`.
fn line_search(inst: &MarketInstance, pt: &DualPoint, dir: &[f64], lo: &[f64], pg: f64) -> Result<Option<DualPoint>> {
    let mut alpha = 1.0;
    for _ in 0..60 {
        let mut trial: Vec<f64> = pt.beta.iter().zip(dir).map(|(b, d)| b + alpha * d).collect();
        project(&mut trial, lo);
        if trial == pt.beta {
            return Ok(None);
        }
        let decrease: f64 = pt
            .gradient
            .iter()
            .zip(&trial)
            .zip(&pt.beta)
            .map(|((g, t), b)| g * (t - b))
            .sum();
        let cand = DualPoint::new(inst, trial)?;
        let armijo = cand.psi <= pt.psi + 1e-4 * decrease;
        let flat = cand.psi <= pt.psi + 1e-14 * pt.psi.abs().max(1.0) && projected_gradient_norm(&cand, lo) < 0.5 * pg;
        if armijo || flat {
            return Ok(Some(cand));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

fn newton(inst: &MarketInstance, cfg: &SolveConfig) -> Result<Run> {
    let n = inst.n();
    let lo = inst.beta_lower();
    let b = inst.budgets();
    let mut pt = DualPoint::new(inst, initial_beta(&lo))?;
    let mut gap = pt.gap(inst);
    let mut best_gap = gap;
    let mut best = pt.clone();
    let mut history: Vec<f64> = vec![best_gap].into_iter().filter(|g: &f64| g.is_finite()).collect();
    let mut it = 0;
    while it < cfg.max_iter {
        let pg = projected_gradient_norm(&pt, &lo);
        if gap <= cfg.gap_tol && pg <= PG_TOL {
            break;
        }
        it += 1;

        let jac = utility_jacobian(inst, &pt.envelope);
        let mut diag: Vec<f64> = (0..n).map(|i| b[i] / (pt.beta[i] * pt.beta[i])).collect();
        for &(r, c, v) in &jac {
            if r == c {
                diag[r] += v;
            }
        }
        let off: Vec<(usize, usize, f64)> = jac.into_iter().filter(|t| t.0 != t.1).collect();
        let eps = pg.min(1e-3);
        let mut free = Vec::new();
        let mut dir = vec![0.0; n];
        for i in 0..n {
            let g = pt.gradient[i];
            let at_lo = pt.beta[i] <= lo[i] + eps && g > 0.0;
            let at_hi = pt.beta[i] >= 1.0 - eps && g < 0.0;
            if at_lo || at_hi {
                dir[i] = -g / diag[i];
            } else {
                free.push(i);
            }
        }
        let rhs: Vec<f64> = pt.gradient.iter().map(|g| -g).collect();
        let step = cg_solve(&free, &diag, &off, &rhs);
        for &i in &free {
            dir[i] = step[i];
        }

        let mut accepted = line_search(inst, &pt, &dir, &lo, pg)?;
        if accepted.is_none() {
            let scaled: Vec<f64> = (0..n).map(|i| -pt.gradient[i] / diag[i]).collect();
            accepted = line_search(inst, &pt, &scaled, &lo, pg)?;
        }
        let Some(next) = accepted else { break };
        pt = next;
        gap = pt.gap(inst);
        if gap < best_gap {
            best_gap = gap;
            best = pt.clone();
        }
        if best_gap.is_finite() {
            history.push(best_gap);
        }
    }
    let chosen = if gap <= cfg.gap_tol { pt } else { best };
    Ok(Run {
        best: chosen,
        iterations: it,
        history,
    })
}

fn subgradient(inst: &MarketInstance, cfg: &SolveConfig) -> Result<Run> {
    let lo = inst.beta_lower();
    let mut beta = initial_beta(&lo);
    let mut pt = DualPoint::new(inst, beta.clone())?;
    let mut best_gap = pt.gap(inst);
    let mut best = pt.clone();
    let mut best_primal = pt.psi - best_gap;
    let mut best_psi = pt.psi;
    let mut history: Vec<f64> = vec![best_gap].into_iter().filter(|g: &f64| g.is_finite()).collect();
    let mut t = 0;
    while t < cfg.max_iter && best_gap > cfg.gap_tol {
        t += 1;
        let gnorm2: f64 = pt.gradient.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let eta = match cfg.schedule {
            StepSchedule::Diminishing { eta0 } => eta0 / (t as f64).sqrt(),
            StepSchedule::Polyak => {
                let offset = (0.5 * (best_psi - best_primal)).min(0.01 / (t as f64).sqrt());
                (pt.psi - best_psi + offset) / gnorm2
            }
            StepSchedule::Newton => unreachable!("Newton runs through its own loop"),
        };
        for i in 0..beta.len() {
            beta[i] -= eta * pt.gradient[i];
        }
        project(&mut beta, &lo);
        pt = DualPoint::new(inst, beta.clone())?;
        let gap = pt.gap(inst);
        best_psi = best_psi.min(pt.psi);
        if gap.is_finite() {
            best_primal = best_primal.max(pt.psi - gap);
        }
        if gap < best_gap {
            best_gap = gap;
            best = pt.clone();
        }
        if best_gap.is_finite() {
            history.push(best_gap);
        }
    }
    Ok(Run {
        best,
        iterations: t,
        history,
    })
}

/// Computes an equilibrium and its pure allocation.
///
/// Buyers with identical valuations are pooled into one buyer for the dual
/// solve and split again by budget share when the allocation is recovered.
pub fn solve(inst: &MarketInstance, cfg: &SolveConfig) -> Result<EquilibriumResult> {
    let groups = inst.identical_groups();
    let reduced = inst.merged(&groups);
    let run = match cfg.schedule {
        StepSchedule::Newton => newton(&reduced, cfg)?,
        _ => subgradient(&reduced, cfg)?,
    };
    let mut beta = vec![0.0; inst.n()];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            beta[i] = run.best.beta[g];
        }
    }
    let mut result = allocation_at(inst, &beta, &groups)?;
    result.iterations = run.iterations;
    result.gap_history = run.history;
    if result.gap > cfg.gap_tol {
        let gap = result.gap;
        return Err(Error::NotConverged {
            iterations: run.iterations,
            gap,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Pure allocation recovered at utility prices `beta`, with its certified gap.
pub fn allocation_at(inst: &MarketInstance, beta: &[f64], groups: &[Vec<usize>]) -> Result<EquilibriumResult> {
    let n = inst.n();
    let b = inst.budgets();
    let prices = upper_envelope(inst, beta);
    let mut w = winning_utilities_by_segment(inst, &prices);
    for g in groups.iter().filter(|g| g.len() > 1) {
        let pooled: f64 = g.iter().map(|&i| b[i]).sum();
        for k in 0..inst.k() {
            let total = w[g[0]][k];
            for &i in g {
                w[i][k] = total * b[i] / pooled;
            }
        }
    }
    let won: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let target: Vec<f64> = (0..n)
        .map(|i| match inst.mode() {
            Mode::Quasilinear if beta[i] >= 1.0 - BETA_CAP_TOL => won[i],
            _ => b[i] / beta[i],
        })
        .collect();

    let mut allocation = PureAllocation {
        intervals: vec![Vec::new(); n],
        leftover: Vec::new(),
    };
    for k in 0..inst.k() {
        let seg = normalize_segment(inst, k);
        if seg.sigma.is_empty() {
            allocation.leftover.push(seg.interval());
            continue;
        }
        let mut t: Vec<f64> = (0..n)
            .map(|i| {
                if won[i] > 0.0 {
                    w[i][k] * target[i] / won[i]
                } else {
                    0.0
                }
            })
            .collect();
        if !membership(&seg, &t) {
            for i in 0..n {
                t[i] = t[i].min(w[i][k]);
            }
        }
        for (i, iv) in partition(&seg, &t)?.into_iter().enumerate() {
            if iv.is_empty() {
                continue;
            }
            if t[i] > 0.0 {
                allocation.intervals[i].push(iv);
            } else {
                allocation.leftover.push(iv);
            }
        }
    }
    merge_adjacent(&mut allocation.intervals);
    let segment_utilities = allocation.segment_utilities(inst);
    let utilities = allocation.utilities(inst);
    let mut result = EquilibriumResult {
        mode: inst.mode(),
        beta: beta.to_vec(),
        raw_utilities: (0..n).map(|i| utilities[i] * inst.value_scale()[i]).collect(),
        utilities,
        segment_utilities,
        allocation,
        prices,
        gap: f64::INFINITY,
        iterations: 0,
        gap_history: Vec::new(),
        delta: None,
        ql_utilities: None,
    };
    if inst.mode() == Mode::Quasilinear {
        quasilinear_postprocess(inst, &mut result);
    }
    let psi = result.prices.integral() - (0..n).map(|i| b[i] * beta[i].ln()).sum::<f64>();
    let delta = result.delta.clone().unwrap_or(vec![0.0; n]);
    let u: Vec<f64> = (0..n).map(|i| result.utilities[i] + delta[i]).collect();
    result.gap = duality_gap(inst, psi, &u, &delta);
    Ok(result)
}

/// Joins touching intervals of the same buyer across grid breakpoints.
fn merge_adjacent(intervals: &mut [Vec<Interval>]) {
    for list in intervals.iter_mut() {
        let mut out: Vec<Interval> = Vec::with_capacity(list.len());
        for &iv in list.iter() {
            match out.last_mut() {
                Some(last) if last.hi == iv.lo => last.hi = iv.hi,
                _ => out.push(iv),
            }
        }
        *list = out;
    }
}

/// Fills `δ` and the quasilinear utilities: buyers priced at the cap cover
/// the shortfall `B_i − ⟨v_i, x_i⟩` with unspent budget.
pub fn quasilinear_postprocess(inst: &MarketInstance, result: &mut EquilibriumResult) {
    let b = inst.budgets();
    let n = inst.n();
    let delta: Vec<f64> = (0..n)
        .map(|i| {
            if result.beta[i] >= 1.0 - BETA_CAP_TOL {
                (b[i] / result.beta[i] - result.utilities[i]).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    result.ql_utilities = Some((0..n).map(|i| (1.0 - result.beta[i]) * b[i] / result.beta[i]).collect());
    result.delta = Some(delta);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::generate::sample_instance;

    #[test]
    fn linear_four_golden() {
        let inst = fixtures::linear_four();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        for (got, want) in res.beta.iter().zip([0.8058, 0.8135, 0.7057, 0.6880]) {
            assert!((got - want).abs() < 1e-3, "{:?}", res.beta);
        }
        let mut ends: Vec<f64> = res
            .allocation
            .intervals
            .iter()
            .flatten()
            .map(|iv| iv.hi)
            .filter(|&x| x < 1.0)
            .collect();
        ends.sort_by(f64::total_cmp);
        assert_eq!(ends.len(), 3);
        for (got, want) in ends.iter().zip([0.3713, 0.4921, 0.8199]) {
            assert!((got - want).abs() < 1e-3, "{ends:?}");
        }
        assert!(res.gap <= GAP_TOL);
        for i in 0..4 {
            assert!((res.utilities[i] - inst.budgets()[i] / res.beta[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_buyer_takes_everything() {
        let inst = MarketInstance::new(Mode::Linear, vec![1.0], &[0.0, 1.0], vec![vec![0.3]], vec![vec![0.2]]).unwrap();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        assert!((res.beta[0] - 1.0).abs() < 1e-12);
        assert!((res.utilities[0] - 1.0).abs() < 1e-12);
        assert_eq!(res.allocation.intervals[0], vec![Interval::new(0.0, 1.0)]);
    }

    #[test]
    fn symmetric_buyers_split_evenly() {
        let inst = MarketInstance::new(
            Mode::Linear,
            vec![1.0, 1.0],
            &[0.0, 1.0],
            vec![vec![0.5], vec![0.5]],
            vec![vec![0.75], vec![0.75]],
        )
        .unwrap();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        assert_eq!(res.beta[0], res.beta[1]);
        assert!((res.utilities[0] - 0.5).abs() < 1e-9);
        assert!((res.utilities[1] - 0.5).abs() < 1e-9);
        assert!(res.allocation.overlap() < 1e-15);
    }

    #[test]
    fn identical_buyers_among_others() {
        let inst = MarketInstance::new(
            Mode::Linear,
            vec![0.2, 0.3, 0.5],
            &[0.0, 0.5, 1.0],
            vec![vec![1.0, -1.0], vec![0.0, 0.0], vec![1.0, -1.0]],
            vec![vec![0.2, 1.2], vec![1.0, 1.0], vec![0.2, 1.2]],
        )
        .unwrap();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        assert_eq!(res.beta[0], res.beta[2]);
        let ratio = res.utilities[0] / res.utilities[2];
        assert!((ratio - 0.4).abs() < 1e-9, "{ratio}");
        assert!(res.gap <= GAP_TOL);
    }

    #[test]
    fn random_instances_certify() {
        for seed in 0..40 {
            let inst = sample_instance(2 + (seed as usize % 7), 1 + (seed as usize % 5), seed, Mode::Linear);
            let res = solve(&inst, &SolveConfig::default()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            for i in 0..inst.n() {
                let r = (res.utilities[i] - inst.budgets()[i] / res.beta[i]).abs();
                assert!(r < 1e-8, "seed {seed} buyer {i}: {r}");
            }
            assert!((res.prices.integral() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn best_gap_is_monotone() {
        let inst = sample_instance(6, 4, 3, Mode::Linear);
        for cfg in [SolveConfig::default(), SolveConfig::subgradient(300)] {
            let hist = match solve(&inst, &cfg) {
                Ok(r) => r.gap_history,
                Err(Error::NotConverged { best, .. }) => best.gap_history,
                Err(e) => panic!("{e}"),
            };
            assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn subgradient_schedules_make_progress() {
        let inst = fixtures::linear_four();
        for schedule in [StepSchedule::Diminishing { eta0: 0.1 }, StepSchedule::Polyak] {
            let cfg = SolveConfig {
                max_iter: 3000,
                gap_tol: 1e-6,
                schedule,
            };
            let best = match solve(&inst, &cfg) {
                Ok(r) => r,
                Err(Error::NotConverged { best, .. }) => *best,
                Err(e) => panic!("{e}"),
            };
            for (got, want) in best.beta.iter().zip([0.8058, 0.8135, 0.7057, 0.6880]) {
                assert!((got - want).abs() < 2e-2, "{schedule:?}: {:?}", best.beta);
            }
        }
    }

    #[test]
    fn not_converged_carries_best_iterate() {
        let inst = fixtures::piecewise_four();
        let cfg = SolveConfig {
            max_iter: 1,
            gap_tol: 1e-14,
            schedule: StepSchedule::Diminishing { eta0: 0.01 },
        };
        match solve(&inst, &cfg) {
            Err(Error::NotConverged { best, gap, .. }) => {
                assert_eq!(best.gap, gap);
                assert_eq!(best.beta.len(), 4);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn quasilinear_priced_out_buyer() {
        let inst = MarketInstance::new(
            Mode::Quasilinear,
            vec![0.5, 0.5],
            &[0.0, 1.0],
            vec![vec![0.0], vec![0.0]],
            vec![vec![5.0], vec![0.01]],
        )
        .unwrap();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        assert!((res.beta[1] - 1.0).abs() < 1e-12);
        let delta = res.delta.as_ref().unwrap();
        assert!((delta[1] - inst.budgets()[1]).abs() < 1e-9);
        assert!(res.ql_utilities.as_ref().unwrap()[1].abs() < 1e-12);
        assert!(res.utilities[1].abs() < 1e-12);
    }

    #[test]
    fn quasilinear_with_small_budgets_matches_linear() {
        let lin = sample_instance(4, 3, 5, Mode::Linear);
        let mut doc = lin.to_document();
        doc.mode = Mode::Quasilinear;
        for row in doc.c.iter_mut().chain(doc.d.iter_mut()) {
            for x in row.iter_mut() {
                *x *= 50.0;
            }
        }
        let ql = MarketInstance::from_document(doc).unwrap();
        let a = solve(&lin, &SolveConfig::default()).unwrap();
        let b = solve(&ql, &SolveConfig::default()).unwrap();
        for i in 0..4 {
            assert!(b.beta[i] < 1.0);
            assert!(
                (b.beta[i] * 50.0 - a.beta[i]).abs() < 1e-7,
                "{:?} vs {:?}",
                a.beta,
                b.beta
            );
            assert_eq!(b.delta.as_ref().unwrap()[i], 0.0);
        }
    }

    #[test]
    fn result_json_roundtrip() {
        let res = solve(&fixtures::linear_four(), &SolveConfig::default()).unwrap();
        let back = EquilibriumResult::from_json(&res.to_json().unwrap()).unwrap();
        assert_eq!(back, res);
    }
}
