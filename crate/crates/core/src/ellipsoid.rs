//! Central-cut ellipsoid method on the finite-dimensional program over
//! `(u_i, u_ik, û_jk, s, t, z, w)` with every linear constraint enlarged by
//! `ε`, followed by discounting back into the exact feasible sets and
//! interval partition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dual::{EquilibriumResult, PureAllocation};
use crate::envelope::{dual_objective, duality_gap, upper_envelope};
use crate::error::{Error, Result};
use crate::feasible::{membership, normalize_segment, partition, NormalizedSegment};
use crate::market::{eval_interval, Interval, MarketInstance, Mode};

const RESYMMETRIZE_EVERY: usize = 50;
const DIAGNOSTIC_EVERY: usize = 100;
const MAX_RESTARTS: usize = 3;

/// Sparse linear inequality `Σ vals·x[cols] ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    fn new(terms: &[(usize, f64)], rhs: f64) -> Self {
        LinearRow {
            cols: terms.iter().map(|t| t.0).collect(),
            vals: terms.iter().map(|t| t.1).collect(),
            rhs,
        }
    }

    fn lhs(&self, x: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, v)| v * x[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutKind {
    Linear,
    Quadratic,
    Objective,
}

/// Separation oracle outcome; normals are sparse `(index, value)` lists.
#[derive(Debug, Clone, PartialEq)]
pub enum Separation {
    Inside,
    Hyperplane { kind: CutKind, normal: Vec<(usize, f64)> },
}

#[derive(Debug, Clone)]
struct SegmentLayout {
    seg: NormalizedSegment,
    /// `u_{σ(j)k}` per position `j`.
    uik: Vec<usize>,
    uhat: Vec<usize>,
    /// `(s, t, z, w)` per adjacent pair.
    aux: Vec<[usize; 4]>,
}

/// Variables and ε-enlarged constraints of the program.
#[derive(Debug, Clone)]
pub struct Program {
    pub dim: usize,
    pub epsilon: f64,
    budgets: Vec<f64>,
    u: Vec<usize>,
    segments: Vec<SegmentLayout>,
    pub rows: Vec<LinearRow>,
    /// `(s, t)` pairs constrained by `s² ≤ t`.
    pub parabolas: Vec<(usize, usize)>,
}

impl Program {
    pub fn build(inst: &MarketInstance, epsilon: f64) -> Self {
        let n = inst.n();
        let b = inst.budgets().to_vec();
        let mut dim = n;
        let u: Vec<usize> = (0..n).collect();
        let mut segments = Vec::with_capacity(inst.k());
        for k in 0..inst.k() {
            let seg = normalize_segment(inst, k);
            let m = seg.sigma.len();
            let uik: Vec<usize> = (dim..dim + m).collect();
            dim += m;
            let uhat: Vec<usize> = (dim..dim + m).collect();
            dim += m;
            let aux: Vec<[usize; 4]> = (0..m.saturating_sub(1))
                .map(|j| {
                    let base = dim + 4 * j;
                    [base, base + 1, base + 2, base + 3]
                })
                .collect();
            dim += 4 * m.saturating_sub(1);
            segments.push(SegmentLayout { seg, uik, uhat, aux });
        }

        let eps = epsilon;
        let mut rows = Vec::new();
        let mut parabolas = Vec::new();
        for i in 0..n {
            rows.push(LinearRow::new(&[(u[i], -1.0)], -b[i].min(eps / 2.0)));
            rows.push(LinearRow::new(&[(u[i], 1.0)], 1.0));
            let mut split = vec![(u[i], 1.0)];
            for sl in &segments {
                if let Some(j) = sl.seg.sigma.iter().position(|&x| x == i) {
                    split.push((sl.uik[j], -1.0));
                }
            }
            rows.push(LinearRow::new(&split, eps));
        }
        for sl in &segments {
            let seg = &sl.seg;
            let m = seg.sigma.len();
            for (j, &i) in seg.sigma.iter().enumerate() {
                rows.push(LinearRow::new(&[(sl.uik[j], 1.0), (sl.uhat[j], -seg.lambda[i])], eps));
                rows.push(LinearRow::new(&[(sl.uik[j], -1.0)], 0.0));
                rows.push(LinearRow::new(&[(sl.uhat[j], -1.0)], 0.0));
            }
            if m == 1 {
                rows.push(LinearRow::new(&[(sl.uhat[0], 1.0)], 1.0 + eps));
            }
            for (j, a) in sl.aux.iter().enumerate() {
                let [s, t, z, w] = *a;
                let (left, right) = (seg.sigma[j], seg.sigma[j + 1]);
                if j == 0 {
                    rows.push(LinearRow::new(&[(sl.uhat[0], 1.0), (z, -1.0)], eps));
                } else {
                    let wp = sl.aux[j - 1][3];
                    rows.push(LinearRow::new(&[(sl.uhat[j], 1.0), (z, -1.0), (wp, -1.0)], eps));
                }
                rows.push(LinearRow::new(
                    &[(z, 1.0), (s, -seg.d_hat[left]), (t, -seg.c_hat[left] / 2.0)],
                    eps,
                ));
                rows.push(LinearRow::new(
                    &[(w, 1.0), (s, seg.d_hat[right]), (t, seg.c_hat[right] / 2.0)],
                    eps,
                ));
                rows.push(LinearRow::new(&[(z, -1.0)], 0.0));
                rows.push(LinearRow::new(&[(z, 1.0)], 1.0));
                rows.push(LinearRow::new(&[(w, -1.0)], 1.0));
                rows.push(LinearRow::new(&[(w, 1.0)], 0.0));
                rows.push(LinearRow::new(&[(z, -1.0), (w, -1.0)], 0.0));
                rows.push(LinearRow::new(&[(s, -1.0)], 0.0));
                rows.push(LinearRow::new(&[(s, 1.0)], 1.0));
                rows.push(LinearRow::new(&[(t, -1.0)], 0.0));
                rows.push(LinearRow::new(&[(t, 1.0)], 1.0));
                parabolas.push((s, t));
            }
            if m >= 2 {
                let wl = sl.aux[m - 2][3];
                rows.push(LinearRow::new(&[(sl.uhat[m - 1], 1.0), (wl, -1.0)], 1.0 + eps));
            }
        }
        Program {
            dim,
            epsilon,
            budgets: b,
            u,
            segments,
            rows,
            parabolas,
        }
    }

    /// Index of `u_i` in the stacked vector.
    pub fn u_index(&self, i: usize) -> usize {
        self.u[i]
    }

    /// Most violated constraint at `x`, by violation over the normal's length.
    pub fn separate(&self, x: &[f64]) -> Separation {
        let mut worst = 0.0;
        let mut cut = Separation::Inside;
        for row in &self.rows {
            let excess = row.lhs(x) - row.rhs;
            if excess > 0.0 {
                let norm = row.vals.iter().map(|v| v * v).sum::<f64>().sqrt();
                if excess / norm > worst {
                    worst = excess / norm;
                    cut = Separation::Hyperplane {
                        kind: CutKind::Linear,
                        normal: row.cols.iter().copied().zip(row.vals.iter().copied()).collect(),
                    };
                }
            }
        }
        for &(s, t) in &self.parabolas {
            let s0 = x[s];
            let excess = s0 * s0 - x[t];
            if excess > 0.0 {
                let norm = (4.0 * s0 * s0 + 1.0).sqrt();
                if excess / norm > worst {
                    worst = excess / norm;
                    cut = Separation::Hyperplane {
                        kind: CutKind::Quadratic,
                        normal: vec![(s, 2.0 * s0), (t, -1.0)],
                    };
                }
            }
        }
        cut
    }

    /// `f(x) = −Σ B_i log u_i`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        -(0..self.u.len())
            .map(|i| self.budgets[i] * x[self.u[i]].ln())
            .sum::<f64>()
    }

    /// `∂f/∂u_i = −B_i/u_i`, zero elsewhere.
    pub fn gradient(&self, x: &[f64]) -> Vec<(usize, f64)> {
        (0..self.u.len())
            .map(|i| (self.u[i], -self.budgets[i] / x[self.u[i]]))
            .collect()
    }

    /// Centre where every active buyer gets an equal-length share of each segment.
    pub fn uniform_split(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        let mut totals = vec![0.0; self.u.len()];
        for sl in &self.segments {
            let seg = &sl.seg;
            let m = seg.sigma.len();
            for (j, &i) in seg.sigma.iter().enumerate() {
                let share = Interval::new(j as f64 / m as f64, (j + 1) as f64 / m as f64);
                let uh = eval_interval(seg.normalized_piece(i), share);
                x[sl.uhat[j]] = uh;
                x[sl.uik[j]] = seg.lambda[i] * uh;
                totals[i] += seg.lambda[i] * uh;
            }
            let cuts: Vec<f64> = (1..m).map(|j| j as f64 / m as f64).collect();
            for (a, idx) in seg.aux_from_cuts(&cuts).iter().zip(&sl.aux) {
                x[idx[0]] = a.s;
                x[idx[1]] = a.t;
                x[idx[2]] = a.z;
                x[idx[3]] = a.w;
            }
        }
        for (i, total) in totals.into_iter().enumerate() {
            x[self.u[i]] = total.max(self.epsilon / 2.0).min(1.0);
        }
        x
    }

    /// Per-buyer per-segment utilities `u_ik` read off `x`.
    fn segment_utilities(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.segments.len()]; n];
        for (k, sl) in self.segments.iter().enumerate() {
            for (j, &i) in sl.seg.sigma.iter().enumerate() {
                out[i][k] = x[sl.uik[j]];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub iteration: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective: Option<f64>,
    pub cut: CutKind,
    /// `½ log det P`, the log volume up to a dimension constant.
    pub log_volume: f64,
}

pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[DiagnosticRow]) -> std::io::Result<()> {
    writeln!(out, "iteration,objective,cut,log_volume")?;
    for r in rows {
        let obj = r.objective.map(|o| o.to_string()).unwrap_or_default();
        let cut = match r.cut {
            CutKind::Linear => "linear",
            CutKind::Quadratic => "quadratic",
            CutKind::Objective => "objective",
        };
        writeln!(out, "{},{obj},{cut},{}", r.iteration, r.log_volume)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidConfig {
    pub epsilon: f64,
    /// Overrides the iteration cap derived from the complexity bound.
    pub max_iter: Option<usize>,
}

impl Default for EllipsoidConfig {
    fn default() -> Self {
        EllipsoidConfig {
            epsilon: 1e-4,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidResult {
    pub epsilon: f64,
    /// `ε/(2κ + K + 1)`, the tolerance the program is solved to.
    pub internal_epsilon: f64,
    pub dim: usize,
    pub iterations: usize,
    pub separation_calls: usize,
    pub gradient_calls: usize,
    /// `2·dim²·log(2 + VR/(εr))` with the implemented constants.
    pub call_bound: usize,
    pub restarts: usize,
    pub objective: f64,
    pub lower_bound: f64,
    pub certified: bool,
    /// Discounted `u_ik`, exactly feasible on every segment.
    pub segment_utilities: Vec<Vec<f64>>,
    /// `Σ_k u_ik`.
    pub utilities: Vec<f64>,
    pub allocation: PureAllocation,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl EllipsoidResult {
    /// Equilibrium view with `β_i = B_i/⟨v_i, x_i⟩` and its duality gap.
    pub fn to_equilibrium(&self, inst: &MarketInstance) -> EquilibriumResult {
        let b = inst.budgets();
        let utilities = self.allocation.utilities(inst);
        let beta: Vec<f64> = (0..inst.n()).map(|i| (b[i] / utilities[i]).min(1.0)).collect();
        let psi = dual_objective(inst, &beta).unwrap_or(f64::INFINITY);
        let gap = duality_gap(inst, psi, &utilities, &vec![0.0; inst.n()]);
        EquilibriumResult {
            mode: inst.mode(),
            prices: upper_envelope(inst, &beta),
            raw_utilities: (0..inst.n()).map(|i| utilities[i] * inst.value_scale()[i]).collect(),
            segment_utilities: self.allocation.segment_utilities(inst),
            utilities,
            beta,
            allocation: self.allocation.clone(),
            gap,
            iterations: self.iterations,
            gap_history: Vec::new(),
            delta: None,
            ql_utilities: None,
        }
    }
}

/// Central-cut update of `(x, P)` along `normal`. Returns `gᵀPg`, or `None`
/// when it is not positive and the matrix is left untouched.
fn central_cut(
    x: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    pg: &mut DVector<f64>,
    normal: &[(usize, f64)],
) -> Option<f64> {
    let d = x.len() as f64;
    pg.fill(0.0);
    for &(j, gj) in normal {
        pg.axpy(gj, &p.column(j), 1.0);
    }
    let gpg: f64 = normal.iter().map(|&(j, gj)| gj * pg[j]).sum();
    if !(gpg > 0.0) || !gpg.is_finite() {
        return None;
    }
    let b = &*pg / gpg.sqrt();
    x.axpy(-1.0 / (d + 1.0), &b, 1.0);
    p.ger(-2.0 / (d + 1.0), &b, &b, 1.0);
    *p *= d * d / (d * d - 1.0);
    Some(gpg)
}

fn log_shrink(d: f64) -> f64 {
    0.5 * (d * (d * d / (d * d - 1.0)).ln() + ((d - 1.0) / (d + 1.0)).ln())
}

/// Solves the ε-enlarged program and restores exact feasibility.
pub fn ellipsoid_solve(inst: &MarketInstance, cfg: &EllipsoidConfig) -> Result<EllipsoidResult> {
    if inst.mode() != Mode::Linear {
        return Err(Error::Unsupported(
            "the ellipsoid solver handles linear mode only".into(),
        ));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(Error::Format(format!(
            "epsilon must lie in (0, 1), got {}",
            cfg.epsilon
        )));
    }
    let b = inst.budgets();
    let kappa = 1.0 / b.iter().copied().fold(f64::INFINITY, f64::min);
    let eps = cfg.epsilon / (2.0 * kappa + inst.k() as f64 + 1.0);
    let prog = Program::build(inst, eps);
    let dim = prog.dim;
    let d = dim as f64;
    let radius = 2.0 * d.sqrt();
    let v_bound = kappa.ln() + (2.0 / eps).ln();
    let ratio = v_bound * radius / (eps * eps / 2.0);
    let call_bound = (2.0 * d * d * (2.0 + ratio).ln()).ceil() as usize;
    let cap = cfg.max_iter.unwrap_or(call_bound);

    let start = prog.uniform_split();
    let mut x = DVector::from_vec(start.clone());
    let mut p = DMatrix::<f64>::identity(dim, dim) * (radius * radius);
    let mut log_volume = dim as f64 * radius.ln();
    let mut best_x: Option<Vec<f64>> = None;
    let mut best_f = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut diagnostics = Vec::new();
    let (mut sep_calls, mut grad_calls, mut restarts) = (0, 0, 0);
    let mut pg = DVector::<f64>::zeros(dim);
    let mut it = 0;
    while it < cap {
        it += 1;
        sep_calls += 1;
        let (kind, normal, objective) = match prog.separate(x.as_slice()) {
            Separation::Hyperplane { kind, normal } => (kind, normal, None),
            Separation::Inside => {
                grad_calls += 1;
                let f = prog.objective(x.as_slice());
                if f < best_f {
                    best_f = f;
                    best_x = Some(x.as_slice().to_vec());
                }
                (CutKind::Objective, prog.gradient(x.as_slice()), Some(f))
            }
        };
        let Some(gpg) = central_cut(&mut x, &mut p, &mut pg, &normal) else {
            if restarts == MAX_RESTARTS {
                return Err(Error::NumericalBreakdown(format!(
                    "shape matrix lost positive definiteness at iteration {it}"
                )));
            }
            restarts += 1;
            x = DVector::from_vec(best_x.clone().unwrap_or_else(|| start.clone()));
            p = DMatrix::<f64>::identity(dim, dim) * (radius * radius);
            log_volume = dim as f64 * radius.ln();
            continue;
        };
        if let Some(f) = objective {
            lower = lower.max(f - gpg.sqrt());
            if best_f - lower <= eps {
                break;
            }
        }
        log_volume += log_shrink(d);
        if it % RESYMMETRIZE_EVERY == 0 {
            let t = p.transpose();
            p += t;
            p *= 0.5;
        }
        if it % DIAGNOSTIC_EVERY == 0 {
            diagnostics.push(DiagnosticRow {
                iteration: it,
                objective,
                cut: kind,
                log_volume,
            });
        }
    }
    let best = best_x.ok_or_else(|| Error::NumericalBreakdown("no feasible centre was found".into()))?;
    let (segment_utilities, allocation) = restore(inst, &prog, &best)?;
    let utilities = segment_utilities.iter().map(|r| r.iter().sum()).collect::<Vec<f64>>();
    Ok(EllipsoidResult {
        epsilon: cfg.epsilon,
        internal_epsilon: eps,
        dim,
        iterations: it,
        separation_calls: sep_calls,
        gradient_calls: grad_calls,
        call_bound,
        restarts,
        objective: best_f,
        lower_bound: lower,
        certified: best_f - lower <= eps,
        segment_utilities,
        utilities,
        allocation,
        diagnostics,
    })
}

/// Discounts `û` and `u_ik` by `ε`, then shrinks each segment's vector
/// until the greedy membership test accepts it, and partitions.
fn restore(inst: &MarketInstance, prog: &Program, x: &[f64]) -> Result<(Vec<Vec<f64>>, PureAllocation)> {
    let n = inst.n();
    let eps = prog.epsilon;
    let mut u = prog.segment_utilities(x, n);
    let mut allocation = PureAllocation {
        intervals: vec![Vec::new(); n],
        leftover: Vec::new(),
    };
    for (k, sl) in prog.segments.iter().enumerate() {
        let seg = &sl.seg;
        for (j, &i) in seg.sigma.iter().enumerate() {
            let uh = (x[sl.uhat[j]] - eps).max(0.0);
            u[i][k] = (u[i][k].min(seg.lambda[i] * uh + eps) - seg.lambda[i] * eps - eps).max(0.0);
        }
        let mut col: Vec<f64> = (0..n).map(|i| u[i][k]).collect();
        if !membership(seg, &col) {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let trial: Vec<f64> = col.iter().map(|c| c * mid).collect();
                if membership(seg, &trial) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            col.iter_mut().for_each(|c| *c *= lo);
        }
        for i in 0..n {
            u[i][k] = col[i];
        }
        if seg.sigma.is_empty() {
            allocation.leftover.push(seg.interval());
            continue;
        }
        for (i, iv) in partition(seg, &col)?.into_iter().enumerate() {
            if iv.is_empty() {
                continue;
            }
            match allocation.intervals[i].last_mut() {
                Some(last) if last.hi == iv.lo => last.hi = iv.hi,
                _ => allocation.intervals[i].push(iv),
            }
        }
    }
    Ok((u, allocation))
}
