//! Upper envelope `p = max_i β_i v_i`, its integral, winning utilities and the
//! reduced dual objective with its gradient and Hessian.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{eval_interval, Interval, LinearPiece, MarketInstance, Mode};

/// Owner certification tolerance.
pub const ENV_TOL: f64 = 1e-9;

/// Piecewise-linear function on `[0, 1]`, possibly discontinuous at breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearFunction {
    breakpoints: Vec<f64>,
    pieces: Vec<LinearPiece>,
    owners: Vec<usize>,
    /// Grid segment hosting each piece.
    segments: Vec<usize>,
}

impl PiecewiseLinearFunction {
    pub fn zero() -> Self {
        PiecewiseLinearFunction {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![LinearPiece::ZERO],
            owners: vec![0],
            segments: vec![0],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[LinearPiece] {
        &self.pieces
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn interval(&self, p: usize) -> Interval {
        Interval::new(self.breakpoints[p], self.breakpoints[p + 1])
    }

    /// Index of the piece containing `theta`, right-continuous except at 1.
    pub fn locate(&self, theta: f64) -> usize {
        let p = self.breakpoints.partition_point(|&b| b <= theta);
        p.saturating_sub(1).min(self.pieces.len() - 1)
    }

    pub fn value_at(&self, theta: f64) -> f64 {
        self.pieces[self.locate(theta)].density(theta)
    }

    pub fn integral(&self) -> f64 {
        (0..self.len())
            .map(|p| eval_interval(self.pieces[p], self.interval(p)))
            .sum()
    }

    /// Integral over `iv`.
    pub fn integral_over(&self, iv: Interval) -> f64 {
        if iv.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for p in self.locate(iv.lo)..self.len() {
            let piv = self.interval(p);
            if piv.lo >= iv.hi {
                break;
            }
            if let Some(part) = piv.intersect(&iv) {
                total += eval_interval(self.pieces[p], part);
            }
        }
        total
    }

    /// Breakpoints where the owner changes inside a grid segment.
    pub fn owner_changes(&self) -> Vec<f64> {
        (1..self.len())
            .filter(|&p| self.owners[p] != self.owners[p - 1])
            .map(|p| self.breakpoints[p])
            .collect()
    }

    fn push(&mut self, hi: f64, piece: LinearPiece, owner: usize, segment: usize) {
        let lo = self.breakpoints[self.breakpoints.len() - 1];
        if hi <= lo {
            return;
        }
        self.breakpoints.push(hi);
        self.pieces.push(piece);
        self.owners.push(owner);
        self.segments.push(segment);
    }
}

/// Buyer maximizing `line(x)`; ties go to the larger slope, then the smaller index.
fn leader_at(lines: &[LinearPiece], x: f64) -> usize {
    let mut best = 0;
    let mut best_v = lines[0].density(x);
    for (j, l) in lines.iter().enumerate().skip(1) {
        let v = l.density(x);
        if v > best_v || (v == best_v && l.c > lines[best].c) {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Envelope of `lines` over `seg` as `(piece end, owner)` pairs, left to right.
pub fn segment_envelope(lines: &[LinearPiece], seg: Interval) -> Vec<(f64, usize)> {
    let mut out = Vec::new();
    let mut x = seg.lo;
    let mut cur = leader_at(lines, x);
    loop {
        let lc = lines[cur];
        let mut next: Option<(f64, usize)> = None;
        for (j, l) in lines.iter().enumerate() {
            if l.c <= lc.c {
                continue;
            }
            let xj = ((lc.d - l.d) / (l.c - lc.c)).max(x);
            if !(xj < seg.hi) {
                continue;
            }
            next = match next {
                None => Some((xj, j)),
                Some((xb, b)) => {
                    if xj < xb || (xj == xb && (l.c > lines[b].c || (l.c == lines[b].c && j < b))) {
                        Some((xj, j))
                    } else {
                        Some((xb, b))
                    }
                }
            };
        }
        match next {
            Some((xj, j)) => {
                if xj > x {
                    out.push((xj, cur));
                }
                x = xj;
                cur = j;
            }
            None => {
                out.push((seg.hi, cur));
                return out;
            }
        }
    }
}

/// Exact upper envelope of `β_i v_i` across all grid segments.
pub fn upper_envelope(inst: &MarketInstance, beta: &[f64]) -> PiecewiseLinearFunction {
    assert_eq!(beta.len(), inst.n(), "one utility price per buyer");
    let mut f = PiecewiseLinearFunction {
        breakpoints: vec![0.0],
        pieces: Vec::new(),
        owners: Vec::new(),
        segments: Vec::new(),
    };
    let mut lines = Vec::with_capacity(inst.n());
    for k in 0..inst.k() {
        lines.clear();
        lines.extend((0..inst.n()).map(|i| inst.piece(i, k).scaled(beta[i])));
        for (hi, owner) in segment_envelope(&lines, inst.grid().segment(k)) {
            f.push(hi, lines[owner], owner, k);
        }
    }
    let last = f.breakpoints.len() - 1;
    f.breakpoints[last] = 1.0;
    f
}

/// Utility each buyer derives from its winning set, split by grid segment (`n × K`).
pub fn winning_utilities_by_segment(inst: &MarketInstance, env: &PiecewiseLinearFunction) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; inst.k()]; inst.n()];
    for p in 0..env.len() {
        let (i, k) = (env.owners[p], env.segments[p]);
        w[i][k] += eval_interval(inst.piece(i, k), env.interval(p));
    }
    w
}

pub fn winning_utilities(inst: &MarketInstance, beta: &[f64]) -> Vec<f64> {
    let env = upper_envelope(inst, beta);
    totals(&winning_utilities_by_segment(inst, &env))
}

pub(crate) fn totals(per_segment: &[Vec<f64>]) -> Vec<f64> {
    per_segment.iter().map(|row| row.iter().sum()).collect()
}

fn check_domain(beta: &[f64]) -> Result<()> {
    for (i, &b) in beta.iter().enumerate() {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Domain { index: i, value: b });
        }
    }
    Ok(())
}

/// `ψ(β) = ∫ max_i β_i v_i − Σ_i B_i log β_i`.
pub fn dual_objective(inst: &MarketInstance, beta: &[f64]) -> Result<f64> {
    check_domain(beta)?;
    let env = upper_envelope(inst, beta);
    Ok(env.integral() - log_barrier(inst.budgets(), beta))
}

fn log_barrier(budgets: &[f64], beta: &[f64]) -> f64 {
    budgets.iter().zip(beta).map(|(b, x)| b * x.ln()).sum()
}

/// `‖B‖₁ − Σ B_i log B_i`.
pub fn gap_constant(budgets: &[f64]) -> f64 {
    budgets.iter().map(|b| b - b * b.ln()).sum()
}

/// Everything the dual solvers need at one `β`.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub beta: Vec<f64>,
    pub envelope: PiecewiseLinearFunction,
    pub psi: f64,
    /// Winning utilities per buyer and segment.
    pub segment_utilities: Vec<Vec<f64>>,
    pub utilities: Vec<f64>,
    /// `∇ψ = w(β) − B/β`.
    pub gradient: Vec<f64>,
}

impl DualPoint {
    pub fn new(inst: &MarketInstance, beta: Vec<f64>) -> Result<Self> {
        check_domain(&beta)?;
        let envelope = upper_envelope(inst, &beta);
        let psi = envelope.integral() - log_barrier(inst.budgets(), &beta);
        let segment_utilities = winning_utilities_by_segment(inst, &envelope);
        let utilities = totals(&segment_utilities);
        let gradient = (0..inst.n())
            .map(|i| utilities[i] - inst.budgets()[i] / beta[i])
            .collect();
        Ok(DualPoint {
            beta,
            envelope,
            psi,
            segment_utilities,
            utilities,
            gradient,
        })
    }

    /// Primal utilities and slacks implied by the winning sets, `(u, δ)`.
    pub fn primal(&self, inst: &MarketInstance) -> (Vec<f64>, Vec<f64>) {
        match inst.mode() {
            Mode::Linear => (self.utilities.clone(), vec![0.0; inst.n()]),
            Mode::Quasilinear => {
                let b = inst.budgets();
                let u = (0..inst.n()).map(|i| self.utilities[i].max(b[i])).collect();
                let delta = (0..inst.n()).map(|i| (b[i] - self.utilities[i]).max(0.0)).collect();
                (u, delta)
            }
        }
    }

    /// Dual objective minus the primal objective of the winning-set allocation.
    pub fn gap(&self, inst: &MarketInstance) -> f64 {
        let (u, delta) = self.primal(inst);
        duality_gap(inst, self.psi, &u, &delta)
    }
}

/// `ψ − (Σ B_i log u_i − Σ δ_i + C)`; infinite when some `u_i` vanishes.
pub fn duality_gap(inst: &MarketInstance, psi: f64, u: &[f64], delta: &[f64]) -> f64 {
    let b = inst.budgets();
    if u.iter().any(|&x| x <= 0.0) {
        return f64::INFINITY;
    }
    let primal: f64 = (0..inst.n()).map(|i| b[i] * u[i].ln() - delta[i]).sum();
    psi - primal - gap_constant(b)
}

/// Symmetric Jacobian `∂w/∂β` as `(row, col, value)` triplets, from the
/// motion of crossings interior to grid segments.
pub fn utility_jacobian(inst: &MarketInstance, env: &PiecewiseLinearFunction) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for p in 1..env.len() {
        if env.segments[p] != env.segments[p - 1] {
            continue;
        }
        let (i, j) = (env.owners[p - 1], env.owners[p]);
        if i == j {
            continue;
        }
        let x = env.breakpoints[p];
        let k = env.segments[p];
        let slope_gap = env.pieces[p].c - env.pieces[p - 1].c;
        if !(slope_gap > 0.0) {
            continue;
        }
        let vi = inst.piece(i, k).density(x).max(0.0);
        let vj = inst.piece(j, k).density(x).max(0.0);
        out.push((i, i, vi * vi / slope_gap));
        out.push((j, j, vj * vj / slope_gap));
        out.push((i, j, -vi * vj / slope_gap));
        out.push((j, i, -vi * vj / slope_gap));
    }
    out
}

/// Writes `theta, p_star, beta1_v1, …` rows sampled on a uniform grid of
/// `points` values plus both ends of every envelope piece.
pub fn write_plot_csv<W: Write>(mut out: W, inst: &MarketInstance, beta: &[f64], points: usize) -> std::io::Result<()> {
    let env = upper_envelope(inst, beta);
    let mut samples: Vec<(f64, usize)> = (0..points.max(2))
        .map(|s| {
            let theta = s as f64 / (points.max(2) - 1) as f64;
            (theta, env.locate(theta))
        })
        .collect();
    for p in 0..env.len() {
        samples.push((env.breakpoints[p], p));
        samples.push((env.breakpoints[p + 1], p));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    samples.dedup();

    write!(out, "theta,p_star")?;
    for i in 1..=inst.n() {
        write!(out, ",beta{i}_v{i}")?;
    }
    writeln!(out)?;
    for (theta, p) in samples {
        let k = env.segments[p];
        write!(out, "{theta},{}", env.pieces[p].density(theta))?;
        for i in 0..inst.n() {
            write!(out, ",{}", beta[i] * inst.piece(i, k).density(theta))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
