//! Market instances on the unit interval: linear pieces, the shared breakpoint
//! grid, load-time validation and normalization, and the two closed-form
//! primitives `eval` and `cut`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};

/// Breakpoints closer than this are merged when the grid is unified.
pub const GRID_EPS: f64 = 1e-12;
/// Below this slope magnitude `cut` inverts the density as a constant.
pub const C_EPS: f64 = 1e-12;
/// Accuracy of `eval(cut(..)) == u0`.
pub const CUT_TOL: f64 = 1e-10;
/// Slightly negative discriminants down to this value are treated as tangency.
pub const DISCRIMINANT_CLAMP: f64 = 1e-10;
/// Slack allowed on nonnegativity of raw densities at segment endpoints.
pub const NONNEG_TOL: f64 = 1e-6;

/// One linear piece of a valuation, `v(θ) = c·θ + d` in global coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPiece {
    pub c: f64,
    pub d: f64,
}

impl LinearPiece {
    pub const ZERO: LinearPiece = LinearPiece { c: 0.0, d: 0.0 };

    pub fn new(c: f64, d: f64) -> Self {
        LinearPiece { c, d }
    }

    #[inline]
    pub fn density(&self, theta: f64) -> f64 {
        self.c * theta + self.d
    }

    pub fn scaled(&self, s: f64) -> Self {
        LinearPiece {
            c: self.c * s,
            d: self.d * s,
        }
    }

    /// Integral of the density over `iv`.
    #[inline]
    pub fn eval(&self, iv: Interval) -> f64 {
        eval_interval(*self, iv)
    }
}

/// A closed subinterval `[lo, hi]` of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Interval { lo, hi }
    }

    pub fn empty_at(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }
}

/// `∫_{lo}^{hi} (cθ + d) dθ = (c/2)(hi² − lo²) + d(hi − lo)`.
#[inline]
pub fn eval_interval(piece: LinearPiece, iv: Interval) -> f64 {
    let len = iv.hi - iv.lo;
    len * (piece.c * 0.5 * (iv.hi + iv.lo) + piece.d)
}

/// Finds `b ∈ [a, segment_end]` with `eval(piece, [a, b]) = u0`.
///
/// The quadratic is solved in the displacement `x = b − a`:
/// `(c/2)x² + v(a)x − u0 = 0`, whose relevant root is
/// `x = 2u0 / (v(a) + √(v(a)² + 2c·u0))`.
pub fn cut(piece: LinearPiece, a: f64, u0: f64, segment_end: f64) -> Result<f64> {
    if u0 <= 0.0 {
        return Ok(a);
    }
    let available = eval_interval(piece, Interval::new(a, segment_end.max(a)));
    let slack = CUT_TOL * available.abs().max(1.0);
    if u0 > available + slack {
        return Err(Error::UnreachableUtility {
            requested: u0,
            available,
        });
    }
    if u0 >= available {
        return Ok(segment_end);
    }
    let va = piece.density(a).max(0.0);
    let x = if piece.c.abs() < C_EPS {
        if va <= C_EPS {
            return Err(Error::DegeneratePiece { requested: u0 });
        }
        u0 / va
    } else {
        let mut disc = va * va + 2.0 * piece.c * u0;
        if disc < 0.0 {
            if disc >= -DISCRIMINANT_CLAMP {
                disc = 0.0;
            } else {
                return Err(Error::UnreachableUtility {
                    requested: u0,
                    available,
                });
            }
        }
        let denom = va + disc.sqrt();
        if denom <= 0.0 {
            return Err(Error::DegeneratePiece { requested: u0 });
        }
        2.0 * u0 / denom
    };
    Ok((a + x).clamp(a, segment_end))
}

/// Sorted breakpoints `0 = a_0 < a_1 < … < a_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointGrid {
    points: Vec<f64>,
}

impl BreakpointGrid {
    /// Validates and deduplicates (at [`GRID_EPS`]) a breakpoint list.
    pub fn new(points: &[f64]) -> std::result::Result<Self, ValidationError> {
        Ok(BreakpointGrid {
            points: dedup_grid(points)?,
        })
    }

    pub fn uniform(k: usize) -> Self {
        let k = k.max(1);
        BreakpointGrid {
            points: (0..=k).map(|j| j as f64 / k as f64).collect(),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of segments `K`.
    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn segment(&self, k: usize) -> Interval {
        Interval::new(self.points[k], self.points[k + 1])
    }

    /// Index of the segment containing `theta` (right-closed on the last one).
    pub fn locate(&self, theta: f64) -> usize {
        let k = self.points.partition_point(|&a| a <= theta);
        k.saturating_sub(1).min(self.segments() - 1)
    }
}

/// Returns the validated breakpoint list with near-duplicates removed, and for
/// each kept segment the index of the original segment it came from.
fn dedup_grid_with_map(points: &[f64]) -> std::result::Result<(Vec<f64>, Vec<usize>), ValidationError> {
    if points.len() < 2 {
        return Err(ValidationError::Shape {
            what: "breakpoints".into(),
            expected: 2,
            found: points.len(),
        });
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(ValidationError::NonFinite {
            what: "breakpoints".into(),
        });
    }
    let first = points[0];
    let last = points[points.len() - 1];
    if first.abs() > GRID_EPS || (last - 1.0).abs() > GRID_EPS {
        return Err(ValidationError::GridEndpoints { first, last });
    }
    let mut kept = vec![0.0];
    let mut map = Vec::new();
    for (j, w) in points.windows(2).enumerate() {
        if w[1] < w[0] - GRID_EPS {
            return Err(ValidationError::UnsortedGrid {
                index: j + 1,
                previous: w[0],
                value: w[1],
            });
        }
        let end = if j + 2 == points.len() { 1.0 } else { w[1] };
        if end - kept[kept.len() - 1] > GRID_EPS {
            kept.push(end);
            map.push(j);
        } else if j + 2 == points.len() {
            // Last point collapsed onto its predecessor: snap to exactly 1.
            let n = kept.len();
            kept[n - 1] = 1.0;
        }
    }
    if kept.len() < 2 {
        return Err(ValidationError::GridEndpoints { first, last });
    }
    Ok((kept, map))
}

fn dedup_grid(points: &[f64]) -> std::result::Result<Vec<f64>, ValidationError> {
    dedup_grid_with_map(points).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Linear,
    Quasilinear,
}

/// Breakpoints in an instance file: either one grid shared by every buyer
/// or one private grid per buyer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Breakpoints {
    Shared(Vec<f64>),
    PerBuyer(Vec<Vec<f64>>),
}

/// On-disk instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    #[serde(default)]
    pub mode: Mode,
    pub budgets: Vec<f64>,
    pub breakpoints: Breakpoints,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

/// A validated, grid-unified and normalized market.
///
/// Linear mode: budgets sum to one and every valuation integrates to one.
/// Quasilinear mode: budgets and valuations share one scale factor chosen so
/// that budgets sum to one. `value_scale` maps normalized utilities back to
/// the units of the loaded document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    mode: Mode,
    budgets: Vec<f64>,
    grid: BreakpointGrid,
    /// `pieces[i][k]` is buyer `i`'s valuation on segment `k`.
    pieces: Vec<Vec<LinearPiece>>,
    value_scale: Vec<f64>,
    budget_scale: f64,
}

impl MarketInstance {
    /// Builds an instance from raw data on a shared grid.
    pub fn new(mode: Mode, budgets: Vec<f64>, breakpoints: &[f64], c: Vec<Vec<f64>>, d: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_document(InstanceDocument {
            mode,
            budgets,
            breakpoints: Breakpoints::Shared(breakpoints.to_vec()),
            c,
            d,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_document(doc: InstanceDocument) -> Result<Self> {
        let n = doc.budgets.len();
        if n == 0 {
            return Err(ValidationError::NoBuyers.into());
        }
        check_rows("c", &doc.c, n)?;
        check_rows("d", &doc.d, n)?;
        for (i, &b) in doc.budgets.iter().enumerate() {
            if !b.is_finite() {
                return Err(ValidationError::NonFinite {
                    what: format!("budget of buyer {i}"),
                }
                .into());
            }
            if b <= 0.0 {
                return Err(ValidationError::NonpositiveBudget { buyer: i, value: b }.into());
            }
        }

        // Per-buyer grids (validated and deduplicated) with coefficient rows.
        let buyer_grids: Vec<(Vec<f64>, Vec<LinearPiece>)> = match &doc.breakpoints {
            Breakpoints::Shared(points) => {
                let (grid, map) = dedup_grid_with_map(points)?;
                (0..n)
                    .map(|i| {
                        let row = buyer_row(i, points.len() - 1, &doc.c[i], &doc.d[i])?;
                        Ok((grid.clone(), map.iter().map(|&j| row[j]).collect()))
                    })
                    .collect::<Result<_>>()?
            }
            Breakpoints::PerBuyer(grids) => {
                if grids.len() != n {
                    return Err(ValidationError::Shape {
                        what: "per-buyer breakpoints".into(),
                        expected: n,
                        found: grids.len(),
                    }
                    .into());
                }
                grids
                    .iter()
                    .enumerate()
                    .map(|(i, points)| {
                        let (grid, map) = dedup_grid_with_map(points)?;
                        let row = buyer_row(i, points.len() - 1, &doc.c[i], &doc.d[i])?;
                        Ok((grid, map.iter().map(|&j| row[j]).collect()))
                    })
                    .collect::<Result<_>>()?
            }
        };

        // Union grid; each buyer's coefficients are replicated onto every
        // union segment inside one of its own segments.
        let mut union: Vec<f64> = buyer_grids.iter().flat_map(|(g, _)| g.iter().copied()).collect();
        union.sort_by(f64::total_cmp);
        let grid = BreakpointGrid::new(&union)?;
        let mut pieces = Vec::with_capacity(n);
        for (i, (own, row)) in buyer_grids.iter().enumerate() {
            let mut out = Vec::with_capacity(grid.segments());
            for k in 0..grid.segments() {
                let seg = grid.segment(k);
                let mid = 0.5 * (seg.lo + seg.hi);
                let j = own.partition_point(|&a| a <= mid).saturating_sub(1).min(row.len() - 1);
                let piece = row[j];
                for theta in [seg.lo, seg.hi] {
                    let v = piece.density(theta);
                    if v < -NONNEG_TOL {
                        return Err(ValidationError::NegativeDensity {
                            buyer: i,
                            segment: k,
                            theta,
                            value: v,
                        }
                        .into());
                    }
                }
                out.push(piece);
            }
            pieces.push(out);
        }

        let raw = MarketInstance {
            mode: doc.mode,
            budgets: doc.budgets.clone(),
            grid,
            pieces,
            value_scale: vec![1.0; n],
            budget_scale: 1.0,
        };
        for i in 0..n {
            if raw.total_value(i) <= 0.0 {
                return Err(ValidationError::ZeroValueBuyer { buyer: i }.into());
            }
        }
        Ok(raw.normalized())
    }

    /// Rescales budgets and valuations to the canonical form of the mode.
    /// Applying it to an already normalized instance is the identity.
    pub fn normalized(&self) -> Self {
        let total_budget: f64 = self.budgets.iter().sum();
        let mut out = self.clone();
        if (total_budget - 1.0).abs() > 1e-12 {
            out.budgets = self.budgets.iter().map(|b| b / total_budget).collect();
            out.budget_scale = self.budget_scale * total_budget;
        }
        match self.mode {
            Mode::Linear => {
                for i in 0..self.n() {
                    let total = self.total_value(i);
                    if (total - 1.0).abs() <= 1e-12 {
                        continue;
                    }
                    out.pieces[i] = self.pieces[i].iter().map(|p| p.scaled(1.0 / total)).collect();
                    out.value_scale[i] = self.value_scale[i] * total;
                }
            }
            Mode::Quasilinear => {
                if (total_budget - 1.0).abs() > 1e-12 {
                    let s = 1.0 / total_budget;
                    for i in 0..self.n() {
                        out.pieces[i] = self.pieces[i].iter().map(|p| p.scaled(s)).collect();
                        out.value_scale[i] = self.value_scale[i] * total_budget;
                    }
                }
            }
        }
        out
    }

    /// Document holding the normalized data on the unified grid.
    pub fn to_document(&self) -> InstanceDocument {
        InstanceDocument {
            mode: self.mode,
            budgets: self.budgets.clone(),
            breakpoints: Breakpoints::Shared(self.grid.points().to_vec()),
            c: self.pieces.iter().map(|r| r.iter().map(|p| p.c).collect()).collect(),
            d: self.pieces.iter().map(|r| r.iter().map(|p| p.d).collect()).collect(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.budgets.len()
    }

    /// Number of grid segments `K`.
    pub fn k(&self) -> usize {
        self.grid.segments()
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn grid(&self) -> &BreakpointGrid {
        &self.grid
    }

    pub fn piece(&self, buyer: usize, segment: usize) -> LinearPiece {
        self.pieces[buyer][segment]
    }

    pub fn pieces(&self, buyer: usize) -> &[LinearPiece] {
        &self.pieces[buyer]
    }

    /// Raw-units utility per normalized unit, for each buyer.
    pub fn value_scale(&self) -> &[f64] {
        &self.value_scale
    }

    /// Raw-units budget per normalized unit.
    pub fn budget_scale(&self) -> f64 {
        self.budget_scale
    }

    /// `v_i(θ)`.
    pub fn density(&self, buyer: usize, theta: f64) -> f64 {
        self.pieces[buyer][self.grid.locate(theta)].density(theta)
    }

    /// `v_i` integrated over an arbitrary interval, crossing segments as needed.
    pub fn value(&self, buyer: usize, iv: Interval) -> f64 {
        if iv.hi <= iv.lo {
            return 0.0;
        }
        let first = self.grid.locate(iv.lo);
        let mut total = 0.0;
        for k in first..self.k() {
            let seg = self.grid.segment(k);
            if seg.lo >= iv.hi {
                break;
            }
            if let Some(part) = seg.intersect(&iv) {
                total += eval_interval(self.pieces[buyer][k], part);
            }
        }
        total
    }

    /// `v_i([0, 1])`.
    pub fn total_value(&self, buyer: usize) -> f64 {
        (0..self.k())
            .map(|k| eval_interval(self.pieces[buyer][k], self.grid.segment(k)))
            .sum()
    }

    /// `max_i sup_θ v_i(θ)`.
    pub fn max_density(&self) -> f64 {
        let mut best: f64 = 0.0;
        for row in &self.pieces {
            for (k, p) in row.iter().enumerate() {
                let seg = self.grid.segment(k);
                best = best.max(p.density(seg.lo)).max(p.density(seg.hi));
            }
        }
        best
    }

    /// Lower bounds of the box known to contain the optimal utility prices.
    pub fn beta_lower(&self) -> Vec<f64> {
        match self.mode {
            Mode::Linear => self.budgets.clone(),
            Mode::Quasilinear => (0..self.n())
                .map(|i| self.budgets[i] / (self.total_value(i) + self.budgets[i]))
                .collect(),
        }
    }

    /// Same instance with the quasilinear flag swapped; data untouched.
    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut out = self.clone();
        out.mode = mode;
        out
    }

    /// Buyers grouped by identical valuations, each group in index order.
    pub fn identical_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.n() {
            let same = |g: &Vec<usize>| {
                self.pieces[g[0]].iter().zip(&self.pieces[i]).all(|(a, b)| {
                    (a.c - b.c).abs() <= GRID_EPS * a.c.abs().max(1.0)
                        && (a.d - b.d).abs() <= GRID_EPS * a.d.abs().max(1.0)
                })
            };
            match groups.iter_mut().find(|g| same(g)) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        groups
    }

    /// One buyer per group, holding the group's pooled budget.
    pub fn merged(&self, groups: &[Vec<usize>]) -> MarketInstance {
        MarketInstance {
            mode: self.mode,
            budgets: groups
                .iter()
                .map(|g| g.iter().map(|&i| self.budgets[i]).sum())
                .collect(),
            grid: self.grid.clone(),
            pieces: groups.iter().map(|g| self.pieces[g[0]].clone()).collect(),
            value_scale: groups.iter().map(|g| self.value_scale[g[0]]).collect(),
            budget_scale: self.budget_scale,
        }
    }
}

fn check_rows(what: &str, rows: &[Vec<f64>], n: usize) -> Result<()> {
    if rows.len() != n {
        return Err(ValidationError::Shape {
            what: format!("rows of {what}"),
            expected: n,
            found: rows.len(),
        }
        .into());
    }
    Ok(())
}

fn buyer_row(i: usize, segments: usize, c: &[f64], d: &[f64]) -> Result<Vec<LinearPiece>> {
    for (name, row) in [("c", c), ("d", d)] {
        if row.len() != segments {
            return Err(ValidationError::Shape {
                what: format!("{name}[{i}]"),
                expected: segments,
                found: row.len(),
            }
            .into());
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(ValidationError::NonFinite {
                what: format!("{name}[{i}]"),
            }
            .into());
        }
    }
    Ok(c.iter().zip(d).map(|(&c, &d)| LinearPiece { c, d }).collect())
}
