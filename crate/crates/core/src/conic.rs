//! Standard-form conic program for the equilibrium utilities: sparse linear
//! equalities over variables grouped into nonnegative, rotated second-order
//! (parabola) and exponential cones.
//!
//! Cone conventions: `soc3 (a, b, c)` means `a ≥ ‖(b, c)‖₂`; `exp3 (x, y, z)`
//! means `x ≥ y·exp(z/y)` with `y > 0`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::normalize_segment;
use crate::market::{MarketInstance, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeKind {
    Nonneg,
    Soc3,
    Exp3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    #[serde(rename = "type")]
    pub kind: ConeKind,
    pub vars: Vec<usize>,
}

/// `minimize objective·x  s.t.  rows,  x ∈ cones`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub cones: Vec<Cone>,
    pub var_names: Vec<String>,
}

impl ConicProgram {
    fn var(&mut self, name: String) -> usize {
        self.objective.push(0.0);
        self.var_names.push(name);
        self.var_names.len() - 1
    }

    fn nonneg(&mut self, name: String) -> usize {
        let v = self.var(name);
        self.cones.push(Cone {
            kind: ConeKind::Nonneg,
            vars: vec![v],
        });
        v
    }

    fn row(&mut self, terms: &[(usize, f64)], rhs: f64) {
        self.rows.push(Row {
            cols: terms.iter().map(|t| t.0).collect(),
            vals: terms.iter().map(|t| t.1).collect(),
            rhs,
        });
    }

    /// Adds `Σ terms + slack = rhs` with a fresh nonnegative slack.
    fn le(&mut self, terms: &[(usize, f64)], rhs: f64, name: String) {
        let s = self.nonneg(name);
        let mut all = terms.to_vec();
        all.push((s, 1.0));
        self.row(&all, rhs);
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.cols.len()).sum()
    }

    pub fn count(&self, kind: ConeKind) -> usize {
        self.cones.iter().filter(|c| c.kind == kind).count()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|n| n == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or cone at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            let lhs: f64 = r.cols.iter().zip(&r.vals).map(|(&c, v)| v * x[c]).sum();
            worst = worst.max((lhs - r.rhs).abs());
        }
        for c in &self.cones {
            let v: Vec<f64> = c.vars.iter().map(|&i| x[i]).collect();
            let viol = match c.kind {
                ConeKind::Nonneg => -v[0],
                ConeKind::Soc3 => v[1].hypot(v[2]) - v[0],
                ConeKind::Exp3 => {
                    if v[1] <= 0.0 {
                        f64::INFINITY
                    } else {
                        v[1] * (v[2] / v[1]).exp() - v[0]
                    }
                }
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Maps a solution vector back to per-buyer per-segment utilities `u[i][k]`.
    pub fn ingest(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.num_vars() {
            return Err(Error::Format(format!(
                "solution has {} entries, program has {} variables",
                x.len(),
                self.num_vars()
            )));
        }
        let mut found: HashMap<(usize, usize), f64> = HashMap::new();
        let (mut n, mut k) = (0, 0);
        for (name, &v) in self.var_names.iter().zip(x) {
            if let Some((i, kk)) = parse_pair(name, "u") {
                found.insert((i, kk), v);
                n = n.max(i + 1);
                k = k.max(kk + 1);
            }
        }
        let mut out = vec![vec![0.0; k]; n];
        for ((i, kk), v) in found {
            out[i][kk] = v;
        }
        Ok(out)
    }
}

fn parse_pair(name: &str, prefix: &str) -> Option<(usize, usize)> {
    let inner = name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Builds the program whose optimum gives equilibrium utilities `u[i,k]`.
///
/// Per buyer: `u[i]`, `q[i]`, `one[i]` with `(u[i], one[i], q[i])` exponential
/// and the objective `−Σ B_i q[i]` (plus `Σ delta[i]` in quasilinear mode).
/// Per segment `k` with `m` active buyers in `σ` order: scaled utilities
/// `uh[j,k]`, and for each adjacent pair `s, t, z, wn` (with `wn = −w`) plus
/// `tp = (1+t)/2`, `tm = (1−t)/2` so that `(tp, tm, s)` is a second-order cone.
pub fn emit_conic_program(inst: &MarketInstance) -> ConicProgram {
    let mut cp = ConicProgram {
        objective: Vec::new(),
        rows: Vec::new(),
        cones: Vec::new(),
        var_names: Vec::new(),
    };
    let n = inst.n();
    let kk = inst.k();
    let b = inst.budgets();

    let u: Vec<usize> = (0..n).map(|i| cp.var(format!("u[{i}]"))).collect();
    let q: Vec<usize> = (0..n).map(|i| cp.var(format!("q[{i}]"))).collect();
    let one: Vec<usize> = (0..n).map(|i| cp.var(format!("one[{i}]"))).collect();
    for i in 0..n {
        cp.objective[q[i]] = -b[i];
        cp.row(&[(one[i], 1.0)], 1.0);
        cp.cones.push(Cone {
            kind: ConeKind::Exp3,
            vars: vec![u[i], one[i], q[i]],
        });
    }
    let delta: Option<Vec<usize>> = (inst.mode() == Mode::Quasilinear).then(|| {
        (0..n)
            .map(|i| {
                let d = cp.nonneg(format!("delta[{i}]"));
                cp.objective[d] = 1.0;
                d
            })
            .collect()
    });

    let uik: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..kk).map(|k| cp.nonneg(format!("u[{i},{k}]"))).collect())
        .collect();
    for i in 0..n {
        let mut terms = vec![(u[i], 1.0)];
        terms.extend((0..kk).map(|k| (uik[i][k], -1.0)));
        if let Some(d) = &delta {
            terms.push((d[i], -1.0));
        }
        cp.row(&terms, 0.0);
    }

    for k in 0..kk {
        let seg = normalize_segment(inst, k);
        let m = seg.sigma.len();
        for i in 0..n {
            if !seg.is_active(i) {
                cp.row(&[(uik[i][k], 1.0)], 0.0);
            }
        }
        let uh: Vec<usize> = (0..m).map(|j| cp.nonneg(format!("uh[{j},{k}]"))).collect();
        for (j, &i) in seg.sigma.iter().enumerate() {
            cp.row(&[(uik[i][k], 1.0), (uh[j], -seg.lambda[i])], 0.0);
        }
        let mut z = Vec::new();
        let mut wn = Vec::new();
        for (j, g) in seg.g_matrices().into_iter().enumerate() {
            let s = cp.nonneg(format!("s[{j},{k}]"));
            let t = cp.nonneg(format!("t[{j},{k}]"));
            let zj = cp.nonneg(format!("z[{j},{k}]"));
            let wj = cp.nonneg(format!("wn[{j},{k}]"));
            let tp = cp.var(format!("tp[{j},{k}]"));
            let tm = cp.var(format!("tm[{j},{k}]"));
            cp.row(&[(zj, -1.0), (s, g[0][0]), (t, g[0][1])], 0.0);
            cp.row(&[(wj, 1.0), (s, g[1][0]), (t, g[1][1])], 0.0);
            cp.le(&[(zj, 1.0)], 1.0, format!("slack_z[{j},{k}]"));
            cp.le(&[(wj, 1.0)], 1.0, format!("slack_wn[{j},{k}]"));
            cp.le(&[(wj, 1.0), (zj, -1.0)], 0.0, format!("slack_zw[{j},{k}]"));
            cp.row(&[(tp, 1.0), (t, -0.5)], 0.5);
            cp.row(&[(tm, 1.0), (t, 0.5)], 0.5);
            cp.cones.push(Cone {
                kind: ConeKind::Soc3,
                vars: vec![tp, tm, s],
            });
            z.push(zj);
            wn.push(wj);
        }
        for j in 0..m {
            let name = format!("slack_chain[{j},{k}]");
            if m == 1 {
                cp.le(&[(uh[0], 1.0)], 1.0, name);
            } else if j == 0 {
                cp.le(&[(uh[0], 1.0), (z[0], -1.0)], 0.0, name);
            } else if j + 1 < m {
                cp.le(&[(uh[j], 1.0), (z[j], -1.0), (wn[j - 1], 1.0)], 0.0, name);
            } else {
                cp.le(&[(uh[j], 1.0), (wn[j - 1], 1.0)], 1.0, name);
            }
        }
    }
    cp
}

/// A feasible point of [`emit_conic_program`] for per-segment utilities that
/// pass membership, with auxiliaries taken from the partition's cut points.
pub fn feasible_point(inst: &MarketInstance, cp: &ConicProgram, segment_utilities: &[Vec<f64>]) -> Vec<f64> {
    let mut x = vec![0.0; cp.num_vars()];
    let mut set = |name: String, v: f64| {
        if let Some(i) = cp.index_of(&name) {
            x[i] = v;
        }
    };
    let n = inst.n();
    let b = inst.budgets();
    for i in 0..n {
        let total: f64 = segment_utilities[i].iter().sum();
        let (ui, di) = match inst.mode() {
            Mode::Linear => (total, 0.0),
            Mode::Quasilinear => (total.max(b[i]), (b[i] - total).max(0.0)),
        };
        set(format!("u[{i}]"), ui);
        set(format!("q[{i}]"), ui.ln());
        set(format!("one[{i}]"), 1.0);
        set(format!("delta[{i}]"), di);
        for (k, &v) in segment_utilities[i].iter().enumerate() {
            set(format!("u[{i},{k}]"), v);
        }
    }
    for k in 0..inst.k() {
        let seg = normalize_segment(inst, k);
        let u: Vec<f64> = (0..n).map(|i| segment_utilities[i][k]).collect();
        let u_hat = seg.to_normalized(&u);
        let (ends, _) = seg.greedy_cuts(&u);
        let w = seg.hi - seg.lo;
        let cuts: Vec<f64> = ends.iter().map(|e| ((e - seg.lo) / w).clamp(0.0, 1.0)).collect();
        let aux = seg.aux_from_cuts(&cuts);
        let m = u_hat.len();
        for (j, &v) in u_hat.iter().enumerate() {
            set(format!("uh[{j},{k}]"), v);
        }
        for (j, a) in aux.iter().enumerate() {
            set(format!("s[{j},{k}]"), a.s);
            set(format!("t[{j},{k}]"), a.t);
            set(format!("z[{j},{k}]"), a.z);
            set(format!("wn[{j},{k}]"), -a.w);
            set(format!("tp[{j},{k}]"), (1.0 + a.t) / 2.0);
            set(format!("tm[{j},{k}]"), (1.0 - a.t) / 2.0);
            set(format!("slack_z[{j},{k}]"), 1.0 - a.z);
            set(format!("slack_wn[{j},{k}]"), 1.0 + a.w);
            set(format!("slack_zw[{j},{k}]"), a.z + a.w);
        }
        for j in 0..m {
            let slack = if m == 1 {
                1.0 - u_hat[0]
            } else if j == 0 {
                aux[0].z - u_hat[0]
            } else if j + 1 < m {
                aux[j].z + aux[j - 1].w - u_hat[j]
            } else {
                1.0 + aux[j - 1].w - u_hat[j]
            };
            set(format!("slack_chain[{j},{k}]"), slack);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve, SolveConfig};
    use crate::fixtures;

    #[test]
    fn counts_for_four_by_three() {
        let inst = crate::generate::sample_instance(4, 3, 7, Mode::Linear);
        let cp = emit_conic_program(&inst);
        assert_eq!(cp.count(ConeKind::Exp3), 4);
        assert_eq!(cp.count(ConeKind::Soc3), 9);
        let (n, k) = (4, 3);
        assert!(cp.num_vars() <= 40 * n * k);
        assert!(cp.rows.len() <= 20 * n * k);
        assert!(cp.nonzeros() <= 80 * n * k);
    }

    #[test]
    fn single_buyer_has_no_parabola() {
        let inst = MarketInstance::new(Mode::Linear, vec![1.0], &[0.0, 1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let cp = emit_conic_program(&inst);
        assert_eq!(cp.count(ConeKind::Soc3), 0);
        let x = feasible_point(&inst, &cp, &[vec![1.0]]);
        assert!(cp.max_violation(&x) < 1e-12);
        let mut over = x.clone();
        over[cp.index_of("u[0,0]").unwrap()] = 1.5;
        over[cp.index_of("uh[0,0]").unwrap()] = 1.5;
        over[cp.index_of("u[0]").unwrap()] = 1.5;
        assert!(cp.max_violation(&over) > 0.4);
    }

    #[test]
    fn equilibrium_is_feasible_and_optimal_value_matches() {
        for (inst, mode) in [
            (fixtures::piecewise_four(), Mode::Linear),
            (fixtures::piecewise_four(), Mode::Quasilinear),
        ] {
            let inst = inst.with_mode(mode);
            let res = solve(&inst, &SolveConfig::default()).unwrap();
            let cp = emit_conic_program(&inst);
            let x = feasible_point(&inst, &cp, &res.segment_utilities);
            assert!(cp.max_violation(&x) < 1e-9, "{}", cp.max_violation(&x));
            let b = inst.budgets();
            let delta = res.delta.clone().unwrap_or(vec![0.0; 4]);
            let want: f64 = (0..4)
                .map(|i| -b[i] * (res.utilities[i] + delta[i]).ln() + delta[i])
                .sum();
            assert!((cp.objective_value(&x) - want).abs() < 1e-9);
            let back = cp.ingest(&x).unwrap();
            assert_eq!(back, res.segment_utilities);
        }
    }

    #[test]
    fn json_roundtrip() {
        let cp = emit_conic_program(&fixtures::linear_four());
        let text = cp.to_json().unwrap();
        let back = ConicProgram::from_json(&text).unwrap();
        assert_eq!(back, cp);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["cones"][0]["type"].is_string());
        assert!(cp.ingest(&[0.0]).is_err());
    }
}
