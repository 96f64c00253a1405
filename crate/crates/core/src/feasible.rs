//! Feasible utilities on a segment `[l, h]`: the normalizing transform, the
//! greedy membership oracle, interval partition recovery, and the auxiliary
//! variables `(s, t, z, w)` of the linear-plus-parabola representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{cut, eval_interval, Interval, LinearPiece, MarketInstance};

/// Buyers whose value on a segment is at most this are inactive there.
pub const LAMBDA_FLOOR: f64 = 1e-14;
/// Slack on the final boundary in membership and partition.
pub const MEM_TOL: f64 = 1e-9;

/// One grid segment after the normalizing transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSegment {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    /// Raw pieces in global coordinates, one per buyer.
    pub pieces: Vec<LinearPiece>,
    /// `Λ_i = v_i([l, h])`.
    pub lambda: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// Active buyers by descending `d̂` (stable, so equal intercepts keep index order).
    pub sigma: Vec<usize>,
}

pub fn normalize_segment(inst: &MarketInstance, k: usize) -> NormalizedSegment {
    let pieces: Vec<LinearPiece> = (0..inst.n()).map(|i| inst.piece(i, k)).collect();
    NormalizedSegment::from_pieces(k, &pieces, inst.grid().segment(k))
}

impl NormalizedSegment {
    pub fn from_pieces(index: usize, pieces: &[LinearPiece], seg: Interval) -> Self {
        let (l, h) = (seg.lo, seg.hi);
        let w = h - l;
        let n = pieces.len();
        let mut lambda = vec![0.0; n];
        let mut c_hat = vec![0.0; n];
        let mut d_hat = vec![0.0; n];
        for (i, p) in pieces.iter().enumerate() {
            let lam = eval_interval(*p, seg);
            lambda[i] = lam;
            if lam > LAMBDA_FLOOR {
                c_hat[i] = w * w * p.c / lam;
                d_hat[i] = w * (p.c * l + p.d) / lam;
            }
        }
        let mut sigma: Vec<usize> = (0..n).filter(|&i| lambda[i] > LAMBDA_FLOOR).collect();
        sigma.sort_by(|&a, &b| d_hat[b].total_cmp(&d_hat[a]));
        NormalizedSegment {
            index,
            lo: l,
            hi: h,
            pieces: pieces.to_vec(),
            lambda,
            c_hat,
            d_hat,
            sigma,
        }
    }

    pub fn n(&self) -> usize {
        self.pieces.len()
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.lo, self.hi)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.lambda[i] > LAMBDA_FLOOR
    }

    /// `v̂_i(θ) = ĉ_i θ + d̂_i` on `[0, 1]`.
    pub fn normalized_piece(&self, i: usize) -> LinearPiece {
        LinearPiece::new(self.c_hat[i], self.d_hat[i])
    }

    /// `G_j` for each adjacent pair `(σ(j), σ(j+1))`.
    pub fn g_matrices(&self) -> Vec<[[f64; 2]; 2]> {
        self.sigma
            .windows(2)
            .map(|p| {
                let (a, b) = (p[0], p[1]);
                [
                    [self.d_hat[a], self.c_hat[a] / 2.0],
                    [-self.d_hat[b], -self.c_hat[b] / 2.0],
                ]
            })
            .collect()
    }

    /// Per-buyer utilities mapped to the sorted normalized coordinates `u_{σ(j)}/Λ_{σ(j)}`.
    pub fn to_normalized(&self, u: &[f64]) -> Vec<f64> {
        self.sigma.iter().map(|&i| u[i] / self.lambda[i]).collect()
    }

    /// Greedy left-to-right cuts in `σ` order. Returns the cut ends (global
    /// coordinates, one per active buyer) and how far the demand overran `h`.
    pub fn greedy_cuts(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let mut ends = Vec::with_capacity(self.sigma.len());
        let mut a = self.lo;
        let mut overrun = 0.0;
        for &i in &self.sigma {
            let want = u[i].max(0.0);
            let avail = eval_interval(self.pieces[i], Interval::new(a, self.hi));
            if want >= avail {
                overrun += want - avail;
                a = self.hi;
            } else {
                a = cut(self.pieces[i], a, want, self.hi).unwrap_or(self.hi);
            }
            ends.push(a);
        }
        for i in 0..self.n() {
            if !self.is_active(i) {
                overrun += u[i].max(0.0);
            }
        }
        (ends, overrun)
    }

    /// Auxiliary variables built from normalized cut points `a_1 … a_{m-1}`.
    pub fn aux_from_cuts(&self, cuts: &[f64]) -> Vec<Aux> {
        self.sigma
            .windows(2)
            .zip(cuts)
            .map(|(p, &a)| {
                let left = self.normalized_piece(p[0]);
                let right = self.normalized_piece(p[1]);
                Aux {
                    s: a,
                    t: a * a,
                    z: eval_interval(left, Interval::new(0.0, a)),
                    w: -eval_interval(right, Interval::new(0.0, a)),
                }
            })
            .collect()
    }

    /// Whether `û` (sorted normalized coordinates) and `aux` satisfy the
    /// linear-plus-parabola system within `tol`.
    pub fn system_holds(&self, u_hat: &[f64], aux: &[Aux], tol: f64) -> bool {
        let m = self.sigma.len();
        if u_hat.len() != m || aux.len() + 1 != m.max(1) {
            return false;
        }
        if u_hat.iter().any(|&x| x < -tol) {
            return false;
        }
        for (j, (a, g)) in aux.iter().zip(self.g_matrices()).enumerate() {
            let ok = a.s >= -tol
                && a.s <= 1.0 + tol
                && a.t >= -tol
                && a.t <= 1.0 + tol
                && a.s * a.s <= a.t + tol
                && (g[0][0] * a.s + g[0][1] * a.t - a.z).abs() <= tol
                && (g[1][0] * a.s + g[1][1] * a.t - a.w).abs() <= tol
                && a.z >= -tol
                && a.z <= 1.0 + tol
                && a.w >= -1.0 - tol
                && a.w <= tol
                && a.z + a.w >= -tol;
            if !ok {
                return false;
            }
            let bound = if j == 0 { a.z } else { a.z + aux[j - 1].w };
            if u_hat[j] > bound + tol {
                return false;
            }
        }
        match m {
            0 => true,
            1 => u_hat[0] <= 1.0 + tol,
            _ => u_hat[m - 1] <= 1.0 + aux[m - 2].w + tol,
        }
    }
}

/// Auxiliary variables for one adjacent pair in `σ` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aux {
    pub s: f64,
    pub t: f64,
    pub z: f64,
    pub w: f64,
}

/// Exact membership of per-buyer utilities `u` (length `n`) in the feasible set of the segment.
pub fn membership(seg: &NormalizedSegment, u: &[f64]) -> bool {
    seg.greedy_cuts(u).1 <= MEM_TOL
}

/// Membership of sorted normalized utilities in the feasible set of `v̂_σ` on `[0, 1]`.
pub fn membership_normalized(seg: &NormalizedSegment, u_hat: &[f64]) -> bool {
    let mut a = 0.0;
    let mut overrun = 0.0;
    for (j, &i) in seg.sigma.iter().enumerate() {
        let p = seg.normalized_piece(i);
        let want = u_hat[j].max(0.0);
        let avail = eval_interval(p, Interval::new(a, 1.0));
        if want >= avail {
            overrun += want - avail;
            a = 1.0;
        } else {
            a = cut(p, a, want, 1.0).unwrap_or(1.0);
        }
    }
    overrun <= MEM_TOL
}

/// Whether the representation's constraint system admits `u`, with
/// auxiliaries built from the greedy normalized cut points.
pub fn representation_admits(seg: &NormalizedSegment, u: &[f64], tol: f64) -> bool {
    if (0..seg.n()).any(|i| !seg.is_active(i) && u[i] > tol) {
        return false;
    }
    let u_hat = seg.to_normalized(u);
    let mut a = 0.0;
    let mut cuts = Vec::with_capacity(u_hat.len());
    for (j, &i) in seg.sigma.iter().enumerate() {
        let p = seg.normalized_piece(i);
        let want = u_hat[j].max(0.0);
        let avail = eval_interval(p, Interval::new(a, 1.0));
        a = if want >= avail {
            1.0
        } else {
            cut(p, a, want, 1.0).unwrap_or(1.0)
        };
        cuts.push(a);
    }
    cuts.pop();
    let aux = seg.aux_from_cuts(&cuts);
    seg.system_holds(&u_hat, &aux, tol)
}

/// Splits `[l, h]` so each active buyer gets exactly `u_i` in `σ` order; the
/// last active buyer takes the remainder. Returns one interval per buyer.
pub fn partition(seg: &NormalizedSegment, u: &[f64]) -> Result<Vec<Interval>> {
    let mut out = vec![Interval::empty_at(seg.lo); seg.n()];
    for i in 0..seg.n() {
        if !seg.is_active(i) && u[i] > MEM_TOL {
            return Err(Error::InfeasibleUtilities {
                lo: seg.lo,
                hi: seg.hi,
                overrun: u[i],
            });
        }
    }
    let m = seg.sigma.len();
    let mut a = seg.lo;
    for (j, &i) in seg.sigma.iter().enumerate() {
        let want = u[i].max(0.0);
        let avail = eval_interval(seg.pieces[i], Interval::new(a, seg.hi));
        if want > avail + MEM_TOL {
            return Err(Error::InfeasibleUtilities {
                lo: seg.lo,
                hi: seg.hi,
                overrun: want - avail,
            });
        }
        let b = if j + 1 == m || want >= avail {
            seg.hi
        } else {
            cut(seg.pieces[i], a, want, seg.hi)?
        };
        out[i] = Interval::new(a, b);
        a = b;
    }
    Ok(out)
}
