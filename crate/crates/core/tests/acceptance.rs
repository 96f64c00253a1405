//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line each and exits nonzero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use fisher_fair_core::bench::run_grid;
use fisher_fair_core::ellipsoid::{ellipsoid_solve, EllipsoidConfig};
use fisher_fair_core::envelope::upper_envelope;
use fisher_fair_core::feasible::{membership, representation_admits, NormalizedSegment};
use fisher_fair_core::fixtures;
use fisher_fair_core::generate::sample_instance;
use fisher_fair_core::market::{cut, eval_interval};
use fisher_fair_core::oracle::{discretized_oracle, OracleConfig};
use fisher_fair_core::sda::mse_curve;
use fisher_fair_core::verify::{certify, check_result, FAIR_TOL};
use fisher_fair_core::{solve, Interval, LinearPiece, MarketInstance, Mode, SolveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn golden_linear() -> Outcome {
    let inst = fixtures::linear_four();
    let start = Instant::now();
    let res = solve(&inst, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let beta_err = max_abs_diff(&res.beta, &[0.8058, 0.8135, 0.7057, 0.6880]);
    let u_err = max_abs_diff(&res.utilities, &[0.1241, 0.3688, 0.2834, 0.5814]);
    let cuts = res.prices.owner_changes();
    let cut_err = if cuts.len() == 3 {
        max_abs_diff(&cuts, &[0.3713, 0.4921, 0.8199])
    } else {
        f64::INFINITY
    };
    let msg = format!("beta err {beta_err:.1e}, u err {u_err:.1e}, breakpoint err {cut_err:.1e}, {secs:.3}s");
    if beta_err <= 1e-3 && u_err <= 1e-3 && cut_err <= 1e-3 && secs < 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn piecewise_structure() -> Outcome {
    let inst = fixtures::piecewise_four();
    let res = solve(&inst, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let kkt = check_result(&inst, &res, 1e-6);
    let seg = inst.grid().segment(1);
    let mut ends: Vec<f64> = res
        .allocation
        .intervals
        .iter()
        .flatten()
        .filter(|iv| !iv.is_empty())
        .flat_map(|iv| [iv.lo, iv.hi])
        .filter(|&x| x > seg.lo + 1e-9 && x < seg.hi - 1e-9)
        .collect();
    ends.sort_by(f64::total_cmp);
    ends.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let target = [0.3789, 0.5815];
    let cut_err = if ends.len() == 2 {
        max_abs_diff(&ends, &target)
    } else {
        f64::INFINITY
    };
    let msg = format!(
        "gap {:.1e}, KKT pass {}, middle-segment cuts {:?} vs {:?} (err {:.1e})",
        res.gap, kkt.pass, ends, target, cut_err
    );
    if res.gap <= 1e-6 && kkt.pass && cut_err <= 2e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cross_solver() -> Outcome {
    let start = Instant::now();
    let cases: Vec<(usize, usize, u64)> = (0..30u64)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            (rng.gen_range(2..=5), rng.gen_range(2..=5), 3000 + s)
        })
        .collect();
    let rows: Vec<Result<f64, String>> = cases
        .par_iter()
        .map(|&(n, k, seed)| {
            let inst = sample_instance(n, k, seed, Mode::Linear);
            let d = solve(&inst, &SolveConfig::default()).map_err(|e| e.to_string())?;
            let cfg = EllipsoidConfig {
                epsilon: 1e-4,
                max_iter: None,
            };
            let e = ellipsoid_solve(&inst, &cfg)
                .map_err(|e| e.to_string())?
                .to_equilibrium(&inst);
            let o = discretized_oracle(&inst, &OracleConfig::default()).map_err(|e| e.to_string())?;
            Ok(max_abs_diff(&d.beta, &e.beta)
                .max(max_abs_diff(&d.beta, &o.beta))
                .max(max_abs_diff(&e.beta, &o.beta)))
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (r, c) in rows.iter().zip(&cases) {
        match r {
            Ok(x) => worst = worst.max(*x),
            Err(e) => return Err(format!("instance {c:?}: {e}")),
        }
    }
    let msg = format!("30 instances, worst pairwise beta difference {worst:.2e}, {secs:.1}s");
    if worst <= 5e-3 && secs < 300.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn kkt_fairness_suite() -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_envy = f64::NEG_INFINITY;
    let mut worst_prop = f64::INFINITY;
    let mut worst_mass: f64 = 0.0;
    let mut failures = Vec::new();
    for s in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + s);
        let (n, k) = (rng.gen_range(2..=10), rng.gen_range(1..=5));
        let inst = sample_instance(n, k, 8000 + s, Mode::Linear);
        let res = solve(&inst, &SolveConfig::default()).map_err(|e| format!("seed {s}: {e}"))?;
        let (kkt, fair) = certify(&inst, &res, 1e-6);
        worst_kkt = worst_kkt.max(kkt.worst());
        worst_envy = worst_envy.max(fair.max_envy());
        worst_prop = worst_prop.min(fair.min_proportionality());
        worst_mass = worst_mass.max((kkt.p_mass - 1.0).abs());
        if !(kkt.pass && fair.pass(FAIR_TOL)) {
            failures.push((n, k, 8000 + s));
        }
    }
    let msg = format!(
        "100 instances, worst KKT residual {worst_kkt:.1e}, |p mass - 1| {worst_mass:.1e}, \
         max envy {worst_envy:.1e}, min proportionality slack {worst_prop:.1e}, failures {failures:?}"
    );
    if failures.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sda_convergence() -> Outcome {
    let inst = fixtures::linear_four();
    let start = Instant::now();
    let star = solve(&inst, &SolveConfig::default()).map_err(|e| e.to_string())?.beta;
    let seeds: Vec<u64> = (1..=20).collect();
    let curve = mse_curve(&inst, 100_000, &seeds, &star);
    let secs = start.elapsed().as_secs_f64();
    let close = curve.final_errors.iter().filter(|&&e| e <= 0.05).count();
    let worst_ratio = curve
        .mse
        .iter()
        .zip(&curve.envelope)
        .map(|(m, e)| m / e)
        .fold(0.0, f64::max);
    let msg = format!(
        "max mse/envelope {worst_ratio:.2e} over {} checkpoints, {close}/20 runs within 0.05, {secs:.1}s",
        curve.t.len()
    );
    if curve.below_envelope() && close >= 18 && secs < 120.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_piece(rng: &mut ChaCha8Rng, seg: Interval) -> LinearPiece {
    let vl: f64 = if rng.gen_bool(0.15) {
        0.0
    } else {
        rng.gen_range(0.0..2.0)
    };
    let vh: f64 = if rng.gen_bool(0.15) {
        0.0
    } else {
        rng.gen_range(0.0..2.0)
    };
    let c = (vh - vl) / seg.len();
    LinearPiece::new(c, vl - c * seg.lo)
}

/// Whether some ordering of buyers over `cells` equal cells, each buyer
/// taking whole cells left to right plus a fraction of the last, meets `u`.
fn brute_force_member(pieces: &[LinearPiece], seg: Interval, u: &[f64], cells: usize) -> bool {
    let n = pieces.len();
    let h = seg.len() / cells as f64;
    let vals: Vec<Vec<f64>> = pieces
        .iter()
        .map(|&p| {
            (0..cells)
                .map(|j| eval_interval(p, Interval::new(seg.lo + j as f64 * h, seg.lo + (j + 1) as f64 * h)))
                .collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    permutations(&mut order, 0, &mut |ord| {
        let mut j = 0;
        let mut frac = 0.0;
        for &i in ord {
            let mut need = u[i];
            while need > 1e-12 {
                if j >= cells {
                    return false;
                }
                let avail = vals[i][j] * (1.0 - frac);
                if avail >= need {
                    frac += need / vals[i][j];
                    need = 0.0;
                } else {
                    need -= avail;
                    j += 1;
                    frac = 0.0;
                }
            }
        }
        true
    })
}

fn permutations(xs: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    if k == xs.len() {
        return f(xs);
    }
    for i in k..xs.len() {
        xs.swap(k, i);
        if permutations(xs, k + 1, f) {
            xs.swap(k, i);
            return true;
        }
        xs.swap(k, i);
    }
    false
}

fn feasible_representation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let pairs: Vec<(Vec<LinearPiece>, Interval, Vec<f64>)> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(1..=5);
            let lo: f64 = rng.gen_range(0.0..0.8);
            let seg = Interval::new(lo, rng.gen_range(lo + 0.05..=1.0));
            let pieces: Vec<LinearPiece> = (0..n).map(|_| random_piece(&mut rng, seg)).collect();
            let scale: f64 = rng.gen_range(0.1..1.2);
            let u: Vec<f64> = pieces
                .iter()
                .map(|&p| scale * rng.gen_range(0.0..1.0) * eval_interval(p, seg) / n as f64 * 3.2)
                .collect();
            (pieces, seg, u)
        })
        .collect();
    let verdicts: Vec<(bool, bool, bool)> = pairs
        .par_iter()
        .map(|(pieces, seg, u)| {
            let ns = NormalizedSegment::from_pieces(0, pieces, *seg);
            (
                membership(&ns, u),
                representation_admits(&ns, u, 1e-9),
                brute_force_member(pieces, *seg, u, 10_000),
            )
        })
        .collect();
    let members = verdicts.iter().filter(|v| v.0).count();
    let disagree = verdicts.iter().filter(|v| !(v.0 == v.1 && v.1 == v.2)).count();
    let msg = format!("1000 pairs, {members} members, {disagree} disagreements");
    if disagree == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bench_trend() -> Outcome {
    let seeds: Vec<u64> = (1..=8).collect();
    let rows = run_grid(&[50, 100], &[50, 100], &seeds, &SolveConfig::default(), Some(1)).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for n in [50, 100] {
        let t = |k: usize| {
            rows.iter()
                .find(|r| r.n == n && r.k == k)
                .map(|r| r.total_mean)
                .unwrap_or(f64::NAN)
        };
        let (a, b) = (t(50), t(100));
        let ratio = b / a;
        ok &= (1.2..=3.5).contains(&ratio) && a < 60.0 && b < 60.0;
        parts.push(format!("n={n}: K=50 {a:.4}s, K=100 {b:.4}s, ratio {ratio:.2}"));
    }
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn quasilinear_suite() -> Outcome {
    let cases: Vec<(usize, usize, u64)> = (0..30u64)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + s);
            (rng.gen_range(2..=5), rng.gen_range(1..=4), 600 + s)
        })
        .collect();
    let rows: Vec<Result<(bool, f64, f64, usize), String>> = cases
        .par_iter()
        .map(|&(n, k, seed)| {
            let inst = sample_instance(n, k, seed, Mode::Quasilinear);
            let res = solve(&inst, &SolveConfig::default()).map_err(|e| e.to_string())?;
            let kkt = check_result(&inst, &res, 1e-6);
            let delta_res = kkt
                .ql_delta_residuals
                .as_ref()
                .map_or(f64::INFINITY, |r| r.iter().copied().fold(0.0, f64::max));
            let o = discretized_oracle(&inst, &OracleConfig::default()).map_err(|e| e.to_string())?;
            let capped = res.beta.iter().filter(|&&b| b >= 1.0 - 1e-12).count();
            Ok((kkt.pass, delta_res, max_abs_diff(&res.beta, &o.beta), capped))
        })
        .collect();
    let mut worst_delta: f64 = 0.0;
    let mut worst_beta: f64 = 0.0;
    let mut capped = 0;
    let mut failed = Vec::new();
    for (r, c) in rows.iter().zip(&cases) {
        let (pass, d, b, cap) = r.clone().map_err(|e| format!("instance {c:?}: {e}"))?;
        worst_delta = worst_delta.max(d);
        worst_beta = worst_beta.max(b);
        capped += cap;
        if !pass || b > 5e-3 {
            failed.push(*c);
        }
    }
    let msg = format!(
        "30 instances ({capped} buyers at beta = 1), worst delta(1-beta) {worst_delta:.1e}, \
         worst oracle beta difference {worst_beta:.2e}, failures {failed:?}"
    );
    if failed.is_empty() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn primitive_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_cut: f64 = 0.0;
    for _ in 0..10_000 {
        let lo: f64 = rng.gen_range(0.0..0.9);
        let seg = Interval::new(lo, rng.gen_range(lo + 0.01..=1.0));
        let piece = random_piece(&mut rng, seg);
        let a = rng.gen_range(seg.lo..seg.hi);
        let avail = eval_interval(piece, Interval::new(a, seg.hi));
        let u0 = rng.gen_range(0.0..=1.0) * avail;
        if avail <= 0.0 {
            continue;
        }
        let b = cut(piece, a, u0, seg.hi).map_err(|e| e.to_string())?;
        worst_cut = worst_cut.max((eval_interval(piece, Interval::new(a, b)) - u0).abs());
    }
    let mut worst_env: f64 = 0.0;
    for s in 0..20u64 {
        let inst: MarketInstance = sample_instance(rng.gen_range(2..=8), rng.gen_range(1..=6), 900 + s, Mode::Linear);
        let beta: Vec<f64> = (0..inst.n()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let env = upper_envelope(&inst, &beta);
        for _ in 0..1000 {
            let theta: f64 = rng.gen_range(0.0..=1.0);
            let p = env.value_at(theta);
            let max = (0..inst.n())
                .map(|i| beta[i] * inst.density(i, theta))
                .fold(f64::NEG_INFINITY, f64::max);
            worst_env = worst_env.max((max - p).max(0.0)).max((p - max).abs());
        }
    }
    let msg = format!("worst cut/eval error {worst_cut:.1e}, worst envelope deviation {worst_env:.1e}");
    if worst_cut <= 1e-10 && worst_env <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 golden linear example", golden_linear),
        ("2 piecewise example structure", piecewise_structure),
        ("3 cross-solver agreement", cross_solver),
        ("4 KKT and fairness suite", kkt_fairness_suite),
        ("5 SDA convergence", sda_convergence),
        ("6 feasible-utility representation", feasible_representation),
        ("7 bench scaling trend", bench_trend),
        ("8 quasilinear suite", quasilinear_suite),
        ("9 primitive roundtrips", primitive_roundtrips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
