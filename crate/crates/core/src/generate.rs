//! Random instances: shared sorted breakpoints, nonnegative linear pieces
//! drawn through their endpoint values, and random positive budgets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market::{Breakpoints, InstanceDocument, MarketInstance, Mode};

/// Raw document for a random `n`-buyer, `k`-segment instance. Deterministic per seed.
pub fn sample_document(n: usize, k: usize, seed: u64, mode: Mode) -> InstanceDocument {
    assert!(n >= 1 && k >= 1, "need at least one buyer and one segment");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let budgets = raw.iter().map(|b| b / total).collect();

    let mut points: Vec<f64> = (1..k).map(|_| rng.gen_range(0.0..1.0)).collect();
    points.sort_by(f64::total_cmp);
    points.insert(0, 0.0);
    points.push(1.0);

    let mut c = vec![vec![0.0; k]; n];
    let mut d = vec![vec![0.0; k]; n];
    for i in 0..n {
        for j in 0..k {
            let (lo, hi) = (points[j], points[j + 1]);
            let vl: f64 = rng.gen_range(0.0..1.0);
            let vh: f64 = rng.gen_range(0.0..1.0);
            let slope = if hi > lo { (vh - vl) / (hi - lo) } else { 0.0 };
            c[i][j] = slope;
            // Intercept chosen so the left endpoint value is exact.
            d[i][j] = vl - slope * lo;
        }
    }
    InstanceDocument {
        mode,
        budgets,
        breakpoints: Breakpoints::Shared(points),
        c,
        d,
    }
}

/// [`sample_document`] loaded into a normalized instance.
pub fn sample_instance(n: usize, k: usize, seed: u64, mode: Mode) -> MarketInstance {
    let doc = sample_document(n, k, seed, mode);
    match MarketInstance::from_document(doc) {
        Ok(inst) => inst,
        // Breakpoints drawn within the dedup tolerance of each other: redraw.
        Err(_) => sample_instance(n, k, seed.wrapping_add(0x9e37_79b9_7f4a_7c15), mode),
    }
}
