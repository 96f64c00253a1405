//! Small reference markets used in tests, docs and the CLI smoke checks.

use crate::market::{LinearPiece, MarketInstance, Mode};

/// Four buyers with linear valuations `v_i(θ) = 2(1 − d_i)θ + d_i` on a single segment.
pub fn linear_four() -> MarketInstance {
    let d = [1.2, 0.6, 0.3, 1.9];
    MarketInstance::new(
        Mode::Linear,
        vec![0.1, 0.3, 0.2, 0.4],
        &[0.0, 1.0],
        d.iter().map(|d| vec![2.0 * (1.0 - d)]).collect(),
        d.iter().map(|&d| vec![d]).collect(),
    )
    .expect("fixture is valid")
}

pub const PIECEWISE_FOUR_BREAKPOINTS: [f64; 4] = [0.0, 0.3741, 0.8147, 1.0];
pub const PIECEWISE_FOUR_BUDGETS: [f64; 4] = [0.2270, 0.2584, 0.2642, 0.2505];
pub const PIECEWISE_FOUR_C: [[f64; 3]; 4] = [
    [1.2887, 1.6253, -0.4692],
    [-1.2494, -0.2604, -0.1476],
    [-0.4802, -1.7084, 1.1019],
    [-0.0501, 2.5419, 1.2096],
];
pub const PIECEWISE_FOUR_D: [[f64; 3]; 4] = [
    [1.9391, -0.2972, 1.3209],
    [0.4674, 0.4864, 0.1476],
    [0.4137, 1.3919, -0.0462],
    [0.4262, 0.6464, 0.8471],
];

/// Four buyers with three-piece valuations on a shared grid.
pub fn piecewise_four() -> MarketInstance {
    MarketInstance::new(
        Mode::Linear,
        PIECEWISE_FOUR_BUDGETS.to_vec(),
        &PIECEWISE_FOUR_BREAKPOINTS,
        PIECEWISE_FOUR_C.iter().map(|r| r.to_vec()).collect(),
        PIECEWISE_FOUR_D.iter().map(|r| r.to_vec()).collect(),
    )
    .expect("fixture is valid")
}

/// Raw pieces of [`piecewise_four`] on its middle segment.
pub fn piecewise_four_middle() -> Vec<LinearPiece> {
    (0..4)
        .map(|i| LinearPiece::new(PIECEWISE_FOUR_C[i][1], PIECEWISE_FOUR_D[i][1]))
        .collect()
}
