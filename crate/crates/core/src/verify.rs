//! Independent certificates for an allocation: KKT residuals against the
//! envelope rebuilt from `β`, and budget-weighted fairness.

use serde::{Deserialize, Serialize};

use crate::dual::{EquilibriumResult, PureAllocation};
use crate::envelope::{dual_objective, duality_gap, upper_envelope, PiecewiseLinearFunction};
use crate::market::{eval_interval, MarketInstance, Mode};

pub use crate::oracle::{discretized_oracle, OracleConfig, OracleResult};

pub const FAIR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Price mass of the parts of `[0, 1]` nobody receives.
    pub market_clear_residual: f64,
    /// `|⟨p, x_i⟩ − (B_i − β_i δ_i)|`.
    pub budget_residuals: Vec<f64>,
    /// `|⟨v_i, x_i⟩ + δ_i − B_i/β_i|`.
    pub utility_price_residuals: Vec<f64>,
    /// `⟨p − β_i v_i, x_i⟩`.
    pub comp_slack_residuals: Vec<f64>,
    /// `sup_{x_i} |p − β_i v_i|`, not part of `pass`.
    pub comp_slack_sup: Vec<f64>,
    pub duality_gap: f64,
    /// `δ_i (1 − β_i)`, quasilinear only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ql_delta_residuals: Option<Vec<f64>>,
    /// Length assigned to more than one buyer.
    pub overlap: f64,
    /// `∫ p`.
    pub p_mass: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl KktReport {
    /// Largest residual of any kind.
    pub fn worst(&self) -> f64 {
        let mut all = vec![self.market_clear_residual, self.duality_gap.abs(), self.overlap];
        all.extend(&self.budget_residuals);
        all.extend(&self.utility_price_residuals);
        all.extend(&self.comp_slack_residuals);
        if let Some(r) = &self.ql_delta_residuals {
            all.extend(r);
        }
        all.into_iter().fold(0.0, f64::max)
    }
}

/// `(∫_{x_i} (p − β_i v_i), sup_{x_i} |p − β_i v_i|)`.
fn comp_slack(
    inst: &MarketInstance,
    env: &PiecewiseLinearFunction,
    alloc: &PureAllocation,
    i: usize,
    beta: f64,
) -> (f64, f64) {
    let mut integral = 0.0;
    let mut worst: f64 = 0.0;
    for iv in alloc.intervals[i].iter().filter(|iv| !iv.is_empty()) {
        for p in env.locate(iv.lo)..env.len() {
            let piv = env.interval(p);
            if piv.lo >= iv.hi {
                break;
            }
            let Some(part) = piv.intersect(iv) else { continue };
            if part.is_empty() {
                continue;
            }
            let own = inst.piece(i, env.segments()[p]);
            integral += eval_interval(env.pieces()[p], part) - beta * eval_interval(own, part);
            for theta in [part.lo, part.hi] {
                worst = worst.max((env.pieces()[p].density(theta) - beta * own.density(theta)).abs());
            }
        }
    }
    (integral.abs(), worst)
}

/// KKT residuals of `alloc` at utility prices `beta`. Never fails: a bad
/// allocation simply produces a report with `pass = false`.
pub fn check_equilibrium(
    inst: &MarketInstance,
    alloc: &PureAllocation,
    beta: &[f64],
    delta: Option<&[f64]>,
    tol: f64,
) -> KktReport {
    let n = inst.n();
    let b = inst.budgets();
    let zeros = vec![0.0; n];
    let delta = delta.unwrap_or(&zeros);
    let env = upper_envelope(inst, beta);
    let market_clear_residual = alloc.uncovered().iter().map(|&iv| env.integral_over(iv)).sum();
    let spend: Vec<f64> = (0..n)
        .map(|i| alloc.intervals[i].iter().map(|&iv| env.integral_over(iv)).sum())
        .collect();
    let value = alloc.utilities(inst);
    let budget_residuals: Vec<f64> = (0..n).map(|i| (spend[i] - (b[i] - beta[i] * delta[i])).abs()).collect();
    let utility_price_residuals: Vec<f64> = (0..n).map(|i| (value[i] + delta[i] - b[i] / beta[i]).abs()).collect();
    let (comp_slack_residuals, comp_slack_sup): (Vec<f64>, Vec<f64>) =
        (0..n).map(|i| comp_slack(inst, &env, alloc, i, beta[i])).unzip();
    let psi = dual_objective(inst, beta).unwrap_or(f64::INFINITY);
    let u: Vec<f64> = (0..n).map(|i| value[i] + delta[i]).collect();
    let gap = duality_gap(inst, psi, &u, delta);
    let ql_delta_residuals = match inst.mode() {
        Mode::Quasilinear => Some((0..n).map(|i| (delta[i] * (1.0 - beta[i])).abs()).collect()),
        Mode::Linear => None,
    };
    let p_mass = env.integral();
    let mut report = KktReport {
        market_clear_residual,
        budget_residuals,
        utility_price_residuals,
        comp_slack_residuals,
        comp_slack_sup,
        duality_gap: gap,
        ql_delta_residuals,
        overlap: alloc.overlap(),
        p_mass,
        tolerance: tol,
        pass: false,
    };
    let mass_ok = inst.mode() == Mode::Quasilinear || (p_mass - 1.0).abs() <= tol;
    report.pass = mass_ok && report.worst() <= tol && gap.is_finite();
    report
}

/// [`check_equilibrium`] on a solver result.
pub fn check_result(inst: &MarketInstance, res: &EquilibriumResult, tol: f64) -> KktReport {
    check_equilibrium(inst, &res.allocation, &res.beta, res.delta.as_deref(), tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// `E_ij = ⟨v_i, x_j⟩/B_j − ⟨v_i, x_i⟩/B_i`.
    pub envy: Vec<Vec<f64>>,
    /// `⟨v_i, x_i⟩ − B_i v_i(Θ)/‖B‖₁`.
    pub proportionality: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pareto_gap: Option<f64>,
}

impl FairnessReport {
    /// Builds the report from `values[i][j] = ⟨v_i, x_j⟩`.
    pub fn from_values(values: &[Vec<f64>], budgets: &[f64], totals: &[f64]) -> Self {
        let n = budgets.len();
        let total_budget: f64 = budgets.iter().sum();
        let envy = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            values[i][j] / budgets[j] - values[i][i] / budgets[i]
                        }
                    })
                    .collect()
            })
            .collect();
        let proportionality = (0..n)
            .map(|i| values[i][i] - budgets[i] / total_budget * totals[i])
            .collect();
        FairnessReport {
            envy,
            proportionality,
            pareto_gap: None,
        }
    }

    pub fn max_envy(&self) -> f64 {
        self.envy.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_proportionality(&self) -> f64 {
        self.proportionality.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.max_envy() <= tol && self.min_proportionality() >= -tol && self.pareto_gap.is_none_or(|g| g <= tol)
    }
}

/// Envy and proportionality of a pure allocation, in normalized units.
pub fn fairness(inst: &MarketInstance, alloc: &PureAllocation) -> FairnessReport {
    let n = inst.n();
    let values: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| alloc.value(inst, i, j)).collect())
        .collect();
    let totals: Vec<f64> = (0..n).map(|i| inst.total_value(i)).collect();
    FairnessReport::from_values(&values, inst.budgets(), &totals)
}

/// Both reports for a solver result; the Pareto gap is the certified duality gap.
pub fn certify(inst: &MarketInstance, res: &EquilibriumResult, tol: f64) -> (KktReport, FairnessReport) {
    let kkt = check_result(inst, res, tol);
    let mut fair = fairness(inst, &res.allocation);
    fair.pareto_gap = Some(kkt.duality_gap);
    (kkt, fair)
}
