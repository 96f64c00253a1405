use std::path::PathBuf;

use fisher_fair_core::conic::{emit_conic_program, feasible_point, ConicProgram};
use fisher_fair_core::generate::{sample_document, sample_instance};
use fisher_fair_core::verify::{certify, check_result};
use fisher_fair_core::{solve, EquilibriumResult, MarketInstance, Mode, SolveConfig};
use proptest::prelude::*;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn data_files_solve_and_certify() {
    for name in ["linear_four.json", "piecewise_four.json", "quasilinear_three.json"] {
        let inst = MarketInstance::load(data(name)).unwrap();
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        assert!(res.gap <= 1e-8, "{name}: gap {}", res.gap);
        let kkt = check_result(&inst, &res, 1e-6);
        assert!(kkt.pass, "{name}: {kkt:?}");
    }
}

#[test]
fn result_file_roundtrip_reverifies() {
    let inst = MarketInstance::load(data("piecewise_four.json")).unwrap();
    let res = solve(&inst, &SolveConfig::default()).unwrap();
    let back = EquilibriumResult::from_json(&res.to_json().unwrap()).unwrap();
    assert_eq!(back, res);
    let (kkt, fair) = certify(&inst, &back, 1e-6);
    assert!(kkt.pass && fair.pass(1e-6));
}

#[test]
fn equilibrium_utilities_fit_the_conic_program() {
    let inst = MarketInstance::load(data("piecewise_four.json")).unwrap();
    let res = solve(&inst, &SolveConfig::default()).unwrap();
    let cp = emit_conic_program(&inst);
    let cp = ConicProgram::from_json(&cp.to_json().unwrap()).unwrap();
    let x = feasible_point(&inst, &cp, &res.segment_utilities);
    assert!(cp.max_violation(&x) < 1e-8);
    let back = cp.ingest(&x).unwrap();
    for (row, want) in back.iter().zip(&res.segment_utilities) {
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn raw_units_survive_rescaling() {
    let doc = sample_document(3, 2, 11, Mode::Linear);
    let mut scaled = doc.clone();
    for b in scaled.budgets.iter_mut() {
        *b *= 7.0;
    }
    let a = solve(&MarketInstance::from_document(doc).unwrap(), &SolveConfig::default()).unwrap();
    let b = solve(&MarketInstance::from_document(scaled).unwrap(), &SolveConfig::default()).unwrap();
    for (x, y) in a.beta.iter().zip(&b.beta) {
        assert!((x - y).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_markets_certify(n in 1usize..7, k in 1usize..5, seed in 0u64..100_000) {
        let inst = sample_instance(n, k, seed, Mode::Linear);
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        let (kkt, fair) = certify(&inst, &res, 1e-6);
        prop_assert!(kkt.pass, "{:?}", kkt);
        prop_assert!(fair.pass(1e-6), "{:?}", fair);
        let covered: f64 = res.allocation.intervals.iter().flatten().map(|iv| iv.len()).sum::<f64>()
            + res.allocation.leftover.iter().map(|iv| iv.len()).sum::<f64>();
        prop_assert!((covered - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_quasilinear_markets_certify(n in 1usize..6, k in 1usize..4, seed in 0u64..100_000) {
        let inst = sample_instance(n, k, seed, Mode::Quasilinear);
        let res = solve(&inst, &SolveConfig::default()).unwrap();
        let kkt = check_result(&inst, &res, 1e-6);
        prop_assert!(kkt.pass, "{:?}", kkt);
        prop_assert!(res.beta.iter().all(|&b| b > 0.0 && b <= 1.0));
    }
}
