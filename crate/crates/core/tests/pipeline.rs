use driftfv::diagnostics::{
    apriori_sums, check_entropy_inequality, discrete_entropy, discrete_production, AprioriSums, DiagnosticsRecorder,
};
use driftfv::harness::reference::ReferenceSpec;
use driftfv::harness::{builtin_case, compute_reference, l1_error, sweep, SweepSpec};
use driftfv::mesh::CellField;
use driftfv::scheme::{run, State};
use proptest::prelude::*;

fn case1_diagnostics(lambda_sq: f64, dt: f64) -> (f64, AprioriSums) {
    let case = builtin_case("case1").unwrap();
    let mesh = case.mesh(160).unwrap();
    let data = case.data(&mesh);
    let params = case.params(lambda_sq, dt);
    let mut rec = DiagnosticsRecorder::new();
    run(&mesh, &data, &params, &mut [&mut rec]).unwrap();
    let check = check_entropy_inequality(&rec.records, dt, lambda_sq);
    assert!(check.holds(), "{check:?}");
    (check.summed_production, apriori_sums(&rec.records, dt))
}

fn max_over_min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min)
}

#[test]
fn dissipation_is_uniform_in_lambda() {
    let runs: Vec<(f64, AprioriSums)> = [1.0, 1e-2, 1e-5, 1e-9, 0.0]
        .iter()
        .map(|&l| case1_diagnostics(l, 1e-3))
        .collect();
    let summed: Vec<f64> = runs.iter().map(|r| r.0).collect();
    assert!(max_over_min(&summed) <= 10.0, "{summed:?}");
    for i in 0..4 {
        let v: Vec<f64> = runs.iter().map(|r| r.1.as_array()[i]).collect();
        assert!(v.iter().all(|x| x.is_finite() && *x > 0.0));
        assert!(max_over_min(&v) <= 10.0, "sum {i}: {v:?}");
    }
}

#[test]
fn apriori_sums_are_stable_under_dt_refinement() {
    for l in [1.0, 1e-5, 0.0] {
        let (_, a) = case1_diagnostics(l, 1e-3);
        let (_, b) = case1_diagnostics(l, 5e-4);
        for (x, y) in a.as_array().iter().zip(b.as_array()) {
            assert!((x - y).abs() < 0.25 * x, "lambda^2 = {l}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn error_decreases_with_dt() {
    let case = builtin_case("case1").unwrap();
    let reference = ReferenceSpec { cells: 1280, dt: 1e-4 };
    let snap = compute_reference(&case, reference.cells, reference.dt, 1.0, None).unwrap();
    let fine = case.mesh(reference.cells).unwrap();
    let mesh = case.mesh(160).unwrap();
    let data = case.data(&mesh);
    let mut last = f64::INFINITY;
    for dt in [1e-3, 5e-4] {
        let s = run(&mesh, &data, &case.params(1.0, dt), &mut []).unwrap();
        let e = l1_error(&mesh, &s.final_state, &fine, &snap).unwrap();
        assert!(e.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(e[0] < last, "{e:?}");
        last = e[0];
    }
}

#[test]
fn halving_dt_never_grows_the_error() {
    let spec = SweepSpec {
        case: builtin_case("case1").unwrap(),
        lambdas: vec![1.0, 1e-9, 0.0],
        dts: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
        cells: vec![160],
        reference: ReferenceSpec { cells: 160, dt: 1e-4 },
    };
    let table = sweep(&spec, None).unwrap();
    for &l in &spec.lambdas {
        let errs: Vec<[f64; 3]> = spec
            .dts
            .iter()
            .map(|&dt| table.get(l, dt, 1.0 / 160.0).unwrap().outcome.as_ref().unwrap().err)
            .collect();
        for w in errs.windows(2) {
            for i in 0..3 {
                assert!(w[1][i] <= 1.05 * w[0][i], "lambda^2 = {l}: {errs:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_and_production_are_nonnegative(
        n in prop::collection::vec(0.05f64..1.5, 12),
        p in prop::collection::vec(0.05f64..1.5, 12),
        psi in prop::collection::vec(-5.0f64..5.0, 12),
        lambda_sq in 0.0f64..2.0,
    ) {
        let case = builtin_case("case1").unwrap();
        let mesh = case.mesh(12).unwrap();
        let data = case.data(&mesh);
        let state = State { step: 0, t: 0.0, n: CellField(n), p: CellField(p), psi: CellField(psi) };
        let e = discrete_entropy(&mesh, &data, lambda_sq, &state).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(discrete_production(&mesh, &data, &state).unwrap() >= 0.0);
        let at_data = State {
            n: data.nd_cells.clone(),
            p: data.pd_cells.clone(),
            psi: data.psid_cells.clone(),
            ..state.clone()
        };
        prop_assert!(discrete_entropy(&mesh, &data, lambda_sq, &at_data).unwrap() < 1e-14);
        if state.n.max_abs_diff(&data.nd_cells) > 1e-3 {
            prop_assert!(e > 0.0);
        }
    }
}
