mod support;

use occulimits::analysis::{
    bounds_report, dual_from_expansion, verify_long_run_optimality, BoundsOptions,
};
use occulimits::dp::Plan;
use occulimits::measures::{prg_detect, Periodicity};
use occulimits::model::{
    constant_cost_model, example1_model, example2_model, load_model, model_to_json, parse_model,
};
use occulimits::programs::DualCertificate;

#[test]
fn example1_bounds_report() {
    let model = example1_model(0.5).unwrap();
    let y0 = model.initial_state().unwrap();
    let ts = [1, 2, 5, 10, 100, 1000];
    let r = bounds_report(&model, y0, &ts, &[0.5, 0.1, 0.01], BoundsOptions::default()).unwrap();
    assert!((r.k_star_y0 + 0.25).abs() < 1e-9);
    assert!((r.d_star_y0 + 0.25).abs() < 1e-9);
    assert!(r.sandwich_ok);
    assert!(r.strong_duality);
    for (p, &t) in r.vt_curve.iter().zip(&ts) {
        assert!((p.value - (-0.25 + 0.75 / t as f64)).abs() < 1e-12);
    }
}

#[test]
fn example1_textbook_certificate() {
    let model = example1_model(0.5).unwrap();
    let y0 = model.initial_state().unwrap();
    let states: Vec<f64> = model.states().iter().map(|s| s.coords[0]).collect();
    let dual = DualCertificate {
        mu: -0.25,
        psi: states.iter().map(|y| -y.abs() / 2.0).collect(),
        eta: states.iter().map(|y| y + y.abs() / 2.0).collect(),
    };
    assert!(dual.slack(&model, y0, None).unwrap().holds(1e-12));
    let optimal = Plan::StationaryDeterministic(vec![1, 0]);
    let v = verify_long_run_optimality(&model, &optimal, &dual, y0, 1, 50, 1e-9).unwrap();
    assert!(v.certified);
    let flipped = Plan::StationaryDeterministic(vec![0, 1]);
    let v = verify_long_run_optimality(&model, &flipped, &dual, y0, 1, 50, 1e-9).unwrap();
    assert!(!v.certified);
    assert!(v.cost_residual.unwrap() >= 0.25);
}

#[test]
fn example1_dual_from_expansion() {
    let model = example1_model(0.5).unwrap();
    let d = dual_from_expansion(&model, &[100, 200]).unwrap();
    for (y, s) in model.states().iter().enumerate() {
        let x = s.coords[0];
        assert!((d.v[y] + x.abs() / 2.0).abs() < 1e-9);
        assert!((d.eta[y] - (x + x.abs() / 2.0)).abs() < 1e-9);
    }
    assert!(d.residual < 1e-9);
}

#[test]
fn example2_dual_from_expansion_is_a_step() {
    let model = example2_model(6, 2f64.powi(-6)).unwrap();
    let d = dual_from_expansion(&model, &[1000, 2000]).unwrap();
    for (y, s) in model.states().iter().enumerate() {
        let want = if s.coords[0] <= 0.0 { -0.625 } else { 0.0 };
        assert!(
            (d.v[y] - want).abs() < 0.03,
            "state {}: {}",
            s.coords[0],
            d.v[y]
        );
    }
}

#[test]
fn example1_optimal_plan_is_periodic_from_one() {
    let model = example1_model(0.5).unwrap();
    let y0 = model.initial_state().unwrap();
    let plan = Plan::StationaryDeterministic(vec![1, 0]);
    let p = prg_detect(&model, &plan, y0, 40, 1e-10).unwrap();
    assert_eq!(p, Some(Periodicity { t0: 1, period: 1 }));
}

#[test]
fn example2_negative_start_is_periodic_from_one() {
    let model = example2_model(8, 2f64.powi(-8)).unwrap();
    let y0 = model.find_state(&[-0.5], 1e-12).unwrap();
    // slot 0 is the lowest admissible control: -1 for y <= 0, y for y > 0
    let plan = Plan::StationaryDeterministic(vec![0; model.num_states()]);
    let p = prg_detect(&model, &plan, y0, 40, 1e-10).unwrap();
    assert_eq!(p, Some(Periodicity { t0: 1, period: 1 }));
}

#[test]
fn example2_positive_orbit_is_not_periodic() {
    let (model, y0) = support::example2_orbit_model(0.5, 60);
    let plan = Plan::StationaryDeterministic(vec![0; model.num_states()]);
    assert_eq!(prg_detect(&model, &plan, y0, 60, 1e-10).unwrap(), None);
}

#[test]
fn constant_cost_collapses_every_bound() {
    let model = constant_cost_model(4, 0.3).unwrap();
    let r = bounds_report(
        &model,
        2,
        &[1, 10, 100],
        &[0.5, 0.01],
        BoundsOptions::default(),
    )
    .unwrap();
    assert!((r.k_star_y0 - 0.3).abs() < 1e-12);
    assert!((r.d_star_y0 - 0.3).abs() < 1e-12);
    assert!((r.k_star - 0.3).abs() < 1e-12);
    assert!(r.gap.abs() < 1e-12);
    assert!(r.vt_curve.iter().all(|p| (p.value - 0.3).abs() < 1e-12));
    assert!(r.heps_curve.iter().all(|p| (p.value - 0.3).abs() < 1e-9));
    let d = dual_from_expansion(&model, &[10, 20]).unwrap();
    assert!(d.v.iter().all(|v| (v - 0.3).abs() < 1e-12));
    assert!(d.eta.iter().all(|e| e.abs() < 1e-9));
    assert!(d.residual < 1e-12);
}

#[test]
fn model_file_round_trip() {
    for model in [
        example1_model(-0.75).unwrap(),
        example2_model(3, 0.25).unwrap(),
        support::brute_force_model(),
    ] {
        let text = model_to_json(&model);
        assert_eq!(parse_model(&text).unwrap(), model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }
}

#[test]
fn malformed_file_is_rejected() {
    assert!(parse_model("{\"states\": [[0.0]]}").is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(load_model(dir.path().join("missing.json")).is_err());
}
