use std::f64::consts::{FRAC_PI_4, PI};

use ancilla::exec::ExecMode;
use ancilla::frames::ClosedForm;
use ancilla::protocols::{
    build_segments, robustness_scan, run, ErrorScope, ProtocolKind, ProtocolSpec, EXCITED, LEVEL_TWO,
};
use ancilla::qcore::SquareOperator;
use ancilla::schedules::ScheduleFn;
use ancilla::Error;

fn quick(kind: ProtocolKind) -> ProtocolSpec {
    ProtocolSpec::new(kind).with_steps(2000)
}

#[test]
fn cyclic4_starts_in_level_two_and_stitches_three_stages() {
    let r = run(&quick(ProtocolKind::Cyclic4)).unwrap();
    assert_eq!(r.rows[0].populations, vec![0.0, 0.0, 0.0, 1.0]);
    assert_eq!(r.rows.len(), 3001);
    assert!(r.rows.iter().all(|row| row.drives.omega2.is_some()));
    assert!(r.population_at(LEVEL_TWO, 1.5).unwrap() > 0.99);
}

#[test]
fn scan_is_identical_in_both_execution_modes() {
    let spec = quick(ProtocolKind::Cyclic3);
    let alphas = [-0.2, -0.05, 0.0, 0.1, 0.2];
    let a = robustness_scan(&spec, &alphas, ErrorScope::WholeProcess, ExecMode::Sequential).unwrap();
    let b = robustness_scan(&spec, &alphas, ErrorScope::WholeProcess, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|p| p.alpha).collect::<Vec<_>>(), alphas);
}

#[test]
fn error_scope_selects_the_stage() {
    let spec = quick(ProtocolKind::Cyclic3);
    let whole = robustness_scan(&spec, &[0.2], ErrorScope::WholeProcess, ExecMode::Sequential).unwrap()[0];
    let first = robustness_scan(&spec, &[0.2], ErrorScope::SingleStage(1), ExecMode::Sequential).unwrap()[0];
    let second = robustness_scan(&spec, &[0.2], ErrorScope::SingleStage(2), ExecMode::Sequential).unwrap()[0];
    // T/2 lies in stage 1, so only stage-1 errors reach it.
    assert_eq!(whole.p_excited, first.p_excited);
    assert!((second.p_excited - 1.0).abs() < 1e-9);
    assert!(second.p_zero < 1.0 - 1e-4);
    assert!(robustness_scan(&spec, &[0.1], ErrorScope::SingleStage(3), ExecMode::Sequential).is_err());
}

#[test]
fn singular_controls_report_their_time() {
    let mut spec = quick(ProtocolKind::Universal);
    spec.phi0 = FRAC_PI_4;
    spec.overrides.phi = Some(ScheduleFn::LinearRamp { intercept: -0.5, slope: 1.0 });
    match run(&spec) {
        Err(Error::SingularControl { t, .. }) => assert!((t - 0.5).abs() < 1e-12),
        other => panic!("expected a singular control, got {other:?}"),
    }
}

#[test]
fn closed_form_is_identity_at_start() {
    let segs = build_segments(&quick(ProtocolKind::Universal)).unwrap();
    let seg = &segs[0];
    let frame = seg.system.frame();
    let cf = ClosedForm::full(&*frame, &seg.system, &seg.grid, 1e-8).unwrap();
    assert_eq!(cf.operator_at(0).unwrap().distance(&SquareOperator::identity(3).unwrap()), 0.0);
}

#[test]
fn zero_drive_schedules_leave_the_state_alone() {
    let mut spec = quick(ProtocolKind::Universal);
    spec.overrides.theta = Some(ScheduleFn::Constant(0.3));
    spec.overrides.phi = Some(ScheduleFn::Constant(0.4));
    let r = run(&spec).unwrap();
    assert!(r.rows.iter().all(|row| row.populations[0] == 1.0));
    assert!(!r.failed());
}

#[test]
fn checkpoints_off_grid_are_errors() {
    let mut spec = ProtocolSpec::new(ProtocolKind::Cdd).with_steps(100);
    spec.checkpoints[0].at = 0.655;
    assert!(matches!(run(&spec), Err(Error::TimeOffGrid { .. })));
}

#[test]
fn nhqt_jump_sets_the_bright_phase() {
    // The bright path closes with phase pi + 2 gamma, so on theta = pi/2
    // the transfer probability is cos^2(gamma).
    for gamma in [PI, PI / 2.0, PI / 3.0, 0.4] {
        let mut spec = quick(ProtocolKind::Nhqt);
        spec.gamma = gamma;
        spec.checkpoints.clear();
        let r = run(&spec).unwrap();
        assert!(!r.failed());
        let p1 = r.population_at(1, 1.0).unwrap();
        assert!((p1 - gamma.cos().powi(2)).abs() < 1e-6, "gamma {gamma}: {p1}");
        assert!(r.population_at(EXCITED, 1.0).unwrap() < 1e-9);
    }
}

#[test]
fn coarse_stitching_carries_the_unnormalized_state() {
    for kind in [ProtocolKind::Cyclic3, ProtocolKind::Robustness, ProtocolKind::Cyclic4] {
        let report = run(&ProtocolSpec::new(kind).with_steps(200)).unwrap();
        assert!(report.norm_drift > 0.0);
        assert_eq!(report.rows.len(), 301);
    }
}
