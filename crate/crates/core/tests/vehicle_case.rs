use mfc_core::controllers::{ControlMode, GainDesign};
use mfc_core::plant::{check_perturbation_bound, FullState};
use mfc_core::sim::{run_closed_loop, ModelInit, SimConfig};
use mfc_core::vehicle::{build_case_study_plant, fit_perturbation_bound, CaseStudy};

#[test]
fn fitted_bound_covers_recorded_perturbation() {
    let case = CaseStudy::accel();
    let design = GainDesign::new(vec![1.0, 2.0], 0.15).unwrap();
    let scenario = case.scenario(ControlMode::MfcEfficient, &design, None).unwrap();
    let run = run_closed_loop(
        &scenario,
        &case.initial_condition(ModelInit::Exact),
        &SimConfig::new(1e-3, 30.0).unwrap(),
    )
    .unwrap();
    let samples = case.perturbation_samples(&run);
    let r_ref = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let bound = fit_perturbation_bound(&samples, r_ref);
    assert!(bound.delta0 > 0.0);
    let plant = build_case_study_plant(&case.params, &case.estimates).unwrap().plant;
    let states: Vec<(FullState, f64)> = run
        .times
        .iter()
        .zip(run.xi.iter().zip(&run.eta))
        .map(|(t, (xi, eta))| (FullState::new(xi.clone(), eta.clone()), *t))
        .collect();
    assert!(check_perturbation_bound(&plant, &bound, &states));
}

#[test]
fn slip_monitor_flags_aggressive_single_loop() {
    let case = CaseStudy::accel();
    let cfg = SimConfig::new(1e-3, 5.0).unwrap();
    let init = case.initial_condition(ModelInit::Exact);
    let flagged = |mode, eps| {
        let design = GainDesign::new(vec![1.0, 2.0], eps).unwrap();
        let run = run_closed_loop(&case.scenario(mode, &design, None).unwrap(), &init, &cfg).unwrap();
        assert!(run.aborted.is_none());
        run.monitor.as_ref().unwrap().flagged_samples
    };
    assert!(flagged(ControlMode::SingleLoop, 0.05) > 0);
    assert_eq!(flagged(ControlMode::MfcEfficient, 0.05), 0);
}

#[test]
fn friction_drop_switches_phases() {
    let case = CaseStudy::advanced_cruise();
    let design = GainDesign::new(vec![1.0, 2.0], 0.15).unwrap();
    let scenario = case.scenario(ControlMode::MfcEfficient, &design, None).unwrap();
    assert_eq!(scenario.phases().len(), 3);
    assert_eq!(scenario.phases()[1].start, 10.0);
}
