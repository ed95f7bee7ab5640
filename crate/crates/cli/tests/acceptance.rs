//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use mfc_core::controllers::{
    controller_cost, mfc_initial_input, single_loop_initial_input, ControlMode, Controller, GainDesign,
};
use mfc_core::ctrlmath::{lyapunov_residual, solve_lyapunov, stability_margins, Matrix};
use mfc_core::plant::FullState;
use mfc_core::sim::{
    box_grid, mcl_benchmark, peaking_experiment, rk4_step, run_closed_loop, InitialCondition, ModelInit, SimConfig,
    SimError, SimResult,
};
use mfc_core::vehicle::{
    build_case_study_plant, case_study_pi_gains, from_byrnes, kmh_to_ms, powertrain_rhs, rad_s_to_rpm, CaseStudy,
    PowertrainState, VehicleParams,
};
use mfc_lab::presets::load_preset;
use mfc_lab::Resolved;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

fn within(limit_s: u64, started: Instant) -> (bool, f64) {
    let elapsed = started.elapsed();
    (elapsed < Duration::from_secs(limit_s), elapsed.as_secs_f64())
}

fn vehicle_run(case: &CaseStudy, mode: ControlMode, eps: f64, step: f64) -> SimResult {
    let design = GainDesign::new(vec![1.0, 2.0], eps).unwrap();
    let pi = mode.is_pi().then(|| case_study_pi_gains(&case.params));
    let scenario = case.scenario(mode, &design, pi).unwrap();
    let config = SimConfig::new(step, case.horizon).unwrap();
    run_closed_loop(&scenario, &case.initial_condition(ModelInit::Exact), &config).unwrap()
}

fn implementation_equivalence() -> Check {
    let started = Instant::now();
    let case = CaseStudy::accel();
    let efficient = vehicle_run(&case, ControlMode::MfcEfficient, 0.15, 1e-3);
    let classical = vehicle_run(&case, ControlMode::MfcClassical, 0.15, 1e-3);
    let scale = efficient
        .u
        .iter()
        .chain(&classical.u)
        .fold(0.0f64, |m, u| m.max(u.abs()));
    let gap = efficient
        .u
        .iter()
        .zip(&classical.u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let relative = gap / scale;
    let (fast, secs) = within(5, started);
    let complete = efficient.len() == 30_001 && classical.len() == 30_001;
    check(
        relative <= 1e-9 && fast && complete,
        format!("max |u_eff - u_cls| / max|u| = {relative:.3e} (<= 1e-9), {secs:.2} s (< 5 s)"),
    )
}

fn mcl_cost_reduction() -> Check {
    let started = Instant::now();
    let case = CaseStudy::accel();
    let efficient_states = controller_cost(ControlMode::MfcEfficient, 2, 3);
    let classical_states = controller_cost(ControlMode::MfcClassical, 2, 3);
    let phases = case.phases().unwrap();
    let model = phases[0].1.model.clone();
    let design = GainDesign::new(vec![1.0, 2.0], 0.15).unwrap();
    let efficient = Controller::new(ControlMode::MfcEfficient, design.clone(), None, model.clone()).unwrap();
    let classical = Controller::new(ControlMode::MfcClassical, design, None, model).unwrap();
    let start = case.initial_state();
    let config = SimConfig::new(1e-3, case.horizon).unwrap();
    let timing = mcl_benchmark(
        &efficient,
        &classical,
        &case.wheel_reference(),
        &start.xi,
        &start.eta,
        &config,
        5,
    )
    .unwrap();
    let reduction = timing.reduction();
    let (fast, secs) = within(10, started);
    check(
        efficient_states == 2 && classical_states == 5 && reduction >= 0.30 && fast,
        format!(
            "states {efficient_states} vs {classical_states}, MCL time {:.4} s vs {:.4} s, reduction {:.1}% (>= 30%), {secs:.2} s (< 10 s)",
            timing.efficient_seconds,
            timing.classical_seconds,
            100.0 * reduction
        ),
    )
}

/// Tail errors of MFC and single-loop control on the perturbed double
/// integrator from ten random initial states with ‖ξ₀‖ ≤ 5.
fn theorem1_tails() -> (Vec<(f64, f64)>, f64, [f64; 2]) {
    let mut seconds = [0.0; 2];
    let base: Resolved = load_preset("theorem1-toy").unwrap().resolve().unwrap();
    let eps = base.epsilon();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tails = Vec::new();
    for _ in 0..10 {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let radius: f64 = 5.0 * rng.gen::<f64>().sqrt();
        let xi0 = vec![radius * angle.cos(), radius * angle.sin()];
        let mut tail = |mode: ControlMode, slot: usize| {
            let started = Instant::now();
            let scenario = base.scenario(mode, eps).unwrap();
            let init = InitialCondition::new(xi0.clone(), vec![], ModelInit::Exact);
            let run = run_closed_loop(&scenario, &init, &base.sim).unwrap();
            assert!(run.aborted.is_none());
            let horizon = base.sim.horizon;
            let e = run.max_tracking_error_in(0.75 * horizon, horizon);
            seconds[slot] += started.elapsed().as_secs_f64();
            e
        };
        let mfc = tail(ControlMode::MfcEfficient, 0);
        let sl = tail(ControlMode::SingleLoop, 1);
        tails.push((mfc, sl));
    }
    (tails, eps, seconds)
}

fn theorem1_bound(tails: &[(f64, f64)], eps: f64, secs: f64) -> Check {
    let worst = tails.iter().map(|t| t.0).fold(0.0, f64::max);
    check(
        worst <= 0.1 && secs < 5.0,
        format!(
            "eps = {eps:.5}, worst MFC tail error {worst:.4e} (<= 0.1) over 10 initial states, {secs:.2} s (< 5 s)"
        ),
    )
}

fn corollary_parity(tails: &[(f64, f64)], secs: f64) -> Check {
    let worst_sl = tails.iter().map(|t| t.1).fold(0.0, f64::max);
    let worst_gap = tails.iter().map(|(mfc, sl)| (sl - mfc).abs() / mfc).fold(0.0, f64::max);
    check(
        worst_sl <= 0.1 && worst_gap <= 0.10 && secs < 5.0,
        format!(
            "worst single-loop tail {worst_sl:.4e} (<= 0.1), largest relative gap to MFC {:.2}% (<= 10%), {secs:.2} s (< 5 s)",
            100.0 * worst_gap
        ),
    )
}

fn peaking() -> Check {
    let started = Instant::now();
    let case = CaseStudy::accel();
    let start = case.initial_state();
    let grid: Vec<(Vec<f64>, Vec<f64>)> = box_grid(&start.xi, &[2.0, 2.0], 5, None)
        .unwrap()
        .into_iter()
        .map(|xi| (xi, start.eta.clone()))
        .collect();
    let config = SimConfig::new(1e-3, case.horizon).unwrap();
    let table = peaking_experiment(
        |mode, eps| {
            let design = GainDesign::new(vec![1.0, 2.0], eps).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            case.scenario(mode, &design, None)
                .map_err(|e| SimError::InvalidConfig(e.to_string()))
        },
        &grid,
        &[0.25, 0.05],
        &config,
    )
    .unwrap();
    let (coarse, fine) = (&table.rows[0], &table.rows[1]);
    let mfc_change = (fine.mfc_max - coarse.mfc_max).abs() / coarse.mfc_max;
    let sl_growth = (fine.single_loop_max - coarse.single_loop_max) / coarse.single_loop_max;
    let no_trip = table
        .rows
        .iter()
        .all(|r| !r.mfc_guard_tripped && !r.single_loop_guard_tripped);
    let (fast, secs) = within(60, started);
    check(
        fine.mfc_max < fine.single_loop_max && mfc_change < 0.20 && sl_growth > 0.50 && no_trip && fast,
        format!(
            "eps=0.05 grid max sup|u|: MFC {:.2} < SL {:.2}; MFC change {:.1}% (< 20%), SL growth {:.1}% (> 50%) from eps=0.25; {secs:.2} s (< 60 s)",
            fine.mfc_max,
            fine.single_loop_max,
            100.0 * mfc_change,
            100.0 * sl_growth
        ),
    )
}

fn initial_values() -> Check {
    let mut worst: f64 = 0.0;
    let mut bit_exact = true;
    for case in [CaseStudy::accel(), CaseStudy::decel(), CaseStudy::advanced_cruise()] {
        let start = case.initial_state();
        let model = case.phases().unwrap()[0].1.model.clone();
        let desired0 = case.wheel_reference().sample(0.0);
        let short = CaseStudy {
            horizon: 0.01,
            ..case.clone()
        };
        let mut mfc_inputs = Vec::new();
        for eps in [0.25, 0.15, 0.05] {
            let design = GainDesign::new(vec![1.0, 2.0], eps).unwrap();
            let scenario = short.scenario(ControlMode::MfcEfficient, &design, None).unwrap();
            let eta_hat0 = scenario.initial_estimate(&start.xi, &start.eta);
            let config = SimConfig::new(1e-3, short.horizon).unwrap();
            let mfc = run_closed_loop(&scenario, &short.initial_condition(ModelInit::Exact), &config).unwrap();
            let sl_scenario = short.scenario(ControlMode::SingleLoop, &design, None).unwrap();
            let sl = run_closed_loop(&sl_scenario, &short.initial_condition(ModelInit::Exact), &config).unwrap();
            let expected_mfc = mfc_initial_input(&model, design.k(), &start.xi, &eta_hat0, &desired0).unwrap();
            let expected_sl = single_loop_initial_input(&model, &design, &start.xi, &eta_hat0, &desired0).unwrap();
            worst = worst
                .max((mfc.u[0] - expected_mfc).abs() / expected_mfc.abs().max(1.0))
                .max((sl.u[0] - expected_sl).abs() / expected_sl.abs().max(1.0));
            mfc_inputs.push(mfc.u[0]);
        }
        bit_exact &= mfc_inputs.iter().all(|u| u.to_bits() == mfc_inputs[0].to_bits());
    }
    check(
        worst <= 1e-12 && bit_exact,
        format!(
            "largest relative u(0) deviation {worst:.3e} (<= 1e-12), MFC u(0) bit-identical across eps: {bit_exact}"
        ),
    )
}

fn kinematic_anchor() -> Check {
    let params = VehicleParams::paper_rwd();
    let rpm = rad_s_to_rpm(params.no_slip_crank_speed(kmh_to_ms(100.0)));
    let case = CaseStudy::cruise(100.0, 20.0);
    let run = vehicle_run(&case, ControlMode::MfcEfficient, 0.15, 1e-3);
    let (lo, hi) = run
        .xi
        .iter()
        .map(|x| rad_s_to_rpm(x[0] * params.gear_ratio))
        .fold((f64::MAX, f64::MIN), |(lo, hi), r| (lo.min(r), hi.max(r)));
    check(
        (rpm - 3609.0).abs() <= 0.02 * 3609.0 && lo >= 3000.0 && hi <= 4000.0 && run.aborted.is_none(),
        format!(
            "no-slip 100 km/h: {rpm:.1} rpm (3609 +- 2%), simulated cruise {lo:.1}..{hi:.1} rpm (within 3000..4000)"
        ),
    )
}

fn pi_margin() -> Check {
    let gains = case_study_pi_gains(&VehicleParams::paper_rwd());
    let margins = stability_margins(&gains.open_loop().unwrap()).unwrap();
    check(
        (margins.phase_margin_deg - 75.0).abs() <= 1.0 && (margins.crossover - 1.0).abs() <= 0.02,
        format!(
            "PM {:.3} deg (75 +- 1) at {:.4} rad/s (1.00 +- 2%), b0 = {:.4}",
            margins.phase_margin_deg, margins.crossover, gains.b0
        ),
    )
}

fn advanced_cruise() -> Check {
    let started = Instant::now();
    let case = CaseStudy::advanced_cruise();
    let mut tails = Vec::new();
    let mut peaks_ok = true;
    let mut bounded = true;
    let mut peaks = Vec::new();
    for eps in [0.25, 0.05] {
        let mfc = vehicle_run(&case, ControlMode::MfcEfficient, eps, 1e-3);
        let sl = vehicle_run(&case, ControlMode::SingleLoop, eps, 1e-3);
        bounded &= mfc.aborted.is_none() && sl.aborted.is_none();
        tails.push(mfc.max_tracking_error_in(10.0, case.horizon));
        let (pm, ps) = (mfc.peak_input_in(0.0, 1.0), sl.peak_input_in(0.0, 1.0));
        peaks_ok &= pm < ps;
        peaks.push((pm, ps));
    }
    let (fast, secs) = within(30, started);
    check(
        tails[1] < tails[0] && bounded && peaks_ok && fast,
        format!(
            "tail error on [10, 40] s: {:.4e} at eps=0.05 < {:.4e} at eps=0.25; no guard trip: {bounded}; initial peaks MFC/SL {:.1}/{:.1} and {:.1}/{:.1}; {secs:.2} s (< 30 s)",
            tails[1], tails[0], peaks[0].0, peaks[0].1, peaks[1].0, peaks[1].1
        ),
    )
}

fn numerical_kernels() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_residual: f64 = 0.0;
    for i in 0..100 {
        let n = 2 + i % 5;
        let data: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut a = Matrix::new(n, n, data).unwrap();
        let shift = a.norm_inf() + rng.gen_range(0.05..1.0);
        for j in 0..n {
            a[(j, j)] -= shift;
        }
        let p = solve_lyapunov(&a).unwrap();
        worst_residual = worst_residual.max(lyapunov_residual(&a, &p));
    }

    let h = 0.1;
    let worst_rk4 = (0..100)
        .map(|k| {
            let t = k as f64 * h;
            let x = rk4_step(|_, y| vec![-y[0]], t, &[(-t).exp()], h).unwrap();
            (x[0] - (-(t + h)).exp()).abs()
        })
        .fold(0.0, f64::max);

    let case = CaseStudy::accel();
    let params = case.params;
    let plant = build_case_study_plant(&params, &case.estimates).unwrap().plant;
    let torque = |t: f64| 120.0 + 60.0 * (0.7 * t).sin();
    let start = case.initial_state();
    let mut physical = from_byrnes(&params, &start).to_array().to_vec();
    let mut normal: Vec<f64> = start.xi.iter().chain(&start.eta).copied().collect();
    let mut worst_transform: f64 = 0.0;
    for k in 0..10_000 {
        let t = k as f64 * 1e-3;
        physical = rk4_step(
            |s, x| {
                powertrain_rhs(
                    &params,
                    &PowertrainState::from_slice(x),
                    torque(s),
                    params.road_friction,
                )
                .to_array()
                .to_vec()
            },
            t,
            &physical,
            1e-3,
        )
        .unwrap();
        normal = rk4_step(
            |s, x| {
                let d = plant
                    .plant_rhs(&FullState::new(x[..2].to_vec(), x[2..].to_vec()), torque(s), s)
                    .unwrap();
                d.xi.into_iter().chain(d.eta).collect()
            },
            t,
            &normal,
            1e-3,
        )
        .unwrap();
        let y = physical[2] / params.gear_ratio;
        worst_transform = worst_transform.max((y - normal[0]).abs() / normal[0].abs());
    }
    check(
        worst_residual <= 1e-9 && worst_rk4 <= 1e-7 && worst_transform <= 1e-6,
        format!(
            "Lyapunov residual {worst_residual:.2e} (<= 1e-9, 100 systems); RK4 step error {worst_rk4:.2e} (<= 1e-7); transformation gap {worst_transform:.2e} (<= 1e-6)"
        ),
    )
}

fn main() {
    let (tails, eps, toy_secs) = theorem1_tails();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("implementation equivalence", Box::new(implementation_equivalence)),
        ("MCL cost reduction", Box::new(mcl_cost_reduction)),
        (
            "ultimate bound on the toy plant",
            Box::new(|| theorem1_bound(&tails, eps, toy_secs[0])),
        ),
        (
            "single-loop parity on the toy plant",
            Box::new(|| corollary_parity(&tails, toy_secs[1])),
        ),
        ("no peaking with model following", Box::new(peaking)),
        ("initial input formulas", Box::new(initial_values)),
        ("kinematic rpm anchor", Box::new(kinematic_anchor)),
        ("PI phase margin", Box::new(pi_margin)),
        ("advanced cruise", Box::new(advanced_cruise)),
        ("numerical kernels", Box::new(numerical_kernels)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let c = run();
        if !c.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {}",
            i + 1,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
