//! Engine-based cruise control case study.
//!
//! Rear-wheel-drive longitudinal model: first-order motor lag, flexible
//! drivetrain, rear axle with a Pacejka tire and aerodynamic drag. The
//! output is the crankshaft speed normalized to the wheel, `y = ω_c / i_G`,
//! which has relative degree two with respect to the requested torque.

use std::f64::consts::PI;
use std::sync::Arc;

use thiserror::Error;

use crate::controllers::{ControlMode, Controller, ControllerError, GainDesign, PiGains};
use crate::plant::{norm2, FullState, PerturbationBound, PlantDynamics, PlantError};
use crate::reference::{ReferenceError, ReferenceSignal, Transition};
use crate::sim::{InitialCondition, ModelInit, Scenario, SimError, SimResult, StateObserver};

/// Slip magnitude beyond which the tire model leaves its intended range.
pub const SLIP_MONITOR_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("invalid vehicle parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("friction schedule must start at t = 0 with increasing times")]
    InvalidSchedule,
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

pub fn ms_to_kmh(ms: f64) -> f64 {
    ms * 3.6
}

pub fn rad_s_to_rpm(omega: f64) -> f64 {
    omega * 60.0 / (2.0 * PI)
}

/// Physical parameters of the drivetrain, tire and body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Motor torque lag time constant (s).
    pub motor_lag: f64,
    pub gear_ratio: f64,
    /// Crankshaft-side inertia (kg m²).
    pub crank_inertia: f64,
    /// Rotational friction coefficient (N m per rad/s).
    pub crank_friction: f64,
    /// Drivetrain torsional stiffness (N m/rad).
    pub shaft_stiffness: f64,
    /// Drivetrain torsional damping (N m s/rad).
    pub shaft_damping: f64,
    /// Rear axle and wheel inertia (kg m²).
    pub axle_inertia: f64,
    /// Pacejka shape factor.
    pub tire_shape: f64,
    /// Pacejka stiffness factor.
    pub tire_stiffness: f64,
    pub mass: f64,
    pub gravity: f64,
    /// Distance from the centre of gravity to the front axle (m).
    pub front_distance: f64,
    /// Distance from the centre of gravity to the rear axle (m).
    pub rear_distance: f64,
    pub air_density: f64,
    pub wheel_radius: f64,
    pub drag_coefficient: f64,
    pub frontal_area: f64,
    /// Tire-road friction coefficient in (0, 1].
    pub road_friction: f64,
    /// Smoothing constant of the slip approximation.
    pub slip_smoothing: f64,
}

impl VehicleParams {
    /// Rear-wheel-drive parameter set of the reference vehicle.
    pub fn paper_rwd() -> Self {
        Self {
            motor_lag: 0.02,
            gear_ratio: 4.49,
            crank_inertia: 0.23,
            crank_friction: 0.003,
            shaft_stiffness: 5300.0,
            shaft_damping: 15.0,
            axle_inertia: 3.0,
            tire_shape: 1.8,
            tire_stiffness: 10.3,
            mass: 1950.0,
            gravity: 9.81,
            front_distance: 1.3,
            rear_distance: 1.4,
            air_density: 1.1,
            wheel_radius: 0.33,
            drag_coefficient: 0.3,
            frontal_area: 2.37,
            road_friction: 1.0,
            slip_smoothing: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let positive = [
            ("motor_lag", self.motor_lag),
            ("gear_ratio", self.gear_ratio),
            ("crank_inertia", self.crank_inertia),
            ("shaft_stiffness", self.shaft_stiffness),
            ("shaft_damping", self.shaft_damping),
            ("axle_inertia", self.axle_inertia),
            ("tire_shape", self.tire_shape),
            ("tire_stiffness", self.tire_stiffness),
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("front_distance", self.front_distance),
            ("rear_distance", self.rear_distance),
            ("air_density", self.air_density),
            ("wheel_radius", self.wheel_radius),
            ("drag_coefficient", self.drag_coefficient),
            ("frontal_area", self.frontal_area),
            ("slip_smoothing", self.slip_smoothing),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(VehicleError::InvalidParameter { name, value });
            }
        }
        if !(self.crank_friction >= 0.0 && self.crank_friction.is_finite()) {
            return Err(VehicleError::InvalidParameter {
                name: "crank_friction",
                value: self.crank_friction,
            });
        }
        check_friction("road_friction", self.road_friction)
    }

    pub fn with_road_friction(self, mu: f64) -> Self {
        Self {
            road_friction: mu,
            ..self
        }
    }

    /// Static normal force on the rear axle.
    pub fn rear_normal_force(&self) -> f64 {
        self.mass * self.gravity * self.front_distance / (self.front_distance + self.rear_distance)
    }

    /// Aerodynamic drag at speed `v`.
    pub fn drag_force(&self, v: f64) -> f64 {
        0.5 * self.air_density * self.drag_coefficient * self.frontal_area * v * v.abs()
    }

    /// Crankshaft speed for vehicle speed `v` without slip and twist.
    pub fn no_slip_crank_speed(&self, v: f64) -> f64 {
        v / self.wheel_radius * self.gear_ratio
    }
}

fn check_friction(name: &'static str, value: f64) -> Result<(), VehicleError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(VehicleError::InvalidParameter { name, value })
    }
}

/// Controller-side tire estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireEstimates {
    pub road_friction: f64,
    pub tire_stiffness: f64,
    pub tire_shape: f64,
}

impl TireEstimates {
    /// Estimates used in the benchmark runs (μ̂ = 0.9, B̂ = 11, Ĉ = 1.9).
    pub fn benchmark() -> Self {
        Self {
            road_friction: 0.9,
            tire_stiffness: 11.0,
            tire_shape: 1.9,
        }
    }

    /// Estimates that coincide with the plant.
    pub fn exact(params: &VehicleParams) -> Self {
        Self {
            road_friction: params.road_friction,
            tire_stiffness: params.tire_stiffness,
            tire_shape: params.tire_shape,
        }
    }

    pub fn with_road_friction(self, mu: f64) -> Self {
        Self {
            road_friction: mu,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        check_friction("road_friction estimate", self.road_friction)?;
        for (name, value) in [
            ("tire_stiffness estimate", self.tire_stiffness),
            ("tire_shape estimate", self.tire_shape),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(VehicleError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

/// `|x|_κ = √(x² + κ²)`.
fn smooth_abs(x: f64, kappa: f64) -> f64 {
    x.hypot(kappa)
}

/// `max_κ{a, b} = ½(a + b + |a − b|_κ)`.
fn smooth_max(a: f64, b: f64, kappa: f64) -> f64 {
    0.5 * (a + b + smooth_abs(a - b, kappa))
}

/// Continuously differentiable wheel slip.
pub fn smooth_slip(axle_speed: f64, speed: f64, wheel_radius: f64, kappa: f64) -> f64 {
    let peripheral = wheel_radius * axle_speed;
    let normalizer = smooth_max(smooth_abs(peripheral, kappa), smooth_abs(speed, kappa), kappa);
    (peripheral - speed) / normalizer
}

/// Pacejka longitudinal force `μ F_z sin(C atan(B λ))`.
pub fn pacejka_force(mu: f64, normal_force: f64, stiffness: f64, shape: f64, slip: f64) -> f64 {
    mu * normal_force * (shape * (stiffness * slip).atan()).sin()
}

/// Physical powertrain state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowertrainState {
    pub motor_torque: f64,
    pub twist: f64,
    pub crank_speed: f64,
    pub axle_speed: f64,
    pub speed: f64,
}

impl PowertrainState {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.motor_torque,
            self.twist,
            self.crank_speed,
            self.axle_speed,
            self.speed,
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            motor_torque: s[0],
            twist: s[1],
            crank_speed: s[2],
            axle_speed: s[3],
            speed: s[4],
        }
    }
}

fn shaft_torque(params: &VehicleParams, twist: f64, crank_speed: f64, axle_speed: f64) -> f64 {
    params.shaft_stiffness * twist + params.shaft_damping * (crank_speed / params.gear_ratio - axle_speed)
}

fn tire_force(params: &VehicleParams, mu: f64, stiffness: f64, shape: f64, axle_speed: f64, speed: f64) -> f64 {
    let slip = smooth_slip(axle_speed, speed, params.wheel_radius, params.slip_smoothing);
    pacejka_force(mu, params.rear_normal_force(), stiffness, shape, slip)
}

/// Physical model right-hand side for requested torque `torque_request` and
/// road friction `mu`.
pub fn powertrain_rhs(
    params: &VehicleParams,
    state: &PowertrainState,
    torque_request: f64,
    mu: f64,
) -> PowertrainState {
    let p = params;
    let t_r = shaft_torque(p, state.twist, state.crank_speed, state.axle_speed);
    let force = tire_force(p, mu, p.tire_stiffness, p.tire_shape, state.axle_speed, state.speed);
    PowertrainState {
        motor_torque: (torque_request - state.motor_torque) / p.motor_lag,
        twist: state.crank_speed / p.gear_ratio - state.axle_speed,
        crank_speed: (state.motor_torque - 2.0 * t_r / p.gear_ratio - p.crank_friction * state.crank_speed)
            / p.crank_inertia,
        axle_speed: (2.0 * t_r - p.wheel_radius * force) / p.axle_inertia,
        speed: (force - p.drag_force(state.speed)) / p.mass,
    }
}

/// Coefficients of the external dynamics in normal form:
/// `ξ̇₂ = speed ξ₁ + accel ξ₂ + axle η₂ + tire F + twist η₁ + input u − friction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ByrnesCoefficients {
    pub speed: f64,
    pub accel: f64,
    pub axle: f64,
    pub twist: f64,
    pub tire: f64,
    pub input: f64,
}

pub fn byrnes_coefficients(params: &VehicleParams) -> ByrnesCoefficients {
    let p = params;
    let (tau, ig, jc, jr) = (p.motor_lag, p.gear_ratio, p.crank_inertia, p.axle_inertia);
    let (kc, dc) = (p.shaft_stiffness, p.shaft_damping);
    let denom = ig * ig * jc * jr * tau;
    ByrnesCoefficients {
        speed: ((4.0 * dc * dc - 2.0 * jr * kc) * tau - 2.0 * jr * dc) / denom,
        accel: -(2.0 * jr * tau * dc + ig * ig * jc * jr) / denom,
        axle: ((2.0 * jr * kc - 4.0 * dc * dc) * tau + 2.0 * jr * dc) / denom,
        twist: (4.0 * tau * dc * kc - 2.0 * jr * kc) / denom,
        tire: -2.0 * dc * p.wheel_radius / (ig * ig * jc * jr),
        input: 1.0 / (ig * jc * tau),
    }
}

/// Physical state to normal-form coordinates `ξ = [y, ẏ]`, `η = [φ_c, ω_r, v_x]`.
pub fn to_byrnes(params: &VehicleParams, s: &PowertrainState) -> FullState {
    let p = params;
    let t_r = shaft_torque(p, s.twist, s.crank_speed, s.axle_speed);
    let crank_accel = (s.motor_torque - 2.0 * t_r / p.gear_ratio - p.crank_friction * s.crank_speed) / p.crank_inertia;
    FullState::new(
        vec![s.crank_speed / p.gear_ratio, crank_accel / p.gear_ratio],
        vec![s.twist, s.axle_speed, s.speed],
    )
}

pub fn from_byrnes(params: &VehicleParams, s: &FullState) -> PowertrainState {
    let p = params;
    let crank_speed = p.gear_ratio * s.xi[0];
    let t_r = shaft_torque(p, s.eta[0], crank_speed, s.eta[1]);
    PowertrainState {
        motor_torque: p.gear_ratio * p.crank_inertia * s.xi[1]
            + 2.0 * t_r / p.gear_ratio
            + p.crank_friction * crank_speed,
        twist: s.eta[0],
        crank_speed,
        axle_speed: s.eta[1],
        speed: s.eta[2],
    }
}

/// Rate of the twist-angle estimate, `ξ₁ − η₂`.
pub fn trivial_observer_rate(xi1: f64, eta2: f64) -> f64 {
    xi1 - eta2
}

/// Integrates the speed difference across the drivetrain to estimate the
/// unmeasured twist angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistAngleObserver {
    pub initial_estimate: f64,
}

impl StateObserver for TwistAngleObserver {
    fn dim(&self) -> usize {
        1
    }

    fn initial(&self, _eta0: &[f64]) -> Vec<f64> {
        vec![self.initial_estimate]
    }

    fn estimate(&self, state: &[f64], _xi: &[f64], eta: &[f64], out: &mut [f64]) {
        out[0] = state[0];
        out[1] = eta[1];
        out[2] = eta[2];
    }

    fn rate(&self, _state: &[f64], xi: &[f64], eta: &[f64], out: &mut [f64]) {
        out[0] = trivial_observer_rate(xi[0], eta[1]);
    }
}

/// True plant and controller model for one set of road conditions.
#[derive(Debug, Clone)]
pub struct CaseStudyPlant {
    /// Plant whose last external row equals the full physical forcing.
    pub plant: PlantDynamics,
    /// Nominal model used by every controller: estimated tire, no friction.
    pub model: PlantDynamics,
}

fn internal_dynamics(
    params: VehicleParams,
    mu: f64,
    stiffness: f64,
    shape: f64,
) -> impl Fn(&[f64], &[f64], &mut [f64]) {
    move |xi, eta, out| {
        let p = &params;
        let force = tire_force(p, mu, stiffness, shape, eta[1], eta[2]);
        out[0] = xi[0] - eta[1];
        out[1] = (2.0 * p.shaft_damping * (xi[0] - eta[1]) + 2.0 * p.shaft_stiffness * eta[0] - p.wheel_radius * force)
            / p.axle_inertia;
        out[2] = (force - p.drag_force(eta[2])) / p.mass;
    }
}

fn nominal_drift(params: VehicleParams, est: TireEstimates) -> impl Fn(&[f64], &[f64]) -> f64 {
    let c = byrnes_coefficients(&params);
    move |xi, eta| {
        let force = tire_force(
            &params,
            est.road_friction,
            est.tire_stiffness,
            est.tire_shape,
            eta[1],
            eta[2],
        );
        c.speed * xi[0] + c.accel * xi[1] + c.axle * eta[1] + c.tire * force + c.twist * eta[0]
    }
}

/// Mismatch between the true forcing and the nominal drift evaluated at the
/// true state, plus the constant offset caused by an observer initialized
/// `twist_offset = η₁(0) − η̂₁(0)` away from the truth.
pub fn perturbation(
    params: &VehicleParams,
    est: &TireEstimates,
    twist_offset: f64,
) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + Clone {
    let p = *params;
    let e = *est;
    let c = byrnes_coefficients(&p);
    move |xi, eta| {
        let truth = tire_force(&p, p.road_friction, p.tire_stiffness, p.tire_shape, eta[1], eta[2]);
        let guess = tire_force(&p, e.road_friction, e.tire_stiffness, e.tire_shape, eta[1], eta[2]);
        c.tire * (truth - guess) + c.twist * twist_offset
            - p.crank_friction / p.crank_inertia * (xi[0] / p.motor_lag + xi[1])
    }
}

pub fn build_case_study_plant(params: &VehicleParams, est: &TireEstimates) -> Result<CaseStudyPlant, VehicleError> {
    params.validate()?;
    est.validate()?;
    let p = *params;
    let b = byrnes_coefficients(&p).input;
    let drift = Arc::new(nominal_drift(p, *est));
    let gain = Arc::new(move |_: &[f64], _: &[f64]| b);
    let floor = 0.5 * b;
    let mismatch = perturbation(&p, est, 0.0);
    let plant = PlantDynamics::new(
        2,
        3,
        drift.clone(),
        gain.clone(),
        Some(Arc::new(internal_dynamics(
            p,
            p.road_friction,
            p.tire_stiffness,
            p.tire_shape,
        ))),
        floor,
    )?
    .with_perturbation(Arc::new(move |xi, eta, _t| mismatch(xi, eta)));
    let model = PlantDynamics::new(
        2,
        3,
        drift,
        gain,
        Some(Arc::new(internal_dynamics(
            p,
            est.road_friction,
            est.tire_stiffness,
            est.tire_shape,
        ))),
        floor,
    )?;
    Ok(CaseStudyPlant { plant, model })
}

/// Piecewise-constant road friction `μ` and its estimate `μ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionSchedule {
    /// `(start time, μ, μ̂)`, the first entry at t = 0.
    pub steps: Vec<(f64, f64, f64)>,
}

impl FrictionSchedule {
    pub fn constant(mu: f64, mu_hat: f64) -> Self {
        Self {
            steps: vec![(0.0, mu, mu_hat)],
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        match self.steps.first() {
            Some((t, _, _)) if *t == 0.0 => {}
            _ => return Err(VehicleError::InvalidSchedule),
        }
        if self.steps.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(VehicleError::InvalidSchedule);
        }
        for &(_, mu, mu_hat) in &self.steps {
            check_friction("road_friction", mu)?;
            check_friction("road_friction estimate", mu_hat)?;
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        let idx = self.steps.partition_point(|s| s.0 <= t).max(1) - 1;
        (self.steps[idx].1, self.steps[idx].2)
    }
}

/// PI process-loop constants derived from the drivetrain (`a₁ = 1/τ_m`,
/// `b₀ = i_G / (τ_m J_r)`) with `k_p = 0.65`, `k_i = 0.16`.
pub fn case_study_pi_gains(params: &VehicleParams) -> PiGains {
    PiGains {
        a0: 0.0,
        a1: 1.0 / params.motor_lag,
        b0: params.gear_ratio / (params.motor_lag * params.axle_inertia),
        kp: 0.65,
        ki: 0.16,
    }
}

/// A complete cruise-control benchmark.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub params: VehicleParams,
    pub estimates: TireEstimates,
    pub schedule: FrictionSchedule,
    /// Initial vehicle speed (m/s).
    pub initial_speed: f64,
    /// Initial twist-angle estimate (rad).
    pub twist_estimate0: f64,
    /// Vehicle speed reference (m/s).
    pub speed_reference: ReferenceSignal,
    pub horizon: f64,
}

impl CaseStudy {
    fn with_profile(initial_kmh: f64, ref_start_kmh: f64, transitions_kmh: &[(f64, f64, f64)], horizon: f64) -> Self {
        let transitions: Vec<Transition> = transitions_kmh
            .iter()
            .map(|&(start, target, duration)| Transition {
                start,
                target: kmh_to_ms(target),
                duration,
            })
            .collect();
        let params = VehicleParams::paper_rwd();
        Self {
            params,
            estimates: TireEstimates::benchmark(),
            schedule: FrictionSchedule::constant(1.0, 0.9),
            initial_speed: kmh_to_ms(initial_kmh),
            twist_estimate0: 0.0,
            speed_reference: ReferenceSignal::from_transitions(kmh_to_ms(ref_start_kmh), &transitions, 2)
                .expect("benchmark profiles are continuous"),
            horizon,
        }
    }

    /// 70 km/h start, reference 90 → 120 km/h over 15 s.
    pub fn accel() -> Self {
        Self::with_profile(70.0, 90.0, &[(0.0, 120.0, 15.0)], 30.0)
    }

    /// 130 km/h start, reference 120 → 90 km/h over 15 s.
    pub fn decel() -> Self {
        Self::with_profile(130.0, 120.0, &[(0.0, 90.0, 15.0)], 30.0)
    }

    /// Overtaking: 90 → 120 km/h, hold, 120 → 90 km/h, with the road
    /// friction dropping to 0.5 between 10 s and 25 s.
    pub fn advanced_cruise() -> Self {
        let mut case = Self::with_profile(70.0, 90.0, &[(0.0, 120.0, 15.0), (20.0, 90.0, 15.0)], 40.0);
        case.schedule = FrictionSchedule {
            steps: vec![(0.0, 1.0, 0.9), (10.0, 0.5, 0.4), (25.0, 1.0, 0.9)],
        };
        case
    }

    /// Constant-speed cruise with a consistent reference.
    pub fn cruise(kmh: f64, horizon: f64) -> Self {
        Self::with_profile(kmh, kmh, &[], horizon)
    }

    /// Wheel-speed reference `y_d = v_x,d / r_r`.
    pub fn wheel_reference(&self) -> ReferenceSignal {
        self.speed_reference.clone().scaled(1.0 / self.params.wheel_radius)
    }

    pub fn initial_state(&self) -> FullState {
        let w = self.initial_speed / self.params.wheel_radius;
        FullState::new(vec![w, 0.0], vec![0.0, w, self.initial_speed])
    }

    pub fn initial_condition(&self, model_init: ModelInit) -> InitialCondition {
        let s = self.initial_state();
        InitialCondition::new(s.xi, s.eta, model_init)
    }

    /// Plant/model pair for each friction phase.
    pub fn phases(&self) -> Result<Vec<(f64, CaseStudyPlant)>, VehicleError> {
        self.schedule.validate()?;
        self.schedule
            .steps
            .iter()
            .map(|&(start, mu, mu_hat)| {
                let params = self.params.with_road_friction(mu);
                let est = self.estimates.with_road_friction(mu_hat);
                Ok((start, build_case_study_plant(&params, &est)?))
            })
            .collect()
    }

    /// Closed loop for `mode`, with the twist observer and slip monitor.
    pub fn scenario(
        &self,
        mode: ControlMode,
        design: &GainDesign,
        pi: Option<PiGains>,
    ) -> Result<Scenario, VehicleError> {
        let phases = self.phases()?;
        let mut scenario: Option<Scenario> = None;
        for (start, case) in phases {
            let controller = Controller::new(mode, design.clone(), pi, case.model)?;
            scenario = Some(match scenario {
                None => Scenario::new(case.plant, controller, self.wheel_reference())?,
                Some(s) => s.with_phase(start, case.plant, controller)?,
            });
        }
        let params = self.params;
        let monitor = Arc::new(move |_: &[f64], eta: &[f64]| {
            smooth_slip(eta[1], eta[2], params.wheel_radius, params.slip_smoothing).abs() > SLIP_MONITOR_THRESHOLD
        });
        Ok(scenario
            .expect("schedule has at least one phase")
            .with_observer(Arc::new(TwistAngleObserver {
                initial_estimate: self.twist_estimate0,
            }))
            .with_monitor("slip beyond 0.15", monitor))
    }

    /// Case-study perturbation along a recorded run, as `(‖ξ‖₂, |Δ|)`.
    pub fn perturbation_samples(&self, result: &SimResult) -> Vec<(f64, f64)> {
        let offset = self.initial_state().eta[0] - self.twist_estimate0;
        let fns: Vec<_> = self
            .schedule
            .steps
            .iter()
            .map(|&(_, mu, mu_hat)| {
                perturbation(
                    &self.params.with_road_friction(mu),
                    &self.estimates.with_road_friction(mu_hat),
                    offset,
                )
            })
            .collect();
        result
            .times
            .iter()
            .zip(result.xi.iter().zip(&result.eta))
            .map(|(t, (xi, eta))| {
                let idx = self.schedule.steps.partition_point(|s| s.0 <= *t).max(1) - 1;
                (norm2(xi), fns[idx](xi, eta).abs())
            })
            .collect()
    }
}

/// Smallest `δ + L_Δ r_ref` over `(δ, L_Δ) ≥ 0` with `δ + L_Δ r ≥ d` for
/// every sample `(r, d)`. The optimum lies on the upper convex hull of the
/// samples, so only hull edge slopes need to be tried.
pub fn fit_perturbation_bound(samples: &[(f64, f64)], r_ref: f64) -> PerturbationBound {
    let mut pts: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(r, d)| r.is_finite() && d.is_finite())
        .collect();
    if pts.is_empty() {
        return PerturbationBound::zero();
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in &pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(*p);
    }
    let mut slopes = vec![0.0];
    for w in hull.windows(2) {
        let dr = w[1].0 - w[0].0;
        if dr > 0.0 {
            let s = (w[1].1 - w[0].1) / dr;
            if s > 0.0 {
                slopes.push(s);
            }
        }
    }
    let offset_for = |l: f64| pts.iter().map(|(r, d)| d - l * r).fold(0.0, f64::max);
    let (delta, lipschitz) = slopes
        .into_iter()
        .map(|l| (offset_for(l), l))
        .min_by(|a, b| (a.0 + a.1 * r_ref).total_cmp(&(b.0 + b.1 * r_ref)))
        .expect("slope list is nonempty");
    // A relative margin absorbs rounding in the re-check.
    let pad = 1.0 + 1e-9;
    PerturbationBound::new(delta * pad, lipschitz * pad).expect("fitted bound is nonnegative")
}
