//! Fixed-step closed-loop simulation and experiment drivers.
//!
//! The augmented state is laid out as `[ξ, η, controller, observer]` and
//! integrated with classical RK4. The control input is re-evaluated at every
//! stage, so the loop is continuous rather than sampled.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::controllers::{single_loop_initial_input, ControlMode, Controller, ControllerError};
use crate::plant::{norm2, PlantDynamics, PlantError};
use crate::reference::{DesiredState, OnlineReference, ReferenceError, ReferenceSignal};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    InvalidConfig(String),
    #[error("non-finite derivative in RK4 stage {stage} at t = {time}")]
    NonFiniteDerivative { stage: usize, time: f64 },
    #[error("state norm {norm:e} exceeded the guard {guard:e} at t = {time}")]
    GuardTripped { time: f64, norm: f64, guard: f64 },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    /// Record every `sample_stride`-th step.
    pub sample_stride: usize,
    /// Abort once `‖state‖∞` exceeds this value.
    pub state_guard: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 30.0,
            sample_stride: 1,
            state_guard: 1e7,
        }
    }
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64) -> Result<Self, SimError> {
        let cfg = Self {
            step,
            horizon,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !(self.horizon >= self.step && self.horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "horizon {} must be at least one step ({})",
                self.horizon, self.step
            )));
        }
        if self.sample_stride == 0 {
            return Err(SimError::InvalidConfig("sample stride must be at least 1".into()));
        }
        if !(self.state_guard > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "state guard must be positive, got {}",
                self.state_guard
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// Reusable RK4 stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            probe: vec![0.0; dim],
        }
    }

    /// Advances `x` by one step of size `h` in place. `f(t, x, dx)` must fill
    /// `dx`; exactly four evaluations are made.
    pub fn step<F, E>(&mut self, mut f: F, t: f64, x: &mut [f64], h: f64) -> Result<(), E>
    where
        F: FnMut(usize, f64, &[f64], &mut [f64]) -> Result<(), E>,
        E: From<SimError>,
    {
        const NODES: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            let (done, rest) = self.k.split_at_mut(stage);
            if stage == 0 {
                f(0, t, x, &mut rest[0])?;
            } else {
                let prev = &done[stage - 1];
                let c = NODES[stage];
                for ((p, xi), ki) in self.probe.iter_mut().zip(x.iter()).zip(prev) {
                    *p = xi + c * h * ki;
                }
                f(stage, t + c * h, &self.probe, &mut rest[0])?;
            }
            if rest[0].iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteDerivative {
                    stage: stage + 1,
                    time: t + NODES[stage] * h,
                }
                .into());
            }
        }
        let [k1, k2, k3, k4] = &self.k;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// One classical RK4 step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, SimError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(SimError::InvalidConfig(format!("step must be positive, got {h}")));
    }
    let mut out = x.to_vec();
    Rk4::new(x.len()).step::<_, SimError>(
        |_, t, x, dx| {
            dx.copy_from_slice(&f(t, x));
            Ok(())
        },
        t,
        &mut out,
        h,
    )?;
    Ok(out)
}

/// Reconstructs unmeasured internal states for the controller.
pub trait StateObserver: Send + Sync {
    fn dim(&self) -> usize;
    /// Observer state at t = 0.
    fn initial(&self, eta0: &[f64]) -> Vec<f64>;
    /// Internal-state estimate handed to the controller.
    fn estimate(&self, state: &[f64], xi: &[f64], eta: &[f64], out: &mut [f64]);
    fn rate(&self, state: &[f64], xi: &[f64], eta: &[f64], out: &mut [f64]);
}

/// Flags states outside a declared operating range without stopping the run.
pub type StateMonitor = Arc<dyn Fn(&[f64], &[f64]) -> bool + Send + Sync>;

/// Plant and controller active from `start` onwards.
#[derive(Debug, Clone)]
pub struct Phase {
    pub start: f64,
    pub plant: PlantDynamics,
    pub controller: Controller,
}

/// Everything needed to run a closed loop except the initial condition.
#[derive(Clone)]
pub struct Scenario {
    phases: Vec<Phase>,
    observer: Option<Arc<dyn StateObserver>>,
    monitor: Option<(String, StateMonitor)>,
    reference: ReferenceSignal,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("phases", &self.phases.len())
            .field("mode", &self.mode())
            .field("observer", &self.observer.is_some())
            .finish()
    }
}

impl Scenario {
    pub fn new(plant: PlantDynamics, controller: Controller, reference: ReferenceSignal) -> Result<Self, SimError> {
        if reference.n_derivatives() != plant.n_xi() {
            return Err(SimError::InvalidConfig(format!(
                "reference provides {} derivatives but the plant has n_xi = {}",
                reference.n_derivatives(),
                plant.n_xi()
            )));
        }
        let s = Self {
            phases: Vec::new(),
            observer: None,
            monitor: None,
            reference,
        };
        s.with_phase(0.0, plant, controller)
    }

    /// Switches plant and controller at `start` (rounded to the step grid).
    pub fn with_phase(mut self, start: f64, plant: PlantDynamics, controller: Controller) -> Result<Self, SimError> {
        if let Some(first) = self.phases.first() {
            let reference_plant = &first.plant;
            if plant.n_xi() != reference_plant.n_xi() || plant.n_eta() != reference_plant.n_eta() {
                return Err(SimError::InvalidConfig("all phases must share plant dimensions".into()));
            }
            if controller.mode() != first.controller.mode() {
                return Err(SimError::InvalidConfig(
                    "all phases must share the controller mode".into(),
                ));
            }
            if !(start > self.phases[self.phases.len() - 1].start) {
                return Err(SimError::InvalidConfig(format!(
                    "phase start {start} is not increasing"
                )));
            }
        }
        if controller.model().n_xi() != plant.n_xi() || controller.model().n_eta() != plant.n_eta() {
            return Err(SimError::InvalidConfig(
                "controller model and plant dimensions differ".into(),
            ));
        }
        self.phases.push(Phase {
            start,
            plant,
            controller,
        });
        Ok(self)
    }

    pub fn with_observer(mut self, observer: Arc<dyn StateObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn with_monitor(mut self, name: impl Into<String>, monitor: StateMonitor) -> Self {
        self.monitor = Some((name.into(), monitor));
        self
    }

    pub fn mode(&self) -> ControlMode {
        self.phases[0].controller.mode()
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn reference(&self) -> &ReferenceSignal {
        &self.reference
    }

    pub fn observer(&self) -> Option<&Arc<dyn StateObserver>> {
        self.observer.as_ref()
    }

    pub fn layout(&self) -> StateLayout {
        let first = &self.phases[0];
        StateLayout {
            n_xi: first.plant.n_xi(),
            n_eta: first.plant.n_eta(),
            controller: first.controller.state_dim(),
            observer: self.observer.as_ref().map_or(0, |o| o.dim()),
        }
    }

    /// Internal-state estimate available to the controller at t = 0.
    pub fn initial_estimate(&self, xi0: &[f64], eta0: &[f64]) -> Vec<f64> {
        match &self.observer {
            Some(obs) => {
                let state = obs.initial(eta0);
                let mut out = vec![0.0; eta0.len()];
                obs.estimate(&state, xi0, eta0, &mut out);
                out
            }
            None => eta0.to_vec(),
        }
    }
}

/// Sizes of the augmented-state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_xi: usize,
    pub n_eta: usize,
    pub controller: usize,
    pub observer: usize,
}

impl StateLayout {
    pub fn total(&self) -> usize {
        self.n_xi + self.n_eta + self.controller + self.observer
    }
}

/// Initial model state for the model control loop.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInit {
    /// `ξ₀* = ξ₀`.
    Exact,
    /// `ξ₀* = ξ_d(0)`.
    Consistent,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub xi0: Vec<f64>,
    pub eta0: Vec<f64>,
    pub model_init: ModelInit,
}

impl InitialCondition {
    pub fn new(xi0: Vec<f64>, eta0: Vec<f64>, model_init: ModelInit) -> Self {
        Self { xi0, eta0, model_init }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AbortReason {
    GuardTripped { norm: f64, guard: f64 },
    NonFiniteDerivative { stage: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub time: f64,
    pub reason: AbortReason,
}

/// Samples flagged by the scenario's operating-range monitor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorLog {
    pub name: String,
    pub flagged_samples: usize,
    pub first_flag: Option<f64>,
}

/// Uniformly sampled closed-loop trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mode: ControlMode,
    pub step: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// Model state; `None` for single-loop modes.
    pub xi_star: Option<Vec<Vec<f64>>>,
    pub u: Vec<f64>,
    pub v_star: Vec<f64>,
    pub v_tilde: Vec<f64>,
    /// `(u*, ũ)` in classical mode.
    pub decomposition: Option<Vec<(f64, f64)>>,
    /// `ξ_d` at each sample.
    pub reference: Vec<Vec<f64>>,
    pub layout: StateLayout,
    /// Augmented right-hand-side evaluations (4 per step).
    pub rhs_evaluations: u64,
    pub monitor: Option<MonitorLog>,
    pub aborted: Option<Abort>,
}

impl SimResult {
    fn empty(mode: ControlMode, config: &SimConfig, layout: StateLayout) -> Self {
        Self {
            mode,
            step: config.step,
            horizon: config.horizon,
            times: Vec::new(),
            xi: Vec::new(),
            eta: Vec::new(),
            xi_star: mode.has_model().then(Vec::new),
            u: Vec::new(),
            v_star: Vec::new(),
            v_tilde: Vec::new(),
            decomposition: (mode == ControlMode::MfcClassical).then(Vec::new),
            reference: Vec::new(),
            layout,
            rhs_evaluations: 0,
            monitor: None,
            aborted: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Converts an abort into the corresponding error.
    pub fn check(&self) -> Result<&Self, SimError> {
        match &self.aborted {
            None => Ok(self),
            Some(Abort {
                time,
                reason: AbortReason::GuardTripped { norm, guard },
            }) => Err(SimError::GuardTripped {
                time: *time,
                norm: *norm,
                guard: *guard,
            }),
            Some(Abort {
                time,
                reason: AbortReason::NonFiniteDerivative { stage },
            }) => Err(SimError::NonFiniteDerivative {
                stage: *stage,
                time: *time,
            }),
        }
    }

    /// `‖ξ − ξ_d‖₂` at each sample.
    pub fn tracking_errors(&self) -> Vec<f64> {
        self.xi
            .iter()
            .zip(&self.reference)
            .map(|(x, d)| {
                let diff: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - b).collect();
                norm2(&diff)
            })
            .collect()
    }

    fn window(&self, start: f64, end: f64) -> impl Iterator<Item = usize> + '_ {
        let tol = 1e-9 * self.step;
        self.times
            .iter()
            .enumerate()
            .filter(move |(_, t)| **t >= start - tol && **t <= end + tol)
            .map(|(i, _)| i)
    }

    /// Largest `|u|` sampled in `[start, end]`.
    pub fn peak_input_in(&self, start: f64, end: f64) -> f64 {
        self.window(start, end).map(|i| self.u[i].abs()).fold(0.0, f64::max)
    }

    /// Largest tracking error sampled in `[start, end]`.
    pub fn max_tracking_error_in(&self, start: f64, end: f64) -> f64 {
        let errors = self.tracking_errors();
        self.window(start, end).map(|i| errors[i]).fold(0.0, f64::max)
    }
}

/// Summary numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub sup_abs_u: f64,
    pub tail_tracking_error: f64,
    pub tail_window: (f64, f64),
    pub eta_sup: f64,
    /// Tail error did not grow compared with the preceding window of equal length.
    pub settled: bool,
}

pub fn extract_metrics(result: &SimResult, tail_fraction: f64) -> Result<Metrics, SimError> {
    if result.is_empty() {
        return Err(SimError::InvalidConfig(
            "cannot extract metrics from an empty run".into(),
        ));
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(SimError::InvalidConfig(format!(
            "tail fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let end = result.times[result.len() - 1];
    let start = end - tail_fraction * end;
    let previous_start = (start - tail_fraction * end).max(0.0);
    let tail = result.max_tracking_error_in(start, end);
    let before = result.max_tracking_error_in(previous_start, start);
    Ok(Metrics {
        sup_abs_u: result.u.iter().fold(0.0, |m, u| m.max(u.abs())),
        tail_tracking_error: tail,
        tail_window: (start, end),
        eta_sup: result.eta.iter().map(|e| norm2(e)).fold(0.0, f64::max),
        settled: tail <= before,
    })
}

/// Per-stage control signals captured during integration.
#[derive(Debug, Clone, Copy, Default)]
struct Signals {
    u: f64,
    v_star: f64,
    v_tilde: f64,
    decomposition: Option<(f64, f64)>,
}

struct Stepper<'a> {
    scenario: &'a Scenario,
    layout: StateLayout,
    eta_hat: Vec<f64>,
}

impl Stepper<'_> {
    fn rhs(
        &mut self,
        phase: &Phase,
        desired: &DesiredState,
        t: f64,
        x: &[f64],
        dx: &mut [f64],
    ) -> Result<Signals, SimError> {
        let StateLayout {
            n_xi,
            n_eta,
            controller,
            ..
        } = self.layout;
        let (xi, rest) = x.split_at(n_xi);
        let (eta, rest) = rest.split_at(n_eta);
        let (ctrl, obs) = rest.split_at(controller);
        let (dxi, drest) = dx.split_at_mut(n_xi);
        let (deta, drest) = drest.split_at_mut(n_eta);
        let (dctrl, dobs) = drest.split_at_mut(controller);

        let measured: &[f64] = match &self.scenario.observer {
            Some(o) => {
                o.estimate(obs, xi, eta, &mut self.eta_hat);
                o.rate(obs, xi, eta, dobs);
                &self.eta_hat
            }
            None => eta,
        };
        let (u, v_star, v_tilde, decomposition) = phase.controller.evaluate_into(ctrl, xi, measured, desired, dctrl)?;
        phase.plant.rhs_into(xi, eta, u, t, dxi, deta)?;
        Ok(Signals {
            u,
            v_star,
            v_tilde,
            decomposition,
        })
    }
}

/// Integrates the closed loop on the fixed grid `t_k = k·h`.
///
/// A guard violation or a non-finite derivative ends the run early; the
/// result then carries the reason in `aborted` and holds every sample taken
/// before it.
pub fn run_closed_loop(
    scenario: &Scenario,
    init: &InitialCondition,
    config: &SimConfig,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let layout = scenario.layout();
    let first = &scenario.phases[0];
    first.plant.check_dims(&init.xi0, &init.eta0)?;
    let h = config.step;
    let steps = config.steps();

    let switch_steps: Vec<usize> = scenario
        .phases
        .iter()
        .map(|p| (p.start / h).round().max(0.0) as usize)
        .collect();
    let phase_at = |k: usize| -> &Phase {
        let idx = switch_steps.partition_point(|&s| s <= k).max(1) - 1;
        &scenario.phases[idx]
    };

    let desired0 = scenario.reference.sample(0.0);
    let eta_hat0 = scenario.initial_estimate(&init.xi0, &init.eta0);
    let xi_star0 = match &init.model_init {
        ModelInit::Exact => init.xi0.clone(),
        ModelInit::Consistent => desired0.xi_d.clone(),
        ModelInit::Explicit(v) => {
            if v.len() != layout.n_xi {
                return Err(SimError::InvalidConfig(format!(
                    "explicit model state has length {}, expected {}",
                    v.len(),
                    layout.n_xi
                )));
            }
            v.clone()
        }
    };
    let mut x = Vec::with_capacity(layout.total());
    x.extend_from_slice(&init.xi0);
    x.extend_from_slice(&init.eta0);
    x.extend(first.controller.initial_state(&xi_star0, &eta_hat0).to_vec());
    if let Some(obs) = &scenario.observer {
        x.extend(obs.initial(&init.eta0));
    }
    debug_assert_eq!(x.len(), layout.total());

    let mut stepper = Stepper {
        scenario,
        layout,
        eta_hat: vec![0.0; layout.n_eta],
    };
    let mut online = OnlineReference::new(&scenario.reference, h);
    let mut rk = Rk4::new(layout.total());
    let mut result = SimResult::empty(scenario.mode(), config, layout);
    let mut monitor = scenario.monitor.as_ref().map(|(name, _)| MonitorLog {
        name: name.clone(),
        ..MonitorLog::default()
    });

    let record =
        |result: &mut SimResult, monitor: &mut Option<MonitorLog>, t: f64, x: &[f64], d: &DesiredState, s: Signals| {
            let (xi, rest) = x.split_at(layout.n_xi);
            let eta = &rest[..layout.n_eta];
            result.times.push(t);
            result.xi.push(xi.to_vec());
            result.eta.push(eta.to_vec());
            if let Some(series) = result.xi_star.as_mut() {
                let start = layout.n_xi + layout.n_eta;
                series.push(x[start..start + layout.n_xi].to_vec());
            }
            result.u.push(s.u);
            result.v_star.push(s.v_star);
            result.v_tilde.push(s.v_tilde);
            if let (Some(series), Some(pair)) = (result.decomposition.as_mut(), s.decomposition) {
                series.push(pair);
            }
            result.reference.push(d.xi_d.clone());
            if let (Some(log), Some((_, check))) = (monitor.as_mut(), scenario.monitor.as_ref()) {
                if check(xi, eta) {
                    log.flagged_samples += 1;
                    log.first_flag.get_or_insert(t);
                }
            }
        };

    let mut start_state = vec![0.0; layout.total()];
    for k in 0..steps {
        let t = k as f64 * h;
        online.advance_to(t);
        let phase = phase_at(k);
        start_state.copy_from_slice(&x);
        let mut first_stage = Signals::default();
        let mut first_desired = None;
        let outcome = rk.step::<_, SimError>(
            |stage, ts, xs, dx| {
                let desired = online.sample(ts)?;
                let s = stepper.rhs(phase, &desired, ts, xs, dx)?;
                if stage == 0 {
                    first_stage = s;
                    first_desired = Some(desired);
                }
                Ok(())
            },
            t,
            &mut x,
            h,
        );
        result.rhs_evaluations += 4;
        if k % config.sample_stride == 0 {
            if let Some(d) = first_desired.take() {
                record(&mut result, &mut monitor, t, &start_state, &d, first_stage);
            }
        }
        match outcome {
            Ok(()) => {}
            Err(SimError::NonFiniteDerivative { stage, time }) => {
                result.aborted = Some(Abort {
                    time,
                    reason: AbortReason::NonFiniteDerivative { stage },
                });
                break;
            }
            Err(e) => return Err(e),
        }
        let norm = x.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !(norm <= config.state_guard) {
            result.aborted = Some(Abort {
                time: t + h,
                reason: AbortReason::GuardTripped {
                    norm,
                    guard: config.state_guard,
                },
            });
            break;
        }
    }
    if result.aborted.is_none() && steps % config.sample_stride == 0 {
        let t = steps as f64 * h;
        online.advance_to(t);
        let desired = online.sample(t)?;
        let mut dx = vec![0.0; layout.total()];
        let s = stepper.rhs(phase_at(steps), &desired, t, &x, &mut dx)?;
        record(&mut result, &mut monitor, t, &x, &desired, s);
    }
    result.monitor = monitor;
    Ok(result)
}

/// Evenly spaced box grid around `center`, `points_per_axis` per dimension.
/// With `jitter = Some((seed, fraction))` every point is displaced by a
/// reproducible uniform offset of at most `fraction` of the grid spacing.
pub fn box_grid(
    center: &[f64],
    half_widths: &[f64],
    points_per_axis: usize,
    jitter: Option<(u64, f64)>,
) -> Result<Vec<Vec<f64>>, SimError> {
    if center.len() != half_widths.len() || center.is_empty() || points_per_axis == 0 {
        return Err(SimError::InvalidConfig(
            "grid needs matching nonempty center and widths and at least one point per axis".into(),
        ));
    }
    let axes: Vec<Vec<f64>> = center
        .iter()
        .zip(half_widths)
        .map(|(c, w)| {
            if points_per_axis == 1 {
                vec![*c]
            } else {
                (0..points_per_axis)
                    .map(|i| c - w + 2.0 * w * i as f64 / (points_per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    if let Some((seed, fraction)) = jitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spacing: Vec<f64> = half_widths
            .iter()
            .map(|w| {
                if points_per_axis > 1 {
                    2.0 * w / (points_per_axis - 1) as f64
                } else {
                    *w
                }
            })
            .collect();
        for p in &mut points {
            for (v, s) in p.iter_mut().zip(&spacing) {
                *v += fraction * s * rng.gen_range(-0.5..=0.5);
            }
        }
    }
    Ok(points)
}

/// Peak-input comparison of MFC and single-loop control for one ε.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakingRow {
    pub epsilon: f64,
    /// Max over the grid of `sup|u|` with MFC and exact model initialization.
    pub mfc_max: f64,
    pub single_loop_max: f64,
    pub mfc_guard_tripped: bool,
    pub single_loop_guard_tripped: bool,
    /// Max over the grid of the closed-form single-loop `|u(0)|`.
    pub single_loop_initial_max: f64,
}

impl PeakingRow {
    pub fn mfc_below_single_loop(&self) -> bool {
        self.mfc_max < self.single_loop_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakingTable {
    /// Sorted by decreasing ε.
    pub rows: Vec<PeakingRow>,
    /// Largest listed ε from which on (towards smaller ε) MFC peaks stay
    /// below single-loop peaks.
    pub crossover_epsilon: Option<f64>,
}

/// Runs MFC (exact init) and single-loop control from every grid point for
/// every ε. `factory(mode, ε)` builds the scenario; grid points are
/// `(ξ₀, η₀)` pairs. Runs execute in parallel; the table is deterministic.
pub fn peaking_experiment<F>(
    factory: F,
    grid: &[(Vec<f64>, Vec<f64>)],
    eps_list: &[f64],
    config: &SimConfig,
) -> Result<PeakingTable, SimError>
where
    F: Fn(ControlMode, f64) -> Result<Scenario, SimError> + Sync,
{
    if grid.is_empty() || eps_list.is_empty() {
        return Err(SimError::InvalidConfig(
            "peaking experiment needs a grid and at least one epsilon".into(),
        ));
    }
    let mut eps_sorted = eps_list.to_vec();
    eps_sorted.sort_by(|a, b| b.total_cmp(a));
    let modes = [ControlMode::MfcEfficient, ControlMode::SingleLoop];
    let scenarios: Vec<Scenario> = eps_sorted
        .iter()
        .flat_map(|&eps| modes.iter().map(move |&m| (m, eps)))
        .map(|(m, eps)| factory(m, eps))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..grid.len()).map(move |g| (s, g)))
        .collect();
    let peaks: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|&(s, g)| {
            let (xi0, eta0) = &grid[g];
            let init = InitialCondition::new(xi0.clone(), eta0.clone(), ModelInit::Exact);
            let run = run_closed_loop(&scenarios[s], &init, config)?;
            let sup = run.u.iter().fold(0.0, |m: f64, u| m.max(u.abs()));
            Ok(match run.aborted {
                Some(_) => (config.state_guard.max(sup), true),
                None => (sup, false),
            })
        })
        .collect::<Result<_, SimError>>()?;

    let mut rows = Vec::with_capacity(eps_sorted.len());
    for (e, &eps) in eps_sorted.iter().enumerate() {
        let fold = |mode_idx: usize| {
            let s = e * modes.len() + mode_idx;
            let slice = &peaks[s * grid.len()..(s + 1) * grid.len()];
            (slice.iter().map(|p| p.0).fold(0.0, f64::max), slice.iter().any(|p| p.1))
        };
        let (mfc_max, mfc_guard_tripped) = fold(0);
        let (single_loop_max, single_loop_guard_tripped) = fold(1);
        let sl = &scenarios[e * modes.len() + 1];
        let controller = &sl.phases()[0].controller;
        let desired0 = sl.reference().sample(0.0);
        let mut initial_max: f64 = 0.0;
        for (xi0, eta0) in grid {
            let eta_hat0 = sl.initial_estimate(xi0, eta0);
            let u0 = single_loop_initial_input(controller.model(), controller.design(), xi0, &eta_hat0, &desired0)?;
            initial_max = initial_max.max(u0.abs());
        }
        rows.push(PeakingRow {
            epsilon: eps,
            mfc_max,
            single_loop_max,
            mfc_guard_tripped,
            single_loop_guard_tripped,
            single_loop_initial_max: initial_max,
        });
    }
    // Rows run from large to small ε; the crossover is the start of the
    // trailing run of rows where the verdict holds.
    let mut crossover = None;
    for row in rows.iter().rev() {
        if row.mfc_below_single_loop() {
            crossover = Some(row.epsilon);
        } else {
            break;
        }
    }
    Ok(PeakingTable {
        rows,
        crossover_epsilon: crossover,
    })
}

/// Wall-clock cost of integrating the model control loop alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MclTiming {
    pub efficient_states: usize,
    pub classical_states: usize,
    pub efficient_seconds: f64,
    pub classical_seconds: f64,
    pub steps: usize,
}

impl MclTiming {
    /// Relative time saved by the efficient realization.
    pub fn reduction(&self) -> f64 {
        1.0 - self.efficient_seconds / self.classical_seconds
    }
}

fn integrate_model_loop(
    controller: &Controller,
    reference: &ReferenceSignal,
    mut state: Vec<f64>,
    config: &SimConfig,
) -> Result<Vec<f64>, SimError> {
    let h = config.step;
    let mut rk = Rk4::new(state.len());
    for k in 0..config.steps() {
        rk.step::<_, SimError>(
            |_, t, x, dx| {
                let desired = reference.sample(t);
                controller.model_rate(x, &desired, dx)?;
                Ok(())
            },
            k as f64 * h,
            &mut state,
            h,
        )?;
    }
    Ok(state)
}

/// Times the model control loops of an efficient and a classical controller
/// over `config.horizon`, keeping the fastest of `repeats` runs each.
pub fn mcl_benchmark(
    efficient: &Controller,
    classical: &Controller,
    reference: &ReferenceSignal,
    xi_star0: &[f64],
    eta_star0: &[f64],
    config: &SimConfig,
    repeats: usize,
) -> Result<MclTiming, SimError> {
    config.validate()?;
    let time_one = |c: &Controller| -> Result<f64, SimError> {
        let init = c.initial_state(xi_star0, eta_star0).to_vec();
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let out = integrate_model_loop(c, reference, init.clone(), config)?;
            std::hint::black_box(out);
            best = best.min(start.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    Ok(MclTiming {
        efficient_states: efficient.state_dim(),
        classical_states: classical.state_dim(),
        efficient_seconds: time_one(efficient)?,
        classical_seconds: time_one(classical)?,
        steps: config.steps(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::GainDesign;
    use crate::plant::toy;
    use crate::reference::Transition;

    #[test]
    fn rk4_examples() {
        let x = rk4_step(|_, x| vec![-x[0]], 0.0, &[1.0], 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() <= 1e-7);
        assert!((x[0] - 0.904_837_42).abs() < 1e-7);
        assert_eq!(rk4_step(|_, _| vec![0.0], 0.0, &[3.0], 0.1).unwrap(), vec![3.0]);
        let x = rk4_step(|_, _| vec![1.0], 0.0, &[2.0], 0.25).unwrap();
        assert_eq!(x, vec![2.25]);
    }

    #[test]
    fn rk4_reports_stage() {
        let mut calls = 0;
        let err = rk4_step(
            |_, _| {
                calls += 1;
                vec![if calls == 3 { f64::NAN } else { 1.0 }]
            },
            0.0,
            &[0.0],
            0.1,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::NonFiniteDerivative { stage: 3, .. }));
    }

    fn double_integrator_loop(mode: ControlMode, eps: f64) -> Scenario {
        let plant = toy::double_integrator();
        let design = GainDesign::new(vec![1.0, 2.0], eps).unwrap();
        let controller = Controller::new(mode, design, None, plant.clone()).unwrap();
        let reference = ReferenceSignal::from_transitions(
            0.0,
            &[Transition {
                start: 0.0,
                target: 1.0,
                duration: 5.0,
            }],
            2,
        )
        .unwrap();
        Scenario::new(plant, controller, reference).unwrap()
    }

    #[test]
    fn nominal_tracking_converges() {
        let sc = double_integrator_loop(ControlMode::MfcEfficient, 0.2);
        let init = InitialCondition::new(vec![0.0, 0.0], vec![], ModelInit::Exact);
        let res = run_closed_loop(&sc, &init, &SimConfig::new(1e-2, 20.0).unwrap()).unwrap();
        let m = extract_metrics(&res, 0.25).unwrap();
        assert!(m.tail_tracking_error < 1e-6, "{}", m.tail_tracking_error);
        assert_eq!(res.len(), 2001);
        assert_eq!(res.rhs_evaluations, 8000);
        assert!(res.aborted.is_none());
    }

    #[test]
    fn runs_are_deterministic() {
        let sc = double_integrator_loop(ControlMode::MfcClassical, 0.1);
        let init = InitialCondition::new(vec![0.3, -1.0], vec![], ModelInit::Exact);
        let cfg = SimConfig::new(1e-2, 3.0).unwrap();
        assert_eq!(
            run_closed_loop(&sc, &init, &cfg).unwrap(),
            run_closed_loop(&sc, &init, &cfg).unwrap()
        );
    }

    #[test]
    fn consistent_init_matches_single_loop() {
        let cfg = SimConfig::new(1e-3, 5.0).unwrap();
        let mfc = double_integrator_loop(ControlMode::MfcEfficient, 0.1);
        let sl = double_integrator_loop(ControlMode::SingleLoop, 0.1);
        let a = run_closed_loop(
            &mfc,
            &InitialCondition::new(vec![0.5, 0.2], vec![], ModelInit::Consistent),
            &cfg,
        )
        .unwrap();
        let b = run_closed_loop(
            &sl,
            &InitialCondition::new(vec![0.5, 0.2], vec![], ModelInit::Exact),
            &cfg,
        )
        .unwrap();
        let scale = b.u.iter().fold(0.0, |m: f64, u| m.max(u.abs()));
        for (ua, ub) in a.u.iter().zip(&b.u) {
            assert!((ua - ub).abs() <= 1e-9 * scale, "{ua} vs {ub}");
        }
    }

    #[test]
    fn guard_trip_is_recorded() {
        let sc = double_integrator_loop(ControlMode::SingleLoop, 0.01);
        let init = InitialCondition::new(vec![50.0, 0.0], vec![], ModelInit::Exact);
        let mut cfg = SimConfig::new(0.05, 5.0).unwrap();
        cfg.state_guard = 1e3;
        let res = run_closed_loop(&sc, &init, &cfg).unwrap();
        assert!(matches!(
            res.aborted,
            Some(Abort {
                reason: AbortReason::GuardTripped { .. },
                ..
            })
        ));
        assert!(matches!(res.check(), Err(SimError::GuardTripped { .. })));
        assert!(res.len() < cfg.steps());
    }

    #[test]
    fn stride_decimates() {
        let sc = double_integrator_loop(ControlMode::MfcEfficient, 0.2);
        let init = InitialCondition::new(vec![0.0, 0.0], vec![], ModelInit::Exact);
        let res = run_closed_loop(&sc, &init, &SimConfig::new(1e-2, 1.0).unwrap().with_stride(10)).unwrap();
        assert_eq!(res.len(), 11);
        assert!((res.times[10] - 1.0).abs() < 1e-12);
    }

    fn synthetic(u: Vec<f64>) -> SimResult {
        let n = u.len();
        let layout = StateLayout {
            n_xi: 1,
            n_eta: 0,
            controller: 0,
            observer: 0,
        };
        let mut r = SimResult::empty(ControlMode::SingleLoop, &SimConfig::new(1.0, n as f64).unwrap(), layout);
        r.times = (0..n).map(|i| i as f64).collect();
        r.xi = vec![vec![0.0]; n];
        r.eta = vec![vec![]; n];
        r.reference = vec![vec![0.0]; n];
        r.v_star = vec![0.0; n];
        r.v_tilde = vec![0.0; n];
        r.u = u;
        r
    }

    #[test]
    fn metrics_examples() {
        let m = extract_metrics(&synthetic(vec![3.0; 10]), 0.25).unwrap();
        assert_eq!(m.sup_abs_u, 3.0);
        let alt: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 5.0 } else { -5.0 }).collect();
        assert_eq!(extract_metrics(&synthetic(alt), 0.25).unwrap().sup_abs_u, 5.0);
        assert!(extract_metrics(&synthetic(vec![1.0]), 1.5).is_err());
    }

    #[test]
    fn grid_shapes() {
        let g = box_grid(&[0.0, 10.0], &[2.0, 2.0], 5, None).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], vec![-2.0, 8.0]);
        assert_eq!(g[24], vec![2.0, 12.0]);
        let j1 = box_grid(&[0.0, 0.0], &[1.0, 1.0], 3, Some((7, 0.5))).unwrap();
        let j2 = box_grid(&[0.0, 0.0], &[1.0, 1.0], 3, Some((7, 0.5))).unwrap();
        assert_eq!(j1, j2);
        assert_ne!(j1, box_grid(&[0.0, 0.0], &[1.0, 1.0], 3, None).unwrap());
        assert_eq!(box_grid(&[1.0], &[1.0], 1, None).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn consistent_grid_gives_equal_peaks() {
        let factory = |mode, eps| Ok(double_integrator_loop(mode, eps));
        let grid = vec![(vec![0.0, 0.0], vec![])];
        let table = peaking_experiment(factory, &grid, &[0.2], &SimConfig::new(1e-2, 5.0).unwrap()).unwrap();
        let row = &table.rows[0];
        assert!((row.mfc_max - row.single_loop_max).abs() <= 1e-9 * row.mfc_max);
    }

    #[test]
    fn peaking_on_inconsistent_grid() {
        let factory = |mode, eps| Ok(double_integrator_loop(mode, eps));
        let grid: Vec<_> = box_grid(&[0.0, 0.0], &[1.0, 1.0], 3, None)
            .unwrap()
            .into_iter()
            .map(|p| (p, vec![]))
            .collect();
        let table = peaking_experiment(factory, &grid, &[0.5, 0.1], &SimConfig::new(1e-3, 5.0).unwrap()).unwrap();
        assert_eq!(table.rows[0].epsilon, 0.5);
        let small = &table.rows[1];
        assert!(small.mfc_below_single_loop());
        assert!(small.single_loop_initial_max <= small.single_loop_max * (1.0 + 1e-12));
    }

    #[test]
    fn mcl_cost_ordering() {
        let plant = toy::pendulum_like();
        let design = GainDesign::new(vec![1.0, 2.0], 0.2).unwrap();
        let eff = Controller::new(ControlMode::MfcEfficient, design.clone(), None, plant.clone()).unwrap();
        let cls = Controller::new(ControlMode::MfcClassical, design, None, plant).unwrap();
        let r = ReferenceSignal::constant(0.5, 2).unwrap();
        let t = mcl_benchmark(
            &eff,
            &cls,
            &r,
            &[0.0, 0.0],
            &[0.0],
            &SimConfig::new(1e-3, 1.0).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!((t.efficient_states, t.classical_states), (2, 3));
        assert!(t.efficient_seconds > 0.0 && t.classical_seconds > 0.0);
    }
}
