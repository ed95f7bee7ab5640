//! Scenario files: TOML schema, validation and resolution into core objects.

use std::collections::BTreeMap;

use mfc_core::controllers::{epsilon_bounds, ControlMode, Controller, GainDesign, PiGains};
use mfc_core::plant::{toy, PerturbationBound, PlantDynamics};
use mfc_core::reference::{reference_bound, ReferenceSignal, Transition};
use mfc_core::sim::{InitialCondition, ModelInit, Scenario, SimConfig};
use mfc_core::vehicle::{case_study_pi_gains, kmh_to_ms, CaseStudy, FrictionSchedule, TireEstimates, VehicleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the bound-limited ε used when the scenario leaves ε open.
pub const AUTO_EPSILON_FACTOR: f64 = 0.99;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown preset '{name}' (available: {available})")]
    UnknownPreset { name: String, available: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantConfig {
    Vehicle(VehicleConfig),
    Toy(ToyConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Accel,
    Decel,
    AdvancedCruise,
    Cruise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub benchmark: Benchmark,
    /// Named parameter set; only "paper-rwd" ships.
    #[serde(default = "default_parameter_set")]
    pub parameters: String,
    /// Per-field overrides of the parameter set, e.g. `mass = 2100.0`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cruise_kmh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_speed_kmh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<EstimatesConfig>,
    /// Road friction steps; the first must start at 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<FrictionStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twist_estimate0: Option<f64>,
}

fn default_parameter_set() -> String {
    "paper-rwd".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesConfig {
    pub road_friction: f64,
    pub tire_stiffness: f64,
    pub tire_shape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionStep {
    pub start: f64,
    pub mu: f64,
    pub mu_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToySystem {
    DoubleIntegrator,
    PerturbedDoubleIntegrator,
    PendulumLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub system: ToySystem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub mode: String,
    pub k: Vec<f64>,
    /// Left open, ε is set just below the precision bound of `[design]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub kp: f64,
    pub ki: f64,
}

impl From<PiConfig> for PiGains {
    fn from(c: PiConfig) -> Self {
        PiGains {
            a0: c.a0,
            a1: c.a1,
            b0: c.b0,
            kp: c.kp,
            ki: c.ki,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    #[default]
    Si,
    Kmh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default)]
    pub unit: Unit,
    pub initial: f64,
    #[serde(default)]
    pub transitions: Vec<TransitionConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub start: f64,
    pub target: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelInitPolicy {
    #[default]
    Exact,
    Consistent,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub model_init: ModelInitPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_step")]
    pub step: f64,
    /// Defaults to the benchmark horizon for vehicles and 30 s for toys.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_guard")]
    pub guard: f64,
    /// Start of the window used for the tail tracking error. Without it the
    /// last quarter of the horizon is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_start: Option<f64>,
    /// End of the window in which the initial input peak is measured.
    #[serde(default = "default_peak_window")]
    pub peak_window: f64,
}

fn default_step() -> f64 {
    1e-3
}
fn default_stride() -> usize {
    1
}
fn default_guard() -> f64 {
    1e7
}
fn default_peak_window() -> f64 {
    1.0
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            step: default_step(),
            horizon: None,
            stride: default_stride(),
            guard: default_guard(),
            tail_start: None,
            peak_window: default_peak_window(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_inf: Option<f64>,
    /// Perturbation bound offset; fitted from a run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub modes: Vec<String>,
    /// Empty means the scenario's own ε.
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    pub half_widths: Vec<f64>,
    /// Relative jitter of the grid points; 0 keeps the regular grid.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_points() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

fn default_dir() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn mode(&self) -> Result<ControlMode, ConfigError> {
        parse_mode("controller.mode", &self.controller.mode)
    }

    /// Checks every field and builds the runnable objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        Resolved::new(self)
    }
}

pub fn parse_mode(field: &str, text: &str) -> Result<ControlMode, ConfigError> {
    text.parse().map_err(|e: String| invalid(field, e))
}

fn check_epsilon(field: &str, eps: f64) -> Result<(), ConfigError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("epsilon = {eps} must lie in the open interval (0, 1)"),
        ))
    }
}

fn check_positive(field: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {value}")))
    }
}

fn apply_override(params: &mut VehicleParams, key: &str, value: f64) -> Result<(), ConfigError> {
    let slot = match key {
        "motor_lag" => &mut params.motor_lag,
        "gear_ratio" => &mut params.gear_ratio,
        "crank_inertia" => &mut params.crank_inertia,
        "crank_friction" => &mut params.crank_friction,
        "shaft_stiffness" => &mut params.shaft_stiffness,
        "shaft_damping" => &mut params.shaft_damping,
        "axle_inertia" => &mut params.axle_inertia,
        "tire_shape" => &mut params.tire_shape,
        "tire_stiffness" => &mut params.tire_stiffness,
        "mass" => &mut params.mass,
        "gravity" => &mut params.gravity,
        "front_distance" => &mut params.front_distance,
        "rear_distance" => &mut params.rear_distance,
        "air_density" => &mut params.air_density,
        "wheel_radius" => &mut params.wheel_radius,
        "drag_coefficient" => &mut params.drag_coefficient,
        "frontal_area" => &mut params.frontal_area,
        "road_friction" => &mut params.road_friction,
        "slip_smoothing" => &mut params.slip_smoothing,
        other => return Err(invalid(format!("plant.overrides.{other}"), "unknown vehicle parameter")),
    };
    *slot = value;
    Ok(())
}

/// The plant side of a resolved scenario.
#[derive(Debug, Clone)]
pub enum System {
    Vehicle(Box<CaseStudy>),
    Toy {
        plant: PlantDynamics,
        reference: ReferenceSignal,
        bound: Option<PerturbationBound>,
    },
}

/// A validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ScenarioConfig,
    pub mode: ControlMode,
    pub system: System,
    pub design: GainDesign,
    pub pi: Option<PiGains>,
    pub sim: SimConfig,
    pub xi0: Vec<f64>,
    pub eta0: Vec<f64>,
    pub model_init: ModelInit,
    pub tail_start: f64,
}

impl Resolved {
    fn new(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        let mode = cfg.mode()?;
        let system = build_system(cfg)?;
        let n_xi = match &system {
            System::Vehicle(_) => 2,
            System::Toy { plant, .. } => plant.n_xi(),
        };
        if cfg.controller.k.len() != n_xi {
            return Err(invalid(
                "controller.k",
                format!("needs {n_xi} entries for this plant, got {}", cfg.controller.k.len()),
            ));
        }
        let pi = match (cfg.controller.pi, &system) {
            (Some(p), _) => Some(PiGains::from(p)),
            (None, System::Vehicle(case)) => Some(case_study_pi_gains(&case.params)),
            (None, System::Toy { .. }) => None,
        };
        if mode.is_pi() && pi.is_none() {
            return Err(invalid("controller.pi", format!("{mode} needs PI constants")));
        }

        let step = cfg.sim.step;
        check_positive("sim.step", step)?;
        let horizon = match (cfg.sim.horizon, &system) {
            (Some(h), _) => h,
            (None, System::Vehicle(case)) => case.horizon,
            (None, System::Toy { .. }) => 30.0,
        };
        check_positive("sim.horizon", horizon)?;
        check_positive("sim.guard", cfg.sim.guard)?;
        check_positive("sim.peak_window", cfg.sim.peak_window)?;
        if cfg.sim.stride == 0 {
            return Err(invalid("sim.stride", "must be at least 1"));
        }
        let sim = SimConfig::new(step, horizon)
            .map_err(|e| invalid("sim", e.to_string()))?
            .with_stride(cfg.sim.stride);
        let sim = SimConfig {
            state_guard: cfg.sim.guard,
            ..sim
        };
        let tail_start = match cfg.sim.tail_start {
            Some(t) if (0.0..horizon).contains(&t) => t,
            Some(t) => return Err(invalid("sim.tail_start", format!("{t} is outside [0, {horizon})"))),
            None => 0.75 * horizon,
        };

        let epsilon = match cfg.controller.epsilon {
            Some(eps) => {
                check_epsilon("controller.epsilon", eps)?;
                eps
            }
            None => auto_epsilon(cfg, &system, horizon)?,
        };
        let design =
            GainDesign::new(cfg.controller.k.clone(), epsilon).map_err(|e| invalid("controller.k", e.to_string()))?;

        let (xi0, eta0) = initial_state(cfg, &system)?;
        let model_init = match cfg.initial.model_init {
            ModelInitPolicy::Exact => ModelInit::Exact,
            _ if !mode.has_model() => {
                return Err(invalid(
                    "initial.model_init",
                    format!("{mode} has no model; only 'exact' applies"),
                ))
            }
            ModelInitPolicy::Consistent => ModelInit::Consistent,
            ModelInitPolicy::Explicit => match &cfg.initial.xi_star {
                Some(v) if v.len() == n_xi => ModelInit::Explicit(v.clone()),
                Some(v) => {
                    return Err(invalid(
                        "initial.xi_star",
                        format!("needs {n_xi} entries, got {}", v.len()),
                    ))
                }
                None => return Err(invalid("initial.xi_star", "required when model_init = 'explicit'")),
            },
        };
        if cfg.initial.xi_star.is_some() && cfg.initial.model_init != ModelInitPolicy::Explicit {
            return Err(invalid("initial.xi_star", "only used with model_init = 'explicit'"));
        }
        if let Some(c) = &cfg.compare {
            if c.modes.is_empty() {
                return Err(invalid("compare.modes", "needs at least one mode"));
            }
            for (i, m) in c.modes.iter().enumerate() {
                let m = parse_mode(&format!("compare.modes[{i}]"), m)?;
                if m.is_pi() && pi.is_none() {
                    return Err(invalid(
                        format!("compare.modes[{i}]"),
                        format!("{m} needs PI constants"),
                    ));
                }
            }
            for (i, e) in c.epsilons.iter().enumerate() {
                check_epsilon(&format!("compare.epsilons[{i}]"), *e)?;
            }
        }
        if let Some(s) = &cfg.sweep {
            if s.epsilons.is_empty() {
                return Err(invalid("sweep.epsilons", "needs at least one entry"));
            }
            for (i, e) in s.epsilons.iter().enumerate() {
                check_epsilon(&format!("sweep.epsilons[{i}]"), *e)?;
            }
            if s.half_widths.len() != n_xi {
                return Err(invalid("sweep.half_widths", format!("needs {n_xi} entries")));
            }
            if s.points == 0 {
                return Err(invalid("sweep.points", "must be at least 1"));
            }
            if !(0.0..1.0).contains(&s.jitter) {
                return Err(invalid("sweep.jitter", "must lie in [0, 1)"));
            }
        }
        let resolved = Self {
            config: cfg.clone(),
            mode,
            system,
            design,
            pi,
            sim,
            xi0,
            eta0,
            model_init,
            tail_start,
        };
        // Building once surfaces controller and plant mismatches as config errors.
        resolved.scenario(mode, epsilon).map_err(|e| invalid("controller", e))?;
        Ok(resolved)
    }

    pub fn epsilon(&self) -> f64 {
        self.design.epsilon()
    }

    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition::new(self.xi0.clone(), self.eta0.clone(), self.model_init.clone())
    }

    /// Reference for `ξ₁`.
    pub fn reference(&self) -> ReferenceSignal {
        match &self.system {
            System::Vehicle(case) => case.wheel_reference(),
            System::Toy { reference, .. } => reference.clone(),
        }
    }

    pub fn scenario(&self, mode: ControlMode, epsilon: f64) -> Result<Scenario, String> {
        let design = self.design.with_epsilon(epsilon).map_err(|e| e.to_string())?;
        let pi = if mode.is_pi() { self.pi } else { None };
        match &self.system {
            System::Vehicle(case) => case.scenario(mode, &design, pi).map_err(|e| e.to_string()),
            System::Toy { plant, reference, .. } => {
                let controller = Controller::new(mode, design, pi, plant.clone()).map_err(|e| e.to_string())?;
                Scenario::new(plant.clone(), controller, reference.clone()).map_err(|e| e.to_string())
            }
        }
    }
}

fn build_system(cfg: &ScenarioConfig) -> Result<System, ConfigError> {
    match &cfg.plant {
        PlantConfig::Vehicle(v) => {
            if v.parameters != "paper-rwd" {
                return Err(invalid(
                    "plant.parameters",
                    format!("unknown parameter set '{}' (available: paper-rwd)", v.parameters),
                ));
            }
            let mut case = match v.benchmark {
                Benchmark::Accel => CaseStudy::accel(),
                Benchmark::Decel => CaseStudy::decel(),
                Benchmark::AdvancedCruise => CaseStudy::advanced_cruise(),
                Benchmark::Cruise => {
                    let kmh = v
                        .cruise_kmh
                        .ok_or_else(|| invalid("plant.cruise_kmh", "required for the cruise benchmark"))?;
                    check_positive("plant.cruise_kmh", kmh)?;
                    CaseStudy::cruise(kmh, 20.0)
                }
            };
            if v.cruise_kmh.is_some() && v.benchmark != Benchmark::Cruise {
                return Err(invalid("plant.cruise_kmh", "only used with benchmark = 'cruise'"));
            }
            for (key, value) in &v.overrides {
                apply_override(&mut case.params, key, *value)?;
            }
            case.params
                .validate()
                .map_err(|e| invalid("plant.overrides", e.to_string()))?;
            if let Some(kmh) = v.initial_speed_kmh {
                case.initial_speed = kmh_to_ms(kmh);
            }
            if let Some(e) = v.estimates {
                case.estimates = TireEstimates {
                    road_friction: e.road_friction,
                    tire_stiffness: e.tire_stiffness,
                    tire_shape: e.tire_shape,
                };
                case.estimates
                    .validate()
                    .map_err(|e| invalid("plant.estimates", e.to_string()))?;
            }
            if let Some(steps) = &v.schedule {
                case.schedule = FrictionSchedule {
                    steps: steps.iter().map(|s| (s.start, s.mu, s.mu_hat)).collect(),
                };
            }
            case.schedule
                .validate()
                .map_err(|e| invalid("plant.schedule", e.to_string()))?;
            if let Some(t) = v.twist_estimate0 {
                case.twist_estimate0 = t;
            }
            if let Some(r) = &cfg.reference {
                let scale = match r.unit {
                    Unit::Si => 1.0,
                    Unit::Kmh => 1.0 / 3.6,
                };
                case.speed_reference = build_reference(r, scale)?;
            }
            Ok(System::Vehicle(Box::new(case)))
        }
        PlantConfig::Toy(t) => {
            let plant = match t.system {
                ToySystem::DoubleIntegrator => toy::double_integrator(),
                ToySystem::PendulumLike => toy::pendulum_like(),
                ToySystem::PerturbedDoubleIntegrator => toy::perturbed_double_integrator(
                    t.amplitude.unwrap_or(0.0),
                    t.omega.unwrap_or(1.0),
                    t.lipschitz.unwrap_or(0.0),
                ),
            };
            if t.system != ToySystem::PerturbedDoubleIntegrator
                && (t.amplitude.is_some() || t.omega.is_some() || t.lipschitz.is_some())
            {
                return Err(invalid(
                    "plant",
                    "amplitude, omega and lipschitz only apply to perturbed-double-integrator",
                ));
            }
            let bound = match t.system {
                ToySystem::DoubleIntegrator => Some(PerturbationBound::zero()),
                ToySystem::PerturbedDoubleIntegrator => Some(
                    PerturbationBound::new(t.amplitude.unwrap_or(0.0).abs(), t.lipschitz.unwrap_or(0.0).abs())
                        .map_err(|e| invalid("plant", e.to_string()))?,
                ),
                ToySystem::PendulumLike => None,
            };
            let r = cfg
                .reference
                .as_ref()
                .ok_or_else(|| invalid("reference", "toy plants need a [reference] table"))?;
            if r.unit != Unit::Si {
                return Err(invalid("reference.unit", "toy references are in SI units"));
            }
            let reference = build_reference(r, 1.0)?;
            Ok(System::Toy {
                plant,
                reference,
                bound,
            })
        }
    }
}

fn build_reference(r: &ReferenceConfig, scale: f64) -> Result<ReferenceSignal, ConfigError> {
    let transitions: Vec<Transition> = r
        .transitions
        .iter()
        .map(|t| Transition {
            start: t.start,
            target: t.target * scale,
            duration: t.duration,
        })
        .collect();
    ReferenceSignal::from_transitions(r.initial * scale, &transitions, 2)
        .map_err(|e| invalid("reference.transitions", e.to_string()))
}

fn initial_state(cfg: &ScenarioConfig, system: &System) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    match system {
        System::Vehicle(case) => {
            if cfg.initial.xi.is_some() || cfg.initial.eta.is_some() {
                return Err(invalid(
                    "initial",
                    "vehicle initial states follow from plant.initial_speed_kmh",
                ));
            }
            let s = case.initial_state();
            Ok((s.xi, s.eta))
        }
        System::Toy { plant, .. } => {
            let xi = cfg
                .initial
                .xi
                .clone()
                .ok_or_else(|| invalid("initial.xi", "required for toy plants"))?;
            let eta = cfg.initial.eta.clone().unwrap_or_else(|| vec![0.0; plant.n_eta()]);
            plant
                .check_dims(&xi, &eta)
                .map_err(|e| invalid("initial", e.to_string()))?;
            Ok((xi, eta))
        }
    }
}

/// Perturbation bound declared in `[design]`, else the toy's own bound.
pub fn declared_bound(cfg: &ScenarioConfig, system: &System) -> Result<Option<PerturbationBound>, ConfigError> {
    let design = cfg.design.unwrap_or_default();
    match (design.delta, design.lipschitz) {
        (Some(d), Some(l)) => PerturbationBound::new(d, l)
            .map(Some)
            .map_err(|e| invalid("design", e.to_string())),
        (None, None) => Ok(match system {
            System::Toy { bound, .. } => *bound,
            System::Vehicle(_) => None,
        }),
        _ => Err(invalid("design", "give both delta and lipschitz or neither")),
    }
}

fn auto_epsilon(cfg: &ScenarioConfig, system: &System, horizon: f64) -> Result<f64, ConfigError> {
    let r_inf = cfg.design.and_then(|d| d.r_inf).ok_or_else(|| {
        invalid(
            "controller.epsilon",
            "missing; give it or set design.r_inf to derive it",
        )
    })?;
    check_positive("design.r_inf", r_inf)?;
    let bound = declared_bound(cfg, system)?.ok_or_else(|| {
        invalid(
            "controller.epsilon",
            "cannot be derived without design.delta and design.lipschitz for this plant",
        )
    })?;
    let probe = GainDesign::new(cfg.controller.k.clone(), 0.5).map_err(|e| invalid("controller.k", e.to_string()))?;
    let reference = match system {
        System::Vehicle(case) => case.wheel_reference(),
        System::Toy { reference, .. } => reference.clone(),
    };
    let r_d = reference_bound(&reference, horizon, 0.0);
    let eps = epsilon_bounds(&probe, &bound, r_d, r_inf)
        .map_err(|e| invalid("design", e.to_string()))?
        .precision;
    Ok((AUTO_EPSILON_FACTOR * eps).min(AUTO_EPSILON_FACTOR))
}
