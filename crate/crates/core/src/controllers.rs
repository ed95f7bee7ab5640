//! Control laws and design-time bound computations.
//!
//! The controllers here are pure: they map a measurement, a desired state and
//! the controller's internal state to a plant input and the time derivative of
//! that internal state. Integration is left to [`crate::sim`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ctrlmath::{is_hurwitz, solve_lyapunov, sym_eig_extremes, LinalgError, Matrix, RationalTransfer};
use crate::plant::{norm2, PerturbationBound, PlantDynamics, PlantError};
use crate::reference::DesiredState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("scaling epsilon must be positive, got {0}")]
    InvalidScaling(f64),
    #[error("target precision r_inf must be positive, got {0}")]
    InvalidPrecision(f64),
    #[error("epsilon {epsilon} violates the stability bound 1/epsilon > {limit}")]
    StabilityBoundViolated { epsilon: f64, limit: f64 },
    #[error("gain vector is empty")]
    EmptyGain,
    #[error("gain k = {k:?} does not make A - B k^T Hurwitz: {source}")]
    NotHurwitz { k: Vec<f64>, source: LinalgError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("{mode} needs {needed}")]
    Unsupported { mode: ControlMode, needed: &'static str },
    #[error("controller state has length {found}, expected {expected}")]
    StateMismatch { expected: usize, found: usize },
}

/// The five closed-loop structures offered by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlMode {
    MfcEfficient,
    MfcClassical,
    SingleLoop,
    PiMfc,
    PiSingleLoop,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] = [
        ControlMode::MfcEfficient,
        ControlMode::MfcClassical,
        ControlMode::SingleLoop,
        ControlMode::PiMfc,
        ControlMode::PiSingleLoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlMode::MfcEfficient => "mfc_efficient",
            ControlMode::MfcClassical => "mfc_classical",
            ControlMode::SingleLoop => "single_loop",
            ControlMode::PiMfc => "pi_mfc",
            ControlMode::PiSingleLoop => "pi_single_loop",
        }
    }

    /// Whether the mode runs a model control loop.
    pub fn has_model(self) -> bool {
        matches!(
            self,
            ControlMode::MfcEfficient | ControlMode::MfcClassical | ControlMode::PiMfc
        )
    }

    pub fn is_pi(self) -> bool {
        matches!(self, ControlMode::PiMfc | ControlMode::PiSingleLoop)
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ControlMode::ALL.into_iter().find(|m| m.name() == norm).ok_or_else(|| {
            let names: Vec<_> = ControlMode::ALL.iter().map(|m| m.name()).collect();
            format!("unknown controller mode '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// `k̃_i = k_i / ε^(n−i+1)` for 1-based `i`.
pub fn scale_gain(k: &[f64], epsilon: f64) -> Result<Vec<f64>, ControllerError> {
    if k.is_empty() {
        return Err(ControllerError::EmptyGain);
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ControllerError::InvalidScaling(epsilon));
    }
    let n = k.len();
    Ok(k.iter()
        .enumerate()
        .map(|(i, ki)| ki / epsilon.powi((n - i) as i32))
        .collect())
}

/// Companion matrix `A − B kᵀ` of the Brunovský chain.
pub fn closed_loop_matrix(k: &[f64]) -> Matrix {
    let n = k.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for (j, kj) in k.iter().enumerate() {
        a[(n - 1, j)] = -kj;
    }
    a
}

/// Gain pair `(k, k̃_ε)` with the Lyapunov artifacts used by the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    k: Vec<f64>,
    epsilon: f64,
    k_scaled: Vec<f64>,
    lyapunov: Matrix,
    lambda_min: f64,
    lambda_max: f64,
    p_ratio: f64,
    pb_norm: f64,
}

impl GainDesign {
    /// Fails unless `A − B kᵀ` is Hurwitz and `0 < ε ≤ 1`.
    pub fn new(k: Vec<f64>, epsilon: f64) -> Result<Self, ControllerError> {
        if k.is_empty() {
            return Err(ControllerError::EmptyGain);
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ControllerError::InvalidScaling(epsilon));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite.into());
        }
        let a_cl = closed_loop_matrix(&k);
        let p = solve_lyapunov(&a_cl).map_err(|source| match source {
            LinalgError::NotHurwitz { .. } => ControllerError::NotHurwitz { k: k.clone(), source },
            other => other.into(),
        })?;
        let (lambda_min, lambda_max) = sym_eig_extremes(&p)?;
        let n = k.len();
        // P B is the last column of P.
        let pb: Vec<f64> = (0..n).map(|i| p[(i, n - 1)]).collect();
        let k_scaled = scale_gain(&k, epsilon)?;
        Ok(Self {
            k,
            epsilon,
            k_scaled,
            lyapunov: p,
            lambda_min,
            lambda_max,
            p_ratio: (lambda_max / lambda_min).sqrt(),
            pb_norm: norm2(&pb),
        })
    }

    /// Same `k` with a different scaling.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ControllerError> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ControllerError::InvalidScaling(epsilon));
        }
        Ok(Self {
            epsilon,
            k_scaled: scale_gain(&self.k, epsilon)?,
            ..self.clone()
        })
    }

    pub fn n_xi(&self) -> usize {
        self.k.len()
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k_scaled(&self) -> &[f64] {
        &self.k_scaled
    }

    /// Solution `P` of `(A − Bkᵀ)ᵀP + P(A − Bkᵀ) = −I`.
    pub fn lyapunov(&self) -> &Matrix {
        &self.lyapunov
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `√(λ_max / λ_min)`.
    pub fn p_ratio(&self) -> f64 {
        self.p_ratio
    }

    /// `‖P B‖₂`.
    pub fn pb_norm(&self) -> f64 {
        self.pb_norm
    }
}

/// Admissible upper limits for ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonBounds {
    /// Largest ε keeping `1/ε > 2‖PB‖L_Δ`, capped at 1.
    pub stability: f64,
    /// Largest ε guaranteeing the requested ultimate bound, capped at 1.
    pub precision: f64,
}

pub fn epsilon_bounds(
    design: &GainDesign,
    bound: &PerturbationBound,
    r_d: f64,
    r_inf: f64,
) -> Result<EpsilonBounds, ControllerError> {
    if !(r_inf > 0.0) {
        return Err(ControllerError::InvalidPrecision(r_inf));
    }
    let c = 2.0 * design.pb_norm;
    let drift = c * bound.lipschitz;
    let stability = if drift > 0.0 { (1.0 / drift).min(1.0) } else { 1.0 };
    let forcing = c * design.p_ratio * bound.at_radius(r_d.max(0.0)) / r_inf;
    let denom = forcing + drift;
    let precision = if denom > 0.0 { (1.0 / denom).min(1.0) } else { 1.0 };
    Ok(EpsilonBounds {
        stability,
        precision: precision.min(stability),
    })
}

/// Predicted ultimate radius `p · c(δ + L_Δ r) / (1/ε − c L_Δ)` of the
/// process-loop error, with `c = 2‖PB‖₂`.
pub fn ultimate_radius(design: &GainDesign, bound: &PerturbationBound, r: f64) -> Result<f64, ControllerError> {
    let c = 2.0 * design.pb_norm;
    let margin = 1.0 / design.epsilon - c * bound.lipschitz;
    if !(margin > 0.0) {
        return Err(ControllerError::StabilityBoundViolated {
            epsilon: design.epsilon,
            limit: c * bound.lipschitz,
        });
    }
    Ok(design.p_ratio * c * bound.at_radius(r) / margin)
}

/// Constants of the PI process loop `ṽ = −a₀e₁ − a₁e₂ + b₀w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub kp: f64,
    pub ki: f64,
}

impl PiGains {
    /// Open loop from `w` to the output through the shaped chain.
    pub fn open_loop(&self) -> Result<RationalTransfer, LinalgError> {
        RationalTransfer::pi_loop(self.a0, self.a1, self.b0, self.kp, self.ki)
    }
}

/// PI auxiliary input. `e1`, `e2` are output-minus-target errors; the
/// integrator accumulates `−e1`. Returns `(v, integral_rate)`.
pub fn pi_auxiliary(gains: &PiGains, e1: f64, e2: f64, integral: f64) -> (f64, f64) {
    let w = gains.kp * (-e1) + gains.ki * integral;
    (-gains.a0 * e1 - gains.a1 * e2 + gains.b0 * w, -e1)
}

/// Number of ODE states integrated by the controller itself.
pub fn controller_cost(mode: ControlMode, n_xi: usize, n_eta: usize) -> usize {
    match mode {
        ControlMode::MfcEfficient => n_xi,
        ControlMode::MfcClassical => n_xi + n_eta,
        ControlMode::SingleLoop => 0,
        ControlMode::PiMfc => n_xi + 1,
        ControlMode::PiSingleLoop => 1,
    }
}

/// Typed view of the controller-internal state.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerState {
    MfcEfficient { xi_star: Vec<f64> },
    MfcClassical { xi_star: Vec<f64>, eta_star: Vec<f64> },
    SingleLoop,
    PiMfc { xi_star: Vec<f64>, integral: f64 },
    PiSingleLoop { integral: f64 },
}

impl ControllerState {
    pub fn mode(&self) -> ControlMode {
        match self {
            ControllerState::MfcEfficient { .. } => ControlMode::MfcEfficient,
            ControllerState::MfcClassical { .. } => ControlMode::MfcClassical,
            ControllerState::SingleLoop => ControlMode::SingleLoop,
            ControllerState::PiMfc { .. } => ControlMode::PiMfc,
            ControllerState::PiSingleLoop { .. } => ControlMode::PiSingleLoop,
        }
    }

    pub fn xi_star(&self) -> Option<&[f64]> {
        match self {
            ControllerState::MfcEfficient { xi_star }
            | ControllerState::MfcClassical { xi_star, .. }
            | ControllerState::PiMfc { xi_star, .. } => Some(xi_star),
            _ => None,
        }
    }

    /// Flattened layout `[ξ*, η*, integral]` (absent parts skipped).
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ControllerState::MfcEfficient { xi_star } => xi_star.clone(),
            ControllerState::MfcClassical { xi_star, eta_star } => [xi_star.as_slice(), eta_star].concat(),
            ControllerState::SingleLoop => Vec::new(),
            ControllerState::PiMfc { xi_star, integral } => {
                let mut v = xi_star.clone();
                v.push(*integral);
                v
            }
            ControllerState::PiSingleLoop { integral } => vec![*integral],
        }
    }

    pub fn from_slice(mode: ControlMode, n_xi: usize, n_eta: usize, s: &[f64]) -> Result<Self, ControllerError> {
        let expected = controller_cost(mode, n_xi, n_eta);
        if s.len() != expected {
            return Err(ControllerError::StateMismatch {
                expected,
                found: s.len(),
            });
        }
        Ok(match mode {
            ControlMode::MfcEfficient => ControllerState::MfcEfficient { xi_star: s.to_vec() },
            ControlMode::MfcClassical => ControllerState::MfcClassical {
                xi_star: s[..n_xi].to_vec(),
                eta_star: s[n_xi..].to_vec(),
            },
            ControlMode::SingleLoop => ControllerState::SingleLoop,
            ControlMode::PiMfc => ControllerState::PiMfc {
                xi_star: s[..n_xi].to_vec(),
                integral: s[n_xi],
            },
            ControlMode::PiSingleLoop => ControllerState::PiSingleLoop { integral: s[0] },
        })
    }
}

/// Control input and its decomposition at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: f64,
    /// Model-loop auxiliary input (zero for single-loop modes).
    pub v_star: f64,
    /// Process-loop auxiliary input; for single-loop modes the whole feedback term.
    pub v_tilde: f64,
    /// `(u*, ũ)` in classical mode.
    pub decomposition: Option<(f64, f64)>,
    /// Time derivative of the flattened controller state.
    pub mcl_derivative: Vec<f64>,
}

/// `kᵀ(x − y)`.
fn gain_error(k: &[f64], x: &[f64], y: &[f64]) -> f64 {
    k.iter().zip(x.iter().zip(y)).map(|(ki, (xi, yi))| ki * (xi - yi)).sum()
}

fn chain_rate(xi: &[f64], top: f64, out: &mut [f64]) {
    let n = xi.len();
    out[..n - 1].copy_from_slice(&xi[1..]);
    out[n - 1] = top;
}

/// A configured controller: mode, gains and the nominal model it cancels.
#[derive(Debug, Clone)]
pub struct Controller {
    mode: ControlMode,
    design: GainDesign,
    pi: Option<PiGains>,
    model: PlantDynamics,
}

impl Controller {
    pub fn new(
        mode: ControlMode,
        design: GainDesign,
        pi: Option<PiGains>,
        model: PlantDynamics,
    ) -> Result<Self, ControllerError> {
        if design.n_xi() != model.n_xi() {
            return Err(PlantError::InvalidDimension(format!(
                "gain has {} entries but the model has n_xi = {}",
                design.n_xi(),
                model.n_xi()
            ))
            .into());
        }
        if mode.is_pi() {
            if pi.is_none() {
                return Err(ControllerError::Unsupported {
                    mode,
                    needed: "PI constants",
                });
            }
            if model.n_xi() != 2 {
                return Err(ControllerError::Unsupported {
                    mode,
                    needed: "n_xi = 2",
                });
            }
        }
        Ok(Self {
            mode,
            design,
            pi,
            model: model.nominal(),
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn design(&self) -> &GainDesign {
        &self.design
    }

    pub fn pi_gains(&self) -> Option<&PiGains> {
        self.pi.as_ref()
    }

    pub fn model(&self) -> &PlantDynamics {
        &self.model
    }

    pub fn state_dim(&self) -> usize {
        controller_cost(self.mode, self.model.n_xi(), self.model.n_eta())
    }

    /// Initial controller state for model state `xi_star0` (ignored by
    /// single-loop modes); classical mode starts `η*` at `eta0`.
    pub fn initial_state(&self, xi_star0: &[f64], eta0: &[f64]) -> ControllerState {
        match self.mode {
            ControlMode::MfcEfficient => ControllerState::MfcEfficient {
                xi_star: xi_star0.to_vec(),
            },
            ControlMode::MfcClassical => ControllerState::MfcClassical {
                xi_star: xi_star0.to_vec(),
                eta_star: eta0.to_vec(),
            },
            ControlMode::SingleLoop => ControllerState::SingleLoop,
            ControlMode::PiMfc => ControllerState::PiMfc {
                xi_star: xi_star0.to_vec(),
                integral: 0.0,
            },
            ControlMode::PiSingleLoop => ControllerState::PiSingleLoop { integral: 0.0 },
        }
    }

    /// Evaluates the law on a flattened controller state, writing its
    /// derivative into `rate`. Returns `(u, v*, ṽ, decomposition)`.
    pub fn evaluate_into(
        &self,
        state: &[f64],
        xi: &[f64],
        eta: &[f64],
        desired: &DesiredState,
        rate: &mut [f64],
    ) -> Result<(f64, f64, f64, Option<(f64, f64)>), ControllerError> {
        let n = self.model.n_xi();
        let top = desired.top_derivative;
        let b = self.model.eval_b(xi, eta)?;
        let a = self.model.eval_a(xi, eta);
        match self.mode {
            ControlMode::MfcEfficient => {
                let xi_star = &state[..n];
                let v_star = -gain_error(&self.design.k, xi_star, &desired.xi_d);
                let v_tilde = -gain_error(&self.design.k_scaled, xi, xi_star);
                chain_rate(xi_star, top + v_star, rate);
                Ok(((-a + top + v_star + v_tilde) / b, v_star, v_tilde, None))
            }
            ControlMode::MfcClassical => {
                let (xi_star, eta_star) = state.split_at(n);
                let v_star = -gain_error(&self.design.k, xi_star, &desired.xi_d);
                let v_tilde = -gain_error(&self.design.k_scaled, xi, xi_star);
                let a_star = self.model.eval_a(xi_star, eta_star);
                let b_star = self.model.eval_b(xi_star, eta_star)?;
                let u_star = (-a_star + top + v_star) / b_star;
                let a_tilde = a - a_star + (b - b_star) * u_star;
                let u_tilde = (-a_tilde + v_tilde) / b;
                let (d_xi, d_eta) = rate.split_at_mut(n);
                chain_rate(xi_star, a_star + b_star * u_star, d_xi);
                self.model.eval_q(xi_star, eta_star, d_eta);
                Ok((u_star + u_tilde, v_star, v_tilde, Some((u_star, u_tilde))))
            }
            ControlMode::SingleLoop => {
                let v = -gain_error(&self.design.k_scaled, xi, &desired.xi_d);
                Ok(((-a + top + v) / b, 0.0, v, None))
            }
            ControlMode::PiMfc => {
                let gains = self.pi.as_ref().expect("checked at construction");
                let xi_star = &state[..n];
                let v_star = -gain_error(&self.design.k, xi_star, &desired.xi_d);
                let (v_tilde, integral_rate) = pi_auxiliary(gains, xi[0] - xi_star[0], xi[1] - xi_star[1], state[n]);
                chain_rate(xi_star, top + v_star, &mut rate[..n]);
                rate[n] = integral_rate;
                Ok(((-a + top + v_star + v_tilde) / b, v_star, v_tilde, None))
            }
            ControlMode::PiSingleLoop => {
                let gains = self.pi.as_ref().expect("checked at construction");
                let (v, integral_rate) =
                    pi_auxiliary(gains, xi[0] - desired.xi_d[0], xi[1] - desired.xi_d[1], state[0]);
                rate[0] = integral_rate;
                Ok(((-a + top + v) / b, 0.0, v, None))
            }
        }
    }

    pub fn evaluate(
        &self,
        state: &ControllerState,
        xi: &[f64],
        eta: &[f64],
        desired: &DesiredState,
    ) -> Result<ControlOutput, ControllerError> {
        if state.mode() != self.mode {
            return Err(ControllerError::Unsupported {
                mode: self.mode,
                needed: "a controller state of the same mode",
            });
        }
        self.model.check_dims(xi, eta)?;
        let flat = state.to_vec();
        if flat.len() != self.state_dim() {
            return Err(ControllerError::StateMismatch {
                expected: self.state_dim(),
                found: flat.len(),
            });
        }
        let mut rate = vec![0.0; flat.len()];
        let (u, v_star, v_tilde, decomposition) = self.evaluate_into(&flat, xi, eta, desired, &mut rate)?;
        Ok(ControlOutput {
            u,
            v_star,
            v_tilde,
            decomposition,
            mcl_derivative: rate,
        })
    }

    /// Model-loop right-hand side alone (no process loop), used to compare
    /// the integration effort of both MFC realizations.
    pub fn model_rate(&self, state: &[f64], desired: &DesiredState, rate: &mut [f64]) -> Result<(), ControllerError> {
        let n = self.model.n_xi();
        let xi_star = &state[..n];
        let v_star = -gain_error(&self.design.k, xi_star, &desired.xi_d);
        match self.mode {
            ControlMode::MfcClassical => {
                let (xi_star, eta_star) = state.split_at(n);
                let a_star = self.model.eval_a(xi_star, eta_star);
                let b_star = self.model.eval_b(xi_star, eta_star)?;
                let u_star = (-a_star + desired.top_derivative + v_star) / b_star;
                let (d_xi, d_eta) = rate.split_at_mut(n);
                chain_rate(xi_star, a_star + b_star * u_star, d_xi);
                self.model.eval_q(xi_star, eta_star, d_eta);
            }
            ControlMode::MfcEfficient | ControlMode::PiMfc => {
                chain_rate(xi_star, desired.top_derivative + v_star, &mut rate[..n]);
            }
            mode => {
                return Err(ControllerError::Unsupported {
                    mode,
                    needed: "a model control loop",
                });
            }
        }
        Ok(())
    }
}

/// MFC law for either realization; see [`Controller::evaluate`].
pub fn mfc_control(
    mode: ControlMode,
    model: &PlantDynamics,
    design: &GainDesign,
    state: &ControllerState,
    xi: &[f64],
    eta: &[f64],
    desired: &DesiredState,
) -> Result<ControlOutput, ControllerError> {
    if !matches!(mode, ControlMode::MfcEfficient | ControlMode::MfcClassical) {
        return Err(ControllerError::Unsupported {
            mode,
            needed: "an MFC mode",
        });
    }
    Controller::new(mode, design.clone(), None, model.clone())?.evaluate(state, xi, eta, desired)
}

/// Single-loop high-gain law `u = (−a + y_d^(n) − k̃ᵀ(ξ − ξ_d)) / b`.
pub fn single_loop_control(
    model: &PlantDynamics,
    design: &GainDesign,
    xi: &[f64],
    eta: &[f64],
    desired: &DesiredState,
) -> Result<ControlOutput, ControllerError> {
    Controller::new(ControlMode::SingleLoop, design.clone(), None, model.clone())?.evaluate(
        &ControllerState::SingleLoop,
        xi,
        eta,
        desired,
    )
}

/// Closed-form initial MFC input under exact model initialization:
/// `(−a(ξ₀,η₀) + y_d^(n)(0) − kᵀ(ξ₀ − ξ_d(0))) / b(ξ₀,η₀)`.
pub fn mfc_initial_input(
    model: &PlantDynamics,
    k: &[f64],
    xi0: &[f64],
    eta0: &[f64],
    desired0: &DesiredState,
) -> Result<f64, ControllerError> {
    let b = model.eval_b(xi0, eta0)?;
    Ok((-model.eval_a(xi0, eta0) + desired0.top_derivative - gain_error(k, xi0, &desired0.xi_d)) / b)
}

/// Closed-form initial single-loop input, the same expression with `k̃_ε`.
pub fn single_loop_initial_input(
    model: &PlantDynamics,
    design: &GainDesign,
    xi0: &[f64],
    eta0: &[f64],
    desired0: &DesiredState,
) -> Result<f64, ControllerError> {
    mfc_initial_input(model, &design.k_scaled, xi0, eta0, desired0)
}

/// `true` when `k` places all closed-loop poles in the open left half-plane.
pub fn gain_is_stabilizing(k: &[f64]) -> bool {
    !k.is_empty() && is_hurwitz(&closed_loop_matrix(k))
}
