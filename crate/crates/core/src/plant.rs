//! The controlled system class: single-input systems in Byrnes–Isidori form
//!
//! ```text
//! ξ̇ = A ξ + B (a(ξ,η) + b(ξ,η) u + Δ(ξ,η,t))
//! η̇ = q(ξ,η)
//! y  = ξ₁
//! ```
//!
//! with (A, B) a Brunovský chain. Nonlinearities are plain closures so the
//! same type describes toy plants, the vehicle case study and the nominal
//! models used inside controllers.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ctrlmath::Matrix;

/// Scalar nonlinearity of the external state, `(ξ, η) ↦ ℝ`.
pub type ScalarFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Matched perturbation `(ξ, η, t) ↦ ℝ`.
pub type PerturbationFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;
/// Internal dynamics, writes `η̇` into the output slice.
pub type InternalFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("|b(ξ,η)| = {value:e} is below the gain floor {floor:e}")]
    GainFloorViolated { value: f64, floor: f64 },
    #[error("state dimension mismatch: expected ({n_xi}, {n_eta}), got ({xi}, {eta})")]
    DimensionMismatch {
        n_xi: usize,
        n_eta: usize,
        xi: usize,
        eta: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// External and internal state of a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl FullState {
    pub fn new(xi: Vec<f64>, eta: Vec<f64>) -> Self {
        Self { xi, eta }
    }

    pub fn is_finite(&self) -> bool {
        self.xi.iter().chain(&self.eta).all(|v| v.is_finite())
    }
}

/// Known bound `|Δ(ξ,η,t)| ≤ δ + L_Δ ‖ξ‖₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBound {
    pub delta0: f64,
    pub lipschitz: f64,
}

impl PerturbationBound {
    pub fn new(delta0: f64, lipschitz: f64) -> Result<Self, PlantError> {
        if !(delta0 >= 0.0 && lipschitz >= 0.0) || !delta0.is_finite() || !lipschitz.is_finite() {
            return Err(PlantError::InvalidDimension(format!(
                "perturbation bound must be finite and nonnegative, got δ={delta0}, L={lipschitz}"
            )));
        }
        Ok(Self { delta0, lipschitz })
    }

    pub fn zero() -> Self {
        Self {
            delta0: 0.0,
            lipschitz: 0.0,
        }
    }

    /// δ + L_Δ r.
    pub fn at_radius(&self, r: f64) -> f64 {
        self.delta0 + self.lipschitz * r
    }
}

/// A system in Byrnes–Isidori form.
#[derive(Clone)]
pub struct PlantDynamics {
    n_xi: usize,
    n_eta: usize,
    a: ScalarFn,
    b: ScalarFn,
    delta: Option<PerturbationFn>,
    q: Option<InternalFn>,
    b_floor: f64,
}

impl fmt::Debug for PlantDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantDynamics")
            .field("n_xi", &self.n_xi)
            .field("n_eta", &self.n_eta)
            .field("perturbed", &self.delta.is_some())
            .field("b_floor", &self.b_floor)
            .finish()
    }
}

impl PlantDynamics {
    /// Creates a plant. `q` must be given exactly when `n_eta > 0`.
    pub fn new(
        n_xi: usize,
        n_eta: usize,
        a: ScalarFn,
        b: ScalarFn,
        q: Option<InternalFn>,
        b_floor: f64,
    ) -> Result<Self, PlantError> {
        if n_xi < 1 {
            return Err(PlantError::InvalidDimension("n_xi must be at least 1".into()));
        }
        if (n_eta > 0) != q.is_some() {
            return Err(PlantError::InvalidDimension(format!(
                "internal dynamics must be given iff n_eta > 0 (n_eta = {n_eta})"
            )));
        }
        if !(b_floor > 0.0 && b_floor.is_finite()) {
            return Err(PlantError::InvalidDimension(format!(
                "gain floor must be positive, got {b_floor}"
            )));
        }
        Ok(Self {
            n_xi,
            n_eta,
            a,
            b,
            delta: None,
            q,
            b_floor,
        })
    }

    pub fn with_perturbation(mut self, delta: PerturbationFn) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Same nonlinearities with the perturbation removed.
    pub fn nominal(&self) -> Self {
        Self {
            delta: None,
            ..self.clone()
        }
    }

    pub fn n_xi(&self) -> usize {
        self.n_xi
    }

    pub fn n_eta(&self) -> usize {
        self.n_eta
    }

    pub fn b_floor(&self) -> f64 {
        self.b_floor
    }

    pub fn check_dims(&self, xi: &[f64], eta: &[f64]) -> Result<(), PlantError> {
        if xi.len() != self.n_xi || eta.len() != self.n_eta {
            return Err(PlantError::DimensionMismatch {
                n_xi: self.n_xi,
                n_eta: self.n_eta,
                xi: xi.len(),
                eta: eta.len(),
            });
        }
        Ok(())
    }

    pub fn eval_a(&self, xi: &[f64], eta: &[f64]) -> f64 {
        (self.a)(xi, eta)
    }

    /// Input gain with the floor `|b| ≥ b_m` enforced.
    pub fn eval_b(&self, xi: &[f64], eta: &[f64]) -> Result<f64, PlantError> {
        let b = (self.b)(xi, eta);
        if !(b.abs() >= self.b_floor) {
            return Err(PlantError::GainFloorViolated {
                value: b,
                floor: self.b_floor,
            });
        }
        Ok(b)
    }

    pub fn eval_delta(&self, xi: &[f64], eta: &[f64], t: f64) -> f64 {
        self.delta.as_ref().map_or(0.0, |d| d(xi, eta, t))
    }

    /// Writes `q(ξ,η)` into `out` (no-op when `n_eta = 0`).
    pub fn eval_q(&self, xi: &[f64], eta: &[f64], out: &mut [f64]) {
        if let Some(q) = &self.q {
            q(xi, eta, out);
        }
    }

    /// Right-hand side written into `dxi`, `deta`.
    pub fn rhs_into(
        &self,
        xi: &[f64],
        eta: &[f64],
        u: f64,
        t: f64,
        dxi: &mut [f64],
        deta: &mut [f64],
    ) -> Result<(), PlantError> {
        let n = self.n_xi;
        dxi[..n - 1].copy_from_slice(&xi[1..]);
        let b = self.eval_b(xi, eta)?;
        dxi[n - 1] = self.eval_a(xi, eta) + b * u + self.eval_delta(xi, eta, t);
        self.eval_q(xi, eta, deta);
        Ok(())
    }

    /// `ξ̇ = Aξ + B(a + b u + Δ)`, `η̇ = q(ξ,η)`.
    pub fn plant_rhs(&self, state: &FullState, u: f64, t: f64) -> Result<FullState, PlantError> {
        self.check_dims(&state.xi, &state.eta)?;
        let mut d = FullState::new(vec![0.0; self.n_xi], vec![0.0; self.n_eta]);
        self.rhs_into(&state.xi, &state.eta, u, t, &mut d.xi, &mut d.eta)?;
        Ok(d)
    }
}

/// Brunovský pair: superdiagonal shift `A` and last unit vector `B`.
pub fn brunovsky_pair(n_xi: usize) -> Result<(Matrix, Matrix), PlantError> {
    if n_xi < 1 {
        return Err(PlantError::InvalidDimension("n_xi must be at least 1".into()));
    }
    let mut a = Matrix::zeros(n_xi, n_xi);
    for i in 0..n_xi - 1 {
        a[(i, i + 1)] = 1.0;
    }
    let mut b = Matrix::zeros(n_xi, 1);
    b[(n_xi - 1, 0)] = 1.0;
    Ok((a, b))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks `|Δ(ξ,η,t)| ≤ δ + L_Δ‖ξ‖₂` (with 1e-12 slack) on every sample.
/// An empty sample list is vacuously accepted.
pub fn check_perturbation_bound(
    plant: &PlantDynamics,
    bound: &PerturbationBound,
    samples: &[(FullState, f64)],
) -> bool {
    samples
        .iter()
        .all(|(s, t)| plant.eval_delta(&s.xi, &s.eta, *t).abs() <= bound.at_radius(norm2(&s.xi)) + 1e-12)
}

/// Toy plants for tests and the theorem experiments.
pub mod toy {
    use super::*;

    /// Unperturbed chain of integrators of length `n`.
    pub fn integrator_chain(n: usize) -> PlantDynamics {
        PlantDynamics::new(n, 0, Arc::new(|_, _| 0.0), Arc::new(|_, _| 1.0), None, 1.0).expect("valid toy plant")
    }

    pub fn double_integrator() -> PlantDynamics {
        integrator_chain(2)
    }

    /// Double integrator with `Δ = amplitude·sin(ω t) + lipschitz·ξ₁`.
    ///
    /// Satisfies the bound with δ = |amplitude| and L_Δ = |lipschitz|.
    pub fn perturbed_double_integrator(amplitude: f64, omega: f64, lipschitz: f64) -> PlantDynamics {
        double_integrator().with_perturbation(Arc::new(move |xi, _, t| {
            amplitude * (omega * t).sin() + lipschitz * xi[0]
        }))
    }

    /// Nonlinear relative-degree-two plant with one stable internal state:
    ///
    /// ```text
    /// a = −sin ξ₁ + 0.5 η₁ ξ₂ /(1 + η₁²),  b = 2 + cos ξ₁,  η̇ = −η + ξ₁
    /// ```
    pub fn pendulum_like() -> PlantDynamics {
        PlantDynamics::new(
            2,
            1,
            Arc::new(|xi, eta| -xi[0].sin() + 0.5 * eta[0] * xi[1] / (1.0 + eta[0] * eta[0])),
            Arc::new(|xi, _| 2.0 + xi[0].cos()),
            Some(Arc::new(|xi, eta, out| out[0] = -eta[0] + xi[0])),
            1.0,
        )
        .expect("valid toy plant")
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;

    #[test]
    fn brunovsky_examples() {
        let (a, b) = brunovsky_pair(2).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.as_slice(), &[0.0, 1.0]);
        let (a, b) = brunovsky_pair(1).unwrap();
        assert_eq!(a.as_slice(), &[0.0]);
        assert_eq!(b.as_slice(), &[1.0]);
        let (a, b) = brunovsky_pair(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if j == i + 1 { 1.0 } else { 0.0 };
                assert_eq!(a[(i, j)], want);
            }
        }
        assert_eq!(b.as_slice(), &[0.0, 0.0, 1.0]);
        assert!(brunovsky_pair(0).is_err());
    }

    #[test]
    fn double_integrator_rhs() {
        let p = double_integrator();
        let d = p.plant_rhs(&FullState::new(vec![1.0, 2.0], vec![]), 3.0, 0.0).unwrap();
        assert_eq!(d.xi, vec![2.0, 3.0]);
        let d = p.plant_rhs(&FullState::new(vec![0.0, 0.0], vec![]), 0.0, 0.0).unwrap();
        assert_eq!(d.xi, vec![0.0, 0.0]);
    }

    #[test]
    fn perturbed_rhs_at_zero_time() {
        let p = perturbed_double_integrator(0.5, 1.0, 0.1);
        let d = p.plant_rhs(&FullState::new(vec![1.0, 0.0], vec![]), 0.0, 0.0).unwrap();
        assert_eq!(d.xi[0], 0.0);
        assert!((d.xi[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gain_floor_violation() {
        let p = PlantDynamics::new(1, 0, Arc::new(|_, _| 0.0), Arc::new(|x, _| x[0]), None, 0.5).unwrap();
        let err = p.plant_rhs(&FullState::new(vec![0.1], vec![]), 1.0, 0.0).unwrap_err();
        assert!(matches!(err, PlantError::GainFloorViolated { .. }));
        assert!(p.plant_rhs(&FullState::new(vec![-0.6], vec![]), 1.0, 0.0).is_ok());
    }

    #[test]
    fn construction_checks() {
        let a: ScalarFn = Arc::new(|_, _| 0.0);
        let b: ScalarFn = Arc::new(|_, _| 1.0);
        assert!(PlantDynamics::new(0, 0, a.clone(), b.clone(), None, 1.0).is_err());
        assert!(PlantDynamics::new(1, 1, a.clone(), b.clone(), None, 1.0).is_err());
        assert!(PlantDynamics::new(1, 0, a, b, None, 0.0).is_err());
        let p = double_integrator();
        assert!(p.plant_rhs(&FullState::new(vec![1.0], vec![]), 0.0, 0.0).is_err());
    }

    #[test]
    fn internal_dynamics_evaluated() {
        let p = pendulum_like();
        let d = p
            .plant_rhs(&FullState::new(vec![0.5, 0.0], vec![1.0]), 0.0, 0.0)
            .unwrap();
        assert!((d.eta[0] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn perturbation_bound_checks() {
        let zero = double_integrator();
        let s = vec![(FullState::new(vec![3.0, -1.0], vec![]), 2.0)];
        assert!(check_perturbation_bound(&zero, &PerturbationBound::zero(), &s));

        let p = perturbed_double_integrator(0.5, 1.0, 0.1);
        let bound = PerturbationBound::new(0.5, 0.1).unwrap();
        let samples: Vec<_> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 10.0;
                (FullState::new(vec![x, -x], vec![]), i as f64 * 0.11)
            })
            .collect();
        assert!(check_perturbation_bound(&p, &bound, &samples));

        let quad = double_integrator().with_perturbation(Arc::new(|xi, _, _| xi[0] * xi[0]));
        let s = vec![(FullState::new(vec![2.0, 0.0], vec![]), 0.0)];
        assert!(!check_perturbation_bound(
            &quad,
            &PerturbationBound::new(0.0, 1.0).unwrap(),
            &s
        ));
    }

    #[test]
    fn negative_bound_rejected() {
        assert!(PerturbationBound::new(-1.0, 0.0).is_err());
        assert!(PerturbationBound::new(0.0, f64::NAN).is_err());
    }
}
