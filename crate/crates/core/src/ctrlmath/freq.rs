use num_complex::Complex64;

use super::LinalgError;

/// Ratio of polynomials in s, coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTransfer {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl RationalTransfer {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self, LinalgError> {
        let num = trim(num);
        let den = trim(den);
        if den.is_empty() || num.is_empty() {
            return Err(LinalgError::InvalidTransfer("empty numerator or denominator"));
        }
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        if den.iter().all(|c| *c == 0.0) {
            return Err(LinalgError::InvalidTransfer("zero denominator"));
        }
        if num.len() > den.len() + 1 {
            return Err(LinalgError::InvalidTransfer(
                "numerator degree exceeds denominator degree + 1",
            ));
        }
        Ok(Self { num, den })
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        horner(&self.num, s) / horner(&self.den, s)
    }

    /// Frequency response L(jω).
    pub fn response(&self, omega: f64) -> Complex64 {
        self.eval(Complex64::new(0.0, omega))
    }

    /// Open loop of the PI-augmented process control loop,
    /// `b0 (kp s + ki) / (s (s² + a1 s + a0))`.
    pub fn pi_loop(a0: f64, a1: f64, b0: f64, kp: f64, ki: f64) -> Result<Self, LinalgError> {
        // s (s² + a1 s + a0)
        Self::new(vec![b0 * ki, b0 * kp], vec![0.0, a0, a1, 1.0])
    }
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && c.last() == Some(&0.0) {
        c.pop();
    }
    c
}

fn horner(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
}

/// Gain crossover and phase margin of an open loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub crossover: f64,
    pub phase_margin_deg: f64,
}

/// Logarithmic search grid for the gain crossover.
#[derive(Debug, Clone, Copy)]
pub struct CrossoverGrid {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    pub rel_tol: f64,
}

impl Default for CrossoverGrid {
    fn default() -> Self {
        Self {
            omega_min: 1e-3,
            omega_max: 1e4,
            points: 2000,
            rel_tol: 1e-8,
        }
    }
}

pub fn stability_margins(l: &RationalTransfer) -> Result<Margins, LinalgError> {
    stability_margins_on(l, CrossoverGrid::default())
}

/// Finds the first |L(jω)| = 1 crossing on the grid, refines it by bisection
/// in log ω and reports `180° + arg L(jω_c)` wrapped to (−180°, 180°].
pub fn stability_margins_on(l: &RationalTransfer, grid: CrossoverGrid) -> Result<Margins, LinalgError> {
    let log_gain = |w: f64| l.response(w).norm().ln();
    let (lo, hi) = (grid.omega_min.ln(), grid.omega_max.ln());
    let n = grid.points.max(2);
    let at = |i: usize| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp();

    let mut prev_w = at(0);
    let mut prev_g = log_gain(prev_w);
    let mut bracket = None;
    for i in 1..n {
        let w = at(i);
        let g = log_gain(w);
        if prev_g == 0.0 {
            bracket = Some((prev_w, prev_w));
            break;
        }
        if prev_g.signum() != g.signum() {
            bracket = Some((prev_w, w));
            break;
        }
        prev_w = w;
        prev_g = g;
    }
    let (mut a, mut b) = bracket.ok_or(LinalgError::NoCrossover)?;
    let ga = log_gain(a);
    while (b - a) > grid.rel_tol * a {
        let mid = (a * b).sqrt();
        let gm = log_gain(mid);
        if gm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if gm.signum() == ga.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    let crossover = (a * b).sqrt();
    let phase = l.response(crossover).arg().to_degrees();
    Ok(Margins {
        crossover,
        phase_margin_deg: wrap_degrees(180.0 + phase),
    })
}

/// Wraps an angle in degrees to (−180°, 180°].
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}
