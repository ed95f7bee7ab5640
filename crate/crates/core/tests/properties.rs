use mfc_core::controllers::{closed_loop_matrix, scale_gain, GainDesign};
use mfc_core::ctrlmath::{eigenvalues, lyapunov_residual, solve_lyapunov, sym_eig_extremes, Matrix};
use mfc_core::reference::{ReferenceSignal, Transition};
use mfc_core::vehicle::{pacejka_force, smooth_slip, VehicleParams};
use proptest::prelude::*;

/// Random square matrix shifted left of its Gershgorin discs.
fn hurwitz_matrix() -> impl Strategy<Value = Matrix> {
    (2usize..=6).prop_flat_map(|n| {
        (proptest::collection::vec(-2.0f64..2.0, n * n), 0.1f64..1.0).prop_map(move |(data, margin)| {
            let mut a = Matrix::new(n, n, data).unwrap();
            let shift = a.norm_inf() + margin;
            for i in 0..n {
                a[(i, i)] -= shift;
            }
            a
        })
    })
}

fn hurwitz_gain() -> impl Strategy<Value = Vec<f64>> {
    // Products of stable real factors (s + r_i) have Hurwitz coefficients.
    proptest::collection::vec(0.3f64..4.0, 1..=4).prop_map(|roots| {
        let mut poly = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c * r;
                next[i + 1] += c;
            }
            poly = next;
        }
        // poly[i] multiplies s^i; k_i multiplies e_i, i.e. s^(i-1).
        poly.pop();
        poly
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_solution_has_small_residual(a in hurwitz_matrix()) {
        let p = solve_lyapunov(&a).unwrap();
        let scale = p.max_abs().max(1.0);
        prop_assert!(lyapunov_residual(&a, &p) <= 1e-9 * scale);
        prop_assert!(p.relative_asymmetry() == 0.0);
    }

    #[test]
    fn quadratic_form_is_sandwiched(a in hurwitz_matrix(), seed in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let p = solve_lyapunov(&a).unwrap();
        let (lo, hi) = sym_eig_extremes(&p).unwrap();
        prop_assert!(lo > 0.0);
        let x = &seed[..a.rows()];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let q = p.quadratic_form(x);
        let tol = 1e-10 * hi * r2.max(1.0);
        prop_assert!(lo * r2 - tol <= q && q <= hi * r2 + tol);
    }

    #[test]
    fn scaled_gain_divides_spectrum(k in hurwitz_gain(), eps in 0.02f64..1.0) {
        let n = k.len();
        let scaled = scale_gain(&k, eps).unwrap();
        for (i, (ks, k0)) in scaled.iter().zip(&k).enumerate() {
            let expected = k0 / eps.powi((n - i) as i32);
            prop_assert!((ks - expected).abs() <= 1e-12 * expected.abs());
        }
        let mut base: Vec<f64> = eigenvalues(&closed_loop_matrix(&k)).unwrap().iter().map(|z| z.norm()).collect();
        let mut fast: Vec<f64> = eigenvalues(&closed_loop_matrix(&scaled)).unwrap().iter().map(|z| z.norm() * eps).collect();
        base.sort_by(f64::total_cmp);
        fast.sort_by(f64::total_cmp);
        for (b, f) in base.iter().zip(&fast) {
            prop_assert!((b - f).abs() <= 1e-5 * b.max(1.0), "{base:?} vs {fast:?}");
        }
        let design = GainDesign::new(k.clone(), eps).unwrap();
        prop_assert!(design.lambda_min() > 0.0 && design.p_ratio() >= 1.0);
    }

    #[test]
    fn reference_derivatives_match_finite_differences(
        initial in -50.0f64..50.0,
        target in -50.0f64..50.0,
        start in 0.0f64..5.0,
        duration in 0.5f64..20.0,
        frac in 0.02f64..0.98,
    ) {
        let sig = ReferenceSignal::from_transitions(initial, &[Transition { start, target, duration }], 2).unwrap();
        let t = start + frac * duration;
        let h = 1e-5 * duration;
        let d = sig.derivatives(t, 2);
        let fd1 = (sig.derivatives(t + h, 0)[0] - sig.derivatives(t - h, 0)[0]) / (2.0 * h);
        let fd2 = (sig.derivatives(t + h, 1)[1] - sig.derivatives(t - h, 1)[1]) / (2.0 * h);
        let scale = (target - initial).abs().max(1e-9);
        prop_assert!((d[1] - fd1).abs() <= 1e-6 * scale / duration + 1e-9);
        prop_assert!((d[2] - fd2).abs() <= 1e-5 * scale / (duration * duration) + 1e-9);
        let end = sig.derivatives(start + duration + 1.0, 2);
        prop_assert!((end[0] - target).abs() <= 1e-12 * target.abs().max(1.0));
        prop_assert_eq!(end[1], 0.0);
    }

    #[test]
    fn slip_is_bounded_and_signed(axle in -200.0f64..200.0, speed in -60.0f64..60.0) {
        let p = VehicleParams::paper_rwd();
        let s = smooth_slip(axle, speed, p.wheel_radius, p.slip_smoothing);
        // Opposite signs of wheel and vehicle speed allow |λ| up to 2.
        let same_sign = axle * speed >= 0.0;
        let limit = if same_sign { 1.0 } else { 2.0 };
        prop_assert!(s.abs() <= limit + 1e-9);
        let diff = p.wheel_radius * axle - speed;
        if diff.abs() > 1e-6 {
            prop_assert_eq!(s.signum(), diff.signum());
        }
    }

    #[test]
    fn slip_has_no_jumps(axle in -200.0f64..200.0, speed in -60.0f64..60.0) {
        let p = VehicleParams::paper_rwd();
        let h = 1e-6;
        let s0 = smooth_slip(axle, speed, p.wheel_radius, p.slip_smoothing);
        let s1 = smooth_slip(axle + h, speed, p.wheel_radius, p.slip_smoothing);
        let s2 = smooth_slip(axle, speed + h, p.wheel_radius, p.slip_smoothing);
        // Away from standstill the slope is at most r_r / |v| or 1 / |v|.
        let scale = (p.wheel_radius * axle).abs().max(speed.abs()).max(1.0);
        prop_assert!((s1 - s0).abs() <= 3.0 * h / scale * p.wheel_radius.max(1.0) + 1e-12);
        prop_assert!((s2 - s0).abs() <= 3.0 * h / scale + 1e-12);
    }

    #[test]
    fn tire_force_is_bounded(mu in 0.01f64..1.0, slip in -1.0f64..1.0, stiff in 1.0f64..20.0, shape in 1.0f64..2.0) {
        let fz = VehicleParams::paper_rwd().rear_normal_force();
        prop_assert!(pacejka_force(mu, fz, stiff, shape, slip).abs() <= mu * fz);
    }
}
