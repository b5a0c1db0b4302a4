use fuzzy_euler::asymptotics::fit_rate;
use fuzzy_euler::kernels::{KernelFamily, TriangleKernel};
use fuzzy_euler::linear_modes::propagate_pair;
use fuzzy_euler::littlewood_paley::phi;
use fuzzy_euler::particles::{pairwise_force, ParticleEnsemble, ParticleKernel, Protocol};
use fuzzy_euler::spectral::{GridSpec, SpectralField};
use proptest::prelude::*;
use rustfft::num_complex::Complex64;

fn ensemble(d: usize, l: f64, pts: &[(f64, f64)]) -> ParticleEnsemble {
    let pos = pts.iter().map(|&(x, y)| [x * l, if d == 2 { y * l } else { 0.0 }]).collect();
    ParticleEnsemble::new(d, l, pos, vec![[0.0; 2]; pts.len()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dyadic_profiles_sum_to_one(log_r in -12.0f64..12.0) {
        let r = 2f64.powf(log_r);
        let s: f64 = (-60..=60).map(|j| phi(2f64.powi(-j) * r)).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real_fields_stay_hermitian(values in prop::collection::vec(-1.0f64..1.0, 64), eps in 0.05f64..2.0) {
        let g = GridSpec::new(1, 64, 5.0).unwrap();
        let f = SpectralField::from_scalar(g, &values).unwrap();
        prop_assert!(f.hermitian_defect() < 1e-12);
        let k = KernelFamily::bessel(eps, 1);
        let smoothed = f.apply_radial(|r| k.k_hat(r));
        prop_assert!(smoothed.hermitian_defect() < 1e-12);
        prop_assert!(smoothed.gradient().imaginary_residual() < 1e-12);
    }

    #[test]
    fn rate_fit_ignores_error_scale(
        errs in prop::collection::vec(1e-6f64..1.0, 4),
        scale in 1e-3f64..1e3,
    ) {
        let params = [8.0, 16.0, 32.0, 64.0];
        let a = fit_rate(&params, &errs).unwrap();
        let scaled: Vec<f64> = errs.iter().map(|e| e * scale).collect();
        let b = fit_rate(&params, &scaled).unwrap();
        prop_assert!((a.slope - b.slope).abs() < 1e-9);
        prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
        let stretched: Vec<f64> = params.iter().map(|p| p * scale).collect();
        let c = fit_rate(&stretched, &errs).unwrap();
        prop_assert!((a.slope - c.slope).abs() < 1e-9);
    }

    #[test]
    fn particle_forces_are_translation_invariant(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..40),
        shift in (0.0f64..1.0, 0.0f64..1.0),
        two_d in any::<bool>(),
    ) {
        let d = if two_d { 2 } else { 1 };
        let l = 6.0;
        let kernel = ParticleKernel::Triangle(TriangleKernel::new(1.0, d).unwrap());
        let base = ensemble(d, l, &pts);
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + shift.0, y + shift.1)).collect();
        let moved = ensemble(d, l, &moved);
        let f0 = pairwise_force(&base, &kernel, &Protocol::Plain).unwrap();
        let f1 = pairwise_force(&moved, &kernel, &Protocol::Plain).unwrap();
        for (a, b) in f0.iter().zip(&f1) {
            prop_assert!((a[0] - b[0]).abs() < 1e-13 && (a[1] - b[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn pair_forces_conserve_momentum(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..60),
        eps in 0.1f64..0.6,
    ) {
        let e = ensemble(1, 40.0, &pts);
        let f = pairwise_force(&e, &ParticleKernel::smooth(eps).unwrap(), &Protocol::Plain).unwrap();
        let total: f64 = f.iter().map(|v| v[0]).sum();
        let scale: f64 = f.iter().map(|v| v[0].abs()).sum::<f64>().max(1.0);
        prop_assert!(total.abs() < 1e-13 * scale);
    }
}

/// RK4 on `d/dt (a, v) = -M (a, v)` with `M = [[0, i r], [i r K, f]]`.
fn ode_reference(r: f64, k: f64, f: f64, t: f64, a: Complex64, v: Complex64) -> (Complex64, Complex64) {
    let i = Complex64::new(0.0, 1.0);
    let rhs = |a: Complex64, v: Complex64| (-(i * r * v), -(i * r * k * a + f * v));
    let n = 20_000;
    let h = t / n as f64;
    let (mut a, mut v) = (a, v);
    for _ in 0..n {
        let k1 = rhs(a, v);
        let k2 = rhs(a + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
        let k3 = rhs(a + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
        let k4 = rhs(a + h * k3.0, v + h * k3.1);
        a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (a, v)
}

#[test]
fn mode_propagator_matches_ode_integration() {
    let kernel = KernelFamily::bessel(0.5, 1);
    let a0 = Complex64::new(0.7, -0.2);
    let v0 = Complex64::new(-0.1, 0.4);
    // parabolic, oscillatory, and near-critical radii, several frictions
    for (r, f) in [(0.3, 1.0), (2.0, 1.0), (7.0, 1.0), (1.0, 3.0), (2.0, 0.5), (0.26794919, 1.0)] {
        for t in [0.5, 3.0] {
            let exact = propagate_pair(r, kernel.k_hat(r), f, t, a0, v0);
            let ode = ode_reference(r, kernel.k_hat(r), f, t, a0, v0);
            let err = (exact.0 - ode.0).norm().max((exact.1 - ode.1).norm());
            assert!(err < 1e-10, "r={r} f={f} t={t}: {err:e}");
        }
    }
}
