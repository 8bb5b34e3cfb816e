use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;
use wigner_brw::kernel::{Kernel, Truncation};
use wigner_brw::model::{experiment_morse, Morse};
use wigner_brw::quadrature::{adaptive, Tolerance};
use wigner_brw::spa::{apply_theta_hjd, apply_theta_spa, critical_points, eta_breve, re_zeta_radial, zeta, zeta_factor, SpaTables};

fn kernel() -> &'static Kernel<2, Morse<2>> {
    static K: OnceLock<Kernel<2, Morse<2>>> = OnceLock::new();
    K.get_or_init(|| {
        let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap();
        Kernel::new(experiment_morse(), trunc).unwrap()
    })
}

proptest! {
    #[test]
    fn critical_points_align_with_z(z1 in -30.0f64..30.0, z2 in -30.0f64..30.0) {
        prop_assume!(z1.hypot(z2) > 1e-9);
        let cp = critical_points(&[z1, z2]).unwrap();
        let n = z1.hypot(z2);
        prop_assert!((cp.sigma_plus[0] - z1 / n).abs() < 1e-10);
        prop_assert!((cp.sigma_plus[1] - z2 / n).abs() < 1e-10);
        prop_assert_eq!(cp.sigma_minus, [-cp.sigma_plus[0], -cp.sigma_plus[1]]);
    }

    #[test]
    fn zeta_real_part_has_the_radial_form(r in 0.01f64..17.0, zx in 0.1f64..8.0, zy in -8.0f64..8.0) {
        let m = experiment_morse();
        let x = [10.0 + zx, 10.0 + zy];
        let zn = zx.hypot(zy);
        let full = zeta(&m, r, &x, 0.0).unwrap();
        let radial = re_zeta_radial(2, r * zn, m.h(r).signum());
        prop_assert!((full.re - radial).abs() < 1e-12 * (1.0 + radial.abs()));
        // |ζ| = (2π/(r|z|))^{1/2} since |ψ| = Ψ
        prop_assert!((full.norm() - (2.0 * PI / (r * zn)).sqrt()).abs() < 1e-12 * full.norm());
    }
}

#[test]
fn zeta_factor_in_two_dimensions() {
    let a = 3.7;
    let f = zeta_factor(2, a);
    assert!((f.norm() - (2.0 * PI / a).sqrt()).abs() < 1e-14);
    assert!((f.arg() - (a - 0.25 * PI)).abs() < 1e-14);
    assert!(critical_points(&[0.0, 0.0]).is_err());
    assert!(zeta(&experiment_morse(), 0.0, &[11.0, 10.0], 0.0).is_err());
}

#[test]
fn eta_breve_and_floor() {
    let kn = kernel();
    let (eta, table) = eta_breve(kn, 1024).unwrap();
    let m = experiment_morse();
    let breaks = [0.0, m.h_zero().unwrap(), 2.0 * kn.trunc.radius, kn.trunc.support()];
    let oracle = adaptive("eta", &breaks, Tolerance::rel(1e-12), |r| r * m.h(r).abs() * kn.trunc.taper(r))
        .unwrap()
        .0;
    assert!((eta - oracle).abs() < 1e-10 * oracle);
    assert!((table.mass / eta - 1.0).abs() < 1e-6);
    assert!((eta - 0.17867).abs() < 1e-5);
    let s = SpaTables::build(kn, 8.0, 1e-3).unwrap();
    assert!((s.gamma0_floor(2) - 2.0 * eta * (2.0 * PI / 8.0).sqrt()).abs() < 1e-14);
    assert!(SpaTables::build(kn, 1.0, 1e-3).is_err());
    assert!(SpaTables::build(kn, 4.0, 0.0).is_err());
}

fn gaussian(k: &[f64; 2]) -> f64 {
    (-2.0 * ((k[0] - 0.5).powi(2) + (k[1] + 0.5).powi(2))).exp()
}

#[test]
fn theta_is_odd_and_kills_constants() {
    let kn = kernel();
    let x = [12.0, 9.0];
    let ks = [[0.3, -0.2], [1.1, 0.4]];
    let c = apply_theta_hjd(kn, &|_| 1.0, &x, 0.0, &ks).unwrap();
    assert!(c.iter().all(|v| v.abs() < 1e-9), "{c:?}");
    // Θ commutes with k → −k up to a sign since V is odd
    let a = apply_theta_hjd(kn, &gaussian, &x, 0.0, &ks).unwrap();
    let mirrored = |k: &[f64; 2]| gaussian(&[-k[0], -k[1]]);
    let neg: Vec<[f64; 2]> = ks.iter().map(|k| [-k[0], -k[1]]).collect();
    let b = apply_theta_hjd(kn, &mirrored, &x, 0.0, &neg).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u + v).abs() < 1e-9 * (1.0 + u.abs()), "{u} {v}");
    }
}

#[test]
fn stationary_phase_error_shrinks_with_lambda0() {
    // the SPA operator approaches the exact one as λ0 grows; at |z| = 6 the
    // cut ρ = λ0/|z| moves out through the kernel support
    let kn = kernel();
    let x = [16.0, 10.0];
    let ks = [[0.5, -0.5], [0.0, 0.0], [-0.7, 0.3]];
    let exact = apply_theta_hjd(kn, &gaussian, &x, 0.0, &ks).unwrap();
    let mut errs = Vec::new();
    for l in [4.0, 16.0, 64.0] {
        let s = SpaTables::build(kn, l, 1e-3).unwrap();
        let a = apply_theta_spa(kn, &s, &gaussian, &x, 0.0, &ks).unwrap();
        let e = a.iter().zip(&exact).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    // λ0 beyond 2·3R·|z| keeps the whole kernel in the low part
    let s = SpaTables::build(kn, 2.0 * kn.trunc.support() * 6.0 + 1.0, 1e-3).unwrap();
    let a = apply_theta_spa(kn, &s, &gaussian, &x, 0.0, &ks).unwrap();
    for (u, v) in a.iter().zip(&exact) {
        assert!((u - v).abs() < 1e-9, "{u} {v}");
    }
}

#[test]
fn remainder_shrinks_along_a_doubling_ladder() {
    // ‖φ‖ in L²×H¹ is fixed per field, so the raw grid error is compared
    let kn = kernel();
    let x = [16.0, 18.0];
    let h = 0.5;
    let ks: Vec<[f64; 2]> = (0..17)
        .flat_map(|i| (0..17).map(move |j| [-4.0 + h * i as f64, -4.0 + h * j as f64]))
        .collect();
    let fields: [(f64, [f64; 2]); 3] = [(2.0, [0.5, -0.5]), (1.0, [0.0, 0.0]), (0.5, [-1.0, 0.5])];
    let tables: Vec<SpaTables> = [2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|l| SpaTables::build(kn, *l, 1e-3).unwrap())
        .collect();
    for (a, c) in fields {
        let phi = move |k: &[f64; 2]| (-a * ((k[0] - c[0]).powi(2) + (k[1] - c[1]).powi(2))).exp();
        let exact = apply_theta_hjd(kn, &phi, &x, 0.0, &ks).unwrap();
        let errs: Vec<f64> = tables
            .iter()
            .map(|s| {
                let v = apply_theta_spa(kn, s, &phi, &x, 0.0, &ks).unwrap();
                v.iter().zip(&exact).map(|(u, w)| (u - w).powi(2)).sum::<f64>().sqrt() * h
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "a = {a}: {errs:?}");
    }
}
