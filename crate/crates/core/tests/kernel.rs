use std::f64::consts::PI;

use proptest::prelude::*;
use wigner_brw::kernel::{alpha_star, sphere_abs_sin, Kernel, Part, SupportBox, Truncation};
use wigner_brw::model::{experiment_morse, Morse, PotentialModel};
use wigner_brw::quadrature::{adaptive, Tolerance};
use wigner_brw::rng::tree_rng;

fn kernel() -> Kernel<2, Morse<2>> {
    let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap();
    Kernel::new(experiment_morse(), trunc).unwrap()
}

fn support() -> SupportBox<2> {
    SupportBox::new([2.0, 2.0], [18.0, 18.0]).unwrap()
}

/// (2π)^{-2}∫V(x)e^{-ik·x}dx as a Hankel transform of the radial Morse
/// potential, by quadrature.
fn h_by_hankel(m: &Morse<2>, r: f64) -> f64 {
    let v = |rho: f64| {
        let s = rho - m.r0;
        -2.0 * (-m.kappa * s).exp() + (-2.0 * m.kappa * s).exp()
    };
    let breaks: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    let (val, _) = adaptive("hankel", &breaks, Tolerance::rel(1e-12).with_abs(1e-16), |rho| {
        v(rho) * libm::j0(r * rho) * rho
    })
    .unwrap();
    val / (2.0 * PI)
}

#[test]
fn morse_profile_matches_fourier_transform() {
    let m = experiment_morse();
    for &r in &[0.05, 0.3, 0.7, 1.0, 2.0, 4.5, 9.0] {
        let a = m.h(r);
        let b = h_by_hankel(&m, r);
        assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "r={r}: {a} vs {b}");
    }
}

#[test]
fn truncation_matches_box() {
    let t = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap();
    assert!((t.radius - 32f64.sqrt()).abs() < 1e-15);
    assert_eq!(t.taper(2.0 * t.radius), 1.0);
    assert_eq!(t.taper(3.0 * t.radius), 0.0);
    assert!((t.taper(2.5 * t.radius) - 0.5).abs() < 1e-15);
    assert!(Truncation::new(0.0).is_err());
}

proptest! {
    #[test]
    fn wigner_kernel_is_odd_in_k(x1 in 0.0f64..20.0, x2 in 0.0f64..20.0, k1 in -20.0f64..20.0, k2 in -20.0f64..20.0) {
        let kn = kernel_cached();
        let a = kn.wigner(&[x1, x2], &[k1, k2], 0.0);
        let b = kn.wigner(&[x1, x2], &[-k1, -k2], 0.0);
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn taper_is_monotone_in_unit_interval(a in 0.0f64..30.0, b in 0.0f64..30.0) {
        let t = Truncation::new(5.0).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!((0.0..=1.0).contains(&t.taper(lo)));
        prop_assert!(t.taper(lo) >= t.taper(hi));
    }

    #[test]
    fn xi_table_matches_angular_quadrature(zn in 0.01f64..14.0, th in 0.0f64..(2.0 * PI)) {
        let kn = kernel_cached();
        let x = [10.0 + zn * th.cos(), 10.0 + zn * th.sin()];
        let a = kn.xi(&x, 0.0);
        let b = xi_angular(kn, zn);
        prop_assert!((a / b - 1.0).abs() < 1e-6, "zn={} {} vs {}", zn, a, b);
    }
}

fn kernel_cached() -> &'static Kernel<2, Morse<2>> {
    use std::sync::OnceLock;
    static K: OnceLock<Kernel<2, Morse<2>>> = OnceLock::new();
    K.get_or_init(kernel)
}

/// ½∫F(r)·r·∫|sin(2r|z|cos θ)|dθ dr.
fn xi_angular(kn: &Kernel<2, Morse<2>>, zn: f64) -> f64 {
    let mut breaks = vec![0.0, 2.0 * kn.trunc.radius, kn.trunc.support()];
    breaks.extend(kn.model.envelope_breaks().iter().map(|b| 0.5 * b));
    adaptive("xi", &breaks, Tolerance::rel(1e-11).with_abs(1e-14), |r| {
        0.5 * kn.envelope(r, 0.0) * r * sphere_abs_sin(2, 2.0 * r * zn)
    })
    .unwrap()
    .0
}

#[test]
fn sphere_abs_sin_against_trapezoid() {
    // kinks limit the periodic trapezoid rule to O(h^2)
    for &a in &[0.0, 0.4, 1.7, 12.3] {
        let n = 200_000;
        let s: f64 = (0..n)
            .map(|j| (a * (2.0 * PI * j as f64 / n as f64).cos()).sin().abs())
            .sum::<f64>()
            * 2.0
            * PI
            / n as f64;
        assert!((sphere_abs_sin(2, a) - s).abs() < 1e-7, "a={a}");
    }
}

#[test]
fn xi_vanishes_at_the_centre_and_saturates() {
    let kn = kernel_cached();
    assert!(kn.xi(&[10.0, 10.0], 0.0).abs() < 1e-15);
    // the angular integral tends to 4 for large |z|
    let limit = adaptive("lim", &[0.0, kn.trunc.radius * 2.0, kn.trunc.support(), 0.5 * kn.model.h_zero().unwrap()], Tolerance::rel(1e-12), |r| {
        0.5 * kn.envelope(r, 0.0) * r * 4.0
    })
    .unwrap()
    .0;
    let far = kn.xi(&[10.0 + 60.0, 10.0], 0.0);
    assert!((far / limit - 1.0).abs() < 1e-2, "{far} vs {limit}");
}

#[test]
fn xi_breve_on_the_experiment_support() {
    // frozen from the angular-quadrature route at the corner |z| = 8√2
    let kn = kernel_cached();
    let b = kn.bounds(&support(), 65, &[0.0]).unwrap();
    assert_eq!(b.argmax, [2.0, 2.0]);
    let oracle = xi_angular(kn, 8.0 * 2f64.sqrt());
    assert!((b.value - oracle).abs() < 1e-6 * oracle);
    assert!((b.value - 0.722_813_7).abs() < 1e-6);
}

#[test]
fn low_frequency_share_is_ordered() {
    let kn = kernel_cached();
    let a2 = alpha_star(kn, &support(), 33, 2.0, kn.bounds(&support(), 33, &[0.0]).unwrap().value).unwrap();
    let a8 = alpha_star(kn, &support(), 33, 8.0, kn.bounds(&support(), 33, &[0.0]).unwrap().value).unwrap();
    assert!(0.0 < a2 && a2 < a8 && a8 < 1.0, "{a2} {a8}");
    let x = [13.0, 11.0];
    let xi = kn.xi(&x, 0.0);
    let m4 = kn.low_frequency_mass(&x, 0.0, 4.0).unwrap();
    let m_big = kn.low_frequency_mass(&x, 0.0, 1e4).unwrap();
    assert!(m4 < xi);
    assert!((m_big / xi - 1.0).abs() < 1e-5, "{m_big} vs {xi}");
    assert!(alpha_star(kn, &support(), 9, 0.5, 0.7).is_err());
}

#[test]
fn jumps_land_on_the_requested_sign() {
    let kn = kernel_cached();
    let x = [7.3, 12.1];
    let mut rng = tree_rng(3, 0);
    for _ in 0..2000 {
        let p = kn.sample_jump(&x, 0.0, Part::Positive, &mut rng).unwrap();
        assert!(kn.wigner(&x, &p, 0.0) >= 0.0);
        let m = kn.sample_jump(&x, 0.0, Part::Negative, &mut rng).unwrap();
        assert!(kn.wigner(&x, &m, 0.0) <= 0.0);
        assert!(p[0].hypot(p[1]) <= kn.trunc.support());
    }
    assert!(kn.sample_jump(&[10.0, 10.0], 0.0, Part::Positive, &mut rng).is_err());
}

#[test]
fn jump_radius_mean_matches_marginal() {
    let kn = kernel_cached();
    let x = [12.0, 9.0];
    let zn = 5f64.sqrt();
    let xi = kn.xi(&x, 0.0);
    // radial density of V⁺/ξ: ½F(r) r S(2r|z|)/ξ
    let mean_r = adaptive("mr", &[0.0, 0.5 * kn.model.h_zero().unwrap(), 2.0 * kn.trunc.radius, kn.trunc.support()], Tolerance::rel(1e-11).with_abs(1e-14), |r| {
        r * 0.5 * kn.envelope(r, 0.0) * r * sphere_abs_sin(2, 2.0 * r * zn)
    })
    .unwrap()
    .0 / xi;
    let mut rng = tree_rng(4, 0);
    let n = 200_000;
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..n {
        let p = kn.sample_jump(&x, 0.0, Part::Positive, &mut rng).unwrap();
        let r = p[0].hypot(p[1]);
        s += r;
        s2 += r * r;
    }
    let m = s / n as f64;
    let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
    assert!((m - mean_r).abs() < 4.0 * se, "{m} vs {mean_r} (se {se})");
}
