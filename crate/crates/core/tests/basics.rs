//! Small unit checks of the numerical building blocks.

use rand::Rng;
use wigner_brw::model::{advect, experiment_morse, PhaseState, PotentialModel};
use wigner_brw::quadrature::{adaptive, gauss_legendre, GaussLegendre, Tolerance};
use wigner_brw::rng::{derive_seed, label_of, tree_rng};
use wigner_brw::stats::Welford;
use wigner_brw::tables::{Pchip, RadialTable};
use wigner_brw::util::UniformTable;
use wigner_brw::Error;

#[test]
fn morse_minimum_and_decay() {
    let m = experiment_morse();
    assert!((m.potential(&[10.5, 10.0], 0.0) + 1.0).abs() < 1e-15);
    assert!(m.potential(&[1010.0, 10.0], 0.0).abs() < 1e-12);
}

#[test]
fn morse_constant_and_sign_change() {
    let m = experiment_morse();
    assert!((m.c_n() - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
    let r = m.h_zero().unwrap();
    assert!(m.h(r).abs() < 1e-14);
    assert!(m.h(0.0) < 0.0 && m.h(5.0) > 0.0);
}

#[test]
fn advect_rejects_negative_dt() {
    let q = PhaseState::new([0.0, 0.0], [1.0, 0.0]).unwrap();
    assert!(advect(&q, -1.0).is_err());
    assert_eq!(advect(&q, 2.0).unwrap().x, [2.0, 0.0]);
    assert!(PhaseState::new([f64::NAN], [0.0]).is_err());
}

#[test]
fn legendre_rule_is_exact_for_polynomials() {
    let g = GaussLegendre::new(6);
    // degree 11 is integrated exactly by a 6-point rule
    let v = g.integrate(0.0, 2.0, |x| x.powi(11));
    assert!((v - 2f64.powi(12) / 12.0).abs() < 1e-10);
    let s: f64 = gauss_legendre(40).1.iter().sum();
    assert!((s - 2.0).abs() < 1e-14);
}

#[test]
fn adaptive_handles_kinks_and_reports_failure() {
    let (v, _) = adaptive("abs", &[-1.0, 0.3, 2.0], Tolerance::rel(1e-12), |x| {
        (x - 0.3).abs()
    })
    .unwrap();
    assert!((v - (1.3f64.powi(2) / 2.0 + 1.7f64.powi(2) / 2.0)).abs() < 1e-12);

    let tol = Tolerance {
        rel: 1e-14,
        abs: 0.0,
        max_pieces: 4,
    };
    let r = adaptive("singular", &[0.0, 1.0], tol, |x| x.powf(-0.9));
    assert!(matches!(r, Err(Error::Quadrature { .. })));
}

#[test]
fn streams_are_distinct_and_repeatable() {
    let a: u64 = tree_rng(7, 0).random();
    let b: u64 = tree_rng(7, 1).random();
    let c: u64 = tree_rng(7, 0).random();
    assert_ne!(a, b);
    assert_eq!(a, c);
    assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
    assert_ne!(label_of("wp-hjd"), label_of("sp-hjd"));
}

#[test]
fn merge_matches_sequential() {
    let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
    let all = Welford::from_slice(&xs);
    let mut a = Welford::from_slice(&xs[..40]);
    a.merge(&Welford::from_slice(&xs[40..]));
    assert!((a.mean - all.mean).abs() < 1e-14);
    assert!((a.variance() - all.variance()).abs() < 1e-13);
    let mean = xs.iter().sum::<f64>() / 100.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
    assert!((all.variance() - var).abs() < 1e-13);
}

#[test]
fn pchip_stays_monotone_on_steps() {
    let p = Pchip::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let mut prev = -1.0;
    for i in 0..=300 {
        let v = p.eval(i as f64 / 100.0);
        assert!(v >= prev - 1e-15);
        assert!((-1e-15..=1.0 + 1e-15).contains(&v));
        prev = v;
    }
}

#[test]
fn radial_table_inverts_a_known_cdf() {
    // density 2r on [0,1] has CDF r^2 and quantile sqrt(u)
    let t = RadialTable::build(1.0, 512, &[], |r| 2.0 * r).unwrap();
    assert!((t.mass - 1.0).abs() < 1e-12);
    for &u in &[1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
        let q = t.quantile(u);
        assert!((q - f64::sqrt(u)).abs() < 1e-6, "u={u} q={q}");
    }
    // PCHIP on knots about 2.7% apart
    assert!((t.cdf_at(0.5) - 0.25).abs() < 1e-6);
}

#[test]
fn zero_density_gives_empty_table() {
    let t = RadialTable::build(1.0, 64, &[], |_| 0.0).unwrap();
    assert!(t.is_empty());
    assert_eq!(t.mass, 0.0);
}

#[test]
fn cubic_data_is_reproduced() {
    let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
    let vals: Vec<f64> = (0..10).map(|i| f(0.3 * i as f64)).collect();
    let t = UniformTable::new(0.0, 0.3, vals).unwrap();
    for &x in &[0.0, 0.05, 0.31, 1.4, 2.69, 2.7] {
        assert!((t.eval(x) - f(x)).abs() < 1e-12, "x={x}");
    }
}

