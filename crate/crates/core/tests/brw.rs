use std::sync::OnceLock;

use proptest::prelude::*;
use wigner_brw::brw::{branch_sign, sample_life_length, Brw, Variant};
use wigner_brw::kernel::{Kernel, SupportBox, Truncation};
use wigner_brw::model::{experiment_morse, experiment_packet, Morse, PhaseState, ZeroPotential};
use wigner_brw::rng::tree_rng;
use wigner_brw::spa::SpaTables;
use wigner_brw::Error;

const XI_BREVE: f64 = 0.722_813_724_865_735_9;

fn k_box() -> SupportBox<2> {
    SupportBox::new([-4.0, -4.0], [4.0, 4.0]).unwrap()
}

fn kernel() -> &'static Kernel<2, Morse<2>> {
    static K: OnceLock<Kernel<2, Morse<2>>> = OnceLock::new();
    K.get_or_init(|| {
        let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap();
        Kernel::new(experiment_morse(), trunc).unwrap()
    })
}

fn spa8() -> &'static SpaTables {
    static S: OnceLock<SpaTables> = OnceLock::new();
    S.get_or_init(|| SpaTables::build(kernel(), 8.0, 1e-3).unwrap())
}

fn brw(variant: Variant, gamma0: f64) -> Brw<'static, 2, Morse<2>> {
    let spa = variant.spa().then(spa8);
    Brw::new(kernel(), spa, variant, gamma0, 2.0, k_box(), XI_BREVE).unwrap()
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(v.to_string(), v.name());
    }
    assert_eq!("SP_SPA".parse::<Variant>().unwrap(), Variant::SpSpa);
    assert!(matches!("hjd".parse::<Variant>(), Err(Error::Config(_))));
    assert_eq!(Variant::WpSpa.hjd_counterpart(), Variant::WpHjd);
    assert_eq!(Variant::SpSpa.branch_count(), 5);
    assert_eq!((1..=5).map(branch_sign).collect::<Vec<_>>(), [1.0, -1.0, 1.0, -1.0, 1.0]);
}

#[test]
fn life_lengths_are_exponential() {
    let mut rng = tree_rng(1, 0);
    let n = 200_000;
    let g = 1.7;
    let m: f64 = (0..n).map(|_| sample_life_length(g, &mut rng).unwrap()).sum::<f64>() / n as f64;
    // sd of the mean is 1/(g√n)
    assert!((m - 1.0 / g).abs() < 4.0 / (g * (n as f64).sqrt()));
    assert!(sample_life_length(0.0, &mut rng).is_err());
}

#[test]
fn gates_reject_slow_clocks() {
    let e = Brw::new(kernel(), None, Variant::WpHjd, 0.5, 2.0, k_box(), XI_BREVE).err().unwrap();
    assert!(matches!(e, Error::Feasibility(ref m) if m.contains("gamma0 < xi_breve")));
    let spa2 = SpaTables::build(kernel(), 2.0, 1e-3).unwrap();
    // floor 2η̆√(2π/2) ≈ 0.633 sits below ξ̆, so use a tiny λ0 instead
    let spa_tight = SpaTables::build(kernel(), 1.05, 1e-3).unwrap();
    assert!(Brw::new(kernel(), Some(&spa2), Variant::SpSpa, XI_BREVE, 2.0, k_box(), XI_BREVE).is_ok());
    let e = Brw::new(kernel(), Some(&spa_tight), Variant::SpSpa, XI_BREVE, 2.0, k_box(), XI_BREVE)
        .err()
        .unwrap();
    assert!(matches!(e, Error::Feasibility(ref m) if m.contains("2*eta_breve")));
    assert!(Brw::new(kernel(), None, Variant::WpSpa, 1.0, 2.0, k_box(), XI_BREVE).is_err());
}

#[test]
fn runaway_trees_hit_the_cap() {
    let b = brw(Variant::WpHjd, 8.0).with_record_cap(50);
    let q = PhaseState::new([7.0, 13.0], [0.5, -0.5]).unwrap();
    let mut rng = tree_rng(2, 0);
    let e = b.estimate_tree(q, 0.0, &experiment_packet(), &mut rng).err().unwrap();
    assert!(matches!(e, Error::RunawayTree { cap: 50 }));
    assert!(b.estimate_tree(q, 2.5, &experiment_packet(), &mut rng).is_err());
}

#[test]
fn tree_structure_follows_the_variant() {
    let q = PhaseState::new([9.0, 11.0], [0.0, 0.5]).unwrap();
    for v in Variant::ALL {
        let b = brw(v, 2.0 * XI_BREVE);
        for seed in 0..40 {
            let mut rng = tree_rng(10, seed);
            let tree = b.grow_family(q, 0.0, &mut rng).unwrap();
            let n = tree.records.len();
            let mut kids = vec![Vec::new(); n];
            for (i, r) in tree.records.iter().enumerate() {
                if let Some(p) = r.parent {
                    kids[p].push(i);
                    assert!((r.birth_time - (tree.records[p].birth_time + tree.records[p].life)).abs() < 1e-12);
                }
            }
            for (i, r) in tree.records.iter().enumerate() {
                if r.frozen {
                    assert!(kids[i].is_empty());
                    assert!(r.birth_time + r.life >= 2.0);
                    continue;
                }
                // the last branch always carries the unchanged momentum
                let last = *kids[i].last().expect("a dead particle has children");
                assert_eq!(tree.records[last].branch, v.branch_count());
                assert_eq!(tree.records[last].weight, 1.0);
                let end = r.state.drifted(r.life);
                assert_eq!(tree.records[last].state.k, end.k);
                for &c in &kids[i] {
                    assert!(tree.records[c].branch >= 1 && tree.records[c].branch <= v.branch_count());
                    assert_eq!(tree.records[c].state.x, end.x);
                    assert!(k_box().contains(&tree.records[c].state.k));
                }
                if !v.spa() {
                    assert!(kids[i].len() <= 3);
                }
            }
            if v.signed() {
                assert!(tree.records.iter().all(|r| [-1.0, 0.0, 1.0].contains(&r.cum_weight)));
            }
        }
    }
}

#[test]
fn streaming_and_stored_trees_agree() {
    let q = PhaseState::new([7.5, 12.5], [0.25, -0.25]).unwrap();
    let phi = experiment_packet();
    for v in Variant::ALL {
        let b = brw(v, 2.0 * XI_BREVE);
        for seed in 0..30 {
            let a = b.estimate_tree(q, 0.5, &phi, &mut tree_rng(20, seed)).unwrap();
            let tree = b.grow_family(q, 0.5, &mut tree_rng(20, seed)).unwrap();
            let e = tree.evaluate(&phi).unwrap();
            assert!((a - e).abs() <= 1e-14 * (1.0 + a.abs()));
            assert!((tree.subtree_value(0, &phi).unwrap() - e).abs() <= 1e-14 * (1.0 + e.abs()));
            assert_eq!(tree.trace().lines().count(), tree.records.len());
        }
    }
}

fn zero_kernel() -> Kernel<2, ZeroPotential<2>> {
    let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap();
    Kernel::new(ZeroPotential::<2>, trunc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn free_motion_is_exact(x1 in 2.0f64..18.0, x2 in 2.0f64..18.0, k1 in -4.0f64..4.0, k2 in -4.0f64..4.0,
                            t0 in 0.0f64..2.0, seed in 0u64..1000, signed in any::<bool>()) {
        let kn = zero_kernel();
        let v = if signed { Variant::SpHjd } else { Variant::WpHjd };
        let b = Brw::new(&kn, None, v, 1.0, 2.0, k_box(), 0.0).unwrap();
        let q = PhaseState::new([x1, x2], [k1, k2]).unwrap();
        let phi = experiment_packet();
        let got = b.estimate_tree(q, t0, &phi, &mut tree_rng(seed, 0)).unwrap();
        let want = phi.eval(&q.drifted(2.0 - t0));
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
    }
}

/// Frozen from the periodic 32⁴ reference solution at t = 0 (dt 0.02;
/// agrees with dt 0.01 and 48⁴ to about 1e-6).
const REF_Q1: f64 = 0.080149;

#[test]
fn probe_means_match_the_reference() {
    let q = PhaseState::new([7.0, 13.0], [0.5, -0.5]).unwrap();
    let phi = experiment_packet();
    for v in Variant::ALL {
        let b = brw(v, XI_BREVE.max(spa8().gamma0_floor(2)));
        let m = b.first_moment(q, 0.0, &phi, 20_000, 99).unwrap();
        let tol = 4.0 * m.stderr + 2e-4;
        assert!((m.mean - REF_Q1).abs() < tol, "{v}: {} ± {} vs {REF_Q1}", m.mean, m.stderr);
    }
}
