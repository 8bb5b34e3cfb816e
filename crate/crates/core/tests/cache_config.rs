use std::sync::OnceLock;

use wigner_brw::brw::Variant;
use wigner_brw::cache::{cache_key, decode, encode, load_or_build, CacheStatus};
use wigner_brw::config::{Gamma0, SimConfig, FIG1_CONFIG};
use wigner_brw::kernel::{Kernel, KernelResolution, Truncation};
use wigner_brw::model::{experiment_morse, Morse};
use wigner_brw::reference::KBoundary;
use wigner_brw::Error;

fn trunc() -> Truncation {
    Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0]).unwrap()
}

fn built() -> &'static Kernel<2, Morse<2>> {
    static K: OnceLock<Kernel<2, Morse<2>>> = OnceLock::new();
    K.get_or_init(|| Kernel::new(experiment_morse(), trunc()).unwrap())
}

fn key() -> [u8; 16] {
    cache_key::<2, _>(&experiment_morse(), &trunc(), &KernelResolution::default())
}

#[test]
fn tables_survive_a_round_trip() {
    let t = built().radial_tables().unwrap();
    let bytes = encode(2, &key(), t);
    let back = decode(&bytes, 2, &key()).unwrap();
    assert_eq!(back.envelope.r, t.envelope.r);
    assert_eq!(back.envelope.cdf, t.envelope.cdf);
    assert_eq!(back.xi.values, t.xi.values);
    assert_eq!(back.abel.xs(), t.abel.xs());
    assert_eq!(back.kinks, t.kinks);
    assert_eq!(back.envelope_mass, t.envelope_mass);
}

#[test]
fn every_corruption_is_detected() {
    let t = built().radial_tables().unwrap();
    let good = encode(2, &key(), t);
    let reason = |b: &[u8], dim: usize, k: &[u8; 16]| match decode(b, dim, k) {
        Err(Error::Format(m)) => m,
        other => panic!("expected a format error, got {:?}", other.map(|_| ())),
    };
    assert!(reason(&good[..20], 2, &key()).contains("truncated"));
    let mut m = good.clone();
    m[0] ^= 1;
    assert!(reason(&m, 2, &key()).contains("magic"));
    let mut v = good.clone();
    v[8] = v[8].wrapping_add(1);
    assert!(reason(&v, 2, &key()).contains("version"));
    assert!(reason(&good, 3, &key()).contains("dimension"));
    let other = cache_key::<2, _>(&experiment_morse(), &Truncation::new(5.0).unwrap(), &KernelResolution::default());
    assert_ne!(other, key());
    assert!(reason(&good, 2, &other).contains("key"));
    let mut c = good.clone();
    let mid = c.len() / 2;
    c[mid] ^= 0x40;
    assert!(reason(&c, 2, &key()).contains("checksum"));
    let mut short = good;
    short.truncate(short.len() - 100);
    assert!(decode(&short, 2, &key()).is_err());
}

#[test]
fn load_or_build_rebuilds_then_hits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.bin");
    let res = KernelResolution::default();
    let (_, s) = load_or_build(experiment_morse(), trunc(), res, None).unwrap();
    assert_eq!(s, CacheStatus::Disabled);
    let (a, s) = load_or_build(experiment_morse(), trunc(), res, Some(&path)).unwrap();
    assert!(matches!(s, CacheStatus::Rebuilt(_)));
    let (b, s) = load_or_build(experiment_morse(), trunc(), res, Some(&path)).unwrap();
    assert_eq!(s, CacheStatus::Hit);
    let x = [13.0, 7.5];
    assert_eq!(a.xi(&x, 0.0), b.xi(&x, 0.0));
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let (_, s) = load_or_build(experiment_morse(), trunc(), res, Some(&path)).unwrap();
    assert!(matches!(s, CacheStatus::Rebuilt(ref m) if m.contains("checksum")), "{s:?}");
    let (_, s) = load_or_build(experiment_morse(), trunc(), res, Some(&path)).unwrap();
    assert_eq!(s, CacheStatus::Hit);
}

#[test]
fn bundled_configs_parse() {
    let cfg = SimConfig::parse(FIG1_CONFIG).unwrap();
    assert_eq!(cfg.variants().unwrap(), Variant::ALL.to_vec());
    assert_eq!(cfg.run.horizon, 2.0);
    assert_eq!(cfg.run.lambda0, vec![2.0, 8.0]);
    assert_eq!(cfg.reference.boundary().unwrap(), KBoundary::Periodic);
    assert_eq!(cfg.trees_for(Variant::WpHjd, &Gamma0::Relative("4xi".into())), 500);
    assert_eq!(cfg.trees_for(Variant::WpSpa, &Gamma0::Relative("4*xi".into())), 0);
    assert_eq!(cfg.trees_for(Variant::SpHjd, &Gamma0::Relative("4xi".into())), cfg.run.n_trees);
    assert_eq!(cfg.trees_for(Variant::WpHjd, &Gamma0::Absolute(4.0)), cfg.run.n_trees);
    let again = SimConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(again.run.gamma0, cfg.run.gamma0);
    assert_eq!(again.run.n_trees_override, cfg.run.n_trees_override);
    let smoke = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.cfg")).unwrap();
    SimConfig::parse(&smoke).unwrap();
}

#[test]
fn gamma0_forms() {
    let xi = 0.7;
    let cases = [("xi", 1.0), ("2xi", 2.0), ("4*xi", 4.0), (" 1.5 * xi ", 1.5)];
    for (s, m) in cases {
        let g = Gamma0::Relative(s.into());
        assert_eq!(g.multiple(), Some(m));
        assert!((g.resolve(xi).unwrap() - m * xi).abs() < 1e-15);
    }
    assert_eq!(Gamma0::Absolute(1.3).resolve(xi).unwrap(), 1.3);
    assert!(matches!(Gamma0::Relative("2eta".into()).resolve(xi), Err(Error::Config(_))));
    assert!(Gamma0::Relative("twoxi".into()).resolve(xi).is_err());
}

fn edited(from: &str, to: &str) -> Result<SimConfig, Error> {
    assert!(FIG1_CONFIG.contains(from), "{from}");
    SimConfig::parse(&FIG1_CONFIG.replacen(from, to, 1))
}

#[test]
fn invalid_configs_are_config_errors() {
    let config_err = [
        ("dimension = 2", "dimension = 3"),
        ("potential = \"morse\"", "potential = \"coulomb\""),
        ("kappa = 0.5", "kappa = -0.5"),
        ("x_hi = [18.0, 18.0]", "x_hi = [1.0, 18.0]"),
        ("k_lo = [-4.0, -4.0]", "k_lo = [-4.0]"),
        ("ax = 0.5", "ax = 0.0"),
        ("horizon = 2.0", "horizon = 0.0"),
        ("n_trees = 100000", "n_trees = 1"),
        ("variants = [\"wp-hjd\", \"sp-hjd\", \"wp-spa\", \"sp-spa\"]", "variants = [\"hjd\"]"),
        ("gamma0 = [\"xi\", \"2xi\", \"4xi\"]", "gamma0 = [\"fast\"]"),
        ("probe_times = [2.0, 1.5, 1.0, 0.5, 0.0]", "probe_times = [2.5]"),
        ("\"wp-hjd@4\" = 500", "\"wp-hjd@4\" = 1"),
        ("\"wp-hjd@4\" = 500", "\"wp-hjd-4\" = 500"),
        ("grid = 32", "grid = 8"),
        ("boundary = \"periodic\"", "boundary = \"open\""),
        ("xi_lattice = 65", "xi_lattice = 1"),
        ("[lattice]\n", "[lattice]\nunknown = 3\n"),
        ("seed = 7081", "seed = \"seven\""),
    ];
    for (from, to) in config_err {
        assert!(matches!(edited(from, to), Err(Error::Config(_))), "{to}");
    }
    assert!(matches!(edited("lambda0 = [2.0, 8.0]", "lambda0 = [1.0]"), Err(Error::Feasibility(_))));
    // without stationary-phase variants lambda0 is not checked
    let hjd_only = FIG1_CONFIG
        .replace("variants = [\"wp-hjd\", \"sp-hjd\", \"wp-spa\", \"sp-spa\"]", "variants = [\"sp-hjd\"]")
        .replace("lambda0 = [2.0, 8.0]", "lambda0 = [1.0]");
    assert!(SimConfig::parse(&hjd_only).is_ok());
    assert!(matches!(
        SimConfig::load(std::path::Path::new("/nonexistent/x.cfg")),
        Err(Error::Config(_))
    ));
}
