use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wbrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbrw"))
        .args(args)
        .env_remove("WBRW_WORKERS")
        .output()
        .expect("binary runs")
}

fn smoke_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg")
}

fn write_cfg(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(smoke_cfg()).unwrap();
    let p = dir.join("edited.cfg");
    std::fs::write(&p, edit(text)).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = wbrw(&["run", "--config", smoke_cfg().to_str().unwrap(), "--out", out.to_str().unwrap(), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("xi_breve"));
    assert!(text.contains("[computed]"));
    assert!(!out.exists());
}

#[test]
fn gamma0_below_xi_breve_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), |t| t.replace("gamma0 = [\"xi\", \"2xi\"]", "gamma0 = [0.5]"));
    let o = wbrw(&["run", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma0 < xi_breve"), "{}", stderr(&o));
}

#[test]
fn spa_floor_gate_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    // floor 2*eta_breve*sqrt(2pi/lambda0) is about 0.89 at lambda0 = 1.01
    let cfg = write_cfg(tmp.path(), |t| t.replace("lambda0 = [8.0]", "lambda0 = [1.01]"));
    let o = wbrw(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2*eta_breve"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_missing_file_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), |t| t.replace("[run]\n", "[run]\nbogus = 1\n"));
    let o = wbrw(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = wbrw(&["bounds", "--config", tmp.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_prints_the_constants() {
    let o = wbrw(&["bounds"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("xi_breve = 0.72281"), "{text}");
    assert!(text.contains("alpha_star"));
    assert!(text.contains("k_v_proxy"));
}

#[test]
fn selftest_passes_and_detects_a_sign_flip() {
    let o = wbrw(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = wbrw(&["selftest", "--inject-fault", "kernel-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL kernel anti-symmetry")), "{text}");
}

#[test]
fn selftest_rebuilds_a_corrupted_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("kernel.bin");
    std::fs::write(&cache, b"WBRWKTAB not really a table").unwrap();
    let cfg = write_cfg(tmp.path(), |t| {
        t.replace("[kernel]\n", &format!("[kernel]\ncache = {:?}\n", cache.to_str().unwrap()))
    });
    let o = wbrw(&["selftest", "--config", cfg.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("rebuilt"), "{text}");
    let o = wbrw(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
}

fn strip_wall(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap_or_default())
        .collect()
}

#[test]
fn series_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for w in ["1", "8"] {
        let out = tmp.path().join(format!("w{w}"));
        let o = wbrw(&["run", "--config", smoke_cfg().to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", w]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(std::fs::read_to_string(out.join("series.csv")).unwrap());
        assert!(out.join("run.meta").exists());
        assert!(out.join("reference_t0.0000.bin").exists());
    }
    let header = csvs[0].lines().next().unwrap();
    assert_eq!(header, "t,variant,gamma0,lambda0,n_trees,mean,variance,stderr,l2_error,wall_ms");
    assert_eq!(csvs[0].lines().count(), 1 + 4 * 2 * 3);
    assert_eq!(strip_wall(&csvs[0]), strip_wall(&csvs[1]));
}

#[test]
fn seed_flag_changes_the_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), |t| {
        t.replace("variants = [\"wp-hjd\", \"sp-hjd\", \"wp-spa\", \"sp-spa\"]", "variants = [\"wp-hjd\"]")
            .replace("gamma0 = [\"xi\", \"2xi\"]", "gamma0 = [\"xi\"]")
            .replace("trees_per_point = 8", "trees_per_point = 0")
            .replace("snapshots = true", "snapshots = false")
    });
    let mut csvs = Vec::new();
    for s in ["1", "2"] {
        let out = tmp.path().join(format!("s{s}"));
        let o = wbrw(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", s]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(std::fs::read_to_string(out.join("series.csv")).unwrap());
    }
    assert_ne!(strip_wall(&csvs[0]), strip_wall(&csvs[1]));
}
