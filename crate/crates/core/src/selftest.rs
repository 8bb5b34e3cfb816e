//! Fast invariant checks run by `wbrw selftest`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::brw::{Brw, Variant};
use crate::cache::{self, CacheStatus};
use crate::error::Result;
use crate::kernel::{sphere_abs_sin, Kernel, KernelResolution, Part, SupportBox, Truncation};
use crate::model::{experiment_morse, experiment_packet, GaussianPacket, Morse, PhaseState, PotentialModel, ZeroPotential};
use crate::quadrature::{adaptive, GaussLegendre, Tolerance};
use crate::reference::{CollisionMode, GridField, KBoundary, PhaseGrid, ReferenceSolver};
use crate::rng::tree_rng;
use crate::spa::{critical_points, SpaTables};

/// Deliberate defects for testing the checks themselves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// flips the sign of V_W on the half-space k₁ > 0
    KernelSign,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions<'a> {
    pub fault: Fault,
    pub cache: Option<&'a Path>,
}

/// Pearson χ² of observed counts against probabilities; returns (stat, df,
/// passes at the 1% level).
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, usize, bool) {
    let n: u64 = counts.iter().sum();
    let total: f64 = probs.iter().sum();
    let mut stat = 0.0;
    let mut df = 0usize;
    for (c, p) in counts.iter().zip(probs) {
        let e = n as f64 * p / total;
        if e > 0.0 {
            stat += (*c as f64 - e).powi(2) / e;
            df += 1;
        }
    }
    let df = df.saturating_sub(1).max(1);
    let crit = ChiSquared::new(df as f64).expect("df >= 1").inverse_cdf(0.99);
    (stat, df, stat <= crit)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn run(opts: &SelftestOptions<'_>) -> Result<Vec<CheckResult>> {
    let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0])?;
    let (kernel, status) =
        cache::load_or_build::<2, Morse<2>>(experiment_morse(), trunc, KernelResolution::default(), opts.cache)?;
    let mut out = Vec::new();
    out.push(CheckResult {
        name: "kernel cache",
        passed: true,
        detail: match status {
            CacheStatus::Disabled => "disabled".into(),
            CacheStatus::Hit => "loaded".into(),
            CacheStatus::Rebuilt(why) => format!("rebuilt ({why})"),
        },
        seconds: 0.0,
    });
    let fault = opts.fault;
    out.push(check("kernel anti-symmetry", || anti_symmetry(&kernel, fault)));
    out.push(check("radial sampler chi-square", || radial_chi2(&kernel)));
    out.push(check("jump sampler chi-square", || jump_chi2(&kernel)));
    out.push(check("SPA radius sampler chi-square", || spa_radius_chi2(&kernel)));
    out.push(check("transition kernel normalization", || normalization(&kernel)));
    out.push(check("critical point alignment", alignment));
    out.push(check("free-motion exactness", free_motion));
    out.push(check("reference conservation and adjoint", || reference_checks(&kernel)));
    out.push(check("corrupted cache rebuild", cache_rebuild));
    Ok(out)
}

fn anti_symmetry(kernel: &Kernel<2, Morse<2>>, fault: Fault) -> Result<(bool, String)> {
    let v = |x: &[f64; 2], k: &[f64; 2]| {
        let s = if fault == Fault::KernelSign && k[0] > 0.0 { -1.0 } else { 1.0 };
        s * kernel.wigner(x, k, 0.0)
    };
    let mut rng = tree_rng(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20_000 {
        let x = [rng.random_range(2.0..18.0), rng.random_range(2.0..18.0)];
        let k = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
        let a = v(&x, &k);
        let b = v(&x, &[-k[0], -k[1]]);
        let scale = a.abs().max(b.abs()).max(1e-300);
        worst = worst.max((a + b).abs() / scale);
    }
    Ok((worst <= 1e-14, format!("max |V(k)+V(-k)|/|V| = {worst:.3e}")))
}

/// Envelope radius law against bin masses of the density by quadrature.
fn radial_chi2(kernel: &Kernel<2, Morse<2>>) -> Result<(bool, String)> {
    let tab = &kernel.radial_tables().expect("radial model").envelope;
    let support = kernel.trunc.support();
    let edges = [0.0, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, support];
    let probs = binned_masses(&edges, |r| kernel.envelope(r, 0.0) * r);
    let mut rng = tree_rng(12, 0);
    let counts = bin_counts(&edges, 200_000, || tab.sample(&mut rng));
    let (stat, df, ok) = chi_square(&counts, &probs);
    Ok((ok, format!("chi2 = {stat:.2}, df = {df}")))
}

fn binned_masses(edges: &[f64], dens: impl Fn(f64) -> f64) -> Vec<f64> {
    let gl = GaussLegendre::new(20);
    edges
        .windows(2)
        .map(|w| {
            let m = 64;
            let h = (w[1] - w[0]) / m as f64;
            (0..m)
                .map(|i| gl.integrate(w[0] + h * i as f64, w[0] + h * (i + 1) as f64, &dens))
                .sum()
        })
        .collect()
}

fn bin_counts(edges: &[f64], n: usize, mut draw: impl FnMut() -> f64) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() - 1];
    for _ in 0..n {
        let r = draw();
        let i = edges.partition_point(|&e| e <= r).clamp(1, counts.len()) - 1;
        counts[i] += 1;
    }
    counts
}

/// Radius law of the σ⁺ branches, density r·Ψ(r)χ(r).
fn spa_radius_chi2(kernel: &Kernel<2, Morse<2>>) -> Result<(bool, String)> {
    let spa = SpaTables::build(kernel, 8.0, 1e-3)?;
    let support = kernel.trunc.support();
    let edges = [0.0, 0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 9.0, 12.0, support];
    let probs = binned_masses(&edges, |r| r * kernel.model.envelope(r, 0.0) * kernel.trunc.taper(r));
    let mut rng = tree_rng(16, 0);
    let counts = bin_counts(&edges, 200_000, || spa.sample_radius(&mut rng));
    let (stat, df, ok) = chi_square(&counts, &probs);
    Ok((ok, format!("chi2 = {stat:.2}, df = {df}")))
}

/// Sampled jumps from V⁺/ξ at one x, binned on a polar grid.
fn jump_chi2(kernel: &Kernel<2, Morse<2>>) -> Result<(bool, String)> {
    let x = [11.5, 10.8];
    let redges = [0.0, 0.15, 0.3, 0.5, 0.8, 1.2, 2.0, kernel.trunc.support()];
    let nth = 16;
    let nr = redges.len() - 1;
    let mut probs = vec![0.0; nr * nth];
    let sub = 48;
    for i in 0..nr {
        let gl = GaussLegendre::new(16);
        for j in 0..nth {
            let (t0, t1) = (2.0 * PI * j as f64 / nth as f64, 2.0 * PI * (j + 1) as f64 / nth as f64);
            let mut acc = 0.0;
            for a in 0..sub {
                let ra = redges[i] + (redges[i + 1] - redges[i]) * a as f64 / sub as f64;
                let rb = redges[i] + (redges[i + 1] - redges[i]) * (a + 1) as f64 / sub as f64;
                for b in 0..sub {
                    let ta = t0 + (t1 - t0) * b as f64 / sub as f64;
                    let tb = t0 + (t1 - t0) * (b + 1) as f64 / sub as f64;
                    acc += gl.integrate(ra, rb, |r| {
                        gl.integrate(ta, tb, |th| {
                            let k = [r * th.cos(), r * th.sin()];
                            kernel.wigner(&x, &k, 0.0).max(0.0) * r
                        })
                    });
                }
            }
            probs[i * nth + j] = acc;
        }
    }
    let mut rng = tree_rng(13, 0);
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..100_000 {
        let dk = kernel.sample_jump(&x, 0.0, Part::Positive, &mut rng)?;
        let r = dk[0].hypot(dk[1]);
        let th = dk[1].atan2(dk[0]).rem_euclid(2.0 * PI);
        let i = redges.partition_point(|&e| e <= r).clamp(1, nr) - 1;
        let j = ((th / (2.0 * PI) * nth as f64) as usize).min(nth - 1);
        counts[i * nth + j] += 1;
    }
    let (stat, df, ok) = chi_square(&counts, &probs);
    Ok((ok, format!("chi2 = {stat:.2}, df = {df}")))
}

/// ξ = ½∫F(r)·r·∫|sin(2r|z|cos θ)|dθ dr, with the angular integral done
/// between its kinks. Shares nothing with the Abel tables.
fn xi_angular(kernel: &Kernel<2, Morse<2>>, zn: f64) -> Result<f64> {
    let mut breaks = vec![0.0, 2.0 * kernel.trunc.radius, kernel.trunc.support()];
    breaks.extend(kernel.model.envelope_breaks().iter().map(|b| 0.5 * b));
    let (v, _) = adaptive("xi angular", &breaks, Tolerance::rel(1e-11).with_abs(1e-14), |r| {
        0.5 * kernel.envelope(r, 0.0) * r * sphere_abs_sin(2, 2.0 * r * zn)
    })?;
    Ok(v)
}

/// ξ from the tables against direct Abel quadrature; the SPA radial law's
/// table mass against η̆.
fn normalization(kernel: &Kernel<2, Morse<2>>) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for &zn in &[0.0123, 0.1234, 0.3137, 1.0421, 2.5183, 4.0077, 7.3291, 11.0613] {
        let x = [10.0 + 0.6 * zn, 10.0 + 0.8 * zn];
        let a = kernel.xi(&x, 0.0);
        let b = kernel.xi_radial_direct(zn).expect("radial model");
        let c = xi_angular(kernel, zn)?;
        worst = worst.max((a / b - 1.0).abs()).max((a / c - 1.0).abs());
    }
    let spa = SpaTables::build(kernel, 8.0, 1e-3)?;
    let mass_err = (spa.radial.mass / spa.eta_breve - 1.0).abs();
    let ok = worst <= 1e-6 && mass_err <= 1e-6;
    Ok((ok, format!("xi table vs direct rel err {worst:.2e}, SPA radial mass rel err {mass_err:.2e}")))
}

fn alignment() -> Result<(bool, String)> {
    let mut rng = tree_rng(14, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let z: [f64; 2] = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        let n = z[0].hypot(z[1]);
        if n < 1e-6 {
            continue;
        }
        let cp = critical_points(&z)?;
        worst = worst
            .max((cp.sigma_plus[0] - z[0] / n).abs())
            .max((cp.sigma_plus[1] - z[1] / n).abs())
            .max((cp.sigma_minus[0] + z[0] / n).abs());
    }
    Ok((worst <= 1e-10, format!("max deviation {worst:.2e}")))
}

fn free_motion() -> Result<(bool, String)> {
    let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0])?;
    let kernel = Kernel::new(ZeroPotential::<2>, trunc)?;
    let k_box = SupportBox::new([-4.0, -4.0], [4.0, 4.0])?;
    let phi = experiment_packet();
    let horizon = 2.0;
    let mut worst: f64 = 0.0;
    for v in [Variant::WpHjd, Variant::SpHjd] {
        let brw = Brw::new(&kernel, None, v, 1.0, horizon, k_box, 0.0)?;
        let mut rng = tree_rng(15, v as u64);
        for _ in 0..200 {
            let q = PhaseState::new(
                [rng.random_range(4.0..12.0), rng.random_range(8.0..16.0)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            )?;
            let t0 = rng.random_range(0.0..horizon);
            let x = brw.estimate_tree(q, t0, &phi, &mut rng)?;
            let exact = phi.eval(&q.drifted(horizon - t0));
            worst = worst.max((x - exact).abs() / exact.abs().max(1e-300));
        }
    }
    Ok((worst <= 1e-12, format!("max relative deviation {worst:.2e}")))
}

fn reference_checks(kernel: &Kernel<2, Morse<2>>) -> Result<(bool, String)> {
    let grid = PhaseGrid::experiment(24)?;
    let xi = kernel.xi(&[2.0, 2.0], 0.0);
    let solver = ReferenceSolver::new(kernel, grid, CollisionMode::Full, KBoundary::Periodic, xi)?;
    let phi_t_pk = experiment_packet();
    let f0_pk = GaussianPacket::normalized([9.0, 11.0], [0.0, 0.25], 0.5, 2.0)?;
    let phi_t = GridField::from_fn(grid, |q| phi_t_pk.eval(q));
    let f0 = GridField::from_fn(grid, |q| f0_pk.eval(q));
    let span = 1.0;
    let dt = 0.05;
    let back = solver.solve_backward(&phi_t, span, &[0.0], dt)?;
    let fwd = solver.solve_forward(&f0, span, dt)?;
    let mass_err = (back[0].integral() / phi_t.integral() - 1.0).abs();
    let lhs = back[0].inner(&f0);
    let rhs = phi_t.inner(&fwd);
    let adj_err = (lhs / rhs - 1.0).abs();
    let ok = mass_err <= 1e-8 && adj_err <= 1e-6;
    Ok((ok, format!("mass rel err {mass_err:.2e}, adjoint rel err {adj_err:.2e}")))
}

/// Writes a cache, corrupts one byte of it and checks that the next load
/// rebuilds and the one after that hits.
fn cache_rebuild() -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!("wbrw-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("kernel.bin");
    let trunc = Truncation::for_k_box(&[-4.0, -4.0], &[4.0, 4.0])?;
    let res = KernelResolution::default();
    let load = || cache::load_or_build::<2, Morse<2>>(experiment_morse(), trunc, res, Some(&path)).map(|r| r.1);
    let first = load()?;
    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x5a;
    std::fs::write(&path, &bytes)?;
    let second = load()?;
    let third = load()?;
    let _ = std::fs::remove_dir_all(&dir);
    let ok = matches!(first, CacheStatus::Rebuilt(_))
        && matches!(second, CacheStatus::Rebuilt(ref m) if m.contains("checksum"))
        && third == CacheStatus::Hit;
    Ok((ok, format!("{first:?} / {second:?} / {third:?}")))
}

pub fn report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{} {:<38} {:>7.2}s  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    s
}
