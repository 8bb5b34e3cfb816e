//! Observables built on the branching walk: importance sampling of initial
//! states, the adjoint inner product, per-probe-time variance series with a
//! lattice L²-error against a reference field, and the variance bounds.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::brw::{Brw, Variant};
use crate::error::{invalid, Result};
use crate::kernel::SupportBox;
use crate::model::{GaussianPacket, PhaseField, PhaseState, PotentialModel};
use crate::rng::{derive_seed, label_of, tree_rng};
use crate::stats::{Moments, Welford};

/// Initial law f_I = |f₀|/‖f₀‖₁ with sign scale s = f₀/f_I for a Gaussian
/// packet (‖f₀‖₁ in closed form).
#[derive(Clone, Debug)]
pub struct InitialSampler<const D: usize> {
    pub packet: GaussianPacket<D>,
    l1: f64,
}

impl<const D: usize> InitialSampler<D> {
    pub fn new(packet: GaussianPacket<D>) -> Result<Self> {
        let l1 = packet.l1_norm();
        if !(l1 > 0.0) || !l1.is_finite() {
            return Err(invalid("initial packet has zero or infinite mass"));
        }
        Ok(Self { packet, l1 })
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    /// f_I(q).
    pub fn density(&self, q: &PhaseState<D>) -> f64 {
        self.packet.eval(q).abs() / self.l1
    }

    /// ‖f_I‖_∞.
    pub fn density_sup(&self) -> f64 {
        self.packet.sup_norm() / self.l1
    }

    /// s = ‖f₀‖₁·sign(f₀); constant for a single packet.
    pub fn scale(&self) -> f64 {
        self.l1 * self.packet.prefactor.signum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (PhaseState<D>, f64) {
        (self.packet.sample(rng), self.scale())
    }
}

/// ⟨φ(t0), f₀⟩ from `n` trees rooted at f_I-distributed states at time t0.
/// Tree i draws its root first from stream i, so variants run with the same
/// seed share their initial states.
pub fn inner_product_estimate<const D: usize, M: PotentialModel<D>>(
    brw: &Brw<'_, D, M>,
    sampler: &InitialSampler<D>,
    phi_t: &dyn PhaseField<D>,
    t0: f64,
    n: usize,
    seed: u64,
) -> Result<Moments> {
    if n < 2 {
        return Err(invalid("inner product needs at least two trees"));
    }
    let values = brw.tree_values(n, seed, |rng| {
        let (q, s) = sampler.sample(rng);
        Ok(s * brw.estimate_tree(q, t0, phi_t, rng)?)
    })?;
    Ok(Welford::from_slice(&values).into())
}

/// Cell-centred tensor lattice over X × K with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeLattice<const D: usize> {
    pub x_box: SupportBox<D>,
    pub k_box: SupportBox<D>,
    pub n: usize,
}

impl<const D: usize> ProbeLattice<D> {
    pub fn new(x_box: SupportBox<D>, k_box: SupportBox<D>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("probe lattice needs at least one point per axis"));
        }
        Ok(Self { x_box, k_box, n })
    }

    pub fn len(&self) -> usize {
        self.n.pow(2 * D as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        let mut v = 1.0;
        for i in 0..D {
            v *= (self.x_box.hi[i] - self.x_box.lo[i]) / self.n as f64;
            v *= (self.k_box.hi[i] - self.k_box.lo[i]) / self.n as f64;
        }
        v
    }

    /// Point `idx` in row-major order (x axes first).
    pub fn point(&self, mut idx: usize) -> PhaseState<D> {
        let mut c = [0usize; 16];
        for a in (0..2 * D).rev() {
            c[a] = idx % self.n;
            idx /= self.n;
        }
        let mut x = [0.0; D];
        let mut k = [0.0; D];
        let h = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / self.n as f64;
        for i in 0..D {
            x[i] = h(self.x_box.lo[i], self.x_box.hi[i], c[i]);
            k[i] = h(self.k_box.lo[i], self.k_box.hi[i], c[D + i]);
        }
        PhaseState { x, k }
    }
}

/// Lattice aggregates of the pointwise estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeStats {
    /// Σ Var X(q)·|cell| ≈ ‖Π(X − φ)²‖₁
    pub l1_variance: f64,
    /// (Σ (mean − reference)²·|cell|)^{1/2}; NaN without a reference
    pub l2_error: f64,
    pub points: usize,
    pub trees_per_point: usize,
}

/// Runs `m` trees at every lattice point. Point p uses the stream family
/// derive_seed(seed, p), trees in order, so the sums are schedule-free.
pub fn lattice_statistics<const D: usize, M: PotentialModel<D>>(
    brw: &Brw<'_, D, M>,
    lattice: &ProbeLattice<D>,
    t0: f64,
    phi_t: &dyn PhaseField<D>,
    m: usize,
    seed: u64,
    reference: Option<&dyn PhaseField<D>>,
) -> Result<LatticeStats> {
    if m < 2 {
        return Err(invalid("lattice statistics need at least two trees per point"));
    }
    let per_point: Vec<(f64, f64)> = (0..lattice.len())
        .into_par_iter()
        .map(|p| {
            let q = lattice.point(p);
            let s = derive_seed(seed, p as u64);
            let mut w = Welford::new();
            for i in 0..m as u64 {
                let mut rng = tree_rng(s, i);
                w.push(brw.estimate_tree(q, t0, phi_t, &mut rng)?);
            }
            let err = reference.map_or(f64::NAN, |r| (w.mean - r.eval(&q)).powi(2));
            Ok((w.variance(), err))
        })
        .collect::<Result<_>>()?;
    let vol = lattice.cell_volume();
    let mut var = 0.0;
    let mut err = 0.0;
    for (v, e) in &per_point {
        var += v;
        err += e;
    }
    Ok(LatticeStats {
        l1_variance: var * vol,
        l2_error: (err * vol).sqrt(),
        points: per_point.len(),
        trees_per_point: m,
    })
}

/// One CSV row of the variance series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub variant: Variant,
    pub gamma0: f64,
    /// NaN for the HJD variants
    pub lambda0: f64,
    pub n_trees: usize,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub l2_error: f64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "t,variant,gamma0,lambda0,n_trees,mean,variance,stderr,l2_error,wall_ms";

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

impl SeriesRow {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_float(self.t),
            self.variant,
            fmt_float(self.gamma0),
            fmt_float(self.lambda0),
            self.n_trees,
            fmt_float(self.mean),
            fmt_float(self.variance),
            fmt_float(self.stderr),
            fmt_float(self.l2_error),
            fmt_float(self.wall_ms),
        )
        .expect("writing to a String");
        s
    }

    /// Parses a line written by [`Self::csv_line`].
    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 10 {
            return Err(crate::Error::Format(format!("expected 10 CSV fields, got {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| crate::Error::Format(format!("bad number '{s}'")))
        };
        Ok(Self {
            t: num(f[0])?,
            variant: f[1].parse()?,
            gamma0: num(f[2])?,
            lambda0: num(f[3])?,
            n_trees: f[4]
                .parse()
                .map_err(|_| crate::Error::Format(format!("bad count '{}'", f[4])))?,
            mean: num(f[5])?,
            variance: num(f[6])?,
            stderr: num(f[7])?,
            l2_error: num(f[8])?,
            wall_ms: num(f[9])?,
        })
    }
}

/// Inputs of a series run shared by every cell.
#[derive(Clone, Debug)]
pub struct SeriesSpec<const D: usize> {
    pub probe_times: Vec<f64>,
    pub n_trees: usize,
    pub seed: u64,
    /// lattice and trees per lattice point for the L²-error column
    pub lattice: Option<(ProbeLattice<D>, usize)>,
}

/// Reference field at one probe time.
pub type ReferenceAt<'r, const D: usize> = (f64, &'r dyn PhaseField<D>);

/// Rows for one configured walk, one per probe time; each row is handed to
/// `sink` as soon as it is complete.
pub fn variance_series<const D: usize, M: PotentialModel<D>>(
    brw: &Brw<'_, D, M>,
    lambda0: f64,
    sampler: &InitialSampler<D>,
    phi_t: &dyn PhaseField<D>,
    spec: &SeriesSpec<D>,
    references: &[ReferenceAt<'_, D>],
    sink: &mut dyn FnMut(&SeriesRow) -> Result<()>,
) -> Result<Vec<SeriesRow>> {
    let mut rows = Vec::with_capacity(spec.probe_times.len());
    for &t in &spec.probe_times {
        if !(0.0..=brw.horizon).contains(&t) {
            return Err(invalid(format!("probe time {t} outside [0, {}]", brw.horizon)));
        }
        let start = Instant::now();
        // same stream for every cell: matched initial states across variants
        let seed = derive_seed(spec.seed, label_of("inner-product"));
        let mo = inner_product_estimate(brw, sampler, phi_t, t, spec.n_trees, seed)?;
        let l2_error = match (&spec.lattice, references.iter().find(|(rt, _)| (rt - t).abs() < 1e-12)) {
            (Some((lat, m)), Some((_, r))) => {
                let s = derive_seed(spec.seed, label_of("lattice"));
                lattice_statistics(brw, lat, t, phi_t, *m, s, Some(*r))?.l2_error
            }
            _ => f64::NAN,
        };
        let row = SeriesRow {
            t,
            variant: brw.variant,
            gamma0: brw.gamma0,
            lambda0: if brw.variant.spa() { lambda0 } else { f64::NAN },
            n_trees: spec.n_trees,
            mean: mo.mean,
            variance: mo.variance,
            stderr: mo.stderr,
            l2_error,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        sink(&row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the header and rows to `w`.
pub fn write_csv(w: &mut dyn Write, rows: &[SeriesRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Which variance the bound controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// ‖Π(X_t − φ(t))²‖₁ over phase space
    Pointwise,
    /// Var(s·X_t) under the initial law
    InnerProduct,
}

/// Ingredients of the variance bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub xi_breve: f64,
    pub gamma0: f64,
    /// Young proxy for K_V
    pub k_v: f64,
    pub alpha_star: Option<f64>,
    /// ‖φ_T‖₂²
    pub phi_t_norm_sq: f64,
    /// ‖φ(t)‖₂²; the pointwise bounds subtract it
    pub phi_norm_sq: f64,
    /// bound on |s|
    pub m_s: f64,
    /// ‖f_I‖_∞
    pub f_i_sup: f64,
}

/// Right-hand side of the variance bound for `variant` with T − t = `tau`.
/// For the stationary-phase variants the bound holds up to a constant.
pub fn theorem_bound(variant: Variant, kind: BoundKind, b: &BoundInputs, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(invalid("T - t must be finite and non-negative"));
    }
    for (name, v) in [
        ("xi_breve", b.xi_breve),
        ("gamma0", b.gamma0),
        ("K_V", b.k_v),
        ("phi_T norm", b.phi_t_norm_sq),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(format!("bound ingredient {name} missing or invalid ({v})")));
        }
    }
    if !(b.gamma0 > 0.0) {
        return Err(invalid("bound needs gamma0 > 0"));
    }
    let (xi, g0, kv) = (b.xi_breve, b.gamma0, b.k_v);
    let gamma1 = 2.0 * kv * g0 + 2.0 * xi * xi;
    let alpha = || {
        b.alpha_star
            .filter(|a| a.is_finite() && *a > 0.0)
            .ok_or_else(|| invalid("bound ingredient alpha_star missing"))
    };
    match kind {
        BoundKind::Pointwise => {
            let growth = match variant {
                Variant::WpHjd => (1.0 + gamma1 / g0 * tau) * (2.0 * kv.max(xi * xi / g0) * tau).exp(),
                Variant::SpHjd => (1.0 + gamma1 / g0 * tau) * (2.0 * xi * tau).exp(),
                Variant::WpSpa => {
                    let a = alpha()?;
                    let gamma2 = a * xi * xi;
                    (1.0 + 4.0 * gamma2 / g0 * tau) * (2.0 * kv.max(a * xi * xi / g0) * tau).exp()
                }
                Variant::SpSpa => {
                    let a = alpha()?;
                    let gamma2 = a * xi * xi;
                    (1.0 + 2.0 * (kv + gamma2 / g0) * tau) * (2.0 * a * xi * tau).exp()
                }
            };
            Ok(growth * b.phi_t_norm_sq - b.phi_norm_sq)
        }
        BoundKind::InnerProduct => {
            if variant.spa() {
                return Err(invalid("no inner-product bound is available for the stationary-phase variants"));
            }
            if !(b.m_s > 0.0) || !(b.f_i_sup > 0.0) {
                return Err(invalid("bound ingredients M_s and sup f_I missing"));
            }
            let rate = if variant.signed() { 2.0 * xi } else { 2.0 * kv.max(xi * xi / g0) };
            Ok(2.0 * b.m_s * b.m_s * b.f_i_sup * (1.0 + (kv + xi * xi / g0) * tau) * (rate * tau).exp() * b.phi_t_norm_sq)
        }
    }
}
