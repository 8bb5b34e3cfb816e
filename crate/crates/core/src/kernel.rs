//! The Wigner kernel V_W, its truncation and Hahn–Jordan split, the
//! normalizing rate ξ(x) = ∫V⁺_{W,R}(x,k)dk, the bounds ξ̆ and α∗, and the
//! jump samplers for the densities V^±_{W,R}(x,·)/ξ(x).
//!
//! Radial symbols ψ(k) = −i·h(|k|) get a fast path: V_W(x,k) =
//! 2^{n+1}h(2|k|)sin(2k·z), so ξ depends on |z| only and is tabulated once.
//! Other two-dimensional models go through a polar lattice.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{dot, norm, PotentialModel};
use crate::quadrature::{adaptive, GaussLegendre, Tolerance};
use crate::tables::{Pchip, RadialTable};
use crate::util::{random_unit_vector, UniformTable};

/// Truncation radius R and the raised-cosine taper χ: 1 on [0,2R], 0 beyond 3R.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub radius: f64,
}

impl Truncation {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("truncation radius must be finite and positive"));
        }
        Ok(Self { radius })
    }

    /// Smallest R with 2K ⊂ B(2R) for the box K = Π[lo_i, hi_i].
    pub fn for_k_box<const D: usize>(lo: &[f64; D], hi: &[f64; D]) -> Result<Self> {
        let mut s = 0.0;
        for i in 0..D {
            let m = lo[i].abs().max(hi[i].abs());
            s += m * m;
        }
        Self::new(s.sqrt())
    }

    #[inline]
    pub fn taper(&self, s: f64) -> f64 {
        let r = self.radius;
        if s <= 2.0 * r {
            1.0
        } else if s >= 3.0 * r {
            0.0
        } else {
            0.5 * (1.0 + (PI * (s - 2.0 * r) / r).cos())
        }
    }

    pub fn support(&self) -> f64 {
        3.0 * self.radius
    }
}

/// Surface area of the unit sphere S^{m} ⊂ R^{m+1}.
pub fn sphere_area(m: usize) -> f64 {
    let p = 0.5 * (m as f64 + 1.0);
    2.0 * PI.powf(p) / libm::tgamma(p)
}

/// V_{W,R}(x,k,t) assembled from ψ in the general complex form. Fails when
/// the imaginary residue exceeds 1e−9, which means ψ is inconsistent with a
/// real potential.
pub fn wigner_kernel<const D: usize, M: PotentialModel<D> + ?Sized>(
    model: &M,
    trunc: &Truncation,
    x: &[f64; D],
    k: &[f64; D],
    t: f64,
) -> Result<f64> {
    let z = model.z(x);
    let mut k2 = [0.0; D];
    let mut mk2 = [0.0; D];
    for i in 0..D {
        k2[i] = 2.0 * k[i];
        mk2[i] = -2.0 * k[i];
    }
    let phase = 2.0 * dot(k, &z);
    let scale = 2f64.powi(D as i32);
    let e = Complex64::from_polar(1.0, phase);
    let a = model.psi(&k2, t) * e * scale;
    let b = model.psi(&mk2, t) * e.conj() * scale;
    let v = a - b;
    if v.im.abs() > 1e-9 * (1.0 + a.norm() + b.norm()) {
        return Err(Error::Model(format!(
            "Wigner kernel has imaginary residue {:e} at k = {k:?}",
            v.im
        )));
    }
    Ok(v.re * trunc.taper(norm(k)))
}

/// Which Hahn–Jordan part a jump is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Positive,
    Negative,
}

/// ∫_{S^{D−1}} |sin(a σ₁)| dσ, by Gauss–Legendre between the kinks.
pub fn sphere_abs_sin(dim: usize, a: f64) -> f64 {
    let a = a.abs();
    if dim == 1 {
        return 2.0 * a.sin().abs();
    }
    if a == 0.0 {
        return 0.0;
    }
    // θ ∈ [0, π/2] with σ₁ = cos θ; kinks where a cos θ = jπ
    let mut breaks = vec![0.0, 0.5 * PI];
    let jmax = (a / PI).floor() as usize;
    for j in 1..=jmax {
        let c = j as f64 * PI / a;
        if c < 1.0 {
            breaks.push(c.acos());
        }
    }
    breaks.sort_by(f64::total_cmp);
    let gl = gl16();
    let p = dim as i32 - 2;
    let mut s = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            s += gl.integrate(w[0], w[1], |th| (a * th.cos()).sin().abs() * th.sin().powi(p));
        }
    }
    2.0 * sphere_area(dim - 2) * s
}

fn gl16() -> &'static GaussLegendre {
    static GL: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    GL.get_or_init(|| GaussLegendre::new(16))
}

fn gl10() -> &'static GaussLegendre {
    static GL: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    GL.get_or_init(|| GaussLegendre::new(10))
}

const XI_DIRECT_BELOW: f64 = 0.3;

/// Resolution knobs for the kernel tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelResolution {
    /// knots of the radial envelope CDF
    pub radial_knots: usize,
    /// knots of the projected envelope G(s)
    pub abel_knots: usize,
    /// spacing of the ξ(|z|) table
    pub xi_spacing: f64,
    /// ξ is tabulated on [0, z_max]; beyond it is evaluated directly
    pub z_max: f64,
}

impl Default for KernelResolution {
    fn default() -> Self {
        Self {
            radial_knots: 4096,
            abel_knots: 16384,
            xi_spacing: 0.01,
            z_max: 24.0,
        }
    }
}

/// Precomputed tables for a radial symbol.
#[derive(Clone, Debug)]
pub struct RadialTables {
    /// jump-radius law with density F(r)·r^{n−1}, F(r) = 2^{n+1}|h(2r)|χ(r)
    pub envelope: RadialTable,
    /// ∫F dk over R^n
    pub envelope_mass: f64,
    /// G(s) = ∫_{R^{n−1}} F(√(s²+|t|²)) dt
    pub abel: Pchip,
    /// ξ as a function of |z|
    pub xi: UniformTable,
    /// radii (in the jump variable) where F has kinks
    pub kinks: Vec<f64>,
}

/// Sampler and rate evaluator bound to one model and truncation.
pub struct Kernel<const D: usize, M: PotentialModel<D>> {
    pub model: M,
    pub trunc: Truncation,
    pub resolution: KernelResolution,
    radial: Option<RadialTables>,
    lattice: LatticeSpec,
}

/// Polar lattice used for models without a radial fast path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub n_r: usize,
    pub n_theta: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            n_r: 400,
            n_theta: 256,
        }
    }
}

impl<const D: usize, M: PotentialModel<D>> Kernel<D, M> {
    pub fn new(model: M, trunc: Truncation) -> Result<Self> {
        Self::with_resolution(model, trunc, KernelResolution::default())
    }

    pub fn with_resolution(model: M, trunc: Truncation, resolution: KernelResolution) -> Result<Self> {
        if resolution.xi_spacing <= 0.0 || resolution.z_max <= 0.0 {
            return Err(invalid("xi table spacing and range must be positive"));
        }
        let radial = if model.radial_profile(0.0, 0.0).is_some() {
            Some(build_radial_tables::<D, M>(&model, &trunc, &resolution)?)
        } else {
            if D != 2 {
                return Err(invalid(
                    "non-radial symbols are only supported in two dimensions",
                ));
            }
            None
        };
        Ok(Self {
            model,
            trunc,
            resolution,
            radial,
            lattice: LatticeSpec::default(),
        })
    }

    /// Rebuilds a kernel from cached tables (see [`crate::cache`]).
    pub fn from_tables(
        model: M,
        trunc: Truncation,
        resolution: KernelResolution,
        tables: RadialTables,
    ) -> Self {
        Self {
            model,
            trunc,
            resolution,
            radial: Some(tables),
            lattice: LatticeSpec::default(),
        }
    }

    pub fn with_lattice(mut self, lattice: LatticeSpec) -> Self {
        self.lattice = lattice;
        self
    }

    pub fn radial_tables(&self) -> Option<&RadialTables> {
        self.radial.as_ref()
    }

    /// V_{W,R}(x,k,t).
    #[inline]
    pub fn wigner(&self, x: &[f64; D], k: &[f64; D], t: f64) -> f64 {
        match self.model.radial_profile(0.0, t) {
            Some(_) => {
                let kn = norm(k);
                let h = self.model.radial_profile(2.0 * kn, t).unwrap_or(0.0);
                let z = self.model.z(x);
                2f64.powi(D as i32 + 1) * h * (2.0 * dot(k, &z)).sin() * self.trunc.taper(kn)
            }
            None => wigner_kernel(&self.model, &self.trunc, x, k, t).unwrap_or(f64::NAN),
        }
    }

    /// Radial envelope F(r) = 2^{n+1}Ψ(2r)χ(r) ≥ |V_{W,R}(x,k)| for |k| = r.
    pub fn envelope(&self, r: f64, t: f64) -> f64 {
        2f64.powi(D as i32 + 1) * self.model.envelope(2.0 * r, t) * self.trunc.taper(r)
    }

    /// ξ(x,t) = ∫V⁺_{W,R}(x,k,t)dk; the value used in all branch weights.
    #[inline]
    pub fn xi(&self, x: &[f64; D], t: f64) -> f64 {
        match &self.radial {
            Some(tab) => {
                let zn = norm(&self.model.z(x));
                // near the centre the cubic table is off by up to 1e-4 relative
                if (XI_DIRECT_BELOW..=self.resolution.z_max).contains(&zn) {
                    tab.xi.eval(zn).max(0.0)
                } else {
                    xi_from_abel(&tab.abel, &tab.kinks, self.trunc.support(), zn)
                }
            }
            None => self.lattice_cells(x, t).1,
        }
    }

    /// ξ for a radial model at displacement norm |z|, without the table.
    pub fn xi_radial_direct(&self, z_norm: f64) -> Option<f64> {
        self.radial
            .as_ref()
            .map(|tab| xi_from_abel(&tab.abel, &tab.kinks, self.trunc.support(), z_norm))
    }

    /// ½∫|V_{W,R}| by adaptive Gauss–Kronrod in radius and the trapezoid rule
    /// in angle (two dimensions). Independent of the tables.
    pub fn xi_polar_quadrature(&self, x: &[f64; D], t: f64, n_theta: usize) -> Result<f64> {
        if D != 2 {
            return Err(invalid("polar quadrature is implemented for two dimensions"));
        }
        let mut breaks = vec![0.0, 2.0 * self.trunc.radius, self.trunc.support()];
        breaks.extend(self.model.envelope_breaks().iter().map(|b| 0.5 * b));
        let tol = Tolerance {
            rel: 1e-8,
            abs: 1e-12,
            max_pieces: 50_000,
        };
        let (v, _) = adaptive("xi", &breaks, tol, |r| {
            let mut s = 0.0;
            for j in 0..n_theta {
                let th = 2.0 * PI * j as f64 / n_theta as f64;
                let mut k = [0.0; D];
                k[0] = r * th.cos();
                k[1] = r * th.sin();
                s += self.wigner(x, &k, t).abs();
            }
            0.5 * r * s * 2.0 * PI / n_theta as f64
        })?;
        Ok(v)
    }

    /// ∫V⁺_{W,R}(x,k)·1{2|k| < λ0/|z(x)|} dk.
    pub fn low_frequency_mass(&self, x: &[f64; D], t: f64, lambda0: f64) -> Result<f64> {
        let zn = norm(&self.model.z(x));
        if zn == 0.0 {
            // ξ vanishes at z = 0
            return Ok(0.0);
        }
        let cap = (0.5 * lambda0 / zn).min(self.trunc.support());
        if cap <= 0.0 {
            return Ok(0.0);
        }
        if self.radial.is_none() {
            return Ok(self.lattice_cells_capped(x, t, cap).1);
        }
        let mut breaks = vec![0.0, cap];
        for b in self.model.envelope_breaks() {
            breaks.push((0.5 * b).min(cap));
        }
        breaks.push((2.0 * self.trunc.radius).min(cap));
        let (v, _) = adaptive("low-frequency mass", &breaks, Tolerance::rel(1e-9).with_abs(1e-14), |r| {
            0.5 * self.envelope(r, t) * r.powi(D as i32 - 1) * sphere_abs_sin(D, 2.0 * r * zn)
        })?;
        Ok(v)
    }

    /// Draws Δk from V^±_{W,R}(x,·,t)/ξ(x,t).
    pub fn sample_jump<R: Rng + ?Sized>(
        &self,
        x: &[f64; D],
        t: f64,
        part: Part,
        rng: &mut R,
    ) -> Result<[f64; D]> {
        let xi = self.xi(x, t);
        if !(xi > 0.0) {
            return Err(invalid("cannot sample a jump where xi = 0"));
        }
        let dk = match &self.radial {
            Some(tab) => {
                let z = self.model.z(x);
                let mut tries = 0u64;
                loop {
                    tries += 1;
                    if tries > 100_000_000 {
                        return Err(Error::Invariant("rejection sampler stalled".into()));
                    }
                    let r = tab.envelope.sample(rng);
                    let sigma: [f64; D] = random_unit_vector(rng);
                    let h = self.model.radial_profile(2.0 * r, t).unwrap_or(0.0);
                    let s = (2.0 * r * dot(&sigma, &z)).sin() * h.signum();
                    if s > 0.0 && rng.random::<f64>() < s {
                        let mut dk = [0.0; D];
                        for i in 0..D {
                            dk[i] = r * sigma[i];
                        }
                        break dk;
                    }
                }
            }
            None => self.sample_lattice(x, t, rng),
        };
        Ok(match part {
            Part::Positive => dk,
            Part::Negative => dk.map(|v| -v),
        })
    }

    /// Bounds over a grid of the support box. `grid` points per axis.
    pub fn bounds(&self, support: &SupportBox<D>, grid: usize, t_grid: &[f64]) -> Result<XiBreve<D>> {
        xi_breve(self, support, grid, t_grid)
    }

    fn lattice_edges(&self) -> (Vec<f64>, Vec<f64>) {
        let nr = self.lattice.n_r;
        let nt = self.lattice.n_theta;
        let rmax = self.trunc.support();
        let re: Vec<f64> = (0..=nr).map(|i| rmax * i as f64 / nr as f64).collect();
        let te: Vec<f64> = (0..=nt).map(|j| 2.0 * PI * j as f64 / nt as f64).collect();
        (re, te)
    }

    /// Cell masses of V⁺ on the polar lattice and their sum.
    fn lattice_cells(&self, x: &[f64; D], t: f64) -> (Vec<f64>, f64) {
        self.lattice_cells_capped(x, t, f64::INFINITY)
    }

    fn lattice_cells_capped(&self, x: &[f64; D], t: f64, cap: f64) -> (Vec<f64>, f64) {
        let (re, te) = self.lattice_edges();
        let mut cells = Vec::with_capacity((re.len() - 1) * (te.len() - 1));
        let mut total = 0.0;
        for i in 0..re.len() - 1 {
            let rm = 0.5 * (re[i] + re[i + 1]);
            let area_r = 0.5 * (re[i + 1].powi(2) - re[i].powi(2));
            for j in 0..te.len() - 1 {
                let tm = 0.5 * (te[j] + te[j + 1]);
                let mut k = [0.0; D];
                k[0] = rm * tm.cos();
                k[1] = rm * tm.sin();
                let v = if rm < cap {
                    self.wigner(x, &k, t).max(0.0) * area_r * (te[j + 1] - te[j])
                } else {
                    0.0
                };
                total += v;
                cells.push(v);
            }
        }
        (cells, total)
    }

    fn sample_lattice<R: Rng + ?Sized>(&self, x: &[f64; D], t: f64, rng: &mut R) -> [f64; D] {
        let (cells, total) = self.lattice_cells(x, t);
        let (re, te) = self.lattice_edges();
        let nt = te.len() - 1;
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut idx = cells.len() - 1;
        for (c, m) in cells.iter().enumerate() {
            acc += m;
            if acc > u {
                idx = c;
                break;
            }
        }
        let (i, j) = (idx / nt, idx % nt);
        let r2 = re[i].powi(2) + rng.random::<f64>() * (re[i + 1].powi(2) - re[i].powi(2));
        let th = te[j] + rng.random::<f64>() * (te[j + 1] - te[j]);
        let r = r2.sqrt();
        let mut dk = [0.0; D];
        dk[0] = r * th.cos();
        dk[1] = r * th.sin();
        dk
    }
}

fn build_radial_tables<const D: usize, M: PotentialModel<D>>(
    model: &M,
    trunc: &Truncation,
    res: &KernelResolution,
) -> Result<RadialTables> {
    let support = trunc.support();
    let scale = 2f64.powi(D as i32 + 1);
    let f = |r: f64| scale * model.envelope(2.0 * r, 0.0) * trunc.taper(r);
    let mut kinks: Vec<f64> = model
        .envelope_breaks()
        .iter()
        .map(|b| 0.5 * b)
        .filter(|&b| b > 0.0 && b < support)
        .collect();
    kinks.push(2.0 * trunc.radius);
    kinks.sort_by(f64::total_cmp);

    let envelope = RadialTable::build(support, res.radial_knots, &kinks, |r| f(r) * r.powi(D as i32 - 1))?;
    let envelope_mass = sphere_area(D - 1) * envelope.mass;

    // projected envelope on uniform knots plus the kinks
    let n = res.abel_knots.max(64);
    let mut s_knots: Vec<f64> = (0..=n).map(|i| support * i as f64 / n as f64).collect();
    s_knots.extend(kinks.iter().copied());
    s_knots.sort_by(f64::total_cmp);
    s_knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * support);
    let mut g = Vec::with_capacity(s_knots.len());
    for &s in &s_knots {
        g.push(abel_projection::<D>(&f, s, support, &kinks)?);
    }
    let abel = Pchip::new(s_knots, g)?;

    let m = (res.z_max / res.xi_spacing).ceil() as usize;
    let dz = res.z_max / m as f64;
    let values: Vec<f64> = (0..=m)
        .map(|i| xi_from_abel(&abel, &kinks, support, i as f64 * dz))
        .collect();
    let xi = UniformTable::new(0.0, dz, values)?;
    Ok(RadialTables {
        envelope,
        envelope_mass,
        abel,
        xi,
        kinks,
    })
}

/// G(s) = |S^{n−2}| ∫_0^{√(S²−s²)} F(√(s²+t²)) t^{n−2} dt.
fn abel_projection<const D: usize>(f: &impl Fn(f64) -> f64, s: f64, support: f64, kinks: &[f64]) -> Result<f64> {
    if D == 1 {
        return Ok(f(s));
    }
    if s >= support {
        return Ok(0.0);
    }
    let tmax = (support * support - s * s).sqrt();
    let mut breaks = vec![0.0, tmax];
    for &b in kinks {
        if b > s {
            breaks.push((b * b - s * s).sqrt());
        }
    }
    let p = D as i32 - 2;
    let (v, _) = adaptive("envelope projection", &breaks, Tolerance::rel(1e-12).with_abs(1e-16), |t| {
        f((s * s + t * t).sqrt()) * t.powi(p)
    })?;
    Ok(sphere_area(D - 2) * v)
}

/// ξ(|z|) = ½∫F(|k|)|sin(2k₁|z|)|dk = ∫_0^{3R} |sin(2s|z|)| G(s) ds.
fn xi_from_abel(abel: &Pchip, kinks: &[f64], support: f64, zn: f64) -> f64 {
    if zn == 0.0 {
        return 0.0;
    }
    let mut breaks = vec![0.0, support];
    breaks.extend(kinks.iter().copied().filter(|&k| k < support));
    let half = PI / (2.0 * zn);
    let jmax = (support / half).floor() as usize;
    for j in 1..=jmax {
        breaks.push(j as f64 * half);
    }
    breaks.sort_by(f64::total_cmp);
    let gl = gl10();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            // G decays over decades; short pieces keep the rule accurate
            let m = ((w[1] - w[0]) / 0.25).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / m as f64;
            for i in 0..m {
                let a = w[0] + h * i as f64;
                total += gl.integrate(a, a + h, |s| (2.0 * s * zn).sin().abs() * abel.eval(s));
            }
        }
    }
    total
}

/// An axis-aligned box Π[lo_i, hi_i].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportBox<const D: usize> {
    pub lo: [f64; D],
    pub hi: [f64; D],
}

impl<const D: usize> SupportBox<D> {
    pub fn new(lo: [f64; D], hi: [f64; D]) -> Result<Self> {
        for i in 0..D {
            if !(lo[i] <= hi[i]) || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(invalid("support box needs finite lo <= hi on every axis"));
            }
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn contains(&self, p: &[f64; D]) -> bool {
        (0..D).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    /// Tensor grid with `n` points per axis (endpoints included; n = 1 gives
    /// the box centre).
    pub fn grid(&self, n: usize) -> Vec<[f64; D]> {
        let axes: Vec<Vec<f64>> = (0..D)
            .map(|i| {
                if n <= 1 {
                    vec![0.5 * (self.lo[i] + self.hi[i])]
                } else {
                    (0..n)
                        .map(|j| self.lo[i] + (self.hi[i] - self.lo[i]) * j as f64 / (n - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let total = axes.iter().map(|a| a.len()).product::<usize>();
        let mut out = Vec::with_capacity(total);
        for idx in 0..total {
            let mut p = [0.0; D];
            let mut rem = idx;
            for i in (0..D).rev() {
                let len = axes[i].len();
                p[i] = axes[i][rem % len];
                rem /= len;
            }
            out.push(p);
        }
        out
    }
}

/// ξ̆ with the maximizing point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiBreve<const D: usize> {
    pub value: f64,
    pub argmax: [f64; D],
    pub t_argmax: f64,
}

/// max of ξ over a `grid`^n lattice of the support and the given times.
pub fn xi_breve<const D: usize, M: PotentialModel<D>>(
    kernel: &Kernel<D, M>,
    support: &SupportBox<D>,
    grid: usize,
    t_grid: &[f64],
) -> Result<XiBreve<D>> {
    if grid == 0 {
        return Err(invalid("empty support grid"));
    }
    let times: &[f64] = if t_grid.is_empty() { &[0.0] } else { t_grid };
    let mut best = XiBreve {
        value: f64::NEG_INFINITY,
        argmax: support.lo,
        t_argmax: times[0],
    };
    for p in support.grid(grid) {
        for &t in times {
            let v = kernel.xi(&p, t);
            if v > best.value {
                best = XiBreve {
                    value: v,
                    argmax: p,
                    t_argmax: t,
                };
            }
        }
    }
    Ok(best)
}

/// α∗ = max over the support grid of the low-frequency V⁺ mass, over ξ̆.
/// Fails (never clamps) when the ratio reaches 1.
pub fn alpha_star<const D: usize, M: PotentialModel<D>>(
    kernel: &Kernel<D, M>,
    support: &SupportBox<D>,
    grid: usize,
    lambda0: f64,
    xi_breve: f64,
) -> Result<f64> {
    if !(lambda0 > 1.0) {
        return Err(Error::Feasibility(format!("lambda0 must exceed 1, got {lambda0}")));
    }
    if !(xi_breve > 0.0) {
        return Err(invalid("alpha_star needs a positive xi_breve"));
    }
    let mut best: f64 = 0.0;
    let mut seen = std::collections::HashMap::new();
    for p in support.grid(grid) {
        let zn = norm(&kernel.model.z(&p));
        // radial models: the mass depends on |z| only
        let key = if kernel.radial_tables().is_some() {
            Some(zn.to_bits())
        } else {
            None
        };
        let v = match key.and_then(|k| seen.get(&k).copied()) {
            Some(v) => v,
            None => {
                let v = kernel.low_frequency_mass(&p, 0.0, lambda0)?;
                if let Some(k) = key {
                    seen.insert(k, v);
                }
                v
            }
        };
        best = best.max(v);
    }
    let a = best / xi_breve;
    if a >= 1.0 {
        return Err(Error::Feasibility(format!(
            "alpha_star = {a} >= 1: assumption A4 fails for lambda0 = {lambda0} on this support"
        )));
    }
    Ok(a)
}

/// Computed bounds for one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBounds {
    pub xi_breve: f64,
    pub gamma0: f64,
    pub alpha_star: Option<f64>,
    /// ‖V_{W,R}(x,·)‖_{L¹} maximized over the support, i.e. 2ξ̆; a proxy for
    /// the operator norm K_V.
    pub k_v_proxy: f64,
}

impl KernelBounds {
    pub fn new(xi_breve: f64, gamma0: f64, alpha_star: Option<f64>) -> Result<Self> {
        if !(gamma0 > 0.0) || gamma0 < xi_breve {
            return Err(Error::Feasibility(format!(
                "gamma0 < xi_breve ({gamma0} < {xi_breve})"
            )));
        }
        Ok(Self {
            xi_breve,
            gamma0,
            alpha_star,
            k_v_proxy: 2.0 * xi_breve,
        })
    }
}
