//! Deterministic reference for the two-dimensional backward equation on a
//! tensor phase-space grid.
//!
//! Strang splitting: collision half step, exact spectral advection along x,
//! collision half step. The collision acts diagonally in the variable η
//! conjugate to k: the truncated kernel has the exact symbol
//! m(x,η) = i[g(|2z−η|) − g(|2z+η|)], g(w) = 8π∫h(2r)χ(r)r J0(rw)dr, so the
//! periodic mode applies e^{s·m} exactly. The restricted mode zero-pads k,
//! applies 1_K after every operator evaluation (as the particles do) and
//! integrates with RK4.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;
use crate::model::{norm, PhaseState, PotentialModel};
use crate::quadrature::GaussLegendre;
use crate::util::UniformTable;

/// Periodic uniform axis: points lo + i·(hi−lo)/n, i < n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("axis needs finite lo < hi"));
        }
        if n < 16 {
            return Err(invalid(format!("grid coarser than 16 points per axis ({n})")));
        }
        Ok(Self { lo, hi, n })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.lo + self.h() * i as f64
    }

    pub fn period(&self) -> f64 {
        self.hi - self.lo
    }

    /// Angular frequencies in FFT order; the Nyquist entry is reported as
    /// positive.
    pub fn frequencies(&self, n_fft: usize) -> Vec<f64> {
        let l = self.h() * n_fft as f64;
        (0..n_fft)
            .map(|j| {
                let jj = if j <= n_fft / 2 { j as f64 } else { j as f64 - n_fft as f64 };
                2.0 * PI * jj / l
            })
            .collect()
    }

    /// Index of the grid node at `v`, if `v` is one.
    pub fn node_of(&self, v: f64) -> Option<usize> {
        let s = (v - self.lo) / self.h();
        let i = s.round();
        if (s - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.n {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Phase-space grid: two x axes then two k axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseGrid {
    pub x: [Axis; 2],
    pub k: [Axis; 2],
}

impl PhaseGrid {
    pub fn new(x: [Axis; 2], k: [Axis; 2]) -> Self {
        Self { x, k }
    }

    /// x ∈ [2,18]², k ∈ [−4,4]², `n` points per axis.
    pub fn experiment(n: usize) -> Result<Self> {
        let ax = Axis::new(2.0, 18.0, n)?;
        let ak = Axis::new(-4.0, 4.0, n)?;
        Ok(Self::new([ax, ax], [ak, ak]))
    }

    pub fn len(&self) -> usize {
        self.x[0].n * self.x[1].n * self.k[0].n * self.k[1].n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k_slice_len(&self) -> usize {
        self.k[0].n * self.k[1].n
    }

    pub fn cell_volume(&self) -> f64 {
        self.x[0].h() * self.x[1].h() * self.k[0].h() * self.k[1].h()
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> usize {
        ((i1 * self.x[1].n + i2) * self.k[0].n + j1) * self.k[1].n + j2
    }

    pub fn state(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> PhaseState<2> {
        PhaseState {
            x: [self.x[0].point(i1), self.x[1].point(i2)],
            k: [self.k[0].point(j1), self.k[1].point(j2)],
        }
    }

    /// Grid indices of `q` when it is a node.
    pub fn node_of(&self, q: &PhaseState<2>) -> Option<[usize; 4]> {
        Some([
            self.x[0].node_of(q.x[0])?,
            self.x[1].node_of(q.x[1])?,
            self.k[0].node_of(q.k[0])?,
            self.k[1].node_of(q.k[1])?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: PhaseGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: PhaseGrid, f: impl Fn(&PhaseState<2>) -> f64 + Sync) -> Self {
        let nk = grid.k_slice_len();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(nk).enumerate().for_each(|(ix, chunk)| {
            let i1 = ix / grid.x[1].n;
            let i2 = ix % grid.x[1].n;
            for j1 in 0..grid.k[0].n {
                for j2 in 0..grid.k[1].n {
                    chunk[j1 * grid.k[1].n + j2] = f(&grid.state(i1, i2, j1, j2));
                }
            }
        });
        Self { grid, values }
    }

    pub fn at(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> f64 {
        self.values[self.grid.index(i1, i2, j1, j2)]
    }

    /// Σ a·b·(cell volume).
    pub fn inner(&self, other: &GridField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Value at `q`: exact at nodes, periodic 4-point Lagrange otherwise.
    pub fn eval(&self, q: &PhaseState<2>) -> f64 {
        if let Some([a, b, c, d]) = self.grid.node_of(q) {
            return self.at(a, b, c, d);
        }
        let axes = [self.grid.x[0], self.grid.x[1], self.grid.k[0], self.grid.k[1]];
        let coords = [q.x[0], q.x[1], q.k[0], q.k[1]];
        let mut idx = [[0usize; 4]; 4];
        let mut wts = [[0.0; 4]; 4];
        for d in 0..4 {
            let s = (coords[d] - axes[d].lo) / axes[d].h();
            let base = s.floor();
            let u = s - base;
            let n = axes[d].n as i64;
            for m in 0..4 {
                let i = (base as i64 - 1 + m as i64).rem_euclid(n);
                idx[d][m] = i as usize;
            }
            wts[d] = [
                -u * (u - 1.0) * (u - 2.0) / 6.0,
                (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
                -(u + 1.0) * u * (u - 2.0) / 2.0,
                (u + 1.0) * u * (u - 1.0) / 6.0,
            ];
        }
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let wab = wts[0][a] * wts[1][b];
                for c in 0..4 {
                    let wabc = wab * wts[2][c];
                    for d in 0..4 {
                        s += wabc * wts[3][d] * self.at(idx[0][a], idx[1][b], idx[2][c], idx[3][d]);
                    }
                }
            }
        }
        s
    }

    /// Flat binary snapshot plus a `.meta` sidecar with `key = value` lines.
    pub fn write_snapshot(&self, path: &Path, meta: &[(&str, String)]) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(self.values.len() * 8 + 128);
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        let axes = [self.grid.x[0], self.grid.x[1], self.grid.k[0], self.grid.k[1]];
        for a in &axes {
            buf.extend_from_slice(&(a.n as u64).to_le_bytes());
        }
        for a in &axes {
            buf.extend_from_slice(&a.lo.to_le_bytes());
            buf.extend_from_slice(&a.hi.to_le_bytes());
        }
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let mut text = String::from("format = wbrw-field\nversion = 1\nn = 2\n");
        for (i, a) in axes.iter().enumerate() {
            text.push_str(&format!("axis{i} = {} {} {}\n", a.n, a.lo, a.hi));
        }
        for (k, v) in meta {
            text.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path.with_extension("meta"), text)?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut rd = ByteReader { b: &bytes, pos: 0 };
        if rd.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a field snapshot".into()));
        }
        let version = u32::from_le_bytes(rd.take(4)?.try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let n = u32::from_le_bytes(rd.take(4)?.try_into().expect("4 bytes"));
        if n != 2 {
            return Err(Error::Format(format!("snapshot dimension {n} unsupported")));
        }
        let mut sizes = [0usize; 4];
        for s in sizes.iter_mut() {
            *s = rd.u64()? as usize;
        }
        let mut axes = Vec::with_capacity(4);
        for s in sizes {
            let lo = rd.f64()?;
            let hi = rd.f64()?;
            axes.push(Axis::new(lo, hi, s).map_err(|e| Error::Format(e.to_string()))?);
        }
        let grid = PhaseGrid::new([axes[0], axes[1]], [axes[2], axes[3]]);
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(rd.f64()?);
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in snapshot".into()));
        }
        Ok(Self { grid, values })
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"WBRWFLD\0";
const SNAPSHOT_VERSION: u32 = 1;

struct ByteReader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CollisionMode {
    Full,
    /// low-frequency kernel plus stationary-phase high part
    Spa { lambda0: f64, z_min: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KBoundary {
    /// periodic in k, exact exponential collision
    Periodic,
    /// zero-padded k with the 1_K restriction, RK4 collision
    Restricted,
}

/// Integrals of a family f_j(r), j on a uniform grid, over [0, c] or
/// [c, L] for any c, from per-piece prefix sums of a composite
/// Gauss–Legendre rule.
struct PrefixRule {
    edges: Vec<f64>,
    gl: GaussLegendre,
    x0: f64,
    dx: f64,
    n: usize,
    /// prefix[j·(P+1) + p] = ∫_0^{edges[p]} f_j
    prefix: Vec<f64>,
}

impl PrefixRule {
    /// `f(x_j, r)`; pieces no longer than `max_piece`, `kinks` added as edges.
    fn build(
        length: f64,
        kinks: &[f64],
        max_piece: f64,
        x0: f64,
        dx: f64,
        n: usize,
        f: &(dyn Fn(f64, f64) -> f64 + Sync),
    ) -> Self {
        let mut cuts: Vec<f64> = vec![0.0, length];
        cuts.extend(kinks.iter().copied().filter(|&k| k > 0.0 && k < length));
        cuts.sort_by(f64::total_cmp);
        let mut edges = vec![0.0];
        for w in cuts.windows(2) {
            let m = ((w[1] - w[0]) / max_piece).ceil().max(1.0) as usize;
            for i in 1..=m {
                edges.push(w[0] + (w[1] - w[0]) * i as f64 / m as f64);
            }
        }
        let gl = GaussLegendre::new(12);
        let np = edges.len();
        let mut prefix = vec![0.0; n * np];
        prefix.par_chunks_mut(np).enumerate().for_each(|(j, row)| {
            let x = x0 + dx * j as f64;
            let mut acc = 0.0;
            for p in 1..np {
                acc += gl.integrate(edges[p - 1], edges[p], |r| f(x, r));
                row[p] = acc;
            }
        });
        Self {
            edges,
            gl,
            x0,
            dx,
            n,
            prefix,
        }
    }

    /// ∫_0^c f_j for every j.
    fn head(&self, c: f64, f: &(dyn Fn(f64, f64) -> f64 + Sync)) -> Vec<f64> {
        let np = self.edges.len();
        let c = c.clamp(0.0, self.edges[np - 1]);
        let p = self.edges.partition_point(|&e| e <= c).clamp(1, np - 1) - 1;
        let a = self.edges[p];
        (0..self.n)
            .into_par_iter()
            .map(|j| {
                let x = self.x0 + self.dx * j as f64;
                let part = if c > a { self.gl.integrate(a, c, |r| f(x, r)) } else { 0.0 };
                self.prefix[j * np + p] + part
            })
            .collect()
    }

    fn total(&self, j: usize) -> f64 {
        let np = self.edges.len();
        self.prefix[j * np + np - 1]
    }
}

/// Radial profile with a zero default for non-radial models.
fn profile<M: PotentialModel<2>>(kernel: &Kernel<2, M>, r: f64) -> f64 {
    kernel.model.radial_profile(r, 0.0).unwrap_or(0.0)
}

/// Symbol of the jump operator L = −Θ for one displacement z.
pub struct Symbol {
    full: Arc<UniformTable>,
    low: Option<Arc<UniformTable>>,
    /// F_ρ(ω) = ∫_ρ^{3R} h(r)χ(r)√r cos(rω − π/4) dr
    high: Option<Arc<UniformTable>>,
}

impl Symbol {
    /// Imaginary part of m(x,η).
    #[inline]
    pub fn eval(&self, z: &[f64; 2], eta: &[f64; 2]) -> f64 {
        let wm = ((2.0 * z[0] - eta[0]).powi(2) + (2.0 * z[1] - eta[1]).powi(2)).sqrt();
        let wp = ((2.0 * z[0] + eta[0]).powi(2) + (2.0 * z[1] + eta[1]).powi(2)).sqrt();
        match &self.low {
            Some(lo) => {
                let mut v = lo.eval(wm) - lo.eval(wp);
                if let Some(f) = &self.high {
                    // sin(r|z| − π/4)·sin(rs) split into two cosines
                    let zn = norm(z);
                    let s = 0.5 * (z[0] * eta[0] + z[1] * eta[1]) / zn;
                    let h = 0.5 * (2.0 * PI / zn).sqrt() * (f.eval(zn - s) - f.eval(zn + s));
                    v += 4.0 * h;
                }
                v
            }
            None => self.full.eval(wm) - self.full.eval(wp),
        }
    }
}

const TABLE_STEP: f64 = 0.005;

/// Builds symbols per displacement norm for one collision mode.
pub struct SymbolBank<'a, M: PotentialModel<2>> {
    kernel: &'a Kernel<2, M>,
    mode: CollisionMode,
    hankel: PrefixRule,
    phase: Option<PrefixRule>,
    full: Arc<UniformTable>,
    cache: HashMap<u64, Symbol>,
}

impl<'a, M: PotentialModel<2>> SymbolBank<'a, M> {
    /// Tables cover |2z ± η| ≤ w_max and |z| ± σ⁺·η/2 within [−s_max, z_max + s_max].
    pub fn new(kernel: &'a Kernel<2, M>, mode: CollisionMode, w_max: f64, z_max: f64, s_max: f64) -> Result<Self> {
        if kernel.model.radial_profile(0.0, 0.0).is_none() {
            return Err(invalid("the reference solver needs a radial symbol"));
        }
        if let CollisionMode::Spa { lambda0, z_min } = mode {
            if !(lambda0 > 1.0) || !(z_min > 0.0) {
                return Err(invalid("SPA mode needs lambda0 > 1 and z_min > 0"));
            }
        }
        let support = kernel.trunc.support();
        let mut kinks = kernel.model.envelope_breaks();
        kinks.push(2.0 * kernel.trunc.radius);
        let n_w = (w_max / TABLE_STEP).ceil() as usize + 4;
        let hankel = PrefixRule::build(support, &kinks, 4.0 / w_max.max(1.0), 0.0, TABLE_STEP, n_w, &|w, r| {
            hankel_integrand(kernel, w, r)
        });
        let full = Arc::new(UniformTable::new(0.0, TABLE_STEP, (0..n_w).map(|j| hankel.total(j)).collect())?);
        let phase = match mode {
            CollisionMode::Full => None,
            CollisionMode::Spa { .. } => {
                let lo = -s_max;
                let n = ((z_max + 2.0 * s_max) / TABLE_STEP).ceil() as usize + 4;
                let om = (z_max + s_max).max(s_max).max(1.0);
                Some(PrefixRule::build(support, &kinks, 4.0 / om, lo, TABLE_STEP, n, &|om, r| {
                    phase_integrand(kernel, om, r)
                }))
            }
        };
        Ok(Self {
            kernel,
            mode,
            hankel,
            phase,
            full,
            cache: HashMap::new(),
        })
    }

    pub fn symbol(&mut self, z: &[f64; 2]) -> Result<&Symbol> {
        let zn = norm(z);
        let key = match self.mode {
            CollisionMode::Spa { z_min, .. } if zn >= z_min => zn.to_bits(),
            _ => u64::MAX,
        };
        if !self.cache.contains_key(&key) {
            let sym = self.build_symbol(zn)?;
            self.cache.insert(key, sym);
        }
        Ok(&self.cache[&key])
    }

    fn build_symbol(&self, zn: f64) -> Result<Symbol> {
        let (lambda0, z_min) = match self.mode {
            CollisionMode::Spa { lambda0, z_min } if zn >= z_min => (lambda0, z_min),
            _ => {
                return Ok(Symbol {
                    full: self.full.clone(),
                    low: None,
                    high: None,
                })
            }
        };
        debug_assert!(zn >= z_min);
        let kernel = self.kernel;
        let support = kernel.trunc.support();
        let rho = lambda0 / zn;
        let low = self.hankel.head(0.5 * rho, &|w, r| hankel_integrand(kernel, w, r));
        let low = Arc::new(UniformTable::new(0.0, TABLE_STEP, low)?);
        let high = match &self.phase {
            Some(ph) if rho < support => {
                let head = ph.head(rho, &|om, r| phase_integrand(kernel, om, r));
                let vals: Vec<f64> = head.iter().enumerate().map(|(j, h)| ph.total(j) - h).collect();
                Some(Arc::new(UniformTable::new(ph.x0, ph.dx, vals)?))
            }
            _ => None,
        };
        Ok(Symbol {
            full: self.full.clone(),
            low: Some(low),
            high,
        })
    }
}

/// 8π h(2r)χ(r) r J0(rw): g(w) is its integral over the jump radius r.
#[inline]
fn hankel_integrand<M: PotentialModel<2>>(kernel: &Kernel<2, M>, w: f64, r: f64) -> f64 {
    8.0 * PI * profile(kernel, 2.0 * r) * kernel.trunc.taper(r) * r * libm::j0(r * w)
}

#[inline]
fn phase_integrand<M: PotentialModel<2>>(kernel: &Kernel<2, M>, om: f64, r: f64) -> f64 {
    profile(kernel, r) * kernel.trunc.taper(r) * r.sqrt() * (r * om - 0.25 * PI).cos()
}

struct Fft2 {
    n1: usize,
    n2: usize,
    f1: Arc<dyn Fft<f64>>,
    f2: Arc<dyn Fft<f64>>,
    i1: Arc<dyn Fft<f64>>,
    i2: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(n1: usize, n2: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            n1,
            n2,
            f1: p.plan_fft_forward(n1),
            f2: p.plan_fft_forward(n2),
            i1: p.plan_fft_inverse(n1),
            i2: p.plan_fft_inverse(n2),
        }
    }

    /// In-place 2-D transform of a row-major n1×n2 buffer; the inverse is
    /// normalized.
    fn run(&self, buf: &mut [Complex64], tmp: &mut Vec<Complex64>, inverse: bool) {
        let (a, b) = if inverse { (&self.i1, &self.i2) } else { (&self.f1, &self.f2) };
        b.process(buf);
        tmp.resize(buf.len(), Complex64::new(0.0, 0.0));
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                tmp[j * self.n1 + i] = buf[i * self.n2 + j];
            }
        }
        a.process(tmp);
        let scale = if inverse { 1.0 / (self.n1 * self.n2) as f64 } else { 1.0 };
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                buf[i * self.n2 + j] = tmp[j * self.n1 + i] * scale;
            }
        }
    }
}

/// Grid solver for one kernel, collision mode and k boundary.
pub struct ReferenceSolver {
    pub grid: PhaseGrid,
    pub mode: CollisionMode,
    pub boundary: KBoundary,
    /// FFT size per k axis (n or 2n)
    nf: [usize; 2],
    /// Im m(x_i, η_j), per x node, η in FFT order
    symbol: Vec<f64>,
    xi_breve: f64,
}

impl ReferenceSolver {
    pub fn new<M: PotentialModel<2>>(
        kernel: &Kernel<2, M>,
        grid: PhaseGrid,
        mode: CollisionMode,
        boundary: KBoundary,
        xi_breve: f64,
    ) -> Result<Self> {
        let pad = match boundary {
            KBoundary::Periodic => 1,
            KBoundary::Restricted => 2,
        };
        let nf = [grid.k[0].n * pad, grid.k[1].n * pad];
        let eta1 = grid.k[0].frequencies(nf[0]);
        let eta2 = grid.k[1].frequencies(nf[1]);
        let eta_max = (eta1.iter().fold(0.0f64, |m, v| m.max(v.abs())).powi(2)
            + eta2.iter().fold(0.0f64, |m, v| m.max(v.abs())).powi(2))
        .sqrt();
        let mut z_max: f64 = 0.0;
        let mut zs = Vec::with_capacity(grid.x[0].n * grid.x[1].n);
        for i1 in 0..grid.x[0].n {
            for i2 in 0..grid.x[1].n {
                let z = kernel.model.z(&[grid.x[0].point(i1), grid.x[1].point(i2)]);
                z_max = z_max.max(norm(&z));
                zs.push(z);
            }
        }
        let mut bank = SymbolBank::new(kernel, mode, 2.0 * z_max + eta_max + 1.0, z_max, 0.5 * eta_max + 1.0)?;
        let nfe = nf[0] * nf[1];
        let mut symbol = vec![0.0; zs.len() * nfe];
        for (ix, z) in zs.iter().enumerate() {
            let sym = bank.symbol(z)?;
            let out = &mut symbol[ix * nfe..(ix + 1) * nfe];
            for (a, e1) in eta1.iter().enumerate() {
                for (b, e2) in eta2.iter().enumerate() {
                    // Nyquist rows and columns stay zero
                    let nyq = (nf[0] % 2 == 0 && a == nf[0] / 2) || (nf[1] % 2 == 0 && b == nf[1] / 2);
                    out[a * nf[1] + b] = if nyq { 0.0 } else { sym.eval(z, &[*e1, *e2]) };
                }
            }
        }
        Ok(Self {
            grid,
            mode,
            boundary,
            nf,
            symbol,
            xi_breve,
        })
    }

    /// Θ_V[φ] on the grid (the negative of the jump operator).
    pub fn apply_operator(&self, phi: &GridField) -> Result<GridField> {
        self.check_grid(phi)?;
        let mut out = phi.clone();
        let nk = self.grid.k_slice_len();
        let fft = Fft2::new(self.nf[0], self.nf[1]);
        out.values.par_chunks_mut(nk).enumerate().for_each_init(
            || (vec![Complex64::new(0.0, 0.0); self.nf[0] * self.nf[1]], Vec::new()),
            |(buf, tmp), (ix, chunk)| {
                self.jump_apply(ix, chunk, -1.0, &fft, buf, tmp);
            },
        );
        Ok(out)
    }

    /// Multiplies one k-slice by (sign)·L in place.
    fn jump_apply(
        &self,
        ix: usize,
        chunk: &mut [f64],
        sign: f64,
        fft: &Fft2,
        buf: &mut [Complex64],
        tmp: &mut Vec<Complex64>,
    ) {
        let (n1, n2) = (self.grid.k[0].n, self.grid.k[1].n);
        let nfe = self.nf[0] * self.nf[1];
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for j1 in 0..n1 {
            for j2 in 0..n2 {
                buf[j1 * self.nf[1] + j2] = Complex64::new(chunk[j1 * n2 + j2], 0.0);
            }
        }
        fft.run(buf, tmp, false);
        let sym = &self.symbol[ix * nfe..(ix + 1) * nfe];
        for (c, m) in buf.iter_mut().zip(sym) {
            *c *= Complex64::new(0.0, sign * m);
        }
        fft.run(buf, tmp, true);
        for j1 in 0..n1 {
            for j2 in 0..n2 {
                chunk[j1 * n2 + j2] = buf[j1 * self.nf[1] + j2].re;
            }
        }
    }

    /// Collision over time `s` (backward time; negative s runs the forward
    /// collision).
    fn collide(&self, phi: &mut GridField, s: f64) {
        let nk = self.grid.k_slice_len();
        let fft = Fft2::new(self.nf[0], self.nf[1]);
        let nfe = self.nf[0] * self.nf[1];
        phi.values.par_chunks_mut(nk).enumerate().for_each_init(
            || (vec![Complex64::new(0.0, 0.0); nfe], Vec::new()),
            |(buf, tmp), (ix, chunk)| match self.boundary {
                KBoundary::Periodic => {
                    for (c, v) in buf.iter_mut().zip(chunk.iter()) {
                        *c = Complex64::new(*v, 0.0);
                    }
                    fft.run(buf, tmp, false);
                    let sym = &self.symbol[ix * nfe..(ix + 1) * nfe];
                    for (c, m) in buf.iter_mut().zip(sym) {
                        *c *= Complex64::from_polar(1.0, s * m);
                    }
                    fft.run(buf, tmp, true);
                    for (v, c) in chunk.iter_mut().zip(buf.iter()) {
                        *v = c.re;
                    }
                }
                KBoundary::Restricted => {
                    // classical RK4 for dφ/ds = Lφ restricted to K
                    let y0 = chunk.to_vec();
                    let mut k1 = y0.clone();
                    self.jump_apply(ix, &mut k1, 1.0, &fft, buf, tmp);
                    let mut k2: Vec<f64> = y0.iter().zip(&k1).map(|(y, k)| y + 0.5 * s * k).collect();
                    self.jump_apply(ix, &mut k2, 1.0, &fft, buf, tmp);
                    let mut k3: Vec<f64> = y0.iter().zip(&k2).map(|(y, k)| y + 0.5 * s * k).collect();
                    self.jump_apply(ix, &mut k3, 1.0, &fft, buf, tmp);
                    let mut k4: Vec<f64> = y0.iter().zip(&k3).map(|(y, k)| y + s * k).collect();
                    self.jump_apply(ix, &mut k4, 1.0, &fft, buf, tmp);
                    for i in 0..chunk.len() {
                        chunk[i] = y0[i] + s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
            },
        );
    }

    /// φ(x,k) ← φ(x + k·s, k) by a spectral shift in x.
    fn advect(&self, phi: &mut GridField, s: f64) {
        let g = self.grid;
        let (m1, m2) = (g.x[0].n, g.x[1].n);
        let nk = g.k_slice_len();
        let nx = m1 * m2;
        let w1 = g.x[0].frequencies(m1);
        let w2 = g.x[1].frequencies(m2);
        // k-major copy
        let mut kmaj = vec![0.0; g.len()];
        kmaj.par_chunks_mut(nx).enumerate().for_each(|(jk, dst)| {
            for (ix, d) in dst.iter_mut().enumerate() {
                *d = phi.values[ix * nk + jk];
            }
        });
        let fft = Fft2::new(m1, m2);
        kmaj.par_chunks_mut(nx).enumerate().for_each_init(
            || (vec![Complex64::new(0.0, 0.0); nx], Vec::new()),
            |(buf, tmp), (jk, slice)| {
                let k1 = g.k[0].point(jk / g.k[1].n);
                let k2 = g.k[1].point(jk % g.k[1].n);
                for (c, v) in buf.iter_mut().zip(slice.iter()) {
                    *c = Complex64::new(*v, 0.0);
                }
                fft.run(buf, tmp, false);
                for a in 0..m1 {
                    let f1 = shift_factor(&w1, a, m1, k1 * s);
                    for b in 0..m2 {
                        let f2 = shift_factor(&w2, b, m2, k2 * s);
                        buf[a * m2 + b] *= f1 * f2;
                    }
                }
                fft.run(buf, tmp, true);
                for (v, c) in slice.iter_mut().zip(buf.iter()) {
                    *v = c.re;
                }
            },
        );
        phi.values.par_chunks_mut(nk).enumerate().for_each(|(ix, dst)| {
            for (jk, d) in dst.iter_mut().enumerate() {
                *d = kmaj[jk * nx + ix];
            }
        });
    }

    fn check_grid(&self, phi: &GridField) -> Result<()> {
        if phi.grid != self.grid {
            return Err(invalid("field grid does not match the solver grid"));
        }
        Ok(())
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid("dt must be positive"));
        }
        if dt * 2.0 * self.xi_breve >= 0.5 {
            return Err(Error::Stability(format!(
                "dt * 2 * xi_breve = {} >= 0.5",
                dt * 2.0 * self.xi_breve
            )));
        }
        Ok(())
    }

    /// Integrates backward from `t_final` and returns the field at each
    /// requested time (sorted descending internally, returned in input order).
    pub fn solve_backward(&self, phi_t: &GridField, t_final: f64, times: &[f64], dt: f64) -> Result<Vec<GridField>> {
        self.check_grid(phi_t)?;
        self.check_dt(dt)?;
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut out = vec![None; times.len()];
        let mut phi = phi_t.clone();
        let mut now = t_final;
        for &i in &order {
            let target = times[i];
            if target > t_final {
                return Err(invalid(format!("requested time {target} is after the horizon")));
            }
            self.propagate(&mut phi, now - target, dt, 1.0);
            now = target;
            out[i] = Some(phi.clone());
        }
        Ok(out.into_iter().map(|f| f.expect("every slot filled")).collect())
    }

    /// Forward equation ∂f/∂t + k·∇f = −L f over `span`, the grid adjoint
    /// of [`Self::solve_backward`] with the same `dt`.
    pub fn solve_forward(&self, f0: &GridField, span: f64, dt: f64) -> Result<GridField> {
        self.check_grid(f0)?;
        self.check_dt(dt)?;
        let mut f = f0.clone();
        self.propagate(&mut f, span, dt, -1.0);
        Ok(f)
    }

    /// `dir` = 1 runs the backward equation over `span`, −1 the forward one.
    fn propagate(&self, phi: &mut GridField, span: f64, dt: f64, dir: f64) {
        if span <= 0.0 {
            return;
        }
        let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        match self.boundary {
            KBoundary::Periodic => {
                // exact exponentials: adjacent half steps merge
                self.collide(phi, dir * 0.5 * h);
                for s in 0..steps {
                    self.advect(phi, dir * h);
                    let c = if s + 1 == steps { 0.5 } else { 1.0 };
                    self.collide(phi, dir * c * h);
                }
            }
            KBoundary::Restricted => {
                for _ in 0..steps {
                    self.collide(phi, dir * 0.5 * h);
                    self.advect(phi, dir * h);
                    self.collide(phi, dir * 0.5 * h);
                }
            }
        }
    }

    /// Im m(x_i, η) table for x node `ix`, η in FFT order.
    pub fn symbol_slice(&self, ix: usize) -> &[f64] {
        let nfe = self.nf[0] * self.nf[1];
        &self.symbol[ix * nfe..(ix + 1) * nfe]
    }

    pub fn fft_shape(&self) -> [usize; 2] {
        self.nf
    }
}

/// e^{iωs} for mode `a`, real cos(ωs) at the Nyquist index.
#[inline]
fn shift_factor(w: &[f64], a: usize, n: usize, s: f64) -> Complex64 {
    if n % 2 == 0 && a == n / 2 {
        Complex64::new((w[a] * s).cos(), 0.0)
    } else {
        Complex64::from_polar(1.0, w[a] * s)
    }
}

impl crate::model::PhaseField<2> for GridField {
    fn eval(&self, q: &PhaseState<2>) -> f64 {
        GridField::eval(self, q)
    }
}
