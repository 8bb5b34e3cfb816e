//! Batch runs: resolve a configuration into kernels and feasible cells, write
//! the metadata, then stream CSV rows per cell.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::brw::{Brw, Variant};
use crate::cache::{self, CacheStatus};
use crate::config::{Gamma0, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::estimator::{variance_series, InitialSampler, ProbeLattice, ReferenceAt, SeriesSpec, CSV_HEADER};
use crate::kernel::{alpha_star, Kernel, KernelResolution, SupportBox, Truncation, XiBreve};
use crate::model::{GaussianPacket, Morse, PhaseField, PotentialModel, ZeroPotential};
use crate::reference::{CollisionMode, GridField, PhaseGrid, ReferenceSolver, Axis};
use crate::rng::{derive_seed, label_of, tree_rng};
use crate::spa::SpaTables;

/// Potential selected by the configuration.
#[derive(Clone, Debug)]
pub enum ModelChoice {
    Morse(Morse<2>),
    Zero(ZeroPotential<2>),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            ModelChoice::Morse($m) => $e,
            ModelChoice::Zero($m) => $e,
        }
    };
}

impl PotentialModel<2> for ModelChoice {
    fn name(&self) -> String {
        delegate!(self, m => m.name())
    }
    fn potential(&self, x: &[f64; 2], t: f64) -> f64 {
        delegate!(self, m => m.potential(x, t))
    }
    fn z(&self, x: &[f64; 2]) -> [f64; 2] {
        delegate!(self, m => m.z(x))
    }
    fn psi(&self, k: &[f64; 2], t: f64) -> Complex64 {
        delegate!(self, m => m.psi(k, t))
    }
    fn envelope(&self, r: f64, t: f64) -> f64 {
        delegate!(self, m => m.envelope(r, t))
    }
    fn radial_profile(&self, r: f64, t: f64) -> Option<f64> {
        delegate!(self, m => m.radial_profile(r, t))
    }
    fn envelope_breaks(&self) -> Vec<f64> {
        delegate!(self, m => m.envelope_breaks())
    }
    fn params_key(&self) -> String {
        delegate!(self, m => m.params_key())
    }
}

fn arr2(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Stationary-phase tables and α∗ for one cutoff.
pub struct SpaInfo {
    pub lambda0: f64,
    pub tables: SpaTables,
    pub alpha_star: f64,
}

/// One (variant, γ0, λ0) cell of the experiment matrix.
#[derive(Clone, Debug)]
pub struct Cell {
    pub variant: Variant,
    pub gamma0_spec: Gamma0,
    pub gamma0: f64,
    pub lambda0: Option<f64>,
    pub n_trees: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        let g = match self.gamma0_spec.multiple() {
            Some(m) => format!("{m}xi"),
            None => format!("{}", self.gamma0),
        };
        match self.lambda0 {
            Some(l) => format!("{}_g{g}_l{l}", self.variant),
            None => format!("{}_g{g}", self.variant),
        }
    }
}

/// A configuration with its kernel, bounds and feasible cells.
pub struct Prepared {
    pub cfg: SimConfig,
    pub kernel: Kernel<2, ModelChoice>,
    pub cache_status: CacheStatus,
    pub xi: XiBreve<2>,
    pub k_v_proxy: f64,
    pub spa: Vec<SpaInfo>,
    pub cells: Vec<Cell>,
    pub packet: GaussianPacket<2>,
    pub x_box: SupportBox<2>,
    pub k_box: SupportBox<2>,
}

/// Builds the kernel and checks every gate; the first failed gate is the
/// error.
pub fn prepare(cfg: SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let model = match cfg.model.potential.as_str() {
        "morse" => ModelChoice::Morse(Morse::new(
            arr2(cfg.model.x_a.as_deref().unwrap_or(&[0.0, 0.0])),
            cfg.model.r0.unwrap_or(0.0),
            cfg.model.kappa.unwrap_or(0.0),
        )?),
        _ => ModelChoice::Zero(ZeroPotential),
    };
    let s = &cfg.support;
    let x_box = SupportBox::new(arr2(&s.x_lo), arr2(&s.x_hi))?;
    let k_box = SupportBox::new(arr2(&s.k_lo), arr2(&s.k_hi))?;
    let trunc = match s.radius {
        Some(r) => Truncation::new(r)?,
        None => Truncation::for_k_box(&k_box.lo, &k_box.hi)?,
    };
    let cache_path = cfg.kernel.cache.as_ref().map(PathBuf::from);
    let (kernel, cache_status) =
        cache::load_or_build::<2, _>(model, trunc, KernelResolution::default(), cache_path.as_deref())?;
    let xi = kernel.bounds(&x_box, cfg.kernel.xi_lattice, &[0.0])?;
    let variants = cfg.variants()?;
    let mut spa = Vec::new();
    if variants.iter().any(|v| v.spa()) {
        for &l in &cfg.run.lambda0 {
            let tables = SpaTables::build(&kernel, l, cfg.run.z_min)?;
            let a = alpha_star(&kernel, &x_box, cfg.kernel.xi_lattice, l, xi.value)?;
            spa.push(SpaInfo {
                lambda0: l,
                tables,
                alpha_star: a,
            });
        }
    }
    let mut cells = Vec::new();
    for &v in &variants {
        for g in &cfg.run.gamma0 {
            let gamma0 = g.resolve(xi.value)?;
            if !(gamma0 > 0.0) {
                return Err(Error::Feasibility(format!("gamma0 must be positive, got {gamma0}")));
            }
            if gamma0 < xi.value * (1.0 - 1e-12) {
                return Err(Error::Feasibility(format!("gamma0 < xi_breve ({gamma0} < {})", xi.value)));
            }
            let n_trees = cfg.trees_for(v, g);
            let lambdas: Vec<Option<f64>> = if v.spa() {
                cfg.run.lambda0.iter().map(|l| Some(*l)).collect()
            } else {
                vec![None]
            };
            for l in lambdas {
                if let Some(l) = l {
                    let info = spa.iter().find(|s| s.lambda0 == l).expect("tables built per lambda0");
                    let floor = info.tables.gamma0_floor(2);
                    if gamma0 < floor {
                        return Err(Error::Feasibility(format!(
                            "gamma0 < 2*eta_breve*(2pi/lambda0)^((n-1)/2) ({gamma0} < {floor}, lambda0 = {l})"
                        )));
                    }
                }
                if n_trees == 0 {
                    continue;
                }
                cells.push(Cell {
                    variant: v,
                    gamma0_spec: g.clone(),
                    gamma0,
                    lambda0: l,
                    n_trees,
                });
            }
        }
    }
    let p = &cfg.packet;
    let packet = GaussianPacket::normalized(arr2(&p.x0), arr2(&p.k0), p.ax, p.ak)?;
    Ok(Prepared {
        k_v_proxy: 2.0 * xi.value,
        cfg,
        kernel,
        cache_status,
        xi,
        spa,
        cells,
        packet,
        x_box,
        k_box,
    })
}

/// "v<crate version>-cfg<first 8 hex digits of the config hash>".
pub fn version_string(cfg: &SimConfig) -> String {
    let h = Sha256::digest(cfg.to_toml().as_bytes());
    let hex: String = h[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("v{}-cfg{hex}", env!("CARGO_PKG_VERSION"))
}

impl Prepared {
    /// Resolved config followed by the computed bounds, as TOML.
    pub fn metadata(&self) -> String {
        let mut s = self.cfg.to_toml();
        s.push_str("\n[computed]\n");
        s.push_str(&format!("version = \"{}\"\n", version_string(&self.cfg)));
        s.push_str(&format!("xi_breve = {:.16e}\n", self.xi.value));
        s.push_str(&format!("xi_breve_argmax = [{}, {}]\n", self.xi.argmax[0], self.xi.argmax[1]));
        s.push_str("# Young-inequality proxy for K_V, not the operator norm\n");
        s.push_str(&format!("k_v_proxy = {:.16e}\n", self.k_v_proxy));
        s.push_str(&format!("truncation_radius = {:.16e}\n", self.kernel.trunc.radius));
        for info in &self.spa {
            s.push_str(&format!(
                "\n[[computed.spa]]\nlambda0 = {}\nalpha_star = {:.16e}\neta_breve = {:.16e}\ngamma0_floor = {:.16e}\n",
                info.lambda0,
                info.alpha_star,
                info.tables.eta_breve,
                info.tables.gamma0_floor(2)
            ));
        }
        for c in &self.cells {
            s.push_str(&format!(
                "\n[[computed.cell]]\nlabel = \"{}\"\ngamma0 = {:.16e}\nn_trees = {}\n",
                c.label(),
                c.gamma0,
                c.n_trees
            ));
        }
        s
    }

    /// Text for `bounds` and `--dry-run`.
    pub fn bounds_summary(&self) -> String {
        let mut s = format!(
            "xi_breve = {:.10} at x = ({}, {})\nk_v_proxy = {:.10} (Young proxy)\n",
            self.xi.value, self.xi.argmax[0], self.xi.argmax[1], self.k_v_proxy
        );
        for info in &self.spa {
            s.push_str(&format!(
                "lambda0 = {}: alpha_star = {:.6}, eta_breve = {:.6}, gamma0 floor = {:.6}\n",
                info.lambda0,
                info.alpha_star,
                info.tables.eta_breve,
                info.tables.gamma0_floor(2)
            ));
        }
        s
    }

    fn spa_for(&self, lambda0: Option<f64>) -> Option<&SpaTables> {
        lambda0.and_then(|l| self.spa.iter().find(|s| s.lambda0 == l).map(|s| &s.tables))
    }

    pub fn brw_for(&self, cell: &Cell) -> Result<Brw<'_, 2, ModelChoice>> {
        Ok(Brw::new(
            &self.kernel,
            self.spa_for(cell.lambda0),
            cell.variant,
            cell.gamma0,
            self.cfg.run.horizon,
            self.k_box,
            self.xi.value,
        )?
        .with_record_cap(self.cfg.run.record_cap))
    }

    pub fn reference_grid(&self) -> Result<PhaseGrid> {
        let n = self.cfg.reference.grid;
        let ax = |i: usize| Axis::new(self.x_box.lo[i], self.x_box.hi[i], n);
        let ak = |i: usize| Axis::new(self.k_box.lo[i], self.k_box.hi[i], n);
        Ok(PhaseGrid::new([ax(0)?, ax(1)?], [ak(0)?, ak(1)?]))
    }

    /// Full-mode reference fields at the probe times, in probe-time order.
    pub fn reference_fields(&self) -> Result<Vec<GridField>> {
        let grid = self.reference_grid()?;
        let solver = ReferenceSolver::new(
            &self.kernel,
            grid,
            CollisionMode::Full,
            self.cfg.reference.boundary()?,
            self.xi.value,
        )?;
        let packet = self.packet.clone();
        let phi_t = GridField::from_fn(grid, move |q| packet.eval(q));
        solver.solve_backward(&phi_t, self.cfg.run.horizon, &self.cfg.run.probe_times, self.cfg.reference.dt)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub trace: bool,
    pub workers: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub rows: usize,
    pub snapshots: Vec<PathBuf>,
}

/// Runs `f` on a pool of `workers` threads (the global pool when None).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| invalid(format!("cannot start {n} workers: {e}")))?;
            pool.install(f)
        }
    }
}

pub const CSV_NAME: &str = "series.csv";
pub const META_NAME: &str = "run.meta";

fn snapshot_path(dir: &Path, t: f64) -> PathBuf {
    dir.join(format!("reference_t{t:.4}.bin"))
}

/// Writes reference snapshots for every probe time.
pub fn write_reference(prep: &Prepared, dir: &Path, fields: &[GridField]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (t, f) in prep.cfg.run.probe_times.iter().zip(fields) {
        let p = snapshot_path(dir, *t);
        f.write_snapshot(
            &p,
            &[
                ("t", format!("{t}")),
                ("horizon", format!("{}", prep.cfg.run.horizon)),
                ("mode", "full".into()),
                ("boundary", prep.cfg.reference.boundary.clone()),
                ("dt", format!("{}", prep.cfg.reference.dt)),
                ("version", version_string(&prep.cfg)),
            ],
        )?;
        out.push(p);
    }
    Ok(out)
}

/// Metadata first, then the reference (when needed), then one CSV row per
/// (cell, probe time), flushed as produced.
pub fn run(prep: &Prepared, opts: &RunOptions) -> Result<RunSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let meta_path = opts.out_dir.join(META_NAME);
    fs::write(&meta_path, prep.metadata())?;
    with_workers(opts.workers, || run_cells(prep, opts, meta_path.clone()))
}

fn run_cells(prep: &Prepared, opts: &RunOptions, metadata: PathBuf) -> Result<RunSummary> {
    let cfg = &prep.cfg;
    let lattice_on = cfg.lattice.trees_per_point >= 2;
    let need_ref = cfg.reference.enabled && (lattice_on || cfg.reference.snapshots);
    let fields = if need_ref { prep.reference_fields()? } else { Vec::new() };
    let mut snapshots = Vec::new();
    if cfg.reference.snapshots && !fields.is_empty() {
        snapshots = write_reference(prep, &opts.out_dir, &fields)?;
    }
    let references: Vec<ReferenceAt<'_, 2>> = cfg
        .run
        .probe_times
        .iter()
        .zip(&fields)
        .map(|(t, f)| (*t, f as &dyn PhaseField<2>))
        .collect();
    let lattice = if lattice_on {
        Some((
            ProbeLattice::new(prep.x_box, prep.k_box, cfg.lattice.points_per_axis)?,
            cfg.lattice.trees_per_point,
        ))
    } else {
        None
    };
    let sampler = InitialSampler::new(prep.packet.clone())?;
    let csv_path = opts.out_dir.join(CSV_NAME);
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{CSV_HEADER}")?;
    csv.flush()?;
    let mut rows = 0usize;
    for cell in &prep.cells {
        let brw = prep.brw_for(cell)?;
        let spec = SeriesSpec {
            probe_times: cfg.run.probe_times.clone(),
            n_trees: cell.n_trees,
            seed: cfg.run.seed,
            lattice,
        };
        variance_series(
            &brw,
            cell.lambda0.unwrap_or(f64::NAN),
            &sampler,
            &prep.packet,
            &spec,
            &references,
            &mut |row| {
                writeln!(csv, "{}", row.csv_line())?;
                csv.flush()?;
                rows += 1;
                Ok(())
            },
        )?;
        if opts.trace {
            write_trace(prep, cell, &brw, &opts.out_dir)?;
        }
    }
    Ok(RunSummary {
        csv: csv_path,
        metadata,
        rows,
        snapshots,
    })
}

/// First tree of the inner-product stream of `cell`, rooted at t = 0.
fn write_trace(prep: &Prepared, cell: &Cell, brw: &Brw<'_, 2, ModelChoice>, out: &Path) -> Result<()> {
    let dir = out.join("trace");
    fs::create_dir_all(&dir)?;
    let sampler = InitialSampler::new(prep.packet.clone())?;
    let seed = derive_seed(prep.cfg.run.seed, label_of("inner-product"));
    let mut rng = tree_rng(seed, 0);
    let (q, _) = sampler.sample(&mut rng);
    let tree = brw.grow_family(q, 0.0, &mut rng)?;
    fs::write(dir.join(format!("{}.txt", cell.label())), tree.trace())?;
    Ok(())
}
