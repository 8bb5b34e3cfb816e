//! Run configuration: TOML text with one table per concern. See
//! `docs/config.md` for every key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brw::Variant;
use crate::error::{Error, Result};
use crate::reference::KBoundary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelConfig,
    pub support: SupportConfig,
    pub packet: PacketConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dimension: usize,
    /// "morse" or "zero"
    pub potential: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportConfig {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub k_lo: Vec<f64>,
    pub k_hi: Vec<f64>,
    /// truncation radius R; defaults to the largest corner norm of K
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

/// Gaussian packet prefactor·exp(−ax|x−x0|² − ak|k−k0|²), normalized to unit
/// L¹ norm. Used as f₀ and as φ_T.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub x0: Vec<f64>,
    pub k0: Vec<f64>,
    pub ax: f64,
    pub ak: f64,
}

/// γ0 as an absolute rate or a multiple of ξ̆ ("xi", "2xi", "4*xi").
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma0 {
    Absolute(f64),
    Relative(String),
}

impl Gamma0 {
    pub fn resolve(&self, xi_breve: f64) -> Result<f64> {
        match self {
            Gamma0::Absolute(v) => Ok(*v),
            Gamma0::Relative(s) => Ok(parse_xi_multiple(s)? * xi_breve),
        }
    }

    /// Multiple of ξ̆, when given in relative form.
    pub fn multiple(&self) -> Option<f64> {
        match self {
            Gamma0::Relative(s) => parse_xi_multiple(s).ok(),
            Gamma0::Absolute(_) => None,
        }
    }
}

fn parse_xi_multiple(s: &str) -> Result<f64> {
    let t = s.trim();
    let head = t
        .strip_suffix("xi")
        .ok_or_else(|| Error::Config(format!("gamma0 entry '{s}' must be a number or a multiple of xi")))?
        .trim()
        .trim_end_matches('*')
        .trim();
    if head.is_empty() {
        return Ok(1.0);
    }
    head.parse::<f64>()
        .map_err(|_| Error::Config(format!("gamma0 entry '{s}' has a bad multiplier")))
}

fn default_lambda0() -> Vec<f64> {
    vec![8.0]
}
fn default_z_min() -> f64 {
    1e-3
}
fn default_record_cap() -> usize {
    200_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: f64,
    pub variants: Vec<String>,
    pub gamma0: Vec<Gamma0>,
    #[serde(default = "default_lambda0")]
    pub lambda0: Vec<f64>,
    pub n_trees: usize,
    pub probe_times: Vec<f64>,
    pub seed: u64,
    /// below this |z| the stationary-phase variants use the full kernel
    #[serde(default = "default_z_min")]
    pub z_min: f64,
    /// records per tree before the run aborts
    #[serde(default = "default_record_cap")]
    pub record_cap: usize,
    /// optional per-cell tree budgets, keyed "variant@multiple", e.g.
    /// "wp-hjd@4" = 500; 0 skips the cell
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub n_trees_override: std::collections::BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub points_per_axis: usize,
    /// trees per lattice point; 0 disables the L²-error column
    pub trees_per_point: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            points_per_axis: 17,
            trees_per_point: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub enabled: bool,
    pub grid: usize,
    pub dt: f64,
    /// "periodic" or "restricted"
    pub boundary: String,
    /// write a field snapshot per probe time
    pub snapshots: bool,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            grid: 32,
            dt: 0.02,
            boundary: "periodic".into(),
            snapshots: false,
        }
    }
}

impl ReferenceConfig {
    pub fn boundary(&self) -> Result<KBoundary> {
        match self.boundary.as_str() {
            "periodic" => Ok(KBoundary::Periodic),
            "restricted" => Ok(KBoundary::Restricted),
            other => Err(Error::Config(format!("unknown reference boundary '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// points per axis of the support lattice for ξ̆ and α∗
    pub xi_lattice: usize,
    /// kernel table cache file
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<String>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            xi_lattice: 65,
            cache: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.run.variants.iter().map(|v| v.parse()).collect()
    }

    /// Checks everything that does not need the kernel tables.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let n = self.model.dimension;
        if n != 2 {
            return cfg(format!("the batch runner supports n = 2 only, got n = {n}"));
        }
        match self.model.potential.as_str() {
            "morse" => {
                let xa = self.model.x_a.as_ref().map_or(0, |v| v.len());
                if xa != n || self.model.r0.is_none() || self.model.kappa.is_none() {
                    return cfg("morse potential needs x_a (length n), r0 and kappa".into());
                }
                if !(self.model.kappa.unwrap_or(0.0) > 0.0) {
                    return cfg("kappa must be positive".into());
                }
            }
            "zero" => {}
            other => return cfg(format!("unknown potential '{other}'")),
        }
        let s = &self.support;
        for (name, v) in [("x_lo", &s.x_lo), ("x_hi", &s.x_hi), ("k_lo", &s.k_lo), ("k_hi", &s.k_hi)] {
            if v.len() != n || v.iter().any(|c| !c.is_finite()) {
                return cfg(format!("support.{name} must hold {n} finite numbers"));
            }
        }
        for i in 0..n {
            if !(s.x_lo[i] < s.x_hi[i]) || !(s.k_lo[i] < s.k_hi[i]) {
                return cfg("support boxes need lo < hi on every axis".into());
            }
        }
        if let Some(r) = s.radius {
            if !(r > 0.0) || !r.is_finite() {
                return cfg("support.radius must be positive".into());
            }
        }
        let p = &self.packet;
        if p.x0.len() != n || p.k0.len() != n || !(p.ax > 0.0) || !(p.ak > 0.0) {
            return cfg("packet needs x0, k0 of length n and positive ax, ak".into());
        }
        let r = &self.run;
        if !(r.horizon > 0.0) || !r.horizon.is_finite() {
            return cfg("run.horizon must be positive (T > 0)".into());
        }
        if r.n_trees < 2 {
            return cfg("run.n_trees must be at least 2".into());
        }
        if r.variants.is_empty() || r.gamma0.is_empty() {
            return cfg("run.variants and run.gamma0 must be non-empty".into());
        }
        let variants = self.variants()?;
        for g in &r.gamma0 {
            if let Gamma0::Relative(s) = g {
                parse_xi_multiple(s)?;
            }
        }
        if variants.iter().any(|v| v.spa()) {
            if r.lambda0.is_empty() {
                return cfg("stationary-phase variants need at least one lambda0".into());
            }
            if let Some(l) = r.lambda0.iter().find(|l| !(**l > 1.0)) {
                return Err(Error::Feasibility(format!("lambda0 must exceed 1, got {l}")));
            }
        }
        if r.probe_times.is_empty() || r.probe_times.iter().any(|t| !(0.0..=r.horizon).contains(t)) {
            return cfg("run.probe_times must be non-empty and inside [0, T]".into());
        }
        if !(r.z_min > 0.0) {
            return cfg("run.z_min must be positive".into());
        }
        if r.record_cap == 0 {
            return cfg("run.record_cap must be positive".into());
        }
        for (key, v) in &r.n_trees_override {
            let (var, mult) = key
                .split_once('@')
                .ok_or_else(|| Error::Config(format!("override key '{key}' must read variant@multiple")))?;
            var.parse::<Variant>()?;
            mult.parse::<f64>()
                .map_err(|_| Error::Config(format!("override key '{key}' has a bad multiple")))?;
            if *v == 1 {
                return cfg(format!("override '{key}' needs 0 (skip the cell) or at least 2 trees"));
            }
        }
        if self.lattice.trees_per_point == 1 || self.lattice.points_per_axis == 0 {
            return cfg("lattice needs trees_per_point = 0 or >= 2 and points_per_axis >= 1".into());
        }
        self.reference.boundary()?;
        if self.reference.enabled {
            if self.reference.grid < 16 {
                return cfg("reference.grid must be at least 16".into());
            }
            if !(self.reference.dt > 0.0) {
                return cfg("reference.dt must be positive".into());
            }
        }
        if self.kernel.xi_lattice < 2 {
            return cfg("kernel.xi_lattice must be at least 2".into());
        }
        if self.output.workers == Some(0) {
            return cfg("output.workers must be positive".into());
        }
        Ok(())
    }

    /// Tree budget of one cell.
    pub fn trees_for(&self, variant: Variant, gamma0: &Gamma0) -> usize {
        if let Some(m) = gamma0.multiple() {
            for (key, v) in &self.run.n_trees_override {
                if let Some((var, mult)) = key.split_once('@') {
                    let same_var = var.parse::<Variant>().map(|x| x == variant).unwrap_or(false);
                    let same_mult = mult.parse::<f64>().map(|x| (x - m).abs() < 1e-12).unwrap_or(false);
                    if same_var && same_mult {
                        return *v;
                    }
                }
            }
        }
        self.run.n_trees
    }
}

/// The two-dimensional Morse experiment used by the bundled figure config.
pub const FIG1_CONFIG: &str = include_str!("../../../configs/fig1.cfg");
