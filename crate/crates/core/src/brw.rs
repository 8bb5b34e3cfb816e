//! Branching random walk: family histories under the exponential clock, the
//! four offspring rules and the tree estimators.
//!
//! Offspring realize the jump operator L[φ](k) = ∫V_{W,R}(x,q)φ(k+q)dq, which
//! is −Θ_V. A child from V⁺ enters with sign +, one from V⁻ with sign −.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernel::{Kernel, Part, SupportBox};
use crate::model::{norm, PhaseField, PhaseState, PotentialModel};
use crate::rng::tree_rng;
use crate::spa::{re_zeta_radial, zeta, SpaTables};
use crate::stats::{Moments, Welford};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    WpHjd,
    SpHjd,
    WpSpa,
    SpSpa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::WpHjd, Variant::SpHjd, Variant::WpSpa, Variant::SpSpa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::WpHjd => "wp-hjd",
            Variant::SpHjd => "sp-hjd",
            Variant::WpSpa => "wp-spa",
            Variant::SpSpa => "sp-spa",
        }
    }

    pub fn signed(self) -> bool {
        matches!(self, Variant::SpHjd | Variant::SpSpa)
    }

    pub fn spa(self) -> bool {
        matches!(self, Variant::WpSpa | Variant::SpSpa)
    }

    pub fn branch_count(self) -> u8 {
        if self.spa() {
            5
        } else {
            3
        }
    }

    /// The HJD variant with the same weight law.
    pub fn hjd_counterpart(self) -> Variant {
        if self.signed() {
            Variant::SpHjd
        } else {
            Variant::WpHjd
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == t)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (wp-hjd, sp-hjd, wp-spa, sp-spa)")))
    }
}

/// (−1)^{i+1} for branch label i.
#[inline]
pub fn branch_sign(branch: u8) -> f64 {
    if branch % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Exp(γ0) life length.
pub fn sample_life_length<R: Rng + ?Sized>(gamma0: f64, rng: &mut R) -> Result<f64> {
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(invalid(format!("gamma0 must be positive, got {gamma0}")));
    }
    let e = Exp::new(gamma0).map_err(|_| invalid(format!("gamma0 must be positive, got {gamma0}")))?;
    Ok(e.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleRecord<const D: usize> {
    pub parent: Option<usize>,
    /// branch label i_m; 0 for the ancestor
    pub branch: u8,
    pub birth_time: f64,
    pub life: f64,
    /// state at birth
    pub state: PhaseState<D>,
    /// local weight w_{i1…im} (sign factors of ζ included, branch sign not)
    pub weight: f64,
    /// Π (−1)^{i_j+1} w along the path
    pub cum_weight: f64,
    pub frozen: bool,
}

impl<const D: usize> ParticleRecord<D> {
    /// State at the horizon for a frozen particle, at death otherwise.
    pub fn final_state(&self, horizon: f64) -> PhaseState<D> {
        let end = if self.frozen {
            horizon
        } else {
            self.birth_time + self.life
        };
        self.state.drifted(end - self.birth_time)
    }
}

#[derive(Clone, Debug)]
pub struct FamilyTree<const D: usize> {
    pub variant: Variant,
    pub root: PhaseState<D>,
    pub start_time: f64,
    pub horizon: f64,
    pub records: Vec<ParticleRecord<D>>,
}

impl<const D: usize> FamilyTree<D> {
    pub fn frozen_set(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].frozen).collect()
    }

    /// Branch labels from the ancestor down to record `idx`.
    pub fn path(&self, idx: usize) -> Vec<u8> {
        let mut p = Vec::new();
        let mut i = idx;
        while let Some(par) = self.records[i].parent {
            p.push(self.records[i].branch);
            i = par;
        }
        p.reverse();
        p
    }

    pub fn is_descendant(&self, idx: usize, ancestor: usize) -> bool {
        let mut i = idx;
        loop {
            if i == ancestor {
                return true;
            }
            match self.records[i].parent {
                Some(p) => i = p,
                None => return false,
            }
        }
    }

    /// Σ over frozen particles of cumulative weight × φ_T at the horizon.
    pub fn evaluate(&self, phi: &dyn PhaseField<D>) -> Result<f64> {
        self.check_leaves()?;
        Ok(self
            .records
            .iter()
            .filter(|r| r.frozen)
            .map(|r| r.cum_weight * phi.eval(&r.final_state(self.horizon)))
            .sum())
    }

    /// Contribution of the subtree rooted at `idx`, relative to its own
    /// cumulative weight.
    pub fn subtree_value(&self, idx: usize, phi: &dyn PhaseField<D>) -> Result<f64> {
        let w0 = self.records[idx].cum_weight;
        if w0 == 0.0 {
            return Err(invalid("subtree root carries zero weight"));
        }
        Ok((idx..self.records.len())
            .filter(|&j| self.records[j].frozen && self.is_descendant(j, idx))
            .map(|j| {
                let r = &self.records[j];
                r.cum_weight / w0 * phi.eval(&r.final_state(self.horizon))
            })
            .sum())
    }

    fn check_leaves(&self) -> Result<()> {
        let mut has_child = vec![false; self.records.len()];
        for r in &self.records {
            if let Some(p) = r.parent {
                has_child[p] = true;
            }
        }
        for (i, r) in self.records.iter().enumerate() {
            if !r.frozen && !has_child[i] {
                return Err(Error::Invariant(format!("record {i} is an unfrozen leaf")));
            }
        }
        Ok(())
    }

    /// One line per record: path, birth_time, τ, x, k, w, frozen.
    pub fn trace(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.records.iter().enumerate() {
            let path = self.path(i);
            let path = if path.is_empty() {
                "0".to_string()
            } else {
                path.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(".")
            };
            s.push_str(&format!(
                "{path} {:.17e} {:.17e} {:?} {:?} {:.17e} {}\n",
                r.birth_time,
                r.life,
                r.state.x,
                r.state.k,
                r.weight,
                u8::from(r.frozen)
            ));
        }
        s
    }
}

/// Counters for one walk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WalkSummary {
    pub particles: usize,
    pub frozen: usize,
    /// signed-particle events where ξ/γ0 exceeded 1 (outside the support)
    pub overflow_events: usize,
}

#[derive(Clone, Copy, Debug)]
struct Child<const D: usize> {
    branch: u8,
    k: [f64; D],
    weight: f64,
}

#[derive(Clone, Copy, Debug)]
struct Pending<const D: usize> {
    parent: Option<usize>,
    branch: u8,
    birth_time: f64,
    state: PhaseState<D>,
    weight: f64,
    cum_weight: f64,
}

/// One configured estimator: kernel, variant, clock, horizon and k-support.
pub struct Brw<'a, const D: usize, M: PotentialModel<D>> {
    kernel: &'a Kernel<D, M>,
    spa: Option<&'a SpaTables>,
    pub variant: Variant,
    pub gamma0: f64,
    pub horizon: f64,
    pub k_box: SupportBox<D>,
    pub record_cap: usize,
    clock: Exp<f64>,
}

impl<'a, const D: usize, M: PotentialModel<D>> Brw<'a, D, M> {
    /// Checks the feasibility gates: γ0 ≥ ξ̆ and, for the stationary-phase
    /// variants, γ0 ≥ 2η̆(2π/λ0)^{(n−1)/2}.
    pub fn new(
        kernel: &'a Kernel<D, M>,
        spa: Option<&'a SpaTables>,
        variant: Variant,
        gamma0: f64,
        horizon: f64,
        k_box: SupportBox<D>,
        xi_breve: f64,
    ) -> Result<Self> {
        if !(gamma0 > 0.0) || !gamma0.is_finite() {
            return Err(invalid(format!("gamma0 must be finite and positive, got {gamma0}")));
        }
        if !(horizon.is_finite()) {
            return Err(invalid("horizon must be finite"));
        }
        if gamma0 < xi_breve * (1.0 - 1e-12) {
            return Err(Error::Feasibility(format!(
                "gamma0 < xi_breve ({gamma0} < {xi_breve})"
            )));
        }
        if variant.spa() {
            let s = spa.ok_or_else(|| invalid("stationary-phase variants need SPA tables"))?;
            let floor = s.gamma0_floor(D);
            if gamma0 < floor {
                return Err(Error::Feasibility(format!(
                    "gamma0 < 2*eta_breve*(2pi/lambda0)^((n-1)/2) ({gamma0} < {floor})"
                )));
            }
        }
        Ok(Self {
            kernel,
            spa,
            variant,
            gamma0,
            horizon,
            k_box,
            record_cap: 1_000_000,
            clock: Exp::new(gamma0).expect("checked positive"),
        })
    }

    pub fn with_record_cap(mut self, cap: usize) -> Self {
        self.record_cap = cap;
        self
    }

    pub fn kernel(&self) -> &Kernel<D, M> {
        self.kernel
    }

    /// Depth-first generation of one family history; `visit` sees each
    /// record once its life length is known, with its index.
    pub fn walk<R: Rng + ?Sized>(
        &self,
        root: PhaseState<D>,
        t0: f64,
        rng: &mut R,
        visit: &mut dyn FnMut(usize, &ParticleRecord<D>),
    ) -> Result<WalkSummary> {
        if !(t0 <= self.horizon) {
            return Err(invalid(format!("start time {t0} is past the horizon {}", self.horizon)));
        }
        let mut summary = WalkSummary::default();
        let mut stack = vec![Pending {
            parent: None,
            branch: 0,
            birth_time: t0,
            state: root,
            weight: 1.0,
            cum_weight: 1.0,
        }];
        let mut children: Vec<Child<D>> = Vec::with_capacity(8);
        while let Some(p) = stack.pop() {
            if summary.particles >= self.record_cap {
                return Err(Error::RunawayTree { cap: self.record_cap });
            }
            let life = self.clock.sample(rng);
            let frozen = p.birth_time + life >= self.horizon;
            let rec = ParticleRecord {
                parent: p.parent,
                branch: p.branch,
                birth_time: p.birth_time,
                life,
                state: p.state,
                weight: p.weight,
                cum_weight: p.cum_weight,
                frozen,
            };
            debug_assert!(
                !self.variant.signed() || [-1.0, 0.0, 1.0].contains(&rec.cum_weight),
                "signed weight outside {{-1,0,1}}"
            );
            let idx = summary.particles;
            summary.particles += 1;
            visit(idx, &rec);
            if frozen {
                summary.frozen += 1;
                continue;
            }
            let death = p.birth_time + life;
            let at_death = p.state.drifted(life);
            children.clear();
            self.spawn(&at_death, death, rng, &mut children, &mut summary)?;
            // reversed so the lowest branch label is expanded first
            for c in children.iter().rev() {
                stack.push(Pending {
                    parent: Some(idx),
                    branch: c.branch,
                    birth_time: death,
                    state: PhaseState { x: at_death.x, k: c.k },
                    weight: c.weight,
                    cum_weight: p.cum_weight * branch_sign(c.branch) * c.weight,
                });
            }
        }
        Ok(summary)
    }

    /// Full family history with every record.
    pub fn grow_family<R: Rng + ?Sized>(&self, root: PhaseState<D>, t0: f64, rng: &mut R) -> Result<FamilyTree<D>> {
        let mut records = Vec::new();
        self.walk(root, t0, rng, &mut |_, r| records.push(*r))?;
        Ok(FamilyTree {
            variant: self.variant,
            root,
            start_time: t0,
            horizon: self.horizon,
            records,
        })
    }

    /// Estimator value of one tree, accumulated while walking.
    pub fn estimate_tree<R: Rng + ?Sized>(
        &self,
        root: PhaseState<D>,
        t0: f64,
        phi: &dyn PhaseField<D>,
        rng: &mut R,
    ) -> Result<f64> {
        let mut acc = 0.0;
        let horizon = self.horizon;
        self.walk(root, t0, rng, &mut |_, r| {
            if r.frozen {
                acc += r.cum_weight * phi.eval(&r.final_state(horizon));
            }
        })?;
        Ok(acc)
    }

    /// Mean, variance and standard error of `n_trees` independent trees from
    /// (q, t0). Tree i uses stream i of `seed`.
    pub fn first_moment(
        &self,
        q: PhaseState<D>,
        t0: f64,
        phi: &dyn PhaseField<D>,
        n_trees: usize,
        seed: u64,
    ) -> Result<Moments> {
        if n_trees < 2 {
            return Err(invalid("first_moment needs at least two trees"));
        }
        let values = self.tree_values(n_trees, seed, |rng| self.estimate_tree(q, t0, phi, rng))?;
        Ok(Welford::from_slice(&values).into())
    }

    /// Runs `f` once per tree in parallel and returns the values in tree order.
    pub fn tree_values(
        &self,
        n_trees: usize,
        seed: u64,
        f: impl Fn(&mut crate::rng::TreeRng) -> Result<f64> + Sync,
    ) -> Result<Vec<f64>> {
        (0..n_trees as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = tree_rng(seed, i);
                f(&mut rng)
            })
            .collect()
    }

    fn spawn<R: Rng + ?Sized>(
        &self,
        q: &PhaseState<D>,
        t: f64,
        rng: &mut R,
        out: &mut Vec<Child<D>>,
        summary: &mut WalkSummary,
    ) -> Result<()> {
        match (self.variant.spa(), self.spa) {
            (true, Some(spa)) => {
                let z = self.kernel.model.z(&q.x);
                let zn = norm(&z);
                if zn < spa.z_min {
                    self.jump_children(q, t, None, rng, out, summary)?;
                } else {
                    let rho = spa.lambda0 / zn;
                    self.jump_children(q, t, Some(rho), rng, out, summary)?;
                    self.phase_children(q, t, spa, &z, zn, rho, rng, out);
                }
                out.push(Child {
                    branch: 5,
                    k: q.k,
                    weight: 1.0,
                });
            }
            _ => {
                self.jump_children(q, t, None, rng, out, summary)?;
                out.push(Child {
                    branch: 3,
                    k: q.k,
                    weight: 1.0,
                });
            }
        }
        Ok(())
    }

    /// Branches 1 and 2: jumps from V^±/ξ with weight ξ/γ0 (wp) or unit
    /// weight with that probability (sp); `cap` keeps 2|Δk| < cap.
    fn jump_children<R: Rng + ?Sized>(
        &self,
        q: &PhaseState<D>,
        t: f64,
        cap: Option<f64>,
        rng: &mut R,
        out: &mut Vec<Child<D>>,
        summary: &mut WalkSummary,
    ) -> Result<()> {
        let xi = self.kernel.xi(&q.x, t);
        if !(xi > 0.0) {
            return Ok(());
        }
        let p = xi / self.gamma0;
        for (branch, part) in [(1u8, Part::Positive), (2u8, Part::Negative)] {
            let draws = if self.variant.signed() {
                if p > 1.0 {
                    summary.overflow_events += 1;
                }
                bernoulli_count(p, rng)
            } else {
                1
            };
            for _ in 0..draws {
                let dk = self.kernel.sample_jump(&q.x, t, part, rng)?;
                if let Some(c) = cap {
                    if !(2.0 * norm(&dk) < c) {
                        continue;
                    }
                }
                let mut k = q.k;
                for i in 0..D {
                    k[i] += dk[i];
                }
                if !self.k_box.contains(&k) {
                    continue;
                }
                out.push(Child {
                    branch,
                    k,
                    weight: if self.variant.signed() { 1.0 } else { p },
                });
            }
        }
        Ok(())
    }

    /// Branches 3 and 4: k ± (r/2)σ⁺ with r from the SPA radial law.
    #[allow(clippy::too_many_arguments)]
    fn phase_children<R: Rng + ?Sized>(
        &self,
        q: &PhaseState<D>,
        t: f64,
        spa: &SpaTables,
        z: &[f64; D],
        zn: f64,
        rho: f64,
        rng: &mut R,
        out: &mut Vec<Child<D>>,
    ) {
        let scale = 2.0 * spa.eta_breve / self.gamma0;
        for (branch, dir) in [(3u8, 1.0), (4u8, -1.0)] {
            let r = spa.sample_radius(rng);
            if !(r > rho) {
                continue;
            }
            let rz = self.re_zeta(r, &q.x, zn, t);
            let sgn = if rz > 0.0 {
                1.0
            } else if rz < 0.0 {
                -1.0
            } else {
                continue;
            };
            let mut k = q.k;
            for i in 0..D {
                k[i] += dir * 0.5 * r * z[i] / zn;
            }
            if !self.k_box.contains(&k) {
                continue;
            }
            let mag = scale * rz.abs();
            if self.variant.signed() {
                if rng.random::<f64>() < mag {
                    out.push(Child { branch, k, weight: sgn });
                }
            } else {
                out.push(Child {
                    branch,
                    k,
                    weight: sgn * mag,
                });
            }
        }
    }

    #[inline]
    fn re_zeta(&self, r: f64, x: &[f64; D], zn: f64, t: f64) -> f64 {
        match self.kernel.model.radial_profile(r, t) {
            Some(h) => {
                let env = self.kernel.model.envelope(r, t);
                if env <= 0.0 {
                    return 0.0;
                }
                // |ψ|/Ψ = |h|/Ψ; equal to 1 for the exact envelope
                re_zeta_radial(D, r * zn, h.signum()) * h.abs() / env
            }
            None => zeta(&self.kernel.model, r, x, t).map(|c| c.re).unwrap_or(0.0),
        }
    }
}

/// Number of unit-weight children with mean p: Bernoulli(p) for p ≤ 1,
/// ⌊p⌋ plus Bernoulli(p − ⌊p⌋) otherwise.
#[inline]
fn bernoulli_count<R: Rng + ?Sized>(p: f64, rng: &mut R) -> usize {
    let whole = p.floor();
    let frac = p - whole;
    whole as usize + usize::from(rng.random::<f64>() < frac)
}
