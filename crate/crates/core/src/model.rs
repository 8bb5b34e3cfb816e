//! Potential models, phase-space states and the Gaussian packet used as
//! initial and terminal data. Units are fixed to ħ = m = 1.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseState<const D: usize> {
    pub x: [f64; D],
    pub k: [f64; D],
}

impl<const D: usize> PhaseState<D> {
    pub fn new(x: [f64; D], k: [f64; D]) -> Result<Self> {
        if x.iter().chain(k.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("phase state components must be finite"));
        }
        Ok(Self { x, k })
    }

    /// Free flight without argument checks; `dt` may be any finite value.
    #[inline]
    pub fn drifted(&self, dt: f64) -> Self {
        let mut x = self.x;
        for (xi, ki) in x.iter_mut().zip(&self.k) {
            *xi += ki * dt;
        }
        Self { x, k: self.k }
    }
}

/// Straight-line motion `(x + k dt, k)`.
pub fn advect<const D: usize>(q: &PhaseState<D>, dt: f64) -> Result<PhaseState<D>> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(invalid(format!("advect needs a finite dt >= 0, got {dt}")));
    }
    Ok(q.drifted(dt))
}

#[inline]
pub fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm<const D: usize>(a: &[f64; D]) -> f64 {
    dot(a, a).sqrt()
}

/// Everything potential-specific: V, the displacement z(x), the symbol ψ and
/// its radial majorant Ψ.
///
/// Time arguments are threaded through for future time-dependent models; the
/// shipped models ignore them.
pub trait PotentialModel<const D: usize>: Send + Sync {
    fn name(&self) -> String;

    fn potential(&self, x: &[f64; D], t: f64) -> f64;

    fn z(&self, x: &[f64; D]) -> [f64; D];

    fn psi(&self, k: &[f64; D], t: f64) -> Complex64;

    /// Radial majorant Ψ(r) ≥ |ψ(k)| for |k| = r.
    fn envelope(&self, r: f64, t: f64) -> f64;

    /// For radial models with ψ(k) = −i·h(|k|), the real profile h(r).
    fn radial_profile(&self, _r: f64, _t: f64) -> Option<f64> {
        None
    }

    /// Radii where the profile or the envelope has a kink.
    fn envelope_breaks(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Stable textual key of every parameter, used to name cache files.
    fn params_key(&self) -> String;
}

/// Morse potential −2e^{−κ(|x−xA|−r0)} + e^{−2κ(|x−xA|−r0)} in D dimensions.
#[derive(Clone, Debug)]
pub struct Morse<const D: usize> {
    pub x_a: [f64; D],
    pub r0: f64,
    pub kappa: f64,
    c_n: f64,
}

impl<const D: usize> Morse<D> {
    pub fn new(x_a: [f64; D], r0: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !r0.is_finite() || x_a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("Morse needs kappa > 0 and finite r0, xA"));
        }
        if D == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let p = 0.5 * (D as f64 + 1.0);
        let c_n = libm::tgamma(p) * std::f64::consts::PI.powf(-p);
        Ok(Self { x_a, r0, kappa, c_n })
    }

    /// Γ((n+1)/2)·π^{−(n+1)/2}; 1/(2π) in two dimensions.
    pub fn c_n(&self) -> f64 {
        self.c_n
    }

    /// Real profile h with ψ(k) = −i·h(|k|).
    #[inline]
    pub fn h(&self, r: f64) -> f64 {
        let p = 0.5 * (D as f64 + 1.0);
        let k2 = self.kappa * self.kappa;
        let r2 = r * r;
        let a = -(self.kappa * self.r0).exp() * (r2 + k2).powf(-p);
        let b = (2.0 * self.kappa * self.r0).exp() * (r2 + 4.0 * k2).powf(-p);
        self.c_n * 2.0 * self.kappa * (a + b)
    }

    /// Radius where h changes sign, if any.
    pub fn h_zero(&self) -> Option<f64> {
        let p = 0.5 * (D as f64 + 1.0);
        let q = (self.kappa * self.r0 / p).exp();
        if q <= 1.0 || q >= 4.0 {
            return None;
        }
        Some(self.kappa * ((4.0 - q) / (q - 1.0)).sqrt())
    }
}

impl<const D: usize> PotentialModel<D> for Morse<D> {
    fn name(&self) -> String {
        "morse".into()
    }

    fn potential(&self, x: &[f64; D], _t: f64) -> f64 {
        let mut d2 = 0.0;
        for i in 0..D {
            d2 += (x[i] - self.x_a[i]).powi(2);
        }
        let s = d2.sqrt() - self.r0;
        -2.0 * (-self.kappa * s).exp() + (-2.0 * self.kappa * s).exp()
    }

    #[inline]
    fn z(&self, x: &[f64; D]) -> [f64; D] {
        let mut z = [0.0; D];
        for i in 0..D {
            z[i] = x[i] - self.x_a[i];
        }
        z
    }

    fn psi(&self, k: &[f64; D], _t: f64) -> Complex64 {
        Complex64::new(0.0, -self.h(norm(k)))
    }

    fn envelope(&self, r: f64, _t: f64) -> f64 {
        self.h(r).abs()
    }

    fn radial_profile(&self, r: f64, _t: f64) -> Option<f64> {
        Some(self.h(r))
    }

    fn envelope_breaks(&self) -> Vec<f64> {
        self.h_zero().into_iter().collect()
    }

    fn params_key(&self) -> String {
        format!(
            "morse;n={D};xa={:?};r0={:e};kappa={:e}",
            self.x_a, self.r0, self.kappa
        )
    }
}

/// V ≡ 0; z(x) = x.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPotential<const D: usize>;

impl<const D: usize> PotentialModel<D> for ZeroPotential<D> {
    fn name(&self) -> String {
        "zero".into()
    }
    fn potential(&self, _x: &[f64; D], _t: f64) -> f64 {
        0.0
    }
    fn z(&self, x: &[f64; D]) -> [f64; D] {
        *x
    }
    fn psi(&self, _k: &[f64; D], _t: f64) -> Complex64 {
        Complex64::new(0.0, 0.0)
    }
    fn envelope(&self, _r: f64, _t: f64) -> f64 {
        0.0
    }
    fn radial_profile(&self, _r: f64, _t: f64) -> Option<f64> {
        Some(0.0)
    }
    fn params_key(&self) -> String {
        format!("zero;n={D}")
    }
}

/// A phase-space test function φ_T.
pub trait PhaseField<const D: usize>: Send + Sync {
    fn eval(&self, q: &PhaseState<D>) -> f64;
}

impl<const D: usize, F> PhaseField<D> for F
where
    F: Fn(&PhaseState<D>) -> f64 + Send + Sync,
{
    fn eval(&self, q: &PhaseState<D>) -> f64 {
        self(q)
    }
}

/// `prefactor · exp(−ax|x−x0|² − ak|k−k0|²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPacket<const D: usize> {
    pub x0: [f64; D],
    pub k0: [f64; D],
    pub ax: f64,
    pub ak: f64,
    pub prefactor: f64,
}

impl<const D: usize> GaussianPacket<D> {
    /// Packet scaled to unit L¹ norm.
    pub fn normalized(x0: [f64; D], k0: [f64; D], ax: f64, ak: f64) -> Result<Self> {
        if !(ax > 0.0 && ak > 0.0) {
            return Err(invalid("packet coefficients must be positive"));
        }
        let mut p = Self {
            x0,
            k0,
            ax,
            ak,
            prefactor: 1.0,
        };
        p.prefactor = 1.0 / p.l1_norm();
        Ok(p)
    }

    pub fn l1_norm(&self) -> f64 {
        let pi = std::f64::consts::PI;
        self.prefactor.abs() * ((pi / self.ax) * (pi / self.ak)).powf(0.5 * D as f64)
    }

    /// ∫ f² dx dk.
    pub fn l2_norm_sq(&self) -> f64 {
        let pi = std::f64::consts::PI;
        self.prefactor.powi(2) * ((pi / (2.0 * self.ax)) * (pi / (2.0 * self.ak))).powf(0.5 * D as f64)
    }

    pub fn sup_norm(&self) -> f64 {
        self.prefactor.abs()
    }

    pub fn eval(&self, q: &PhaseState<D>) -> f64 {
        let mut ex = 0.0;
        let mut ek = 0.0;
        for i in 0..D {
            ex += (q.x[i] - self.x0[i]).powi(2);
            ek += (q.k[i] - self.k0[i]).powi(2);
        }
        self.prefactor * (-self.ax * ex - self.ak * ek).exp()
    }

    /// Exact draw from the normalized |f|.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState<D> {
        let sx = (0.5 / self.ax).sqrt();
        let sk = (0.5 / self.ak).sqrt();
        let mut x = self.x0;
        let mut k = self.k0;
        for v in x.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += sx * g;
        }
        for v in k.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += sk * g;
        }
        PhaseState { x, k }
    }
}

impl<const D: usize> PhaseField<D> for GaussianPacket<D> {
    fn eval(&self, q: &PhaseState<D>) -> f64 {
        GaussianPacket::eval(self, q)
    }
}

/// The two-dimensional experiment: Morse centre (10,10), r0 = 0.5, κ = 0.5.
pub fn experiment_morse() -> Morse<2> {
    Morse::new([10.0, 10.0], 0.5, 0.5).expect("valid constants")
}

/// Packet centred at x0 = (8,12), k0 = (0.5,−0.5) with coefficients 0.5 and 2
/// and prefactor 1/π².
pub fn experiment_packet() -> GaussianPacket<2> {
    GaussianPacket {
        x0: [8.0, 12.0],
        k0: [0.5, -0.5],
        ax: 0.5,
        ak: 2.0,
        prefactor: 1.0 / (std::f64::consts::PI * std::f64::consts::PI),
    }
}
