//! Stationary-phase treatment of the high-frequency part of the kernel:
//! critical directions σ±, the phase weight ζ, the radial mass η̆ and its
//! sampling table, and verification-grade quadrature forms of Θ_V and Θ^{λ0}_V.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::kernel::Kernel;
use crate::model::{norm, PotentialModel};
use crate::quadrature::{adaptive, GaussLegendre, Tolerance};
use crate::tables::RadialTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalPair<const D: usize> {
    pub sigma_plus: [f64; D],
    pub sigma_minus: [f64; D],
}

/// Hyperspherical angles of z (atan2 form), mapped back to a unit vector.
pub fn critical_points<const D: usize>(z: &[f64; D]) -> Result<CriticalPair<D>> {
    let zn = norm(z);
    if !(zn > 0.0) || !zn.is_finite() {
        return Err(invalid("critical points need 0 < |z| < inf"));
    }
    let mut sp = [0.0; D];
    if D == 1 {
        sp[0] = z[0].signum();
    } else {
        // tails[i] = |(z_i, ..., z_{n-1})|
        let mut tails = [0.0; D];
        let mut acc = 0.0;
        for i in (0..D).rev() {
            acc += z[i] * z[i];
            tails[i] = acc.sqrt();
        }
        let mut angles = [0.0; D];
        for i in 0..D - 2 {
            angles[i] = tails[i + 1].atan2(z[i]);
        }
        angles[D - 2] = z[D - 1].atan2(z[D - 2]);
        let mut s = 1.0;
        for i in 0..D - 1 {
            sp[i] = s * angles[i].cos();
            s *= angles[i].sin();
        }
        sp[D - 1] = s;
    }
    Ok(CriticalPair {
        sigma_plus: sp,
        sigma_minus: sp.map(|v| -v),
    })
}

/// ζ(r,x,t) = e^{ir|z|}(2π/(ir|z|))^{(n−1)/2} ψ(rσ⁺,t)/Ψ(r), principal branch.
pub fn zeta<const D: usize, M: PotentialModel<D> + ?Sized>(
    model: &M,
    r: f64,
    x: &[f64; D],
    t: f64,
) -> Result<Complex64> {
    let z = model.z(x);
    let zn = norm(&z);
    if !(r > 0.0) || !(zn > 0.0) {
        return Err(invalid("zeta needs r > 0 and z != 0"));
    }
    let cp = critical_points(&z)?;
    let mut k = [0.0; D];
    for i in 0..D {
        k[i] = r * cp.sigma_plus[i];
    }
    let env = model.envelope(r, t);
    if env <= 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    Ok(zeta_factor(D, r * zn) * model.psi(&k, t) / env)
}

/// e^{ia}(2π/(ia))^{(n−1)/2} for a = r|z| > 0.
#[inline]
pub fn zeta_factor(dim: usize, a: f64) -> Complex64 {
    let p = 0.5 * (dim as f64 - 1.0);
    let modulus = (2.0 * PI / a).powf(p);
    // arg of 1/i is −π/2
    Complex64::from_polar(modulus, a - 0.5 * PI * p)
}

/// Real part of ζ for a radial symbol ψ = −i·h with Ψ = |h|; `h_sign` is the
/// sign of h(r).
#[inline]
pub fn re_zeta_radial(dim: usize, a: f64, h_sign: f64) -> f64 {
    // (−i)·e^{iθ} has real part sin θ
    let p = 0.5 * (dim as f64 - 1.0);
    h_sign * (2.0 * PI / a).powf(p) * (a - 0.5 * PI * p).sin()
}

/// Tables for the σ⁺-directed branches.
#[derive(Clone, Debug)]
pub struct SpaTables {
    pub lambda0: f64,
    pub eta_breve: f64,
    /// law of r with density r^{n−1}Ψ(r)χ(r)/η̆ on [0, 3R]
    pub radial: RadialTable,
    /// below this |z| an event falls back to the unrestricted jump kernel
    pub z_min: f64,
}

/// η̆ = ∫ r^{n−1}Ψ(r)χ(r) dr by adaptive quadrature, plus the sampling table.
pub fn eta_breve<const D: usize, M: PotentialModel<D>>(
    kernel: &Kernel<D, M>,
    knots: usize,
) -> Result<(f64, RadialTable)> {
    let support = kernel.trunc.support();
    let mut breaks = vec![0.0, 2.0 * kernel.trunc.radius, support];
    let kinks: Vec<f64> = kernel
        .model
        .envelope_breaks()
        .into_iter()
        .filter(|&b| b > 0.0 && b < support)
        .collect();
    breaks.extend(kinks.iter().copied());
    let density = |r: f64| r.powi(D as i32 - 1) * kernel.model.envelope(r, 0.0) * kernel.trunc.taper(r);
    let (eta, _) = adaptive("eta_breve", &breaks, Tolerance::rel(1e-10).with_abs(1e-300), density)
        .map_err(|e| match e {
            Error::Quadrature { estimate, error, .. } => Error::Quadrature {
                what: "eta_breve (radial mass diverges?)".into(),
                estimate,
                error,
            },
            other => other,
        })?;
    let mut extra = kinks;
    extra.push(2.0 * kernel.trunc.radius);
    let table = RadialTable::build(support, knots, &extra, density)?;
    Ok((eta, table))
}

impl SpaTables {
    pub fn build<const D: usize, M: PotentialModel<D>>(
        kernel: &Kernel<D, M>,
        lambda0: f64,
        z_min: f64,
    ) -> Result<Self> {
        if !(lambda0 > 1.0) {
            return Err(Error::Feasibility(format!("lambda0 must exceed 1, got {lambda0}")));
        }
        if D < 2 {
            return Err(invalid("the stationary-phase branches need n >= 2"));
        }
        if !(z_min > 0.0) {
            return Err(invalid("z_min must be positive"));
        }
        let (eta_breve, radial) = eta_breve(kernel, 4096)?;
        Ok(Self {
            lambda0,
            eta_breve,
            radial,
            z_min,
        })
    }

    /// Draws r from r^{n−1}Ψ(r)χ(r)/η̆.
    #[inline]
    pub fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.radial.sample(rng)
    }

    /// Lower bound on γ0 from the σ⁺ branches: 2η̆(2π/λ0)^{(n−1)/2}.
    pub fn gamma0_floor(&self, dim: usize) -> f64 {
        2.0 * self.eta_breve * (2.0 * PI / self.lambda0).powf(0.5 * (dim as f64 - 1.0))
    }
}

/// Θ_V[φ](k) = ∫V_{W,R}(x, k−k′)φ(k′)dk′ at each output point, by adaptive
/// radial quadrature and a Gauss–Legendre angular rule (two dimensions).
/// Verification grade only.
pub fn apply_theta_hjd<M: PotentialModel<2>>(
    kernel: &Kernel<2, M>,
    phi: &(dyn Fn(&[f64; 2]) -> f64 + Sync),
    x: &[f64; 2],
    t: f64,
    k_out: &[[f64; 2]],
) -> Result<Vec<f64>> {
    apply_theta_capped(kernel, phi, x, t, k_out, kernel.trunc.support())
}

/// Θ restricted to jumps |k−k′| < cap.
fn apply_theta_capped<M: PotentialModel<2>>(
    kernel: &Kernel<2, M>,
    phi: &(dyn Fn(&[f64; 2]) -> f64 + Sync),
    x: &[f64; 2],
    t: f64,
    k_out: &[[f64; 2]],
    cap: f64,
) -> Result<Vec<f64>> {
    let zn = norm(&kernel.model.z(x));
    let cap = cap.min(kernel.trunc.support());
    // angular resolution follows the phase 2r|z| at the outer radius and
    // resolves features of φ down to a width of about 0.1
    let n_theta = (((2.0 * cap * zn + 16.0 * cap + 8.0) * 1.5) as usize).clamp(64, 8192);
    let gl = GaussLegendre::new(n_theta.div_ceil(4).max(16));
    let mut breaks = vec![0.0, cap];
    for b in kernel.model.envelope_breaks() {
        if 0.5 * b < cap {
            breaks.push(0.5 * b);
        }
    }
    if 2.0 * kernel.trunc.radius < cap {
        breaks.push(2.0 * kernel.trunc.radius);
    }
    let tol = Tolerance {
        rel: 1e-9,
        abs: 1e-13,
        max_pieces: 20_000,
    };
    let mut out = Vec::with_capacity(k_out.len());
    for k in k_out {
        // V(k−k′) with k′ = k − q gives ∫V(q)φ(k−q)dq
        let (v, _) = adaptive("apply_theta_hjd", &breaks, tol, |r| {
            let mut s = 0.0;
            for q in 0..4 {
                let a = 0.5 * PI * q as f64;
                s += gl.integrate(a, a + 0.5 * PI, |th| {
                    let (sn, cs) = th.sin_cos();
                    let dq = [r * cs, r * sn];
                    kernel.wigner(x, &dq, t) * phi(&[k[0] - dq[0], k[1] - dq[1]])
                });
            }
            s * r
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Θ^{λ0}_V[φ]: the kernel restricted to 2|k−k′| < λ0/|z| plus the combined
/// real stationary-phase form of the high-frequency part.
pub fn apply_theta_spa<M: PotentialModel<2>>(
    kernel: &Kernel<2, M>,
    spa: &SpaTables,
    phi: &(dyn Fn(&[f64; 2]) -> f64 + Sync),
    x: &[f64; 2],
    t: f64,
    k_out: &[[f64; 2]],
) -> Result<Vec<f64>> {
    let z = kernel.model.z(x);
    let zn = norm(&z);
    if !(zn > 0.0) {
        return Err(invalid("apply_theta_spa needs z(x) != 0"));
    }
    let rho = spa.lambda0 / zn;
    let low = apply_theta_capped(kernel, phi, x, t, k_out, 0.5 * rho)?;
    let support = kernel.trunc.support();
    if rho >= support {
        return Ok(low);
    }
    let sp = critical_points(&z)?.sigma_plus;
    let mut breaks = vec![rho, support];
    for b in kernel.model.envelope_breaks() {
        if b > rho && b < support {
            breaks.push(b);
        }
    }
    if 2.0 * kernel.trunc.radius > rho {
        breaks.push(2.0 * kernel.trunc.radius);
    }
    let tol = Tolerance {
        rel: 1e-10,
        abs: 1e-14,
        max_pieces: 20_000,
    };
    let mut out = Vec::with_capacity(k_out.len());
    for (k, lo) in k_out.iter().zip(low) {
        let (hi, _) = adaptive("apply_theta_spa", &breaks, tol, |r| {
            let rz = zeta(&kernel.model, r, x, t).map(|c| c.re).unwrap_or(0.0);
            let w = 2.0 * rz * r * kernel.model.envelope(r, t) * kernel.trunc.taper(r);
            let plus = phi(&[k[0] + 0.5 * r * sp[0], k[1] + 0.5 * r * sp[1]]);
            let minus = phi(&[k[0] - 0.5 * r * sp[0], k[1] - 0.5 * r * sp[1]]);
            w * (plus - minus)
        })?;
        // Θ = −(jump operator), the high part enters with a minus sign
        out.push(lo - hi);
    }
    Ok(out)
}
