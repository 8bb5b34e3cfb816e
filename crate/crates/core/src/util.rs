use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

/// Values on a uniform grid x0 + i·dx, read back with 4-point Lagrange
/// interpolation (one-sided stencils at the ends, clamped outside).
#[derive(Clone, Debug, PartialEq)]
pub struct UniformTable {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl UniformTable {
    pub fn new(x0: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 || !(dx > 0.0) {
            return Err(invalid("uniform table needs dx > 0 and at least 4 values"));
        }
        Ok(Self { x0, dx, values })
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.dx * (self.values.len() - 1) as f64
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let s = ((x - self.x0) / self.dx).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).clamp(1, n - 3) - 1;
        let u = s - i as f64;
        let v = &self.values[i..i + 4];
        // nodes at 0,1,2,3
        let l0 = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0;
        let l1 = u * (u - 2.0) * (u - 3.0) / 2.0;
        let l2 = -u * (u - 1.0) * (u - 3.0) / 2.0;
        let l3 = u * (u - 1.0) * (u - 2.0) / 6.0;
        l0 * v[0] + l1 * v[1] + l2 * v[2] + l3 * v[3]
    }
}

/// Uniform direction on S^{D−1}.
#[inline]
pub fn random_unit_vector<const D: usize, R: Rng + ?Sized>(rng: &mut R) -> [f64; D] {
    let mut v = [0.0; D];
    if D == 1 {
        v[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return v;
    }
    if D == 2 {
        let th = std::f64::consts::TAU * rng.random::<f64>();
        let (s, c) = th.sin_cos();
        v[0] = c;
        v[1] = s;
        return v;
    }
    loop {
        let mut n2 = 0.0;
        for c in v.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *c = g;
            n2 += g * g;
        }
        if n2 > 1e-300 {
            let inv = 1.0 / n2.sqrt();
            for c in v.iter_mut() {
                *c *= inv;
            }
            return v;
        }
    }
}
