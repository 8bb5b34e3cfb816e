//! Monotone interpolation tables and tabulated radial distributions.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::quadrature::GaussLegendre;

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes; preserves
/// monotonicity of the data.
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(invalid("pchip needs at least two matching abscissae/ordinates"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("pchip abscissae must be strictly increasing"));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] <= 0.0 {
                    d[i] = 0.0;
                } else {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let mut d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        d = 0.0;
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        d = 3.0 * d0;
    }
    d
}

/// A radial distribution on `[0, r_max]` with density proportional to a given
/// nonnegative function, tabulated on log-spaced knots and sampled by
/// inverse-CDF.
#[derive(Clone, Debug)]
pub struct RadialTable {
    /// knots r_i, starting at 0
    pub r: Vec<f64>,
    /// normalized CDF at the knots
    pub cdf: Vec<f64>,
    /// unnormalized total mass
    pub mass: f64,
    inverse: Option<Pchip>,
    forward: Option<Pchip>,
}

impl RadialTable {
    /// Tabulates `density` on `knots` log-spaced points over `(0, r_max]`
    /// plus the origin and any `extra` breakpoints (kinks of the density).
    pub fn build(
        r_max: f64,
        knots: usize,
        extra: &[f64],
        density: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(invalid("radial table needs a finite positive r_max"));
        }
        if knots < 8 {
            return Err(invalid("radial table needs at least 8 knots"));
        }
        let lo = r_max * 1e-6;
        let ratio = (r_max / lo).powf(1.0 / (knots - 1) as f64);
        let mut r: Vec<f64> = Vec::with_capacity(knots + extra.len() + 1);
        r.push(0.0);
        let mut v = lo;
        for _ in 0..knots {
            r.push(v.min(r_max));
            v *= ratio;
        }
        r.extend(extra.iter().copied().filter(|&e| e > 0.0 && e < r_max));
        r.push(r_max);
        r.sort_by(f64::total_cmp);
        r.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * r_max);

        let gl = GaussLegendre::new(8);
        let mut cum = Vec::with_capacity(r.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in r.windows(2) {
            acc += gl.integrate(w[0], w[1], |s| density(s).max(0.0));
            cum.push(acc);
        }
        let mass = acc;
        if !mass.is_finite() {
            return Err(invalid("radial density is not integrable"));
        }
        let cdf: Vec<f64> = if mass > 0.0 { cum.iter().map(|c| c / mass).collect() } else { cum };
        Self::from_parts(r, cdf, mass.max(0.0))
    }

    /// Rebuilds the interpolants from stored knots, normalized CDF and mass.
    pub fn from_parts(r: Vec<f64>, cdf: Vec<f64>, mass: f64) -> Result<Self> {
        if r.len() != cdf.len() || r.len() < 2 {
            return Err(invalid("radial table knots and CDF differ in length"));
        }
        if !mass.is_finite() || mass < 0.0 {
            return Err(invalid("radial table mass must be finite and non-negative"));
        }
        if mass == 0.0 {
            return Ok(Self {
                r,
                cdf,
                mass: 0.0,
                inverse: None,
                forward: None,
            });
        }
        // the inverse interpolant needs strictly increasing CDF values; drop
        // knots inside zero-density stretches
        let mut ux = Vec::with_capacity(cdf.len());
        let mut uy = Vec::with_capacity(cdf.len());
        for (c, rr) in cdf.iter().zip(&r) {
            if ux.last().is_none_or(|&last: &f64| *c > last) {
                ux.push(*c);
                uy.push(*rr);
            }
        }
        let inverse = Some(Pchip::new(ux, uy)?);
        let forward = Some(Pchip::new(r.clone(), cdf.clone())?);
        Ok(Self {
            r,
            cdf,
            mass,
            inverse,
            forward,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.inverse.is_none()
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().expect("table has knots")
    }

    /// r with CDF(r) = u.
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.inverse {
            Some(p) => p.eval(u.clamp(0.0, 1.0)).clamp(0.0, self.r_max()),
            None => 0.0,
        }
    }

    pub fn cdf_at(&self, r: f64) -> f64 {
        match &self.forward {
            Some(p) => p.eval(r).clamp(0.0, 1.0),
            None => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}
