//! Piecewise-linear tabulated probability densities with exact inverse-CDF
//! sampling. Used for the fan-angle intensity distribution and the heel model.

use rand::Rng;

use crate::error::{Error, Result};

/// A normalized piecewise-linear density on tabulated knots.
#[derive(Debug, Clone)]
pub struct TabulatedPdf {
    x: Vec<f64>,
    f: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedPdf {
    /// Build from knots `(x, weight)`. Weights must be non-negative with a
    /// positive integral; they are normalized so the trapezoid integral is 1.
    pub fn new(x: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != weights.len() {
            return Err(Error::Config("pdf table needs >= 2 matched knots".into()));
        }
        for w in x.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config("pdf knots must be strictly increasing".into()));
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("pdf weights must be non-negative".into()));
        }
        let mut total = 0.0;
        for i in 0..x.len() - 1 {
            total += 0.5 * (weights[i] + weights[i + 1]) * (x[i + 1] - x[i]);
        }
        if !(total > 0.0) {
            return Err(Error::Config("pdf weights integrate to zero".into()));
        }
        let f: Vec<f64> = weights.iter().map(|&w| w / total).collect();
        let mut cdf = Vec::with_capacity(x.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..x.len() - 1 {
            acc += 0.5 * (f[i] + f[i + 1]) * (x[i + 1] - x[i]);
            cdf.push(acc);
        }
        // guard the top against rounding
        let n = cdf.len();
        cdf[n - 1] = 1.0;
        Ok(TabulatedPdf { x, f, cdf })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.f)
    }

    /// Density at `v` by linear interpolation; zero outside the domain.
    pub fn density(&self, v: f64) -> f64 {
        let (lo, hi) = self.domain();
        if v < lo || v > hi {
            return 0.0;
        }
        let i = self.cell_of(v);
        let t = (v - self.x[i]) / (self.x[i + 1] - self.x[i]);
        self.f[i] + t * (self.f[i + 1] - self.f[i])
    }

    /// Exact integral of the density over one cell.
    pub fn cell_mass(&self, i: usize) -> f64 {
        0.5 * (self.f[i] + self.f[i + 1]) * (self.x[i + 1] - self.x[i])
    }

    pub fn num_cells(&self) -> usize {
        self.x.len() - 1
    }

    /// Exact integral of the density over `[a, b]` (clipped to the domain).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.domain();
        let a = a.max(lo);
        let b = b.min(hi);
        if !(b > a) {
            return 0.0;
        }
        let seg = |v: f64| -> f64 {
            // integral from x[0] to v
            let i = self.cell_of(v);
            let mut acc = self.cdf[i];
            let dx = v - self.x[i];
            let slope = (self.f[i + 1] - self.f[i]) / (self.x[i + 1] - self.x[i]);
            acc += self.f[i] * dx + 0.5 * slope * dx * dx;
            acc
        };
        seg(b) - seg(a)
    }

    /// Inverse-CDF sample.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        let i = match self
            .cdf
            .binary_search_by(|c| c.partial_cmp(&u).expect("cdf is finite"))
        {
            Ok(k) => k.min(self.x.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.x.len() - 2),
        };
        let r = u - self.cdf[i];
        let dx = self.x[i + 1] - self.x[i];
        let f0 = self.f[i];
        let slope = (self.f[i + 1] - f0) / dx;
        let tau = if slope.abs() * dx < 1e-12 * (f0 + 1e-300) {
            r / f0
        } else {
            let disc = (f0 * f0 + 2.0 * slope * r).max(0.0);
            (disc.sqrt() - f0) / slope
        };
        (self.x[i] + tau.clamp(0.0, dx)).min(self.x[self.x.len() - 1])
    }

    fn cell_of(&self, v: f64) -> usize {
        let n = self.x.len();
        if v >= self.x[n - 2] {
            return n - 2;
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.x[mid] <= v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}
