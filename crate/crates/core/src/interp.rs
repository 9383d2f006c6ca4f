//! Piecewise cubic Hermite interpolation.
//!
//! Nodes carry values and slopes. Slopes either come from the caller (for
//! curves produced by an ODE solver, where the slope is known exactly) or from
//! the shape-preserving Fritsch–Carlson rule used by PCHIP. Outside the node
//! range the curve is continued linearly with the end slope.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hermite {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Hermite {
    /// Builds from nodes with known slopes. `xs` must be strictly increasing.
    pub fn with_slopes(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>) -> Self {
        assert!(xs.len() >= 2, "need at least two nodes");
        assert!(xs.len() == ys.len() && ys.len() == ds.len());
        debug_assert!(xs.windows(2).all(|w| w[1] > w[0]));
        Self { xs, ys, ds }
    }

    /// Monotone cubic (PCHIP) through the given points.
    pub fn pchip(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let ds = pchip_slopes(&xs, &ys);
        Self::with_slopes(xs, ys, ds)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn slopes(&self) -> &[f64] {
        &self.ds
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).1
    }

    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return (self.ys[0] + self.ds[0] * (x - self.xs[0]), self.ds[0]);
        }
        if x >= self.xs[n - 1] {
            return (
                self.ys[n - 1] + self.ds[n - 1] * (x - self.xs[n - 1]),
                self.ds[n - 1],
            );
        }
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.ds[i] * h, self.ds[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let value = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let deriv = (d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1) / h;
        (value, deriv)
    }

    /// Inverse of an increasing interpolant: the `x` with `eval(x) == y`.
    /// Values below the first node or above the last one are inverted on
    /// the linear continuation.
    pub fn inverse_increasing(&self, y: f64) -> f64 {
        let n = self.xs.len();
        if y <= self.ys[0] {
            return self.xs[0] + (y - self.ys[0]) / self.ds[0];
        }
        if y >= self.ys[n - 1] {
            return self.xs[n - 1] + (y - self.ys[n - 1]) / self.ds[n - 1];
        }
        let i = self.ys.partition_point(|&v| v <= y).saturating_sub(1).min(n - 2);
        let (mut lo, mut hi) = (self.xs[i], self.xs[i + 1]);
        // secant start, then safeguarded Newton
        let mut x = lo + (y - self.ys[i]) * (hi - lo) / (self.ys[i + 1] - self.ys[i]);
        for _ in 0..60 {
            let (v, d) = self.eval_with_derivative(x);
            let f = v - y;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if f.abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) || hi - lo <= 1e-15 * hi.abs() {
                break;
            }
            let newton = x - f / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }
}

/// Fritsch–Carlson slopes with the three-point end formula used by PCHIP.
pub fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] <= 0.0 {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], del[0], del[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}
