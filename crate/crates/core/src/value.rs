//! Candidate value function `v^b` of a barrier and its derivatives.
//!
//! In the continuation region `x <= y <= b(x)`
//!
//! ```text
//! v(x, y) = phi(y) I_psi(x, y) - psi(y) I_phi(x, y),
//! I_f(x, y) = int_x^y f'(b(z)) / S'(b(z)) dz,
//! ```
//!
//! and above the barrier `v(x, y) = v(b^-1(y), y) + b^-1(y) - x`. The two
//! integrals are read from cumulative tables on a fixed node set plus one
//! adaptive Gauss–Kronrod pass over the last partial interval.

use serde::{Deserialize, Serialize};

use crate::barrier::{log_grid, Barrier};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::FundamentalPair;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Kronrod-15 panel of a vector-valued integrand; returns the estimate
/// and a Gauss-7 error proxy.
fn gk15<const N: usize>(f: &impl Fn(f64) -> [f64; N], a: f64, b: f64) -> ([f64; N], f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    let fc = f(c);
    for j in 0..N {
        k[j] = K15_WEIGHTS[7] * fc[j];
        g[j] = G7_WEIGHTS[3] * fc[j];
    }
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let (f1, f2) = (f(c - dx), f(c + dx));
        for j in 0..N {
            k[j] += K15_WEIGHTS[i] * (f1[j] + f2[j]);
            if i % 2 == 1 {
                g[j] += G7_WEIGHTS[i / 2] * (f1[j] + f2[j]);
            }
        }
    }
    let mut err = 0.0f64;
    for j in 0..N {
        k[j] *= h;
        err = err.max((k[j] - g[j] * h).abs());
    }
    (k, err)
}

fn adaptive<const N: usize>(f: &impl Fn(f64) -> [f64; N], a: f64, b: f64, tol: f64, depth: u32) -> [f64; N] {
    let (est, err) = gk15(f, a, b);
    let scale = est.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if err <= tol.max(1e-14 * scale) || depth == 0 {
        return est;
    }
    let m = 0.5 * (a + b);
    let l = adaptive(f, a, m, 0.5 * tol, depth - 1);
    let r = adaptive(f, m, b, 0.5 * tol, depth - 1);
    let mut out = [0.0; N];
    for j in 0..N {
        out[j] = l[j] + r[j];
    }
    out
}

/// Adaptive Gauss–Kronrod quadrature of a scalar integrand.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(&|x| [f(x)], a, b, tol, 30)[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Diagonal,
    Continuation,
    Stopped,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Diagonal => "diagonal",
            Region::Continuation => "continuation",
            Region::Stopped => "stopped",
        }
    }
}

/// `v^b` together with its derivatives, for one barrier.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pair: FundamentalPair,
    barrier: Barrier,
    nodes: Vec<f64>,
    /// Cumulative `(I_psi, I_phi)` from `nodes[0]`.
    cumulative: Vec<[f64; 2]>,
    tol: f64,
}

impl ValueSurface {
    pub fn new(pair: &FundamentalPair, barrier: &Barrier) -> Result<Self> {
        let (lo, hi) = barrier.domain();
        // z runs up to y <= b(x), so tabulate past x_hi up to b(x_hi)
        let top = barrier.eval(hi).max(hi);
        let mut nodes = match barrier.ray_slope() {
            Some(_) => log_grid(lo, top, 400),
            None => {
                let mut xs = barrier.grid_x(0);
                if top > hi {
                    xs.extend(log_grid(hi, top, 100).into_iter().skip(1));
                }
                xs
            }
        };
        nodes.dedup();
        let mut s = Self {
            pair: pair.clone(),
            barrier: barrier.clone(),
            nodes,
            cumulative: Vec::new(),
            tol: 1e-15,
        };
        let mut acc = [0.0, 0.0];
        let mut cumulative = vec![acc];
        for w in s.nodes.windows(2) {
            let d = s.panel(w[0], w[1]);
            acc = [acc[0] + d[0], acc[1] + d[1]];
            cumulative.push(acc);
        }
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure(
                "non-finite barrier integrals".into(),
            ));
        }
        s.cumulative = cumulative;
        Ok(s)
    }

    pub fn barrier(&self) -> &Barrier {
        &self.barrier
    }

    pub fn pair(&self) -> &FundamentalPair {
        &self.pair
    }

    /// `(psi'(b(z)) / S'(b(z)), phi'(b(z)) / S'(b(z)))`.
    #[inline]
    fn kernels(&self, z: f64) -> [f64; 2] {
        let b = self.barrier.eval(z);
        [self.pair.dpsi_over_sprime(b), self.pair.dphi_over_sprime(b)]
    }

    fn panel(&self, a: f64, b: f64) -> [f64; 2] {
        if a == b {
            return [0.0, 0.0];
        }
        adaptive(&|z| self.kernels(z), a, b, self.tol, 30)
    }

    /// `(I_psi, I_phi)` from `nodes[0]` to `z`.
    fn cumulative_at(&self, z: f64) -> [f64; 2] {
        let k = self.nodes.partition_point(|&n| n <= z).saturating_sub(1);
        let d = self.panel(self.nodes[k], z);
        [self.cumulative[k][0] + d[0], self.cumulative[k][1] + d[1]]
    }

    /// `(I_psi(x, y), I_phi(x, y))`.
    pub fn integrals(&self, x: f64, y: f64) -> [f64; 2] {
        // short spans are cheaper and more accurate directly
        if y - x < 0.25 * (self.nodes[1] - self.nodes[0]).max(1e-3 * x) {
            return self.panel(x, y);
        }
        let (cx, cy) = (self.cumulative_at(x), self.cumulative_at(y));
        [cy[0] - cx[0], cy[1] - cx[1]]
    }

    pub fn region(&self, x: f64, y: f64) -> Region {
        if y == x {
            Region::Diagonal
        } else if y <= self.barrier.eval(x) {
            Region::Continuation
        } else {
            Region::Stopped
        }
    }

    /// `v-bar^b(x, y)`, the continuation formula, for any `0 < x <= y`.
    pub fn vbar(&self, x: f64, y: f64) -> f64 {
        if x == y {
            return 0.0;
        }
        let [ip, if_] = self.integrals(x, y);
        self.pair.phi(y) * ip - self.pair.psi(y) * if_
    }

    pub fn value_v(&self, x: f64, y: f64) -> Result<f64> {
        check_region(x, y)?;
        match self.region(x, y) {
            Region::Diagonal => Ok(0.0),
            Region::Continuation => Ok(self.vbar(x, y)),
            Region::Stopped => {
                let xb = self.barrier.inverse(y);
                Ok(self.vbar(xb, y) + xb - x)
            }
        }
    }

    fn vbar_x(&self, x: f64, y: f64) -> f64 {
        let [c, a] = self.kernels(x);
        self.pair.psi(y) * a - self.pair.phi(y) * c
    }

    pub fn v_x(&self, x: f64, y: f64) -> Result<f64> {
        check_region(x, y)?;
        Ok(match self.region(x, y) {
            Region::Stopped => -1.0,
            _ => self.vbar_x(x, y),
        })
    }

    /// `u = -v_x`.
    pub fn u_star(&self, x: f64, y: f64) -> Result<f64> {
        self.v_x(x, y).map(|v| -v)
    }

    fn vbar_xy(&self, x: f64, y: f64) -> f64 {
        let [c, a] = self.kernels(x);
        self.pair.dpsi(y) * a - self.pair.dphi(y) * c
    }

    /// `v_xy` of the continuation formula; zero on the barrier itself.
    pub fn v_xy(&self, x: f64, y: f64) -> Result<f64> {
        check_region(x, y)?;
        if self.region(x, y) == Region::Stopped {
            return Err(Error::Domain(format!(
                "v_xy is evaluated on x <= y <= b(x); ({x}, {y}) is above the barrier"
            )));
        }
        Ok(self.vbar_xy(x, y))
    }

    /// `(psi(b) / S'(b), phi(b) / S'(b))`.
    fn level_ratios(&self, b: f64) -> [f64; 2] {
        let (lp, wp) = self.pair.psi_log(b);
        let (lf, wf) = self.pair.phi_log(b);
        [1.0 / ((lf).exp() * (wp - wf)), 1.0 / ((lp).exp() * (wp - wf))]
    }

    /// `v_xx(x, y) = b'(x) 2r / (sigma^2(b) S'(b)) [psi(y) phi(b) - phi(y) psi(b)]` with `b = b(x)`.
    fn vbar_xx(&self, x: f64, y: f64) -> f64 {
        let b = self.barrier.eval(x);
        let [psi_s, phi_s] = self.level_ratios(b);
        let k = self.barrier.derivative(x) * 2.0 * self.pair.spec().r() / self.pair.spec().sigma2(b);
        k * (self.pair.psi(y) * phi_s - self.pair.phi(y) * psi_s)
    }

    pub fn v_xx_diag(&self, x: f64) -> Result<f64> {
        check_region(x, x)?;
        Ok(self.vbar_xx(x, x))
    }

    /// `(v-bar_y, v-bar_yy)` of the continuation formula.
    fn vbar_y_yy(&self, x: f64, y: f64) -> (f64, f64) {
        let p = &self.pair;
        let [ip, if_] = if x == y { [0.0, 0.0] } else { self.integrals(x, y) };
        let [c, a] = self.kernels(y);
        let by = self.barrier.eval(y);
        let [psi_s, phi_s] = self.level_ratios(by);
        let two_r_s2 = 2.0 * p.spec().r() / p.spec().sigma2(by);
        let dc = two_r_s2 * psi_s;
        let da = two_r_s2 * phi_s;
        let vy = p.dphi(y) * ip - p.dpsi(y) * if_ + p.phi(y) * c - p.psi(y) * a;
        let vyy = p.d2phi(y) * ip - p.d2psi(y) * if_
            + 2.0 * (p.dphi(y) * c - p.dpsi(y) * a)
            + self.barrier.derivative(y) * (p.phi(y) * dc - p.psi(y) * da);
        (vy, vyy)
    }

    /// `(v_y, v_yy)`.
    pub fn v_y_yy(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        check_region(x, y)?;
        Ok(match self.region(x, y) {
            Region::Stopped => {
                let xb = self.barrier.inverse(y);
                let (vy, vyy) = self.vbar_y_yy(xb, y);
                // d/dy of v-bar_y(b^-1(y), y) picks up v-bar_xy on the barrier
                let dxb = 1.0 / self.barrier.derivative(xb);
                (vy, vyy + self.vbar_xy(xb, y) * dxb)
            }
            _ => self.vbar_y_yy(x, y),
        })
    }

    pub fn v_y(&self, x: f64, y: f64) -> Result<f64> {
        self.v_y_yy(x, y).map(|p| p.0)
    }

    /// `L v` in the second variable.
    pub fn generator_residual(&self, x: f64, y: f64) -> Result<f64> {
        let (vy, vyy) = self.v_y_yy(x, y)?;
        let spec = self.pair.spec();
        Ok(0.5 * spec.sigma2(y) * vyy + spec.mu(y) * vy - spec.r() * self.value_v(x, y)?)
    }

    /// `(sigma^2(x)/2)(v_xx + 2 v_xy)(x, x) + mu(x) v_x(x, x)`.
    pub fn diagonal_residual(&self, x: f64) -> Result<f64> {
        check_region(x, x)?;
        let spec = self.pair.spec();
        Ok(0.5 * spec.sigma2(x) * (self.vbar_xx(x, x) + 2.0 * self.vbar_xy(x, x))
            + spec.mu(x) * self.vbar_x(x, x))
    }
}

fn check_region(x: f64, y: f64) -> Result<()> {
    if !(x > 0.0 && y >= x) {
        return Err(Error::Domain(format!("need 0 < x <= y, got ({x}, {y})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub x: f64,
    pub y: f64,
    pub region: Region,
    pub v: f64,
    pub v_x: f64,
    pub lv: f64,
    /// `L v + r (b^-1(y) - x)` in the stopped region, 0 elsewhere.
    pub stopped_identity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub lv: f64,
    pub gradient: f64,
    pub absorption: f64,
    pub smooth_fit: f64,
    pub reflection: f64,
    pub stopped: f64,
}

impl Tolerances {
    /// Closed-form fundamental pairs.
    pub fn analytic() -> Self {
        Self {
            lv: 1e-6,
            gradient: 1e-8,
            absorption: 1e-10,
            smooth_fit: 1e-8,
            reflection: 1e-6,
            stopped: 1e-6,
        }
    }

    /// Numerically integrated fundamental pairs.
    pub fn numeric() -> Self {
        Self {
            lv: 1e-4,
            gradient: 1e-6,
            absorption: 1e-10,
            smooth_fit: 1e-4,
            reflection: 1e-4,
            stopped: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    /// `max |L v|` over continuation points.
    pub max_lv_continuation: f64,
    /// `max L v` over stopped points (should not be positive).
    pub max_lv_stopped: f64,
    pub max_stopped_identity: f64,
    /// `max (v_x + 1)` over all points.
    pub max_gradient: f64,
    pub max_absorption: f64,
    pub max_smooth_fit: f64,
    pub max_reflection: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn suites(&self, tol: &Tolerances) -> Vec<SuiteResult> {
        let s = |name: &str, value: f64, tolerance: f64| SuiteResult {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        };
        vec![
            s("continuation_generator", self.max_lv_continuation, tol.lv),
            s("stopped_sign", self.max_lv_stopped, tol.stopped),
            s("stopped_identity", self.max_stopped_identity, tol.stopped),
            s("gradient", self.max_gradient, tol.gradient),
            s("absorption", self.max_absorption, tol.absorption),
            s("smooth_fit", self.max_smooth_fit, tol.smooth_fit),
            s("diagonal_reflection", self.max_reflection, tol.reflection),
        ]
    }

    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.suites(tol).iter().all(|s| s.pass)
    }
}

/// Points `(x, y)` with `x` log-spaced on `[x_lo, x_hi]` and `y` spread
/// uniformly over `(x, b(x))` (endpoints excluded).
pub fn continuation_grid(s: &ValueSurface, x_lo: f64, x_hi: f64, nx: usize, ny: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(nx * ny);
    for x in log_grid(x_lo, x_hi, nx) {
        let b = s.barrier().eval(x);
        for j in 1..=ny {
            pts.push((x, x + (b - x) * j as f64 / (ny + 1) as f64));
        }
    }
    pts
}

/// Like [`continuation_grid`] but with `y` running from `x` up to
/// `y_factor * b(x)`, covering all three regions.
pub fn region_grid(s: &ValueSurface, x_lo: f64, x_hi: f64, nx: usize, ny: usize, y_factor: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(nx * ny);
    for x in log_grid(x_lo, x_hi, nx) {
        let top = y_factor * s.barrier().eval(x);
        for j in 0..ny {
            pts.push((x, x + (top - x) * j as f64 / (ny - 1).max(1) as f64));
        }
    }
    pts
}

/// Evaluates every condition of the variational system on `grid`, plus the
/// smooth-fit and diagonal conditions at the distinct `x` of the grid.
pub fn check_variational(s: &ValueSurface, grid: &[(f64, f64)], execution: Execution) -> Result<ResidualReport> {
    let rows: Vec<Result<ResidualRow>> = map_indexed(grid.len(), execution, |i| {
        let (x, y) = grid[i];
        let region = s.region(x, y);
        let v = s.value_v(x, y)?;
        let v_x = s.v_x(x, y)?;
        let lv = if region == Region::Diagonal {
            0.0
        } else {
            s.generator_residual(x, y)?
        };
        let stopped_identity = if region == Region::Stopped {
            lv + s.pair().spec().r() * (s.barrier().inverse(y) - x)
        } else {
            0.0
        };
        Ok(ResidualRow {
            x,
            y,
            region,
            v,
            v_x,
            lv,
            stopped_identity,
        })
    });
    let rows: Vec<ResidualRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut xs: Vec<f64> = grid.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let per_x: Vec<Result<(f64, f64, f64)>> = map_indexed(xs.len(), execution, |i| {
        let x = xs[i];
        let b = s.barrier().eval(x);
        Ok((
            s.vbar_xy(x, b).abs(),
            s.diagonal_residual(x)?.abs(),
            s.value_v(x, x)?.abs(),
        ))
    });
    let per_x: Vec<(f64, f64, f64)> = per_x.into_iter().collect::<Result<_>>()?;

    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    Ok(ResidualReport {
        max_lv_continuation: fold(&mut rows.iter().filter(|r| r.region == Region::Continuation).map(|r| r.lv.abs())),
        max_lv_stopped: rows
            .iter()
            .filter(|r| r.region == Region::Stopped)
            .map(|r| r.lv)
            .fold(f64::NEG_INFINITY, f64::max),
        max_stopped_identity: fold(&mut rows.iter().map(|r| r.stopped_identity.abs())),
        max_gradient: rows.iter().map(|r| r.v_x + 1.0).fold(f64::NEG_INFINITY, f64::max),
        max_absorption: fold(
            &mut rows
                .iter()
                .filter(|r| r.region == Region::Diagonal)
                .map(|r| r.v.abs())
                .chain(per_x.iter().map(|p| p.2)),
        ),
        max_smooth_fit: fold(&mut per_x.iter().map(|p| p.0)),
        max_reflection: fold(&mut per_x.iter().map(|p| p.1)),
        rows,
    })
}

/// True iff `v^{b1} > v^{b2}` at every off-diagonal grid point.
pub fn value_ordering_check(s1: &ValueSurface, s2: &ValueSurface, grid: &[(f64, f64)]) -> Result<bool> {
    for &(x, y) in grid {
        if x == y {
            continue;
        }
        if !(s1.value_v(x, y)? > s2.value_v(x, y)?) {
            return Ok(false);
        }
    }
    Ok(true)
}
