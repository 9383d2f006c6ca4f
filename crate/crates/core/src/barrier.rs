//! The boundary ODE `b'(x) = F(x, b(x))` and its minimal solution above the
//! diagonal.
//!
//! `F` blows up to `-inf` at the diagonal, so every solution started below
//! the optimal boundary eventually turns down and hits `y = x`. The optimal
//! boundary is the smallest solution that never does. It is built as the
//! upper envelope of backward solutions started at `(xi, d(xi))` for
//! far-away anchors `xi`, where `d(xi)` is the first level at which the field
//! turns positive; a shooting search on the hit/no-hit classification is
//! kept as an independent check.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::interp::Hermite;
use crate::model::{DiffusionSpec, FundamentalPair};
use crate::ode::{self, Control, Dopri5Options, Outcome};

/// Boundary field `F(x, y)` for `0 < x < y`.
///
/// Evaluated after dividing numerator and `delta(x, y)` by `phi(x) psi(y)`,
/// so only log-values and log-derivatives of the fundamental pair enter.
pub fn field_f(pair: &FundamentalPair, x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > x) {
        return Err(Error::Diagonal { x, y });
    }
    let spec = pair.spec();
    let (lpx, wpx) = pair.psi_log(x);
    let (lpy, wpy) = pair.psi_log(y);
    let (lfx, wfx) = pair.phi_log(x);
    let (lfy, wfy) = pair.phi_log(y);
    // rho = phi(y) psi(x) / (phi(x) psi(y)) in (0, 1)
    let ln_rho = (lfy - lfx) - (lpy - lpx);
    let rho = ln_rho.exp();
    let one_minus_rho = -ln_rho.exp_m1();
    if !(one_minus_rho > 0.0) {
        return Err(Error::Diagonal { x, y });
    }
    let m = spec.mu_over_sigma2(x);
    let bracket = wfy * wpx * rho - wfx * wpy + m * (wfy * rho - wpy);
    Ok(spec.sigma2(y) / spec.r() * bracket / one_minus_rho)
}

/// Direct (unscaled) evaluation of `F`; overflows for exponential pairs far
/// from the anchor but is handy as a cross-check.
pub fn field_f_direct(pair: &FundamentalPair, x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && y > x) {
        return Err(Error::Diagonal { x, y });
    }
    let spec = pair.spec();
    let delta = pair.delta(x, y);
    let num = (pair.dphi(y) * pair.dpsi(x) - pair.dphi(x) * pair.dpsi(y))
        + spec.mu_over_sigma2(x) * (pair.dphi(y) * pair.psi(x) - pair.phi(x) * pair.dpsi(y));
    Ok(spec.sigma2(y) / (spec.r() * delta) * num)
}

pub fn zeta(spec: &DiffusionSpec, x: f64) -> f64 {
    spec.zeta(x)
}

#[derive(Debug, Clone, Copy)]
pub struct DSearch {
    /// First trial level is `x (1 + first_gap)`.
    pub first_gap: f64,
    /// Search stops at `cap_factor * x`.
    pub cap_factor: f64,
    pub rel_tol: f64,
}

impl Default for DSearch {
    fn default() -> Self {
        Self {
            first_gap: 1e-3,
            cap_factor: 1e3,
            rel_tol: 1e-10,
        }
    }
}

/// `d(x) = inf{y > x : F(x, y) > 0}`.
pub fn find_d(pair: &FundamentalPair, x: f64) -> Result<f64> {
    find_d_with(pair, x, &DSearch::default())
}

pub fn find_d_with(pair: &FundamentalPair, x: f64, search: &DSearch) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("d(x) needs x > 0, got {x}")));
    }
    let cap = search.cap_factor * x;
    let f = |y: f64| field_f(pair, x, y);
    let mut gap = search.first_gap * x;
    // the field is negative next to the diagonal; shrink until it is
    while f(x + gap)? > 0.0 {
        gap *= 1e-2;
        if gap < 1e-14 * x {
            return Err(Error::NotFound { x, cap });
        }
    }
    let mut lo = x + gap;
    let mut hi;
    loop {
        gap *= 2.0;
        hi = x + gap;
        if hi > cap {
            hi = cap;
            if f(hi)? <= 0.0 {
                return Err(Error::NotFound { x, cap });
            }
            break;
        }
        if f(hi)? > 0.0 {
            break;
        }
        lo = hi;
    }
    while hi - lo > search.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveOutcome {
    /// The solution reaches the diagonal at `x0`.
    HitsDiagonal { x0: f64 },
    /// The solution stays above the diagonal with `F > 0` up to `x_end`.
    StaysAboveUntil { x_end: f64 },
    /// No diagonal hit, but `F(x, b(x)) <= 0` first at `x`.
    FieldSignViolation { x: f64 },
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionClassification {
    pub start: (f64, f64),
    pub outcome: CurveOutcome,
}

impl SolutionClassification {
    pub fn label(&self) -> &'static str {
        match self.outcome {
            CurveOutcome::HitsDiagonal { .. } => "HitsDiagonal",
            CurveOutcome::StaysAboveUntil { .. } => "StaysAboveUntil",
            CurveOutcome::FieldSignViolation { .. } => "FieldSignViolation",
        }
    }

    pub fn hits_diagonal(&self) -> bool {
        matches!(self.outcome, CurveOutcome::HitsDiagonal { .. })
    }
}

/// A numerically integrated solution, nodes sorted by increasing `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCurve {
    pub xs: Vec<f64>,
    pub bs: Vec<f64>,
    /// `F(x, b(x))` at the nodes.
    pub slopes: Vec<f64>,
}

impl SolutionCurve {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn interpolant(&self) -> Hermite {
        Hermite::with_slopes(self.xs.clone(), self.bs.clone(), self.slopes.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Guards {
    /// Integration stops at `x_lo` (backward) or `x_hi` (forward).
    pub x_lo: f64,
    pub x_hi: f64,
    /// Diagonal clearance is `eps_diag * (1 + x)`.
    pub eps_diag: f64,
    /// Integration stops once `b > blow_up * (1 + x)`.
    pub blow_up: f64,
    pub rtol: f64,
    /// Step cap relative to `|x|`; sets the node density of the curve.
    pub h_max_rel: f64,
    /// Minimal step relative to `|x|` before the implicit fallback.
    pub h_min_rel: f64,
}

impl Guards {
    pub fn new(x_lo: f64, x_hi: f64) -> Self {
        Self {
            x_lo,
            x_hi,
            eps_diag: 1e-6,
            blow_up: 1e12,
            rtol: 1e-11,
            h_max_rel: 0.02,
            h_min_rel: 1e-13,
        }
    }
}

/// Secant extrapolation of the hit point on the squared gap, which is
/// close to linear in `x` next to the diagonal.
fn extrapolate_hit(x1: f64, g1: f64, x2: f64, g2: f64) -> f64 {
    let (s1, s2) = (g1 * g1, g2 * g2);
    if (s1 - s2).abs() <= f64::MIN_POSITIVE {
        return x2;
    }
    x2 + s2 * (x2 - x1) / (s1 - s2)
}

/// Solves `b' = F(x, b)` from `start` until a guard triggers.
pub fn integrate_barrier(
    pair: &FundamentalPair,
    start: (f64, f64),
    direction: Direction,
    guards: &Guards,
) -> Result<(SolutionCurve, SolutionClassification)> {
    let (xi, eta) = start;
    if !(xi > 0.0 && eta > xi) {
        return Err(Error::Diagonal { x: xi, y: eta });
    }
    let x_end = match direction {
        Direction::Forward => guards.x_hi,
        Direction::Backward => guards.x_lo,
    };
    let opts = Dopri5Options {
        rtol: guards.rtol,
        atol: guards.rtol * 1e-3,
        h_init: 1e-4 * xi.abs().max(1e-3),
        h_min: guards.h_min_rel * 1e-3,
        h_min_rel: guards.h_min_rel,
        h_max_abs: f64::INFINITY,
        h_max_rel: guards.h_max_rel,
    };
    let clearance = |x: f64| guards.eps_diag * (1.0 + x.abs());

    let mut nodes: Vec<(f64, f64, f64)> = Vec::new();
    let mut hit: Option<f64> = None;
    let mut blown = false;
    let rhs = |x: f64, b: &[f64; 1]| -> Option<[f64; 1]> {
        if !(x > 0.0) || b[0] <= x {
            return None;
        }
        field_f(pair, x, b[0]).ok().filter(|v| v.is_finite()).map(|v| [v])
    };
    let out = ode::integrate(rhs, xi, [eta], x_end, &opts, |x, b| {
        let g = b[0] - x;
        let slope = field_f(pair, x, b[0]).unwrap_or(f64::NEG_INFINITY);
        nodes.push((x, b[0], slope));
        if g < clearance(x) {
            let n = nodes.len();
            let x0 = if n >= 2 {
                let (xa, ba, _) = nodes[n - 2];
                extrapolate_hit(xa, ba - xa, x, g)
            } else {
                x
            };
            hit = Some(x0);
            return Control::Stop;
        }
        if b[0] > guards.blow_up * (1.0 + x.abs()) {
            blown = true;
            return Control::Stop;
        }
        Control::Continue
    });

    let mut x_reached = match out {
        Outcome::Finished { t, .. } | Outcome::Stopped { t, .. } => t,
        Outcome::StepUnderflow { t, y, .. } => {
            // stiff approach to the diagonal: continue with implicit midpoint
            match implicit_midpoint_to_diagonal(pair, &mut nodes, direction, x_end, guards) {
                Some(x0) => {
                    hit = Some(x0);
                    t
                }
                None => {
                    let last = nodes.last().map(|n| n.0).unwrap_or(t);
                    if (last - x_end).abs() > 1e-12 * (1.0 + x_end.abs()) {
                        return Err(Error::StepFailure { x: t, b: y[0] });
                    }
                    last
                }
            }
        }
    };
    if hit.is_none() && !blown {
        if let Some(last) = nodes.last() {
            x_reached = last.0;
        }
    }

    let first_violation = nodes.iter().find(|n| !(n.2 > 0.0)).map(|n| n.0);
    let outcome = match (hit, first_violation) {
        (Some(x0), _) => CurveOutcome::HitsDiagonal { x0 },
        (None, Some(x)) => CurveOutcome::FieldSignViolation { x },
        (None, None) => CurveOutcome::StaysAboveUntil { x_end: x_reached },
    };

    if direction == Direction::Backward {
        nodes.reverse();
    }
    nodes.dedup_by(|b, a| b.0 <= a.0);
    let curve = SolutionCurve {
        xs: nodes.iter().map(|n| n.0).collect(),
        bs: nodes.iter().map(|n| n.1).collect(),
        slopes: nodes.iter().map(|n| n.2).collect(),
    };
    Ok((
        curve,
        SolutionClassification {
            start,
            outcome,
        },
    ))
}

/// Fixed-step implicit midpoint continuation of the last node towards the
/// diagonal. Each step is sized so that an explicit step would eat a quarter
/// of the current gap. Returns the hit point if the diagonal is reached.
fn implicit_midpoint_to_diagonal(
    pair: &FundamentalPair,
    nodes: &mut Vec<(f64, f64, f64)>,
    direction: Direction,
    x_end: f64,
    guards: &Guards,
) -> Option<f64> {
    let sgn = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    for _ in 0..100_000 {
        let &(x, b, slope) = nodes.last()?;
        let g = b - x;
        if g < guards.eps_diag * (1.0 + x.abs()) {
            let n = nodes.len();
            return Some(if n >= 2 {
                let (xa, ba, _) = nodes[n - 2];
                extrapolate_hit(xa, ba - xa, x, g)
            } else {
                x
            });
        }
        if (x_end - x) * sgn <= 0.0 {
            return None;
        }
        let h = (0.25 * g / slope.abs().max(1.0)).min((x_end - x).abs()) * sgn;
        let xm = x + 0.5 * h;
        // residual of b1 = b + h F(x + h/2, (b + b1)/2) on admissible b1
        let resid = |b1: f64| -> Option<f64> {
            let bm = 0.5 * (b + b1);
            if bm <= xm {
                return None;
            }
            field_f(pair, xm, bm).ok().map(|f| b1 - b - h * f)
        };
        let lo_bound = 2.0 * xm - b; // bm == xm
        let mut lo = lo_bound + 1e-15 * (1.0 + b.abs());
        let mut hi = b + (h * slope).abs() + g;
        let (Some(rl), Some(rh)) = (resid(lo), resid(hi)) else {
            return Some(x + h);
        };
        if rl.signum() == rh.signum() {
            // no admissible solution inside this step: the curve reaches the
            // diagonal within it
            return Some(extrapolate_hit(x, g, x + h, 0.0).min(x + h.abs()));
        }
        let neg_at_lo = rl < 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            match resid(mid) {
                Some(r) if (r < 0.0) == neg_at_lo => lo = mid,
                _ => hi = mid,
            }
            if hi - lo < 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        let b1 = 0.5 * (lo + hi);
        let x1 = x + h;
        if b1 <= x1 {
            let n = nodes.len();
            let (xa, ba, _) = nodes[n - 1];
            return Some(extrapolate_hit(xa, ba - xa, x1, 0.0).max(xa.min(x1)));
        }
        let s1 = field_f(pair, x1, b1).unwrap_or(f64::NEG_INFINITY);
        nodes.push((x1, b1, s1));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierSource {
    Analytic,
    FarAnchorEnvelope,
    Shooting,
    /// Built from user-supplied points (e.g. scaled or perturbed barriers).
    Points,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Curve {
    /// `b(x) = slope * x` on `(0, inf)`.
    Ray { slope: f64 },
    Grid(Hermite),
}

/// A strictly increasing boundary curve above the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    curve: Curve,
    domain: (f64, f64),
    source: BarrierSource,
    membership_checked: bool,
}

impl Barrier {
    /// The ray `b(x) = slope * x`.
    pub fn ray(slope: f64, domain: (f64, f64)) -> Self {
        assert!(slope > 1.0, "a ray barrier must lie above the diagonal");
        Self {
            curve: Curve::Ray { slope },
            domain,
            source: BarrierSource::Analytic,
            membership_checked: false,
        }
    }

    /// From an ODE solution; node slopes are the field values.
    pub fn from_curve(curve: &SolutionCurve, source: BarrierSource) -> Self {
        let h = curve.interpolant();
        Self {
            domain: (h.x_min(), h.x_max()),
            curve: Curve::Grid(h),
            source,
            membership_checked: false,
        }
    }

    /// Monotone cubic through arbitrary points.
    pub fn from_points(xs: Vec<f64>, bs: Vec<f64>, source: BarrierSource) -> Self {
        let h = Hermite::pchip(xs, bs);
        Self {
            domain: (h.x_min(), h.x_max()),
            curve: Curve::Grid(h),
            source,
            membership_checked: false,
        }
    }

    pub fn from_nodes(xs: Vec<f64>, bs: Vec<f64>, slopes: Vec<f64>, source: BarrierSource) -> Self {
        let h = Hermite::with_slopes(xs, bs, slopes);
        Self {
            domain: (h.x_min(), h.x_max()),
            curve: Curve::Grid(h),
            source,
            membership_checked: false,
        }
    }

    /// `factor * b(x)`.
    pub fn scaled(&self, factor: f64) -> Self {
        let curve = match &self.curve {
            Curve::Ray { slope } => Curve::Ray {
                slope: slope * factor,
            },
            Curve::Grid(h) => Curve::Grid(Hermite::with_slopes(
                h.xs().to_vec(),
                h.ys().iter().map(|b| b * factor).collect(),
                h.slopes().iter().map(|d| d * factor).collect(),
            )),
        };
        Self {
            curve,
            domain: self.domain,
            source: BarrierSource::Points,
            membership_checked: false,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn source(&self) -> BarrierSource {
        self.source
    }

    pub fn membership_checked(&self) -> bool {
        self.membership_checked
    }

    /// Slope when the barrier is a ray through the origin.
    pub fn ray_slope(&self) -> Option<f64> {
        match self.curve {
            Curve::Ray { slope } => Some(slope),
            Curve::Grid(_) => None,
        }
    }

    /// Node abscissae (a log-spaced sample for rays).
    pub fn grid_x(&self, n_for_ray: usize) -> Vec<f64> {
        match &self.curve {
            Curve::Ray { .. } => log_grid(self.domain.0, self.domain.1, n_for_ray),
            Curve::Grid(h) => h.xs().to_vec(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.curve {
            Curve::Ray { slope } => slope * x,
            Curve::Grid(h) => h.eval(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.curve {
            Curve::Ray { slope } => *slope,
            Curve::Grid(h) => h.derivative(x),
        }
    }

    /// Lowest level covered by the inverse.
    pub fn inverse_floor(&self) -> f64 {
        match &self.curve {
            Curve::Ray { .. } => 0.0,
            Curve::Grid(h) => h.eval(self.domain.0),
        }
    }

    /// `b^{-1}(y)`, extended by zero below `b(x_lo)` (below `b(0) = 0` for a
    /// ray).
    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        match &self.curve {
            Curve::Ray { slope } => (y / slope).max(0.0),
            Curve::Grid(h) => {
                if y < h.eval(self.domain.0) {
                    0.0
                } else {
                    h.inverse_increasing(y)
                }
            }
        }
    }

    /// Checks `b(x) > x` and `F(x, b(x)) > 0` on the nodes (or `n` samples
    /// for a ray).
    pub fn check_membership(&mut self, pair: &FundamentalPair, n: usize) -> Result<()> {
        for x in self.grid_x(n) {
            let b = self.eval(x);
            if !(b > x) {
                return Err(Error::MembershipViolation {
                    x,
                    reason: format!("b(x) = {b} is not above the diagonal"),
                });
            }
            let f = field_f(pair, x, b)?;
            if !(f > 0.0) {
                return Err(Error::MembershipViolation {
                    x,
                    reason: format!("F(x, b(x)) = {f} is not positive"),
                });
            }
        }
        self.membership_checked = true;
        Ok(())
    }
}

/// `b^{-1}(y)`.
pub fn barrier_inverse(b: &Barrier, y: f64) -> f64 {
    b.inverse(y)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct EnvelopeOptions {
    /// Stop once the relative sup-norm change of the envelope, extrapolated
    /// geometrically over all further anchors, is below this.
    pub tol_b: f64,
    pub k_max: usize,
    /// Output grid size (log-spaced on the domain).
    pub grid: usize,
    /// Anchors integrated per parallel batch.
    pub batch: usize,
    pub execution: Execution,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            tol_b: 1e-6,
            k_max: 120,
            grid: 400,
            batch: 8,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub anchors_used: usize,
    pub last_anchor: f64,
    pub last_sup_diff: f64,
    /// Geometric estimate of the change still to come.
    pub tail_estimate: f64,
    pub zeta_min: f64,
}

/// Minimal element of the class B on `domain`, as the upper envelope of
/// backward solutions from `(x_hi 2^k, d(x_hi 2^k))`.
pub fn minimal_barrier(
    pair: &FundamentalPair,
    domain: (f64, f64),
    opts: &EnvelopeOptions,
) -> Result<(Barrier, EnvelopeReport)> {
    let (x_lo, x_hi) = domain;
    if !(x_lo > 0.0 && x_hi > x_lo) {
        return Err(Error::Domain(format!("need 0 < x_lo < x_hi, got {domain:?}")));
    }
    let spec = pair.spec();
    let grid = log_grid(x_lo, x_hi, opts.grid);
    let zeta_min = grid.iter().map(|&x| spec.zeta(x)).fold(f64::INFINITY, f64::min);
    if !(zeta_min > 0.0) {
        warn!("zeta(x) <= 0 somewhere on [{x_lo}, {x_hi}] (min {zeta_min}); solutions need not be ordered");
    }

    let guards = Guards::new(x_lo, x_hi);
    let anchor_curve = |k: usize| -> Result<Vec<f64>> {
        let xi = x_hi * 2f64.powi(k as i32);
        let eta = find_d(pair, xi)?;
        let (curve, _) = integrate_barrier(pair, (xi, eta), Direction::Backward, &guards)?;
        if curve.len() < 2 {
            return Ok(vec![f64::NEG_INFINITY; grid.len()]);
        }
        let h = curve.interpolant();
        let lo_reached = h.x_min();
        Ok(grid
            .iter()
            .map(|&x| {
                if x >= lo_reached - 1e-12 * x {
                    h.eval(x.max(lo_reached))
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    };

    let mut envelope: Vec<f64> = vec![f64::NEG_INFINITY; grid.len()];
    let mut last_diff = f64::INFINITY;
    let mut k = 0;
    while k < opts.k_max {
        let batch = opts.batch.min(opts.k_max - k).max(1);
        let curves = map_indexed(batch, opts.execution, |i| anchor_curve(k + i));
        for (i, curve) in curves.into_iter().enumerate() {
            let curve = curve?;
            let mut diff = 0.0f64;
            for (e, c) in envelope.iter_mut().zip(&curve) {
                let new = e.max(*c);
                if e.is_finite() {
                    diff = diff.max((new - *e).abs() / new.abs());
                } else {
                    diff = f64::INFINITY;
                }
                *e = new;
            }
            let q = if last_diff.is_finite() && last_diff > 0.0 {
                (diff / last_diff).clamp(0.0, 0.99)
            } else {
                0.99
            };
            last_diff = diff;
            let tail = diff / (1.0 - q);
            let used = k + i + 1;
            if used >= 3 && tail < opts.tol_b {
                let xs = grid.clone();
                let slopes: Vec<f64> = xs
                    .iter()
                    .zip(&envelope)
                    .map(|(&x, &b)| field_f(pair, x, b))
                    .collect::<Result<_>>()?;
                let mut barrier =
                    Barrier::from_nodes(xs, envelope.clone(), slopes, BarrierSource::FarAnchorEnvelope);
                barrier.check_membership(pair, opts.grid)?;
                return Ok((
                    barrier,
                    EnvelopeReport {
                        anchors_used: used,
                        last_anchor: x_hi * 2f64.powi((used - 1) as i32),
                        last_sup_diff: diff,
                        tail_estimate: tail,
                        zeta_min,
                    },
                ));
            }
        }
        k += batch;
    }
    Err(Error::NoConvergence {
        anchors: opts.k_max,
        last_diff,
    })
}

/// Minimal barrier on `[x_lo, y_factor b*(x_hi)]`, so that `b` solves the
/// ODE at every level reached by `x <= y <= y_factor b(x)` with `x` in
/// `domain`. The value function at `(x, y)` needs `b` on `[x, y]`.
pub fn minimal_barrier_covering(
    pair: &FundamentalPair,
    domain: (f64, f64),
    y_factor: f64,
    opts: &EnvelopeOptions,
) -> Result<(Barrier, EnvelopeReport)> {
    if !(y_factor >= 1.0) {
        return Err(Error::Domain(format!("y_factor = {y_factor} must be at least 1")));
    }
    let (b, _) = minimal_barrier(pair, domain, opts)?;
    let top = y_factor * b.eval(domain.1) * (1.0 + 1e-9);
    minimal_barrier(pair, (domain.0, top), opts)
}

/// Classifies the forward solution from `(x0, eta)` up to `x_end`.
pub fn classify(pair: &FundamentalPair, start: (f64, f64), x_end: f64) -> Result<SolutionClassification> {
    let guards = Guards {
        h_max_rel: 0.2,
        ..Guards::new(start.0, x_end)
    };
    integrate_barrier(pair, start, Direction::Forward, &guards).map(|(_, c)| c)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShootingResult {
    pub x0: f64,
    /// Bracket `[hits, stays]` for `b*(x0)` after bisection.
    pub bracket: (f64, f64),
    pub x_end: f64,
}

impl ShootingResult {
    pub fn estimate(&self) -> f64 {
        0.5 * (self.bracket.0 + self.bracket.1)
    }
}

/// Bisection over the initial value at `x0` on the hit/stay classification
/// of forward solutions up to `x_end`.
pub fn shoot_minimal(pair: &FundamentalPair, x0: f64, x_end: f64, rel_tol: f64) -> Result<ShootingResult> {
    let stays = |eta: f64| -> Result<bool> {
        Ok(!classify(pair, (x0, eta), x_end)?.hits_diagonal())
    };
    // below d(x0) the solution turns down immediately
    let mut lo = find_d(pair, x0)?;
    if stays(lo)? {
        return Err(Error::NotFound { x: x0, cap: lo });
    }
    let mut hi = 2.0 * lo;
    let mut tries = 0;
    while !stays(hi)? {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::NotFound { x: x0, cap: hi });
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if stays(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ShootingResult {
        x0,
        bracket: (lo, hi),
        x_end,
    })
}

/// Barrier on `[x_lo, x0]` obtained by integrating backward from the
/// shooting estimate at `x0`.
pub fn shooting_barrier(pair: &FundamentalPair, x_lo: f64, shot: &ShootingResult) -> Result<Barrier> {
    let guards = Guards::new(x_lo, shot.x0);
    let (curve, cls) = integrate_barrier(pair, (shot.x0, shot.estimate()), Direction::Backward, &guards)?;
    if cls.hits_diagonal() {
        return Err(Error::MembershipViolation {
            x: curve.xs[0],
            reason: "backward shooting solution reached the diagonal".into(),
        });
    }
    Ok(Barrier::from_curve(&curve, BarrierSource::Shooting))
}

/// Forward solutions from each start, classified; runs concurrently.
pub fn classification_sweep(
    pair: &FundamentalPair,
    starts: &[(f64, f64)],
    x_end: f64,
    execution: Execution,
) -> Vec<Result<(SolutionCurve, SolutionClassification)>> {
    map_indexed(starts.len(), execution, |i| {
        let guards = Guards::new(starts[i].0, x_end);
        integrate_barrier(pair, starts[i], Direction::Forward, &guards)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_fundamental;

    const C_REF: f64 = 3.740_487_129_920_177;
    const A_REF: f64 = 1.549_305_627_176_1;

    fn gbm_pair() -> FundamentalPair {
        let spec = DiffusionSpec::gbm(0.04, 0.3, 0.05).unwrap();
        make_fundamental(&spec, (0.1, 100.0)).unwrap()
    }

    #[test]
    fn field_reference_value() {
        let pair = gbm_pair();
        assert!((field_f(&pair, 1.0, 2.0).unwrap() - 1.204_892_498_976_839_5).abs() < 1e-12);
        assert!((field_f_direct(&pair, 1.0, 2.0).unwrap() - 1.204_892_498_976_839_5).abs() < 1e-12);
        assert!(matches!(field_f(&pair, 2.0, 2.0), Err(Error::Diagonal { .. })));
        assert!(matches!(field_f(&pair, 2.0, 1.0), Err(Error::Diagonal { .. })));
        assert_eq!(pair.delta(1.7, 1.7), 0.0);
    }

    #[test]
    fn field_log_form_matches_direct_form() {
        let spec = DiffusionSpec::constant(0.04, 0.3, 0.05).unwrap();
        let pair = make_fundamental(&spec, (0.1, 5.0)).unwrap();
        for &(x, y) in &[(0.2, 0.5), (1.0, 3.0), (2.0, 2.01), (4.0, 9.0)] {
            let a = field_f(&pair, x, y).unwrap();
            let b = field_f_direct(&pair, x, y).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{x} {y}: {a} vs {b}");
        }
        // translation invariance for constant coefficients
        let f1 = field_f(&pair, 1.0, 2.5).unwrap();
        let f2 = field_f(&pair, 101.0, 102.5).unwrap();
        assert!((f1 - f2).abs() < 1e-9 * f1.abs());
    }

    #[test]
    fn diagonal_repulsion() {
        let pair = gbm_pair();
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let f = field_f(&pair, 1.3, 1.3 * (1.0 + 10f64.powi(-k))).unwrap();
            assert!(f < prev);
            prev = f;
        }
        assert!(prev < -1e9);
    }

    #[test]
    fn d_of_x_for_gbm_is_a_ray() {
        let pair = gbm_pair();
        for &x in &[0.1, 1.0, 2.0, 37.0] {
            let d = find_d(&pair, x).unwrap();
            assert!((d / x - A_REF).abs() < 1e-8, "{x}: {}", d / x);
            let eps = 1e-7 * d;
            assert!(field_f(&pair, x, d - eps).unwrap() <= 0.0);
            assert!(field_f(&pair, x, d + eps).unwrap() >= 0.0);
        }
        assert!(find_d(&pair, 1.0).unwrap() < find_d(&pair, 2.0).unwrap());
    }

    #[test]
    fn d_not_found_below_cap() {
        let pair = gbm_pair();
        let search = DSearch {
            cap_factor: 1.2,
            ..Default::default()
        };
        assert!(matches!(find_d_with(&pair, 1.0, &search), Err(Error::NotFound { .. })));
    }

    #[test]
    fn ray_is_a_solution() {
        let pair = gbm_pair();
        let (curve, cls) =
            integrate_barrier(&pair, (1.0, C_REF), Direction::Forward, &Guards::new(0.1, 10.0)).unwrap();
        assert!(matches!(cls.outcome, CurveOutcome::StaysAboveUntil { x_end } if (x_end - 10.0).abs() < 1e-9));
        for (x, b) in curve.xs.iter().zip(&curve.bs) {
            assert!((b / x - C_REF).abs() < 1e-6 * C_REF);
        }
    }

    #[test]
    fn below_hits_and_above_stays() {
        let pair = gbm_pair();
        let (_, below) =
            integrate_barrier(&pair, (1.0, 2.0), Direction::Forward, &Guards::new(0.1, 1e8)).unwrap();
        match below.outcome {
            CurveOutcome::HitsDiagonal { x0 } => assert!(x0 > 1.0),
            other => panic!("{other:?}"),
        }
        let (_, above) = integrate_barrier(
            &pair,
            (1.0, 1.2 * C_REF),
            Direction::Forward,
            &Guards::new(0.1, 1e4),
        )
        .unwrap();
        assert!(matches!(above.outcome, CurveOutcome::StaysAboveUntil { .. }));
    }

    #[test]
    fn implicit_fallback_agrees_with_adaptive_hit_point() {
        let pair = gbm_pair();
        let fine = Guards::new(0.1, 1e3);
        let (_, a) = integrate_barrier(&pair, (1.0, 2.0), Direction::Forward, &fine).unwrap();
        // force the fallback by refusing small adaptive steps
        let coarse = Guards {
            h_min_rel: 1e-4,
            ..fine
        };
        let (_, b) = integrate_barrier(&pair, (1.0, 2.0), Direction::Forward, &coarse).unwrap();
        let (CurveOutcome::HitsDiagonal { x0: xa }, CurveOutcome::HitsDiagonal { x0: xb }) = (a.outcome, b.outcome)
        else {
            panic!("{a:?} {b:?}")
        };
        assert!((xa - xb).abs() < 1e-3 * xa, "{xa} vs {xb}");
    }

    #[test]
    fn scaling_invariance_of_the_field() {
        let spec = DiffusionSpec::custom_fn(|y| 0.04 * y, |y| 0.3 * y, 0.05).unwrap();
        let pair = make_fundamental(&spec, (0.1, 50.0)).unwrap();
        let gbm = gbm_pair();
        for &(x, y) in &[(0.3, 0.9), (1.0, 2.0), (2.0, 7.0)] {
            let a = field_f(&pair, x, y).unwrap();
            let b = field_f(&gbm, x, y).unwrap();
            assert!((a - b).abs() < 1e-6 * b.abs(), "{x} {y}: {a} vs {b}");
        }
    }

    #[test]
    fn minimal_barrier_gbm_is_the_ray() {
        let pair = gbm_pair();
        let (b, report) = minimal_barrier(&pair, (0.1, 10.0), &EnvelopeOptions::default()).unwrap();
        assert!(b.membership_checked());
        let worst = log_grid(0.1, 10.0, 200)
            .into_iter()
            .map(|x| (b.eval(x) / (C_REF * x) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5, "worst {worst}, report {report:?}");
    }

    #[test]
    fn barrier_inverse_rules() {
        let ray = Barrier::ray(C_REF, (0.1, 10.0));
        assert!((ray.inverse(7.0) - 7.0 / C_REF).abs() < 1e-15);
        let xs = log_grid(0.5, 4.0, 30);
        let bs: Vec<f64> = xs.iter().map(|x| 2.0 * x + 0.3 * x * x).collect();
        let b = Barrier::from_points(xs, bs, BarrierSource::Points);
        assert_eq!(b.inverse(0.5), 0.0);
        for &y in &[1.3, 2.0, 5.0, 12.0] {
            assert!((b.eval(b.inverse(y)) - y).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_derivative_is_reciprocal_field() {
        let pair = gbm_pair();
        let (curve, _) =
            integrate_barrier(&pair, (10.0, 1.3 * C_REF * 10.0), Direction::Backward, &Guards::new(0.5, 10.0))
                .unwrap();
        let b = Barrier::from_curve(&curve, BarrierSource::Points);
        for &y in &[5.0, 10.0, 20.0, 40.0] {
            let h = 1e-5 * y;
            let fd = (b.inverse(y + h) - b.inverse(y - h)) / (2.0 * h);
            let x = b.inverse(y);
            let exact = 1.0 / field_f(&pair, x, y).unwrap();
            assert!((fd - exact).abs() < 1e-5 * exact.abs(), "{y}: {fd} vs {exact}");
        }
    }

    #[test]
    fn shooting_brackets_the_ray() {
        let pair = gbm_pair();
        let shot = shoot_minimal(&pair, 1.0, 1e16, 1e-9).unwrap();
        assert!((shot.estimate() - C_REF).abs() < 1e-3, "{shot:?}");
        let b = shooting_barrier(&pair, 0.2, &shot).unwrap();
        assert_eq!(b.source(), BarrierSource::Shooting);
        assert!((b.eval(0.5) / 0.5 - C_REF).abs() < 1e-3, "{} {}", b.eval(0.5) / 0.5, shot.estimate());
    }

    #[test]
    fn solutions_are_ordered() {
        let pair = gbm_pair();
        let guards = Guards::new(0.1, 50.0);
        let starts = [(1.0, 3.0), (1.0, 3.5), (1.0, C_REF), (1.0, 4.5)];
        let sweep = classification_sweep(&pair, &starts, 1e12, Execution::Sequential);
        let curves: Vec<Hermite> = sweep.iter().map(|r| r.as_ref().unwrap().0.interpolant()).collect();
        let labels: Vec<bool> = sweep.iter().map(|r| r.as_ref().unwrap().1.hits_diagonal()).collect();
        assert_eq!(labels, vec![true, true, false, false]);
        for x in [1.0, 1.05, 1.1, 1.2] {
            for w in curves.windows(2) {
                if x <= w[0].x_max() && x <= w[1].x_max() {
                    assert!(w[0].eval(x) < w[1].eval(x));
                }
            }
        }
        let _ = guards;
    }
}
