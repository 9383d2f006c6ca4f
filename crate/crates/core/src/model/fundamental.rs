//! Increasing (`psi`) and decreasing (`phi`) positive solutions of `L f = 0`.
//!
//! Every evaluator is available in log form (`ln f` and the log-derivative
//! `f'/f`), which keeps the boundary field finite where `psi` itself would
//! overflow, e.g. exponential solutions far from the anchor.
//!
//! Numeric solutions are integrated in the variable `t = ln y` through the
//! Riccati equation for the elasticity `e = y f'/f`:
//!
//! ```text
//! e' = e - e^2 + 2 r y^2 / sigma^2 - 2 y mu e / sigma^2,      (ln f)' = e
//! ```
//!
//! The growing branch (`psi`) is integrated forward from the left end of an
//! extended domain and the decaying branch (`phi`) backward from the right
//! end; in those directions each branch is the attracting one, so the
//! contamination by the other solution dies out before the working domain.

use crate::error::{Error, Result};
use crate::interp::Hermite;
use crate::model::{constant_lambda_roots, gbm_gamma_roots, Coefficients, DiffusionSpec};
use crate::ode::{self, Control, Dopri5Options, Outcome};

#[derive(Debug, Clone, Copy)]
pub struct NumericOptions {
    /// Branches are integrated over `[y_lo / extension, y_hi * extension]`
    /// (clipped to the coefficient support).
    pub extension: f64,
    pub rtol: f64,
    /// Maximal step in `ln y`; also sets the node density of the tables.
    pub max_log_step: f64,
    /// Normalisation point; defaults to the geometric midpoint of the domain.
    pub anchor: Option<f64>,
}

impl Default for NumericOptions {
    fn default() -> Self {
        Self {
            extension: 100.0,
            rtol: 1e-12,
            max_log_step: 0.01,
            anchor: None,
        }
    }
}

/// One numeric branch tabulated over `t = ln y`.
#[derive(Debug, Clone)]
pub struct NumericBranch {
    log_value: Hermite,
    elasticity: Hermite,
    offset: f64,
}

impl NumericBranch {
    fn eval(&self, y: f64) -> (f64, f64) {
        let t = y.ln();
        let (l, _) = self.log_value.eval_with_derivative(t);
        let e = self.elasticity.eval(t);
        (l - self.offset, e / y)
    }
}

#[derive(Debug, Clone)]
pub enum PairKind {
    /// `psi = (y/c)^gamma2`, `phi = (y/c)^gamma1`.
    PowerLaw { gamma1: f64, gamma2: f64 },
    /// `psi = exp(lambda_plus (y - c))`, `phi = exp(lambda_minus (y - c))`.
    Exponential { lambda_minus: f64, lambda_plus: f64 },
    Numeric {
        psi: NumericBranch,
        phi: NumericBranch,
    },
}

#[derive(Debug, Clone)]
pub struct FundamentalPair {
    kind: PairKind,
    spec: DiffusionSpec,
    anchor: f64,
    domain: (f64, f64),
}

/// Builds the pair on `domain = (y_lo, y_hi)`, analytic where possible.
pub fn make_fundamental(spec: &DiffusionSpec, domain: (f64, f64)) -> Result<FundamentalPair> {
    make_fundamental_with(spec, domain, &NumericOptions::default())
}

pub fn make_fundamental_with(
    spec: &DiffusionSpec,
    domain: (f64, f64),
    opts: &NumericOptions,
) -> Result<FundamentalPair> {
    let (lo, hi) = domain;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Domain(format!(
            "fundamental solutions need 0 < y_lo < y_hi, got ({lo}, {hi})"
        )));
    }
    match spec.coefficients() {
        Coefficients::Gbm { alpha, beta } => {
            let (gamma1, gamma2) = gbm_gamma_roots(*alpha, *beta, spec.r())?;
            Ok(FundamentalPair {
                kind: PairKind::PowerLaw { gamma1, gamma2 },
                spec: spec.clone(),
                anchor: 1.0,
                domain,
            })
        }
        Coefficients::Constant { mu, sigma } => {
            let (lambda_minus, lambda_plus) = constant_lambda_roots(*mu, *sigma, spec.r());
            Ok(FundamentalPair {
                kind: PairKind::Exponential {
                    lambda_minus,
                    lambda_plus,
                },
                spec: spec.clone(),
                anchor: opts.anchor.unwrap_or(0.5 * (lo + hi)),
                domain,
            })
        }
        Coefficients::Custom(c) => {
            let (mut a, mut b) = (lo / opts.extension, hi * opts.extension);
            if let Some((s_lo, s_hi)) = c.support {
                a = a.max(s_lo).min(lo);
                b = b.min(s_hi).max(hi);
            }
            spec.check_on(a, b, 400)?;
            let anchor = opts.anchor.unwrap_or((lo * hi).sqrt());
            let psi = integrate_branch(spec, a, b, true, opts)?;
            let phi = integrate_branch(spec, a, b, false, opts)?;
            let mut psi = psi;
            let mut phi = phi;
            psi.offset = psi.log_value.eval(anchor.ln());
            phi.offset = phi.log_value.eval(anchor.ln());
            let pair = FundamentalPair {
                kind: PairKind::Numeric { psi, phi },
                spec: spec.clone(),
                anchor,
                domain,
            };
            pair.check_monotone(200)?;
            Ok(pair)
        }
    }
}

fn riccati_rhs(spec: &DiffusionSpec, t: f64, e: f64) -> Option<f64> {
    let y = t.exp();
    let s2 = spec.sigma2(y);
    if !(s2 > 0.0) {
        return None;
    }
    Some(e - e * e + 2.0 * spec.r() * y * y / s2 - 2.0 * y * spec.mu(y) * e / s2)
}

fn integrate_branch(
    spec: &DiffusionSpec,
    a: f64,
    b: f64,
    increasing: bool,
    opts: &NumericOptions,
) -> Result<NumericBranch> {
    let (t0, t1) = if increasing { (a.ln(), b.ln()) } else { (b.ln(), a.ln()) };
    let y0 = t0.exp();
    // equilibrium of the Riccati equation with coefficients frozen at the
    // start: e^2 + (2 y mu / sigma^2 - 1) e - 2 r y^2 / sigma^2 = 0
    let s2 = spec.sigma2(y0);
    let p = 2.0 * y0 * spec.mu(y0) / s2 - 1.0;
    let q = -2.0 * spec.r() * y0 * y0 / s2;
    let disc = (p * p - 4.0 * q).sqrt();
    let e_plus = if p >= 0.0 {
        -2.0 * q / (p + disc)
    } else {
        0.5 * (disc - p)
    };
    let e0 = if increasing { e_plus } else { q / e_plus };

    let ode_opts = Dopri5Options {
        rtol: opts.rtol,
        atol: 1e-14,
        h_init: opts.max_log_step * 0.1,
        h_min: 1e-12,
        h_min_rel: 0.0,
        h_max_abs: opts.max_log_step,
        h_max_rel: 0.0,
    };
    let mut nodes: Vec<(f64, f64, f64)> = Vec::new();
    let out = ode::integrate(
        |t, s: &[f64; 2]| Some([s[1], riccati_rhs(spec, t, s[1])?]),
        t0,
        [0.0, e0],
        t1,
        &ode_opts,
        |t, s| {
            nodes.push((t, s[0], s[1]));
            if s[1].is_finite() {
                Control::Continue
            } else {
                Control::Stop
            }
        },
    );
    match out {
        Outcome::Finished { .. } => {}
        Outcome::Stopped { t, .. } | Outcome::StepUnderflow { t, .. } => {
            return Err(Error::IntegrationFailure(format!(
                "{} branch broke down at y = {}",
                if increasing { "psi" } else { "phi" },
                t.exp()
            )));
        }
    }
    if !increasing {
        nodes.reverse();
    }
    nodes.dedup_by(|b, a| b.0 <= a.0);
    let ts: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let ls: Vec<f64> = nodes.iter().map(|n| n.1).collect();
    let es: Vec<f64> = nodes.iter().map(|n| n.2).collect();
    let des: Vec<f64> = nodes
        .iter()
        .map(|n| riccati_rhs(spec, n.0, n.2).unwrap_or(f64::NAN))
        .collect();
    for (t, e) in ts.iter().zip(&es) {
        let ok = if increasing { *e > 0.0 } else { *e < 0.0 };
        if !ok || !e.is_finite() {
            return Err(Error::IntegrationFailure(format!(
                "{} loses monotonicity at y = {}",
                if increasing { "psi" } else { "phi" },
                t.exp()
            )));
        }
    }
    Ok(NumericBranch {
        log_value: Hermite::with_slopes(ts.clone(), ls, es.clone()),
        elasticity: Hermite::with_slopes(ts, es, des),
        offset: 0.0,
    })
}

impl FundamentalPair {
    pub fn kind(&self) -> &PairKind {
        &self.kind
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    /// Normalisation point `c` with `psi(c) = phi(c) = 1`.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// `(ln psi, psi'/psi)`.
    #[inline]
    pub fn psi_log(&self, y: f64) -> (f64, f64) {
        match &self.kind {
            PairKind::PowerLaw { gamma2, .. } => (gamma2 * (y / self.anchor).ln(), gamma2 / y),
            PairKind::Exponential { lambda_plus, .. } => {
                (lambda_plus * (y - self.anchor), *lambda_plus)
            }
            PairKind::Numeric { psi, .. } => psi.eval(y),
        }
    }

    /// `(ln phi, phi'/phi)`.
    #[inline]
    pub fn phi_log(&self, y: f64) -> (f64, f64) {
        match &self.kind {
            PairKind::PowerLaw { gamma1, .. } => (gamma1 * (y / self.anchor).ln(), gamma1 / y),
            PairKind::Exponential { lambda_minus, .. } => {
                (lambda_minus * (y - self.anchor), *lambda_minus)
            }
            PairKind::Numeric { phi, .. } => phi.eval(y),
        }
    }

    /// `f''/f` for a branch with log-derivative `w`.
    fn second_ratio(&self, y: f64, w: f64, exponent: Option<f64>) -> f64 {
        match (&self.kind, exponent) {
            (PairKind::PowerLaw { .. }, Some(g)) => g * (g - 1.0) / (y * y),
            (PairKind::Exponential { .. }, Some(l)) => l * l,
            _ => 2.0 * (self.spec.r() - self.spec.mu(y) * w) / self.spec.sigma2(y),
        }
    }

    fn exponents(&self) -> (Option<f64>, Option<f64>) {
        match self.kind {
            PairKind::PowerLaw { gamma1, gamma2 } => (Some(gamma2), Some(gamma1)),
            PairKind::Exponential {
                lambda_minus,
                lambda_plus,
            } => (Some(lambda_plus), Some(lambda_minus)),
            PairKind::Numeric { .. } => (None, None),
        }
    }

    pub fn psi(&self, y: f64) -> f64 {
        self.psi_log(y).0.exp()
    }

    pub fn phi(&self, y: f64) -> f64 {
        self.phi_log(y).0.exp()
    }

    pub fn dpsi(&self, y: f64) -> f64 {
        let (l, w) = self.psi_log(y);
        l.exp() * w
    }

    pub fn dphi(&self, y: f64) -> f64 {
        let (l, w) = self.phi_log(y);
        l.exp() * w
    }

    pub fn d2psi(&self, y: f64) -> f64 {
        let (l, w) = self.psi_log(y);
        l.exp() * self.second_ratio(y, w, self.exponents().0)
    }

    pub fn d2phi(&self, y: f64) -> f64 {
        let (l, w) = self.phi_log(y);
        l.exp() * self.second_ratio(y, w, self.exponents().1)
    }

    /// `S'(y) = phi psi' - psi phi'`.
    pub fn sprime(&self, y: f64) -> f64 {
        let (lp, wp) = self.psi_log(y);
        let (lf, wf) = self.phi_log(y);
        (lp + lf).exp() * (wp - wf)
    }

    /// `delta(x, y) = phi(x) psi(y) - phi(y) psi(x)`.
    pub fn delta(&self, x: f64, y: f64) -> f64 {
        self.phi(x) * self.psi(y) - self.phi(y) * self.psi(x)
    }

    /// `psi'(y) / S'(y)`.
    pub fn dpsi_over_sprime(&self, y: f64) -> f64 {
        let (_, wp) = self.psi_log(y);
        let (lf, wf) = self.phi_log(y);
        (-lf).exp() * wp / (wp - wf)
    }

    /// `phi'(y) / S'(y)`.
    pub fn dphi_over_sprime(&self, y: f64) -> f64 {
        let (lp, wp) = self.psi_log(y);
        let (_, wf) = self.phi_log(y);
        (-lp).exp() * wf / (wp - wf)
    }

    /// Checks positivity of `S'`, the sign of both log-derivatives, and the
    /// generator residual on `n` log-spaced points of the domain.
    pub fn check_monotone(&self, n: usize) -> Result<()> {
        let (lo, hi) = self.domain;
        for i in 0..n {
            let y = lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64);
            let (_, wp) = self.psi_log(y);
            let (_, wf) = self.phi_log(y);
            if !(wp > 0.0 && wf < 0.0) {
                return Err(Error::IntegrationFailure(format!(
                    "monotonicity lost at y = {y} (psi'/psi = {wp}, phi'/phi = {wf})"
                )));
            }
        }
        Ok(())
    }

    /// Largest generator residual `|L f| / (r |f|)` over both branches on
    /// `n` log-spaced points, with derivatives taken from the evaluators.
    pub fn max_relative_generator_residual(&self, n: usize) -> f64 {
        let (lo, hi) = self.domain;
        let r = self.spec.r();
        let mut worst = 0.0f64;
        for i in 0..n {
            let y = lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64);
            for (f, df, d2f) in [
                (self.psi(y), self.dpsi(y), self.d2psi(y)),
                (self.phi(y), self.dphi(y), self.d2phi(y)),
            ] {
                let res = 0.5 * self.spec.sigma2(y) * d2f + self.spec.mu(y) * df - r * f;
                worst = worst.max(res.abs() / (r * f.abs()));
            }
        }
        worst
    }
}
