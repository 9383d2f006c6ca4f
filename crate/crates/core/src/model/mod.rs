//! Diffusion coefficients, the killed generator and the fundamental
//! solutions of `L f = 0`.

mod file;
mod fundamental;

pub use file::{CoefficientTable, ModelFile};
pub use fundamental::{make_fundamental, make_fundamental_with, FundamentalPair, NumericOptions, PairKind};

use std::fmt;
use std::sync::Arc;

use crate::dd::DD;
use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied smooth coefficients. Derivatives are optional; when absent,
/// central differences are used where a derivative is needed.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub mu: ScalarFn,
    pub sigma: ScalarFn,
    pub dmu: Option<ScalarFn>,
    pub dsigma: Option<ScalarFn>,
    /// Range on which the coefficients are trusted (e.g. table range).
    pub support: Option<(f64, f64)>,
}

impl fmt::Debug for CustomCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCoefficients")
            .field("analytic_derivatives", &self.dmu.is_some())
            .field("support", &self.support)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Coefficients {
    /// `mu(y) = alpha y`, `sigma(y) = beta y`.
    Gbm { alpha: f64, beta: f64 },
    Constant { mu: f64, sigma: f64 },
    Custom(CustomCoefficients),
}

/// Uncontrolled capital dynamics `dY = mu(Y) dt + sigma(Y) dW` with discount
/// rate `r`.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    coefficients: Coefficients,
    r: f64,
}

impl DiffusionSpec {
    pub fn gbm(alpha: f64, beta: f64, r: f64) -> Result<Self> {
        check_rate(r)?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Parameter(format!("gbm drift alpha = {alpha} must be >= 0")));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Parameter(format!("gbm volatility beta = {beta} must be > 0")));
        }
        if alpha >= r {
            return Err(Error::Parameter(format!(
                "gbm requires alpha < r (alpha = {alpha}, r = {r})"
            )));
        }
        Ok(Self {
            coefficients: Coefficients::Gbm { alpha, beta },
            r,
        })
    }

    pub fn constant(mu: f64, sigma: f64, r: f64) -> Result<Self> {
        check_rate(r)?;
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::Parameter(format!("drift mu = {mu} must be >= 0")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::NonPositiveVolatility { y: f64::NAN });
        }
        Ok(Self {
            coefficients: Coefficients::Constant { mu, sigma },
            r,
        })
    }

    /// Custom coefficients; positivity of `sigma` and sign of `mu` are checked
    /// on the working domain when the fundamental pair is built.
    pub fn custom(coefficients: CustomCoefficients, r: f64) -> Result<Self> {
        check_rate(r)?;
        Ok(Self {
            coefficients: Coefficients::Custom(coefficients),
            r,
        })
    }

    /// Convenience: custom spec from plain closures.
    pub fn custom_fn<M, S>(mu: M, sigma: S, r: f64) -> Result<Self>
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::custom(
            CustomCoefficients {
                mu: Arc::new(mu),
                sigma: Arc::new(sigma),
                dmu: None,
                dsigma: None,
                support: None,
            },
            r,
        )
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn is_gbm(&self) -> bool {
        matches!(self.coefficients, Coefficients::Gbm { .. })
    }

    /// `(alpha, beta)` when the model is a geometric Brownian motion.
    pub fn gbm_params(&self) -> Option<(f64, f64)> {
        match self.coefficients {
            Coefficients::Gbm { alpha, beta } => Some((alpha, beta)),
            _ => None,
        }
    }

    #[inline]
    pub fn mu(&self, y: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { alpha, .. } => alpha * y,
            Coefficients::Constant { mu, .. } => *mu,
            Coefficients::Custom(c) => (c.mu)(y),
        }
    }

    #[inline]
    pub fn sigma(&self, y: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { beta, .. } => beta * y,
            Coefficients::Constant { sigma, .. } => *sigma,
            Coefficients::Custom(c) => (c.sigma)(y),
        }
    }

    #[inline]
    pub fn sigma2(&self, y: f64) -> f64 {
        let s = self.sigma(y);
        s * s
    }

    /// `mu / sigma^2`, the density of the reflection functional and the
    /// drift term of the boundary field.
    #[inline]
    pub fn mu_over_sigma2(&self, y: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { alpha, beta } => alpha / (beta * beta * y),
            _ => self.mu(y) / self.sigma2(y),
        }
    }

    /// Derivative of `mu / sigma^2`.
    pub fn mu_over_sigma2_derivative(&self, x: f64) -> f64 {
        match &self.coefficients {
            Coefficients::Gbm { alpha, beta } => -alpha / (beta * beta * x * x),
            Coefficients::Constant { .. } => 0.0,
            Coefficients::Custom(c) => match (&c.dmu, &c.dsigma) {
                (Some(dmu), Some(dsigma)) => {
                    let s = (c.sigma)(x);
                    ((dmu)(x) * s - 2.0 * (c.mu)(x) * (dsigma)(x)) / (s * s * s)
                }
                _ => {
                    let h = 1e-5 * (1.0 + x.abs());
                    (self.mu_over_sigma2(x + h) - self.mu_over_sigma2(x - h)) / (2.0 * h)
                }
            },
        }
    }

    /// `zeta(x) = 2r/sigma^2 + (mu/sigma^2)' + mu^2/sigma^4`; positivity on
    /// the domain is the sufficient condition for ordered solutions of the
    /// boundary ODE and a monotone `d(x)`.
    pub fn zeta(&self, x: f64) -> f64 {
        let m = self.mu_over_sigma2(x);
        2.0 * self.r / self.sigma2(x) + self.mu_over_sigma2_derivative(x) + m * m
    }

    /// Checks `sigma > 0` and `mu >= 0` on `n` log-spaced samples of `[lo, hi]`.
    pub fn check_on(&self, lo: f64, hi: f64, n: usize) -> Result<()> {
        for i in 0..n {
            let y = lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64);
            let s = self.sigma(y);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::NonPositiveVolatility { y });
            }
            let m = self.mu(y);
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::Parameter(format!("drift mu({y}) = {m} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn check_rate(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("discount rate r = {r} must be > 0")))
    }
}

/// Killed generator applied to a 2-jet: `sigma^2/2 f'' + mu f' - r f`.
pub fn generator_apply(spec: &DiffusionSpec, y: f64, f: f64, df: f64, d2f: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at y = {y} <= 0")));
    }
    Ok(0.5 * spec.sigma2(y) * d2f + spec.mu(y) * df - spec.r * f)
}

/// Generator applied to a function, derivatives by central differences.
pub fn generator_apply_fn<F: Fn(f64) -> f64>(spec: &DiffusionSpec, f: F, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain(format!("generator evaluated at y = {y} <= 0")));
    }
    let h = 1e-4 * y.max(1e-3);
    let (fm, f0, fp) = (f(y - h), f(y), f(y + h));
    let df = (fp - fm) / (2.0 * h);
    let d2f = (fp - 2.0 * f0 + fm) / (h * h);
    generator_apply(spec, y, f0, df, d2f)
}

/// Roots `gamma1 < 0 < gamma2` of `g^2 + (2 alpha/beta^2 - 1) g - 2r/beta^2`.
pub fn gbm_gamma_roots(alpha: f64, beta: f64, r: f64) -> Result<(f64, f64)> {
    let (g1, g2) = gbm_gamma_roots_dd(alpha, beta, r)?;
    Ok((g1.to_f64(), g2.to_f64()))
}

pub(crate) fn gbm_gamma_roots_dd(alpha: f64, beta: f64, r: f64) -> Result<(DD, DD)> {
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta = {beta} must be > 0")));
    }
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("r = {r} must be > 0")));
    }
    if alpha >= r {
        return Err(Error::Parameter(format!(
            "gbm requires alpha < r (alpha = {alpha}, r = {r})"
        )));
    }
    let b2 = DD::new(beta) * DD::new(beta);
    let p = DD::new(2.0) * DD::new(alpha) / b2 - DD::new(1.0);
    let q = -(DD::new(2.0) * DD::new(r) / b2);
    let disc = (p * p - DD::new(4.0) * q).sqrt();
    // larger-magnitude root first, the other through Vieta's product
    let big = if p.hi >= 0.0 {
        -(p + disc) / DD::new(2.0)
    } else {
        (disc - p) / DD::new(2.0)
    };
    let small = q / big;
    let (g1, g2) = if big.hi < small.hi { (big, small) } else { (small, big) };
    Ok((g1, g2))
}

/// Roots of `(sigma^2/2) l^2 + mu l - r = 0` for constant coefficients.
pub fn constant_lambda_roots(mu: f64, sigma: f64, r: f64) -> (f64, f64) {
    let a = 0.5 * sigma * sigma;
    let disc = (mu * mu + 4.0 * a * r).sqrt();
    // l_minus is the large-magnitude root when mu >= 0
    let l_minus = (-mu - disc) / (2.0 * a);
    let l_plus = -r / (a * l_minus);
    (l_minus, l_plus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_residual(alpha: f64, beta: f64, r: f64, g: f64) -> f64 {
        g * g + (2.0 * alpha / (beta * beta) - 1.0) * g - 2.0 * r / (beta * beta)
    }

    #[test]
    fn gbm_roots_reference_case() {
        let (g1, g2) = gbm_gamma_roots(0.04, 0.3, 0.05).unwrap();
        assert!((g1 + 1.0).abs() < 1e-15);
        assert!((g2 - 10.0 / 9.0).abs() < 1e-15);
        assert!(quad_residual(0.04, 0.3, 0.05, g1).abs() < 1e-14);
        assert!(quad_residual(0.04, 0.3, 0.05, g2).abs() < 1e-14);
        // generic quadratic formula as cross-check
        let p: f64 = 2.0 * 0.04 / 0.09 - 1.0;
        let q: f64 = -2.0 * 0.05 / 0.09;
        let d = (p * p - 4.0 * q).sqrt();
        assert!((g1 - (-p - d) / 2.0).abs() < 1e-13);
        assert!((g2 - (-p + d) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn gbm_roots_vieta() {
        let (g1, g2) = gbm_gamma_roots(0.02, 0.2, 0.05).unwrap();
        assert!((g1 * g2 + 2.5).abs() < 1e-13);
        assert!((g1 + g2 - (1.0 - 2.0 * 0.02 / 0.04)).abs() < 1e-13);
        assert!(g1 < 0.0 && g2 > 0.0);
    }

    #[test]
    fn gbm_roots_reject_alpha_ge_r() {
        assert!(matches!(gbm_gamma_roots(0.05, 0.3, 0.05), Err(Error::Parameter(_))));
        assert!(matches!(DiffusionSpec::gbm(0.06, 0.3, 0.05), Err(Error::Parameter(_))));
    }

    #[test]
    fn gamma2_exceeds_one_but_stays_below_r_over_alpha() {
        for &(a, b, r) in &[(0.04, 0.3, 0.05), (0.01, 0.5, 0.03), (0.049, 0.2, 0.05)] {
            let (_, g2) = gbm_gamma_roots(a, b, r).unwrap();
            assert!(g2 > 1.0 && g2 < r / a, "{a} {b} {r}: {g2}");
        }
    }

    #[test]
    fn constant_roots() {
        let (lm, lp) = constant_lambda_roots(0.04, 0.3, 0.05);
        assert!((lp - 0.699_514_460_109_667).abs() < 1e-12);
        assert!((lm + 1.588_403_348_998_556).abs() < 1e-12);
        // Vieta: sum = -mu/a, product = -r/a
        let a = 0.045;
        assert!((lp + lm + 0.04 / a).abs() < 1e-13);
        assert!((lp * lm + 0.05 / a).abs() < 1e-13);
    }

    #[test]
    fn generator_examples() {
        let gbm = DiffusionSpec::gbm(0.04, 0.3, 0.05).unwrap();
        assert!((generator_apply(&gbm, 2.0, 1.0, 0.0, 0.0).unwrap() + 0.05).abs() < 1e-15);
        let cst = DiffusionSpec::constant(0.04, 0.3, 0.05).unwrap();
        let lf = generator_apply(&cst, 3.0, 3.0, 1.0, 0.0).unwrap();
        assert!((lf + 0.11).abs() < 1e-15);
        assert!(matches!(generator_apply(&cst, 0.0, 1.0, 0.0, 0.0), Err(Error::Domain(_))));
        let (_, g2) = gbm_gamma_roots(0.04, 0.3, 0.05).unwrap();
        let psi = |y: f64| y.powf(g2);
        assert!(generator_apply_fn(&gbm, psi, 1.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn zeta_examples() {
        let gbm = DiffusionSpec::gbm(0.04, 0.3, 0.05).unwrap();
        assert!((gbm.zeta(1.0) - 0.864_197_530_864_197_5).abs() < 1e-12);
        let cst = DiffusionSpec::constant(0.04, 0.3, 0.05).unwrap();
        assert!((cst.zeta(0.5) - 1.308_641_975_308_642).abs() < 1e-12);
        assert!((cst.zeta(7.0) - cst.zeta(0.5)).abs() < 1e-15);
        let driftless = DiffusionSpec::constant(0.0, 0.4, 0.05).unwrap();
        assert!((driftless.zeta(2.0) - 2.0 * 0.05 / 0.16).abs() < 1e-15);
        // finite-difference path for custom coefficients agrees with gbm closed form
        let custom = DiffusionSpec::custom_fn(|y| 0.04 * y, |y| 0.3 * y, 0.05).unwrap();
        for &x in &[0.3, 1.0, 4.0] {
            assert!((custom.zeta(x) - gbm.zeta(x)).abs() < 1e-7 * gbm.zeta(x));
        }
    }
}
