//! Monte Carlo for the barrier control with absorption and for the
//! obliquely reflected stopping problem.
//!
//! Path `i` draws its normals from a ChaCha8 generator seeded with the run
//! seed and switched to stream `i`, so a path does not depend on how paths
//! are scheduled. Aggregation runs in path-index order.

mod reflected;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::barrier::Barrier;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{Coefficients, DiffusionSpec};

pub use reflected::{
    discrete_skorokhod_gap, estimate_stopping_value, project_oblique, run_stopping, simulate_reflected,
    ReflectedStep, StoppingOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    EulerMaruyama,
    /// Exact in distribution for geometric Brownian motion.
    LogEulerForGbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub t_max: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub execution: Execution,
}

impl SimConfig {
    /// `dt = 1e-3`, `t_max = 50 / r`, log scheme for gBm and Euler otherwise.
    pub fn for_spec(spec: &DiffusionSpec, n_paths: usize, seed: u64) -> Self {
        Self {
            dt: 1e-3,
            n_paths,
            t_max: 50.0 / spec.r(),
            seed,
            scheme: if spec.is_gbm() {
                Scheme::LogEulerForGbm
            } else {
                Scheme::EulerMaruyama
            },
            execution: Execution::default(),
        }
    }

    pub fn validate(&self, spec: &DiffusionSpec) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt = {} must be positive", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::Parameter("n_paths must be at least 1".into()));
        }
        if !(self.t_max >= self.dt) {
            return Err(Error::Parameter(format!(
                "t_max = {} must be at least dt = {}",
                self.t_max, self.dt
            )));
        }
        if self.scheme == Scheme::LogEulerForGbm && !spec.is_gbm() {
            return Err(Error::Parameter(
                "the log scheme needs a geometric Brownian motion model".into(),
            ));
        }
        Ok(())
    }

    fn n_steps(&self) -> u64 {
        (self.t_max / self.dt).ceil() as u64
    }
}

pub(crate) fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// One-step transition of `Y`, in log space for the log scheme.
#[derive(Clone, Copy)]
pub(crate) enum Stepper<'a> {
    /// `ln Y += drift + vol * Z`.
    Log { drift: f64, vol: f64 },
    /// `Y += mu(Y) dt + sigma(Y) sqrt(dt) Z`.
    Euler { spec: &'a DiffusionSpec, dt: f64, sdt: f64 },
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(spec: &'a DiffusionSpec, cfg: &SimConfig) -> Self {
        match (cfg.scheme, spec.coefficients()) {
            (Scheme::LogEulerForGbm, Coefficients::Gbm { alpha, beta }) => Stepper::Log {
                drift: (alpha - 0.5 * beta * beta) * cfg.dt,
                vol: beta * cfg.dt.sqrt(),
            },
            _ => Stepper::Euler {
                spec,
                dt: cfg.dt,
                sdt: cfg.dt.sqrt(),
            },
        }
    }

    pub(crate) fn is_log(&self) -> bool {
        matches!(self, Stepper::Log { .. })
    }

    /// Advances the state variable (`ln Y` or `Y`) by one step with noise `z`.
    #[inline]
    pub(crate) fn advance(&self, s: f64, z: f64) -> f64 {
        match *self {
            Stepper::Log { drift, vol } => s + drift + vol * z,
            Stepper::Euler { spec, dt, sdt } => {
                if s <= 0.0 {
                    return s;
                }
                s + spec.mu(s) * dt + spec.sigma(s) * sdt * z
            }
        }
    }

    #[inline]
    pub(crate) fn to_level(&self, s: f64) -> f64 {
        if self.is_log() {
            s.exp()
        } else {
            s
        }
    }

    /// Maps a level into the state variable; `-inf` for non-positive levels
    /// in log space.
    #[inline]
    pub(crate) fn from_level(&self, y: f64) -> f64 {
        if self.is_log() {
            if y > 0.0 {
                y.ln()
            } else {
                f64::NEG_INFINITY
            }
        } else {
            y
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub y: f64,
    pub x: f64,
    pub d: f64,
    pub absorbed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    /// `sum_k e^{-r t_k} dD_k`, including the time-zero lump.
    pub payoff: f64,
    pub absorbed: bool,
    /// Absorption time, or the horizon for censored paths.
    pub gamma: f64,
    pub final_x: f64,
    pub final_y: f64,
    pub final_d: f64,
}

/// Where points are appended during [`run_controlled`].
pub struct Recorder<'a> {
    pub points: &'a mut Vec<PathPoint>,
    /// Keep every `every`-th step plus all payment steps and the last one.
    pub every: u64,
}

/// Simulates one path of `Y` under the barrier control `D_t =
/// sup_{s <= t} (b^-1(Y_s) - x)^+` until `Y <= X = x + D` or the horizon.
pub fn run_controlled(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    barrier: &Barrier,
    cfg: &SimConfig,
    path_index: u64,
    mut recorder: Option<Recorder<'_>>,
) -> Result<PathOutcome> {
    if !(x > 0.0 && y >= x) {
        return Err(Error::Domain(format!("need 0 < x <= y, got ({x}, {y})")));
    }
    let r = spec.r();
    let stepper = Stepper::new(spec, cfg);
    let recording = recorder.is_some();
    let mut push = |p: PathPoint, force: bool, k: u64| {
        if let Some(rec) = recorder.as_mut() {
            if force || k.is_multiple_of(rec.every.max(1)) {
                rec.points.push(p);
            }
        }
    };

    let mut level_x = x;
    let mut payoff = 0.0;
    // time-zero lump
    if y > barrier.eval(x) {
        let xb = barrier.inverse(y);
        if xb > level_x {
            payoff += xb - level_x;
            level_x = xb;
        }
    }
    let absorbed_now = y <= level_x;
    push(
        PathPoint {
            t: 0.0,
            y,
            x: level_x,
            d: level_x - x,
            absorbed: absorbed_now,
        },
        true,
        0,
    );
    if absorbed_now {
        return Ok(PathOutcome {
            payoff,
            absorbed: true,
            gamma: 0.0,
            final_x: level_x,
            final_y: y,
            final_d: level_x - x,
        });
    }

    let mut rng = path_rng(cfg.seed, path_index);
    let mut s = stepper.from_level(y);
    let mut s_x = stepper.from_level(level_x);
    let mut s_b = stepper.from_level(barrier.eval(level_x));
    let n = cfg.n_steps();
    for k in 1..=n {
        let z: f64 = rng.sample(StandardNormal);
        s = stepper.advance(s, z);
        let t = k as f64 * cfg.dt;
        let mut paid = false;
        if s > s_b {
            let level_y = stepper.to_level(s);
            let xb = barrier.inverse(level_y);
            if xb > level_x {
                payoff += (-r * t).exp() * (xb - level_x);
                level_x = xb;
                s_x = stepper.from_level(level_x);
                s_b = stepper.from_level(barrier.eval(level_x));
                paid = true;
            }
        }
        if s <= s_x {
            let level_y = stepper.to_level(s);
            push(
                PathPoint {
                    t,
                    y: level_y,
                    x: level_x,
                    d: level_x - x,
                    absorbed: true,
                },
                true,
                k,
            );
            return Ok(PathOutcome {
                payoff,
                absorbed: true,
                gamma: t,
                final_x: level_x,
                final_y: level_y,
                final_d: level_x - x,
            });
        }
        if recording {
            push(
                PathPoint {
                    t,
                    y: stepper.to_level(s),
                    x: level_x,
                    d: level_x - x,
                    absorbed: false,
                },
                paid || k == n,
                k,
            );
        }
    }
    let level_y = stepper.to_level(s);
    Ok(PathOutcome {
        payoff,
        absorbed: false,
        gamma: n as f64 * cfg.dt,
        final_x: level_x,
        final_y: level_y,
        final_d: level_x - x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub absorbed_fraction: f64,
    pub censored_fraction: f64,
    /// Over absorbed paths only; `NaN` when none was absorbed.
    pub mean_absorption_time: f64,
}

impl MCEstimate {
    /// Aggregates `(payoff, absorbed, time)` triples in the given order.
    pub fn from_samples(samples: impl IntoIterator<Item = (f64, bool, f64)>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut absorbed = 0usize;
        let mut t_sum = 0.0;
        for (v, a, t) in samples {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
            if a {
                absorbed += 1;
                t_sum += t;
            }
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            n_paths: n,
            absorbed_fraction: absorbed as f64 / n as f64,
            censored_fraction: (n - absorbed) as f64 / n as f64,
            mean_absorption_time: if absorbed > 0 {
                t_sum / absorbed as f64
            } else {
                f64::NAN
            },
        }
    }

    /// `|mean - target| <= k * stderr`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Monte Carlo estimate of `J(x, y; D^b)`.
pub fn estimate_j(spec: &DiffusionSpec, x: f64, y: f64, barrier: &Barrier, cfg: &SimConfig) -> Result<MCEstimate> {
    cfg.validate(spec)?;
    let outcomes = map_indexed(cfg.n_paths, cfg.execution, |i| {
        run_controlled(spec, x, y, barrier, cfg, i as u64, None)
    });
    let outcomes: Vec<PathOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    Ok(MCEstimate::from_samples(
        outcomes.iter().map(|o| (o.payoff, o.absorbed, o.gamma)),
    ))
}

/// Records path `path_index` of [`estimate_j`] with the same noise.
pub fn record_controlled(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    barrier: &Barrier,
    cfg: &SimConfig,
    path_index: u64,
    every: u64,
) -> Result<(Vec<PathPoint>, PathOutcome)> {
    cfg.validate(spec)?;
    let mut points = Vec::new();
    let out = run_controlled(
        spec,
        x,
        y,
        barrier,
        cfg,
        path_index,
        Some(Recorder {
            points: &mut points,
            every,
        }),
    )?;
    Ok((points, out))
}

/// Recorded points at which a dividend was paid.
fn payments(path: &[PathPoint]) -> impl Iterator<Item = &PathPoint> {
    path.windows(2)
        .filter(|w| w[1].d > w[0].d)
        .map(|w| &w[1])
}

/// Every payment after time zero happens on the barrier: `X = b^-1(Y)` up
/// to `tol` relative, and `X >= b^-1(Y)` never fails by more than `tol`
/// at non-payment points.
pub fn check_skorokhod(path: &[PathPoint], barrier: &Barrier, tol: f64) -> bool {
    let on_barrier = payments(path).all(|p| (p.x - barrier.inverse(p.y)).abs() <= tol * (1.0 + p.x));
    let never_below = path.iter().all(|p| p.x >= barrier.inverse(p.y) - tol * (1.0 + p.x));
    let monotone = path.windows(2).all(|w| w[1].d >= w[0].d && w[1].x >= w[0].x);
    let admissible = path.iter().all(|p| p.x <= p.y || p.absorbed);
    on_barrier && never_below && monotone && admissible
}

/// For gBm under `b*(x) = C x`: every payment occurs at `Y / X = C`.
pub fn check_gbm_ratio_at_payments(path: &[PathPoint], c: f64, tol: f64) -> bool {
    payments(path).all(|p| (p.y / p.x - c).abs() < tol * c)
}
