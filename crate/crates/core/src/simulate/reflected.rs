//! The pair `(X^, Y^)` reflected at the diagonal in direction `(1/2, 1)`,
//! and the stopping problem `E[exp(A_tau - r tau)]` with
//! `dA = mu(Y^) / sigma^2(Y^) dA^`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{path_rng, MCEstimate, SimConfig, Stepper};
use crate::barrier::Barrier;
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::DiffusionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectedStep {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Cumulative push `A^`.
    pub a: f64,
    /// Change of `Y^` over the step before projection.
    pub increment: f64,
}

/// Oblique projection of a state below the diagonal: with `g = x - y > 0`
/// the push `dA = 2g` moves `y` by `dA` and `x` by `dA / 2`, landing both
/// on `x + g`. States with `y >= x` are returned unchanged with `dA = 0`.
pub fn project_oblique(x: f64, y: f64) -> (f64, f64, f64) {
    if y >= x {
        return (x, y, 0.0);
    }
    let g = x - y;
    let level = x + g;
    (level, level, 2.0 * g)
}

/// Explicit discrete Skorokhod map of a gap started at `z0 >= 0` and driven
/// by `increments`: `z_k = z0 + M_k + max(0, max_{j<=k} -(z0 + M_j))`.
pub fn discrete_skorokhod_gap(z0: f64, increments: &[f64]) -> Vec<f64> {
    let mut m = 0.0;
    let mut push = 0.0f64;
    increments
        .iter()
        .map(|dm| {
            m += dm;
            push = push.max(-(z0 + m));
            z0 + m + push
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingOutcome {
    /// `exp(A_tau - r tau)`; evaluated at the horizon for censored paths.
    pub payoff: f64,
    pub stopped: bool,
    pub tau: f64,
    pub a_functional: f64,
    pub final_x: f64,
    pub final_y: f64,
}

fn reflect_loop(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    stop: Option<&Barrier>,
    cfg: &SimConfig,
    path_index: u64,
    mut on_step: impl FnMut(ReflectedStep),
) -> Result<StoppingOutcome> {
    if !(x > 0.0 && y >= x) {
        return Err(Error::Domain(format!("need 0 < x <= y, got ({x}, {y})")));
    }
    let stepper = Stepper::new(spec, cfg);
    let mut lx = x;
    let mut a_push = 0.0;
    let mut a_fun = 0.0;
    on_step(ReflectedStep {
        t: 0.0,
        x,
        y,
        a: 0.0,
        increment: 0.0,
    });
    let level_b = |lx: f64| stop.map_or(f64::INFINITY, |b| stepper.from_level(b.eval(lx)));
    if let Some(b) = stop {
        if y >= b.eval(x) {
            return Ok(StoppingOutcome {
                payoff: 1.0,
                stopped: true,
                tau: 0.0,
                a_functional: 0.0,
                final_x: x,
                final_y: y,
            });
        }
    }
    let mut rng = path_rng(cfg.seed, path_index);
    let mut s = stepper.from_level(y);
    let mut s_x = stepper.from_level(lx);
    let mut s_b = level_b(lx);
    let n = cfg.n_steps();
    let mut level_y = y;
    for k in 1..=n {
        let z: f64 = rng.sample(StandardNormal);
        let prev = level_y;
        s = stepper.advance(s, z);
        let t = k as f64 * cfg.dt;
        let pre = stepper.to_level(s);
        level_y = pre;
        if s < s_x {
            let (nx, ny, da) = project_oblique(lx, pre);
            lx = nx;
            level_y = ny;
            a_push += da;
            a_fun += spec.mu_over_sigma2(ny) * da;
            s = stepper.from_level(ny);
            s_x = s;
            s_b = level_b(lx);
        }
        on_step(ReflectedStep {
            t,
            x: lx,
            y: level_y,
            a: a_push,
            increment: pre - prev,
        });
        if s >= s_b {
            return Ok(StoppingOutcome {
                payoff: (a_fun - spec.r() * t).exp(),
                stopped: true,
                tau: t,
                a_functional: a_fun,
                final_x: lx,
                final_y: level_y,
            });
        }
    }
    let t = n as f64 * cfg.dt;
    Ok(StoppingOutcome {
        payoff: (a_fun - spec.r() * t).exp(),
        stopped: false,
        tau: t,
        a_functional: a_fun,
        final_x: lx,
        final_y: level_y,
    })
}

/// Path of the reflected pair, run to the horizon or, with `stop`, until
/// `Y^ >= b(X^)`.
pub fn simulate_reflected(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    stop: Option<&Barrier>,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Vec<ReflectedStep>> {
    cfg.validate(spec)?;
    let mut steps = Vec::new();
    reflect_loop(spec, x, y, stop, cfg, path_index, |s| steps.push(s))?;
    Ok(steps)
}

/// One path of the stopping problem under `tau = inf{t : Y^ >= b(X^)}`.
pub fn run_stopping(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    barrier: &Barrier,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<StoppingOutcome> {
    reflect_loop(spec, x, y, Some(barrier), cfg, path_index, |_| {})
}

/// Monte Carlo estimate of `E[exp(A_tau - r tau)]`; `absorbed_fraction`
/// counts stopped paths.
pub fn estimate_stopping_value(
    spec: &DiffusionSpec,
    x: f64,
    y: f64,
    barrier: &Barrier,
    cfg: &SimConfig,
) -> Result<MCEstimate> {
    cfg.validate(spec)?;
    let outcomes = map_indexed(cfg.n_paths, cfg.execution, |i| {
        run_stopping(spec, x, y, barrier, cfg, i as u64)
    });
    let outcomes: Vec<StoppingOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    Ok(MCEstimate::from_samples(
        outcomes.iter().map(|o| (o.payoff, o.stopped, o.tau)),
    ))
}
