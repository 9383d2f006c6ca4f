use std::fmt;
use std::path::Path;

use anyhow::Context;
use log::{info, warn};
use serde::Serialize;

use divbar::barrier::{
    classification_sweep, field_f, find_d, minimal_barrier, minimal_barrier_covering, Barrier, EnvelopeOptions, EnvelopeReport,
};
use divbar::exec::Execution;
use divbar::gbm::{Crosscheck, Discrepancy, GbmSolution};
use divbar::model::{make_fundamental, DiffusionSpec, FundamentalPair, ModelFile};
use divbar::output::{write_csv, write_json, BarrierRow, DRow, PathRow, ResidualCsvRow, SurfaceRow};
use divbar::simulate::{estimate_j, estimate_stopping_value, record_controlled, MCEstimate, SimConfig};
use divbar::value::{
    check_variational, continuation_grid, region_grid, value_ordering_check, ResidualReport, SuiteResult, Tolerances,
    ValueSurface,
};

use crate::{Common, GbmArgs, McArgs, SimulateArgs, SolveArgs, SurfaceArgs, VerifyArgs};

#[derive(Debug)]
pub struct InvalidModel(divbar::Error);

impl fmt::Display for InvalidModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid model: {}", self.0)
    }
}

impl std::error::Error for InvalidModel {}

#[derive(Debug)]
pub struct VerifyFailed(Vec<String>);

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "failed suites: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerifyFailed {}

#[derive(Debug)]
pub struct ExcessiveCensoring {
    problem: &'static str,
    fraction: f64,
    threshold: f64,
}

impl fmt::Display for ExcessiveCensoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} paths censored by the horizon: {:.3e} > {:.3e}",
            self.problem, self.fraction, self.threshold
        )
    }
}

impl std::error::Error for ExcessiveCensoring {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<InvalidModel>().is_some() {
        3
    } else if e.downcast_ref::<VerifyFailed>().is_some() {
        4
    } else if e.downcast_ref::<ExcessiveCensoring>().is_some() {
        5
    } else if let Some(divbar::Error::NoConvergence { .. }) = e.downcast_ref::<divbar::Error>() {
        2
    } else {
        1
    }
}

fn load_spec(model: Option<&Path>) -> anyhow::Result<DiffusionSpec> {
    let file = match model {
        Some(p) => ModelFile::load(p).map_err(InvalidModel)?,
        None => ModelFile::Gbm {
            alpha: 0.04,
            beta: 0.3,
            r: 0.05,
        },
    };
    Ok(file.to_spec().map_err(InvalidModel)?)
}

struct Setup {
    spec: DiffusionSpec,
    pair: FundamentalPair,
    domain: (f64, f64),
}

fn setup(c: &Common) -> anyhow::Result<Setup> {
    let spec = load_spec(c.model.as_deref())?;
    if !(c.xlo > 0.0 && c.xhi > c.xlo && c.xhi.is_finite()) {
        anyhow::bail!("need 0 < xlo < xhi, got xlo = {}, xhi = {}", c.xlo, c.xhi);
    }
    let domain = (c.xlo, c.xhi);
    let pair = make_fundamental(&spec, domain).map_err(InvalidModel)?;
    Ok(Setup { spec, pair, domain })
}

fn gbm_solution(spec: &DiffusionSpec) -> anyhow::Result<Option<GbmSolution>> {
    match spec.gbm_params() {
        Some((alpha, beta)) => Ok(Some(GbmSolution::new(alpha, beta, spec.r()).map_err(InvalidModel)?)),
        None => Ok(None),
    }
}

/// The closed-form ray for gBm, otherwise the anchor envelope extended so
/// that it solves the ODE at all levels up to `y_factor b*(xhi)`.
fn optimal_barrier(s: &Setup, grid: usize, y_factor: f64) -> anyhow::Result<Barrier> {
    if let Some(sol) = gbm_solution(&s.spec)? {
        return Ok(Barrier::ray(sol.c, s.domain));
    }
    let opts = EnvelopeOptions {
        grid,
        ..EnvelopeOptions::default()
    };
    let (b, report) = minimal_barrier_covering(&s.pair, s.domain, y_factor, &opts)?;
    info!("envelope converged after {} anchors", report.anchors_used);
    Ok(b)
}

fn tolerances(b: &Barrier) -> (Tolerances, &'static str) {
    if b.ray_slope().is_some() {
        (Tolerances::analytic(), "analytic")
    } else {
        (Tolerances::numeric(), "numeric")
    }
}

fn sim_config(spec: &DiffusionSpec, mc: &McArgs) -> SimConfig {
    let base = SimConfig::for_spec(spec, mc.paths, mc.seed);
    SimConfig {
        dt: mc.dt,
        t_max: mc.tmax.unwrap_or(base.t_max),
        execution: Execution::Parallel,
        ..base
    }
}

#[derive(Serialize)]
struct AffineFit {
    slope: f64,
    intercept: f64,
    max_abs_residual: f64,
}

fn affine_fit(xs: &[f64], ys: &[f64]) -> AffineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_abs_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    AffineFit {
        slope,
        intercept,
        max_abs_residual,
    }
}

#[derive(Serialize)]
struct SweepEntry {
    file: String,
    start: (f64, f64),
    classification: &'static str,
    x_last: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    envelope: EnvelopeReport,
    ratio_min: f64,
    ratio_max: f64,
    affine_fit: AffineFit,
    gbm_c: Option<f64>,
    sweep: Vec<SweepEntry>,
}

pub fn solve_barrier(a: &SolveArgs) -> anyhow::Result<()> {
    let s = setup(&a.common)?;
    let out = &a.common.out;
    let opts = EnvelopeOptions {
        grid: a.grid.max(2),
        k_max: a.max_anchors,
        ..EnvelopeOptions::default()
    };
    let (barrier, report) = minimal_barrier(&s.pair, s.domain, &opts)?;
    let xs = barrier.grid_x(opts.grid);
    let bs: Vec<f64> = xs.iter().map(|&x| barrier.eval(x)).collect();
    let rows = xs
        .iter()
        .zip(&bs)
        .map(|(&x, &b)| {
            Ok(BarrierRow {
                x,
                b,
                f: field_f(&s.pair, x, b)?,
                classification: "minimal".into(),
            })
        })
        .collect::<divbar::Result<Vec<_>>>()?;
    write_csv(&out.join("barrier.csv"), &rows)?;

    let d_rows = xs
        .iter()
        .map(|&x| {
            let d = find_d(&s.pair, x)?;
            Ok(DRow { x, d, d_over_x: d / x })
        })
        .collect::<divbar::Result<Vec<_>>>()?;
    write_csv(&out.join("d_of_x.csv"), &d_rows)?;

    let starts = if a.starts.is_empty() {
        let x0 = (s.domain.0 * s.domain.1).sqrt();
        let b0 = barrier.eval(x0);
        [0.6, 0.7, 0.8, 0.9, 0.95, 1.05, 1.1, 1.25, 1.5, 2.0]
            .iter()
            .map(|f| (x0, f * b0))
            .filter(|&(x, y)| y > x)
            .collect()
    } else {
        a.starts.clone()
    };
    for &(x, y) in &starts {
        if !(x > 0.0 && y > x) {
            anyhow::bail!("sweep start ({x}, {y}) must satisfy 0 < x < y");
        }
    }
    let x_end = a.sweep_xend.unwrap_or((100.0 * s.domain.1).max(1e8));
    let sweep = classification_sweep(&s.pair, &starts, x_end, Execution::Parallel);
    let mut entries = Vec::new();
    for (i, result) in sweep.into_iter().enumerate() {
        let (curve, cls) = result.with_context(|| format!("forward solution from {:?}", starts[i]))?;
        let file = format!("sweep/start_{i:03}.csv");
        let label = cls.label();
        let rows: Vec<BarrierRow> = (0..curve.len())
            .map(|k| BarrierRow {
                x: curve.xs[k],
                b: curve.bs[k],
                f: curve.slopes[k],
                classification: label.into(),
            })
            .collect();
        write_csv(&out.join(&file), &rows)?;
        println!("{file}: start ({}, {}) {label}", starts[i].0, starts[i].1);
        entries.push(SweepEntry {
            file,
            start: starts[i],
            classification: label,
            x_last: curve.xs.last().copied().unwrap_or(starts[i].0),
        });
    }

    let ratios: Vec<f64> = xs.iter().zip(&bs).map(|(x, b)| b / x).collect();
    let summary = SolveSummary {
        envelope: report,
        ratio_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        ratio_max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        affine_fit: affine_fit(&xs, &bs),
        gbm_c: gbm_solution(&s.spec)?.map(|g| g.c),
        sweep: entries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "barrier.csv: {} nodes, b/x in [{:.6}, {:.6}], affine fit b = {:.6} x + {:.6}",
        xs.len(),
        summary.ratio_min,
        summary.ratio_max,
        summary.affine_fit.slope,
        summary.affine_fit.intercept
    );
    Ok(())
}

fn residual_rows(r: &ResidualReport) -> Vec<ResidualCsvRow> {
    r.rows
        .iter()
        .map(|w| ResidualCsvRow {
            x: w.x,
            y: w.y,
            region: w.region.as_str().into(),
            v: w.v,
            v_x: w.v_x,
            lv: w.lv,
            stopped_identity: w.stopped_identity,
        })
        .collect()
}

#[derive(Serialize)]
struct StoppingCheck {
    x: f64,
    y: f64,
    estimate: MCEstimate,
    target: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    tolerances: &'static str,
    scale: f64,
    suites: Vec<SuiteResult>,
    ordering: bool,
    stopping: Option<StoppingCheck>,
    pass: bool,
}

pub fn verify(a: &VerifyArgs) -> anyhow::Result<()> {
    let s = setup(&a.common)?;
    if !(a.scale > 0.0) {
        anyhow::bail!("scale must be positive");
    }
    let optimal = optimal_barrier(&s, 400, 2.0)?;
    let barrier = if a.scale == 1.0 {
        optimal
    } else {
        optimal.scaled(a.scale)
    };
    let (tol, tol_kind) = tolerances(&barrier);
    let surface = ValueSurface::new(&s.pair, &barrier)?;
    let n = a.grid.max(2);
    let mut grid = continuation_grid(&surface, s.domain.0, s.domain.1, n, n);
    grid.extend(region_grid(&surface, s.domain.0, s.domain.1, n / 2 + 1, n / 2 + 1, 2.0));
    let report = check_variational(&surface, &grid, Execution::Parallel)?;
    write_csv(&a.common.out.join("residuals.csv"), &residual_rows(&report))?;
    let suites = report.suites(&tol);

    let bigger = ValueSurface::new(&s.pair, &barrier.scaled(1.2))?;
    let order_grid = region_grid(&bigger, s.domain.0, s.domain.1, n, n, 1.2);
    let ordering = value_ordering_check(&bigger, &surface, &order_grid)?;

    let mut stopping = None;
    if let Some(sol) = gbm_solution(&s.spec)? {
        let (x, y) = (1.0, 2.0);
        if a.mc.paths > 0 && a.scale == 1.0 && y < barrier.eval(x) {
            let cfg = sim_config(&s.spec, &a.mc);
            let estimate = estimate_stopping_value(&s.spec, x, y, &barrier, &cfg)?;
            let target = sol.ustar(x, y)?;
            stopping = Some(StoppingCheck {
                x,
                y,
                estimate,
                target,
                pass: estimate.agrees_with(target, 3.0),
            });
        }
    }

    let mut failed: Vec<String> = suites.iter().filter(|s| !s.pass).map(|s| s.name.clone()).collect();
    for s in &suites {
        println!(
            "{:<24} {} {:.3e} (tolerance {:.1e})",
            s.name,
            if s.pass { "PASS" } else { "FAIL" },
            s.value,
            s.tolerance
        );
    }
    println!("{:<24} {}", "ordering", if ordering { "PASS" } else { "FAIL" });
    if !ordering {
        failed.push("ordering".into());
    }
    if let Some(st) = &stopping {
        println!(
            "{:<24} {} {:.5} +- {:.5} vs {:.5}",
            "stopping_duality",
            if st.pass { "PASS" } else { "FAIL" },
            st.estimate.mean,
            st.estimate.stderr,
            st.target
        );
        if !st.pass {
            failed.push("stopping_duality".into());
        }
    }
    let out = VerifyReport {
        tolerances: tol_kind,
        scale: a.scale,
        suites,
        ordering,
        stopping,
        pass: failed.is_empty(),
    };
    write_json(&a.common.out.join("verify_report.json"), &out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(VerifyFailed(failed).into())
    }
}

#[derive(Serialize)]
struct EstimateRow {
    x: f64,
    y: f64,
    estimate: MCEstimate,
    target: Option<f64>,
    z: Option<f64>,
}

#[derive(Serialize)]
struct PathSummary {
    points: usize,
    absorbed: bool,
    absorption_time: f64,
    dividends: f64,
}

#[derive(Serialize)]
struct McSummary {
    seed: u64,
    dt: f64,
    t_max: f64,
    n_paths: usize,
    estimate_j: EstimateRow,
    estimate_stopping_value: EstimateRow,
    path: PathSummary,
}

fn row(x: f64, y: f64, estimate: MCEstimate, target: Option<f64>) -> EstimateRow {
    EstimateRow {
        x,
        y,
        estimate,
        target,
        z: target.map(|t| (estimate.mean - t) / estimate.stderr),
    }
}

pub fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let s = setup(&a.common)?;
    let barrier = optimal_barrier(&s, a.grid, 1.0)?;
    let sol = gbm_solution(&s.spec)?;
    let cfg = sim_config(&s.spec, &a.mc);
    let x = a.x.unwrap_or(2.0 * s.domain.0);
    let y = a.y.unwrap_or_else(|| barrier.eval(x));

    let (points, outcome) = record_controlled(&s.spec, x, y, &barrier, &cfg, 0, a.record_every.max(1))?;
    let rows: Vec<PathRow> = points
        .iter()
        .map(|p| PathRow {
            t: p.t,
            y: p.y,
            x: p.x,
            d: p.d,
            absorbed: p.absorbed,
        })
        .collect();
    write_csv(&a.common.out.join("paths.csv"), &rows)?;

    let j = estimate_j(&s.spec, x, y, &barrier, &cfg)?;
    let stop = estimate_stopping_value(&s.spec, a.stop_x, a.stop_y, &barrier, &cfg)?;
    let summary = McSummary {
        seed: cfg.seed,
        dt: cfg.dt,
        t_max: cfg.t_max,
        n_paths: cfg.n_paths,
        estimate_j: row(x, y, j, sol.map(|g| g.vstar(x, y)).transpose()?),
        estimate_stopping_value: row(
            a.stop_x,
            a.stop_y,
            stop,
            sol.map(|g| g.ustar(a.stop_x, a.stop_y)).transpose()?,
        ),
        path: PathSummary {
            points: rows.len(),
            absorbed: outcome.absorbed,
            absorption_time: outcome.gamma,
            dividends: outcome.final_d,
        },
    };
    write_json(&a.common.out.join("mc_summary.json"), &summary)?;
    println!(
        "J({x}, {y}) = {:.5} +- {:.5}, censored {:.2e}",
        j.mean, j.stderr, j.censored_fraction
    );
    println!(
        "stopping value at ({}, {}) = {:.5} +- {:.5}, censored {:.2e}",
        a.stop_x, a.stop_y, stop.mean, stop.stderr, stop.censored_fraction
    );
    for (problem, e) in [("controlled", &j), ("stopping", &stop)] {
        if e.censored_fraction > a.max_censored {
            return Err(ExcessiveCensoring {
                problem,
                fraction: e.censored_fraction,
                threshold: a.max_censored,
            }
            .into());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GbmReport {
    alpha: f64,
    beta: f64,
    r: f64,
    gamma1: f64,
    gamma2: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "C")]
    c: f64,
    #[serde(rename = "N")]
    n: f64,
    crosscheck_residuals: Crosscheck,
    quoted_c_check: Discrepancy,
}

pub fn gbm_constants(a: &GbmArgs) -> anyhow::Result<()> {
    let spec = load_spec(a.model.as_deref())?;
    let sol = gbm_solution(&spec)?.ok_or_else(|| {
        InvalidModel(divbar::Error::ModelFile("gbm-constants needs a model of kind \"gbm\"".into()))
    })?;
    let check = sol.crosscheck()?;
    if !check.passes(1e-12, 1e-8) {
        warn!("closed form and root finder disagree: {check:?}");
    }
    let report = GbmReport {
        alpha: sol.alpha,
        beta: sol.beta,
        r: sol.r,
        gamma1: sol.gamma1,
        gamma2: sol.gamma2,
        a: sol.a,
        c: sol.c,
        n: sol.n,
        crosscheck_residuals: check,
        quoted_c_check: sol.quoted_c_check(),
    };
    write_json(&a.out.join("gbm_constants.json"), &report)?;
    println!(
        "gamma1 = {}, gamma2 = {}, A = {}, C = {}, N = {}",
        sol.gamma1, sol.gamma2, sol.a, sol.c, sol.n
    );
    Ok(())
}

pub fn value_surface(a: &SurfaceArgs) -> anyhow::Result<()> {
    let s = setup(&a.common)?;
    if !(a.y_factor > 1.0) {
        anyhow::bail!("y-factor must exceed 1");
    }
    let barrier = optimal_barrier(&s, 400, a.y_factor)?;
    let surface = ValueSurface::new(&s.pair, &barrier)?;
    let n = a.grid.max(2);
    let grid = region_grid(&surface, s.domain.0, s.domain.1, n, n, a.y_factor);
    let report = check_variational(&surface, &grid, Execution::Parallel)?;
    let rows: Vec<SurfaceRow> = report
        .rows
        .iter()
        .map(|w| SurfaceRow {
            x: w.x,
            y: w.y,
            v: w.v,
            v_x: w.v_x,
            region: w.region.as_str().into(),
        })
        .collect();
    write_csv(&a.common.out.join("value_surface.csv"), &rows)?;
    write_csv(&a.common.out.join("residuals.csv"), &residual_rows(&report))?;
    println!("value_surface.csv: {} points", rows.len());
    Ok(())
}
