//! Quantitative checks of the backward lambda-lemma estimates on sample
//! grids: exponential convergence of the finite-horizon graphs and their
//! derivatives to the stable graph, Lipschitz dependence on the horizon,
//! and the endpoint bound.
//!
//! Every bound is computed from the rate ladder and compared row by row
//! against the measured gap with an explicit numerical budget.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::flow::integrate_forward;
use crate::local_model::sampling::{rng, sphere_directions};
use crate::local_model::LocalModel;
use crate::lyapunov_perron::{
    graph_derivative, Curve, FiniteGraph, GraphKind, GraphMap, GraphSample, LpOperator, StableGraph, UnstableOrbit,
};
use crate::spectral::Subspace;

/// Relative slack on horizon preconditions, so grids built from the ladder
/// constants themselves are accepted.
const HORIZON_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    C0,
    C1,
    LipschitzT,
    Endpoint,
    Boundary,
    Contraction,
    Decay,
    Oracle,
    Invariance,
    LeafDistance,
    Surrogate,
}

impl ReportKind {
    pub fn label(self) -> &'static str {
        match self {
            ReportKind::C0 => "c0",
            ReportKind::C1 => "c1",
            ReportKind::LipschitzT => "lipschitz_t",
            ReportKind::Endpoint => "endpoint",
            ReportKind::Boundary => "boundary",
            ReportKind::Contraction => "contraction",
            ReportKind::Decay => "decay",
            ReportKind::Oracle => "oracle",
            ReportKind::Invariance => "invariance",
            ReportKind::LeafDistance => "leaf_distance",
            ReportKind::Surrogate => "surrogate",
        }
    }
}

/// One measured quantity against its bound; passes when
/// `gap <= bound + budget`.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub horizon: f64,
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub direction: Option<DVector<f64>>,
    /// Horizon increment, step size or sample time, depending on the report.
    pub tau: Option<f64>,
    pub gap: f64,
    pub bound: f64,
    pub budget: f64,
}

impl ReportRow {
    pub fn slack(&self) -> f64 {
        self.bound + self.budget - self.gap
    }

    pub fn pass(&self) -> bool {
        self.gap <= self.bound + self.budget
    }
}

/// Least-squares decay rate of `ln gap` against `T` for one sample series.
#[derive(Clone, Debug)]
pub struct FittedRate {
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub rate: f64,
    pub points: usize,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub kind: ReportKind,
    pub t_grid: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub fitted_rates: Vec<FittedRate>,
    /// Lower bound every fitted rate must meet.
    pub required_rate: Option<f64>,
    /// Reported, not asserted: `(T, tau, quotient)` of derivative differences.
    pub measured: Vec<(f64, f64, f64)>,
}

impl ConvergenceReport {
    pub(crate) fn new(kind: ReportKind, t_grid: Vec<f64>, rows: Vec<ReportRow>) -> Self {
        Self {
            kind,
            t_grid,
            rows,
            fitted_rates: Vec::new(),
            required_rate: None,
            measured: Vec::new(),
        }
    }

    pub fn rows_pass(&self) -> bool {
        self.rows.iter().all(ReportRow::pass)
    }

    pub fn rates_pass(&self) -> bool {
        match self.required_rate {
            Some(r) => self.fitted_rates.iter().all(|f| f.rate >= r),
            None => true,
        }
    }

    pub fn pass(&self) -> bool {
        self.rows_pass() && self.rates_pass()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass()).count()
    }

    pub fn min_slack(&self) -> f64 {
        self.rows.iter().map(ReportRow::slack).fold(f64::INFINITY, f64::min)
    }

    pub fn max_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.gap).fold(0.0, f64::max)
    }

    pub fn min_fitted_rate(&self) -> Option<f64> {
        self.fitted_rates.iter().map(|f| f.rate).reduce(f64::min)
    }

    /// Returns `BoundViolated` describing the first failing row or rate.
    pub fn ensure(&self) -> Result<()> {
        if let Some(r) = self.rows.iter().find(|r| !r.pass()) {
            return Err(Error::BoundViolated(format!(
                "{} at T = {:.6e}: gap {:.6e} > bound {:.6e} + budget {:.6e}",
                self.kind.label(),
                r.horizon,
                r.gap,
                r.bound,
                r.budget
            )));
        }
        if let (Some(req), Some(min)) = (self.required_rate, self.min_fitted_rate()) {
            if min < req {
                return Err(Error::BoundViolated(format!(
                    "{} fitted decay rate {min:.6e} below {req:.6e}",
                    self.kind.label()
                )));
            }
        }
        Ok(())
    }

    /// One row per sample with columns `kind, T, tau, zm_*, zp_*, v_*, gap,
    /// bound, budget, slack, pass`.
    pub fn csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.z_plus.len());
        let mut out = String::from("kind,T,tau");
        for prefix in ["zm", "zp", "v"] {
            for i in 1..=n {
                out.push_str(&format!(",{prefix}_{i}"));
            }
        }
        out.push_str(",gap,bound,budget,slack,pass\n");
        for r in &self.rows {
            let mut cells = vec![
                self.kind.label().to_string(),
                fmt(r.horizon),
                r.tau.map(fmt).unwrap_or_default(),
            ];
            cells.extend(r.z_minus.iter().map(|v| fmt(*v)));
            cells.extend(r.z_plus.iter().map(|v| fmt(*v)));
            match &r.direction {
                Some(d) => cells.extend(d.iter().map(|v| fmt(*v))),
                None => cells.extend(std::iter::repeat_n(String::new(), n)),
            }
            cells.extend([
                fmt(r.gap),
                fmt(r.bound),
                fmt(r.budget),
                fmt(r.slack()),
                r.pass().to_string(),
            ]);
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Fitted rates with columns `zm_*, zp_*, rate, required, points`.
    pub fn rates_csv(&self) -> String {
        let n = self.fitted_rates.first().map_or(0, |r| r.z_plus.len());
        let mut out = String::new();
        let head: Vec<String> = ["zm", "zp"]
            .iter()
            .flat_map(|p| (1..=n).map(move |i| format!("{p}_{i}")))
            .chain(["rate".into(), "required".into(), "points".into()])
            .collect();
        out.push_str(&head.join(","));
        out.push('\n');
        for f in &self.fitted_rates {
            let mut cells: Vec<String> = f.z_minus.iter().chain(f.z_plus.iter()).map(|v| fmt(*v)).collect();
            cells.push(fmt(f.rate));
            cells.push(self.required_rate.map(fmt).unwrap_or_default());
            cells.push(f.points.to_string());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Sample points shared by the sweeps.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    /// Fibre centres in `E-` (ambient coordinates).
    pub z_minus: Vec<DVector<f64>>,
    /// Base points in `B+` (ambient coordinates).
    pub z_plus: Vec<DVector<f64>>,
    /// Directions in `E+` for derivative checks.
    pub directions: Vec<DVector<f64>>,
}

impl SamplePlan {
    /// Fibre centres at half the manifold radius along `rays` directions of
    /// `E-`; base points at fractions `0, 0.45, 0.9` of the fibre radius
    /// along `rays` directions of `E+`; the `E+` basis as directions.
    pub fn default_for(model: &LocalModel, rays: usize) -> Self {
        let split = &model.split;
        let seed = model.numerics.seed;
        let k = split.morse_index;
        let m = split.stable_dimension();
        let z_minus = sphere_directions(k, rays, seed)
            .into_iter()
            .map(|u| split.embed(Subspace::Minus, &(0.5 * model.ladder.manifold_radius * u)))
            .collect();
        let mut z_plus = vec![DVector::zeros(split.dimension())];
        for frac in [0.45, 0.9] {
            for u in sphere_directions(m, rays, seed.wrapping_add(1)) {
                z_plus.push(split.embed(Subspace::Plus, &(frac * model.ladder.fiber_radius() * u)));
            }
        }
        let basis = split.basis(Subspace::Plus);
        let directions = basis.column_iter().map(|c| c.into_owned()).collect();
        Self {
            z_minus,
            z_plus,
            directions,
        }
    }
}

/// `count` horizons from `max(T0, T2)` to twice that, evenly spaced.
pub fn horizon_grid(model: &LocalModel, count: usize) -> Vec<f64> {
    let start = model.ladder.t0.max(model.ladder.t2);
    if count <= 1 {
        return vec![start];
    }
    (0..count)
        .map(|j| start * (1.0 + j as f64 / (count - 1) as f64))
        .collect()
}

fn check_horizons(t_grid: &[f64], floor: f64, what: &str) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::HorizonMismatch("empty horizon grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::HorizonMismatch("horizon grid must be increasing".into()));
    }
    if t_grid[0] < floor * (1.0 - HORIZON_SLACK) {
        return Err(Error::HorizonMismatch(format!(
            "T = {} below {what} = {floor}",
            t_grid[0]
        )));
    }
    Ok(())
}

fn graphs<'a>(model: &'a LocalModel, t_grid: &[f64], plan: &SamplePlan) -> Result<Vec<FiniteGraph<'a>>> {
    let jobs: Vec<(f64, &DVector<f64>)> = t_grid
        .iter()
        .flat_map(|&t| plan.z_minus.iter().map(move |z| (t, z)))
        .collect();
    jobs.into_par_iter()
        .map(|(t, z)| FiniteGraph::unchecked(model, t, z, model.numerics.fixed_point_tol))
        .collect()
}

/// Least-squares slope of `ln y` against `x`, negated.
pub fn fit_decay_rate(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&a, &b)| (a, b.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

/// `|G^T_{z-}(z+) - G^inf(z+)|` against `e^{-T lambda / 8}`, with a fitted
/// decay rate per `(z-, z+)` series whose gaps clear their budgets on at
/// least five horizons.
pub fn c0_convergence(model: &LocalModel, t_grid: &[f64], plan: &SamplePlan) -> Result<ConvergenceReport> {
    let l = &model.ladder;
    check_horizons(t_grid, l.t0.max(l.t2), "max(T0, T2)")?;
    let stable = StableGraph { model };
    let limits = plan
        .z_plus
        .par_iter()
        .map(|z| stable.eval(z))
        .collect::<Result<Vec<_>>>()?;
    let maps = graphs(model, t_grid, plan)?;
    let rows: Vec<Vec<ReportRow>> = maps
        .par_iter()
        .map(|g| {
            plan.z_plus
                .iter()
                .zip(&limits)
                .map(|(zp, lim)| {
                    let e = g.eval(zp)?;
                    Ok(ReportRow {
                        horizon: g.horizon,
                        z_minus: g.z_minus.clone(),
                        z_plus: zp.clone(),
                        direction: None,
                        tau: None,
                        gap: (&e.value - &lim.value).norm(),
                        bound: (-g.horizon * l.lambda / 8.0).exp(),
                        budget: e.error_bound + lim.error_bound,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ReportRow> = rows.into_iter().flatten().collect();
    let mut report = ConvergenceReport::new(ReportKind::C0, t_grid.to_vec(), rows);
    report.required_rate = Some(l.lambda / 8.0);
    let per_t = plan.z_minus.len() * plan.z_plus.len();
    for a in 0..plan.z_minus.len() {
        for b in 0..plan.z_plus.len() {
            let series: Vec<&ReportRow> = (0..t_grid.len())
                .map(|j| &report.rows[j * per_t + a * plan.z_plus.len() + b])
                .collect();
            let resolved: Vec<&&ReportRow> = series.iter().filter(|r| r.gap > r.budget).collect();
            if resolved.len() < 5 {
                continue;
            }
            let x: Vec<f64> = resolved.iter().map(|r| r.horizon).collect();
            let y: Vec<f64> = resolved.iter().map(|r| r.gap).collect();
            report.fitted_rates.push(FittedRate {
                z_minus: plan.z_minus[a].clone(),
                z_plus: plan.z_plus[b].clone(),
                rate: fit_decay_rate(&x, &y),
                points: x.len(),
            });
        }
    }
    Ok(report)
}

/// Finite-difference directional derivatives of `G^T` against those of
/// `G^inf`, bounded by `c* e^{-T lambda / 8} |v|`.
pub fn c1_convergence(model: &LocalModel, t_grid: &[f64], plan: &SamplePlan, step: f64) -> Result<ConvergenceReport> {
    if !model.problem.c21 {
        return Err(Error::FlagMissing("C^{2,1} regularity of f"));
    }
    let l = &model.ladder;
    let c_star = l.c_star.ok_or(Error::FlagMissing("Lipschitz constant of dh"))?;
    check_horizons(t_grid, l.t0, "T0")?;
    let stable = StableGraph { model };
    let pairs: Vec<(&DVector<f64>, &DVector<f64>)> = plan
        .z_plus
        .iter()
        .flat_map(|z| plan.directions.iter().map(move |v| (z, v)))
        .collect();
    let limits = pairs
        .par_iter()
        .map(|(z, v)| graph_derivative(&stable, z, v, step))
        .collect::<Result<Vec<_>>>()?;
    let maps = graphs(model, t_grid, plan)?;
    let rows: Vec<Vec<ReportRow>> = maps
        .par_iter()
        .map(|g| {
            pairs
                .iter()
                .zip(&limits)
                .map(|((zp, v), lim)| {
                    let d = graph_derivative(g, zp, v, step)?;
                    Ok(ReportRow {
                        horizon: g.horizon,
                        z_minus: g.z_minus.clone(),
                        z_plus: (*zp).clone(),
                        direction: Some((*v).clone()),
                        tau: Some(step),
                        gap: (&d.value - &lim.value).norm(),
                        bound: c_star * (-g.horizon * l.lambda / 8.0).exp() * v.norm(),
                        budget: d.error + lim.error,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport::new(
        ReportKind::C1,
        t_grid.to_vec(),
        rows.into_iter().flatten().collect(),
    ))
}

/// Difference quotients `|G^{T+tau} - G^T| / tau` against `c1`. The
/// quotients `|dG^{T+tau} v - dG^T v| / tau` along the first direction are
/// recorded in `measured` without a bound.
pub fn lipschitz_in_t(
    model: &LocalModel,
    t_grid: &[f64],
    plan: &SamplePlan,
    taus: &[f64],
    step: f64,
) -> Result<ConvergenceReport> {
    let l = &model.ladder;
    check_horizons(t_grid, l.t0, "T0")?;
    if taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Config("horizon increments must be positive".into()));
    }
    let jobs: Vec<(f64, f64, &DVector<f64>)> = t_grid
        .iter()
        .flat_map(|&t| {
            taus.iter()
                .flat_map(move |&tau| plan.z_minus.iter().map(move |z| (t, tau, z)))
        })
        .collect();
    let direction = plan.directions.first();
    let results: Vec<(Vec<ReportRow>, Vec<(f64, f64, f64)>)> = jobs
        .into_par_iter()
        .map(|(t, tau, zm)| {
            let tol = model.numerics.fixed_point_tol;
            let g0 = FiniteGraph::unchecked(model, t, zm, tol)?;
            let g1 = FiniteGraph::unchecked(model, t + tau, zm, tol)?;
            let mut rows = Vec::new();
            let mut measured = Vec::new();
            for zp in &plan.z_plus {
                let a = g0.eval(zp)?;
                let b = g1.eval(zp)?;
                rows.push(ReportRow {
                    horizon: t,
                    z_minus: g0.z_minus.clone(),
                    z_plus: zp.clone(),
                    direction: None,
                    tau: Some(tau),
                    gap: (&b.value - &a.value).norm() / tau,
                    bound: l.c1,
                    budget: (a.error_bound + b.error_bound) / tau,
                });
                if let (Some(v), true) = (direction, model.problem.c21) {
                    if zp.norm() + step * v.norm() <= g0.radius() {
                        let da = graph_derivative(&g0, zp, v, step)?;
                        let db = graph_derivative(&g1, zp, v, step)?;
                        measured.push((t, tau, (&db.value - &da.value).norm() / tau));
                    }
                }
            }
            Ok((rows, measured))
        })
        .collect::<Result<_>>()?;
    let mut report = ConvergenceReport::new(ReportKind::LipschitzT, t_grid.to_vec(), Vec::new());
    for (rows, measured) in results {
        report.rows.extend(rows);
        report.measured.extend(measured);
    }
    Ok(report)
}

fn require_finite(sample: &GraphSample) -> Result<(f64, &DVector<f64>)> {
    match (sample.kind, sample.horizon, &sample.z_minus) {
        (GraphKind::GT, Some(t), Some(z)) => Ok((t, z)),
        _ => Err(Error::Config(format!(
            "{} sample has no finite horizon",
            sample.kind.label()
        ))),
    }
}

/// `|xi(T) - z-|` against `rho e^{-T lambda}` with the solver tolerance as
/// budget.
pub fn endpoint_audit(model: &LocalModel, sample: &GraphSample) -> Result<ConvergenceReport> {
    let (t, zm) = require_finite(sample)?;
    let l = &model.ladder;
    let rows = (0..sample.len())
        .map(|i| ReportRow {
            horizon: t,
            z_minus: zm.clone(),
            z_plus: sample.base_points[i].clone(),
            direction: None,
            tau: None,
            gap: (&sample.endpoints[i] - zm).norm(),
            bound: l.rho * (-t * l.lambda).exp(),
            budget: model.numerics.fixed_point_tol,
        })
        .collect();
    Ok(ConvergenceReport::new(ReportKind::Endpoint, vec![t], rows))
}

/// Deviation of every solved curve from its boundary data, against `1e-12`.
pub fn boundary_audit(sample: &GraphSample) -> ConvergenceReport {
    let t = sample.horizon.unwrap_or(f64::INFINITY);
    let n = sample.split.dimension();
    let zm = sample.z_minus.clone().unwrap_or_else(|| DVector::zeros(n));
    let rows = (0..sample.len())
        .map(|i| ReportRow {
            horizon: t,
            z_minus: zm.clone(),
            z_plus: sample.base_points[i].clone(),
            direction: None,
            tau: None,
            gap: sample.boundary_errors[i],
            bound: 1e-12,
            budget: 0.0,
        })
        .collect();
    ConvergenceReport::new(ReportKind::Boundary, vec![t], rows)
}

fn random_perturbation(op: &LpOperator, rng: &mut impl Rng, modes: usize, size: f64) -> Curve {
    let n = op.model.dimension();
    let t_len = op.horizon.length();
    let coeffs: Vec<DVector<f64>> = (0..modes)
        .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let rate = op.model.ladder.lambda;
    let mut c = Curve::from_fn(op.horizon, op.grid().clone(), rate, |t| {
        let mut v = DVector::zeros(n);
        for (m, a) in coeffs.iter().enumerate() {
            v += a * (std::f64::consts::PI * m as f64 * t / t_len).cos();
        }
        v * (-rate * t).exp()
    });
    let norm = c.exp_norm();
    c.values *= size / norm;
    c
}

/// Measured Lipschitz ratio `|Psi xi - Psi zeta| / |xi - zeta|` of the
/// finite-horizon operator over `pairs` random curves in its admissible
/// ball, one row per horizon against the bound `1/2` with budget `0.05`.
pub fn contraction_audit(
    model: &LocalModel,
    t_grid: &[f64],
    z_minus: &DVector<f64>,
    z_plus: &DVector<f64>,
    pairs: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    check_horizons(t_grid, model.ladder.t0, "T0")?;
    let rows = t_grid
        .par_iter()
        .enumerate()
        .map(|(j, &t)| {
            let orbit = UnstableOrbit::solve_with_length(model, z_minus, t)?;
            let op = LpOperator::mixed(model, t, z_minus, z_plus, &orbit)?;
            let center = op.center.clone().expect("mixed operator has a centre");
            let mut r = rng(seed.wrapping_add(j as u64));
            let mut worst: f64 = 0.0;
            for _ in 0..pairs {
                let draw = |r: &mut _| -> Result<Curve> {
                    let size = model.ladder.rho * rand::Rng::random_range(r, 0.05..0.95);
                    center.add(&random_perturbation(&op, r, 4, size))
                };
                let a = draw(&mut r)?;
                let b = draw(&mut r)?;
                let num = op.apply_unchecked(&a)?.exp_distance(&op.apply_unchecked(&b)?)?;
                let den = a.exp_distance(&b)?;
                if den > 0.0 {
                    worst = worst.max(num / den);
                }
            }
            Ok(ReportRow {
                horizon: t,
                z_minus: op.z_minus.clone(),
                z_plus: op.z_plus.clone(),
                direction: None,
                tau: None,
                gap: worst,
                bound: 0.5,
                budget: 0.05,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport::new(ReportKind::Contraction, t_grid.to_vec(), rows))
}

/// Largest time up to which forward integration can follow the stable
/// manifold: the off-manifold error of a start point, estimated as the solver
/// error bound plus the integrator tolerance on its unstable component, grows
/// like `e^{|lambda_1| t}` while the decay bound shrinks like `e^{-lambda t}`;
/// the horizon is where their ratio reaches `1e-3`. Infinite when every
/// start point lies exactly on a flat stable manifold.
pub fn decay_horizon(model: &LocalModel, sample: &GraphSample) -> f64 {
    let l = &model.ladder;
    let unstable = sample.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let e0 = sample.max_error_bound() + model.numerics.ode_tol * unstable;
    if e0 == 0.0 {
        return f64::INFINITY;
    }
    (1e-3 * l.manifold_rho / e0).ln().max(0.0) / (l.lambda_min.abs() + l.lambda)
}

/// Forward-integrates each stable graph point and checks
/// `|phi_t xi_0| <= manifold_rho e^{-t lambda}` at the sampled times, with
/// the integration tolerance as budget.
pub fn decay_audit(model: &LocalModel, sample: &GraphSample, times: &[f64]) -> Result<ConvergenceReport> {
    if sample.kind != GraphKind::GInf {
        return Err(Error::Config("decay audit needs a stable graph sample".into()));
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let l = &model.ladder;
    let tol = model.numerics.ode_tol;
    let rows: Vec<Vec<ReportRow>> = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let start = sample.graph_point(i);
            let tr = integrate_forward(&model.problem, &start, horizon, tol)?;
            Ok(times
                .iter()
                .map(|&t| ReportRow {
                    horizon: t,
                    z_minus: sample.values[i].clone(),
                    z_plus: sample.base_points[i].clone(),
                    direction: None,
                    tau: Some(t),
                    gap: tr.at(t).norm(),
                    bound: l.manifold_rho * (-t * l.lambda).exp(),
                    budget: tol,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport::new(
        ReportKind::Decay,
        times.to_vec(),
        rows.into_iter().flatten().collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{LadderChoices, Numerics};
    use crate::lyapunov_perron::{graph_g_t, BaseGrid, TensorGrid};
    use crate::reference;

    fn model(p: crate::local_model::GradientProblem) -> LocalModel {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        LocalModel::build(p, &LadderChoices::default(), numerics).unwrap()
    }

    #[test]
    fn decay_rate_fit_recovers_exponent() {
        let x = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((fit_decay_rate(&x, &y) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn quadratic_c0_gaps_have_closed_form() {
        let m = model(reference::quadratic());
        let plan = SamplePlan::default_for(&m, 2);
        let grid = horizon_grid(&m, 5);
        let r = c0_convergence(&m, &grid, &plan).unwrap();
        for row in &r.rows {
            let exact = (-row.horizon).exp() * row.z_minus.norm();
            assert!(
                (row.gap - exact).abs() <= 1e-14 * exact.max(1e-300) + 1e-18,
                "{} vs {exact}",
                row.gap
            );
        }
        assert!(r.pass());
        assert!((r.min_fitted_rate().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn horizons_below_threshold_are_rejected() {
        let m = model(reference::quadratic());
        let plan = SamplePlan::default_for(&m, 2);
        assert!(matches!(
            c0_convergence(&m, &[0.5 * m.ladder.t0], &plan),
            Err(Error::HorizonMismatch(_))
        ));
    }

    #[test]
    fn quadratic_derivatives_vanish() {
        let m = model(reference::quadratic());
        let plan = SamplePlan::default_for(&m, 2);
        let step = 0.05 * m.ladder.fiber_radius();
        let r = c1_convergence(&m, &horizon_grid(&m, 2), &plan, step).unwrap();
        assert!(r.max_gap() < 1e-12);
        assert!(r.pass());
    }

    #[test]
    fn missing_regularity_flag_is_reported() {
        let mut m = model(reference::quadratic());
        m.problem.c21 = false;
        let plan = SamplePlan::default_for(&m, 2);
        assert!(matches!(
            c1_convergence(&m, &[m.ladder.t0], &plan, 1e-4),
            Err(Error::FlagMissing(_))
        ));
    }

    #[test]
    fn quadratic_lipschitz_quotients() {
        let m = model(reference::quadratic());
        let plan = SamplePlan::default_for(&m, 2);
        let r = lipschitz_in_t(&m, &[m.ladder.t0], &plan, &[1e-3], 1e-4).unwrap();
        for row in &r.rows {
            let t = row.horizon;
            let exact = ((-t).exp() - (-(t + 1e-3f64)).exp()) * row.z_minus.norm() / 1e-3;
            assert!((row.gap - exact).abs() < 1e-9 * exact.max(1e-12));
        }
        assert!(r.pass());
    }

    #[test]
    fn quartic_endpoint_and_boundary_audits() {
        let m = model(reference::quartic());
        let zm = DVector::from_vec(vec![0.5 * m.ladder.varkappa, 0.0]);
        let grid = TensorGrid::inscribed(&m.split, Subspace::Plus, m.ladder.fiber_radius(), 5);
        let s = graph_g_t(&m, m.ladder.t0, &zm, BaseGrid::Tensor(grid)).unwrap();
        assert!(endpoint_audit(&m, &s).unwrap().pass());
        assert!(boundary_audit(&s).pass());
    }

    #[test]
    fn quartic_operator_contracts() {
        let m = model(reference::quartic());
        let zm = DVector::from_vec(vec![0.5 * m.ladder.varkappa, 0.0]);
        let zp = DVector::from_vec(vec![0.0, 0.3 * m.ladder.rho]);
        let r = contraction_audit(&m, &[m.ladder.t0], &zm, &zp, 5, 3).unwrap();
        assert!(r.rows[0].gap > 0.0 && r.pass());
    }
}
