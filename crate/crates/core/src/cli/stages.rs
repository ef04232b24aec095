use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::{build_model, fmt, Outputs};
use crate::error::{Error, Result};
use crate::flow::{ascending_disk, descending_disk, LevelDisk};
use crate::foliation::{
    build_atlas, check_disjoint, invariance_audit, leaf_distance_audit, retract_audit, FoliationParams,
};
use crate::lambda_verify::{
    boundary_audit, c0_convergence, c1_convergence, contraction_audit, decay_audit, decay_horizon, endpoint_audit,
    horizon_grid, lipschitz_in_t, ConvergenceReport, ReportKind, SamplePlan,
};
use crate::local_model::{LocalModel, Numerics, ProblemConfig};
use crate::lyapunov_perron::{graph_f_inf, graph_g_inf, graph_g_t, BaseGrid, GraphSample, TensorGrid};
use crate::oracle::cross_validate;
use crate::spectral::{SpectralSplit, Subspace};

/// Pipeline stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Spectral,
    Ladder,
    Manifolds,
    Lambda,
    Foliate,
    Oracle,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Spectral,
        Stage::Ladder,
        Stage::Manifolds,
        Stage::Lambda,
        Stage::Foliate,
        Stage::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectral => "spectral",
            Stage::Ladder => "ladder",
            Stage::Manifolds => "manifolds",
            Stage::Lambda => "lambda",
            Stage::Foliate => "foliate",
            Stage::Oracle => "oracle",
        }
    }
}

pub(super) struct Context {
    pub config: ProblemConfig,
    pub numerics: Numerics,
    pub model: Option<LocalModel>,
}

impl Context {
    fn model(&mut self) -> Result<&LocalModel> {
        if self.model.is_none() {
            self.model = Some(build_model(&self.config, self.numerics.clone())?);
        }
        Ok(self.model.as_ref().expect("model was just built"))
    }
}

pub(super) struct Outcome {
    pub pass: bool,
    pub summary: Value,
}

pub(super) fn run_stage(stage: Stage, ctx: &mut Context, out: &mut Outputs) -> Result<Outcome> {
    match stage {
        Stage::Spectral => spectral(ctx, out),
        Stage::Ladder => ladder(ctx.model()?, out),
        Stage::Manifolds => manifolds(ctx.model()?, out),
        Stage::Lambda => lambda(ctx.model()?, out),
        Stage::Foliate => foliate(ctx.model()?, out),
        Stage::Oracle => oracle(ctx.model()?, out),
    }
}

/// Tensor-grid resolution for a graph domain of dimension `dim`.
fn per_axis(dim: usize) -> usize {
    match dim {
        1 => 17,
        2 => 9,
        _ => 5,
    }
}

fn summary(r: &ConvergenceReport) -> Value {
    json!({
        "kind": r.kind.label(),
        "rows": r.rows.len(),
        "failures": r.failures(),
        "max_gap": r.max_gap(),
        "min_slack": if r.rows.is_empty() { None } else { Some(r.min_slack()) },
        "min_fitted_rate": r.min_fitted_rate(),
        "required_rate": r.required_rate,
        "pass": r.pass(),
    })
}

/// Concatenates graph-sample CSVs under a single header.
fn samples_csv(samples: &[GraphSample]) -> String {
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        let text = s.csv();
        let body = if i == 0 {
            text.as_str()
        } else {
            text.split_once('\n').map_or("", |(_, b)| b)
        };
        out.push_str(body);
    }
    out
}

fn merge(kind: ReportKind, reports: Vec<ConvergenceReport>) -> ConvergenceReport {
    let t_grid = reports.iter().flat_map(|r| r.t_grid.iter().copied()).collect();
    ConvergenceReport::new(kind, t_grid, reports.into_iter().flat_map(|r| r.rows).collect())
}

fn disk_csv(disk: &LevelDisk, split: &SpectralSplit) -> String {
    let n = split.dimension();
    let mut out = String::from("kind,radius");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    out.push('\n');
    for (kind, list) in [("boundary", &disk.boundary), ("interior", &disk.interior)] {
        for p in list {
            out.push_str(kind);
            out.push(',');
            out.push_str(&fmt(p.radius));
            for v in p.point.iter() {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            out.push('\n');
        }
    }
    out
}

fn spectral(ctx: &mut Context, out: &mut Outputs) -> Result<Outcome> {
    let problem = ctx.config.to_problem()?;
    let split = problem.split()?;
    split.require_saddle()?;
    let n = split.dimension();
    let v = &split.eigenvectors;
    let lambda = DMatrix::from_diagonal(&split.eigenvalues);
    let residual = (&split.hessian * v - v * lambda).amax();
    let orthogonality = (v.transpose() * v - DMatrix::identity(n, n)).amax();
    let scale = split.spectral_radius().max(1.0);
    let pass = residual <= 1e-12 * scale * n as f64 && orthogonality <= 1e-12 * n as f64;

    let mut csv = String::from("index,eigenvalue,subspace");
    for i in 1..=n {
        csv.push_str(&format!(",v_{i}"));
    }
    csv.push('\n');
    for i in 0..n {
        let sub = if split.is_negative(i) { "minus" } else { "plus" };
        csv.push_str(&format!("{},{},{sub}", i + 1, fmt(split.eigenvalues[i])));
        for c in v.column(i).iter() {
            csv.push(',');
            csv.push_str(&fmt(*c));
        }
        csv.push('\n');
    }
    out.write("spectral.csv", &csv)?;
    let report = json!({
        "problem": problem.name,
        "dimension": n,
        "morse_index": split.morse_index,
        "gap": split.gap,
        "eigenvalues": split.eigenvalues.iter().collect::<Vec<_>>(),
        "critical_value": problem.critical_value(),
        "eigen_residual": residual,
        "orthogonality_defect": orthogonality,
    });
    out.write_json("spectral.json", &report)?;
    Ok(Outcome { pass, summary: report })
}

fn ladder(model: &LocalModel, out: &mut Outputs) -> Result<Outcome> {
    let l = &model.ladder;
    let mut csv = String::from("name,value\n");
    for (name, v) in l.echo() {
        csv.push_str(&format!("{name},{}\n", fmt(v)));
    }
    out.write("ladder.csv", &csv)?;
    let k = &l.kappa;
    let mut kcsv = String::from("rho,kappa,raw\n");
    for i in 0..k.radii.len() {
        kcsv.push_str(&format!("{},{},{}\n", fmt(k.radii[i]), fmt(k.values[i]), fmt(k.raw[i])));
    }
    out.write("kappa.csv", &kcsv)?;
    let checks: serde_json::Map<String, Value> = l
        .invariant_checks()
        .into_iter()
        .map(|(name, ok)| (name.to_string(), Value::Bool(ok)))
        .collect();
    let echo: serde_json::Map<String, Value> = l
        .echo()
        .into_iter()
        .map(|(name, v)| (name.to_string(), json!(v)))
        .collect();
    let report = json!({
        "echo": echo,
        "checks": checks,
        "feasible": l.invariants_hold(),
        "kappa_safety": k.safety,
    });
    out.write_json("ladder.json", &report)?;
    Ok(Outcome {
        pass: l.invariants_hold(),
        summary: json!({ "feasible": l.invariants_hold(), "T0": l.t0 }),
    })
}

fn manifolds(model: &LocalModel, out: &mut Outputs) -> Result<Outcome> {
    let split = &model.split;
    let l = &model.ladder;
    let grid = |sub: Subspace| {
        BaseGrid::Tensor(TensorGrid::inscribed(
            split,
            sub,
            l.manifold_radius,
            per_axis(split.subspace_dimension(sub)),
        ))
    };
    let f = graph_f_inf(model, grid(Subspace::Minus))?;
    let g = graph_g_inf(model, grid(Subspace::Plus))?;
    out.write("f_inf.csv", &f.csv())?;
    out.write("g_inf.csv", &g.csv())?;
    let window = (3.0 * l.t0).min(decay_horizon(model, &g));
    let times: Vec<f64> = (1..=8).map(|j| window * j as f64 / 8.0).collect();
    let decay = decay_audit(model, &g, &times)?;
    out.write("decay.csv", &decay.csv())?;
    let boundary = merge(ReportKind::Boundary, vec![boundary_audit(&f), boundary_audit(&g)]);
    out.write("manifold_boundary.csv", &boundary.csv())?;
    let rays = if split.morse_index == 1 { 2 } else { 8 };
    let down = descending_disk(model, rays, 3)?;
    out.write("descending_disk.csv", &disk_csv(&down, split))?;
    let up_rays = if split.stable_dimension() == 1 { 2 } else { 8 };
    let up = ascending_disk(model, up_rays, 3)?;
    out.write("ascending_disk.csv", &disk_csv(&up, split))?;
    let pass = decay.pass() && boundary.pass();
    Ok(Outcome {
        pass,
        summary: json!({
            "f_inf_max_norm": f.max_value_norm(),
            "g_inf_max_norm": g.max_value_norm(),
            "f_inf_error_bound": f.max_error_bound(),
            "g_inf_error_bound": g.max_error_bound(),
            "decay_window": window,
            "decay": summary(&decay),
            "boundary": summary(&boundary),
        }),
    })
}

fn lambda(model: &LocalModel, out: &mut Outputs) -> Result<Outcome> {
    let split = &model.split;
    let l = &model.ladder;
    let t_grid = horizon_grid(model, 6);
    let plan = SamplePlan::default_for(model, 2);
    let step = 0.05 * l.fiber_radius();

    let c0 = c0_convergence(model, &t_grid, &plan)?;
    out.write("c0.csv", &c0.csv())?;
    out.write("c0_rates.csv", &c0.rates_csv())?;
    let c1 = match c1_convergence(model, &t_grid, &plan, step) {
        Ok(r) => {
            out.write("c1.csv", &r.csv())?;
            Some(r)
        }
        Err(Error::FlagMissing(_)) => None,
        Err(e) => return Err(e),
    };
    let lip = lipschitz_in_t(model, &t_grid, &plan, &[1e-2, 1e-3], step)?;
    out.write("lipschitz.csv", &lip.csv())?;
    let mut measured = String::from("T,tau,quotient\n");
    for (t, tau, q) in &lip.measured {
        measured.push_str(&format!("{},{},{}\n", fmt(*t), fmt(*tau), fmt(*q)));
    }
    out.write("lipschitz_derivative.csv", &measured)?;

    let contraction_grid = horizon_grid(model, 5);
    let contraction = contraction_audit(
        model,
        &contraction_grid,
        &plan.z_minus[0],
        &plan.z_plus[1],
        50,
        model.numerics.seed,
    )?;
    out.write("contraction.csv", &contraction.csv())?;

    let base = BaseGrid::Tensor(TensorGrid::inscribed(
        split,
        Subspace::Plus,
        l.fiber_radius(),
        per_axis(split.stable_dimension()),
    ));
    let samples = t_grid
        .iter()
        .map(|&t| graph_g_t(model, t, &plan.z_minus[0], base.clone()))
        .collect::<Result<Vec<_>>>()?;
    out.write("g_t.csv", &samples_csv(&samples))?;
    let endpoint = merge(
        ReportKind::Endpoint,
        samples
            .iter()
            .map(|s| endpoint_audit(model, s))
            .collect::<Result<Vec<_>>>()?,
    );
    out.write("endpoint.csv", &endpoint.csv())?;
    let boundary = merge(ReportKind::Boundary, samples.iter().map(boundary_audit).collect());
    out.write("boundary.csv", &boundary.csv())?;

    let reports: Vec<&ConvergenceReport> = [
        Some(&c0),
        c1.as_ref(),
        Some(&lip),
        Some(&contraction),
        Some(&endpoint),
        Some(&boundary),
    ]
    .into_iter()
    .flatten()
    .collect();
    let pass = reports.iter().all(|r| r.pass());
    Ok(Outcome {
        pass,
        summary: json!({
            "t_grid": t_grid,
            "c1_skipped": c1.is_none(),
            "reports": reports.iter().map(|r| summary(r)).collect::<Vec<_>>(),
        }),
    })
}

fn foliate(model: &LocalModel, out: &mut Outputs) -> Result<Outcome> {
    let params = FoliationParams::default_for(model);
    let atlas = build_atlas(model, &params)?;
    out.write("pair.csv", &atlas.pair.csv())?;
    for (i, leaf) in atlas.leaves.iter().enumerate() {
        out.write(&format!("leaves/leaf_{i:03}.csv"), &leaf.csv(model))?;
    }
    out.write_json(
        "leaves/labels.json",
        &json!({ "params": params, "leaves": atlas.labels() }),
    )?;

    let disjoint = check_disjoint(&atlas, 100, model.numerics.seed)?;
    out.write("disjoint.csv", &disjoint.csv(&atlas))?;
    let invariance = invariance_audit(&atlas)?;
    out.write("invariance.csv", &invariance.csv())?;
    let distance = leaf_distance_audit(&atlas);
    out.write("leaf_distance.csv", &distance.csv())?;
    let retract = retract_audit(&atlas, &[0.5, 1.0, 2.0], model.ladder.t_max, &[1e-3, 1e-4])?;
    out.write("surrogate.csv", &retract.surrogate.csv())?;
    out.write("retract_quotients.csv", &retract.quotients_csv(&atlas))?;
    let checks: serde_json::Map<String, Value> = retract
        .checks()
        .into_iter()
        .map(|(name, ok)| (name.to_string(), Value::Bool(ok)))
        .collect();
    let retract_json = json!({
        "checks": checks,
        "disk_violation": retract.disk_violation,
        "disk_tol": retract.disk_tol,
        "manifold_residual": retract.manifold_residual,
        "infinity_exact": retract.infinity_exact,
        "fixed_point_drift": retract.fixed_point_drift,
        "fixed_point_tol": retract.fixed_point_tol,
        "mu_audit": retract.mu_audit,
        "surrogate": summary(&retract.surrogate),
    });
    out.write_json("retract.json", &retract_json)?;

    let pair = &atlas.pair;
    let pair_ok = pair.contains_critical_point() && !pair.clipped && pair.min_gradient_away_from_center(model) > 0.0;
    let pass = pair_ok && invariance.pass() && distance.pass() && retract.pass();
    Ok(Outcome {
        pass,
        summary: json!({
            "epsilon": params.epsilon,
            "tau": params.tau,
            "leaves": atlas.leaves.len(),
            "pair": {
                "n_samples": pair.n_samples().count(),
                "l_samples": pair.l_samples().count(),
                "clipped": pair.clipped,
                "pass": pair_ok,
            },
            "disjoint": { "pairs": disjoint.pairs.len(), "min_floor": disjoint.min_floor() },
            "invariance": summary(&invariance),
            "leaf_distance": summary(&distance),
            "retract": retract_json,
        }),
    })
}

fn oracle(model: &LocalModel, out: &mut Outputs) -> Result<Outcome> {
    let split = &model.split;
    let l = &model.ladder;
    let tol = model.numerics.fixed_point_tol.max(1e-10);
    let t_grid = horizon_grid(model, 3);
    let plan = SamplePlan::default_for(model, 2);
    let u = split.basis(Subspace::Plus).column(0).into_owned();
    let z_plus: Vec<DVector<f64>> = [0.0, 0.45, 0.9].iter().map(|f| &u * (f * l.fiber_radius())).collect();
    let report = cross_validate(model, &t_grid, &plan.z_minus, &z_plus, tol, 1e-6)?;
    out.write("oracle.csv", &report.csv())?;
    Ok(Outcome {
        pass: report.pass(),
        summary: json!({ "tol": tol, "report": summary(&report) }),
    })
}
