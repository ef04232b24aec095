use nalgebra::DVector;
use rayon::prelude::*;

use super::atlas::FoliationAtlas;
use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::flow::{integrate_forward, ON_MANIFOLD_TOL};
use crate::lambda_verify::{ConvergenceReport, ReportKind, ReportRow};
use crate::lyapunov_perron::{GraphMap, StableOrbit, UnstableGraph};
use crate::spectral::Subspace;

/// Time argument of the induced semi-flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowTime {
    Finite(f64),
    Infinity,
}

/// `theta_t z = G^T_alpha(pi+ phi_t G^inf(pi+ z))`: the flow on the centre
/// leaf transported to leaf `leaf` through its graph map. At infinity this
/// is the label point `alpha^T`.
pub fn induced_flow(atlas: &FoliationAtlas, leaf: usize, z: &DVector<f64>, t: FlowTime) -> Result<DVector<f64>> {
    let model = atlas.model;
    let split = &model.split;
    let l = &atlas.leaves[leaf];
    let zp = split.project(Subspace::Plus, z);
    let radius = model.ladder.fiber_radius();
    let norm = zp.norm();
    if norm > radius * (1.0 + 1e-12) {
        return Err(Error::OutsideLeafDomain { norm, radius });
    }
    let t = match t {
        FlowTime::Infinity => return Ok(l.base_point.clone()),
        FlowTime::Finite(t) if t >= 0.0 => t,
        FlowTime::Finite(t) => return Err(Error::Config(format!("semi-flow time {t} must be non-negative"))),
    };
    if t == 0.0 {
        return l.solve_at(model, &zp);
    }
    let orbit = StableOrbit::solve_with_length(model, &zp, t)?;
    let moved = orbit.at(t);
    match &l.map {
        None => Ok(moved),
        Some(map) => {
            let w = split.project(Subspace::Plus, &moved);
            Ok(&w + map.eval(&w)?.value)
        }
    }
}

/// One finite-difference quotient of `f o theta` at a boundary sample.
#[derive(Clone, Debug)]
pub struct BoundaryQuotient {
    pub leaf: usize,
    pub z_plus: DVector<f64>,
    /// `(f(theta_h z) - f(z)) / h` for each audited step `h`.
    pub quotients: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RetractReport {
    /// Largest `c - eps - f(phi_tau alpha^T)` over label points; positive
    /// values lie outside `D`.
    pub disk_violation: f64,
    pub disk_tol: f64,
    /// Largest graph residual of a label point against the unstable graph.
    pub manifold_residual: f64,
    /// Whether `theta_inf` returned the stored label point bit for bit.
    pub infinity_exact: bool,
    /// `|theta_t z - alpha^T|` at the surrogate time against `rho e^{-t lambda}`.
    pub surrogate: ConvergenceReport,
    /// Largest `|theta_t p - p|` over label points `p` and sampled `t`.
    pub fixed_point_drift: f64,
    pub fixed_point_tol: f64,
    pub quotients: Vec<BoundaryQuotient>,
    pub steps: Vec<f64>,
    /// `min -quotient` over all boundary samples and steps.
    pub mu_audit: f64,
}

impl RetractReport {
    /// Named pass flags of the three retraction checks.
    pub fn checks(&self) -> Vec<(&'static str, bool)> {
        vec![
            (
                "theta_inf maps leaves onto D",
                self.infinity_exact
                    && self.disk_violation <= self.disk_tol
                    && self.manifold_residual <= ON_MANIFOLD_TOL
                    && self.surrogate.pass(),
            ),
            ("theta_t fixes D", self.fixed_point_drift <= self.fixed_point_tol),
            ("inward pointing boundary", self.mu_audit > 0.0),
        ]
    }

    pub fn pass(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }

    pub fn ensure(&self) -> Result<()> {
        let detail = |name: &str| match name {
            "theta_t fixes D" => format!("drift {:.3e} > {:.3e}", self.fixed_point_drift, self.fixed_point_tol),
            "inward pointing boundary" => format!("mu_audit = {:.3e}", self.mu_audit),
            _ => format!(
                "disk violation {:.3e}, manifold residual {:.3e}, exact {}, surrogate failures {}",
                self.disk_violation,
                self.manifold_residual,
                self.infinity_exact,
                self.surrogate.failures()
            ),
        };
        match self.checks().into_iter().find(|(_, ok)| !ok) {
            Some((check, _)) => Err(Error::RetractViolation {
                check,
                detail: detail(check),
            }),
            None => Ok(()),
        }
    }

    /// Columns `leaf, zp_*, h, quotient`.
    pub fn quotients_csv(&self, atlas: &FoliationAtlas) -> String {
        let m = self.quotients.first().map_or(0, |q| q.z_plus.len());
        let mut out = String::from("leaf");
        for i in 1..=m {
            out.push_str(&format!(",zp_{i}"));
        }
        out.push_str(",h,quotient\n");
        for q in &self.quotients {
            for (h, v) in self.steps.iter().zip(&q.quotients) {
                out.push_str(&atlas.leaves[q.leaf].label.name());
                for c in q.z_plus.iter() {
                    out.push(',');
                    out.push_str(&fmt(*c));
                }
                out.push_str(&format!(",{},{}\n", fmt(*h), fmt(*v)));
            }
        }
        out
    }
}

/// The three retraction checks: `theta_inf` lands in `D` (with the
/// surrogate `theta_{t_inf}` within `rho e^{-t_inf lambda}` of it), `theta_t`
/// fixes the label points for each sampled `t`, and `f o theta` decreases at
/// every leaf boundary sample for each step in `steps`.
pub fn retract_audit(
    atlas: &FoliationAtlas,
    times: &[f64],
    surrogate_time: f64,
    steps: &[f64],
) -> Result<RetractReport> {
    let model = atlas.model;
    let l = &model.ladder;
    let eps = atlas.params.epsilon;
    let unstable = UnstableGraph { model };

    let mut disk_violation = f64::NEG_INFINITY;
    let mut manifold_residual: f64 = 0.0;
    let mut infinity_exact = true;
    for (i, leaf) in atlas.labeled() {
        let p = &leaf.base_point;
        let ahead = integrate_forward(&model.problem, p, atlas.params.tau, model.numerics.ode_tol)?;
        disk_violation = disk_violation.max(-eps - model.level(ahead.end()));
        let zm = model.split.project(Subspace::Minus, p);
        let on = &zm + unstable.eval(&zm)?.value;
        manifold_residual = manifold_residual.max((on - p).norm());
        for s in leaf.samples.iter().filter(|s| s.in_leaf) {
            infinity_exact &= induced_flow(atlas, i, &s.point, FlowTime::Infinity)? == *p;
        }
    }

    let jobs: Vec<(usize, &DVector<f64>)> = atlas
        .labeled()
        .flat_map(|(i, leaf)| leaf.samples.iter().filter(|s| s.in_leaf).map(move |s| (i, &s.point)))
        .collect();
    let bound = l.rho * (-surrogate_time * l.lambda).exp();
    let rows = jobs
        .par_iter()
        .map(|&(i, z)| {
            let leaf = &atlas.leaves[i];
            let far = induced_flow(atlas, i, z, FlowTime::Finite(surrogate_time))?;
            Ok(ReportRow {
                horizon: leaf.horizon().unwrap_or(f64::INFINITY),
                z_minus: leaf.alpha.clone().unwrap_or_else(|| z * 0.0),
                z_plus: model.split.project(Subspace::Plus, z),
                direction: None,
                tau: Some(surrogate_time),
                gap: (far - &leaf.base_point).norm(),
                bound,
                budget: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let surrogate = ConvergenceReport::new(ReportKind::Surrogate, vec![surrogate_time], rows);

    let drift = atlas
        .labeled()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(i, leaf)| {
            times.iter().try_fold(0.0f64, |acc, &t| {
                let moved = induced_flow(atlas, *i, &leaf.base_point, FlowTime::Finite(t))?;
                Ok(acc.max((moved - &leaf.base_point).norm()))
            })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let boundary_jobs: Vec<(usize, &DVector<f64>)> = atlas
        .leaves
        .iter()
        .enumerate()
        .flat_map(|(i, leaf)| leaf.boundary.iter().map(move |s| (i, &s.point)))
        .collect();
    let quotients = boundary_jobs
        .par_iter()
        .map(|&(i, z)| {
            let f0 = model.level(&induced_flow(atlas, i, z, FlowTime::Finite(0.0))?);
            let quotients = steps
                .iter()
                .map(|&h| Ok((model.level(&induced_flow(atlas, i, z, FlowTime::Finite(h))?) - f0) / h))
                .collect::<Result<Vec<_>>>()?;
            Ok(BoundaryQuotient {
                leaf: i,
                z_plus: model.split.project(Subspace::Plus, z),
                quotients,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mu_audit = quotients
        .iter()
        .flat_map(|q| q.quotients.iter().map(|v| -v))
        .fold(f64::INFINITY, f64::min);

    Ok(RetractReport {
        disk_violation,
        disk_tol: 1e-9 * eps,
        manifold_residual,
        infinity_exact,
        surrogate,
        fixed_point_drift: drift,
        fixed_point_tol: 1e-10,
        quotients,
        steps: steps.to_vec(),
        mu_audit,
    })
}
