//! Independent shooting oracles for the graph maps.
//!
//! These integrate the flow forward only and never touch the integral
//! operators, so agreement with them is a genuine cross-check.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{integrate_forward, integrate_until, integrate_variational, Trajectory};
use crate::lambda_verify::{ConvergenceReport, ReportKind, ReportRow};
use crate::local_model::LocalModel;
use crate::lyapunov_perron::{Curve, MixedSolution, UnstableOrbit};
use crate::spectral::Subspace;

const MAX_BISECTIONS: usize = 200;
const MAX_NEWTON: usize = 60;
const MAX_HALVINGS: usize = 40;
/// Largest growth `e^{|lambda_1| dt}` allowed across one shooting segment.
const SEGMENT_GROWTH: f64 = 1e4;

/// Outcome of a shooting solve.
#[derive(Clone, Debug)]
pub struct ShootingResult {
    /// The prescribed base point.
    pub query: DVector<f64>,
    /// Graph value in the complementary subspace (ambient coordinates).
    pub value: DVector<f64>,
    /// Ambient point `query + value`.
    pub point: DVector<f64>,
    pub trajectory: Trajectory,
    /// Final bracket width (bisection) or last Newton step size.
    pub bracket_width: f64,
    /// Boundary mismatch of the returned trajectory.
    pub residual: f64,
    pub iterations: usize,
    pub integration_tol: f64,
}

fn ode_tol(tol: f64) -> f64 {
    (tol * 1e-2).max(1e-13)
}

/// `G^inf(z_plus)` by shooting. One unstable direction uses bisection on the
/// side to which the orbit escapes within `horizon`; higher index uses
/// Newton on the boundary problem with `z_minus = 0` on `[0, horizon]`.
pub fn stable_point_oracle(
    model: &LocalModel,
    z_plus: &DVector<f64>,
    horizon: f64,
    tol: f64,
) -> Result<ShootingResult> {
    if model.split.morse_index > 1 {
        let zero = DVector::zeros(model.dimension());
        return mixed_bvp_oracle(model, horizon, &zero, z_plus, tol);
    }
    let split = &model.split;
    let zp = split.project(Subspace::Plus, z_plus);
    let e = split.basis(Subspace::Minus).column(0).into_owned();
    let bound = model.ladder.manifold_radius;
    let escape = 2.0 * bound;
    let itol = ode_tol(tol);
    let axis = e.clone();
    let stop = move |_: f64, y: &DVector<f64>| y.dot(&axis).abs() > escape;
    let shoot = |w: f64| -> Result<(f64, Trajectory)> {
        let start = &zp + w * &e;
        let tr = integrate_until(
            &model.problem,
            &start,
            horizon,
            itol,
            model.numerics.blowup_norm,
            Some(&stop),
        )?;
        Ok((tr.end().dot(&e), tr))
    };
    let (mut lo, mut hi) = (-bound, bound);
    let s_lo = shoot(lo)?.0.signum();
    let s_hi = shoot(hi)?.0.signum();
    if s_lo == s_hi {
        return Err(Error::BracketLost {
            side: if s_lo > 0.0 { "positive" } else { "negative" },
        });
    }
    let mut iterations = 0;
    while hi - lo > tol && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shoot(mid)?.0.signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let w = 0.5 * (lo + hi);
    let (_, trajectory) = shoot(w)?;
    let value = w * &e;
    let closest = trajectory.states.iter().map(|s| s.norm()).fold(f64::INFINITY, f64::min);
    Ok(ShootingResult {
        point: &zp + &value,
        query: zp,
        value,
        trajectory,
        bracket_width: hi - lo,
        residual: closest,
        iterations,
        integration_tol: itol,
    })
}

/// Number of shooting segments on `[0, t]`: enough that the fastest
/// unstable mode grows by at most `SEGMENT_GROWTH` across each.
pub fn shooting_segments(model: &LocalModel, t: f64) -> usize {
    let rate = model.split.lambda_min().abs();
    ((rate * t / SEGMENT_GROWTH.ln()).ceil() as usize).max(1)
}

/// Solves `pi+ xi(0) = z_plus`, `pi- xi(t) = z_minus` by damped Newton:
/// single shooting on the unstable coordinates of `xi(0)` when one segment
/// suffices, multiple shooting otherwise.
pub fn mixed_bvp_oracle(
    model: &LocalModel,
    t: f64,
    z_minus: &DVector<f64>,
    z_plus: &DVector<f64>,
    tol: f64,
) -> Result<ShootingResult> {
    if !(t > 0.0) {
        return Err(Error::HorizonMismatch(format!("horizon T = {t} must be positive")));
    }
    match shooting_segments(model, t) {
        1 => single_shooting(model, t, z_minus, z_plus, tol),
        segments => multiple_shooting(model, t, z_minus, z_plus, tol, segments),
    }
}

/// Single shooting with a central-difference Jacobian.
fn single_shooting(
    model: &LocalModel,
    t: f64,
    z_minus: &DVector<f64>,
    z_plus: &DVector<f64>,
    tol: f64,
) -> Result<ShootingResult> {
    let split = &model.split;
    let k = split.morse_index;
    let zp = split.project(Subspace::Plus, z_plus);
    let target = split.coordinates(Subspace::Minus, z_minus);
    let itol = ode_tol(tol);
    let growth: Vec<f64> = (0..k).map(|i| (split.eigenvalues[i] * t).exp()).collect();

    let shoot = |w: &DVector<f64>| -> Result<(DVector<f64>, Trajectory)> {
        let start = &zp + split.embed(Subspace::Minus, w);
        let tr = integrate_forward(&model.problem, &start, t, itol)?;
        let miss = split.coordinates(Subspace::Minus, tr.end()) - &target;
        Ok((miss, tr))
    };

    let mut w = DVector::from_fn(k, |i, _| growth[i] * target[i]);
    let scale = target.norm().max(1e-3 * model.ladder.rho);
    let goal = tol * target.norm().max(model.ladder.rho);
    let (mut miss, mut tr) = shoot(&w)?;
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    while miss.norm() > goal {
        if iterations == MAX_NEWTON {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: miss.norm(),
            });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(k, k);
        for j in 0..k {
            let h = 1e-6 * w[j].abs().max(growth[j] * scale);
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let col = (shoot(&wp)?.0 - shoot(&wm)?.0) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let step = jac.lu().solve(&(-&miss)).ok_or(Error::NewtonDiverged {
            iterations,
            residual: miss.norm(),
        })?;
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &w + damping * &step;
            if let Ok((m, r)) = shoot(&trial) {
                if m.norm() < miss.norm() {
                    step_norm = (damping * &step).norm();
                    w = trial;
                    miss = m;
                    tr = r;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: miss.norm(),
            });
        }
        if step_norm <= 4.0 * f64::EPSILON * w.norm() {
            break;
        }
    }
    if miss.norm() > goal {
        return Err(Error::NewtonDiverged {
            iterations,
            residual: miss.norm(),
        });
    }
    let value = split.embed(Subspace::Minus, &w);
    Ok(ShootingResult {
        point: &zp + &value,
        query: zp,
        value,
        trajectory: tr,
        bracket_width: step_norm,
        residual: miss.norm(),
        iterations,
        integration_tol: itol,
    })
}

/// Multiple shooting on `segments` equal intervals. Unknowns are the
/// unstable eigen-coordinates of `xi(0)` and the eigen-coordinates of the
/// interior nodes; equations are continuity at the nodes and the terminal
/// condition. Segment Jacobians come from the variational equation and
/// unknowns are scaled by the size of the linear solution.
fn multiple_shooting(
    model: &LocalModel,
    t: f64,
    z_minus: &DVector<f64>,
    z_plus: &DVector<f64>,
    tol: f64,
    segments: usize,
) -> Result<ShootingResult> {
    let split = &model.split;
    let n = split.dimension();
    let k = split.morse_index;
    let v = &split.eigenvectors;
    let vm = split.basis(Subspace::Minus);
    let lam = &split.eigenvalues;
    let rho = model.ladder.rho;
    let zp = split.project(Subspace::Plus, z_plus);
    let zp_c = v.transpose() * &zp;
    let target = split.coordinates(Subspace::Minus, z_minus);
    let itol = ode_tol(tol);
    let atol = itol * 1e-3 * rho;
    let dt = t / segments as f64;
    let size = k + n * (segments - 1);
    let tscale = target.norm().max(1e-3 * rho);
    let pscale = zp.norm().max(1e-3 * rho);
    let linear = |i: usize, s: f64| {
        if i < k {
            target[i] * (lam[i] * (t - s)).exp()
        } else {
            zp_c[i] * (-lam[i] * s).exp()
        }
    };
    let sigma = |i: usize, s: f64| {
        if i < k {
            tscale * (lam[i] * (t - s)).exp()
        } else {
            pscale * (-lam[i] * s).exp()
        }
    };
    let slot = |r: usize| ((r - k) / n + 1, (r - k) % n);
    let col_scale = DVector::from_fn(size, |r, _| {
        if r < k {
            sigma(r, 0.0)
        } else {
            let (j, i) = slot(r);
            sigma(i, j as f64 * dt).max(f64::MIN_POSITIVE)
        }
    });
    let mut u = DVector::from_fn(size, |r, _| {
        if r < k {
            linear(r, 0.0)
        } else {
            let (j, i) = slot(r);
            linear(i, j as f64 * dt)
        }
    });
    let node = |u: &DVector<f64>, j: usize| -> DVector<f64> {
        if j == 0 {
            &zp + &vm * u.rows(0, k)
        } else {
            v * u.rows(k + n * (j - 1), n)
        }
    };
    let identity = DMatrix::identity(n, n);
    let evaluate = |u: &DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>, Vec<Trajectory>)> {
        let legs = (0..segments)
            .into_par_iter()
            .map(|j| {
                let columns = if j == 0 { &vm } else { &identity };
                integrate_variational(
                    &model.problem,
                    &node(u, j),
                    columns,
                    dt,
                    itol,
                    atol,
                    model.numerics.blowup_norm,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut residual = DVector::zeros(size);
        let mut jac = DMatrix::zeros(size, size);
        for (j, (tr, m)) in legs.iter().enumerate() {
            let end = v.transpose() * tr.end();
            let dphi = if j == 0 {
                v.transpose() * m
            } else {
                v.transpose() * m * v
            };
            let (col, width) = if j == 0 { (0, k) } else { (k + n * (j - 1), n) };
            let row = n * j;
            if j + 1 < segments {
                let next = u.rows(k + n * j, n);
                residual.rows_mut(row, n).copy_from(&(&end - next));
                jac.view_mut((row, col), (n, width)).copy_from(&dphi);
                jac.view_mut((row, k + n * j), (n, n)).copy_from(&(-&identity));
            } else {
                residual.rows_mut(row, k).copy_from(&(end.rows(0, k) - &target));
                jac.view_mut((row, col), (k, width)).copy_from(&dphi.rows(0, k));
            }
        }
        Ok((residual, jac, legs.into_iter().map(|(tr, _)| tr).collect()))
    };

    let goal = tol * target.norm().max(rho);
    let (mut residual, mut jac, mut legs) = evaluate(&u)?;
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    while residual.norm() > goal {
        if iterations == MAX_NEWTON {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: residual.norm(),
            });
        }
        iterations += 1;
        let scaled = &jac * DMatrix::from_diagonal(&col_scale);
        let step = scaled
            .lu()
            .solve(&(-&residual))
            .ok_or(Error::NewtonDiverged {
                iterations,
                residual: residual.norm(),
            })?
            .component_mul(&col_scale);
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial = &u + damping * &step;
            if let Ok((r, j, l)) = evaluate(&trial) {
                if r.norm() < residual.norm() {
                    step_norm = (damping * &step).norm();
                    u = trial;
                    residual = r;
                    jac = j;
                    legs = l;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations,
                residual: residual.norm(),
            });
        }
        if step_norm <= 4.0 * f64::EPSILON * u.norm() {
            break;
        }
    }
    if residual.norm() > goal {
        return Err(Error::NewtonDiverged {
            iterations,
            residual: residual.norm(),
        });
    }
    let value = &vm * u.rows(0, k);
    Ok(ShootingResult {
        point: &zp + &value,
        query: zp,
        value,
        trajectory: Trajectory::chain(legs),
        bracket_width: step_norm,
        residual: residual.norm(),
        iterations,
        integration_tol: itol,
    })
}

/// `F^inf(z_minus)` approximated by `pi+ xi(t)` of the boundary problem with
/// `z_plus = 0`; the error decays like `e^{-t lambda_{k+1}}`.
pub fn unstable_point_oracle(model: &LocalModel, z_minus: &DVector<f64>, t: f64, tol: f64) -> Result<ShootingResult> {
    let zero = DVector::zeros(model.dimension());
    let mut r = mixed_bvp_oracle(model, t, z_minus, &zero, tol)?;
    let end = r.trajectory.end().clone();
    r.query = model.split.project(Subspace::Minus, z_minus);
    r.value = model.split.project(Subspace::Plus, &end);
    r.point = end;
    Ok(r)
}

/// Largest distance between a shooting trajectory and a solver curve over
/// the curve nodes, both parametrised on the same time axis.
pub fn trajectory_distance(trajectory: &Trajectory, curve: &Curve) -> f64 {
    curve
        .times()
        .iter()
        .enumerate()
        .map(|(j, &t)| (trajectory.at(t) - curve.node(j)).norm())
        .fold(0.0, f64::max)
}

/// Sup-norm distance between the finite-horizon fixed point and the
/// shooting solution for every `(T, z-, z+)` combination, both solved at
/// `tol`, against `bound`.
pub fn cross_validate(
    model: &LocalModel,
    t_grid: &[f64],
    z_minus: &[DVector<f64>],
    z_plus: &[DVector<f64>],
    tol: f64,
    bound: f64,
) -> Result<ConvergenceReport> {
    let jobs: Vec<(f64, &DVector<f64>, &DVector<f64>)> = t_grid
        .iter()
        .flat_map(|&t| z_minus.iter().flat_map(move |a| z_plus.iter().map(move |b| (t, a, b))))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(t, zm, zp)| {
            let orbit = UnstableOrbit::solve_with_tol(model, zm, t, tol)?;
            let lp = MixedSolution::solve_with_tol(model, t, zm, zp, &orbit, tol)?;
            let shot = mixed_bvp_oracle(model, t, zm, zp, tol)?;
            Ok(ReportRow {
                horizon: t,
                z_minus: lp.z_minus.clone(),
                z_plus: lp.z_plus.clone(),
                direction: None,
                tau: Some(tol),
                gap: trajectory_distance(&shot.trajectory, lp.curve()),
                bound,
                budget: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport::new(ReportKind::Oracle, t_grid.to_vec(), rows))
}
