//! Forward integration of the gradient flow, the algebraic backward flow on
//! the unstable manifold, and descending/ascending disks.
//!
//! Nothing here integrates the flow in reverse time: backward motion is read
//! off fixed points of the unstable operator.

mod disk;
pub mod dopri;

pub(crate) use disk::illinois;
pub use disk::{ascending_disk, descending_disk, level_disk, DiskPoint, LevelDisk};

use nalgebra::{DMatrix, DVector};

use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::local_model::{GradientProblem, LocalModel};
use crate::lyapunov_perron::UnstableOrbit;
use crate::spectral::Subspace;

/// Tolerance on the graph residual of points claimed to lie on `W^u`.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

/// Dense forward trajectory in local coordinates.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `f` at each state.
    pub values: Vec<f64>,
    steps: Vec<dopri::DenseStep>,
    /// True when a stop predicate ended the run before the horizon.
    pub stopped: bool,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        *self.times.last().expect("trajectory has a start") - self.times[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has a start")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectory has a start")
    }

    /// Dense output at `t` (clamped to the integrated interval).
    pub fn at(&self, t: f64) -> DVector<f64> {
        if self.steps.is_empty() || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.end_time() {
            return self.end().clone();
        }
        let i = self.steps.partition_point(|s| s.t0 + s.h < t).min(self.steps.len() - 1);
        self.steps[i].eval(t)
    }

    /// Concatenates trajectories that each start at time zero, shifting each
    /// by the end time of its predecessors.
    pub fn chain(parts: Vec<Trajectory>) -> Trajectory {
        let mut out = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            values: Vec::new(),
            steps: Vec::new(),
            stopped: false,
        };
        let mut offset = 0.0;
        for (i, part) in parts.into_iter().enumerate() {
            let skip = usize::from(i > 0);
            out.times.extend(part.times.iter().skip(skip).map(|t| t + offset));
            out.states.extend(part.states.into_iter().skip(skip));
            out.values.extend(part.values.into_iter().skip(skip));
            out.steps.extend(part.steps.into_iter().map(|s| s.shifted(offset)));
            out.stopped |= part.stopped;
            offset = *out.times.last().expect("trajectory has a start");
        }
        out
    }

    /// Whether `f` is non-increasing along the stored states up to `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    /// `|f(end) - f(start) + int |grad f|^2 dt|`, with Gauss-Legendre
    /// quadrature on the dense output of each step.
    pub fn dissipation_defect(&self, problem: &GradientProblem) -> f64 {
        let (x, w) = crate::lyapunov_perron::grid::gauss_legendre(6);
        let dissipated: f64 = self
            .steps
            .iter()
            .map(|s| {
                x.iter()
                    .zip(&w)
                    .map(|(u, wq)| {
                        let t = s.t0 + 0.5 * s.h * (u + 1.0);
                        0.5 * s.h * wq * problem.gradient(&s.eval(t)).norm_squared()
                    })
                    .sum::<f64>()
            })
            .sum();
        (self.values.last().unwrap() - self.values[0] + dissipated).abs()
    }

    /// CSV with columns `t, x_1..x_n, f`.
    pub fn csv(&self) -> String {
        let n = self.states[0].len();
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        out.push_str(",f\n");
        for ((t, x), f) in self.times.iter().zip(&self.states).zip(&self.values) {
            out.push_str(&fmt(*t));
            for v in x.iter() {
                out.push(',');
                out.push_str(&fmt(*v));
            }
            out.push(',');
            out.push_str(&fmt(*f));
            out.push('\n');
        }
        out
    }
}

/// Stop predicate on `(t, xi)`.
pub type StopRule<'a> = &'a (dyn Fn(f64, &DVector<f64>) -> bool + Sync);

/// Integrates `xi' = -grad f(x + xi)` forward for time `duration`.
pub fn integrate_forward(
    problem: &GradientProblem,
    start: &DVector<f64>,
    duration: f64,
    tol: f64,
) -> Result<Trajectory> {
    integrate_until(problem, start, duration, tol, 1e3, None)
}

/// As [`integrate_forward`], with a blow-up bound and an optional stop rule
/// checked after every accepted step.
pub fn integrate_until(
    problem: &GradientProblem,
    start: &DVector<f64>,
    duration: f64,
    tol: f64,
    blowup_norm: f64,
    stop: Option<StopRule>,
) -> Result<Trajectory> {
    integrate_scaled(problem, start, duration, tol, tol * 1e-6, blowup_norm, stop)
}

/// As [`integrate_until`] with an explicit absolute tolerance, for states
/// whose components differ by many orders of magnitude.
pub fn integrate_scaled(
    problem: &GradientProblem,
    start: &DVector<f64>,
    duration: f64,
    rtol: f64,
    atol: f64,
    blowup_norm: f64,
    stop: Option<StopRule>,
) -> Result<Trajectory> {
    if !(duration >= 0.0) {
        return Err(Error::Config(format!(
            "integration time {duration} must be non-negative"
        )));
    }
    let rhs = |y: &DVector<f64>| -problem.gradient(y);
    let opts = dopri::Options {
        rtol,
        atol,
        blowup_norm,
        stop,
    };
    let sol = dopri::integrate(&rhs, start.clone(), 0.0, duration, &opts)?;
    let values = sol.states.iter().map(|s| problem.value(s)).collect();
    Ok(Trajectory {
        times: sol.times,
        states: sol.states,
        values,
        steps: sol.steps,
        stopped: sol.stopped,
    })
}

/// Flow map and its derivative: `(phi_t(start), d phi_t(start) * columns)`,
/// from the variational equation `M' = -D^2 f(x + xi) M` integrated jointly
/// with the state. Error control applies `atol` to the state and `rtol` to
/// the matrix entries.
pub fn integrate_variational(
    problem: &GradientProblem,
    start: &DVector<f64>,
    columns: &DMatrix<f64>,
    duration: f64,
    rtol: f64,
    atol: f64,
    blowup_norm: f64,
) -> Result<(Trajectory, DMatrix<f64>)> {
    let n = start.len();
    let c = columns.ncols();
    let mut y0 = DVector::zeros(n * (1 + c));
    y0.rows_mut(0, n).copy_from(start);
    for j in 0..c {
        y0.rows_mut(n * (1 + j), n).copy_from(&columns.column(j));
    }
    let rhs = |y: &DVector<f64>| {
        let xi = y.rows(0, n).into_owned();
        let h = problem.hessian_at(&xi);
        let mut out = DVector::zeros(y.len());
        out.rows_mut(0, n).copy_from(&(-problem.gradient(&xi)));
        for j in 0..c {
            let col = y.rows(n * (1 + j), n);
            out.rows_mut(n * (1 + j), n).copy_from(&(-(&h * col)));
        }
        out
    };
    let atol_all = DVector::from_fn(y0.len(), |i, _| if i < n { atol } else { rtol });
    let opts = dopri::Options {
        rtol,
        atol: 0.0,
        blowup_norm: f64::INFINITY,
        stop: None,
    };
    let sol = dopri::integrate_weighted(&rhs, y0, 0.0, duration, &opts, &atol_all)?;
    let end = sol.states.last().expect("integration has a start");
    let matrix = DMatrix::from_fn(n, c, |i, j| end[n * (1 + j) + i]);
    let states: Vec<DVector<f64>> = sol.states.iter().map(|s| s.rows(0, n).into_owned()).collect();
    if let Some(big) = states.iter().map(|s| s.norm()).find(|&v| v > blowup_norm) {
        return Err(Error::BlowUp {
            time: duration,
            norm: big,
        });
    }
    let values = states.iter().map(|s| problem.value(s)).collect();
    let steps = sol.steps.into_iter().map(|s| s.truncated(n)).collect();
    Ok((
        Trajectory {
            times: sol.times,
            states,
            values,
            steps,
            stopped: false,
        },
        matrix,
    ))
}

/// `psi_{-t} q`: the point of the emanating orbit through `q` at time `-t`,
/// read off the unstable fixed point over `pi- q`.
pub fn algebraic_backward(model: &LocalModel, q: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("backward time {t} must be non-negative")));
    }
    let split = &model.split;
    let z_minus = split.project(Subspace::Minus, q);
    let orbit = UnstableOrbit::solve_with_length(model, &z_minus, t)?;
    let residual = (orbit.point() - q).norm();
    if residual > ON_MANIFOLD_TOL {
        return Err(Error::NotOnUnstableManifold {
            residual,
            tol: ON_MANIFOLD_TOL,
        });
    }
    if t == 0.0 {
        return Ok(q.clone());
    }
    Ok(orbit.at(-t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{LadderChoices, Numerics};
    use crate::reference;

    fn model(p: GradientProblem) -> LocalModel {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        LocalModel::build(p, &LadderChoices::default(), numerics).unwrap()
    }

    #[test]
    fn quadratic_flow_is_linear() {
        let p = reference::quadratic();
        let tr = integrate_forward(&p, &DVector::from_vec(vec![0.1, 0.2]), 1.5, 1e-11).unwrap();
        let exact = DVector::from_vec(vec![0.1 * 1.5f64.exp(), 0.2 * (-3.0f64).exp()]);
        assert!((tr.end() - exact).norm() < 1e-10);
        assert_eq!(tr.end_time(), 1.5);
        assert!(tr.is_monotone(0.0));
        assert!(tr.dissipation_defect(&p) < 1e-10);
    }

    #[test]
    fn variational_matrix_of_quadratic_flow() {
        let p = reference::quadratic();
        let start = DVector::from_vec(vec![0.01, 0.02]);
        let (tr, m) = integrate_variational(&p, &start, &DMatrix::identity(2, 2), 2.0, 1e-12, 1e-16, 1e3).unwrap();
        let exact = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0f64.exp(), (-4.0f64).exp()]));
        assert!((m - &exact).amax() < 1e-10);
        assert!((tr.end() - &exact * start).norm() < 1e-12);
    }

    #[test]
    fn variational_matrix_matches_difference_quotient() {
        let p = reference::quartic();
        let start = DVector::from_vec(vec![0.05, 0.08]);
        let (_, m) = integrate_variational(&p, &start, &DMatrix::identity(2, 2), 1.5, 1e-12, 1e-16, 1e3).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut e = DVector::zeros(2);
            e[j] = h;
            let plus = integrate_forward(&p, &(&start + &e), 1.5, 1e-13).unwrap();
            let minus = integrate_forward(&p, &(&start - &e), 1.5, 1e-13).unwrap();
            let fd = (plus.end() - minus.end()) / (2.0 * h);
            assert!((fd - m.column(j)).norm() < 1e-6);
        }
    }

    #[test]
    fn chained_trajectories_follow_the_flow() {
        let p = reference::quartic();
        let start = DVector::from_vec(vec![0.01, 0.1]);
        let whole = integrate_forward(&p, &start, 3.0, 1e-12).unwrap();
        let first = integrate_forward(&p, &start, 1.0, 1e-12).unwrap();
        let second = integrate_forward(&p, first.end(), 2.0, 1e-12).unwrap();
        let chained = Trajectory::chain(vec![first, second]);
        assert_eq!(chained.end_time(), 3.0);
        assert!(chained.times.windows(2).all(|w| w[1] > w[0]));
        for t in [0.0, 0.5, 1.0, 1.7, 3.0] {
            assert!((chained.at(t) - whole.at(t)).norm() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn critical_point_is_stationary() {
        let p = reference::quartic();
        let tr = integrate_forward(&p, &DVector::zeros(2), 3.0, 1e-10).unwrap();
        assert_eq!(tr.end().norm(), 0.0);
    }

    #[test]
    fn quartic_flow_matches_tighter_run() {
        let p = reference::quartic();
        let start = DVector::from_vec(vec![0.1, 0.1]);
        let coarse = integrate_forward(&p, &start, 1.0, 1e-9).unwrap();
        let fine = integrate_forward(&p, &start, 1.0, 1e-11).unwrap();
        assert!((coarse.end() - fine.end()).norm() < 1e-8);
        assert!(coarse.is_monotone(0.0));
    }

    #[test]
    fn quadratic_backward_flow_is_linear() {
        let m = model(reference::quadratic());
        let q = DVector::from_vec(vec![0.2, 0.0]);
        let b = algebraic_backward(&m, &q, 2.0).unwrap();
        assert!((b - DVector::from_vec(vec![0.2 * (-2.0f64).exp(), 0.0])).norm() < 1e-15);
        assert_eq!(algebraic_backward(&m, &q, 0.0).unwrap(), q);
        assert!(matches!(
            algebraic_backward(&m, &DVector::from_vec(vec![0.2, 0.05]), 1.0),
            Err(Error::NotOnUnstableManifold { .. })
        ));
    }

    #[test]
    fn curved_backward_flow_round_trips() {
        let m = model(reference::curved());
        let zm = DVector::from_vec(vec![0.8 * m.ladder.manifold_radius, 0.0]);
        let q = UnstableOrbit::solve(&m, &zm).unwrap().point();
        for t in [0.5, 2.0, 5.0] {
            let back = algebraic_backward(&m, &q, t).unwrap();
            let forward = integrate_forward(&m.problem, &back, t, 1e-12).unwrap();
            assert!((forward.end() - &q).norm() < 1e-6);
        }
        let s = algebraic_backward(&m, &q, 1.0).unwrap();
        let ts = algebraic_backward(&m, &s, 2.0).unwrap();
        assert!((ts - algebraic_backward(&m, &q, 3.0).unwrap()).norm() < 1e-10);
    }
}
