use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::curve::{Curve, Horizon};
use super::kernel::Dichotomy;
use crate::error::{Error, Result};
use crate::local_model::LocalModel;
use crate::spectral::Subspace;

/// Relative slack on the norm budget of the curve balls.
const BUDGET_SLACK: f64 = 1e-9;
/// Iterations without a 0.9 decrease tolerated before giving up.
const STALL_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// Backward-horizon operator whose fixed points emanate from the origin.
    Unstable,
    /// Forward-horizon operator whose fixed points converge to the origin.
    Stable,
    /// Finite-horizon operator with mixed boundary data.
    Mixed,
}

/// One of the three integral operators, with its boundary data frozen.
#[derive(Clone, Debug)]
pub struct LpOperator<'a> {
    pub model: &'a LocalModel,
    pub kind: OperatorKind,
    pub horizon: Horizon,
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    /// Radius of the admissible ball in the exp norm.
    pub budget: f64,
    /// Bound on the truncated part of an infinite-horizon integral.
    pub tail_bound: f64,
    /// A-priori Lipschitz bound of the operator on its ball.
    pub contraction: f64,
    /// Centre of the admissible ball; `None` means the zero curve.
    pub center: Option<Curve>,
    left: Vec<f64>,
    right: Vec<f64>,
    dichotomy: Arc<Dichotomy>,
}

fn check_radius(norm: f64, radius: f64) -> Result<()> {
    if norm > radius * (1.0 + BUDGET_SLACK) {
        return Err(Error::OutOfTrustRegion { norm, radius });
    }
    Ok(())
}

impl<'a> LpOperator<'a> {
    fn build(
        model: &'a LocalModel,
        kind: OperatorKind,
        horizon: Horizon,
        z_minus: DVector<f64>,
        z_plus: DVector<f64>,
        budget: f64,
        tail_bound: f64,
        kappa: f64,
    ) -> Self {
        let split = &model.split;
        let grid = horizon.grid(model.panels_for(horizon.length()), model.numerics.degree);
        let eig: Vec<f64> = split.eigenvalues.iter().copied().collect();
        let dichotomy = Arc::new(Dichotomy::new(grid, &eig));
        let left = split.to_eigen(&z_plus).iter().copied().collect();
        let right = split.to_eigen(&z_minus).iter().copied().collect();
        let contraction = model.ladder.contraction_factor(kappa);
        Self {
            model,
            kind,
            horizon,
            z_minus,
            z_plus,
            budget,
            tail_bound,
            contraction,
            center: None,
            left,
            right,
            dichotomy,
        }
    }

    fn manifold_tail(model: &LocalModel, length: f64) -> f64 {
        let l = &model.ladder;
        let kappa = l.kappa.at(l.manifold_rho);
        kappa * l.manifold_rho * (-length * l.lambda).exp() / (l.lambda + l.mu)
    }

    /// The operator whose fixed point is the orbit through the unstable
    /// graph point over `z_minus`, on `[-length, 0]`.
    pub fn unstable(model: &'a LocalModel, z_minus: &DVector<f64>, length: f64) -> Result<Self> {
        let z = model.split.project(Subspace::Minus, z_minus);
        check_radius(z.norm(), model.ladder.manifold_radius)?;
        let n = model.dimension();
        Ok(Self::build(
            model,
            OperatorKind::Unstable,
            Horizon::Backward(length),
            z,
            DVector::zeros(n),
            model.ladder.manifold_rho,
            Self::manifold_tail(model, length),
            model.ladder.kappa.at(model.ladder.manifold_rho),
        ))
    }

    /// The operator whose fixed point is the orbit through the stable graph
    /// point over `z_plus`, on `[0, length]`.
    pub fn stable(model: &'a LocalModel, z_plus: &DVector<f64>, length: f64) -> Result<Self> {
        let z = model.split.project(Subspace::Plus, z_plus);
        check_radius(z.norm(), model.ladder.manifold_radius)?;
        let n = model.dimension();
        Ok(Self::build(
            model,
            OperatorKind::Stable,
            Horizon::Forward(length),
            DVector::zeros(n),
            z,
            model.ladder.manifold_rho,
            Self::manifold_tail(model, length),
            model.ladder.kappa.at(model.ladder.manifold_rho),
        ))
    }

    /// The finite-horizon operator on `[0, t]`; `orbit` supplies the centre
    /// `t -> phi_t(z_minus^T)` of the admissible ball.
    pub fn mixed(
        model: &'a LocalModel,
        t: f64,
        z_minus: &DVector<f64>,
        z_plus: &DVector<f64>,
        orbit: &UnstableOrbit,
    ) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::HorizonMismatch(format!("horizon T = {t} must be positive")));
        }
        if orbit.length() < t {
            return Err(Error::HorizonMismatch(format!(
                "unstable orbit covers [-{}, 0], need [-{t}, 0]",
                orbit.length()
            )));
        }
        let zm = model.split.project(Subspace::Minus, z_minus);
        if (&zm - &orbit.z_minus).norm() > 1e-14 * zm.norm().max(1.0) {
            return Err(Error::Config(
                "unstable orbit was solved for a different z_minus".into(),
            ));
        }
        let zp = model.split.project(Subspace::Plus, z_plus);
        check_radius(zp.norm(), model.ladder.fiber_radius())?;
        let mut op = Self::build(
            model,
            OperatorKind::Mixed,
            Horizon::Finite(t),
            zm,
            zp,
            model.ladder.rho,
            0.0,
            model.ladder.kappa_rho,
        );
        let grid = op.dichotomy.grid.clone();
        op.center = Some(Curve::from_fn(op.horizon, grid, model.ladder.lambda, |s| {
            orbit.at(s - t)
        }));
        Ok(op)
    }

    pub fn grid(&self) -> &super::grid::PanelGrid {
        &self.dichotomy.grid
    }

    pub fn zero_curve(&self) -> Curve {
        Curve::zeros(
            self.horizon,
            self.grid().clone(),
            self.model.dimension(),
            self.model.ladder.lambda,
        )
    }

    /// The linear part `t -> e^{-tA} z_plus + c(t)` with `c` the centre, or
    /// `e^{-tA^-} z_minus` on backward horizons.
    pub fn initial_guess(&self) -> Curve {
        let split = &self.model.split;
        let mut c = Curve::from_fn(
            self.horizon,
            self.grid().clone(),
            self.model.ladder.lambda,
            |t| match self.kind {
                OperatorKind::Unstable => split.restricted_exponential(Subspace::Minus, t) * &self.z_minus,
                _ => split.flow_exponential(t) * &self.z_plus,
            },
        );
        if let Some(center) = &self.center {
            c.values += &center.values;
        }
        c
    }

    /// Distance from the centre of the admissible ball in the exp norm.
    pub fn offset(&self, curve: &Curve) -> Result<f64> {
        match &self.center {
            Some(c) => curve.exp_distance(c),
            None => Ok(curve.exp_norm()),
        }
    }

    /// One application without the budget check.
    pub fn apply_unchecked(&self, curve: &Curve) -> Result<Curve> {
        if curve.horizon != self.horizon || !curve.grid.same_layout(self.grid()) {
            return Err(Error::HorizonMismatch(format!(
                "operator on {:?}, curve on {:?}",
                self.horizon, curve.horizon
            )));
        }
        let split = &self.model.split;
        let n = curve.dimension();
        let mut forcing = DMatrix::zeros(n, curve.len());
        for j in 0..curve.len() {
            let h = self.model.nonlinearity(&curve.node(j));
            forcing.set_column(j, &split.eigenvectors.tr_mul(&h));
        }
        let y = self.dichotomy.solve(&forcing, &self.left, &self.right);
        let values = &split.eigenvectors * y;
        Ok(Curve::new(
            self.horizon,
            curve.grid.clone(),
            values,
            self.model.ladder.lambda,
        ))
    }

    pub fn apply(&self, curve: &Curve) -> Result<Curve> {
        let out = self.apply_unchecked(curve)?;
        let norm = self.offset(&out)?;
        if norm > self.budget * (1.0 + BUDGET_SLACK) {
            return Err(Error::NormBudgetExceeded {
                norm,
                budget: self.budget,
            });
        }
        Ok(out)
    }
}

/// Converged Picard iterate.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub curve: Curve,
    /// `|| P xi - xi ||` in the exp norm at the last step.
    pub residual: f64,
    /// Picard steps beyond the first application.
    pub iterations: usize,
    pub tail_bound: f64,
    /// Bound on the exp-norm distance to the exact fixed point:
    /// `q / (1 - q) * residual + tail` for the a-priori contraction `q`.
    pub error_bound: f64,
    pub history: Vec<f64>,
}

impl FixedPoint {
    pub fn total_residual(&self) -> f64 {
        self.residual + self.tail_bound
    }
}

/// Picard iteration until the exp-norm residual drops below `tol` (or to
/// the round-off floor of the weighted norm).
pub fn fixed_point(op: &LpOperator, initial: Curve, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    let mut current = initial;
    let mut history = Vec::new();
    let mut stalls = 0;
    let mut applications = 0;
    loop {
        let next = op.apply(&current)?;
        applications += 1;
        let residual = next.exp_distance(&current)?;
        let floor = 64.0 * f64::EPSILON * next.exp_norm();
        if residual <= tol || residual <= floor {
            history.push(residual);
            return Ok(FixedPoint {
                curve: next,
                residual,
                iterations: applications - 1,
                tail_bound: op.tail_bound,
                error_bound: if op.contraction < 1.0 {
                    op.contraction / (1.0 - op.contraction) * residual + op.tail_bound
                } else {
                    f64::INFINITY
                },
                history,
            });
        }
        match history.last() {
            Some(&prev) if residual > 0.9 * prev => stalls += 1,
            _ => stalls = 0,
        }
        history.push(residual);
        if stalls >= STALL_LIMIT || applications >= max_iter {
            return Err(Error::NoConvergence {
                iterations: applications,
                residual,
            });
        }
        current = next;
    }
}

/// Fixed point of the unstable operator: the backward orbit through the
/// unstable graph point over `z_minus`.
#[derive(Clone, Debug)]
pub struct UnstableOrbit {
    pub z_minus: DVector<f64>,
    pub solution: FixedPoint,
}

impl UnstableOrbit {
    pub fn solve(model: &LocalModel, z_minus: &DVector<f64>) -> Result<Self> {
        Self::solve_with_length(model, z_minus, model.ladder.t_max)
    }

    pub fn solve_with_length(model: &LocalModel, z_minus: &DVector<f64>, length: f64) -> Result<Self> {
        Self::solve_with_tol(model, z_minus, length, model.numerics.fixed_point_tol)
    }

    pub fn solve_with_tol(model: &LocalModel, z_minus: &DVector<f64>, length: f64, tol: f64) -> Result<Self> {
        let op = LpOperator::unstable(model, z_minus, length.max(model.ladder.t_max))?;
        let solution = fixed_point(&op, op.initial_guess(), tol, model.numerics.max_iterations)?;
        Ok(Self {
            z_minus: op.z_minus.clone(),
            solution,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.solution.curve
    }

    pub fn length(&self) -> f64 {
        self.curve().horizon.length()
    }

    /// `eta(s)` for `s` in `[-length, 0]`.
    pub fn at(&self, s: f64) -> DVector<f64> {
        self.curve().at(s)
    }

    /// The point `eta(0)` on the local unstable manifold.
    pub fn point(&self) -> DVector<f64> {
        self.curve().end()
    }
}

/// Fixed point of the stable operator: the forward orbit through the stable
/// graph point over `z_plus`.
#[derive(Clone, Debug)]
pub struct StableOrbit {
    pub z_plus: DVector<f64>,
    pub solution: FixedPoint,
}

impl StableOrbit {
    pub fn solve(model: &LocalModel, z_plus: &DVector<f64>) -> Result<Self> {
        Self::solve_with_length(model, z_plus, model.ladder.t_max)
    }

    /// Solves on `[0, max(length, T_max)]`.
    pub fn solve_with_length(model: &LocalModel, z_plus: &DVector<f64>, length: f64) -> Result<Self> {
        let op = LpOperator::stable(model, z_plus, length.max(model.ladder.t_max))?;
        let solution = fixed_point(
            &op,
            op.initial_guess(),
            model.numerics.fixed_point_tol,
            model.numerics.max_iterations,
        )?;
        Ok(Self {
            z_plus: op.z_plus.clone(),
            solution,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.solution.curve
    }

    /// `xi(0)` on the local stable manifold.
    pub fn point(&self) -> DVector<f64> {
        self.curve().start()
    }

    pub fn length(&self) -> f64 {
        self.curve().horizon.length()
    }

    /// `xi(t)` for `t` in `[0, length]`.
    pub fn at(&self, t: f64) -> DVector<f64> {
        self.curve().at(t)
    }
}

/// Fixed point of the finite-horizon operator.
#[derive(Clone, Debug)]
pub struct MixedSolution {
    pub horizon: f64,
    pub z_minus: DVector<f64>,
    pub z_plus: DVector<f64>,
    pub solution: FixedPoint,
    pub center: Curve,
}

impl MixedSolution {
    pub fn solve(
        model: &LocalModel,
        t: f64,
        z_minus: &DVector<f64>,
        z_plus: &DVector<f64>,
        orbit: &UnstableOrbit,
    ) -> Result<Self> {
        Self::solve_with_tol(model, t, z_minus, z_plus, orbit, model.numerics.fixed_point_tol)
    }

    pub fn solve_with_tol(
        model: &LocalModel,
        t: f64,
        z_minus: &DVector<f64>,
        z_plus: &DVector<f64>,
        orbit: &UnstableOrbit,
        tol: f64,
    ) -> Result<Self> {
        let op = LpOperator::mixed(model, t, z_minus, z_plus, orbit)?;
        let solution = fixed_point(&op, op.initial_guess(), tol, model.numerics.max_iterations)?;
        Ok(Self {
            horizon: t,
            z_minus: op.z_minus.clone(),
            z_plus: op.z_plus.clone(),
            center: op.center.clone().expect("mixed operator has a centre"),
            solution,
        })
    }

    pub fn curve(&self) -> &Curve {
        &self.solution.curve
    }

    /// `xi(0)`, the point on the graph over `z_plus`.
    pub fn point(&self) -> DVector<f64> {
        self.curve().start()
    }

    /// `xi(T)`, which lies on the fibre over `z_minus`.
    pub fn endpoint(&self) -> DVector<f64> {
        self.curve().end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{LadderChoices, Numerics};
    use crate::reference;

    fn model(p: crate::local_model::GradientProblem) -> LocalModel {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        LocalModel::build(p, &LadderChoices::default(), numerics).unwrap()
    }

    #[test]
    fn quadratic_unstable_orbit_is_linear() {
        let m = model(reference::quadratic());
        let z = DVector::from_vec(vec![0.1, 0.0]);
        let orbit = UnstableOrbit::solve(&m, &z).unwrap();
        assert!(orbit.solution.iterations <= 1);
        for s in [-3.0f64, -1.2, 0.0] {
            let exact = DVector::from_vec(vec![0.1 * s.exp(), 0.0]);
            assert!((orbit.at(s) - exact).norm() < 1e-14);
        }
    }

    #[test]
    fn quadratic_mixed_solution_closed_form() {
        let m = model(reference::quadratic());
        let zm = DVector::from_vec(vec![0.05, 0.0]);
        let zp = DVector::from_vec(vec![0.0, 0.6 * m.ladder.fiber_radius()]);
        let t = m.ladder.t0;
        let orbit = UnstableOrbit::solve(&m, &zm).unwrap();
        let sol = MixedSolution::solve(&m, t, &zm, &zp, &orbit).unwrap();
        for &s in sol.curve().times() {
            let exact = DVector::from_vec(vec![0.05 * (s - t).exp(), zp[1] * (-2.0 * s).exp()]);
            assert!((sol.curve().at(s) - exact).norm() < 1e-14);
        }
        assert!(sol.solution.iterations <= 2);
    }

    #[test]
    fn zero_data_gives_zero_curve() {
        let m = model(reference::quartic());
        let z = DVector::zeros(2);
        let orbit = UnstableOrbit::solve(&m, &z).unwrap();
        assert_eq!(orbit.curve().sup_norm(), 0.0);
        let st = StableOrbit::solve(&m, &z).unwrap();
        assert_eq!(st.curve().sup_norm(), 0.0);
    }

    #[test]
    fn quartic_stable_orbit_solves_the_ode() {
        let m = model(reference::quartic());
        let zp = DVector::from_vec(vec![0.0, 0.8 * m.ladder.manifold_radius]);
        let st = StableOrbit::solve(&m, &zp).unwrap();
        assert!(st.curve().ode_residual(&m) < 1e-9, "{}", st.curve().ode_residual(&m));
        let floor = 64.0 * f64::EPSILON * st.curve().exp_norm();
        assert!(st.solution.residual <= 1e-12f64.max(floor));
    }

    #[test]
    fn quartic_iteration_count_matches_contraction() {
        let m = model(reference::quartic());
        let r = m.ladder.manifold_radius;
        let zm = DVector::from_vec(vec![0.9 * r, 0.0]);
        let orbit = UnstableOrbit::solve(&m, &zm).unwrap();
        let zp = DVector::from_vec(vec![0.0, 0.9 * m.ladder.fiber_radius()]);
        let sol = MixedSolution::solve_with_tol(&m, m.ladder.t0, &zm, &zp, &orbit, 1e-10).unwrap();
        let bound = (m.ladder.rho / 1e-10).log2().ceil() as usize + 5;
        assert!(sol.solution.iterations <= bound);
    }

    #[test]
    fn boundary_conditions_hold_exactly() {
        let m = model(reference::quartic());
        let zm = DVector::from_vec(vec![0.01, 0.0]);
        let zp = DVector::from_vec(vec![0.0, -0.5 * m.ladder.fiber_radius()]);
        let orbit = UnstableOrbit::solve(&m, &zm).unwrap();
        let sol = MixedSolution::solve(&m, 1.3 * m.ladder.t0, &zm, &zp, &orbit).unwrap();
        let s = &m.split;
        assert!((s.project(Subspace::Plus, &sol.point()) - &zp).norm() < 1e-12);
        assert!((s.project(Subspace::Minus, &sol.endpoint()) - &zm).norm() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let m = model(reference::quartic());
        let zm = DVector::from_vec(vec![0.01, 0.0]);
        let zp = DVector::from_vec(vec![0.0, 0.4 * m.ladder.fiber_radius()]);
        let orbit = UnstableOrbit::solve(&m, &zm).unwrap();
        let op = LpOperator::mixed(&m, m.ladder.t0, &zm, &zp, &orbit).unwrap();
        let mut far = op.initial_guess();
        far.values.add_scalar_mut(1.0);
        assert!(matches!(op.apply(&far), Err(Error::NormBudgetExceeded { .. })));
        assert!(LpOperator::mixed(&m, m.ladder.t0, &zm, &(zp * 10.0), &orbit).is_err());
    }
}
