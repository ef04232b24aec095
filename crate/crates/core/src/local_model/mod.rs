//! The Euclidean local model at a critical point `x`.
//!
//! Points are expressed in local coordinates `xi = p - x`; the flow of
//! `-grad f` becomes `xi' = -A xi + h(xi)` with `h(xi) = A xi - grad f(x + xi)`.

mod config;
mod flatten;
mod kappa;
mod ladder;
mod polynomial;
pub mod sampling;

pub use config::ProblemConfig;
pub use flatten::flatten;
pub use kappa::{default_rho_grid, lipschitz_modulus, SampledModulus};
pub use ladder::{build_ladder, LadderChoices, RateLadder};
pub use polynomial::{DifferentiatedPolynomial, Polynomial};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spectral::{self, SpectralSplit};

/// A gradient problem with polynomial objective and a non-degenerate
/// critical point.
#[derive(Clone, Debug)]
pub struct GradientProblem {
    pub name: String,
    objective: DifferentiatedPolynomial,
    pub critical_point: DVector<f64>,
    /// Radius `rho_0` of the ball on which the local model is used.
    pub trust_radius: f64,
    /// Whether `dh` is locally Lipschitz; always true for polynomials.
    pub c21: bool,
    critical_value: f64,
}

impl GradientProblem {
    pub fn new(
        name: impl Into<String>,
        objective: Polynomial,
        critical_point: DVector<f64>,
        trust_radius: f64,
    ) -> Result<Self> {
        let n = objective.dimension();
        if critical_point.len() != n {
            return Err(Error::Config(format!(
                "critical point has {} coordinates, objective has {} variables",
                critical_point.len(),
                n
            )));
        }
        if !(trust_radius > 0.0 && trust_radius <= 1.0) {
            return Err(Error::Config(format!("trust radius {trust_radius} not in (0, 1]")));
        }
        let objective = DifferentiatedPolynomial::new(objective);
        let residual = objective.gradient(&critical_point).norm();
        let scale = objective.hessian(&critical_point).amax().max(1.0);
        if residual > 1e-10 * scale {
            return Err(Error::Config(format!(
                "gradient at the critical point has norm {residual:.3e}"
            )));
        }
        let critical_value = objective.eval(&critical_point);
        Ok(Self {
            name: name.into(),
            objective,
            critical_point,
            trust_radius,
            c21: true,
            critical_value,
        })
    }

    pub fn dimension(&self) -> usize {
        self.critical_point.len()
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.objective.value
    }

    /// `c = f(x)`.
    pub fn critical_value(&self) -> f64 {
        self.critical_value
    }

    pub fn critical_residual(&self) -> f64 {
        self.objective.gradient(&self.critical_point).norm()
    }

    /// `f(x + xi)`.
    pub fn value(&self, xi: &DVector<f64>) -> f64 {
        self.objective.eval(&(&self.critical_point + xi))
    }

    /// `f(x + xi) - f(x)`.
    pub fn level(&self, xi: &DVector<f64>) -> f64 {
        self.value(xi) - self.critical_value
    }

    pub fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        self.objective.gradient(&(&self.critical_point + xi))
    }

    pub fn hessian_at(&self, xi: &DVector<f64>) -> DMatrix<f64> {
        self.objective.hessian(&(&self.critical_point + xi))
    }

    pub fn third_contract(&self, xi: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        self.objective.third_contract(&(&self.critical_point + xi), v)
    }

    pub fn split(&self) -> Result<SpectralSplit> {
        spectral::split_default(&self.hessian_at(&DVector::zeros(self.dimension())))
    }
}

/// `h(xi) = A xi - grad f(x + xi)` on the trust ball.
pub fn nonlinearity(problem: &GradientProblem, split: &SpectralSplit, xi: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = xi.norm();
    if norm > problem.trust_radius {
        return Err(Error::OutOfTrustRegion {
            norm,
            radius: problem.trust_radius,
        });
    }
    Ok(nonlinearity_unchecked(problem, split, xi))
}

pub(crate) fn nonlinearity_unchecked(
    problem: &GradientProblem,
    split: &SpectralSplit,
    xi: &DVector<f64>,
) -> DVector<f64> {
    &split.hessian * xi - problem.gradient(xi)
}

/// `dh(xi) = A - D^2 f(x + xi)`.
pub fn nonlinearity_jacobian(problem: &GradientProblem, split: &SpectralSplit, xi: &DVector<f64>) -> DMatrix<f64> {
    &split.hessian - problem.hessian_at(xi)
}

/// Discretisation and solver settings shared by every stage.
#[derive(Clone, Debug)]
pub struct Numerics {
    /// Polynomial degree per time panel (panel nodes are Chebyshev extrema).
    pub degree: usize,
    /// Panels per unit of `T * max |lambda_i|`.
    pub panels_per_unit: f64,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    /// Relative tolerance of the forward integrator.
    pub ode_tol: f64,
    pub blowup_norm: f64,
    /// Random samples per radius for the Lipschitz moduli.
    pub kappa_samples: usize,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            degree: 12,
            panels_per_unit: 1.0,
            fixed_point_tol: 1e-12,
            max_iterations: 200,
            ode_tol: 1e-11,
            blowup_norm: 1e3,
            kappa_samples: 2000,
            seed: 7,
        }
    }
}

/// Problem, splitting, rate ladder and numerics bundled for the solvers.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub problem: GradientProblem,
    pub split: SpectralSplit,
    pub ladder: RateLadder,
    pub numerics: Numerics,
}

impl LocalModel {
    /// Runs the splitting, the Lipschitz sampling and the ladder construction.
    pub fn build(problem: GradientProblem, choices: &LadderChoices, numerics: Numerics) -> Result<Self> {
        let split = problem.split()?;
        split.require_saddle()?;
        let grid = default_rho_grid(problem.trust_radius);
        let kappa = lipschitz_modulus(&problem, &split, &grid, numerics.kappa_samples, numerics.seed)?;
        let ladder = build_ladder(&split, kappa, choices)?;
        Ok(Self {
            problem,
            split,
            ladder,
            numerics,
        })
    }

    pub fn dimension(&self) -> usize {
        self.split.dimension()
    }

    pub fn nonlinearity(&self, xi: &DVector<f64>) -> DVector<f64> {
        nonlinearity_unchecked(&self.problem, &self.split, xi)
    }

    pub fn level(&self, xi: &DVector<f64>) -> f64 {
        self.problem.level(xi)
    }

    /// Number of panels used on an interval of length `len`.
    pub fn panels_for(&self, len: f64) -> usize {
        let stiff = len * self.split.spectral_radius() * self.numerics.panels_per_unit;
        (stiff.ceil() as usize).max(4)
    }
}
