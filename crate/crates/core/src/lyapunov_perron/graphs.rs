use nalgebra::DVector;
use rayon::prelude::*;

use super::operators::{MixedSolution, StableOrbit, UnstableOrbit};
use crate::error::{Error, Result};
use crate::local_model::LocalModel;
use crate::spectral::{SpectralSplit, Subspace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    /// Unstable graph over `B-_R`.
    FInf,
    /// Stable graph over `B+_R`.
    GInf,
    /// Finite-horizon graph over the fibre disk `B+`.
    GT,
}

impl GraphKind {
    pub fn label(self) -> &'static str {
        match self {
            GraphKind::FInf => "F_inf",
            GraphKind::GInf => "G_inf",
            GraphKind::GT => "G_T",
        }
    }

    pub fn domain(self) -> Subspace {
        match self {
            GraphKind::FInf => Subspace::Minus,
            GraphKind::GInf | GraphKind::GT => Subspace::Plus,
        }
    }
}

/// Regular lattice on the cube inscribed in a ball of the domain subspace,
/// in subspace coordinates; the first coordinate varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    pub subspace: Subspace,
    pub dimension: usize,
    pub half_width: f64,
    pub per_axis: usize,
}

impl TensorGrid {
    /// Grid on the largest cube inside the ball of radius `radius`.
    pub fn inscribed(split: &SpectralSplit, subspace: Subspace, radius: f64, per_axis: usize) -> Self {
        assert!(per_axis >= 2);
        let dimension = split.subspace_dimension(subspace);
        Self {
            subspace,
            dimension,
            half_width: radius / (dimension as f64).sqrt(),
            per_axis,
        }
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.per_axis - 1) as f64
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        (0..self.dimension)
            .map(|_| {
                let i = flat % self.per_axis;
                flat /= self.per_axis;
                i
            })
            .collect()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.per_axis + i)
    }

    pub fn coordinates(&self, flat: usize) -> DVector<f64> {
        let h = self.spacing();
        DVector::from_iterator(
            self.dimension,
            self.multi_index(flat)
                .into_iter()
                .map(|i| -self.half_width + h * i as f64),
        )
    }

    pub fn points(&self, split: &SpectralSplit) -> Vec<DVector<f64>> {
        (0..self.len())
            .map(|i| split.embed(self.subspace, &self.coordinates(i)))
            .collect()
    }

    /// Corner indices and multilinear weights of the cell containing `coords`.
    pub fn stencil(&self, coords: &DVector<f64>) -> Result<Vec<(usize, f64)>> {
        let h = self.spacing();
        let slack = 1e-12 * self.half_width;
        let mut base = Vec::with_capacity(self.dimension);
        let mut frac = Vec::with_capacity(self.dimension);
        for &c in coords.iter() {
            if c.abs() > self.half_width + slack {
                return Err(Error::OutsideSampledDomain(format!(
                    "coordinate {c:.6e} outside [-{0:.6e}, {0:.6e}]",
                    self.half_width
                )));
            }
            let s = ((c + self.half_width) / h).clamp(0.0, (self.per_axis - 1) as f64);
            let i = (s.floor() as usize).min(self.per_axis - 2);
            base.push(i);
            frac.push(s - i as f64);
        }
        let mut out = Vec::with_capacity(1 << self.dimension);
        for corner in 0..(1usize << self.dimension) {
            let mut idx = base.clone();
            let mut w = 1.0;
            for d in 0..self.dimension {
                if corner >> d & 1 == 1 {
                    idx[d] += 1;
                    w *= frac[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                out.push((self.flat_index(&idx), w));
            }
        }
        Ok(out)
    }

    /// Flat indices of the two neighbours along axis `d`, if both exist.
    fn neighbours(&self, flat: usize, d: usize) -> Option<(usize, usize)> {
        let idx = self.multi_index(flat);
        if idx[d] == 0 || idx[d] + 1 == self.per_axis {
            return None;
        }
        let mut lo = idx.clone();
        lo[d] -= 1;
        let mut hi = idx;
        hi[d] += 1;
        Some((self.flat_index(&lo), self.flat_index(&hi)))
    }
}

/// Base points of a graph sample.
#[derive(Clone, Debug)]
pub enum BaseGrid {
    Tensor(TensorGrid),
    /// Scattered ambient points in the domain subspace.
    Points(Vec<DVector<f64>>),
}

impl BaseGrid {
    pub fn points(&self, split: &SpectralSplit) -> Vec<DVector<f64>> {
        match self {
            BaseGrid::Tensor(g) => g.points(split),
            BaseGrid::Points(p) => p.clone(),
        }
    }
}

/// Outcome of one graph evaluation.
#[derive(Clone, Debug)]
pub struct GraphEval {
    /// Graph value in the complementary subspace (ambient coordinates).
    pub value: DVector<f64>,
    pub residual: f64,
    /// Bound on the error of `value` from the contraction estimate.
    pub error_bound: f64,
    /// Deviation of the solved curve from its prescribed boundary data.
    pub boundary_error: f64,
    pub iterations: usize,
    /// `xi(T)` for finite-horizon graphs.
    pub endpoint: Option<DVector<f64>>,
}

/// A graph map that can be evaluated at any base point of its domain disk.
pub trait GraphMap: Sync {
    fn kind(&self) -> GraphKind;
    fn model(&self) -> &LocalModel;
    /// Radius of the domain disk.
    fn radius(&self) -> f64;
    fn eval(&self, base: &DVector<f64>) -> Result<GraphEval>;
    fn horizon(&self) -> Option<f64> {
        None
    }
    fn z_minus(&self) -> Option<&DVector<f64>> {
        None
    }
}

/// `z_minus -> pi+ eta_{z_minus}(0)`.
pub struct UnstableGraph<'a> {
    pub model: &'a LocalModel,
}

impl GraphMap for UnstableGraph<'_> {
    fn kind(&self) -> GraphKind {
        GraphKind::FInf
    }
    fn model(&self) -> &LocalModel {
        self.model
    }
    fn radius(&self) -> f64 {
        self.model.ladder.manifold_radius
    }
    fn eval(&self, base: &DVector<f64>) -> Result<GraphEval> {
        let orbit = UnstableOrbit::solve(self.model, base)?;
        let split = &self.model.split;
        Ok(GraphEval {
            value: split.project(Subspace::Plus, &orbit.point()),
            residual: orbit.solution.total_residual(),
            error_bound: orbit.solution.error_bound,
            boundary_error: (split.project(Subspace::Minus, &orbit.point()) - &orbit.z_minus).norm(),
            iterations: orbit.solution.iterations,
            endpoint: None,
        })
    }
}

/// `z_plus -> pi- xi_{z_plus}(0)`.
pub struct StableGraph<'a> {
    pub model: &'a LocalModel,
}

impl GraphMap for StableGraph<'_> {
    fn kind(&self) -> GraphKind {
        GraphKind::GInf
    }
    fn model(&self) -> &LocalModel {
        self.model
    }
    fn radius(&self) -> f64 {
        self.model.ladder.manifold_radius
    }
    fn eval(&self, base: &DVector<f64>) -> Result<GraphEval> {
        let orbit = StableOrbit::solve(self.model, base)?;
        let split = &self.model.split;
        Ok(GraphEval {
            value: split.project(Subspace::Minus, &orbit.point()),
            residual: orbit.solution.total_residual(),
            error_bound: orbit.solution.error_bound,
            boundary_error: (split.project(Subspace::Plus, &orbit.point()) - &orbit.z_plus).norm(),
            iterations: orbit.solution.iterations,
            endpoint: None,
        })
    }
}

/// `z_plus -> pi- xi^T_{z_minus, z_plus}(0)` for fixed `T` and `z_minus`.
pub struct FiniteGraph<'a> {
    pub model: &'a LocalModel,
    pub horizon: f64,
    pub z_minus: DVector<f64>,
    pub orbit: UnstableOrbit,
    pub tol: f64,
}

impl<'a> FiniteGraph<'a> {
    /// Requires `T >= T0`.
    pub fn new(model: &'a LocalModel, horizon: f64, z_minus: &DVector<f64>) -> Result<Self> {
        Self::with_tol(model, horizon, z_minus, model.numerics.fixed_point_tol)
    }

    pub fn with_tol(model: &'a LocalModel, horizon: f64, z_minus: &DVector<f64>, tol: f64) -> Result<Self> {
        if horizon < model.ladder.t0 {
            return Err(Error::HorizonMismatch(format!(
                "T = {horizon} below T0 = {}",
                model.ladder.t0
            )));
        }
        Self::unchecked(model, horizon, z_minus, tol)
    }

    /// Any positive horizon; used for sweeps that straddle `T0`.
    pub fn unchecked(model: &'a LocalModel, horizon: f64, z_minus: &DVector<f64>, tol: f64) -> Result<Self> {
        let z_minus = model.split.project(Subspace::Minus, z_minus);
        let orbit = UnstableOrbit::solve_with_length(model, &z_minus, horizon)?;
        Ok(Self {
            model,
            horizon,
            z_minus,
            orbit,
            tol,
        })
    }

    pub fn solve(&self, base: &DVector<f64>) -> Result<MixedSolution> {
        MixedSolution::solve_with_tol(self.model, self.horizon, &self.z_minus, base, &self.orbit, self.tol)
    }

    /// `phi_{-T}` of the unstable point over `z_minus`, i.e. the graph point
    /// over `z_plus = 0`.
    pub fn backward_point(&self) -> DVector<f64> {
        self.orbit.at(-self.horizon)
    }
}

impl GraphMap for FiniteGraph<'_> {
    fn kind(&self) -> GraphKind {
        GraphKind::GT
    }
    fn model(&self) -> &LocalModel {
        self.model
    }
    fn radius(&self) -> f64 {
        self.model.ladder.fiber_radius()
    }
    fn eval(&self, base: &DVector<f64>) -> Result<GraphEval> {
        let sol = self.solve(base)?;
        let endpoint = sol.endpoint();
        let distance = (&endpoint - &self.z_minus).norm();
        if distance > self.model.ladder.varkappa {
            return Err(Error::EndpointViolation {
                distance,
                bound: self.model.ladder.varkappa,
            });
        }
        let split = &self.model.split;
        let boundary_error = f64::max(
            (split.project(Subspace::Plus, &sol.point()) - &sol.z_plus).norm(),
            (split.project(Subspace::Minus, &endpoint) - &self.z_minus).norm(),
        );
        Ok(GraphEval {
            value: split.project(Subspace::Minus, &sol.point()),
            residual: sol.solution.total_residual(),
            error_bound: sol.solution.error_bound,
            boundary_error,
            iterations: sol.solution.iterations,
            endpoint: Some(endpoint),
        })
    }
    fn horizon(&self) -> Option<f64> {
        Some(self.horizon)
    }
    fn z_minus(&self) -> Option<&DVector<f64>> {
        Some(&self.z_minus)
    }
}

/// Sampled graph map.
#[derive(Clone, Debug)]
pub struct GraphSample {
    pub kind: GraphKind,
    pub base_grid: BaseGrid,
    /// Ambient base points in the domain subspace.
    pub base_points: Vec<DVector<f64>>,
    /// Ambient graph values in the complementary subspace.
    pub values: Vec<DVector<f64>>,
    pub horizon: Option<f64>,
    pub z_minus: Option<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub error_bounds: Vec<f64>,
    pub boundary_errors: Vec<f64>,
    pub iterations: Vec<usize>,
    pub endpoints: Vec<DVector<f64>>,
    pub split: SpectralSplit,
}

/// Evaluates `map` at every base point, in parallel.
pub fn sample_graph(map: &dyn GraphMap, grid: BaseGrid) -> Result<GraphSample> {
    let split = &map.model().split;
    let points = grid.points(split);
    let evals: Vec<GraphEval> = points.par_iter().map(|p| map.eval(p)).collect::<Result<_>>()?;
    Ok(GraphSample {
        kind: map.kind(),
        base_grid: grid,
        base_points: points,
        values: evals.iter().map(|e| e.value.clone()).collect(),
        horizon: map.horizon(),
        z_minus: map.z_minus().cloned(),
        residuals: evals.iter().map(|e| e.residual).collect(),
        error_bounds: evals.iter().map(|e| e.error_bound).collect(),
        boundary_errors: evals.iter().map(|e| e.boundary_error).collect(),
        iterations: evals.iter().map(|e| e.iterations).collect(),
        endpoints: evals.iter().filter_map(|e| e.endpoint.clone()).collect(),
        split: split.clone(),
    })
}

pub fn graph_f_inf(model: &LocalModel, grid: BaseGrid) -> Result<GraphSample> {
    sample_graph(&UnstableGraph { model }, grid)
}

pub fn graph_g_inf(model: &LocalModel, grid: BaseGrid) -> Result<GraphSample> {
    sample_graph(&StableGraph { model }, grid)
}

pub fn graph_g_t(model: &LocalModel, horizon: f64, z_minus: &DVector<f64>, grid: BaseGrid) -> Result<GraphSample> {
    sample_graph(&FiniteGraph::new(model, horizon, z_minus)?, grid)
}

impl GraphSample {
    pub fn len(&self) -> usize {
        self.base_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_points.is_empty()
    }

    pub fn domain(&self) -> Subspace {
        self.kind.domain()
    }

    /// `base + value`, the ambient point on the graph.
    pub fn graph_point(&self, i: usize) -> DVector<f64> {
        &self.base_points[i] + &self.values[i]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_value_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Multilinear interpolation of the graph value at an ambient point
    /// (projected onto the domain subspace).
    pub fn interpolate(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        let base = self.split.project(self.domain(), point);
        match &self.base_grid {
            BaseGrid::Tensor(g) => {
                let coords = self.split.coordinates(self.domain(), &base);
                let mut out = DVector::zeros(base.len());
                for (i, w) in g.stencil(&coords)? {
                    out.axpy(w, &self.values[i], 1.0);
                }
                Ok(out)
            }
            BaseGrid::Points(pts) => pts
                .iter()
                .position(|p| (p - &base).norm() <= 1e-14 * p.norm().max(1e-300))
                .map(|i| self.values[i].clone())
                .ok_or_else(|| Error::OutsideSampledDomain("scattered samples do not interpolate".into())),
        }
    }

    pub fn max_error_bound(&self) -> f64 {
        self.error_bounds.iter().copied().fold(0.0, f64::max)
    }

    /// Estimate of the multilinear interpolation error from second
    /// differences along each axis, plus the solver error bound.
    pub fn interpolation_tolerance(&self) -> f64 {
        let second = match &self.base_grid {
            BaseGrid::Tensor(g) if g.per_axis >= 3 => (0..g.dimension)
                .map(|d| {
                    (0..g.len())
                        .filter_map(|i| g.neighbours(i, d).map(|(lo, hi)| (i, lo, hi)))
                        .map(|(i, lo, hi)| (&self.values[lo] - 2.0 * &self.values[i] + &self.values[hi]).norm())
                        .fold(0.0, f64::max)
                        / 8.0
                })
                .sum(),
            _ => 0.0,
        };
        second + self.max_error_bound()
    }

    /// CSV rows: kind, T, z- coordinates, z+ coordinates, value coordinates
    /// in the complementary subspace, residual, iterations.
    pub fn csv(&self) -> String {
        let s = &self.split;
        let k = s.subspace_dimension(Subspace::Minus);
        let m = s.subspace_dimension(Subspace::Plus);
        let codim = s.subspace_dimension(self.domain().complement());
        let mut header = vec!["kind".to_string(), "T".to_string()];
        header.extend((1..=k).map(|i| format!("zm_{i}")));
        header.extend((1..=m).map(|i| format!("zp_{i}")));
        header.extend((1..=codim).map(|i| format!("value_{i}")));
        header.push("residual".into());
        header.push("iterations".into());
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let base = &self.base_points[i];
            let value = &self.values[i];
            let (zm, zp) = match self.kind {
                GraphKind::FInf => (base.clone(), value.clone()),
                GraphKind::GInf => (value.clone(), base.clone()),
                GraphKind::GT => (
                    self.z_minus.clone().expect("finite graphs record z_minus"),
                    base.clone(),
                ),
            };
            let mut row = vec![self.kind.label().to_string(), crate::cli::fmt_opt(self.horizon)];
            row.extend(s.coordinates(Subspace::Minus, &zm).iter().map(|v| crate::cli::fmt(*v)));
            row.extend(s.coordinates(Subspace::Plus, &zp).iter().map(|v| crate::cli::fmt(*v)));
            row.extend(
                s.coordinates(self.domain().complement(), value)
                    .iter()
                    .map(|v| crate::cli::fmt(*v)),
            );
            row.push(crate::cli::fmt(self.residuals[i]));
            row.push(self.iterations[i].to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Central-difference directional derivative with a Richardson error
/// estimate.
#[derive(Clone, Debug)]
pub struct DirectionalDerivative {
    /// Central difference at step `h / 2`.
    pub value: DVector<f64>,
    /// Central difference at step `h`.
    pub coarse: DVector<f64>,
    /// `(4 D_{h/2} - D_h) / 3`.
    pub extrapolated: DVector<f64>,
    /// Truncation estimate `|D_{h/2} - D_h| / 3` plus the solver noise
    /// amplified by the stencil.
    pub error: f64,
    pub step: f64,
}

pub fn graph_derivative(
    map: &dyn GraphMap,
    base: &DVector<f64>,
    direction: &DVector<f64>,
    step: f64,
) -> Result<DirectionalDerivative> {
    let split = &map.model().split;
    let domain = map.kind().domain();
    let base = split.project(domain, base);
    let v = split.project(domain, direction);
    let extent = base.norm() + step * v.norm();
    if extent > map.radius() * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge {
            extent,
            radius: map.radius(),
        });
    }
    let n = base.len();
    if v.norm() == 0.0 {
        let zero = DVector::zeros(n);
        return Ok(DirectionalDerivative {
            value: zero.clone(),
            coarse: zero.clone(),
            extrapolated: zero,
            error: 0.0,
            step,
        });
    }
    let central = |h: f64| -> Result<(DVector<f64>, f64)> {
        let plus = map.eval(&(&base + h * &v))?;
        let minus = map.eval(&(&base - h * &v))?;
        Ok((
            (plus.value - minus.value) / (2.0 * h),
            (plus.error_bound + minus.error_bound) / (2.0 * h),
        ))
    };
    let (coarse, noise_coarse) = central(step)?;
    let (fine, noise_fine) = central(0.5 * step)?;
    let truncation = (&fine - &coarse).norm() / 3.0;
    Ok(DirectionalDerivative {
        extrapolated: (4.0 * &fine - &coarse) / 3.0,
        error: truncation + noise_fine + noise_coarse / 3.0,
        value: fine,
        coarse,
        step,
    })
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
    fn quadratic_graphs_vanish() {
        let m = model(reference::quadratic());
        let r = m.ladder.manifold_radius;
        let f = graph_f_inf(
            &m,
            BaseGrid::Tensor(TensorGrid::inscribed(&m.split, Subspace::Minus, r, 5)),
        )
        .unwrap();
        let g = graph_g_inf(
            &m,
            BaseGrid::Tensor(TensorGrid::inscribed(&m.split, Subspace::Plus, r, 5)),
        )
        .unwrap();
        assert!(f.max_value_norm() < 1e-15 && g.max_value_norm() < 1e-15);
    }

    #[test]
    fn quadratic_finite_graph_is_flat() {
        let m = model(reference::quadratic());
        let zm = DVector::from_vec(vec![0.2 * m.ladder.manifold_radius, 0.0]);
        let t = m.ladder.t0;
        let grid = TensorGrid::inscribed(&m.split, Subspace::Plus, m.ladder.fiber_radius(), 5);
        let g = graph_g_t(&m, t, &zm, BaseGrid::Tensor(grid)).unwrap();
        let expected = zm[0] * (-t).exp();
        for v in &g.values {
            assert!((v[0] - expected).abs() < 1e-15 && v[1] == 0.0);
        }
    }

    #[test]
    fn stencil_weights_partition_unity() {
        let m = model(reference::index_two());
        let g = TensorGrid::inscribed(&m.split, Subspace::Plus, 0.01, 4);
        let st = g.stencil(&DVector::from_vec(vec![0.001, -0.002])).unwrap();
        assert!((st.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(g.stencil(&DVector::from_vec(vec![0.01, 0.0])).is_err());
    }

    #[test]
    fn derivative_of_unstable_graph_vanishes_at_origin() {
        let m = model(reference::curved());
        let map = UnstableGraph { model: &m };
        let e1 = m.split.embed(Subspace::Minus, &DVector::from_vec(vec![1.0]));
        let d = graph_derivative(&map, &DVector::zeros(2), &e1, 0.25 * m.ladder.manifold_radius).unwrap();
        assert!(d.extrapolated.norm() < 1e-8, "{}", d.extrapolated.norm());
        assert!(matches!(
            graph_derivative(&map, &DVector::zeros(2), &e1, 2.0 * m.ladder.manifold_radius),
            Err(Error::StepTooLarge { .. })
        ));
    }
}
