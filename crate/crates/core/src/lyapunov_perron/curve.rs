use nalgebra::{DMatrix, DVector};

use super::grid::PanelGrid;
use crate::error::{Error, Result};
use crate::local_model::LocalModel;

/// Time interval a curve lives on. Infinite horizons are truncated at the
/// stored length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// `[0, T]`.
    Finite(f64),
    /// `[-L, 0]`, standing in for `(-inf, 0]`.
    Backward(f64),
    /// `[0, L]`, standing in for `[0, inf)`.
    Forward(f64),
}

impl Horizon {
    pub fn interval(self) -> (f64, f64) {
        match self {
            Horizon::Finite(t) | Horizon::Forward(t) => (0.0, t),
            Horizon::Backward(t) => (-t, 0.0),
        }
    }

    pub fn length(self) -> f64 {
        match self {
            Horizon::Finite(t) | Horizon::Backward(t) | Horizon::Forward(t) => t,
        }
    }

    pub fn grid(self, panels: usize, degree: usize) -> PanelGrid {
        let (a, b) = self.interval();
        PanelGrid::new(a, b, panels, degree)
    }
}

/// A curve sampled at the nodes of a panel grid; nodal values are stored as
/// the columns of an `n x N` matrix.
#[derive(Clone, Debug)]
pub struct Curve {
    pub horizon: Horizon,
    pub grid: PanelGrid,
    pub values: DMatrix<f64>,
    /// Rate `lambda` of the exponential weight.
    pub rate: f64,
}

impl Curve {
    pub fn new(horizon: Horizon, grid: PanelGrid, values: DMatrix<f64>, rate: f64) -> Self {
        assert_eq!(values.ncols(), grid.len());
        Self {
            horizon,
            grid,
            values,
            rate,
        }
    }

    pub fn zeros(horizon: Horizon, grid: PanelGrid, dimension: usize, rate: f64) -> Self {
        let n = grid.len();
        Self::new(horizon, grid, DMatrix::zeros(dimension, n), rate)
    }

    pub fn from_fn(horizon: Horizon, grid: PanelGrid, rate: f64, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let cols: Vec<DVector<f64>> = grid.times().iter().map(|&t| f(t)).collect();
        let values = DMatrix::from_columns(&cols);
        Self::new(horizon, grid, values, rate)
    }

    pub fn dimension(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn node(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    pub fn start(&self) -> DVector<f64> {
        self.node(0)
    }

    pub fn end(&self) -> DVector<f64> {
        self.node(self.len() - 1)
    }

    /// Value at an arbitrary time by panel interpolation.
    pub fn at(&self, t: f64) -> DVector<f64> {
        self.grid.interpolate(&self.values, t)
    }

    /// `e^{lambda |t|}`; positive on forward intervals, negative on backward ones.
    pub fn weight(&self, t: f64) -> f64 {
        (self.rate * t.abs()).exp()
    }

    fn weighted_max(&self, values: &DMatrix<f64>) -> f64 {
        self.times()
            .iter()
            .enumerate()
            .map(|(j, &t)| self.weight(t) * values.column(j).norm())
            .fold(0.0, f64::max)
    }

    /// Exponentially weighted sup norm over the nodes.
    pub fn exp_norm(&self) -> f64 {
        self.weighted_max(&self.values)
    }

    pub fn check_layout(&self, other: &Curve) -> Result<()> {
        if self.horizon != other.horizon || !self.grid.same_layout(&other.grid) {
            return Err(Error::HorizonMismatch(format!(
                "{:?} with {} nodes vs {:?} with {} nodes",
                self.horizon,
                self.len(),
                other.horizon,
                other.len()
            )));
        }
        Ok(())
    }

    pub fn exp_distance(&self, other: &Curve) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.weighted_max(&(&self.values - &other.values)))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &Curve) -> Result<f64> {
        self.check_layout(other)?;
        Ok((&self.values - &other.values)
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max))
    }

    pub fn add(&self, other: &Curve) -> Result<Curve> {
        self.check_layout(other)?;
        Ok(Curve {
            values: &self.values + &other.values,
            ..self.clone()
        })
    }

    /// Largest residual of `xi' + A xi - h(xi)` over the nodes, from the
    /// spectral time derivative.
    pub fn ode_residual(&self, model: &LocalModel) -> f64 {
        let deriv = self.grid.differentiate(&self.values);
        (0..self.len())
            .map(|j| {
                let x = self.node(j);
                let r = deriv.column(j) + &model.split.hessian * &x - model.nonlinearity(&x);
                r.norm()
            })
            .fold(0.0, f64::max)
    }

    /// Rows `t, x_1..x_n` for CSV export.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.times()
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                std::iter::once(t)
                    .chain(self.values.column(j).iter().copied())
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_norm_uses_absolute_time() {
        let h = Horizon::Backward(4.0);
        let c = Curve::from_fn(h, h.grid(4, 6), 0.5, |t| DVector::from_vec(vec![(t).exp()]));
        // e^{-0.5 t} e^{t} is maximal at t = 0.
        assert!((c.exp_norm() - 1.0).abs() < 1e-15);
        let h = Horizon::Finite(4.0);
        let c = Curve::from_fn(h, h.grid(4, 6), 0.5, |t| DVector::from_vec(vec![(-0.25 * t).exp()]));
        assert!((c.exp_norm() - 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let a = Curve::zeros(Horizon::Finite(2.0), Horizon::Finite(2.0).grid(2, 4), 1, 1.0);
        let b = Curve::zeros(Horizon::Finite(3.0), Horizon::Finite(3.0).grid(2, 4), 1, 1.0);
        assert!(matches!(a.exp_distance(&b), Err(Error::HorizonMismatch(_))));
    }
}
