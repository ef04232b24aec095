//! Variation-of-constants solver for `y' = -A y + g` with the dichotomy
//! boundary conditions: stable components are fixed at the left end and
//! integrated forward, unstable components are fixed at the right end and
//! integrated backward.

use nalgebra::DMatrix;

use super::grid::{gauss_legendre, PanelGrid};

const QUADRATURE_POINTS: usize = 32;

/// Per-eigenvalue panel weights of the exponential convolution.
#[derive(Clone, Debug)]
struct PanelKernel {
    forward: bool,
    /// `e^{-a s_i}` (forward) or `e^{-b r_i}` (backward) per local node.
    decay: Vec<f64>,
    /// `weights[(i, k)]`: convolution of the exponential with basis `k`,
    /// from the panel start to node `i` (forward) or from node `i` to the
    /// panel end (backward).
    weights: DMatrix<f64>,
}

impl PanelKernel {
    fn new(grid: &PanelGrid, eigenvalue: f64) -> Self {
        let panel = &grid.panel;
        let p = grid.degree();
        let w = grid.width();
        let (qx, qw) = gauss_legendre(QUADRATURE_POINTS);
        let forward = eigenvalue > 0.0;
        let rate = eigenvalue.abs();
        let mut decay = vec![0.0; p + 1];
        let mut weights = DMatrix::zeros(p + 1, p + 1);
        for i in 0..=p {
            let xi = panel.nodes[i];
            // Length of the integration range inside the panel.
            let len = if forward {
                0.5 * w * (xi + 1.0)
            } else {
                0.5 * w * (1.0 - xi)
            };
            decay[i] = (-rate * len).exp();
            if len == 0.0 {
                continue;
            }
            for (u, wq) in qx.iter().zip(&qw) {
                let offset = 0.5 * len * (u + 1.0);
                let (x, kernel) = if forward {
                    (-1.0 + 2.0 * offset / w, (-rate * (len - offset)).exp())
                } else {
                    (xi + 2.0 * offset / w, (-rate * offset).exp())
                };
                let basis = panel.basis_at(x.clamp(-1.0, 1.0));
                for (k, b) in basis.iter().enumerate() {
                    weights[(i, k)] += 0.5 * len * wq * kernel * b;
                }
            }
        }
        Self {
            forward,
            decay,
            weights,
        }
    }
}

/// Dichotomy solver on a fixed grid, working in eigen-coordinates.
#[derive(Clone, Debug)]
pub struct Dichotomy {
    pub grid: PanelGrid,
    eigenvalues: Vec<f64>,
    kernels: Vec<PanelKernel>,
}

impl Dichotomy {
    pub fn new(grid: PanelGrid, eigenvalues: &[f64]) -> Self {
        let mut kernels: Vec<PanelKernel> = Vec::with_capacity(eigenvalues.len());
        for (i, &l) in eigenvalues.iter().enumerate() {
            match eigenvalues[..i].iter().position(|&m| m == l) {
                Some(j) => kernels.push(kernels[j].clone()),
                None => kernels.push(PanelKernel::new(&grid, l)),
            }
        }
        Self {
            grid,
            eigenvalues: eigenvalues.to_vec(),
            kernels,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Solves component-wise: row `i` of the result satisfies
    /// `y_i' = -lambda_i y_i + g_i` with `y_i(start) = left[i]` when
    /// `lambda_i > 0` and `y_i(end) = right[i]` when `lambda_i < 0`.
    /// The forcing `g` is given at the nodes and integrated exactly against
    /// its panel interpolant.
    pub fn solve(&self, forcing: &DMatrix<f64>, left: &[f64], right: &[f64]) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let nodes = self.grid.len();
        let p = self.grid.degree();
        let panels = self.grid.panels;
        assert_eq!(forcing.shape(), (n, nodes));
        let mut out = DMatrix::zeros(n, nodes);
        for (c, kernel) in self.kernels.iter().enumerate() {
            let g = forcing.row(c);
            if kernel.forward {
                out[(c, 0)] = left[c];
                for j in 0..panels {
                    let base = out[(c, j * p)];
                    for i in 1..=p {
                        let mut v = kernel.decay[i] * base;
                        for k in 0..=p {
                            v += kernel.weights[(i, k)] * g[j * p + k];
                        }
                        out[(c, j * p + i)] = v;
                    }
                }
            } else {
                out[(c, nodes - 1)] = right[c];
                for j in (0..panels).rev() {
                    let base = out[(c, j * p + p)];
                    for i in 0..p {
                        let mut v = kernel.decay[i] * base;
                        for k in 0..=p {
                            v -= kernel.weights[(i, k)] * g[j * p + k];
                        }
                        out[(c, j * p + i)] = v;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_component_matches_closed_form() {
        // y' = -2 y + cos t, y(0) = 1.
        let grid = PanelGrid::new(0.0, 6.0, 12, 12);
        let d = Dichotomy::new(grid.clone(), &[2.0]);
        let g = DMatrix::from_fn(1, grid.len(), |_, j| grid.times()[j].cos());
        let y = d.solve(&g, &[1.0], &[0.0]);
        for (j, &t) in grid.times().iter().enumerate() {
            let exact = (-2.0 * t).exp() * (1.0 - 0.4) + 0.4 * t.cos() + 0.2 * t.sin();
            assert!((y[(0, j)] - exact).abs() < 1e-13, "t = {t}");
        }
    }

    #[test]
    fn backward_component_matches_closed_form() {
        // y' = y + 1 on [-5, 0] with y(0) = 0.5: y = 1.5 e^{t} - 1.
        let grid = PanelGrid::new(-5.0, 0.0, 10, 12);
        let d = Dichotomy::new(grid.clone(), &[-1.0]);
        let g = DMatrix::from_element(1, grid.len(), 1.0);
        let y = d.solve(&g, &[0.0], &[0.5]);
        for (j, &t) in grid.times().iter().enumerate() {
            assert!((y[(0, j)] - (1.5 * t.exp() - 1.0)).abs() < 1e-14, "t = {t}");
        }
    }

    #[test]
    fn boundary_values_are_exact() {
        let grid = PanelGrid::new(0.0, 3.0, 5, 8);
        let d = Dichotomy::new(grid.clone(), &[-1.5, 0.7, 0.7]);
        let g = DMatrix::from_fn(3, grid.len(), |i, j| (i as f64 + 1.0) * grid.times()[j].sin());
        let y = d.solve(&g, &[9.0, 0.25, -0.5], &[0.125, 9.0, 9.0]);
        assert_eq!(y[(0, grid.len() - 1)], 0.125);
        assert_eq!(y[(1, 0)], 0.25);
        assert_eq!(y[(2, 0)], -0.5);
    }
}
