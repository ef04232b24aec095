use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    (nodes, weights)
}

/// Chebyshev extreme points on `[-1, 1]` with barycentric weights and the
/// spectral differentiation matrix.
#[derive(Debug)]
pub struct ChebyshevPanel {
    pub nodes: Vec<f64>,
    bary: Vec<f64>,
    pub differentiation: DMatrix<f64>,
}

impl ChebyshevPanel {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1);
        let p = degree;
        let nodes: Vec<f64> = (0..=p)
            .map(|i| -(std::f64::consts::PI * i as f64 / p as f64).cos())
            .collect();
        let bary: Vec<f64> = (0..=p)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i == 0 || i == p {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        let mut d = DMatrix::zeros(p + 1, p + 1);
        for i in 0..=p {
            let mut diag = 0.0;
            for j in 0..=p {
                if i != j {
                    let v = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                    d[(i, j)] = v;
                    diag -= v;
                }
            }
            d[(i, i)] = diag;
        }
        Self {
            nodes,
            bary,
            differentiation: d,
        }
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Values of all Lagrange basis polynomials at `x`.
    pub fn basis_at(&self, x: f64) -> Vec<f64> {
        if let Some(k) = self.nodes.iter().position(|&xk| xk == x) {
            let mut e = vec![0.0; self.nodes.len()];
            e[k] = 1.0;
            return e;
        }
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.bary)
            .map(|(&xk, &wk)| wk / (x - xk))
            .collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / denom).collect()
    }
}

/// Uniform composite grid of Chebyshev panels on `[start, end]`; adjacent
/// panels share their endpoint node.
#[derive(Clone, Debug)]
pub struct PanelGrid {
    pub start: f64,
    pub end: f64,
    pub panels: usize,
    pub panel: Arc<ChebyshevPanel>,
    times: Vec<f64>,
}

impl PanelGrid {
    pub fn new(start: f64, end: f64, panels: usize, degree: usize) -> Self {
        assert!(end > start && panels >= 1);
        let panel = Arc::new(ChebyshevPanel::new(degree));
        let width = (end - start) / panels as f64;
        let mut times = Vec::with_capacity(panels * degree + 1);
        for j in 0..panels {
            let a = start + width * j as f64;
            for i in 0..degree {
                times.push(a + 0.5 * width * (panel.nodes[i] + 1.0));
            }
        }
        times.push(end);
        times[0] = start;
        Self {
            start,
            end,
            panels,
            panel,
            times,
        }
    }

    pub fn degree(&self) -> usize {
        self.panel.degree()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> f64 {
        (self.end - self.start) / self.panels as f64
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn same_layout(&self, other: &PanelGrid) -> bool {
        self.start == other.start
            && self.end == other.end
            && self.panels == other.panels
            && self.degree() == other.degree()
    }

    /// Panel index and local coordinate in `[-1, 1]` of time `t` (clamped).
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let w = self.width();
        let s = ((t - self.start) / w).clamp(0.0, self.panels as f64);
        let j = (s.floor() as usize).min(self.panels - 1);
        let x = (2.0 * (s - j as f64) - 1.0).clamp(-1.0, 1.0);
        (j, x)
    }

    /// Interpolates column-stored nodal values at time `t`.
    pub fn interpolate(&self, values: &DMatrix<f64>, t: f64) -> DVector<f64> {
        let (j, x) = self.locate(t);
        let p = self.degree();
        let basis = self.panel.basis_at(x);
        let mut out = DVector::zeros(values.nrows());
        for (k, b) in basis.iter().enumerate() {
            if *b != 0.0 {
                out.axpy(*b, &values.column(j * p + k), 1.0);
            }
        }
        out
    }

    /// Spectral time derivative at every node; shared panel endpoints take the
    /// average of both one-sided panel derivatives.
    pub fn differentiate(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.degree();
        let scale = 2.0 / self.width();
        let mut out = DMatrix::zeros(values.nrows(), self.len());
        let mut hits = vec![0.0; self.len()];
        for j in 0..self.panels {
            let block = values.columns(j * p, p + 1);
            let d = block * self.panel.differentiation.transpose() * scale;
            for i in 0..=p {
                let mut col = out.column_mut(j * p + i);
                col += d.column(i);
                hits[j * p + i] += 1.0;
            }
        }
        for (c, h) in hits.iter().enumerate() {
            out.column_mut(c).scale_mut(1.0 / h);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((integral - 2.0 / 15.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(32);
        let e: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((e - (1f64.exp() - (-1f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn interpolation_and_derivative_are_spectrally_accurate() {
        let g = PanelGrid::new(0.0, 5.0, 5, 12);
        let vals = DMatrix::from_fn(1, g.len(), |_, j| {
            (-0.7 * g.times()[j]).exp() * (3.0 * g.times()[j]).sin()
        });
        for &t in &[0.0f64, 0.123, 2.5, 3.99, 5.0] {
            let exact = (-0.7 * t).exp() * (3.0 * t).sin();
            assert!((g.interpolate(&vals, t)[0] - exact).abs() < 1e-9);
        }
        let d = g.differentiate(&vals);
        for (j, &t) in g.times().iter().enumerate() {
            let exact = (-0.7 * t).exp() * (3.0 * (3.0 * t).cos() - 0.7 * (3.0 * t).sin());
            assert!((d[(0, j)] - exact).abs() < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn grid_contains_endpoints() {
        let g = PanelGrid::new(-80.0, 0.0, 160, 12);
        assert_eq!(g.times()[0], -80.0);
        assert_eq!(*g.times().last().unwrap(), 0.0);
        assert_eq!(g.len(), 160 * 12 + 1);
        assert!(g.times().windows(2).all(|w| w[0] < w[1]));
    }
}
