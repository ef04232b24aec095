//! Spectral splitting of the Hessian at a critical point.
//!
//! Every exponential in the crate is evaluated from the eigen-decomposition
//! held here, `e^{-tA} = V diag(e^{-t lambda_i}) V^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Selects the unstable (negative) or stable (positive) spectral subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subspace {
    Minus,
    Plus,
}

impl Subspace {
    pub fn complement(self) -> Subspace {
        match self {
            Subspace::Minus => Subspace::Plus,
            Subspace::Plus => Subspace::Minus,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralSplit {
    pub hessian: DMatrix<f64>,
    /// Sorted ascending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub morse_index: usize,
    pub gap: f64,
    pub proj_minus: DMatrix<f64>,
    pub proj_plus: DMatrix<f64>,
}

/// Splits a symmetric matrix with absolute tolerance `tol` for both the
/// symmetry check and the distance of eigenvalues from zero.
pub fn split(hessian: &DMatrix<f64>, tol: f64) -> Result<SpectralSplit> {
    let n = hessian.nrows();
    if n == 0 || hessian.ncols() != n {
        return Err(Error::Config(format!(
            "hessian must be a non-empty square matrix, got {}x{}",
            hessian.nrows(),
            hessian.ncols()
        )));
    }
    let asymmetry = (hessian - hessian.transpose()).amax();
    if asymmetry > tol {
        return Err(Error::NotSymmetric { asymmetry, tol });
    }
    let sym = (hessian + hessian.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        eigenvectors.set_column(col, &eig.eigenvectors.column(i));
    }

    if let Some(&bad) = eigenvalues.iter().find(|l| l.abs() < tol) {
        return Err(Error::DegenerateCriticalPoint { eigenvalue: bad, tol });
    }
    let morse_index = eigenvalues.iter().filter(|&&l| l < 0.0).count();
    let gap = eigenvalues.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));

    let vm = eigenvectors.columns(0, morse_index);
    let vp = eigenvectors.columns(morse_index, n - morse_index);
    let proj_minus = vm * vm.transpose();
    let proj_plus = vp * vp.transpose();

    Ok(SpectralSplit {
        hessian: sym,
        eigenvalues,
        eigenvectors,
        morse_index,
        gap,
        proj_minus,
        proj_plus,
    })
}

/// Splits with the default relative tolerance `1e-9 * max |lambda_i|`.
pub fn split_default(hessian: &DMatrix<f64>) -> Result<SpectralSplit> {
    let scale = hessian.amax().max(f64::MIN_POSITIVE);
    let sym = (hessian + hessian.transpose()) * 0.5;
    let spectral_scale = if sym.nrows() == sym.ncols() && sym.nrows() > 0 {
        sym.symmetric_eigenvalues().amax()
    } else {
        scale
    };
    split(hessian, 1e-9 * spectral_scale.max(f64::MIN_POSITIVE))
}

impl SpectralSplit {
    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn stable_dimension(&self) -> usize {
        self.dimension() - self.morse_index
    }

    /// Most negative eigenvalue.
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Largest eigenvalue.
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.dimension() - 1]
    }

    /// Largest eigenvalue modulus; sets the stiffness of every kernel.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.amax()
    }

    /// Returns an error unless the splitting is genuinely mixed.
    pub fn require_saddle(&self) -> Result<()> {
        if self.morse_index == 0 || self.morse_index == self.dimension() {
            return Err(Error::IndexOutOfRange {
                index: self.morse_index,
                dimension: self.dimension(),
            });
        }
        Ok(())
    }

    pub fn subspace_dimension(&self, sub: Subspace) -> usize {
        match sub {
            Subspace::Minus => self.morse_index,
            Subspace::Plus => self.stable_dimension(),
        }
    }

    fn column_range(&self, sub: Subspace) -> std::ops::Range<usize> {
        match sub {
            Subspace::Minus => 0..self.morse_index,
            Subspace::Plus => self.morse_index..self.dimension(),
        }
    }

    /// Orthonormal basis of the subspace as an `n x dim` matrix.
    pub fn basis(&self, sub: Subspace) -> DMatrix<f64> {
        let r = self.column_range(sub);
        self.eigenvectors.columns(r.start, r.len()).into_owned()
    }

    pub fn projection(&self, sub: Subspace) -> &DMatrix<f64> {
        match sub {
            Subspace::Minus => &self.proj_minus,
            Subspace::Plus => &self.proj_plus,
        }
    }

    pub fn project(&self, sub: Subspace, v: &DVector<f64>) -> DVector<f64> {
        self.projection(sub) * v
    }

    /// Coordinates of `v` with respect to the subspace basis.
    pub fn coordinates(&self, sub: Subspace, v: &DVector<f64>) -> DVector<f64> {
        let r = self.column_range(sub);
        self.eigenvectors.columns(r.start, r.len()).tr_mul(v)
    }

    /// Inverse of [`coordinates`](Self::coordinates).
    pub fn embed(&self, sub: Subspace, coords: &DVector<f64>) -> DVector<f64> {
        let r = self.column_range(sub);
        self.eigenvectors.columns(r.start, r.len()) * coords
    }

    /// Coordinates in the full eigenbasis.
    pub fn to_eigen(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(v)
    }

    pub fn from_eigen(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * y
    }

    pub fn is_negative(&self, i: usize) -> bool {
        i < self.morse_index
    }

    /// `e^{-tA}` for any real `t`.
    pub fn flow_exponential(&self, t: f64) -> DMatrix<f64> {
        self.spectral_function(0..self.dimension(), |l| (-t * l).exp())
    }

    /// `e^{-tA^{+-}}` on its subspace, extended by zero on the complement.
    pub fn restricted_exponential(&self, sub: Subspace, t: f64) -> DMatrix<f64> {
        self.spectral_function(self.column_range(sub), |l| (-t * l).exp())
    }

    fn spectral_function(&self, range: std::ops::Range<usize>, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = self.eigenvectors.columns(range.start, range.len());
        let mut scaled = v.into_owned();
        for (j, i) in range.clone().enumerate() {
            let s = g(self.eigenvalues[i]);
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * v.transpose()
    }
}
