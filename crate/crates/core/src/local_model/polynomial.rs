use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A real polynomial in `n` variables stored as a coefficient table.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dimension: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    /// Builds a polynomial from `(multi-index, coefficient)` pairs, merging
    /// repeated multi-indices and dropping zero coefficients.
    pub fn new(dimension: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        let mut merged: Vec<(Vec<u32>, f64)> = Vec::new();
        for (exps, c) in terms {
            if exps.len() != dimension {
                return Err(Error::Config(format!(
                    "multi-index {:?} has length {}, expected {}",
                    exps,
                    exps.len(),
                    dimension
                )));
            }
            if !c.is_finite() {
                return Err(Error::Config(format!("non-finite coefficient for {:?}", exps)));
            }
            match merged.iter_mut().find(|(e, _)| *e == exps) {
                Some((_, acc)) => *acc += c,
                None => merged.push((exps, c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            dimension,
            terms: merged,
        })
    }

    pub fn zero(dimension: usize) -> Self {
        Self {
            dimension,
            terms: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(exps, c)| {
                exps.iter()
                    .zip(x.iter())
                    .fold(*c, |acc, (&e, &xi)| if e == 0 { acc } else { acc * xi.powi(e as i32) })
            })
            .sum()
    }

    /// Partial derivative with respect to variable `i`.
    pub fn differentiate(&self, i: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e[i] > 0)
            .map(|(e, c)| {
                let mut d = e.clone();
                d[i] -= 1;
                (d, c * e[i] as f64)
            })
            .collect();
        Polynomial::new(self.dimension, terms).expect("derivative keeps dimension")
    }
}

/// A polynomial together with its symbolic first, second and third
/// derivatives.
#[derive(Clone, Debug)]
pub struct DifferentiatedPolynomial {
    pub value: Polynomial,
    gradient: Vec<Polynomial>,
    hessian: Vec<Vec<Polynomial>>,
    third: Vec<Vec<Vec<Polynomial>>>,
}

impl DifferentiatedPolynomial {
    pub fn new(value: Polynomial) -> Self {
        let n = value.dimension();
        let gradient: Vec<Polynomial> = (0..n).map(|i| value.differentiate(i)).collect();
        let hessian: Vec<Vec<Polynomial>> = gradient
            .iter()
            .map(|g| (0..n).map(|j| g.differentiate(j)).collect())
            .collect();
        let third = hessian
            .iter()
            .map(|row| {
                row.iter()
                    .map(|h| (0..n).map(|k| h.differentiate(k)).collect())
                    .collect()
            })
            .collect();
        Self {
            value,
            gradient,
            hessian,
            third,
        }
    }

    pub fn dimension(&self) -> usize {
        self.value.dimension()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.value.eval(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dimension(), self.gradient.iter().map(|g| g.eval(x)))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.hessian[i][j].eval(x);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Third derivative contracted with `v` in its last slot.
    pub fn third_contract(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dimension();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..n).map(|k| self.third[i][j][k].eval(x) * v[k]).sum();
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic() -> Polynomial {
        Polynomial::new(2, vec![(vec![2, 0], -0.5), (vec![0, 2], 1.0), (vec![2, 2], 0.25)]).unwrap()
    }

    #[test]
    fn merges_duplicates_and_drops_zeros() {
        let p = Polynomial::new(2, vec![(vec![1, 0], 1.0), (vec![1, 0], -1.0), (vec![0, 1], 2.0)]).unwrap();
        assert_eq!(p.terms().len(), 1);
        assert!(Polynomial::new(2, vec![(vec![1], 1.0)]).is_err());
    }

    #[test]
    fn symbolic_gradient_of_quartic() {
        let d = DifferentiatedPolynomial::new(quartic());
        let x = DVector::from_vec(vec![0.1, 0.1]);
        let g = d.gradient(&x);
        // (-x1 + x1 x2^2 / 2, 2 x2 + x1^2 x2 / 2)
        assert!((g[0] - (-0.1 + 0.1 * 0.01 / 2.0)).abs() < 1e-16);
        assert!((g[1] - (0.2 + 0.01 * 0.1 / 2.0)).abs() < 1e-16);
        assert_eq!(d.value.degree(), 4);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let p = Polynomial::new(
            3,
            vec![
                (vec![2, 0, 0], -1.0),
                (vec![0, 2, 0], 0.5),
                (vec![1, 1, 1], 0.5),
                (vec![3, 0, 1], -0.2),
            ],
        )
        .unwrap();
        let d = DifferentiatedPolynomial::new(p);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.4]);
        let v = DVector::from_vec(vec![0.2, 0.5, -0.7]);
        let h = 1e-5;
        for i in 0..3 {
            let mut e = DVector::zeros(3);
            e[i] = h;
            let fd = (d.eval(&(&x + &e)) - d.eval(&(&x - &e))) / (2.0 * h);
            assert!((fd - d.gradient(&x)[i]).abs() < 1e-9);
            let fdg = (d.gradient(&(&x + &e)) - d.gradient(&(&x - &e))) / (2.0 * h);
            let hess = d.hessian(&x);
            assert!((fdg - hess.column(i)).amax() < 1e-9);
        }
        let fdh = (d.hessian(&(&x + &v * h)) - d.hessian(&(&x - &v * h))) / (2.0 * h);
        assert!((fdh - d.third_contract(&x, &v)).amax() < 1e-8);
    }
}
