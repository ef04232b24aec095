use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::sampling::{in_ball, lattice, lattice_resolution, rng, unit_vector};
use super::{nonlinearity_jacobian, nonlinearity_unchecked, GradientProblem};
use crate::error::{Error, Result};
use crate::spectral::SpectralSplit;

const SAFETY: f64 = 1.5;
const LATTICE_BUDGET: usize = 12_000;

/// Sampled Lipschitz modulus `kappa(rho)` of the nonlinearity.
#[derive(Clone, Debug)]
pub struct SampledModulus {
    /// Ascending radii; the first entry is 0.
    pub radii: Vec<f64>,
    /// Safety-scaled, monotonised estimates at `radii`.
    pub values: Vec<f64>,
    /// Raw sampled suprema before scaling and monotonisation.
    pub raw: Vec<f64>,
    /// Lipschitz constant of `dh` on the trust ball.
    pub kappa_star: Option<f64>,
    pub safety: f64,
}

impl SampledModulus {
    /// Estimate at `rho`, read from the smallest grid radius `>= rho`.
    pub fn at(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match self.radii.iter().position(|&r| r >= rho * (1.0 - 1e-12)) {
            Some(i) => self.values[i],
            None => f64::INFINITY,
        }
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii.last().unwrap_or(&0.0)
    }
}

/// Geometric grid `rho0 * 2^-j`, `j = 0..=40`.
pub fn default_rho_grid(rho0: f64) -> Vec<f64> {
    (0..=40).map(|j| rho0 * 0.5f64.powi(j)).collect()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().amax()
}

/// Samples `sup |h(xi) - h(eta)| / |xi - eta|` on each ball `B_rho`, combining
/// random pairs with a dense maximisation of `|dh|`.
pub fn lipschitz_modulus(
    problem: &GradientProblem,
    split: &SpectralSplit,
    rho_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<SampledModulus> {
    let rho0 = problem.trust_radius;
    if let Some(&bad) = rho_grid.iter().find(|&&r| r > rho0 * (1.0 + 1e-12) || r < 0.0) {
        return Err(Error::OutOfTrustRegion {
            norm: bad,
            radius: rho0,
        });
    }
    let n = problem.dimension();
    let mut radii: Vec<f64> = rho_grid.iter().copied().filter(|&r| r > 0.0).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();

    let per_axis = lattice_resolution(n, LATTICE_BUDGET);
    let raw_positive: Vec<f64> = radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut g = rng(seed ^ (0x9e37_79b9 + i as u64));
            let mut best = 0.0f64;
            for k in 0..samples {
                let xi = in_ball(&mut g, n, r);
                let eta = if k % 2 == 0 {
                    in_ball(&mut g, n, r)
                } else {
                    let p = &xi + unit_vector(&mut g, n) * (1e-3 * r);
                    let pn = p.norm();
                    if pn > r {
                        p * (r / pn)
                    } else {
                        p
                    }
                };
                let d = (&xi - &eta).norm();
                if d > 0.0 {
                    let q = (nonlinearity_unchecked(problem, split, &xi)
                        - nonlinearity_unchecked(problem, split, &eta))
                    .norm()
                        / d;
                    best = best.max(q);
                }
                let on_sphere = unit_vector(&mut g, n) * r;
                best = best.max(spectral_norm(&nonlinearity_jacobian(problem, split, &on_sphere)));
            }
            for p in lattice(n, per_axis, r) {
                if p.norm() <= r {
                    best = best.max(spectral_norm(&nonlinearity_jacobian(problem, split, &p)));
                }
            }
            best
        })
        .collect();

    let mut values = Vec::with_capacity(radii.len() + 1);
    let mut raw = Vec::with_capacity(radii.len() + 1);
    values.push(0.0);
    raw.push(0.0);
    let mut running = 0.0f64;
    for r in &raw_positive {
        running = running.max(SAFETY * r);
        values.push(running);
        raw.push(*r);
    }
    radii.insert(0, 0.0);

    let kappa_star = if problem.c21 {
        Some(SAFETY * hessian_lipschitz(problem, split, rho0, samples, seed))
    } else {
        None
    };
    Ok(SampledModulus {
        radii,
        values,
        raw,
        kappa_star,
        safety: SAFETY,
    })
}

/// Sampled Lipschitz constant of `dh` on `B_r`.
fn hessian_lipschitz(problem: &GradientProblem, split: &SpectralSplit, r: f64, samples: usize, seed: u64) -> f64 {
    let n = problem.dimension();
    let mut g = rng(seed ^ 0x5eed_cafe);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let xi = in_ball(&mut g, n, r);
        let eta = in_ball(&mut g, n, r);
        let d = (&xi - &eta).norm();
        if d > 0.0 {
            let q = spectral_norm(
                &(nonlinearity_jacobian(problem, split, &xi) - nonlinearity_jacobian(problem, split, &eta)),
            ) / d;
            best = best.max(q);
        }
    }
    let per_axis = lattice_resolution(n, LATTICE_BUDGET / 4);
    let dirs: Vec<DVector<f64>> = (0..n)
        .map(|k| DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 }))
        .chain((0..4).map(|_| unit_vector(&mut g, n)))
        .collect();
    let lattice_best = lattice(n, per_axis, r)
        .par_iter()
        .filter(|p| p.norm() <= r)
        .map(|p| {
            dirs.iter()
                .map(|v| spectral_norm(&problem.third_contract(p, v)))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    best.max(lattice_best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn quadratic_modulus_vanishes() {
        let p = reference::quadratic();
        let s = p.split().unwrap();
        let k = lipschitz_modulus(&p, &s, &default_rho_grid(1.0), 200, 1).unwrap();
        assert!(k.values.iter().all(|&v| v == 0.0));
        assert_eq!(k.kappa_star, Some(0.0));
    }

    #[test]
    fn quartic_modulus_at_one_tenth() {
        let p = reference::quartic();
        let s = p.split().unwrap();
        let k = lipschitz_modulus(&p, &s, &[0.1, 0.05, 0.025], 2000, 1).unwrap();
        // independent dense maximisation of |dh| over a fine polar grid of B_0.1
        let r = 0.1;
        let mut oracle = 0.0f64;
        for i in 0..=200 {
            for j in 0..360 {
                let rad = r * i as f64 / 200.0;
                let a = (j as f64).to_radians();
                let (x1, x2) = (rad * a.cos(), rad * a.sin());
                let dh = DMatrix::from_row_slice(2, 2, &[-x2 * x2 / 2.0, -x1 * x2, -x1 * x2, -x1 * x1 / 2.0]);
                oracle = oracle.max(dh.symmetric_eigenvalues().amax());
            }
        }
        let est = k.at(0.1);
        assert!(est >= oracle, "estimate {est} below the supremum {oracle}");
        assert!((est / (SAFETY * oracle) - 1.0).abs() < 0.02);
        assert!(est > 0.015 / 2.0 && est < 0.015 * 2.0);
        assert_eq!(k.at(0.0), 0.0);
        assert!(k.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn radii_beyond_trust_ball_are_rejected() {
        let p = reference::quartic();
        let s = p.split().unwrap();
        assert!(lipschitz_modulus(&p, &s, &[2.0], 10, 1).is_err());
    }
}
