//! Deterministic sampling helpers shared by the estimators and audits.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform sample from the closed ball of radius `r` in `R^n`.
pub fn in_ball(rng: &mut impl Rng, n: usize, r: f64) -> DVector<f64> {
    let u: f64 = rng.random();
    unit_vector(rng, n) * (r * u.powf(1.0 / n as f64))
}

/// Points of the cubic lattice with `per_axis` nodes on `[-r, r]^n`.
pub fn lattice(n: usize, per_axis: usize, r: f64) -> Vec<DVector<f64>> {
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(n as u32);
    let coord = |i: usize| -r + 2.0 * r * i as f64 / (per_axis - 1) as f64;
    (0..total)
        .map(|mut idx| {
            let mut v = DVector::zeros(n);
            for k in 0..n {
                v[k] = coord(idx % per_axis);
                idx /= per_axis;
            }
            v
        })
        .collect()
}

/// Roughly `budget` lattice points per cube, with an odd node count so the
/// centre is included.
pub fn lattice_resolution(n: usize, budget: usize) -> usize {
    let m = (budget as f64).powf(1.0 / n as f64).floor() as usize;
    let m = m.max(5);
    if m.is_multiple_of(2) {
        m + 1
    } else {
        m
    }
}

/// Evenly spread unit directions in `R^m`: `{-1, 1}` for `m = 1`, equally
/// spaced angles for `m = 2`, seeded random directions otherwise.
pub fn sphere_directions(m: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match m {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count.max(1))
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count.max(1) as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut r = rng(seed);
            (0..count.max(1)).map(|_| unit_vector(&mut r, m)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_covers_cube_and_centre() {
        let pts = lattice(2, 5, 1.0);
        assert_eq!(pts.len(), 25);
        assert!(pts.iter().any(|p| p.norm() == 0.0));
        assert!(pts.iter().all(|p| p.amax() <= 1.0));
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut r = rng(3);
        for _ in 0..200 {
            assert!(in_ball(&mut r, 3, 0.5).norm() <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn directions_are_unit() {
        for m in 1..4 {
            for d in sphere_directions(m, 6, 1) {
                assert!((d.norm() - 1.0).abs() < 1e-14);
            }
        }
    }
}
