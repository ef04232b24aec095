use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::local_model::sampling::sphere_directions;
use crate::local_model::LocalModel;
use crate::lyapunov_perron::{StableOrbit, UnstableOrbit};
use crate::spectral::Subspace;

/// A sample of a level disk: the ray direction and radius in the base
/// subspace and the corresponding manifold point.
#[derive(Clone, Debug)]
pub struct DiskPoint {
    pub direction: DVector<f64>,
    pub radius: f64,
    /// `radius * direction`.
    pub base: DVector<f64>,
    /// Ambient point on the manifold over `base`.
    pub point: DVector<f64>,
}

/// Samples of `W^u_eps = W^u ∩ {f >= c - eps}` (base subspace `E-`) or of
/// `W^s_eps = W^s ∩ {f <= c + eps}` (base subspace `E+`).
#[derive(Clone, Debug)]
pub struct LevelDisk {
    pub subspace: Subspace,
    pub level_offset: f64,
    /// Points on the bounding sphere `f = c -+ eps`.
    pub boundary: Vec<DiskPoint>,
    /// Points at fractions of the boundary radius along the same rays,
    /// the centre included once.
    pub interior: Vec<DiskPoint>,
    /// Dimension of the disk.
    pub index: usize,
}

fn manifold_point(model: &LocalModel, subspace: Subspace, base: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(match subspace {
        Subspace::Minus => UnstableOrbit::solve(model, base)?.point(),
        Subspace::Plus => StableOrbit::solve(model, base)?.point(),
    })
}

fn sign(subspace: Subspace) -> f64 {
    match subspace {
        Subspace::Minus => -1.0,
        Subspace::Plus => 1.0,
    }
}

/// Illinois regula falsi for a sign change of `g` on `[a, b]` with
/// `g(a) < 0 < g(b)`; returns the iterate with the smallest `|g|` and its
/// payload once `|g| <= ftol` or the bracket is narrower than `xtol`.
pub(crate) fn illinois<P>(
    g: &impl Fn(f64) -> Result<(f64, P)>,
    lower: (f64, f64),
    upper: (f64, f64, P),
    ftol: f64,
    xtol: f64,
) -> Result<(f64, f64, P)> {
    let (mut a, mut fa) = lower;
    let (mut b, mut fb, pb) = upper;
    let mut best = (b, fb, pb);
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let (fc, pc) = g(c)?;
        let done = fc.abs() <= ftol;
        if fc.abs() < best.1.abs() {
            best = (c, fc, pc);
        }
        if done || (b - a) <= xtol {
            break;
        }
        if fc > 0.0 {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    Ok(best)
}

/// Locates the level sphere along `directions.len()` rays by Illinois
/// regula falsi on `|f - c| = eps`, then samples `layers` interior shells.
pub fn level_disk(
    model: &LocalModel,
    subspace: Subspace,
    epsilon: f64,
    rays: usize,
    layers: usize,
    seed: u64,
) -> Result<LevelDisk> {
    let split = &model.split;
    let dim = split.subspace_dimension(subspace);
    let radius = model.ladder.manifold_radius;
    let s = sign(subspace);
    let directions: Vec<DVector<f64>> = sphere_directions(dim, rays, seed)
        .into_iter()
        .map(|c| split.embed(subspace, &c))
        .collect();

    let boundary: Vec<DiskPoint> = directions
        .par_iter()
        .map(|u| -> Result<DiskPoint> {
            let g = |r: f64| -> Result<(f64, DVector<f64>)> {
                let p = manifold_point(model, subspace, &(r * u))?;
                Ok((s * model.level(&p) - epsilon, p))
            };
            let (g_hi, p_hi) = g(radius)?;
            if g_hi < 0.0 {
                return Err(Error::LevelNotReached {
                    level: epsilon,
                    reached: g_hi + epsilon,
                });
            }
            let (r, _, p) = illinois(
                &g,
                (0.0, -epsilon),
                (radius, g_hi, p_hi),
                1e-12 * epsilon,
                1e-15 * radius,
            )?;
            Ok(DiskPoint {
                direction: u.clone(),
                radius: r,
                base: r * u,
                point: p,
            })
        })
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(DVector<f64>, f64, DVector<f64>)> =
        vec![(directions[0].clone(), 0.0, directions[0].clone() * 0.0)];
    for b in &boundary {
        for j in 1..layers.max(1) {
            let r = b.radius * j as f64 / layers as f64;
            jobs.push((b.direction.clone(), r, r * &b.direction));
        }
    }
    let interior = jobs
        .into_par_iter()
        .map(|(direction, radius, base)| {
            let point = manifold_point(model, subspace, &base)?;
            Ok(DiskPoint {
                direction,
                radius,
                base,
                point,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LevelDisk {
        subspace,
        level_offset: epsilon,
        boundary,
        interior,
        index: dim,
    })
}

/// `W^u_eps` with `eps` from the ladder.
pub fn descending_disk(model: &LocalModel, rays: usize, layers: usize) -> Result<LevelDisk> {
    level_disk(
        model,
        Subspace::Minus,
        model.ladder.epsilon,
        rays,
        layers,
        model.numerics.seed,
    )
}

/// `W^s_eps` with `eps` from the ladder.
pub fn ascending_disk(model: &LocalModel, rays: usize, layers: usize) -> Result<LevelDisk> {
    level_disk(
        model,
        Subspace::Plus,
        model.ladder.epsilon,
        rays,
        layers,
        model.numerics.seed,
    )
}

impl LevelDisk {
    pub fn boundary_points(&self) -> Vec<DVector<f64>> {
        self.boundary.iter().map(|b| b.point.clone()).collect()
    }

    /// Largest boundary radius in the base subspace.
    pub fn max_radius(&self) -> f64 {
        self.boundary.iter().map(|b| b.radius).fold(0.0, f64::max)
    }

    /// Whether `p` lies on the manifold (graph residual below `tol`) and on
    /// the correct side of the level `c -+ eps`.
    pub fn contains(&self, model: &LocalModel, p: &DVector<f64>, tol: f64) -> Result<bool> {
        let base = model.split.project(self.subspace, p);
        if base.norm() > model.ladder.manifold_radius {
            return Ok(false);
        }
        let on = (manifold_point(model, self.subspace, &base)? - p).norm() <= tol;
        Ok(on && sign(self.subspace) * model.level(p) <= self.level_offset + tol)
    }

    /// `psi_{-t}` of a boundary sample (descending disks only).
    pub fn backward(&self, model: &LocalModel, i: usize, t: f64) -> Result<DVector<f64>> {
        if self.subspace != Subspace::Minus {
            return Err(Error::Config("backward flow is defined on the descending disk".into()));
        }
        super::algebraic_backward(model, &self.boundary[i].point, t)
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
    fn quadratic_sphere_closed_form() {
        let m = model(reference::quadratic());
        let d = level_disk(&m, Subspace::Minus, 0.02, 2, 3, 1).unwrap();
        assert_eq!(d.boundary.len(), 2);
        for b in &d.boundary {
            assert!((b.point[0].abs() - 0.2).abs() < 1e-10);
            assert!(b.point[1].abs() < 1e-15);
            assert!((m.level(&b.point) + 0.02).abs() < 1e-12);
        }
        let small = level_disk(&m, Subspace::Minus, 1e-8, 2, 1, 1).unwrap();
        assert!(small.max_radius() < 2e-4);
        assert!(matches!(
            level_disk(&m, Subspace::Minus, 1.0, 2, 1, 1),
            Err(Error::LevelNotReached { .. })
        ));
    }

    #[test]
    fn quartic_disks_sit_on_their_levels() {
        let m = model(reference::quartic());
        let d = descending_disk(&m, 2, 4).unwrap();
        for b in &d.boundary {
            assert!((m.level(&b.point) + m.ladder.epsilon).abs() <= 1e-10 * m.ladder.epsilon);
        }
        for p in &d.interior {
            assert!(m.level(&p.point) >= -m.ladder.epsilon);
            assert!(d.contains(&m, &p.point, 1e-9).unwrap());
        }
        let a = ascending_disk(&m, 2, 2).unwrap();
        for b in &a.boundary {
            assert!((m.level(&b.point) - m.ladder.epsilon).abs() <= 1e-10 * m.ladder.epsilon);
        }
    }

    #[test]
    fn descending_disk_is_backward_invariant() {
        let m = model(reference::curved());
        let d = descending_disk(&m, 2, 2).unwrap();
        for i in 0..d.boundary.len() {
            for t in [0.5, 3.0] {
                let p = d.backward(&m, i, t).unwrap();
                assert!(d.contains(&m, &p, 1e-9).unwrap());
            }
        }
    }
}
