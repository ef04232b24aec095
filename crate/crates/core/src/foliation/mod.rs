//! The Conley pair around `x`, its stable foliation by finite-horizon graph
//! leaves, and the induced semi-flow that retracts `N` onto its part in the
//! unstable manifold.

mod atlas;
mod audits;
mod pair;
mod thickening;

pub use atlas::{build_atlas, FoliationAtlas, Leaf, LeafLabel, LeafSample};
pub use audits::{check_disjoint, invariance_audit, leaf_distance_audit, DisjointReport, LeafSeparation};
pub use pair::{build_pair, classify, ConleyPair, PairSample};
pub use thickening::{induced_flow, retract_audit, BoundaryQuotient, FlowTime, RetractReport};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::local_model::LocalModel;

/// Parameters of a foliation run.
#[derive(Clone, Debug, Serialize)]
pub struct FoliationParams {
    /// Level offset of the pair and of the descending sphere.
    pub epsilon: f64,
    pub tau: f64,
    /// Leaf horizons, all at least `tau`.
    pub t_grid: Vec<f64>,
    /// Nodes per axis of the fibre-disk grid.
    pub per_axis: usize,
    /// Rays on the descending sphere (labels `alpha`).
    pub alpha_rays: usize,
    /// Radial layers of the descending disk used for `D`.
    pub disk_layers: usize,
    /// Rays along which leaf boundaries are located.
    pub boundary_rays: usize,
    /// Lattice nodes per axis for the pair.
    pub pair_per_axis: usize,
}

impl FoliationParams {
    /// `eps = 0.9 lambda_{k+1} (rho/4)^2 / 2`, so the ascending disk fits in
    /// half the fibre disk; `tau = T0`; ten horizons evenly spaced on
    /// `[tau, 2 tau]`.
    pub fn default_for(model: &LocalModel) -> Self {
        let split = &model.split;
        let k = split.morse_index;
        let m = split.stable_dimension();
        let lambda_plus = split.eigenvalues[k];
        let epsilon = 0.9 * lambda_plus * (model.ladder.rho / 4.0).powi(2) / 2.0;
        let mut p = Self {
            epsilon,
            tau: model.ladder.t0,
            t_grid: Vec::new(),
            per_axis: match m {
                1 => 17,
                2 => 9,
                _ => 5,
            },
            alpha_rays: if k == 1 { 2 } else { 8 },
            disk_layers: 3,
            boundary_rays: match m {
                1 => 2,
                2 => 8,
                _ => 12,
            },
            pair_per_axis: match split.dimension() {
                2 => 41,
                3 => 17,
                _ => 9,
            },
        };
        p.set_tau(p.tau);
        p
    }

    /// Sets `tau` and resets the horizons to `tau + j tau / 9`, `j = 0..=9`.
    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
        self.t_grid = (0..10).map(|j| tau + j as f64 * tau / 9.0).collect();
    }
}

/// Outcome of the halving search for a pair inside a box.
#[derive(Clone, Debug)]
pub struct ShrinkResult {
    pub epsilon: f64,
    pub tau: f64,
    pub halvings: usize,
    /// Largest sup-norm of an `N` sample.
    pub extent: f64,
    pub pair: ConleyPair,
}

/// Halves `eps` until every `N` sample lies in the cube of half-width
/// `half_width` around `x`.
pub fn shrink_search(
    model: &LocalModel,
    params: &FoliationParams,
    half_width: f64,
    max_halvings: usize,
) -> Result<ShrinkResult> {
    let mut epsilon = params.epsilon;
    for halvings in 0..=max_halvings {
        let pair = build_pair(model, epsilon, params.tau, params.pair_per_axis, model.numerics.ode_tol)?;
        let extent = pair.extent();
        if extent <= half_width {
            return Ok(ShrinkResult {
                epsilon,
                tau: params.tau,
                halvings,
                extent,
                pair,
            });
        }
        epsilon *= 0.5;
    }
    Err(Error::BoundViolated(format!(
        "pair still leaves the box of half-width {half_width:.3e} after {max_halvings} halvings"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{LadderChoices, Numerics};
    use crate::reference;
    use nalgebra::DVector;

    fn model(p: crate::local_model::GradientProblem) -> LocalModel {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        LocalModel::build(p, &LadderChoices::default(), numerics).unwrap()
    }

    fn small(m: &LocalModel) -> FoliationParams {
        let mut p = FoliationParams::default_for(m);
        p.t_grid.truncate(3);
        p.per_axis = 9;
        p.pair_per_axis = 21;
        p
    }

    #[test]
    fn quadratic_leaves_are_flat() {
        let m = model(reference::quadratic());
        let params = small(&m);
        let atlas = build_atlas(&m, &params).unwrap();
        assert_eq!(atlas.leaves.len(), 1 + 3 * 2);
        for (_, leaf) in atlas.labeled() {
            let t = leaf.horizon().unwrap();
            let alpha = leaf.alpha.as_ref().unwrap();
            let expected = alpha * (-t).exp();
            for v in &leaf.graph.values {
                assert!((v - &expected).norm() <= 1e-15 * alpha.norm());
            }
            assert!((&leaf.base_point - &expected).norm() <= 1e-15 * alpha.norm());
        }
        for b in &atlas.center().boundary {
            assert!((b.point[1].abs() - params.epsilon.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn minimal_atlas_has_one_leaf_and_centre() {
        let m = model(reference::quartic());
        let mut params = small(&m);
        params.t_grid = vec![params.tau];
        params.alpha_rays = 1;
        let atlas = build_atlas(&m, &params).unwrap();
        assert!(atlas.leaves.len() <= 3);
        assert!(atlas.leaves.iter().any(|l| l.label == LeafLabel::Center));
    }

    #[test]
    fn quadratic_pair_separation_closed_form() {
        let m = model(reference::quadratic());
        let params = small(&m);
        let atlas = build_atlas(&m, &params).unwrap();
        let report = check_disjoint(&atlas, 40, 5).unwrap();
        for p in &report.pairs {
            let (a, b) = (&atlas.leaves[p.first], &atlas.leaves[p.second]);
            let exact = (a.alpha.as_ref().unwrap() * (-a.horizon().unwrap()).exp()
                - b.alpha.as_ref().unwrap() * (-b.horizon().unwrap()).exp())
            .norm();
            assert!((p.vertical_gap - exact).abs() <= 1e-14 * exact);
        }
    }

    #[test]
    fn label_points_match_backward_flow() {
        let m = model(reference::quartic());
        let atlas = build_atlas(&m, &small(&m)).unwrap();
        for (i, leaf) in atlas.labeled() {
            let t = leaf.horizon().unwrap();
            let back = leaf.map.as_ref().unwrap().backward_point();
            assert!((&back - &leaf.base_point).norm() <= 1e-12 * back.norm().max(1e-300) + 1e-20);
            assert!(atlas.disk_margin(i).unwrap() >= -1e-12 * atlas.params.epsilon);
            assert!(t >= atlas.params.tau);
        }
        assert_eq!(atlas.annulus.len(), atlas.leaves.len() - 1);
    }

    #[test]
    fn quartic_audits_pass() {
        let m = model(reference::quartic());
        let atlas = build_atlas(&m, &small(&m)).unwrap();
        let disjoint = check_disjoint(&atlas, 30, 1).unwrap();
        assert!(disjoint.min_floor() > 0.0);
        assert!(disjoint.min_sample_distance() >= disjoint.min_floor());
        let inv = invariance_audit(&atlas).unwrap();
        assert!(!inv.rows.is_empty() && inv.pass(), "max residual {}", inv.max_gap());
        assert!(leaf_distance_audit(&atlas).pass());
        let retract = retract_audit(&atlas, &[0.5, 2.0], m.ladder.t_max, &[1e-3, 1e-4]).unwrap();
        assert!(retract.pass(), "{:?}", retract.checks());
    }

    #[test]
    fn induced_flow_fixes_labels_and_composes() {
        let m = model(reference::quartic());
        let atlas = build_atlas(&m, &small(&m)).unwrap();
        let leaf = 1;
        let label = atlas.leaves[leaf].base_point.clone();
        assert_eq!(induced_flow(&atlas, leaf, &label, FlowTime::Infinity).unwrap(), label);
        let moved = induced_flow(&atlas, leaf, &label, FlowTime::Finite(3.0)).unwrap();
        assert!((moved - &label).norm() <= 1e-10);
        let z = atlas.leaves[leaf].samples[2].point.clone();
        let a = induced_flow(&atlas, leaf, &z, FlowTime::Finite(0.7)).unwrap();
        let ab = induced_flow(&atlas, leaf, &a, FlowTime::Finite(1.1)).unwrap();
        let direct = induced_flow(&atlas, leaf, &z, FlowTime::Finite(1.8)).unwrap();
        assert!((ab - direct).norm() <= 1e-10);
        let centre = induced_flow(&atlas, 0, &z, FlowTime::Finite(1.0)).unwrap();
        let exact = DVector::from_vec(vec![0.0, z[1] * (-2.0f64).exp()]);
        assert!((centre[1] - exact[1]).abs() < 1e-4 * z[1].abs());
        let far = DVector::from_vec(vec![0.0, m.ladder.rho]);
        assert!(matches!(
            induced_flow(&atlas, leaf, &far, FlowTime::Finite(1.0)),
            Err(Error::OutsideLeafDomain { .. })
        ));
    }
}
