use nalgebra::DVector;
use rayon::prelude::*;

use super::pair::{build_pair, ConleyPair};
use super::FoliationParams;
use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::flow::{algebraic_backward, illinois, level_disk, LevelDisk};
use crate::local_model::sampling::sphere_directions;
use crate::local_model::LocalModel;
use crate::lyapunov_perron::{sample_graph, BaseGrid, FiniteGraph, GraphMap, GraphSample, StableGraph, TensorGrid};
use crate::spectral::Subspace;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LeafLabel {
    /// The ascending disk.
    Center,
    /// The leaf through `phi_{-T} alpha` for the `alpha`-th point of the
    /// descending sphere.
    Labeled { horizon: f64, alpha: usize },
}

impl LeafLabel {
    pub fn name(&self) -> String {
        match self {
            LeafLabel::Center => "center".into(),
            LeafLabel::Labeled { horizon, alpha } => format!("T={horizon:.6}/alpha={alpha}"),
        }
    }
}

/// A leaf point over a base point of the fibre disk.
#[derive(Clone, Debug)]
pub struct LeafSample {
    pub z_plus: DVector<f64>,
    pub point: DVector<f64>,
    /// `f - c` at `point`.
    pub level: f64,
    /// `f <= c + eps`.
    pub in_leaf: bool,
}

pub struct Leaf<'a> {
    pub label: LeafLabel,
    /// The point of the descending sphere, for labeled leaves.
    pub alpha: Option<DVector<f64>>,
    /// The graph over `z_plus = 0`: `alpha^T` for labeled leaves, `x` for
    /// the centre.
    pub base_point: DVector<f64>,
    pub graph: GraphSample,
    pub samples: Vec<LeafSample>,
    /// Points on `f = c + eps` along rays of the fibre disk.
    pub boundary: Vec<LeafSample>,
    /// The finite-horizon graph map of labeled leaves.
    pub map: Option<FiniteGraph<'a>>,
}

impl Leaf<'_> {
    pub fn horizon(&self) -> Option<f64> {
        match self.label {
            LeafLabel::Center => None,
            LeafLabel::Labeled { horizon, .. } => Some(horizon),
        }
    }

    pub fn interpolation_tolerance(&self) -> f64 {
        self.graph.interpolation_tolerance()
    }

    /// Interpolated leaf point over `z_plus`.
    pub fn point_at(&self, model: &LocalModel, z_plus: &DVector<f64>) -> Result<DVector<f64>> {
        let zp = model.split.project(Subspace::Plus, z_plus);
        Ok(&zp + self.graph.interpolate(&zp)?)
    }

    /// Exact leaf point over `z_plus` by a fresh solve.
    pub fn solve_at(&self, model: &LocalModel, z_plus: &DVector<f64>) -> Result<DVector<f64>> {
        let zp = model.split.project(Subspace::Plus, z_plus);
        let value = match &self.map {
            Some(g) => g.eval(&zp)?.value,
            None => StableGraph { model }.eval(&zp)?.value,
        };
        Ok(zp + value)
    }

    /// Largest slope between axis-adjacent graph nodes.
    pub fn lipschitz_estimate(&self) -> f64 {
        let mut best: f64 = 0.0;
        let pts = &self.graph.base_points;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = (&pts[i] - &pts[j]).norm();
                if let BaseGrid::Tensor(g) = &self.graph.base_grid {
                    if d > g.spacing() * (1.0 + 1e-9) {
                        continue;
                    }
                }
                best = best.max((&self.graph.values[i] - &self.graph.values[j]).norm() / d);
            }
        }
        best
    }

    /// Columns `kind, zp_1..zp_m, x_1..x_n, f, in_leaf`, with `zp` in
    /// coordinates of the stable eigenbasis.
    pub fn csv(&self, model: &LocalModel) -> String {
        let split = &model.split;
        let m = split.stable_dimension();
        let n = split.dimension();
        let mut out = String::from("kind");
        for i in 1..=m {
            out.push_str(&format!(",zp_{i}"));
        }
        for i in 1..=n {
            out.push_str(&format!(",x_{i}"));
        }
        out.push_str(",f,in_leaf\n");
        let c = model.problem.critical_value();
        for (kind, list) in [("node", &self.samples), ("boundary", &self.boundary)] {
            for s in list {
                out.push_str(kind);
                for v in split
                    .coordinates(Subspace::Plus, &s.z_plus)
                    .iter()
                    .chain(s.point.iter())
                {
                    out.push(',');
                    out.push_str(&fmt(*v));
                }
                out.push_str(&format!(",{},{}\n", fmt(c + s.level), s.in_leaf));
            }
        }
        out
    }
}

pub struct FoliationAtlas<'a> {
    pub model: &'a LocalModel,
    pub params: FoliationParams,
    /// The descending disk at level `c - eps`; its boundary points are the
    /// leaf labels `alpha`.
    pub sphere: LevelDisk,
    pub alphas: Vec<DVector<f64>>,
    /// Centre leaf first, then labeled leaves ordered by `(T, alpha)`.
    pub leaves: Vec<Leaf<'a>>,
    pub pair: ConleyPair,
    /// Samples of `phi_{-tau} W^u_eps`.
    pub disk_d: Vec<DVector<f64>>,
    /// Label points `alpha^T` with `T` in `[tau, 2 tau]`.
    pub annulus: Vec<DVector<f64>>,
}

fn sample_leaf(model: &LocalModel, graph: &GraphSample, epsilon: f64) -> Vec<LeafSample> {
    (0..graph.len())
        .map(|i| {
            let point = graph.graph_point(i);
            let level = model.level(&point);
            LeafSample {
                z_plus: graph.base_points[i].clone(),
                point,
                level,
                in_leaf: level <= epsilon,
            }
        })
        .collect()
}

/// Level crossings `f = c + eps` of a graph along `rays` directions of the
/// fibre disk of radius `radius`.
fn leaf_boundary(
    model: &LocalModel,
    map: &dyn GraphMap,
    epsilon: f64,
    radius: f64,
    rays: usize,
) -> Result<Vec<LeafSample>> {
    let split = &model.split;
    let m = split.stable_dimension();
    let directions: Vec<DVector<f64>> = sphere_directions(m, rays, model.numerics.seed)
        .into_iter()
        .map(|u| split.embed(Subspace::Plus, &u))
        .collect();
    directions
        .par_iter()
        .map(|u| {
            let g = |r: f64| -> Result<(f64, DVector<f64>)> {
                let zp = r * u;
                let p = &zp + map.eval(&zp)?.value;
                Ok((model.level(&p) - epsilon, p))
            };
            let (g0, _) = g(0.0)?;
            let (g1, p1) = g(radius)?;
            if g0 > 0.0 || g1 < 0.0 {
                return Err(Error::LevelNotReached {
                    level: epsilon,
                    reached: g1 + epsilon,
                });
            }
            let (r, gr, point) = illinois(&g, (0.0, g0), (radius, g1, p1), 1e-12 * epsilon, 1e-15 * radius)?;
            Ok(LeafSample {
                z_plus: r * u,
                point,
                level: gr + epsilon,
                in_leaf: true,
            })
        })
        .collect()
}

/// Builds the centre leaf and one leaf per `(T, alpha)` over a common grid
/// of the fibre disk, together with the Conley pair and the leaf space.
pub fn build_atlas<'a>(model: &'a LocalModel, params: &FoliationParams) -> Result<FoliationAtlas<'a>> {
    let eps = params.epsilon;
    let tau = params.tau;
    if params.t_grid.iter().any(|&t| t < tau * (1.0 - 1e-12)) {
        return Err(Error::HorizonMismatch(format!(
            "leaf horizons must be at least tau = {tau}"
        )));
    }
    let split = &model.split;
    let radius = model.ladder.fiber_radius();
    let grid = TensorGrid::inscribed(split, Subspace::Plus, radius, params.per_axis);
    let sphere = level_disk(
        model,
        Subspace::Minus,
        eps,
        params.alpha_rays,
        params.disk_layers,
        model.numerics.seed,
    )?;
    let alphas: Vec<DVector<f64>> = sphere.boundary_points();
    let tol = model.numerics.fixed_point_tol;

    let stable = StableGraph { model };
    let center_graph = sample_graph(&stable, BaseGrid::Tensor(grid.clone()))?;
    let center = Leaf {
        label: LeafLabel::Center,
        alpha: None,
        base_point: DVector::zeros(split.dimension()),
        samples: sample_leaf(model, &center_graph, eps),
        boundary: leaf_boundary(model, &stable, eps, radius, params.boundary_rays)?,
        graph: center_graph,
        map: None,
    };

    let labels: Vec<(f64, usize)> = params
        .t_grid
        .iter()
        .flat_map(|&t| (0..alphas.len()).map(move |a| (t, a)))
        .collect();
    let labeled = labels
        .par_iter()
        .map(|&(t, a)| -> Result<Leaf<'a>> {
            let map = FiniteGraph::unchecked(model, t, &alphas[a], tol)?;
            let graph = sample_graph(&map, BaseGrid::Tensor(grid.clone()))?;
            let base_point = map.eval(&DVector::zeros(split.dimension()))?.value;
            Ok(Leaf {
                label: LeafLabel::Labeled { horizon: t, alpha: a },
                alpha: Some(alphas[a].clone()),
                base_point,
                samples: sample_leaf(model, &graph, eps),
                boundary: leaf_boundary(model, &map, eps, radius, params.boundary_rays)?,
                graph,
                map: Some(map),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let disk_d = sphere
        .interior
        .par_iter()
        .chain(sphere.boundary.par_iter())
        .map(|p| algebraic_backward(model, &p.point, tau))
        .collect::<Result<Vec<_>>>()?;
    let annulus = labeled
        .iter()
        .filter(|l| l.horizon().is_some_and(|t| t <= 2.0 * tau * (1.0 + 1e-12)))
        .map(|l| l.base_point.clone())
        .collect();
    let pair = build_pair(model, eps, tau, params.pair_per_axis, model.numerics.ode_tol)?;

    let mut leaves = vec![center];
    leaves.extend(labeled);
    Ok(FoliationAtlas {
        model,
        params: params.clone(),
        sphere,
        alphas,
        leaves,
        pair,
        disk_d,
        annulus,
    })
}

impl<'a> FoliationAtlas<'a> {
    pub fn center(&self) -> &Leaf<'a> {
        &self.leaves[0]
    }

    pub fn labeled(&self) -> impl Iterator<Item = (usize, &Leaf<'a>)> {
        self.leaves.iter().enumerate().skip(1)
    }

    /// Index of the leaf with horizon `t` and label `alpha`.
    pub fn find(&self, t: f64, alpha: usize) -> Option<usize> {
        self.leaves.iter().position(|l| match l.label {
            LeafLabel::Labeled { horizon, alpha: a } => a == alpha && (horizon - t).abs() <= 1e-12 * t,
            LeafLabel::Center => false,
        })
    }

    /// `f(phi_tau p) - c + eps` for a label point `p = alpha^T`, read off the
    /// emanating orbit; non-negative exactly when `p` lies in `D`.
    pub fn disk_margin(&self, leaf: usize) -> Option<f64> {
        let l = &self.leaves[leaf];
        let t = l.horizon()?;
        let map = l.map.as_ref()?;
        let q = map.orbit.at(-(t - self.params.tau));
        Some(self.model.level(&q) + self.params.epsilon)
    }

    /// Label rows `index, name, T, alpha, base point` for manifests.
    pub fn labels(&self) -> Vec<serde_json::Value> {
        self.leaves
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (t, a) = match l.label {
                    LeafLabel::Center => (None, None),
                    LeafLabel::Labeled { horizon, alpha } => (Some(horizon), Some(alpha)),
                };
                serde_json::json!({
                    "index": i,
                    "name": l.label.name(),
                    "T": t,
                    "alpha": a,
                    "base_point": l.base_point.iter().map(|v| fmt(*v)).collect::<Vec<_>>(),
                    "interpolation_tolerance": fmt(l.interpolation_tolerance()),
                })
            })
            .collect()
    }
}
