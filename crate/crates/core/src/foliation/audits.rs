use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use super::atlas::FoliationAtlas;
use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::flow::integrate_scaled;
use crate::lambda_verify::{ConvergenceReport, ReportKind, ReportRow};
use crate::local_model::sampling::rng;
use crate::spectral::Subspace;

/// Separation of two leaves.
#[derive(Clone, Debug)]
pub struct LeafSeparation {
    pub first: usize,
    pub second: usize,
    /// Smallest distance between the graph values over a common node.
    pub vertical_gap: f64,
    /// Larger slope estimate of the two graphs.
    pub lipschitz: f64,
    /// `vertical_gap / sqrt(1 + L^2)` less both interpolation tolerances: a
    /// lower bound on the distance between the two graphs.
    pub floor: f64,
    /// Smallest distance between in-leaf samples of the two leaves.
    pub sample_distance: f64,
}

#[derive(Clone, Debug)]
pub struct DisjointReport {
    pub pairs: Vec<LeafSeparation>,
    /// Draws rejected because they picked the same label twice.
    pub redraws: usize,
}

impl DisjointReport {
    pub fn min_floor(&self) -> f64 {
        self.pairs.iter().map(|p| p.floor).fold(f64::INFINITY, f64::min)
    }

    pub fn min_sample_distance(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.sample_distance)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn csv(&self, atlas: &FoliationAtlas) -> String {
        let mut out = String::from("first,second,vertical_gap,lipschitz,floor,sample_distance\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                atlas.leaves[p.first].label.name(),
                atlas.leaves[p.second].label.name(),
                fmt(p.vertical_gap),
                fmt(p.lipschitz),
                fmt(p.floor),
                fmt(p.sample_distance)
            ));
        }
        out
    }
}

fn separation(atlas: &FoliationAtlas, i: usize, j: usize) -> LeafSeparation {
    let (a, b) = (&atlas.leaves[i], &atlas.leaves[j]);
    let vertical_gap = a
        .graph
        .values
        .iter()
        .zip(&b.graph.values)
        .map(|(u, v)| (u - v).norm())
        .fold(f64::INFINITY, f64::min);
    let lipschitz = a.lipschitz_estimate().max(b.lipschitz_estimate());
    let floor =
        vertical_gap / (1.0 + lipschitz * lipschitz).sqrt() - a.interpolation_tolerance() - b.interpolation_tolerance();
    let mut sample_distance = f64::INFINITY;
    for p in a.samples.iter().filter(|s| s.in_leaf) {
        for q in b.samples.iter().filter(|s| s.in_leaf) {
            sample_distance = sample_distance.min((&p.point - &q.point).norm());
        }
    }
    LeafSeparation {
        first: i,
        second: j,
        vertical_gap,
        lipschitz,
        floor,
        sample_distance,
    }
}

/// Separation of `pair_count` random pairs of distinct labeled leaves; the
/// first pair whose separation floor is not positive is a violation.
pub fn check_disjoint(atlas: &FoliationAtlas, pair_count: usize, seed: u64) -> Result<DisjointReport> {
    let labeled: Vec<usize> = atlas.labeled().map(|(i, _)| i).collect();
    if labeled.len() < 2 {
        return Ok(DisjointReport {
            pairs: Vec::new(),
            redraws: 0,
        });
    }
    let mut r = rng(seed);
    let mut draws = Vec::with_capacity(pair_count);
    let mut redraws = 0;
    while draws.len() < pair_count {
        let i = labeled[r.random_range(0..labeled.len())];
        let j = labeled[r.random_range(0..labeled.len())];
        if i == j {
            redraws += 1;
        } else {
            draws.push((i.min(j), i.max(j)));
        }
    }
    let pairs: Vec<LeafSeparation> = draws.par_iter().map(|&(i, j)| separation(atlas, i, j)).collect();
    if let Some(bad) = pairs.iter().find(|p| !(p.floor > 0.0)) {
        return Err(Error::DisjointnessViolation {
            first: atlas.leaves[bad.first].label.name(),
            second: atlas.leaves[bad.second].label.name(),
            separation: bad.floor,
        });
    }
    Ok(DisjointReport { pairs, redraws })
}

/// Relative tolerance for the invariance integrations; the absolute
/// tolerance is scaled to the smallest non-zero coordinate of the start.
const INVARIANCE_RTOL: f64 = 1e-12;

/// For each labeled leaf `(T, alpha)` and each grid horizon `S` with
/// `tau < S < T`, flows the in-leaf samples for `sigma = T - S` and measures
/// their distance from the `(S, alpha)` leaf graph. Rows compare the
/// residual with ten times that leaf's interpolation tolerance, with ten
/// times the local integration tolerance on the measured component as budget.
pub fn invariance_audit(atlas: &FoliationAtlas) -> Result<ConvergenceReport> {
    let model = atlas.model;
    let split = &model.split;
    let tau = atlas.params.tau;
    let mut jobs = Vec::new();
    for (i, leaf) in atlas.labeled() {
        let t = leaf.horizon().expect("labeled leaf");
        let alpha = match leaf.label {
            super::LeafLabel::Labeled { alpha, .. } => alpha,
            super::LeafLabel::Center => unreachable!(),
        };
        for &s in atlas
            .params
            .t_grid
            .iter()
            .filter(|&&s| s > tau * (1.0 + 1e-12) && s < t)
        {
            if let Some(j) = atlas.find(s, alpha) {
                for sample in leaf.samples.iter().filter(|p| p.in_leaf) {
                    jobs.push((i, j, t - s, sample));
                }
            }
        }
    }
    let rows = jobs
        .into_par_iter()
        .map(|(i, j, sigma, sample)| {
            let start = &sample.point;
            let floor = start
                .iter()
                .map(|v| v.abs())
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min);
            let atol = INVARIANCE_RTOL * 1e-3 * floor.min(1.0);
            let tr = integrate_scaled(
                &model.problem,
                start,
                sigma,
                INVARIANCE_RTOL,
                atol,
                model.numerics.blowup_norm,
                None,
            )?;
            let q = tr.end();
            let target = &atlas.leaves[j];
            let zp = split.project(Subspace::Plus, q);
            let qm = split.project(Subspace::Minus, q);
            let residual = (&qm - target.graph.interpolate(&zp)?).norm();
            Ok(ReportRow {
                horizon: atlas.leaves[i].horizon().unwrap_or(f64::INFINITY),
                z_minus: atlas.leaves[i]
                    .alpha
                    .clone()
                    .unwrap_or_else(|| DVector::zeros(split.dimension())),
                z_plus: sample.z_plus.clone(),
                direction: None,
                tau: Some(sigma),
                gap: residual,
                bound: 10.0 * target.interpolation_tolerance(),
                budget: 10.0 * (INVARIANCE_RTOL * qm.norm() + atol),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConvergenceReport::new(
        ReportKind::Invariance,
        atlas.params.t_grid.clone(),
        rows,
    ))
}

/// One-sided distance from each in-leaf sample of every labeled leaf to the
/// in-leaf samples of the centre leaf, against `e^{-T lambda / 8}` with the
/// two interpolation tolerances as budget.
pub fn leaf_distance_audit(atlas: &FoliationAtlas) -> ConvergenceReport {
    let center = atlas.center();
    let lambda = atlas.model.ladder.lambda;
    let dense: Vec<&DVector<f64>> = center.samples.iter().filter(|s| s.in_leaf).map(|s| &s.point).collect();
    let rows = atlas
        .labeled()
        .flat_map(|(_, leaf)| {
            let t = leaf.horizon().expect("labeled leaf");
            let alpha = leaf.alpha.clone().expect("labeled leaf");
            let budget = leaf.interpolation_tolerance() + center.interpolation_tolerance();
            let dense = &dense;
            leaf.samples.iter().filter(|s| s.in_leaf).map(move |s| ReportRow {
                horizon: t,
                z_minus: alpha.clone(),
                z_plus: s.z_plus.clone(),
                direction: None,
                tau: None,
                gap: dense
                    .iter()
                    .map(|c| (&s.point - *c).norm())
                    .fold(f64::INFINITY, f64::min),
                bound: (-t * lambda / 8.0).exp(),
                budget,
            })
        })
        .collect();
    ConvergenceReport::new(ReportKind::LeafDistance, atlas.params.t_grid.clone(), rows)
}
