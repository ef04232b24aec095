use std::collections::VecDeque;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cli::fmt;
use crate::error::{Error, Result};
use crate::flow::integrate_until;
use crate::local_model::LocalModel;

/// Box half-widths are this multiple of the linearised extent of `N`.
const BOX_MARGIN: f64 = 1.5;

/// A lattice point classified against the pair inequalities.
#[derive(Clone, Debug)]
pub struct PairSample {
    /// Ambient local coordinates.
    pub point: DVector<f64>,
    /// `f(p) - c`.
    pub level: f64,
    /// `f(phi_tau p) - c`, `None` once the orbit fell below `c - 4 eps`
    /// before time `tau`.
    pub level_tau: Option<f64>,
    /// `f(phi_{2 tau} p) - c`, with the same convention.
    pub level_2tau: Option<f64>,
    /// Both level inequalities hold.
    pub admissible: bool,
    /// Admissible and in the component of `x`.
    pub in_n: bool,
    pub in_l: bool,
}

/// Classifies `p` by forward integration over `[0, 2 tau]`.
pub fn classify(model: &LocalModel, p: &DVector<f64>, epsilon: f64, tau: f64, tol: f64) -> Result<PairSample> {
    let problem = &model.problem;
    let floor = -4.0 * epsilon;
    let stop = |_: f64, y: &DVector<f64>| problem.level(y) < floor;
    let level = problem.level(p);
    let tr = integrate_until(problem, p, 2.0 * tau, tol, model.numerics.blowup_norm, Some(&stop))?;
    let read = |t: f64| (t <= tr.end_time()).then(|| problem.level(&tr.at(t)));
    let level_tau = read(tau);
    let level_2tau = read(2.0 * tau);
    let admissible = level <= epsilon && level_tau.is_some_and(|v| v >= -epsilon);
    Ok(PairSample {
        point: p.clone(),
        level,
        level_tau,
        level_2tau,
        admissible,
        in_n: false,
        in_l: false,
    })
}

/// The Conley pair `(N, L)` sampled on a lattice in eigen-coordinates.
#[derive(Clone, Debug)]
pub struct ConleyPair {
    pub epsilon: f64,
    pub tau: f64,
    pub critical_value: f64,
    /// Half-widths of the sampling box along each eigenvector.
    pub half_widths: DVector<f64>,
    pub per_axis: usize,
    pub samples: Vec<PairSample>,
    /// Flat index of the lattice node at `x`.
    pub center: usize,
    /// Whether an `N` sample touches the box boundary.
    pub clipped: bool,
}

fn multi_index(mut flat: usize, n: usize, per_axis: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let i = flat % per_axis;
            flat /= per_axis;
            i
        })
        .collect()
}

fn flat_index(idx: &[usize], per_axis: usize) -> usize {
    idx.iter().rev().fold(0, |acc, &i| acc * per_axis + i)
}

fn neighbours(flat: usize, n: usize, per_axis: usize) -> Vec<usize> {
    let idx = multi_index(flat, n, per_axis);
    let mut out = Vec::with_capacity(2 * n);
    for d in 0..n {
        if idx[d] > 0 {
            let mut j = idx.clone();
            j[d] -= 1;
            out.push(flat_index(&j, per_axis));
        }
        if idx[d] + 1 < per_axis {
            let mut j = idx.clone();
            j[d] += 1;
            out.push(flat_index(&j, per_axis));
        }
    }
    out
}

/// Admissible connected components by breadth-first search over lattice
/// neighbours; returns the component label of every node.
fn components(admissible: &[bool], n: usize, per_axis: usize) -> (Vec<Option<usize>>, usize) {
    let mut label = vec![None; admissible.len()];
    let mut count = 0;
    for start in 0..admissible.len() {
        if !admissible[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(count);
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in neighbours(i, n, per_axis) {
                if admissible[j] && label[j].is_none() {
                    label[j] = Some(count);
                    queue.push_back(j);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Samples `N = {f <= c + eps, f(phi_tau p) >= c - eps}_x` and
/// `L = {p in N : f(phi_{2 tau} p) <= c - eps}` on a `per_axis^n` lattice
/// in a box aligned with the eigenvectors, keeping the component of `x`.
pub fn build_pair(model: &LocalModel, epsilon: f64, tau: f64, per_axis: usize, tol: f64) -> Result<ConleyPair> {
    if !(epsilon > 0.0 && tau > 0.0) {
        return Err(Error::Config(format!(
            "pair needs eps > 0 and tau > 0, got {epsilon}, {tau}"
        )));
    }
    let per_axis = if per_axis.is_multiple_of(2) {
        per_axis + 1
    } else {
        per_axis.max(3)
    };
    let split = &model.split;
    let n = split.dimension();
    let half_widths = DVector::from_fn(n, |i, _| {
        let l = split.eigenvalues[i];
        let extent = (2.0 * epsilon / l.abs()).sqrt();
        if split.is_negative(i) {
            BOX_MARGIN * extent * (l * tau).exp()
        } else {
            BOX_MARGIN * extent
        }
    });
    let total = per_axis.pow(n as u32);
    let step = |d: usize| 2.0 * half_widths[d] / (per_axis - 1) as f64;
    let mut samples = (0..total)
        .into_par_iter()
        .map(|flat| {
            let idx = multi_index(flat, n, per_axis);
            let y = DVector::from_fn(n, |d, _| -half_widths[d] + step(d) * idx[d] as f64);
            classify(model, &split.from_eigen(&y), epsilon, tau, tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let center = flat_index(&vec![per_axis / 2; n], per_axis);
    let admissible: Vec<bool> = samples.iter().map(|s| s.admissible).collect();
    if !admissible[center] {
        return Err(Error::Config("the critical point failed the pair inequalities".into()));
    }
    let (label, count) = components(&admissible, n, per_axis);
    if count > 1 {
        return Err(Error::ComponentAmbiguous { components: count });
    }
    let home = label[center];
    let mut clipped = false;
    for (flat, s) in samples.iter_mut().enumerate() {
        s.in_n = label[flat] == home;
        s.in_l = s.in_n && s.level_2tau.is_none_or(|v| v <= -epsilon);
        if s.in_n
            && multi_index(flat, n, per_axis)
                .iter()
                .any(|&i| i == 0 || i + 1 == per_axis)
        {
            clipped = true;
        }
    }
    Ok(ConleyPair {
        epsilon,
        tau,
        critical_value: model.problem.critical_value(),
        half_widths,
        per_axis,
        samples,
        center,
        clipped,
    })
}

impl ConleyPair {
    pub fn n_samples(&self) -> impl Iterator<Item = &PairSample> {
        self.samples.iter().filter(|s| s.in_n)
    }

    pub fn l_samples(&self) -> impl Iterator<Item = &PairSample> {
        self.samples.iter().filter(|s| s.in_l)
    }

    pub fn contains_critical_point(&self) -> bool {
        self.samples[self.center].in_n
    }

    /// Smallest gradient norm over `N` samples other than `x`; positive when
    /// no other critical point was sampled.
    pub fn min_gradient_away_from_center(&self, model: &LocalModel) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .filter(|(i, s)| s.in_n && *i != self.center)
            .map(|(_, s)| model.problem.gradient(&s.point).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest sup-norm of an `N` sample.
    pub fn extent(&self) -> f64 {
        self.n_samples().map(|s| s.point.amax()).fold(0.0, f64::max)
    }

    /// Columns `x_1..x_n, f, in_N, in_L`.
    pub fn csv(&self) -> String {
        let n = self.half_widths.len();
        let mut out: String = (1..=n).map(|i| format!("x_{i},")).collect();
        out.push_str("f,in_N,in_L\n");
        for s in &self.samples {
            for v in s.point.iter() {
                out.push_str(&fmt(*v));
                out.push(',');
            }
            out.push_str(&format!(
                "{},{},{}\n",
                fmt(self.critical_value + s.level),
                s.in_n,
                s.in_l
            ));
        }
        out
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
    fn quadratic_membership_has_closed_form() {
        let m = model(reference::quadratic());
        let p = DVector::from_vec(vec![0.1, 0.1]);
        let s = classify(&m, &p, 0.02, 2.0, 1e-12).unwrap();
        let level = |t: f64| -0.005 * (2.0 * t).exp() + 0.01 * (-4.0 * t).exp();
        assert!((s.level - level(0.0)).abs() < 1e-16);
        assert_eq!(s.level_tau, None);
        assert!(!s.admissible);
        let q = DVector::from_vec(vec![0.001, 0.1]);
        let s = classify(&m, &q, 0.02, 2.0, 1e-12).unwrap();
        let exact = -5e-7 * 4.0f64.exp() + 0.01 * (-8.0f64).exp();
        assert!((s.level_tau.unwrap() - exact).abs() < 1e-12);
        assert!(s.admissible);
        let x = classify(&m, &DVector::zeros(2), 0.02, 2.0, 1e-12).unwrap();
        assert!(x.admissible && x.level_tau == Some(0.0));
    }

    #[test]
    fn quartic_pair_is_well_formed() {
        let m = model(reference::quartic());
        let eps = 1e-5;
        let pair = build_pair(&m, eps, 3.0, 21, 1e-11).unwrap();
        assert!(pair.contains_critical_point());
        assert!(!pair.clipped);
        assert!(pair.l_samples().all(|s| s.in_n));
        assert!(pair.l_samples().count() > 0);
        assert!(pair.min_gradient_away_from_center(&m) > 0.0);
        for s in pair.n_samples() {
            assert!(s.level <= eps && s.level_tau.unwrap() >= -eps);
        }
    }
}
