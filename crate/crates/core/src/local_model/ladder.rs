use serde::{Deserialize, Serialize};

use super::kappa::SampledModulus;
use crate::error::{Error, Result};
use crate::spectral::SpectralSplit;

/// Margin applied to the quadratic-model geometric bounds.
const GEOMETRY_MARGIN: f64 = 0.9;
const GRID_DEPTH: i32 = 60;

/// User choices for the ladder; `None` selects the default rule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderChoices {
    pub lambda: Option<f64>,
    pub varkappa: Option<f64>,
    pub epsilon: Option<f64>,
    pub varsigma: Option<f64>,
    pub rho: Option<f64>,
    /// Radius whose half is the domain of the local manifold graphs.
    pub manifold_rho: Option<f64>,
}

/// The chain of constants driving every contraction and estimate.
#[derive(Clone, Debug, Serialize)]
pub struct RateLadder {
    pub gap: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
    pub delta: f64,
    pub mu: f64,
    pub trust_radius: f64,
    /// Contraction radius of the local manifold operators.
    pub manifold_rho: f64,
    /// Graph domain radius `R = manifold_rho / 2`.
    pub manifold_radius: f64,
    /// Contraction radius of the finite-horizon operator.
    pub rho: f64,
    pub kappa_rho: f64,
    /// `kappa(rho) (4/lambda + 1/delta + 1)`, at most 1/8.
    pub smallness: f64,
    pub varkappa: f64,
    pub epsilon: f64,
    pub varsigma: f64,
    pub t1: f64,
    pub t2: f64,
    pub t0: f64,
    /// Truncation of infinite horizons.
    pub t_max: f64,
    pub c1: f64,
    pub kappa_star: Option<f64>,
    pub c_star: Option<f64>,
    #[serde(skip)]
    pub kappa: SampledModulus,
}

fn smallness(kappa: f64, lambda: f64, delta: f64) -> f64 {
    kappa * (4.0 / lambda + 1.0 / delta + 1.0)
}

/// Largest `top * 2^-j` (`j >= 0`) not exceeding `cap`.
fn largest_dyadic(top: f64, cap: f64) -> Option<f64> {
    (0..GRID_DEPTH).map(|j| top * 0.5f64.powi(j)).find(|&v| v <= cap)
}

/// Smallest `T` with `exp(-T mu / 4) <= 1/8`.
pub(crate) fn horizon_t2(mu: f64) -> f64 {
    let mut t = 4.0 * 8f64.ln() / mu;
    while (-t * mu / 4.0).exp() > 0.125 {
        t = t.next_up();
    }
    t
}

pub fn build_ladder(split: &SpectralSplit, kappa: SampledModulus, choices: &LadderChoices) -> Result<RateLadder> {
    split.require_saddle()?;
    let d = split.gap;
    let lambda_min = split.lambda_min();
    let lambda_max = split.lambda_max();
    let lambda = choices.lambda.unwrap_or(0.5 * d);
    if !(lambda > 0.0 && lambda < d) {
        return Err(Error::LadderInfeasible(format!("lambda = {lambda} not in (0, {d})")));
    }
    let delta = GEOMETRY_MARGIN * f64::min(1.0, 0.5 * (d - lambda));
    let mu = lambda + delta;
    let rho0 = kappa.max_radius();
    let admissible = |r: f64| smallness(kappa.at(r), lambda, delta) <= 0.125;

    let manifold_rho = match choices.manifold_rho {
        Some(r) if r > 0.0 && r <= rho0 => r,
        Some(r) => {
            return Err(Error::LadderInfeasible(format!(
                "manifold_rho = {r} not in (0, {rho0}]"
            )))
        }
        None => (1..GRID_DEPTH)
            .map(|j| rho0 * 0.5f64.powi(j))
            .find(|&r| admissible(r))
            .ok_or_else(|| Error::LadderInfeasible("no sampled radius satisfies the smallness condition".into()))?,
    };
    let big_r = 0.5 * manifold_rho;

    let varsigma = match choices.varsigma {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::LadderInfeasible(format!("varsigma = {s} must be positive"))),
        None => largest_dyadic(big_r * big_r, GEOMETRY_MARGIN * d * big_r * big_r / 4.0)
            .expect("dyadic grid reaches any positive cap"),
    };
    let epsilon = choices.epsilon.unwrap_or(0.5 * varsigma);
    if !(epsilon > 0.0 && epsilon < varsigma) {
        return Err(Error::LadderInfeasible(format!(
            "epsilon = {epsilon} not in (0, {varsigma})"
        )));
    }
    let varkappa = match choices.varkappa {
        Some(v) => v,
        None => largest_dyadic(
            1.0,
            f64::min(1.0, GEOMETRY_MARGIN * (2.0 * varsigma / lambda_max).sqrt()),
        )
        .expect("dyadic grid reaches any positive cap"),
    };
    if !(varkappa > 0.0 && varkappa <= 1.0) {
        return Err(Error::LadderInfeasible(format!("varkappa = {varkappa} not in (0, 1]")));
    }

    let rho = match choices.rho {
        Some(r) => {
            if !(r > 0.0 && r < 1.0 && r <= rho0) {
                return Err(Error::LadderInfeasible(format!("rho = {r} not in (0, min(1, {rho0})]")));
            }
            if !admissible(r) {
                return Err(Error::LadderInfeasible(format!(
                    "rho = {r} violates kappa(rho)(4/lambda + 1/delta + 1) <= 1/8"
                )));
            }
            r
        }
        None => {
            let fits = GEOMETRY_MARGIN
                * f64::min(
                    (2f64.sqrt() - 1.0) * (2.0 * varsigma / lambda_min.abs()).sqrt(),
                    2.0 * (varsigma / lambda_max).sqrt(),
                );
            let cap = fits.min(manifold_rho);
            (1..GRID_DEPTH)
                .map(|j| rho0 * 0.5f64.powi(j))
                .find(|&r| r <= cap && admissible(r))
                .ok_or_else(|| {
                    Error::LadderInfeasible("no sampled radius fits the unstable disk neighbourhood".into())
                })?
        }
    };
    let kappa_rho = kappa.at(rho);

    let t1 = -varkappa.ln() / lambda;
    let t2 = horizon_t2(mu);
    let t0 = t1.max(t2).max(1.0);
    let t_max = f64::max(3.0 * t0, 40.0 / lambda);
    let c1 = 2.0 * (lambda_min.abs() + 1.0);
    let kappa_star = kappa.kappa_star;
    let c_star = kappa_star.map(|ks| 2.0 * ks * (1.0 / delta + 1.0 / lambda) + 0.25);

    Ok(RateLadder {
        gap: d,
        lambda_min,
        lambda_max,
        lambda,
        delta,
        mu,
        trust_radius: rho0,
        manifold_rho,
        manifold_radius: big_r,
        rho,
        kappa_rho,
        smallness: smallness(kappa_rho, lambda, delta),
        varkappa,
        epsilon,
        varsigma,
        t1,
        t2,
        t0,
        t_max,
        c1,
        kappa_star,
        c_star,
        kappa,
    })
}

impl RateLadder {
    /// Radius of the fibre disk `B+` on which the finite-horizon graphs live.
    pub fn fiber_radius(&self) -> f64 {
        0.5 * self.rho
    }

    /// `kappa (1/delta + 1/(lambda + mu))`, the a-priori Lipschitz bound of
    /// the integral operators on a ball where `dh` is bounded by `kappa`.
    pub fn contraction_factor(&self, kappa: f64) -> f64 {
        kappa * (1.0 / self.delta + 1.0 / (self.lambda + self.mu))
    }

    /// Named checks of every ladder invariant.
    pub fn invariant_checks(&self) -> Vec<(&'static str, bool)> {
        let monotone = self.kappa.values.windows(2).all(|w| w[0] <= w[1]) && self.kappa.values[0] == 0.0;
        vec![
            ("0 < lambda < d", self.lambda > 0.0 && self.lambda < self.gap),
            (
                "0 < delta < mu < d",
                self.delta > 0.0 && self.delta < self.mu && self.mu < self.gap,
            ),
            ("mu = lambda + delta", self.mu == self.lambda + self.delta),
            (
                "lambda < mu < (d + lambda)/2",
                self.mu > self.lambda && self.mu < 0.5 * (self.gap + self.lambda),
            ),
            ("0 < rho < 1", self.rho > 0.0 && self.rho < 1.0),
            ("kappa(rho)(4/lambda + 1/delta + 1) <= 1/8", self.smallness <= 0.125),
            ("0 < varkappa <= 1", self.varkappa > 0.0 && self.varkappa <= 1.0),
            (
                "0 < epsilon < varsigma",
                self.epsilon > 0.0 && self.epsilon < self.varsigma,
            ),
            (
                "T1 = -ln varkappa / lambda",
                self.t1 == -self.varkappa.ln() / self.lambda,
            ),
            ("T0 = max(T1, T2, 1)", self.t0 == self.t1.max(self.t2).max(1.0)),
            ("exp(-T2 mu / 4) <= 1/8", (-self.t2 * self.mu / 4.0).exp() <= 0.125),
            ("c1 = 2(|lambda_1| + 1)", self.c1 == 2.0 * (self.lambda_min.abs() + 1.0)),
            (
                "c* = 2 kappa*(1/delta + 1/lambda) + 1/4",
                match (self.kappa_star, self.c_star) {
                    (Some(k), Some(c)) => c == 2.0 * k * (1.0 / self.delta + 1.0 / self.lambda) + 0.25,
                    (None, None) => true,
                    _ => false,
                },
            ),
            ("kappa non-decreasing with kappa(0) = 0", monotone),
        ]
    }

    pub fn invariants_hold(&self) -> bool {
        self.invariant_checks().iter().all(|(_, ok)| *ok)
    }

    /// Every scalar constant, in a fixed order, for reports.
    pub fn echo(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("d", self.gap),
            ("lambda_1", self.lambda_min),
            ("lambda_n", self.lambda_max),
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("mu", self.mu),
            ("rho0", self.trust_radius),
            ("manifold_rho", self.manifold_rho),
            ("R", self.manifold_radius),
            ("rho", self.rho),
            ("kappa_rho", self.kappa_rho),
            ("smallness", self.smallness),
            ("varkappa", self.varkappa),
            ("epsilon", self.epsilon),
            ("varsigma", self.varsigma),
            ("T1", self.t1),
            ("T2", self.t2),
            ("T0", self.t0),
            ("T_max", self.t_max),
            ("c1", self.c1),
        ];
        if let (Some(k), Some(c)) = (self.kappa_star, self.c_star) {
            v.push(("kappa_star", k));
            v.push(("c_star", c));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{default_rho_grid, lipschitz_modulus};
    use crate::reference;

    fn ladder_for(p: &crate::local_model::GradientProblem, choices: &LadderChoices) -> Result<RateLadder> {
        let s = p.split().unwrap();
        let k = lipschitz_modulus(p, &s, &default_rho_grid(p.trust_radius), 300, 3).unwrap();
        build_ladder(&s, k, choices)
    }

    #[test]
    fn quadratic_ladder_defaults() {
        let l = ladder_for(&reference::quadratic(), &LadderChoices::default()).unwrap();
        assert_eq!(l.lambda, 0.5);
        assert!(l.delta < 0.25 && l.mu > 0.5 && l.mu < 0.75);
        assert_eq!(l.kappa_rho, 0.0);
        assert_eq!(l.manifold_rho, 0.5);
        assert!((l.t1 - (-l.varkappa.ln() / 0.5)).abs() < 1e-15);
        assert!(l.invariants_hold(), "{:?}", l.invariant_checks());
    }

    #[test]
    fn t1_from_varkappa_override() {
        let choices = LadderChoices {
            varkappa: Some(0.1),
            lambda: Some(0.5),
            ..Default::default()
        };
        let l = ladder_for(&reference::quadratic(), &choices).unwrap();
        assert!((l.t1 - 10f64.ln() / 0.5).abs() < 1e-14);
        assert!((l.t1 - 4.605).abs() < 1e-3);
    }

    #[test]
    fn t2_closed_form() {
        let t2 = horizon_t2(0.6);
        assert!((t2 - 4.0 * 8f64.ln() / 0.6).abs() < 1e-12);
        assert!((t2 - 13.86).abs() < 5e-3);
        assert!((-0.15 * t2).exp() <= 0.125);
    }

    #[test]
    fn quartic_ladder_satisfies_smallness() {
        let l = ladder_for(&reference::quartic(), &LadderChoices::default()).unwrap();
        assert!(l.smallness <= 0.125);
        assert!(l.rho <= l.manifold_rho);
        assert!(l.invariants_hold(), "{:?}", l.invariant_checks());
        assert!(l.c_star.unwrap() >= 0.25);
    }

    #[test]
    fn infeasible_choices_are_reported() {
        let p = reference::quartic();
        for choices in [
            LadderChoices {
                lambda: Some(1.5),
                ..Default::default()
            },
            LadderChoices {
                rho: Some(0.9),
                ..Default::default()
            },
            LadderChoices {
                epsilon: Some(1.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(ladder_for(&p, &choices), Err(Error::LadderInfeasible(_))));
        }
    }
}
