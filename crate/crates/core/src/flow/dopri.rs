//! Dormand-Prince 5(4) with the standard fourth-order continuous extension.

use nalgebra::DVector;

use crate::error::{Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];
const MAX_STEPS: usize = 1_000_000;

/// Dense-output coefficients of one accepted step.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    coeffs: [DVector<f64>; 5],
}

impl DenseStep {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))
    }

    /// The same step moved later in time by `offset`.
    pub fn shifted(mut self, offset: f64) -> Self {
        self.t0 += offset;
        self
    }

    /// The dense output of the leading `n` components.
    pub fn truncated(self, n: usize) -> Self {
        let coeffs = self.coeffs.map(|c| c.rows(0, n).into_owned());
        Self {
            t0: self.t0,
            h: self.h,
            coeffs,
        }
    }
}

/// Result of an adaptive integration: accepted step endpoints and their
/// dense output.
#[derive(Clone, Debug)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub steps: Vec<DenseStep>,
    /// Whether the stop predicate ended the integration before the horizon.
    pub stopped: bool,
}

pub struct Options<'a> {
    pub rtol: f64,
    pub atol: f64,
    pub blowup_norm: f64,
    pub stop: Option<&'a (dyn Fn(f64, &DVector<f64>) -> bool + Sync)>,
}

fn error_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, rtol: f64, atol: &DVector<f64>) -> f64 {
    let n = err.len() as f64;
    let s: f64 = (0..err.len())
        .map(|i| {
            let sc = atol[i] + rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `y' = rhs(y)` from `t0` to `t1 > t0`, landing exactly on `t1`.
pub fn integrate(
    rhs: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y0: DVector<f64>,
    t0: f64,
    t1: f64,
    o: &Options,
) -> Result<Solution> {
    let atol = DVector::from_element(y0.len(), o.atol);
    integrate_weighted(rhs, y0, t0, t1, o, &atol)
}

/// As [`integrate`] with a per-component absolute tolerance; `o.atol` is
/// ignored.
pub fn integrate_weighted(
    rhs: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    y0: DVector<f64>,
    t0: f64,
    t1: f64,
    o: &Options,
    atol: &DVector<f64>,
) -> Result<Solution> {
    let mut sol = Solution {
        times: vec![t0],
        states: vec![y0.clone()],
        steps: Vec::new(),
        stopped: false,
    };
    if t1 <= t0 {
        return Ok(sol);
    }
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(&y);
    let scale = atol.max() + o.rtol * y.amax();
    let d0 = y.amax() / scale;
    let d1 = k1.amax() / scale;
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(t1 - t0).max(1e-12 * (t1 - t0));
    let mut steps = 0;
    while t < t1 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::NoConvergence {
                iterations: steps,
                residual: f64::NAN,
            });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        k.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    ys.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k.push(rhs(&ys));
        }
        let mut y1 = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            if A[6][j] != 0.0 {
                y1.axpy(h * A[6][j], kj, 1.0);
            }
        }
        let mut err = DVector::zeros(y.len());
        for (j, kj) in k.iter().enumerate() {
            if E[j] != 0.0 {
                err.axpy(h * E[j], kj, 1.0);
            }
        }
        let e = error_norm(&err, &y, &y1, o.rtol, atol);
        if !e.is_finite() {
            h *= 0.1;
            continue;
        }
        if e <= 1.0 {
            let r2 = &y1 - &y;
            let r3 = h * &k[0] - &r2;
            let r4 = &r2 - h * &k[6] - &r3;
            let mut r5 = DVector::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                if D[j] != 0.0 {
                    r5.axpy(h * D[j], kj, 1.0);
                }
            }
            sol.steps.push(DenseStep {
                t0: t,
                h,
                coeffs: [y.clone(), r2, r3, r4, r5],
            });
            t = if last { t1 } else { t + h };
            y = y1;
            k1 = k[6].clone();
            sol.times.push(t);
            sol.states.push(y.clone());
            let norm = y.norm();
            if norm > o.blowup_norm || !norm.is_finite() {
                return Err(Error::BlowUp { time: t, norm });
            }
            if let Some(stop) = o.stop {
                if stop(t, &y) {
                    sol.stopped = t < t1;
                    return Ok(sol);
                }
            }
        }
        let fac = (0.9 * e.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        h *= fac;
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(tol: f64) -> Options<'static> {
        Options {
            rtol: tol,
            atol: tol * 1e-6,
            blowup_norm: 1e6,
            stop: None,
        }
    }

    #[test]
    fn linear_decay_is_accurate() {
        let rhs = |y: &DVector<f64>| DVector::from_vec(vec![y[0], -2.0 * y[1]]);
        let sol = integrate(&rhs, DVector::from_vec(vec![0.1, 0.3]), 0.0, 2.0, &opts(1e-11)).unwrap();
        let y = sol.states.last().unwrap();
        assert_eq!(*sol.times.last().unwrap(), 2.0);
        assert!((y[0] - 0.1 * 2f64.exp()).abs() < 1e-11);
        assert!((y[1] - 0.3 * (-4f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn dense_output_is_accurate() {
        let rhs = |y: &DVector<f64>| DVector::from_vec(vec![y[1], -y[0]]);
        let sol = integrate(&rhs, DVector::from_vec(vec![0.0, 1.0]), 0.0, 5.0, &opts(1e-10)).unwrap();
        for step in &sol.steps {
            let t = step.t0 + 0.37 * step.h;
            assert!((step.eval(t)[0] - t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn blow_up_is_detected() {
        let rhs = |y: &DVector<f64>| DVector::from_vec(vec![y[0] * y[0]]);
        let o = Options {
            blowup_norm: 1e3,
            ..opts(1e-8)
        };
        let r = integrate(&rhs, DVector::from_vec(vec![1.0]), 0.0, 2.0, &o);
        assert!(matches!(r, Err(Error::BlowUp { .. })));
    }
}
