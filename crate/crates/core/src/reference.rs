//! Built-in reference problems, all with the critical point at the origin.

use nalgebra::DVector;

use crate::local_model::{GradientProblem, Polynomial};

fn make(name: &str, n: usize, terms: &[(&[u32], f64)]) -> GradientProblem {
    let terms = terms.iter().map(|(e, c)| (e.to_vec(), *c)).collect();
    let poly = Polynomial::new(n, terms).expect("reference polynomial is well formed");
    GradientProblem::new(name, poly, DVector::zeros(n), 1.0).expect("origin is a critical point")
}

/// `f = -x1^2/2 + x2^2`, Hessian `diag(-1, 2)`.
pub fn quadratic() -> GradientProblem {
    make("quadratic", 2, &[(&[2, 0], -0.5), (&[0, 2], 1.0)])
}

/// `f = -x1^2/2 + x2^2 + x1^2 x2^2 / 4`.
pub fn quartic() -> GradientProblem {
    make("quartic", 2, &[(&[2, 0], -0.5), (&[0, 2], 1.0), (&[2, 2], 0.25)])
}

/// `f = -x1^2 + x2^2/2 + 3 x3^2/2 + x1 x2 x3 / 2`, Hessian `diag(-2, 1, 3)`.
///
/// The unstable axis is invariant while the stable manifold is curved.
pub fn cubic3d() -> GradientProblem {
    make(
        "cubic3d",
        3,
        &[
            (&[2, 0, 0], -1.0),
            (&[0, 2, 0], 0.5),
            (&[0, 0, 2], 1.5),
            (&[1, 1, 1], 0.5),
        ],
    )
}

/// `f = -x1^2/2 + x2^2 + x1^2 x2 / 2`: curved unstable manifold, flat stable axis.
pub fn curved() -> GradientProblem {
    make("curved", 2, &[(&[2, 0], -0.5), (&[0, 2], 1.0), (&[2, 1], 0.5)])
}

/// `f = -3 x1^2/2 - x2^2/2 + x3^2 + 5 x4^2/2 + x1 x2 x3^2 / 4`: Morse index two.
pub fn index_two() -> GradientProblem {
    make(
        "index_two",
        4,
        &[
            (&[2, 0, 0, 0], -1.5),
            (&[0, 2, 0, 0], -0.5),
            (&[0, 0, 2, 0], 1.0),
            (&[0, 0, 0, 2], 2.5),
            (&[1, 1, 2, 0], 0.25),
        ],
    )
}
