use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lyapunov_perron::{GraphKind, GraphSample};
use crate::spectral::Subspace;

/// `(x, y) -> (x - G(y), y - F(x))` with `x = pi- p`, `y = pi+ p`, from
/// sampled unstable (`F`) and stable (`G`) graphs.
pub fn flatten(graph_f: &GraphSample, graph_g: &GraphSample, point: &DVector<f64>) -> Result<DVector<f64>> {
    if graph_f.kind != GraphKind::FInf || graph_g.kind != GraphKind::GInf {
        return Err(Error::Config(
            "flatten needs an unstable and a stable graph sample".into(),
        ));
    }
    let split = &graph_f.split;
    let x = split.project(Subspace::Minus, point);
    let y = split.project(Subspace::Plus, point);
    let f = graph_f.interpolate(&x)?;
    let g = graph_g.interpolate(&y)?;
    Ok(x - g + y - f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_model::{LadderChoices, LocalModel, Numerics};
    use crate::lyapunov_perron::{graph_f_inf, graph_g_inf, BaseGrid, TensorGrid};
    use crate::reference;

    fn graphs(m: &LocalModel, per_axis: usize) -> (GraphSample, GraphSample) {
        let r = m.ladder.manifold_radius;
        let f = graph_f_inf(
            m,
            BaseGrid::Tensor(TensorGrid::inscribed(&m.split, Subspace::Minus, r, per_axis)),
        )
        .unwrap();
        let g = graph_g_inf(
            m,
            BaseGrid::Tensor(TensorGrid::inscribed(&m.split, Subspace::Plus, r, per_axis)),
        )
        .unwrap();
        (f, g)
    }

    #[test]
    fn quadratic_flattening_is_identity() {
        let m = LocalModel::build(reference::quadratic(), &LadderChoices::default(), Numerics::default()).unwrap();
        let (f, g) = graphs(&m, 5);
        let p = DVector::from_vec(vec![0.1, -0.05]);
        assert_eq!(flatten(&f, &g, &p).unwrap(), p);
        assert_eq!(flatten(&f, &g, &DVector::zeros(2)).unwrap(), DVector::zeros(2));
        assert!(matches!(
            flatten(&f, &g, &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::OutsideSampledDomain(_))
        ));
    }

    #[test]
    fn curved_unstable_graph_lands_in_e_minus() {
        let numerics = Numerics {
            kappa_samples: 400,
            ..Numerics::default()
        };
        let m = LocalModel::build(reference::curved(), &LadderChoices::default(), numerics).unwrap();
        let (f, g) = graphs(&m, 17);
        let tol = f.interpolation_tolerance() + g.interpolation_tolerance();
        assert!(f.max_value_norm() > 10.0 * tol, "graph should be visibly curved");
        for i in 0..f.len() {
            let image = flatten(&f, &g, &f.graph_point(i)).unwrap();
            let off = m.split.project(Subspace::Plus, &image).norm();
            assert!(off <= 5.0 * tol, "{off} > 5 * {tol}");
        }
        for i in 0..g.len() {
            let image = flatten(&f, &g, &g.graph_point(i)).unwrap();
            assert!(m.split.project(Subspace::Minus, &image).norm() <= 5.0 * tol);
        }
    }
}
