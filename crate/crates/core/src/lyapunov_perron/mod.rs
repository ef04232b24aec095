//! Exponentially weighted curve spaces, the three contraction operators and
//! the graph maps they produce.

pub mod curve;
pub mod graphs;
pub mod grid;
pub mod kernel;
pub mod operators;

pub use curve::{Curve, Horizon};
pub use graphs::{
    graph_derivative, graph_f_inf, graph_g_inf, graph_g_t, sample_graph, BaseGrid, DirectionalDerivative, FiniteGraph,
    GraphEval, GraphKind, GraphMap, GraphSample, StableGraph, TensorGrid, UnstableGraph,
};
pub use grid::PanelGrid;
pub use kernel::Dichotomy;
pub use operators::{fixed_point, FixedPoint, LpOperator, MixedSolution, OperatorKind, StableOrbit, UnstableOrbit};
