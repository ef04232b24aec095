//! Local stable and unstable manifolds, backward lambda-lemma graph maps,
//! invariant stable foliations and the induced thickening semi-flow for
//! gradient flows near a hyperbolic critical point.

pub mod cli;
pub mod error;
pub mod flow;
pub mod foliation;
pub mod lambda_verify;
pub mod local_model;
pub mod lyapunov_perron;
pub mod oracle;
pub mod reference;
pub mod spectral;

pub use error::{Error, Result};
