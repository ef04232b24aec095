use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// How a failure should be reported by the command line front end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    /// A quantitative bound was violated beyond its tolerance budget.
    Assertion,
    /// The input problem or parameters are unusable.
    Configuration,
    /// A numerical solver failed to converge or left its admissible region.
    Solver,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Assertion => 2,
            Category::Configuration => 3,
            Category::Solver => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate critical point: eigenvalue {eigenvalue:.3e} lies within {tol:.3e} of zero")]
    DegenerateCriticalPoint { eigenvalue: f64, tol: f64 },

    #[error("hessian is not symmetric: asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },

    #[error("Morse index {index} leaves no stable/unstable splitting in dimension {dimension}")]
    IndexOutOfRange { index: usize, dimension: usize },

    #[error("point of norm {norm:.3e} lies outside the trust radius {radius:.3e}")]
    OutOfTrustRegion { norm: f64, radius: f64 },

    #[error("rate ladder infeasible: {0}")]
    LadderInfeasible(String),

    #[error("point outside the sampled graph domain: {0}")]
    OutsideSampledDomain(String),

    #[error("integration blew up at t = {time:.6e} (state norm {norm:.3e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("point is not on the unstable manifold (graph residual {residual:.3e} > {tol:.3e})")]
    NotOnUnstableManifold { residual: f64, tol: f64 },

    #[error("level c - {level:.3e} not reached on the sampled graph (lowest offset {reached:.3e})")]
    LevelNotReached { level: f64, reached: f64 },

    #[error("curve left its admissible ball: weighted norm {norm:.6e} > budget {budget:.6e}")]
    NormBudgetExceeded { norm: f64, budget: f64 },

    #[error("horizon mismatch: {0}")]
    HorizonMismatch(String),

    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("endpoint {distance:.6e} away from the fiber centre exceeds {bound:.6e}")]
    EndpointViolation { distance: f64, bound: f64 },

    #[error("finite-difference stencil of size {extent:.3e} leaves the domain of radius {radius:.3e}")]
    StepTooLarge { extent: f64, radius: f64 },

    #[error("missing regularity flag: {0}")]
    FlagMissing(&'static str),

    #[error("sampled exit-set neighbourhood splits into {components} components")]
    ComponentAmbiguous { components: usize },

    #[error("leaves {first} and {second} intersect (separation {separation:.3e})")]
    DisjointnessViolation {
        first: String,
        second: String,
        separation: f64,
    },

    #[error("point with stable coordinate norm {norm:.3e} lies outside the leaf domain {radius:.3e}")]
    OutsideLeafDomain { norm: f64, radius: f64 },

    #[error("retraction check {check} failed: {detail}")]
    RetractViolation { check: &'static str, detail: String },

    #[error("bisection bracket lost: both ends escape on the {side} side")]
    BracketLost { side: &'static str },

    #[error("shooting Newton iteration diverged after {iterations} steps (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        use Error::*;
        match self {
            EndpointViolation { .. } | DisjointnessViolation { .. } | RetractViolation { .. } | BoundViolated(_) => {
                Category::Assertion
            }
            BlowUp { .. }
            | NormBudgetExceeded { .. }
            | NoConvergence { .. }
            | BracketLost { .. }
            | NewtonDiverged { .. } => Category::Solver,
            _ => Category::Configuration,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            DegenerateCriticalPoint { .. } => "DegenerateCriticalPoint",
            NotSymmetric { .. } => "NotSymmetric",
            IndexOutOfRange { .. } => "IndexOutOfRange",
            OutOfTrustRegion { .. } => "OutOfTrustRegion",
            LadderInfeasible(_) => "LadderInfeasible",
            OutsideSampledDomain(_) => "OutsideSampledDomain",
            BlowUp { .. } => "BlowUp",
            NotOnUnstableManifold { .. } => "NotOnUnstableManifold",
            LevelNotReached { .. } => "LevelNotReached",
            NormBudgetExceeded { .. } => "NormBudgetExceeded",
            HorizonMismatch(_) => "HorizonMismatch",
            NoConvergence { .. } => "NoConvergence",
            EndpointViolation { .. } => "EndpointViolation",
            StepTooLarge { .. } => "StepTooLarge",
            FlagMissing(_) => "FlagMissing",
            ComponentAmbiguous { .. } => "ComponentAmbiguous",
            DisjointnessViolation { .. } => "DisjointnessViolation",
            OutsideLeafDomain { .. } => "OutsideLeafDomain",
            RetractViolation { .. } => "RetractViolation",
            BracketLost { .. } => "BracketLost",
            NewtonDiverged { .. } => "NewtonDiverged",
            BoundViolated(_) => "BoundViolated",
            Config(_) => "Config",
            Io(_) => "Io",
            Json(_) => "Json",
        }
    }
}
