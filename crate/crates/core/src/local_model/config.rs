use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{GradientProblem, LadderChoices, Polynomial};
use crate::error::{Error, Result};

/// JSON problem description: a polynomial objective given as
/// `(multi-index, coefficient)` pairs and its critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub dimension: usize,
    pub critical_point: Vec<f64>,
    pub objective: Vec<(Vec<u32>, f64)>,
    #[serde(default)]
    pub trust_radius: Option<f64>,
    #[serde(default)]
    pub ladder_overrides: LadderChoices,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid problem config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_problem(&self) -> Result<GradientProblem> {
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let poly = Polynomial::new(self.dimension, self.objective.clone())?;
        GradientProblem::new(
            self.name.clone().unwrap_or_else(|| "problem".into()),
            poly,
            DVector::from_vec(self.critical_point.clone()),
            self.trust_radius.unwrap_or(1.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quartic() {
        let cfg = ProblemConfig::from_json(
            r#"{"dimension": 2, "critical_point": [0, 0],
                "objective": [[[2,0], -0.5], [[0,2], 1.0], [[2,2], 0.25]],
                "ladder_overrides": {"lambda": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.ladder_overrides.lambda, Some(0.5));
        let p = cfg.to_problem().unwrap();
        assert_eq!(p.polynomial().degree(), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ProblemConfig::from_json(r#"{"dimension": 2}"#).is_err());
        let wrong_point =
            ProblemConfig::from_json(r#"{"dimension": 1, "critical_point": [1.0], "objective": [[[2], 1.0]]}"#)
                .unwrap();
        assert!(wrong_point.to_problem().is_err());
        assert!(
            ProblemConfig::from_json(r#"{"dimension": 1, "critical_point": [0.0], "objective": [], "bogus": 1}"#)
                .is_err()
        );
    }
}
