//! Preference scalarizers: monotone, concave, `ℓ∞`-Lipschitz utilities.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pareto::check_dim;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarizerKind {
    WeightedSum,
    Chebyshev,
    Gini,
}

impl ScalarizerKind {
    pub fn label(self) -> &'static str {
        match self {
            ScalarizerKind::WeightedSum => "weighted-sum",
            ScalarizerKind::Chebyshev => "chebyshev",
            ScalarizerKind::Gini => "gini",
        }
    }
}

/// A validated scalarizer. An optional positive affine transform
/// `scale·φ + offset` is applied on top of the base utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizerSpec {
    kind: ScalarizerKind,
    weights: Vec<f64>,
    scale: f64,
    offset: f64,
}

impl ScalarizerSpec {
    /// Weighted-sum and Chebyshev weights must lie on the simplex; Gini
    /// weights must be nonincreasing and nonnegative.
    pub fn new(kind: ScalarizerKind, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("scalarizer needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("scalarizer weights must be finite and nonnegative"));
        }
        match kind {
            ScalarizerKind::WeightedSum | ScalarizerKind::Chebyshev => {
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(invalid(format!(
                        "{} weights must sum to 1, got {sum}",
                        kind.label()
                    )));
                }
                if kind == ScalarizerKind::Chebyshev && weights.contains(&0.0) {
                    log::warn!("chebyshev weight of zero collapses the utility to 0");
                }
            }
            ScalarizerKind::Gini => {
                if weights.windows(2).any(|w| w[0] < w[1]) {
                    return Err(invalid("gini weights must be sorted nonincreasing"));
                }
            }
        }
        Ok(Self {
            kind,
            weights,
            scale: 1.0,
            offset: 0.0,
        })
    }

    pub fn uniform_weighted_sum(d: usize) -> Self {
        Self::new(ScalarizerKind::WeightedSum, vec![1.0 / d as f64; d])
            .expect("uniform weights lie on the simplex")
    }

    /// The same preference under `scale·φ + offset`, `scale > 0`.
    pub fn with_affine(mut self, scale: f64, offset: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(invalid("affine scale must be positive and finite"));
        }
        self.scale = scale;
        self.offset = offset;
        Ok(self)
    }

    pub fn kind(&self) -> ScalarizerKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `φ(u)`, checking the dimension.
    pub fn evaluate(&self, u: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), u.len())?;
        Ok(self.value(u))
    }

    /// `φ(u)` without the dimension check; callers guarantee `u.len() == d`.
    pub fn value(&self, u: &[f64]) -> f64 {
        let w = &self.weights;
        let base = match self.kind {
            ScalarizerKind::WeightedSum => w.iter().zip(u).map(|(a, b)| a * b).sum(),
            ScalarizerKind::Chebyshev => w
                .iter()
                .zip(u)
                .map(|(a, b)| a * b)
                .fold(f64::INFINITY, f64::min),
            ScalarizerKind::Gini => {
                let mut sorted = u.to_vec();
                sorted.sort_by(f64::total_cmp);
                w.iter().zip(&sorted).map(|(a, b)| a * b).sum()
            }
        };
        self.scale * base + self.offset
    }

    /// Lipschitz constant with respect to `ℓ∞`.
    pub fn lipschitz_const(&self) -> f64 {
        let w = &self.weights;
        let base = match self.kind {
            ScalarizerKind::WeightedSum | ScalarizerKind::Gini => w.iter().sum(),
            ScalarizerKind::Chebyshev => w.iter().copied().fold(0.0, f64::max),
        };
        self.scale * base
    }
}
