//! Choosing the layer after which the transformer stack is cut.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default plateau tolerance, in absolute score units.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("convexity curve is empty")]
    EmptyCurve,
    #[error("layer indices must be strictly increasing ({next} after {prev})")]
    UnorderedLayers { prev: usize, next: usize },
    #[error("score {score} at layer {layer} is outside [0, 1]")]
    ScoreOutOfRange { layer: usize, score: f64 },
    #[error("epsilon must be a finite number >= 0, got {0}")]
    BadEpsilon(f64),
    #[error("cannot prune to {pruned_to} of {total_layers} layers")]
    PrunedBeyondTotal { pruned_to: usize, total_layers: usize },
    #[error("parameter counts must be positive")]
    BadParamCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// Earliest layer with the highest score.
    Argmax,
    /// Earliest layer within epsilon of the highest score.
    Plateau,
}

/// `(layer_index, score)` pairs with strictly increasing layer indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct ConvexityCurve(Vec<(usize, f64)>);

impl ConvexityCurve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self, PruneError> {
        if points.is_empty() {
            return Err(PruneError::EmptyCurve);
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(PruneError::UnorderedLayers {
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        if let Some(&(layer, score)) = points.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
            return Err(PruneError::ScoreOutOfRange { layer, score });
        }
        Ok(Self(points))
    }

    /// Curve over consecutive layers `first, first + 1, ...`.
    pub fn from_scores(first: usize, scores: &[f64]) -> Result<Self, PruneError> {
        Self::new(scores.iter().enumerate().map(|(i, &s)| (first + i, s)).collect())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn max_score(&self) -> f64 {
        self.0.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<(usize, f64)>> for ConvexityCurve {
    type Error = PruneError;

    fn try_from(v: Vec<(usize, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ConvexityCurve> for Vec<(usize, f64)> {
    fn from(c: ConvexityCurve) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub mode: PruneMode,
    pub epsilon: f64,
    pub selected_layer: usize,
    pub curve: ConvexityCurve,
}

pub fn select_prune_layer(curve: &ConvexityCurve, mode: PruneMode, epsilon: f64) -> Result<PruneDecision, PruneError> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(PruneError::BadEpsilon(epsilon));
    }
    let best = curve.max_score();
    let tolerance = match mode {
        PruneMode::Argmax => 0.0,
        PruneMode::Plateau => epsilon,
    };
    let selected_layer = curve
        .points()
        .iter()
        .find(|&&(_, s)| best - s <= tolerance)
        .map(|&(l, _)| l)
        .expect("the maximum is always within tolerance of itself");
    Ok(PruneDecision {
        mode,
        epsilon,
        selected_layer,
        curve: curve.clone(),
    })
}

/// Fraction of all parameters removed by keeping `pruned_to` of
/// `total_layers` identical layers.
pub fn parameter_reduction_estimate(
    total_layers: usize,
    pruned_to: usize,
    per_layer_params: u64,
    non_layer_params: u64,
) -> Result<f64, PruneError> {
    if pruned_to > total_layers {
        return Err(PruneError::PrunedBeyondTotal {
            pruned_to,
            total_layers,
        });
    }
    if per_layer_params == 0 {
        return Err(PruneError::BadParamCount);
    }
    let removed = (total_layers - pruned_to) as f64 * per_layer_params as f64;
    let total = total_layers as f64 * per_layer_params as f64 + non_layer_params as f64;
    Ok(removed / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plateau_example() {
        let curve = ConvexityCurve::from_scores(0, &[0.10, 0.50, 0.70, 0.75, 0.755, 0.752]).unwrap();
        let d = select_prune_layer(&curve, PruneMode::Plateau, 0.01).unwrap();
        assert_eq!(d.selected_layer, 3);
        assert_eq!(select_prune_layer(&curve, PruneMode::Argmax, 0.01).unwrap().selected_layer, 4);
    }

    #[test]
    fn strictly_increasing_plateau_zero_picks_last() {
        let curve = ConvexityCurve::from_scores(1, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(select_prune_layer(&curve, PruneMode::Plateau, 0.0).unwrap().selected_layer, 4);
    }

    #[test]
    fn argmax_tie_prefers_earliest() {
        let curve = ConvexityCurve::new(vec![(2, 0.3), (4, 0.5), (6, 0.6), (8, 0.7), (10, 0.7), (12, 0.65)]).unwrap();
        assert_eq!(select_prune_layer(&curve, PruneMode::Argmax, 0.0).unwrap().selected_layer, 8);
    }

    #[test]
    fn curve_validation() {
        assert_eq!(ConvexityCurve::new(vec![]), Err(PruneError::EmptyCurve));
        assert!(matches!(
            ConvexityCurve::new(vec![(1, 0.1), (1, 0.2)]),
            Err(PruneError::UnorderedLayers { .. })
        ));
        assert!(matches!(
            ConvexityCurve::new(vec![(1, 1.5)]),
            Err(PruneError::ScoreOutOfRange { .. })
        ));
        let c = ConvexityCurve::from_scores(0, &[0.5]).unwrap();
        assert_eq!(select_prune_layer(&c, PruneMode::Plateau, -0.1), Err(PruneError::BadEpsilon(-0.1)));
    }

    #[test]
    fn decision_json_shape() {
        let c = ConvexityCurve::from_scores(1, &[0.25, 0.5]).unwrap();
        let d = select_prune_layer(&c, PruneMode::Plateau, 0.01).unwrap();
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"mode":"plateau","epsilon":0.01,"selected_layer":2,"curve":[[1,0.25],[2,0.5]]}"#
        );
        let back: PruneDecision = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn reduction_arithmetic() {
        assert_eq!(parameter_reduction_estimate(12, 12, 7_087_872, 9_000_000).unwrap(), 0.0);
        assert_eq!(parameter_reduction_estimate(12, 8, 100, 0).unwrap(), 1.0 / 3.0);
        assert_eq!(parameter_reduction_estimate(12, 0, 100, 0).unwrap(), 1.0);
        assert!(matches!(
            parameter_reduction_estimate(12, 13, 100, 0),
            Err(PruneError::PrunedBeyondTotal { .. })
        ));
        assert_eq!(parameter_reduction_estimate(12, 2, 0, 5), Err(PruneError::BadParamCount));
    }

    proptest! {
        #[test]
        fn plateau_is_monotone_in_epsilon(
            scores in prop::collection::vec(0.0f64..=1.0, 1..30),
            e1 in 0.0f64..0.5,
            e2 in 0.0f64..0.5,
        ) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let c = ConvexityCurve::from_scores(0, &scores).unwrap();
            let a = select_prune_layer(&c, PruneMode::Plateau, lo).unwrap().selected_layer;
            let b = select_prune_layer(&c, PruneMode::Plateau, hi).unwrap().selected_layer;
            prop_assert!(b <= a);
        }

        #[test]
        fn plateau_zero_equals_argmax(scores in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let c = ConvexityCurve::from_scores(0, &scores).unwrap();
            prop_assert_eq!(
                select_prune_layer(&c, PruneMode::Plateau, 0.0).unwrap().selected_layer,
                select_prune_layer(&c, PruneMode::Argmax, 0.0).unwrap().selected_layer
            );
        }
    }
}
