//! Negative-oriented conformity scores and their symmetrization over
//! protected-attribute interventions.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Output;

/// Conformity score family. Smaller is more conforming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreKind {
    /// `|f(x, a) - y|`
    AbsResidual,
    /// `1 - p_y`
    Lac,
    /// Mass of labels strictly more probable than `y` (deterministic APS).
    Aps,
    /// APS plus `lambda * (rank(y) - k_reg)_+`.
    Raps { lambda: f64, k_reg: usize },
}

impl ScoreKind {
    pub fn raps_default() -> Self {
        ScoreKind::Raps { lambda: 0.5, k_reg: 2 }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, ScoreKind::AbsResidual)
    }
}

/// Permutation-invariant aggregator over per-intervention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Max,
    Min,
}

impl Aggregator {
    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Min => "min",
        }
    }

    /// Aggregates a nonempty list of scores.
    pub fn apply(&self, scores: &[f64]) -> f64 {
        debug_assert!(!scores.is_empty());
        match self {
            Aggregator::Mean => {
                // summing in sorted order makes the result bitwise order-independent
                let mut sorted = scores.to_vec();
                sorted.sort_by(f64::total_cmp);
                if sorted[0] == sorted[sorted.len() - 1] {
                    return sorted[0];
                }
                sorted.iter().sum::<f64>() / sorted.len() as f64
            }
            Aggregator::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Label a score is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

/// Class indices sorted by descending probability; ties go to the lower index.
pub fn rank_ties(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    // stable sort keeps ascending index order among equal probabilities
    order.sort_by(|&i, &j| p[j].partial_cmp(&p[i]).unwrap_or(Ordering::Equal));
    order
}

/// 1-based rank of `y` in [`rank_ties`] order.
pub fn rank_of(p: &[f64], y: usize) -> usize {
    // labels ahead of y: strictly larger, or equal with a smaller index
    1 + p
        .iter()
        .enumerate()
        .filter(|&(j, &pj)| pj > p[y] || (pj == p[y] && j < y))
        .count()
}

fn aps(p: &[f64], y: usize) -> f64 {
    p.iter().filter(|&&q| q > p[y]).sum()
}

fn class_score(kind: &ScoreKind, p: &[f64], y: usize) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::InvalidParameter(format!("label {y} outside 0..{}", p.len())));
    }
    Ok(match *kind {
        ScoreKind::Lac => 1.0 - p[y],
        ScoreKind::Aps => aps(p, y),
        ScoreKind::Raps { lambda, k_reg } => {
            let excess = rank_of(p, y).saturating_sub(k_reg);
            aps(p, y) + lambda * excess as f64
        }
        ScoreKind::AbsResidual => unreachable!(),
    })
}

/// Conformity score of label `y` given a point prediction.
pub fn score(kind: &ScoreKind, prediction: &Output, y: Target) -> Result<f64> {
    match (kind, prediction, y) {
        (ScoreKind::AbsResidual, Output::Real(f), Target::Real(y)) => Ok((f - y).abs()),
        (ScoreKind::AbsResidual, _, _) => Err(Error::InvalidParameter(
            "absolute residual needs a real prediction and a real label".into(),
        )),
        (k, Output::Probs(p), Target::Class(c)) => class_score(k, p, c),
        _ => Err(Error::InvalidParameter(format!(
            "{kind:?} needs a probability vector and a class label"
        ))),
    }
}

/// `Agg { s(pred_a', y) : a' }` over one prediction per attribute value.
pub fn symmetrize(kind: &ScoreKind, agg: Aggregator, per_intervention: &[Output], y: Target) -> Result<f64> {
    if per_intervention.is_empty() {
        return Err(Error::InvalidParameter("no per-intervention predictions".into()));
    }
    let scores: Vec<f64> = per_intervention
        .iter()
        .map(|p| score(kind, p, y))
        .collect::<Result<_>>()?;
    Ok(agg.apply(&scores))
}
