//! Evaluation metrics: coverage, set size, counterfactual set disparity,
//! total effect, MSE and accuracy.

use serde::{Deserialize, Serialize};

use crate::conformal::{PredictionSet, RowSets};
use crate::error::{Error, Result};
use crate::models::Output;
use crate::scores::Target;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn nonempty<T>(xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        Err(Error::InvalidParameter("metric over zero rows".into()))
    } else {
        Ok(())
    }
}

/// Fraction of rows whose label lies in the row's set.
pub fn coverage(sets: &[PredictionSet], y: &[Target]) -> Result<f64> {
    check_len(sets.len(), y.len())?;
    nonempty(sets)?;
    let hits = sets.iter().zip(y).filter(|(s, &t)| s.contains(t)).count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Mean cardinality (label sets) or Lebesgue measure (interval sets).
pub fn avg_size(sets: &[PredictionSet]) -> Result<f64> {
    nonempty(sets)?;
    Ok(sets.iter().map(PredictionSet::size).sum::<f64>() / sets.len() as f64)
}

/// Counterfactual set disparity: per row, the mean Jaccard distance between
/// the factual set and each counterfactual-viewpoint set; averaged over rows.
pub fn csd(rows: &[RowSets]) -> Result<f64> {
    nonempty(rows)?;
    let mut total = 0.0;
    for r in rows {
        if r.counterfactual.is_empty() {
            return Err(Error::Unsupported("CSD requires counterfactual prediction sets".into()));
        }
        let mut acc = 0.0;
        for (_, s) in &r.counterfactual {
            acc += r.factual.jaccard_distance(s)?;
        }
        total += acc / r.counterfactual.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// How a change in classifier output is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeMode {
    /// Half the L1 distance between probability vectors.
    #[default]
    TotalVariation,
    /// Whether the argmax label changes.
    FlipRate,
}

fn output_change(a: &Output, b: &Output, mode: TeMode) -> Result<f64> {
    match (a, b) {
        (Output::Real(x), Output::Real(y)) => Ok((x - y).abs()),
        (Output::Probs(p), Output::Probs(q)) => {
            check_len(p.len(), q.len())?;
            Ok(match mode {
                TeMode::TotalVariation => 0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>(),
                TeMode::FlipRate => f64::from(u8::from(argmax(p) != argmax(q))),
            })
        }
        _ => Err(Error::InvalidParameter("mixed prediction kinds".into())),
    }
}

/// Mean change of the output between each row's factual prediction and its
/// predictions at the other attribute values.
pub fn total_effect(factual: &[Output], counterfactual: &[Vec<Output>], mode: TeMode) -> Result<f64> {
    check_len(factual.len(), counterfactual.len())?;
    nonempty(factual)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (f, cfs) in factual.iter().zip(counterfactual) {
        for c in cfs {
            sum += output_change(f, c, mode)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Unsupported("total effect requires counterfactual predictions".into()));
    }
    Ok(sum / count as f64)
}

pub fn mse(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_len(pred.len(), y.len())?;
    nonempty(pred)?;
    Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], y: &[usize]) -> Result<f64> {
    check_len(pred.len(), y.len())?;
    nonempty(pred)?;
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}
