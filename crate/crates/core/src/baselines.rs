//! Counterfactual-fairness baselines that act through their inputs: CFU
//! (exogenous variables only), CFR (mean counterfactual features) and PCF
//! (attribute-weighted counterfactual predictions). Each is followed by plain
//! split conformal prediction.

use crate::conformal::{conformalize, ConformalRun, ScoreInputs, ViewpointModel};
use crate::dataset::{AttributeDomain, Dataset};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::models::{FeatureLayout, LogisticOptions, Output, Predictor};
use crate::scores::ScoreKind;

/// The stored exogenous matrix `U`.
pub fn cfu_features(ds: &Dataset) -> Result<Matrix> {
    ds.exogenous
        .clone()
        .ok_or_else(|| Error::Unsupported("CFU requires exogenous variables U".into()))
}

/// Unweighted mean over interventions of the counterfactual features of the
/// individual seen from viewpoint `v`.
pub fn cfr_row(ds: &Dataset, row: usize, v: usize) -> Result<Vec<f64>> {
    let m = ds.domain.len();
    let mut out = vec![0.0; ds.n_features()];
    for t in 0..m {
        for (o, x) in out.iter_mut().zip(ds.counterfactual_at(row, v, t)?) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= m as f64;
    }
    Ok(out)
}

/// Row-wise mean of the counterfactual feature matrices.
pub fn cfr_features(ds: &Dataset) -> Result<Matrix> {
    if !ds.has_counterfactuals() {
        return Err(Error::Unsupported("CFR requires counterfactual features".into()));
    }
    let rows = (0..ds.len())
        .map(|i| cfr_row(ds, i, ds.factual_index(i)))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows, ds.n_features())
}

/// Empirical attribute frequencies over the canonical domain.
pub fn estimate_pa(a: &[i64], domain: &AttributeDomain) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::InvalidParameter("no attribute values".into()));
    }
    let mut counts = vec![0usize; domain.len()];
    for &v in a {
        let k = domain
            .index_of(v)
            .ok_or_else(|| Error::InvalidParameter(format!("attribute value {v} outside domain")))?;
        counts[k] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / a.len() as f64).collect())
}

/// `sum_a p_a f(x_{A<-a}, a)` over per-intervention predictions.
pub fn pcf_predict(predictions: &[Output], p_a: &[f64]) -> Result<Output> {
    if predictions.len() != p_a.len() || predictions.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: p_a.len(),
            got: predictions.len(),
        });
    }
    let total: f64 = p_a.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p_a.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "attribute distribution must be nonnegative and sum to 1, got sum {total}"
        )));
    }
    match &predictions[0] {
        Output::Real(_) => {
            let mut acc = 0.0;
            for (o, &w) in predictions.iter().zip(p_a) {
                acc += w * o.as_real().ok_or_else(|| Error::InvalidParameter("mixed prediction kinds".into()))?;
            }
            Ok(Output::Real(acc))
        }
        Output::Probs(first) => {
            let mut acc = vec![0.0; first.len()];
            for (o, &w) in predictions.iter().zip(p_a) {
                let p = o
                    .as_probs()
                    .filter(|p| p.len() == acc.len())
                    .ok_or_else(|| Error::InvalidParameter("mismatched probability vectors".into()))?;
                for (s, v) in acc.iter_mut().zip(p) {
                    *s += w * v;
                }
            }
            Ok(Output::Probs(acc))
        }
    }
}

/// Base model refit on `U` alone.
pub struct Cfu {
    pub predictor: Predictor,
}

impl Cfu {
    pub fn fit(train: &Dataset, opts: &LogisticOptions) -> Result<Self> {
        let u = cfu_features(train)?;
        let layout = FeatureLayout::without_attribute(u.cols(), &train.domain);
        let predictor = Predictor::fit(layout, &u, &train.a, &train.y, train.task.n_classes(), opts)?;
        Ok(Self { predictor })
    }
}

impl ViewpointModel for Cfu {
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs> {
        Ok(ScoreInputs::single(self.point(ds, row, v)?))
    }

    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output> {
        self.predictor.predict(ds.exogenous_at(row, v)?, ds.domain.value(v))
    }
}

/// Base model refit on the mean counterfactual features, attribute excluded.
pub struct Cfr {
    pub predictor: Predictor,
}

impl Cfr {
    pub fn fit(train: &Dataset, opts: &LogisticOptions) -> Result<Self> {
        let x = cfr_features(train)?;
        let layout = FeatureLayout::without_attribute(x.cols(), &train.domain);
        let predictor = Predictor::fit(layout, &x, &train.a, &train.y, train.task.n_classes(), opts)?;
        Ok(Self { predictor })
    }
}

impl ViewpointModel for Cfr {
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs> {
        Ok(ScoreInputs::single(self.point(ds, row, v)?))
    }

    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output> {
        self.predictor.predict(&cfr_row(ds, row, v)?, ds.domain.value(v))
    }
}

/// The shared base model combined over interventions with weights `p_a`.
pub struct Pcf<'a> {
    pub predictor: &'a Predictor,
    pub p_a: Vec<f64>,
}

impl ViewpointModel for Pcf<'_> {
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs> {
        Ok(ScoreInputs::single(self.point(ds, row, v)?))
    }

    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output> {
        if !ds.has_counterfactuals() {
            return Err(Error::Unsupported("PCF requires counterfactual features".into()));
        }
        let preds = (0..ds.domain.len())
            .map(|t| self.predictor.predict(ds.counterfactual_at(row, v, t)?, ds.domain.value(t)))
            .collect::<Result<Vec<_>>>()?;
        pcf_predict(&preds, &self.p_a)
    }
}

/// Plain split CP around any baseline model.
pub fn baseline_cp(
    model: &dyn ViewpointModel,
    cal: &Dataset,
    test: &Dataset,
    kind: &ScoreKind,
    alpha: f64,
    nonempty: bool,
) -> Result<ConformalRun> {
    conformalize(model, kind, cal, test, alpha, nonempty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;

    #[test]
    fn pcf_examples() {
        let p = pcf_predict(&[Output::Real(1.0), Output::Real(3.0)], &[0.5, 0.5]).unwrap();
        assert_eq!(p, Output::Real(2.0));
        let p = pcf_predict(&[Output::Real(1.0), Output::Real(3.0)], &[1.0, 0.0]).unwrap();
        assert_eq!(p, Output::Real(1.0));
        let probs = pcf_predict(
            &[Output::Probs(vec![0.2, 0.3, 0.5]), Output::Probs(vec![0.6, 0.1, 0.3])],
            &[0.4, 0.6],
        )
        .unwrap();
        let s: f64 = probs.as_probs().unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(pcf_predict(&[Output::Real(1.0), Output::Real(3.0)], &[0.5, 0.6]).is_err());
        assert!(pcf_predict(&[Output::Real(1.0)], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn estimate_pa_counts() {
        let d = AttributeDomain::binary();
        assert_eq!(estimate_pa(&[0, 0, 1, 1], &d).unwrap(), vec![0.5, 0.5]);
        assert_eq!(estimate_pa(&[0, 0, 0], &d).unwrap(), vec![1.0, 0.0]);
        assert!(estimate_pa(&[], &d).is_err());
        assert!(estimate_pa(&[2], &d).is_err());
    }

    #[test]
    fn cfu_needs_exogenous() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]], 1).unwrap();
        let ds = Dataset::new(Task::Regression, x, vec![0, 1], vec![0.0, 1.0], AttributeDomain::binary(), None).unwrap();
        assert!(matches!(cfu_features(&ds), Err(Error::Unsupported(_))));
        assert!(matches!(cfr_features(&ds), Err(Error::Unsupported(_))));
    }
}
