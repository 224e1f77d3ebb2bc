//! Split conformal calibration and prediction sets, including the
//! counterfactually symmetrized variant and the post-hoc union baseline.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::{jaccard_distance, IntervalSet, LabelSet};
use crate::metrics::argmax;
use crate::models::{Output, Predictor};
use crate::scores::{score, Aggregator, ScoreKind, Target};

/// Calibrated split-conformal threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// k-th smallest calibration score, or `+inf` when `k > n_cal`.
    pub q_hat: f64,
    pub alpha: f64,
    pub n_cal: usize,
    /// `ceil((n_cal + 1)(1 - alpha))`.
    pub k: usize,
    pub score: Option<ScoreKind>,
    pub aggregator: Option<Aggregator>,
}

impl Calibration {
    pub fn is_finite(&self) -> bool {
        self.q_hat.is_finite()
    }
}

/// Order-statistic index `ceil((n + 1)(1 - alpha))`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    // the small offset absorbs representation error when the product is an integer
    ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil().max(0.0) as usize
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Split-conformal threshold from calibration scores.
pub fn calibrate(scores: &[f64], alpha: f64) -> Result<Calibration> {
    validate_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no calibration scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN calibration score".into()));
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    let q_hat = if k > n {
        f64::INFINITY
    } else if k == 0 {
        f64::NEG_INFINITY
    } else {
        let mut buf = scores.to_vec();
        *buf.select_nth_unstable_by(k - 1, f64::total_cmp).1
    };
    Ok(Calibration {
        q_hat,
        alpha,
        n_cal: n,
        k,
        score: None,
        aggregator: None,
    })
}

/// A prediction set for one test row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictionSet {
    Labels(LabelSet),
    Intervals(IntervalSet),
    /// The whole real line; produced only for an infinite regression threshold.
    Unbounded,
}

impl PredictionSet {
    pub fn contains(&self, y: Target) -> bool {
        match (self, y) {
            (PredictionSet::Labels(s), Target::Class(c)) => s.contains(c),
            (PredictionSet::Intervals(s), Target::Real(v)) => s.contains(v),
            (PredictionSet::Unbounded, Target::Real(_)) => true,
            _ => false,
        }
    }

    /// Cardinality for label sets, Lebesgue measure for interval sets.
    pub fn size(&self) -> f64 {
        match self {
            PredictionSet::Labels(s) => s.len() as f64,
            PredictionSet::Intervals(s) => s.measure(),
            PredictionSet::Unbounded => f64::INFINITY,
        }
    }

    pub fn union(&self, other: &PredictionSet) -> Result<PredictionSet> {
        match (self, other) {
            (PredictionSet::Labels(a), PredictionSet::Labels(b)) => Ok(PredictionSet::Labels(a.union(b))),
            (PredictionSet::Intervals(a), PredictionSet::Intervals(b)) => Ok(PredictionSet::Intervals(a.union(b))),
            (PredictionSet::Unbounded, PredictionSet::Intervals(_))
            | (PredictionSet::Intervals(_), PredictionSet::Unbounded)
            | (PredictionSet::Unbounded, PredictionSet::Unbounded) => Ok(PredictionSet::Unbounded),
            _ => Err(Error::InvalidParameter("cannot combine label and interval sets".into())),
        }
    }

    pub fn jaccard_distance(&self, other: &PredictionSet) -> Result<f64> {
        match (self, other) {
            (PredictionSet::Labels(a), PredictionSet::Labels(b)) => Ok(jaccard_distance(a, b)),
            (PredictionSet::Intervals(a), PredictionSet::Intervals(b)) => Ok(jaccard_distance(a, b)),
            _ => Err(Error::Unsupported(
                "Jaccard distance needs two finite sets of the same kind".into(),
            )),
        }
    }
}

/// `{y : s(y) <= q_hat}` where `s` is the plain score of `probs[0]` when
/// `agg` is `None`, or the aggregate over all of `probs` otherwise. If the
/// set is empty and `nonempty` is set, the most probable label of
/// `probs[own]` is added.
pub fn predict_set_classification(
    probs: &[Vec<f64>],
    own: usize,
    kind: &ScoreKind,
    agg: Option<Aggregator>,
    cal: &Calibration,
    nonempty: bool,
) -> Result<PredictionSet> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no probability vectors".into()))?;
    let k = first.len();
    if probs.iter().any(|p| p.len() != k) || own >= probs.len() {
        return Err(Error::InvalidParameter("inconsistent probability vectors".into()));
    }
    if agg.is_none() && probs.len() != 1 {
        return Err(Error::InvalidParameter("plain scores take exactly one prediction".into()));
    }
    if cal.q_hat == f64::INFINITY {
        return Ok(PredictionSet::Labels(LabelSet::full(k)));
    }
    let outputs: Vec<Output> = probs.iter().map(|p| Output::Probs(p.clone())).collect();
    let mut labels = LabelSet::default();
    let mut per = Vec::with_capacity(outputs.len());
    for y in 0..k {
        per.clear();
        for o in &outputs {
            per.push(score(kind, o, Target::Class(y))?);
        }
        let s = match agg {
            Some(a) => a.apply(&per),
            None => per[0],
        };
        if s <= cal.q_hat {
            labels.insert(y);
        }
    }
    if labels.is_empty() && nonempty {
        labels.insert(argmax(&probs[own]));
    }
    Ok(PredictionSet::Labels(labels))
}

/// Exact sublevel set `{y : Agg_i |c_i - y| <= q}` as an interval set.
pub fn predict_set_regression(centers: &[f64], agg: Option<Aggregator>, cal: &Calibration) -> Result<PredictionSet> {
    if centers.is_empty() {
        return Err(Error::InvalidParameter("no centers".into()));
    }
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("non-finite center".into()));
    }
    let q = cal.q_hat;
    if q == f64::INFINITY {
        return Ok(PredictionSet::Unbounded);
    }
    if q < 0.0 {
        return Ok(PredictionSet::Intervals(IntervalSet::empty()));
    }
    let set = match (agg, centers.len()) {
        (None, 1) | (Some(_), 1) => IntervalSet::closed(centers[0] - q, centers[0] + q),
        (None, _) => return Err(Error::InvalidParameter("plain scores take exactly one center".into())),
        (Some(Aggregator::Max), _) => {
            let hi_c = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo_c = centers.iter().copied().fold(f64::INFINITY, f64::min);
            IntervalSet::closed(hi_c - q, lo_c + q)
        }
        (Some(Aggregator::Min), _) => IntervalSet::from_intervals(centers.iter().map(|&c| (c - q, c + q))),
        (Some(Aggregator::Mean), _) => mean_sublevel_set(centers, q),
    };
    Ok(PredictionSet::Intervals(set))
}

/// Sublevel set of the convex piecewise-linear `g(y) = mean_i |c_i - y|`.
fn mean_sublevel_set(centers: &[f64], q: f64) -> IntervalSet {
    let mut sorted = centers.to_vec();
    sorted.sort_by(f64::total_cmp);
    // distinct breakpoints with multiplicities
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for c in sorted {
        match pts.last_mut() {
            Some(last) if last.0 == c => last.1 += 1.0,
            _ => pts.push((c, 1.0)),
        }
    }
    let total = centers.len() as f64;
    let g = |y: f64| pts.iter().map(|&(c, w)| w * (c - y).abs()).sum::<f64>() / total;
    let vals: Vec<f64> = pts.iter().map(|&(c, _)| g(c)).collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if min > q {
        return IntervalSet::empty();
    }
    let m = pts.len();
    // slope is -1 left of the first breakpoint and +1 right of the last
    let left = match vals.iter().position(|&v| v <= q) {
        Some(0) => pts[0].0 - (q - vals[0]),
        Some(j) => {
            let (c0, c1) = (pts[j - 1].0, pts[j].0);
            c0 + (vals[j - 1] - q) * (c1 - c0) / (vals[j - 1] - vals[j])
        }
        None => unreachable!(),
    };
    let right = match vals.iter().rposition(|&v| v <= q) {
        Some(j) if j == m - 1 => pts[m - 1].0 + (q - vals[m - 1]),
        Some(j) => {
            let (c0, c1) = (pts[j].0, pts[j + 1].0);
            c0 + (q - vals[j]) * (c1 - c0) / (vals[j + 1] - vals[j])
        }
        None => unreachable!(),
    };
    IntervalSet::closed(left, right)
}

/// Per-row inputs needed to evaluate a (possibly symmetrized) score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInputs {
    /// One point prediction per intervention, or a single prediction.
    pub outputs: Vec<Output>,
    /// Index into `outputs` of the row's own-viewpoint prediction.
    pub own: usize,
    pub aggregator: Option<Aggregator>,
}

impl ScoreInputs {
    pub fn single(output: Output) -> Self {
        Self {
            outputs: vec![output],
            own: 0,
            aggregator: None,
        }
    }

    pub fn score(&self, kind: &ScoreKind, y: Target) -> Result<f64> {
        let per: Vec<f64> = self.outputs.iter().map(|o| score(kind, o, y)).collect::<Result<_>>()?;
        match self.aggregator {
            Some(a) => Ok(a.apply(&per)),
            None if per.len() == 1 => Ok(per[0]),
            None => Err(Error::InvalidParameter("plain scores take exactly one prediction".into())),
        }
    }

    pub fn prediction_set(&self, kind: &ScoreKind, cal: &Calibration, nonempty: bool) -> Result<PredictionSet> {
        match kind {
            ScoreKind::AbsResidual => {
                let centers: Vec<f64> = self
                    .outputs
                    .iter()
                    .map(|o| o.as_real().ok_or_else(|| Error::InvalidParameter("regression score needs real predictions".into())))
                    .collect::<Result<_>>()?;
                predict_set_regression(&centers, self.aggregator, cal)
            }
            _ => {
                let probs: Vec<Vec<f64>> = self
                    .outputs
                    .iter()
                    .map(|o| {
                        o.as_probs()
                            .map(<[f64]>::to_vec)
                            .ok_or_else(|| Error::InvalidParameter("classification score needs probabilities".into()))
                    })
                    .collect::<Result<_>>()?;
                predict_set_classification(&probs, self.own, kind, self.aggregator, cal, nonempty)
            }
        }
    }
}

/// A predictor that can be queried for any row from any attribute viewpoint
/// (domain index `v`).
pub trait ViewpointModel {
    /// Inputs of the conformity score for the individual seen from `v`.
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs>;
    /// Point prediction for the individual seen from `v`.
    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output>;
}

/// Plain split CP: the base model at the viewpoint's own features.
pub struct PlainScorer<'a> {
    pub predictor: &'a Predictor,
}

impl ViewpointModel for PlainScorer<'_> {
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs> {
        Ok(ScoreInputs::single(self.point(ds, row, v)?))
    }

    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output> {
        self.predictor.predict(ds.features_at(row, v)?, ds.domain.value(v))
    }
}

/// Counterfactually symmetrized score: aggregates the base score over every
/// intervention of the individual seen from `v`, in canonical domain order.
pub struct SymmetrizedScorer<'a> {
    pub predictor: &'a Predictor,
    pub aggregator: Aggregator,
}

impl ViewpointModel for SymmetrizedScorer<'_> {
    fn score_inputs(&self, ds: &Dataset, row: usize, v: usize) -> Result<ScoreInputs> {
        let outputs = (0..ds.domain.len())
            .map(|t| self.predictor.predict(ds.counterfactual_at(row, v, t)?, ds.domain.value(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreInputs {
            outputs,
            own: v,
            aggregator: Some(self.aggregator),
        })
    }

    fn point(&self, ds: &Dataset, row: usize, v: usize) -> Result<Output> {
        self.predictor.predict(ds.features_at(row, v)?, ds.domain.value(v))
    }
}

pub fn target(ds: &Dataset, row: usize) -> Target {
    if ds.task.is_classification() {
        Target::Class(ds.class_label(row))
    } else {
        Target::Real(ds.y[row])
    }
}

/// Prediction sets of one test row: at the factual viewpoint and at every
/// counterfactual viewpoint (empty when the data has no counterfactuals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSets {
    pub factual: PredictionSet,
    /// `(domain index, set)` for every non-factual attribute value.
    pub counterfactual: Vec<(usize, PredictionSet)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalRun {
    pub calibration: Calibration,
    pub sets: Vec<RowSets>,
}

impl ConformalRun {
    pub fn factual_sets(&self) -> Vec<PredictionSet> {
        self.sets.iter().map(|r| r.factual.clone()).collect()
    }
}

/// Calibrates `model`'s factual-viewpoint scores on `cal` and builds sets for
/// every row of `test`, from every viewpoint when counterfactuals exist.
pub fn conformalize(
    model: &dyn ViewpointModel,
    kind: &ScoreKind,
    cal: &Dataset,
    test: &Dataset,
    alpha: f64,
    nonempty: bool,
) -> Result<ConformalRun> {
    let calibration = calibrate_model(model, kind, cal, alpha)?;
    let sets = build_sets(test, |row, v| {
        model.score_inputs(test, row, v)?.prediction_set(kind, &calibration, nonempty)
    })?;
    Ok(ConformalRun { calibration, sets })
}

fn calibrate_model(model: &dyn ViewpointModel, kind: &ScoreKind, cal: &Dataset, alpha: f64) -> Result<Calibration> {
    let scores = (0..cal.len())
        .map(|i| model.score_inputs(cal, i, cal.factual_index(i))?.score(kind, target(cal, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut calibration = calibrate(&scores, alpha)?;
    calibration.score = Some(*kind);
    Ok(calibration)
}

fn build_sets<F>(test: &Dataset, mut set_at: F) -> Result<Vec<RowSets>>
where
    F: FnMut(usize, usize) -> Result<PredictionSet>,
{
    let with_cf = test.has_counterfactuals();
    (0..test.len())
        .map(|i| {
            let f = test.factual_index(i);
            let factual = set_at(i, f)?;
            let counterfactual = if with_cf {
                (0..test.domain.len())
                    .filter(|&v| v != f)
                    .map(|v| Ok((v, set_at(i, v)?)))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(RowSets { factual, counterfactual })
        })
        .collect()
}

fn require_counterfactuals(ds: &Dataset, method: &str) -> Result<()> {
    if ds.has_counterfactuals() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{method} requires counterfactual features")))
    }
}

/// Standard split conformal prediction with the base predictor.
pub fn split_cp(
    cal: &Dataset,
    test: &Dataset,
    predictor: &Predictor,
    kind: &ScoreKind,
    alpha: f64,
    nonempty: bool,
) -> Result<ConformalRun> {
    conformalize(&PlainScorer { predictor }, kind, cal, test, alpha, nonempty)
}

/// Split CP with the counterfactually symmetrized score.
pub fn cf_cp(
    cal: &Dataset,
    test: &Dataset,
    predictor: &Predictor,
    kind: &ScoreKind,
    agg: Aggregator,
    alpha: f64,
    nonempty: bool,
) -> Result<ConformalRun> {
    require_counterfactuals(cal, "CF-CP")?;
    require_counterfactuals(test, "CF-CP")?;
    let scorer = SymmetrizedScorer {
        predictor,
        aggregator: agg,
    };
    let mut run = conformalize(&scorer, kind, cal, test, alpha, nonempty)?;
    run.calibration.aggregator = Some(agg);
    Ok(run)
}

/// Union over interventions of plain split-CP sets, all under the factual
/// split-CP threshold.
pub fn posthoc_union(
    cal: &Dataset,
    test: &Dataset,
    predictor: &Predictor,
    kind: &ScoreKind,
    alpha: f64,
    nonempty: bool,
) -> Result<ConformalRun> {
    require_counterfactuals(test, "post-hoc union")?;
    let plain = PlainScorer { predictor };
    let calibration = calibrate_model(&plain, kind, cal, alpha)?;
    let sets = build_sets(test, |row, v| {
        let mut acc: Option<PredictionSet> = None;
        for t in 0..test.domain.len() {
            let out = predictor.predict(test.counterfactual_at(row, v, t)?, test.domain.value(t))?;
            let set = ScoreInputs::single(out).prediction_set(kind, &calibration, nonempty)?;
            acc = Some(match acc {
                Some(prev) => prev.union(&set)?,
                None => set,
            });
        }
        Ok(acc.expect("nonempty domain"))
    })?;
    Ok(ConformalRun { calibration, sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal_at(q: f64) -> Calibration {
        Calibration {
            q_hat: q,
            alpha: 0.1,
            n_cal: 100,
            k: 91,
            score: None,
            aggregator: None,
        }
    }

    #[test]
    fn calibrate_examples() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        let c = calibrate(&s, 0.1).unwrap();
        assert_eq!((c.k, c.q_hat), (10, 10.0));
        let c = calibrate(&[3.0, 1.0, 2.0], 0.5).unwrap();
        assert_eq!((c.k, c.q_hat), (2, 2.0));
        let c = calibrate(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.05).unwrap();
        assert_eq!(c.k, 6);
        assert_eq!(c.q_hat, f64::INFINITY);
    }

    #[test]
    fn calibrate_errors() {
        assert!(calibrate(&[], 0.1).is_err());
        assert!(calibrate(&[1.0], 0.0).is_err());
        assert!(calibrate(&[1.0], 1.0).is_err());
        assert!(calibrate(&[f64::NAN], 0.5).is_err());
    }

    #[test]
    fn quantile_rank_is_exact_at_integers() {
        // (9 + 1) * 0.9 = 9 exactly
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(quantile_rank(1000, 0.1), 901);
        assert_eq!(quantile_rank(100, 0.1), 91);
    }

    #[test]
    fn classification_set_examples() {
        let lac = ScoreKind::Lac;
        let full = predict_set_classification(&[vec![0.5, 0.3, 0.2]], 0, &lac, None, &cal_at(f64::INFINITY), true).unwrap();
        assert_eq!(full, PredictionSet::Labels(LabelSet::full(3)));
        let rescued = predict_set_classification(&[vec![0.9, 0.1]], 0, &lac, None, &cal_at(0.05), true).unwrap();
        assert_eq!(rescued, PredictionSet::Labels(LabelSet::new([0])));
        let bare = predict_set_classification(&[vec![0.9, 0.1]], 0, &lac, None, &cal_at(0.05), false).unwrap();
        assert_eq!(bare, PredictionSet::Labels(LabelSet::default()));
        let p = vec![0.7, 0.2, 0.1];
        let at_half = predict_set_classification(&[p.clone()], 0, &lac, None, &cal_at(0.5), true).unwrap();
        assert_eq!(at_half, PredictionSet::Labels(LabelSet::new([0])));
        let wider = predict_set_classification(&[p], 0, &lac, None, &cal_at(0.85), true).unwrap();
        assert_eq!(wider, PredictionSet::Labels(LabelSet::new([0, 1])));
    }

    #[test]
    fn rescue_uses_own_viewpoint_argmax() {
        let probs = vec![vec![0.45, 0.55], vec![0.6, 0.4]];
        let s0 = predict_set_classification(&probs, 0, &ScoreKind::Lac, Some(Aggregator::Max), &cal_at(0.1), true).unwrap();
        let s1 = predict_set_classification(&probs, 1, &ScoreKind::Lac, Some(Aggregator::Max), &cal_at(0.1), true).unwrap();
        assert_eq!(s0, PredictionSet::Labels(LabelSet::new([1])));
        assert_eq!(s1, PredictionSet::Labels(LabelSet::new([0])));
    }

    #[test]
    fn regression_set_examples() {
        let c = [0.0, 2.0];
        let get = |agg, q| match predict_set_regression(&c, Some(agg), &cal_at(q)).unwrap() {
            PredictionSet::Intervals(s) => s,
            other => panic!("{other:?}"),
        };
        assert_eq!(get(Aggregator::Mean, 2.0).intervals(), &[(-1.0, 3.0)]);
        assert_eq!(get(Aggregator::Max, 2.0).intervals(), &[(0.0, 2.0)]);
        assert_eq!(get(Aggregator::Min, 2.0).intervals(), &[(-2.0, 4.0)]);
        assert!(get(Aggregator::Max, 0.5).is_empty());
        assert_eq!(get(Aggregator::Min, 0.5).intervals(), &[(-0.5, 0.5), (1.5, 2.5)]);
        assert!(get(Aggregator::Mean, 0.5).is_empty());
        assert_eq!(
            predict_set_regression(&[1.0], None, &cal_at(f64::INFINITY)).unwrap(),
            PredictionSet::Unbounded
        );
        assert!(predict_set_regression(&c, None, &cal_at(1.0)).is_err());
    }

    #[test]
    fn mean_set_merges_repeated_centers() {
        // g(y) = (2|y| + |y - 3|) / 3, minimum 1 at y = 0
        let set = predict_set_regression(&[0.0, 3.0, 0.0], Some(Aggregator::Mean), &cal_at(2.0)).unwrap();
        match set {
            PredictionSet::Intervals(s) => {
                let (lo, hi) = s.intervals()[0];
                assert!((lo + 1.0).abs() < 1e-12, "{lo}");
                assert!((hi - 3.0).abs() < 1e-12, "{hi}");
            }
            other => panic!("{other:?}"),
        }
    }
}
