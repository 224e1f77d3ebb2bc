//! Base predictors over features augmented with the protected attribute.
//!
//! The augmented layout is always `[x_0, .., x_{d-1}, enc(a).., 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::AttributeDomain;
use crate::error::{Error, Result};
use crate::math::Matrix;

/// How the protected attribute enters the augmented feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeEncoding {
    /// The attribute value itself as one column.
    Numeric,
    /// Indicator columns for every domain value except the first.
    OneHot,
    /// The attribute is not a model input.
    Excluded,
}

/// Maps raw rows to augmented model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_features: usize,
    pub domain: AttributeDomain,
    pub encoding: AttributeEncoding,
}

impl FeatureLayout {
    /// Numeric encoding for binary domains, one-hot otherwise.
    pub fn for_domain(n_features: usize, domain: &AttributeDomain) -> Self {
        let encoding = if domain.len() <= 2 {
            AttributeEncoding::Numeric
        } else {
            AttributeEncoding::OneHot
        };
        Self {
            n_features,
            domain: domain.clone(),
            encoding,
        }
    }

    pub fn without_attribute(n_features: usize, domain: &AttributeDomain) -> Self {
        Self {
            n_features,
            domain: domain.clone(),
            encoding: AttributeEncoding::Excluded,
        }
    }

    pub fn width(&self) -> usize {
        let enc = match self.encoding {
            AttributeEncoding::Numeric => 1,
            AttributeEncoding::OneHot => self.domain.len() - 1,
            AttributeEncoding::Excluded => 0,
        };
        self.n_features + enc + 1
    }

    pub fn augment(&self, x: &[f64], a: i64) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.width());
        out.extend_from_slice(x);
        match self.encoding {
            AttributeEncoding::Numeric => out.push(a as f64),
            AttributeEncoding::OneHot => {
                let idx = self
                    .domain
                    .index_of(a)
                    .ok_or_else(|| Error::InvalidParameter(format!("attribute value {a} outside domain")))?;
                out.extend((1..self.domain.len()).map(|k| if k == idx { 1.0 } else { 0.0 }));
            }
            AttributeEncoding::Excluded => {}
        }
        out.push(1.0);
        Ok(out)
    }

    /// Augments every row of `x` with the matching entry of `a`.
    pub fn design(&self, x: &Matrix, a: &[i64]) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = x
            .iter_rows()
            .zip(a)
            .map(|(r, &ai)| self.augment(r, ai))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows, self.width())
    }
}

fn dot(w: &[f64], x: &[f64]) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(w.iter().zip(x).map(|(a, b)| a * b).sum())
}

/// Least-squares linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    /// Set when the design was rank deficient and the minimum-norm solution was returned.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict(&self, x_aug: &[f64]) -> Result<f64> {
        dot(&self.weights, x_aug)
    }
}

/// Ordinary least squares through a Householder QR factorization, falling
/// back to the SVD minimum-norm solution for rank-deficient designs.
pub fn fit_ols(x_aug: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, p) = (x_aug.rows(), x_aug.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter("empty design matrix".into()));
    }
    let a = DMatrix::from_row_slice(n, p, x_aug.as_slice());
    let b = DVector::from_column_slice(y);
    if n >= p {
        let qr = a.clone().qr();
        let r = qr.r();
        let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let tol = max_diag * (n.max(p) as f64) * f64::EPSILON;
        if max_diag > 0.0 && (0..p).all(|i| r[(i, i)].abs() > tol) {
            let qtb = qr.q().transpose() * &b;
            if let Some(w) = r.solve_upper_triangular(&qtb) {
                let weights: Vec<f64> = w.iter().copied().collect();
                if weights.iter().all(|v| v.is_finite()) {
                    return Ok(LinearModel {
                        weights,
                        rank_deficient: false,
                    });
                }
            }
        }
    }
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = max_sv * (n.max(p) as f64) * f64::EPSILON;
    let w = svd
        .solve(&b, eps)
        .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
    Ok(LinearModel {
        weights: w.iter().copied().collect(),
        rank_deficient: true,
    })
}

pub fn predict_reg(m: &LinearModel, x_aug: &[f64]) -> Result<f64> {
    m.predict(x_aug)
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Multinomial logistic regression, one weight row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub n_inputs: usize,
    /// Row-major `n_classes x n_inputs`; the last input is the intercept.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

impl LogisticModel {
    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.n_inputs..(c + 1) * self.n_inputs]
    }

    pub fn logits(&self, x_aug: &[f64]) -> Result<Vec<f64>> {
        (0..self.n_classes).map(|c| dot(self.class_weights(c), x_aug)).collect()
    }

    pub fn predict_proba(&self, x_aug: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x_aug)?))
    }
}

pub fn predict_proba(m: &LogisticModel, x_aug: &[f64]) -> Result<Vec<f64>> {
    m.predict_proba(x_aug)
}

/// Options for [`fit_logistic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    /// Ridge strength on non-intercept weights.
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient infinity norm, divided by the sample count, is
    /// at most this.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

/// Summed cross-entropy plus `(l2 / 2) * ||W without intercepts||^2`, and its
/// gradient with respect to the row-major weights.
pub fn logistic_loss_and_gradient(
    weights: &[f64],
    x_aug: &Matrix,
    y: &[usize],
    n_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let p = x_aug.cols();
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut logits = vec![0.0; n_classes];
    for (i, &yi) in y.iter().enumerate() {
        let x = x_aug.row(i);
        for (c, l) in logits.iter_mut().enumerate() {
            *l = weights[c * p..(c + 1) * p].iter().zip(x).map(|(w, v)| w * v).sum();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - logits[yi];
        for c in 0..n_classes {
            let resid = (logits[c] - lse).exp() - if c == yi { 1.0 } else { 0.0 };
            for (g, v) in grad[c * p..(c + 1) * p].iter_mut().zip(x) {
                *g += resid * v;
            }
        }
    }
    for c in 0..n_classes {
        for j in 0..p - 1 {
            let w = weights[c * p + j];
            loss += 0.5 * l2 * w * w;
            grad[c * p + j] += l2 * w;
        }
    }
    (loss, grad)
}

fn logistic_loss(weights: &[f64], x_aug: &Matrix, y: &[usize], n_classes: usize, l2: f64) -> f64 {
    logistic_loss_and_gradient(weights, x_aug, y, n_classes, l2).0
}

fn logistic_hessian(weights: &[f64], x_aug: &Matrix, n_classes: usize, l2: f64) -> DMatrix<f64> {
    let p = x_aug.cols();
    let dim = n_classes * p;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut logits = vec![0.0; n_classes];
    let mut outer = vec![0.0; p * p];
    for x in x_aug.iter_rows() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l = weights[c * p..(c + 1) * p].iter().zip(x).map(|(w, v)| w * v).sum();
        }
        let probs = softmax(&logits);
        for j in 0..p {
            for k in j..p {
                outer[j * p + k] = x[j] * x[k];
            }
        }
        for c in 0..n_classes {
            for c2 in c..n_classes {
                let w = probs[c] * (if c == c2 { 1.0 } else { 0.0 } - probs[c2]);
                if w == 0.0 {
                    continue;
                }
                for j in 0..p {
                    for k in j..p {
                        h[(c * p + j, c2 * p + k)] += w * outer[j * p + k];
                    }
                }
            }
        }
    }
    // each block is symmetric in (j, k); fill its lower half, then mirror the
    // upper block triangle onto the lower one
    for c in 0..n_classes {
        for c2 in c..n_classes {
            for j in 0..p {
                for k in 0..j {
                    h[(c * p + j, c2 * p + k)] = h[(c * p + k, c2 * p + j)];
                }
            }
        }
    }
    for r in 0..dim {
        for col in 0..r {
            h[(r, col)] = h[(col, r)];
        }
    }
    for c in 0..n_classes {
        for j in 0..p - 1 {
            h[(c * p + j, c * p + j)] += l2;
        }
    }
    h
}

/// Fits multinomial logistic regression by damped Newton iterations with an
/// Armijo backtracking line search.
pub fn fit_logistic(x_aug: &Matrix, y: &[usize], n_classes: usize, opts: &LogisticOptions) -> Result<LogisticModel> {
    let (n, p) = (x_aug.rows(), x_aug.cols());
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter("empty design matrix".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n_classes < 2 {
        return Err(Error::InvalidParameter("need at least two classes".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidParameter(format!("label {bad} outside 0..{n_classes}")));
    }
    if !(opts.l2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("l2 must be >= 0, got {}", opts.l2)));
    }
    let dim = n_classes * p;
    let mut w = vec![0.0; dim];
    let (mut loss, mut grad) = logistic_loss_and_gradient(&w, x_aug, y, n_classes, opts.l2);
    let mut iterations = 0;
    let tol = opts.tol * n as f64;
    loop {
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss after {iterations} iterations")));
        }
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= tol || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let h = logistic_hessian(&w, x_aug, n_classes, opts.l2);
        let g = DVector::from_column_slice(&grad);
        let scale = (0..dim).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1.0);
        let mut damping = 1e-10 * scale;
        let dir = loop {
            let mut hd = h.clone();
            for i in 0..dim {
                hd[(i, i)] += damping;
            }
            if let Some(ch) = hd.cholesky() {
                break ch.solve(&(-&g));
            }
            damping *= 100.0;
            if damping > 1e6 * scale {
                break -&g;
            }
        };
        let mut slope = dir.dot(&g);
        let dir = if slope >= 0.0 {
            slope = -g.dot(&g);
            -g.clone()
        } else {
            dir
        };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(dir.iter()).map(|(wi, di)| wi + step * di).collect();
            let trial_loss = logistic_loss(&trial, x_aug, y, n_classes, opts.l2);
            if trial_loss.is_finite() && trial_loss <= loss + 1e-4 * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        // stop once the loss no longer decreases beyond rounding
        let Some(next) = accepted else { break };
        w = next;
        let (l, gr) = logistic_loss_and_gradient(&w, x_aug, y, n_classes, opts.l2);
        let stalled = loss - l <= 4.0 * f64::EPSILON * loss.abs();
        loss = l;
        grad = gr;
        if stalled {
            break;
        }
    }
    let gradient_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok(LogisticModel {
        n_classes,
        n_inputs: p,
        weights: w,
        iterations,
        gradient_norm,
        converged: gradient_norm <= tol,
    })
}

/// Point output of a base predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Output {
    Real(f64),
    Probs(Vec<f64>),
}

impl Output {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Output::Real(v) => Some(*v),
            Output::Probs(_) => None,
        }
    }

    pub fn as_probs(&self) -> Option<&[f64]> {
        match self {
            Output::Probs(p) => Some(p),
            Output::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseModel {
    Linear(LinearModel),
    Logistic(LogisticModel),
}

/// A fitted model together with the layout used to build its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub layout: FeatureLayout,
    pub model: BaseModel,
}

impl Predictor {
    /// Fits OLS (regression) or logistic regression (`n_classes = Some(K)`)
    /// on the rows of `x` augmented with `a`.
    pub fn fit(
        layout: FeatureLayout,
        x: &Matrix,
        a: &[i64],
        y: &[f64],
        n_classes: Option<usize>,
        opts: &LogisticOptions,
    ) -> Result<Self> {
        let design = layout.design(x, a)?;
        let model = match n_classes {
            None => BaseModel::Linear(fit_ols(&design, y)?),
            Some(k) => {
                let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
                BaseModel::Logistic(fit_logistic(&design, &labels, k, opts)?)
            }
        };
        Ok(Self { layout, model })
    }

    pub fn predict(&self, x: &[f64], a: i64) -> Result<Output> {
        let x_aug = self.layout.augment(x, a)?;
        match &self.model {
            BaseModel::Linear(m) => Ok(Output::Real(m.predict(&x_aug)?)),
            BaseModel::Logistic(m) => Ok(Output::Probs(m.predict_proba(&x_aug)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| vec![x, 1.0]).collect::<Vec<_>>(), 2).unwrap()
    }

    #[test]
    fn ols_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let m = fit_ols(&design(&xs), &ys).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-10);
        assert!((m.weights[1] - 1.0).abs() < 1e-10);
        assert!(!m.rank_deficient);
    }

    #[test]
    fn ols_constant_target() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = fit_ols(&design(&xs), &[4.5; 10]).unwrap();
        assert!(m.weights[0].abs() < 1e-10);
        assert!((m.weights[1] - 4.5).abs() < 1e-10);
    }

    #[test]
    fn ols_rank_deficient_returns_min_norm() {
        // duplicated column: min-norm solution splits the slope evenly
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64, 1.0]).collect();
        let x = Matrix::from_rows(&rows, 3).unwrap();
        let y: Vec<f64> = (0..8).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_ols(&x, &y).unwrap();
        assert!(m.rank_deficient);
        assert!((m.weights[0] - 1.0).abs() < 1e-8);
        assert!((m.weights[1] - 1.0).abs() < 1e-8);
        assert!((m.weights[2] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn predict_reg_arithmetic() {
        let m = LinearModel {
            weights: vec![2.0, 1.0],
            rank_deficient: false,
        };
        assert_eq!(predict_reg(&m, &[3.0, 1.0]).unwrap(), 7.0);
        let zero = LinearModel {
            weights: vec![0.0, 0.0],
            rank_deficient: false,
        };
        assert_eq!(predict_reg(&zero, &[3.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(predict_reg(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let m = LogisticModel {
            n_classes: 4,
            n_inputs: 2,
            weights: vec![0.0; 8],
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        assert_eq!(m.predict_proba(&[1.0, 1.0]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn logistic_separable_two_class() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 2.0 - 5.0).collect();
        let ys: Vec<usize> = xs.iter().map(|&x| usize::from(x > 0.2)).collect();
        let x = design(&xs);
        let m = fit_logistic(&x, &ys, 2, &LogisticOptions::default()).unwrap();
        assert!(m.converged, "gradient {}", m.gradient_norm);
        assert!(m.gradient_norm <= 1e-6);
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(&xv, &yv)| {
                let p = m.predict_proba(&[xv, 1.0]).unwrap();
                usize::from(p[1] > p[0]) == yv
            })
            .count();
        assert_eq!(correct, xs.len());
    }

    #[test]
    fn logistic_single_class_input() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 10.0 - 1.5).collect();
        let x = design(&xs);
        let m = fit_logistic(&x, &[0; 30], 2, &LogisticOptions::default()).unwrap();
        for &xv in &xs {
            assert!(m.predict_proba(&[xv, 1.0]).unwrap()[0] >= 0.9);
        }
    }

    #[test]
    fn logistic_rejects_bad_labels() {
        let x = design(&[0.0, 1.0]);
        assert!(fit_logistic(&x, &[0, 2], 2, &LogisticOptions::default()).is_err());
        assert!(fit_logistic(&x, &[0], 2, &LogisticOptions::default()).is_err());
    }

    #[test]
    fn one_hot_layout_for_multi_valued_attribute() {
        let domain = AttributeDomain::new([0, 1, 2]).unwrap();
        let layout = FeatureLayout::for_domain(1, &domain);
        assert_eq!(layout.encoding, AttributeEncoding::OneHot);
        assert_eq!(layout.augment(&[5.0], 2).unwrap(), vec![5.0, 0.0, 1.0, 1.0]);
        assert_eq!(layout.augment(&[5.0], 0).unwrap(), vec![5.0, 0.0, 0.0, 1.0]);
        let binary = FeatureLayout::for_domain(1, &AttributeDomain::binary());
        assert_eq!(binary.augment(&[5.0], 1).unwrap(), vec![5.0, 1.0, 1.0]);
        let none = FeatureLayout::without_attribute(1, &domain);
        assert_eq!(none.augment(&[5.0], 2).unwrap(), vec![5.0, 1.0]);
    }
}
