//! Synthetic structural causal models with a binary protected attribute.
//!
//! Regression:
//!
//! ```text
//! U1, U2 ~ N(0, 1),  A ~ Bernoulli(0.4)
//! X = sin(U1) + cos(A * U2) + A + 0.1
//! Y = 0.2 X^2 + 1.2 X + 0.2 + eps_Y
//! ```
//!
//! Classification (d = 10 features, K = 10 classes):
//!
//! ```text
//! U ~ N(0, I_d),  A ~ Bernoulli(0.5)
//! X = (A - 0.5) w_A + U D_U
//! Y ~ Categorical(softmax(X^3 W_X + U W_U + E)),  E ~ N(0, 0.2^2 I_K)
//! ```
//!
//! Exogenous values are stored with every generated row, so counterfactuals
//! re-evaluate the `X` equation at the stored `U` instead of abducting it.

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeDomain, Dataset, Task};
use crate::error::{Error, Result};
use crate::math::matrix::vec_mat;
use crate::math::{Matrix, RngState};

/// How the regression label-noise parameter 0.6 is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelNoiseScale {
    /// eps_Y has standard deviation 0.6.
    #[default]
    StdDev,
    /// eps_Y has variance 0.6.
    Variance,
}

impl LabelNoiseScale {
    pub fn std_dev(self) -> f64 {
        match self {
            LabelNoiseScale::StdDev => 0.6,
            LabelNoiseScale::Variance => 0.6f64.sqrt(),
        }
    }
}

/// Frozen parameters of the classification SCM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScm {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub sigma_logit: f64,
    /// Length-d effect of the attribute on X.
    pub w_a: Vec<f64>,
    /// d x d mixing of U into X.
    pub d_u: Matrix,
    /// d x K map of cubed features into logits.
    pub w_x: Matrix,
    /// d x K map of U into logits.
    pub w_u: Matrix,
}

const MAX_RANK_RETRIES: usize = 10;

fn identity_plus_uniform(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let base = if i == j { 1.0 } else { 0.0 };
            m.set(i, j, base + rng.uniform_range(0.0, 0.2));
        }
    }
    m
}

fn is_full_rank(m: &Matrix) -> bool {
    let dm = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    dm.rank(1e-10) == m.rows().min(m.cols())
}

impl ClassificationScm {
    /// Samples the frozen matrices with the default sizes (d = K = 10, r = 3).
    pub fn sample(rng: &mut RngState) -> Result<Self> {
        Self::sample_with(10, 10, 3, 0.2, rng)
    }

    pub fn sample_with(d: usize, k: usize, r: usize, sigma_logit: f64, rng: &mut RngState) -> Result<Self> {
        if d == 0 || k < 2 || r > d || !(sigma_logit >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid classification SCM sizes d={d}, K={k}, r={r}, sigma={sigma_logit}"
            )));
        }
        let w_a: Vec<f64> = (0..d)
            .map(|j| if j < r { rng.uniform_range(2.0, 2.2) } else { 0.0 })
            .collect();
        let mut d_u = identity_plus_uniform(d, d, rng);
        let mut attempts = 1;
        while !is_full_rank(&d_u) {
            if attempts >= MAX_RANK_RETRIES {
                return Err(Error::InvalidParameter("D_U rank deficient after retries".into()));
            }
            d_u = identity_plus_uniform(d, d, rng);
            attempts += 1;
        }
        let w_x = identity_plus_uniform(d, k, rng);
        let w_u = identity_plus_uniform(d, k, rng);
        Ok(Self {
            d,
            k,
            r,
            sigma_logit,
            w_a,
            d_u,
            w_x,
            w_u,
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = self.w_a.len() == self.d
            && self.d_u.rows() == self.d
            && self.d_u.cols() == self.d
            && self.w_x.rows() == self.d
            && self.w_x.cols() == self.k
            && self.w_u.rows() == self.d
            && self.w_u.cols() == self.k
            && self.k >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("inconsistent classification SCM matrices".into()))
        }
    }

    /// `X = (a - 0.5) w_A + U D_U`.
    pub fn features(&self, u: &[f64], a: i64) -> Vec<f64> {
        let shift = a as f64 - 0.5;
        let mut x = vec_mat(u, &self.d_u);
        for (xj, wj) in x.iter_mut().zip(&self.w_a) {
            *xj += shift * wj;
        }
        x
    }

    /// `X^3 W_X + U W_U + E`.
    pub fn logits(&self, x: &[f64], u: &[f64], e: &[f64]) -> Vec<f64> {
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let mut l = vec_mat(&cubed, &self.w_x);
        for ((lk, uk), ek) in l.iter_mut().zip(vec_mat(u, &self.w_u)).zip(e) {
            *lk += uk + ek;
        }
        l
    }
}

/// Which synthetic SCM to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScmKind {
    SynthRegression { label_noise: LabelNoiseScale },
    SynthClassification(ClassificationScm),
}

/// Noise added to the exogenous variables before forming counterfactuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfNoiseSpec {
    pub sigma_u: f64,
}

impl CfNoiseSpec {
    pub fn oracle() -> Self {
        Self { sigma_u: 0.0 }
    }

    pub fn new(sigma_u: f64) -> Result<Self> {
        if !(sigma_u >= 0.0) || !sigma_u.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma_u must be >= 0, got {sigma_u}")));
        }
        Ok(Self { sigma_u })
    }
}

fn softmax_sample(logits: &[f64], rng: &mut RngState) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.uniform() * total;
    for (k, w) in weights.iter().enumerate() {
        if target < *w {
            return k;
        }
        target -= w;
    }
    weights.len() - 1
}

impl ScmKind {
    pub fn regression() -> Self {
        ScmKind::SynthRegression {
            label_noise: LabelNoiseScale::StdDev,
        }
    }

    pub fn exogenous_dim(&self) -> usize {
        match self {
            ScmKind::SynthRegression { .. } => 2,
            ScmKind::SynthClassification(c) => c.d,
        }
    }

    pub fn domain(&self) -> AttributeDomain {
        AttributeDomain::binary()
    }

    /// Evaluates the X structural equation at exogenous `u` under `do(A = a)`.
    pub fn structural_features(&self, u: &[f64], a: i64) -> Result<Vec<f64>> {
        if u.len() != self.exogenous_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.exogenous_dim(),
                got: u.len(),
            });
        }
        Ok(match self {
            ScmKind::SynthRegression { .. } => {
                let af = a as f64;
                vec![u[0].sin() + (af * u[1]).cos() + af + 0.1]
            }
            ScmKind::SynthClassification(c) => c.features(u, a),
        })
    }

    /// Samples `n` rows. Exogenous values and label noise are retained.
    pub fn generate(&self, n: usize, rng: &mut RngState) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidParameter("cannot generate an empty dataset".into()));
        }
        match self {
            ScmKind::SynthRegression { label_noise } => gen_regression(n, *label_noise, rng),
            ScmKind::SynthClassification(c) => gen_classification(n, c, rng),
        }
    }

    /// `X_{A<-target}` for `row` of `ds`, re-evaluated at `U + N(0, sigma_u^2 I)`.
    pub fn counterfactual_features(
        &self,
        ds: &Dataset,
        row: usize,
        target: i64,
        noise: &CfNoiseSpec,
        rng: &mut RngState,
    ) -> Result<Vec<f64>> {
        let u = ds.exogenous.as_ref().ok_or_else(|| {
            Error::Unsupported("row has no stored exogenous variables (CSV data without u columns?)".into())
        })?;
        if ds.domain.index_of(target).is_none() {
            return Err(Error::InvalidParameter(format!("attribute value {target} outside domain")));
        }
        let u_tilde: Vec<f64> = u
            .row(row)
            .iter()
            .map(|&v| rng.gaussian(v, noise.sigma_u))
            .collect::<Result<_>>()?;
        self.structural_features(&u_tilde, target)
    }
}

/// Synthetic regression SCM sample.
pub fn gen_regression(n: usize, label_noise: LabelNoiseScale, rng: &mut RngState) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("cannot generate an empty dataset".into()));
    }
    let scm = ScmKind::SynthRegression { label_noise };
    let sigma_y = label_noise.std_dev();
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(2 * n);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        let u1 = rng.standard_normal();
        let u2 = rng.standard_normal();
        let ai = i64::from(rng.bernoulli(0.4));
        let xi = scm.structural_features(&[u1, u2], ai)?[0];
        let e = rng.gaussian(0.0, sigma_y)?;
        x.push(xi);
        a.push(ai);
        y.push(0.2 * xi * xi + 1.2 * xi + 0.2 + e);
        u.extend_from_slice(&[u1, u2]);
        eps.push(e);
    }
    let mut ds = Dataset::new(
        Task::Regression,
        Matrix::new(n, 1, x)?,
        a,
        y,
        AttributeDomain::binary(),
        Some(Matrix::new(n, 2, u)?),
    )?;
    ds.label_noise = Some(Matrix::new(n, 1, eps)?);
    Ok(ds)
}

/// Synthetic multi-class SCM sample for the given frozen matrices.
pub fn gen_classification(n: usize, spec: &ClassificationScm, rng: &mut RngState) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("cannot generate an empty dataset".into()));
    }
    spec.validate()?;
    let (d, k) = (spec.d, spec.k);
    let mut x = Matrix::zeros(n, d);
    let mut u = Matrix::zeros(n, d);
    let mut e = Matrix::zeros(n, k);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..d {
            u.set(i, j, rng.standard_normal());
        }
        let ai = i64::from(rng.bernoulli(0.5));
        let xi = spec.features(u.row(i), ai);
        for c in 0..k {
            e.set(i, c, rng.gaussian(0.0, spec.sigma_logit)?);
        }
        let logits = spec.logits(&xi, u.row(i), e.row(i));
        y.push(softmax_sample(&logits, rng) as f64);
        x.row_mut(i).copy_from_slice(&xi);
        a.push(ai);
    }
    let mut ds = Dataset::new(
        Task::Classification { n_classes: k },
        x,
        a,
        y,
        AttributeDomain::binary(),
        Some(u),
    )?;
    ds.label_noise = Some(e);
    Ok(ds)
}
