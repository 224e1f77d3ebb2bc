//! Dataset container, splitting, counterfactual attachment and CSV I/O.
//!
//! Every row can be looked at from any attribute *viewpoint*. The factual
//! viewpoint of row `i` sees the observed features `X_i`; the viewpoint
//! `a'` sees the counterfactual features `X_{A<-a'}` together with the
//! counterfactuals of that counterfactual individual. With oracle
//! counterfactuals every viewpoint enumerates the same multiset of
//! counterfactual rows.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::scm::{CfNoiseSpec, ScmKind};

/// Prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

impl Task {
    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Task::Classification { n_classes } => Some(*n_classes),
            Task::Regression => None,
        }
    }
}

/// Finite protected-attribute domain in canonical ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDomain(Vec<i64>);

impl AttributeDomain {
    pub fn new<I: IntoIterator<Item = i64>>(values: I) -> Result<Self> {
        let set: BTreeSet<i64> = values.into_iter().collect();
        if set.is_empty() {
            return Err(Error::InvalidParameter("attribute domain is empty".into()));
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn binary() -> Self {
        Self(vec![0, 1])
    }

    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, a: i64) -> Option<usize> {
        self.0.binary_search(&a).ok()
    }

    pub fn value(&self, idx: usize) -> i64 {
        self.0[idx]
    }
}

/// Counterfactual feature matrices, one per attribute value in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactuals {
    /// `features[k]` row `i` is `X_{A<-domain[k]}` for row `i`.
    pub features: Vec<Matrix>,
    /// Noise-free counterfactuals the noisy ones were derived from (CSV path).
    pub oracle: Vec<Matrix>,
    /// Exogenous values the counterfactuals were computed from (`U + noise`).
    pub exogenous: Option<Matrix>,
    /// Standard deviation of the noise used to form `features`.
    pub noise_sigma: f64,
}

impl Counterfactuals {
    fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.iter().map(|m| m.select_rows(idx)).collect(),
            oracle: self.oracle.iter().map(|m| m.select_rows(idx)).collect(),
            exogenous: self.exogenous.as_ref().map(|m| m.select_rows(idx)),
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub x: Matrix,
    pub a: Vec<i64>,
    pub y: Vec<f64>,
    pub domain: AttributeDomain,
    /// Exogenous variables `U`, when known.
    pub exogenous: Option<Matrix>,
    /// Label-equation noise held fixed under interventions (synthetic data only).
    pub label_noise: Option<Matrix>,
    pub counterfactuals: Option<Counterfactuals>,
}

impl Dataset {
    /// Validates row counts and attribute membership.
    pub fn new(
        task: Task,
        x: Matrix,
        a: Vec<i64>,
        y: Vec<f64>,
        domain: AttributeDomain,
        exogenous: Option<Matrix>,
    ) -> Result<Self> {
        let ds = Self {
            task,
            x,
            a,
            y,
            domain,
            exogenous,
            label_noise: None,
            counterfactuals: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        let check = |got: usize| {
            if got != n {
                Err(Error::DimensionMismatch { expected: n, got })
            } else {
                Ok(())
            }
        };
        check(self.a.len())?;
        check(self.y.len())?;
        if let Some(u) = &self.exogenous {
            check(u.rows())?;
        }
        if let Some(e) = &self.label_noise {
            check(e.rows())?;
        }
        for &a in &self.a {
            if self.domain.index_of(a).is_none() {
                return Err(Error::InvalidParameter(format!("attribute value {a} outside domain")));
            }
        }
        if let Task::Classification { n_classes } = self.task {
            for &y in &self.y {
                if y < 0.0 || y.fract() != 0.0 || y as usize >= n_classes {
                    return Err(Error::InvalidParameter(format!(
                        "class label {y} outside 0..{n_classes}"
                    )));
                }
            }
        }
        if let Some(cf) = &self.counterfactuals {
            if cf.features.len() != self.domain.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.domain.len(),
                    got: cf.features.len(),
                });
            }
            for m in cf.features.iter().chain(&cf.oracle) {
                check(m.rows())?;
                if m.cols() != self.x.cols() {
                    return Err(Error::DimensionMismatch {
                        expected: self.x.cols(),
                        got: m.cols(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn has_counterfactuals(&self) -> bool {
        self.counterfactuals.is_some()
    }

    /// Domain index of row `i`'s factual attribute.
    pub fn factual_index(&self, row: usize) -> usize {
        self.domain.index_of(self.a[row]).expect("validated attribute")
    }

    pub fn class_label(&self, row: usize) -> usize {
        self.y[row] as usize
    }

    fn cf(&self) -> Result<&Counterfactuals> {
        self.counterfactuals
            .as_ref()
            .ok_or_else(|| Error::Unsupported("dataset has no counterfactual features".into()))
    }

    /// Features of row `row` seen from viewpoint `v` (a domain index).
    pub fn features_at(&self, row: usize, v: usize) -> Result<&[f64]> {
        if v == self.factual_index(row) {
            Ok(self.x.row(row))
        } else {
            Ok(self.cf()?.features[v].row(row))
        }
    }

    /// Counterfactual features under `do(A = domain[target])` for the
    /// individual seen from viewpoint `v`.
    pub fn counterfactual_at(&self, row: usize, v: usize, target: usize) -> Result<&[f64]> {
        let factual = self.factual_index(row);
        if v == factual && target == factual {
            Ok(self.x.row(row))
        } else {
            Ok(self.cf()?.features[target].row(row))
        }
    }

    /// Exogenous values of the individual seen from viewpoint `v`.
    pub fn exogenous_at(&self, row: usize, v: usize) -> Result<&[f64]> {
        let u = self
            .exogenous
            .as_ref()
            .ok_or_else(|| Error::Unsupported("dataset has no exogenous variables".into()))?;
        if v == self.factual_index(row) {
            return Ok(u.row(row));
        }
        match self.cf()?.exogenous.as_ref() {
            Some(noisy) => Ok(noisy.row(row)),
            None => Ok(u.row(row)),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            domain: self.domain.clone(),
            exogenous: self.exogenous.as_ref().map(|m| m.select_rows(idx)),
            label_noise: self.label_noise.as_ref().map(|m| m.select_rows(idx)),
            counterfactuals: self.counterfactuals.as_ref().map(|c| c.select_rows(idx)),
        }
    }
}

/// Sizes of a train / calibration / test partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_cal + self.n_test
    }
}

/// Uniformly random disjoint partition drawn from a seeded Fisher–Yates permutation.
pub fn split(ds: &Dataset, spec: &SplitSpec, rng: &mut RngState) -> Result<(Dataset, Dataset, Dataset)> {
    if spec.total() > ds.len() {
        return Err(Error::InvalidParameter(format!(
            "split sizes {}+{}+{} exceed {} rows",
            spec.n_train,
            spec.n_cal,
            spec.n_test,
            ds.len()
        )));
    }
    let perm = rng.permutation(ds.len());
    let (train, rest) = perm.split_at(spec.n_train);
    let (cal, rest) = rest.split_at(spec.n_cal);
    let test = &rest[..spec.n_test];
    Ok((ds.select_rows(train), ds.select_rows(cal), ds.select_rows(test)))
}

/// Populates counterfactual features for every attribute value.
///
/// With stored exogenous variables and an SCM the features are recomputed
/// from `U + noise`. Otherwise previously supplied counterfactuals (e.g. from
/// CSV) are perturbed directly with Gaussian noise of standard deviation
/// `noise.sigma_u`.
pub fn attach_counterfactuals(
    ds: &Dataset,
    scm: Option<&ScmKind>,
    noise: &CfNoiseSpec,
    rng: &mut RngState,
) -> Result<Dataset> {
    if let Some(cf) = &ds.counterfactuals {
        if cf.noise_sigma == noise.sigma_u {
            return Ok(ds.clone());
        }
    }
    let mut out = ds.clone();
    match (scm, &ds.exogenous) {
        (Some(scm), Some(u)) => {
            let d = ds.n_features();
            let mut features: Vec<Matrix> = (0..ds.domain.len()).map(|_| Matrix::zeros(ds.len(), d)).collect();
            let mut noisy_u = Matrix::zeros(u.rows(), u.cols());
            for i in 0..ds.len() {
                let u_tilde = perturb(u.row(i), noise.sigma_u, rng)?;
                for (k, &target) in ds.domain.values().iter().enumerate() {
                    let x = scm.structural_features(&u_tilde, target)?;
                    features[k].row_mut(i).copy_from_slice(&x);
                }
                noisy_u.row_mut(i).copy_from_slice(&u_tilde);
            }
            let oracle = if noise.sigma_u == 0.0 {
                features.clone()
            } else {
                let mut oracle: Vec<Matrix> = (0..ds.domain.len()).map(|_| Matrix::zeros(ds.len(), d)).collect();
                for i in 0..ds.len() {
                    for (k, &target) in ds.domain.values().iter().enumerate() {
                        oracle[k].row_mut(i).copy_from_slice(&scm.structural_features(u.row(i), target)?);
                    }
                }
                oracle
            };
            out.counterfactuals = Some(Counterfactuals {
                features,
                oracle,
                exogenous: Some(noisy_u),
                noise_sigma: noise.sigma_u,
            });
        }
        _ => {
            let cf = ds.counterfactuals.as_ref().ok_or_else(|| {
                Error::Unsupported("no exogenous variables and no counterfactual features to attach".into())
            })?;
            let mut features = Vec::with_capacity(cf.oracle.len());
            for m in &cf.oracle {
                let mut noisy = m.clone();
                for i in 0..noisy.rows() {
                    let row = perturb(m.row(i), noise.sigma_u, rng)?;
                    noisy.row_mut(i).copy_from_slice(&row);
                }
                features.push(noisy);
            }
            out.counterfactuals = Some(Counterfactuals {
                features,
                oracle: cf.oracle.clone(),
                exogenous: None,
                noise_sigma: noise.sigma_u,
            });
        }
    }
    Ok(out)
}

fn perturb(values: &[f64], sigma: f64, rng: &mut RngState) -> Result<Vec<f64>> {
    values.iter().map(|&v| rng.gaussian(v, sigma)).collect()
}

/// How CSV columns are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub classification: bool,
    /// Class count; inferred as `max(y) + 1` when absent.
    #[serde(default)]
    pub n_classes: Option<usize>,
}

impl CsvSchema {
    pub fn regression() -> Self {
        Self {
            classification: false,
            n_classes: None,
        }
    }

    pub fn classification(n_classes: Option<usize>) -> Self {
        Self {
            classification: true,
            n_classes,
        }
    }
}

fn parse_cf_column(name: &str) -> Option<(i64, usize)> {
    let rest = name.strip_prefix("cf_")?;
    let (aval, j) = rest.rsplit_once("_x")?;
    Some((aval.parse().ok()?, j.parse().ok()?))
}

fn indexed_column(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

/// Collects `prefix0..prefix{m-1}` column positions; gaps are an error.
fn indexed_block(header: &csv::StringRecord, prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(pos, name)| indexed_column(name, prefix).map(|j| (j, pos)))
        .collect();
    found.sort_unstable();
    for (expect, (j, _)) in found.iter().enumerate() {
        if *j != expect {
            return Err(Error::Parse {
                row: 0,
                column: format!("{prefix}{expect}"),
                message: "missing column in indexed block".into(),
            });
        }
    }
    Ok(found.into_iter().map(|(_, pos)| pos).collect())
}

fn parse_cell(record: &csv::StringRecord, pos: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(pos).ok_or_else(|| Error::Parse {
        row,
        column: column.to_string(),
        message: "missing cell".into(),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("non-numeric value '{raw}'"),
    })
}

/// Loads a dataset. Header: `x0..x{d-1}, a, y[, u0..][, cf_<a>_x0..]`.
/// Rows are numbered from 1 (first data row) in parse errors.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "required column missing".into(),
        })
    };
    let a_pos = col("a")?;
    let y_pos = col("y")?;
    let x_pos = indexed_block(&header, 'x')?;
    if x_pos.is_empty() {
        return Err(Error::Parse {
            row: 0,
            column: "x0".into(),
            message: "required column missing".into(),
        });
    }
    let u_pos = indexed_block(&header, 'u')?;
    let d = x_pos.len();
    let mut cf_cols: Vec<(i64, usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(pos, name)| parse_cf_column(name).map(|(a, j)| (a, j, pos)))
        .collect();
    cf_cols.sort_unstable();

    let mut x = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut u = Vec::new();
    let mut cf_raw: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        for (j, &pos) in x_pos.iter().enumerate() {
            x.push(parse_cell(&record, pos, row, &format!("x{j}"))?);
        }
        let av = parse_cell(&record, a_pos, row, "a")?;
        if av.fract() != 0.0 {
            return Err(Error::Parse {
                row,
                column: "a".into(),
                message: format!("attribute value {av} is not an integer"),
            });
        }
        a.push(av as i64);
        let yv = parse_cell(&record, y_pos, row, "y")?;
        if schema.classification && (yv < 0.0 || yv.fract() != 0.0) {
            return Err(Error::Parse {
                row,
                column: "y".into(),
                message: format!("class label {yv} is not a non-negative integer"),
            });
        }
        y.push(yv);
        for (j, &pos) in u_pos.iter().enumerate() {
            u.push(parse_cell(&record, pos, row, &format!("u{j}"))?);
        }
        let mut cf_row = Vec::with_capacity(cf_cols.len());
        for &(av, j, pos) in &cf_cols {
            cf_row.push(parse_cell(&record, pos, row, &format!("cf_{av}_x{j}"))?);
        }
        cf_raw.push(cf_row);
    }
    let n = a.len();
    let domain = AttributeDomain::new(a.iter().copied())?;
    let task = if schema.classification {
        let inferred = y.iter().fold(0usize, |m, &v| m.max(v as usize + 1));
        Task::Classification {
            n_classes: schema.n_classes.unwrap_or(inferred),
        }
    } else {
        Task::Regression
    };
    let exogenous = if u_pos.is_empty() {
        None
    } else {
        Some(Matrix::new(n, u_pos.len(), u)?)
    };
    let mut ds = Dataset::new(task, Matrix::new(n, d, x)?, a, y, domain, exogenous)?;

    if !cf_cols.is_empty() {
        // one complete block of d columns per domain value, in canonical order
        let mut features = Vec::with_capacity(ds.domain.len());
        for &av in ds.domain.values() {
            let block: Vec<usize> = cf_cols
                .iter()
                .enumerate()
                .filter(|(_, c)| c.0 == av)
                .map(|(k, _)| k)
                .collect();
            let js: Vec<usize> = block.iter().map(|&k| cf_cols[k].1).collect();
            if js != (0..d).collect::<Vec<_>>() {
                return Err(Error::Parse {
                    row: 0,
                    column: format!("cf_{av}_x*"),
                    message: format!("expected {d} counterfactual columns for attribute value {av}"),
                });
            }
            let mut m = Matrix::zeros(n, d);
            for (i, cf_row) in cf_raw.iter().enumerate() {
                for (j, &k) in block.iter().enumerate() {
                    m.set(i, j, cf_row[k]);
                }
            }
            features.push(m);
        }
        if cf_cols.len() != d * ds.domain.len() {
            return Err(Error::Parse {
                row: 0,
                column: "cf_*".into(),
                message: "counterfactual columns reference attribute values absent from the data".into(),
            });
        }
        ds.counterfactuals = Some(Counterfactuals {
            oracle: features.clone(),
            features,
            exogenous: None,
            noise_sigma: 0.0,
        });
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes the dataset in the format read by [`load_csv`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn save_csv<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = ds.n_features();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("a".into());
    header.push("y".into());
    if let Some(u) = &ds.exogenous {
        header.extend((0..u.cols()).map(|j| format!("u{j}")));
    }
    if ds.counterfactuals.is_some() {
        for &av in ds.domain.values() {
            header.extend((0..d).map(|j| format!("cf_{av}_x{j}")));
        }
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.a[i].to_string());
        rec.push(if ds.task.is_classification() {
            (ds.y[i] as usize).to_string()
        } else {
            ds.y[i].to_string()
        });
        if let Some(u) = &ds.exogenous {
            rec.extend(u.row(i).iter().map(|v| v.to_string()));
        }
        if let Some(cf) = &ds.counterfactuals {
            for m in &cf.features {
                rec.extend(m.row(i).iter().map(|v| v.to_string()));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::make_rng;

    fn toy(n: usize) -> Dataset {
        let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let a = (0..n).map(|i| (i % 2) as i64).collect();
        let y = (0..n).map(|i| i as f64 * 10.0).collect();
        let u = Matrix::new(n, 1, (0..n).map(|i| -(i as f64)).collect()).unwrap();
        Dataset::new(Task::Regression, x, a, y, AttributeDomain::binary(), Some(u)).unwrap()
    }

    #[test]
    fn split_is_a_partition() {
        let ds = toy(10);
        let spec = SplitSpec {
            n_train: 6,
            n_cal: 2,
            n_test: 2,
        };
        let (tr, ca, te) = split(&ds, &spec, &mut make_rng(1, "split")).unwrap();
        assert_eq!((tr.len(), ca.len(), te.len()), (6, 2, 2));
        let mut all: Vec<f64> = tr.x.iter_rows().chain(ca.x.iter_rows()).chain(te.x.iter_rows()).map(|r| r[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        // side data travels with rows
        for part in [&tr, &ca, &te] {
            for i in 0..part.len() {
                let k = part.x.get(i, 0);
                assert_eq!(part.y[i], k * 10.0);
                assert_eq!(part.exogenous.as_ref().unwrap().get(i, 0), -k);
                assert_eq!(part.a[i], (k as i64) % 2);
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_label_sensitive() {
        let ds = toy(50);
        let spec = SplitSpec {
            n_train: 30,
            n_cal: 10,
            n_test: 10,
        };
        let a = split(&ds, &spec, &mut make_rng(3, "split")).unwrap();
        let b = split(&ds, &spec, &mut make_rng(3, "split")).unwrap();
        let c = split(&ds, &spec, &mut make_rng(3, "other")).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn oversize_split_rejected() {
        let spec = SplitSpec {
            n_train: 6,
            n_cal: 3,
            n_test: 2,
        };
        assert!(matches!(
            split(&toy(10), &spec, &mut make_rng(0, "s")),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn attach_without_sources_is_unsupported() {
        let mut ds = toy(4);
        ds.exogenous = None;
        let err = attach_counterfactuals(&ds, None, &CfNoiseSpec::oracle(), &mut make_rng(0, "n")).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn viewpoint_accessors_require_counterfactuals() {
        let ds = toy(4);
        assert_eq!(ds.features_at(1, 1).unwrap(), &[1.0]);
        assert!(matches!(ds.features_at(1, 0), Err(Error::Unsupported(_))));
        assert_eq!(ds.counterfactual_at(0, 0, 0).unwrap(), &[0.0]);
    }

    #[test]
    fn validation_rejects_inconsistent_rows() {
        let x = Matrix::zeros(3, 1);
        assert!(Dataset::new(Task::Regression, x.clone(), vec![0, 1], vec![0.0; 3], AttributeDomain::binary(), None).is_err());
        assert!(Dataset::new(Task::Regression, x.clone(), vec![0, 1, 5], vec![0.0; 3], AttributeDomain::binary(), None).is_err());
        assert!(Dataset::new(
            Task::Classification { n_classes: 2 },
            x,
            vec![0, 1, 0],
            vec![0.0, 1.0, 2.0],
            AttributeDomain::binary(),
            None
        )
        .is_err());
    }
}
