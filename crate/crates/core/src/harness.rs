//! Experiment configuration, multi-run execution, aggregation and result
//! emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{estimate_pa, Cfr, Cfu, Pcf};
use crate::conformal::{
    conformalize, posthoc_union, quantile_rank, target, validate_alpha, ConformalRun, PlainScorer, SymmetrizedScorer,
    ViewpointModel,
};
use crate::dataset::{attach_counterfactuals, load_csv, split, CsvSchema, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::math::{make_rng, mean, sample_std};
use crate::metrics::{accuracy, argmax, avg_size, coverage, csd, mse, total_effect, TeMode};
use crate::models::{FeatureLayout, LogisticOptions, Output, Predictor};
use crate::scm::{CfNoiseSpec, ClassificationScm, LabelNoiseScale, ScmKind};
use crate::scores::{Aggregator, ScoreKind, Target};

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    SynthRegression {
        #[serde(default)]
        label_noise: LabelNoiseScale,
    },
    SynthClassification,
    Csv {
        path: PathBuf,
        schema: CsvSchema,
    },
}

impl DataSource {
    pub fn is_classification(&self) -> bool {
        match self {
            DataSource::SynthRegression { .. } => false,
            DataSource::SynthClassification => true,
            DataSource::Csv { schema, .. } => schema.classification,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SplitCp,
    PosthocUnion,
    Cfu,
    Cfr,
    Pcf,
    /// Expanded into one method per configured aggregator.
    CfCp,
}

impl Method {
    fn needs_counterfactuals(self) -> bool {
        !matches!(self, Method::SplitCp | Method::Cfu)
    }
}

/// One concrete method to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodInstance {
    SplitCp,
    PosthocUnion,
    Cfu,
    Cfr,
    Pcf,
    CfCp(Aggregator),
}

impl MethodInstance {
    pub fn name(&self) -> String {
        match self {
            MethodInstance::SplitCp => "SplitCP".into(),
            MethodInstance::PosthocUnion => "PostHocUnion".into(),
            MethodInstance::Cfu => "CFU".into(),
            MethodInstance::Cfr => "CFR".into(),
            MethodInstance::Pcf => "PCF".into(),
            MethodInstance::CfCp(a) => format!("CF-CP-{}", a.name()),
        }
    }
}

/// Counterfactual noise: one level for `run`, or a list for `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSetting {
    Scalar(f64),
    Sweep(Vec<f64>),
}

impl Default for NoiseSetting {
    fn default() -> Self {
        NoiseSetting::Scalar(0.0)
    }
}

fn default_alpha() -> f64 {
    0.1
}
fn default_aggregators() -> Vec<Aggregator> {
    vec![Aggregator::Mean, Aggregator::Max, Aggregator::Min]
}
fn default_n_train() -> usize {
    5000
}
fn default_n_cal() -> usize {
    1000
}
fn default_n_test() -> usize {
    5000
}
fn default_runs() -> usize {
    10
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Defaults to the absolute residual for regression and LAC for classification.
    #[serde(default)]
    pub score: Option<ScoreKind>,
    pub methods: Vec<Method>,
    #[serde(default = "default_aggregators")]
    pub aggregators: Vec<Aggregator>,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub cf_noise: NoiseSetting,
    #[serde(default = "default_true")]
    pub nonempty: bool,
    #[serde(default)]
    pub te_mode: TeMode,
    #[serde(default)]
    pub logistic: LogisticOptions,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Default settings for a data source and method list.
    pub fn new(source: DataSource, methods: Vec<Method>) -> Self {
        Self {
            source,
            alpha: default_alpha(),
            score: None,
            methods,
            aggregators: default_aggregators(),
            n_train: default_n_train(),
            n_cal: default_n_cal(),
            n_test: default_n_test(),
            runs: default_runs(),
            base_seed: 0,
            cf_noise: NoiseSetting::default(),
            nonempty: true,
            te_mode: TeMode::default(),
            logistic: LogisticOptions::default(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score.unwrap_or(if self.source.is_classification() {
            ScoreKind::Lac
        } else {
            ScoreKind::AbsResidual
        })
    }

    fn sigmas(&self) -> Vec<f64> {
        match &self.cf_noise {
            NoiseSetting::Scalar(s) => vec![*s],
            NoiseSetting::Sweep(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha).map_err(|e| Error::Config(e.to_string()))?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.methods.contains(&Method::CfCp) && self.aggregators.is_empty() {
            return Err(Error::Config("CF-CP requested without aggregators".into()));
        }
        if self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(Error::Config("split sizes must be positive".into()));
        }
        let k = quantile_rank(self.n_cal, self.alpha);
        if k > self.n_cal {
            return Err(Error::Config(format!(
                "n_cal = {} is too small for alpha = {}: quantile rank {k} exceeds n_cal",
                self.n_cal, self.alpha
            )));
        }
        let kind = self.score_kind();
        if kind.is_classification() != self.source.is_classification() {
            return Err(Error::Config(format!("score {kind:?} does not match the task")));
        }
        if let ScoreKind::Raps { lambda, .. } = kind {
            if !(lambda >= 0.0) {
                return Err(Error::Config("RAPS lambda must be nonnegative".into()));
            }
        }
        let sigmas = self.sigmas();
        if sigmas.is_empty() || sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("counterfactual noise levels must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn method_instances(&self) -> Vec<MethodInstance> {
        let mut out = Vec::new();
        for m in &self.methods {
            let expanded: Vec<MethodInstance> = match m {
                Method::SplitCp => vec![MethodInstance::SplitCp],
                Method::PosthocUnion => vec![MethodInstance::PosthocUnion],
                Method::Cfu => vec![MethodInstance::Cfu],
                Method::Cfr => vec![MethodInstance::Cfr],
                Method::Pcf => vec![MethodInstance::Pcf],
                Method::CfCp => self.aggregators.iter().map(|&a| MethodInstance::CfCp(a)).collect(),
            };
            for e in expanded {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Hex SHA-256 of the config's JSON serialization.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Aggregated metric for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub config_hash: String,
}

/// One point of a noise sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub method: String,
    pub csd_mean: f64,
    pub csd_std: f64,
}

/// Metric values of a single run, in emission order.
type RunMetrics = Vec<(String, &'static str, f64)>;

enum Prepared {
    Synthetic(ScmKind),
    Csv(Dataset),
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    Ok(match &cfg.source {
        DataSource::SynthRegression { label_noise } => Prepared::Synthetic(ScmKind::SynthRegression {
            label_noise: *label_noise,
        }),
        DataSource::SynthClassification => {
            let mut rng = make_rng(cfg.base_seed, "scm/matrices");
            Prepared::Synthetic(ScmKind::SynthClassification(ClassificationScm::sample(&mut rng)?))
        }
        DataSource::Csv { path, schema } => Prepared::Csv(load_csv(path, schema)?),
    })
}

fn check_capabilities(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<()> {
    let (has_u, has_cf) = match prepared {
        Prepared::Synthetic(_) => (true, true),
        Prepared::Csv(ds) => (ds.exogenous.is_some(), ds.has_counterfactuals()),
    };
    for m in &cfg.methods {
        let name = format!("{m:?}");
        if *m == Method::Cfu && !has_u {
            return Err(Error::Unsupported(format!("method {name} requires exogenous variables U")));
        }
        if m.needs_counterfactuals() && !has_cf {
            return Err(Error::Unsupported(format!("method {name} requires counterfactual features")));
        }
    }
    Ok(())
}

/// Rows of `ds` evaluated through `model` from the factual viewpoint and,
/// when counterfactuals exist, from every other viewpoint.
fn point_metrics(
    model: &dyn ViewpointModel,
    test: &Dataset,
    te_mode: TeMode,
    out: &mut Vec<(&'static str, f64)>,
) -> Result<()> {
    let mut factual = Vec::with_capacity(test.len());
    let mut cf = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let f = test.factual_index(i);
        factual.push(model.point(test, i, f)?);
        if test.has_counterfactuals() {
            cf.push(
                (0..test.domain.len())
                    .filter(|&v| v != f)
                    .map(|v| model.point(test, i, v))
                    .collect::<Result<Vec<Output>>>()?,
            );
        }
    }
    if test.task.is_classification() {
        let pred: Vec<usize> = factual.iter().map(|o| argmax(o.as_probs().unwrap_or(&[]))).collect();
        let y: Vec<usize> = (0..test.len()).map(|i| test.class_label(i)).collect();
        out.push(("accuracy", accuracy(&pred, &y)?));
    } else {
        let pred: Vec<f64> = factual.iter().map(|o| o.as_real().unwrap_or(f64::NAN)).collect();
        out.push(("mse", mse(&pred, &test.y)?));
    }
    if test.has_counterfactuals() {
        out.push(("te", total_effect(&factual, &cf, te_mode)?));
    }
    Ok(())
}

fn set_metrics(run: &ConformalRun, test: &Dataset, out: &mut Vec<(&'static str, f64)>) -> Result<()> {
    let sets = run.factual_sets();
    let y: Vec<Target> = (0..test.len()).map(|i| target(test, i)).collect();
    out.push(("coverage", coverage(&sets, &y)?));
    out.push(("avg_size", avg_size(&sets)?));
    if test.has_counterfactuals() {
        out.push(("csd", csd(&run.sets)?));
    }
    Ok(())
}

fn run_once(cfg: &ExperimentConfig, prepared: &Prepared, sigma: f64, r: usize) -> Result<RunMetrics> {
    let seed = cfg.base_seed;
    let spec = SplitSpec {
        n_train: cfg.n_train,
        n_cal: cfg.n_cal,
        n_test: cfg.n_test,
    };
    let noise = CfNoiseSpec::new(sigma)?;
    let mut noise_rng = make_rng(seed, &format!("run{r}/noise"));
    let full = match prepared {
        Prepared::Synthetic(scm) => {
            let ds = scm.generate(spec.total(), &mut make_rng(seed, &format!("run{r}/data")))?;
            attach_counterfactuals(&ds, Some(scm), &noise, &mut noise_rng)?
        }
        Prepared::Csv(ds) if ds.has_counterfactuals() => attach_counterfactuals(ds, None, &noise, &mut noise_rng)?,
        Prepared::Csv(ds) => ds.clone(),
    };
    let (train, cal, test) = split(&full, &spec, &mut make_rng(seed, &format!("run{r}/split")))?;

    let n_classes = train.task.n_classes();
    let layout = FeatureLayout::for_domain(train.n_features(), &train.domain);
    let base = Predictor::fit(layout, &train.x, &train.a, &train.y, n_classes, &cfg.logistic)?;
    let instances = cfg.method_instances();
    let cfu = if instances.contains(&MethodInstance::Cfu) {
        Some(Cfu::fit(&train, &cfg.logistic)?)
    } else {
        None
    };
    let cfr = if instances.contains(&MethodInstance::Cfr) {
        Some(Cfr::fit(&train, &cfg.logistic)?)
    } else {
        None
    };
    let pcf = if instances.contains(&MethodInstance::Pcf) {
        Some(Pcf {
            predictor: &base,
            p_a: estimate_pa(&train.a, &train.domain)?,
        })
    } else {
        None
    };

    let kind = cfg.score_kind();
    let plain = PlainScorer { predictor: &base };
    let mut base_points = Vec::new();
    if instances
        .iter()
        .any(|m| matches!(m, MethodInstance::SplitCp | MethodInstance::PosthocUnion | MethodInstance::CfCp(_)))
    {
        point_metrics(&plain, &test, cfg.te_mode, &mut base_points)?;
    }

    let mut rows = RunMetrics::new();
    for m in &instances {
        let mut values = Vec::new();
        match m {
            MethodInstance::SplitCp => {
                let run = conformalize(&plain, &kind, &cal, &test, cfg.alpha, cfg.nonempty)?;
                set_metrics(&run, &test, &mut values)?;
                values.extend(base_points.iter().copied());
            }
            MethodInstance::PosthocUnion => {
                let run = posthoc_union(&cal, &test, &base, &kind, cfg.alpha, cfg.nonempty)?;
                set_metrics(&run, &test, &mut values)?;
                values.extend(base_points.iter().copied());
            }
            MethodInstance::CfCp(agg) => {
                let scorer = SymmetrizedScorer {
                    predictor: &base,
                    aggregator: *agg,
                };
                let run = conformalize(&scorer, &kind, &cal, &test, cfg.alpha, cfg.nonempty)?;
                set_metrics(&run, &test, &mut values)?;
                values.extend(base_points.iter().copied());
            }
            MethodInstance::Cfu | MethodInstance::Cfr | MethodInstance::Pcf => {
                let model: &dyn ViewpointModel = match m {
                    MethodInstance::Cfu => cfu.as_ref().expect("fitted"),
                    MethodInstance::Cfr => cfr.as_ref().expect("fitted"),
                    _ => pcf.as_ref().expect("built"),
                };
                let run = conformalize(model, &kind, &cal, &test, cfg.alpha, cfg.nonempty)?;
                set_metrics(&run, &test, &mut values)?;
                point_metrics(model, &test, cfg.te_mode, &mut values)?;
            }
        }
        rows.extend(values.into_iter().map(|(metric, v)| (m.name(), metric, v)));
    }
    Ok(rows)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn aggregate(per_run: &[RunMetrics], runs: usize, hash: &str) -> Vec<ResultRow> {
    let mut order: Vec<(String, &'static str)> = Vec::new();
    let mut values: BTreeMap<(String, &'static str), Vec<f64>> = BTreeMap::new();
    for run in per_run {
        for (method, metric, v) in run {
            let key = (method.clone(), *metric);
            if !values.contains_key(&key) {
                order.push(key.clone());
            }
            values.entry(key).or_default().push(*v);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &values[&key];
            ResultRow {
                method: key.0,
                metric: key.1.to_string(),
                mean: mean(vals),
                std: if vals.len() > 1 { sample_std(vals) } else { 0.0 },
                runs,
                config_hash: hash.to_string(),
            }
        })
        .collect()
}

fn run_sigma(cfg: &ExperimentConfig, prepared: &Prepared, sigma: f64) -> Result<Vec<ResultRow>> {
    let per_run = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            run_once(cfg, prepared, sigma, r).map_err(|e| Error::RunFailed {
                run: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hashed = cfg.clone();
    hashed.cf_noise = NoiseSetting::Scalar(sigma);
    Ok(aggregate(&per_run, cfg.runs, &hashed.config_hash()))
}

/// Runs every configured method over `cfg.runs` random splits and aggregates
/// each metric as mean and sample standard deviation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_with_jobs(cfg, None)
}

pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let sigma = match &cfg.cf_noise {
        NoiseSetting::Scalar(s) => *s,
        NoiseSetting::Sweep(_) => {
            return Err(Error::Config("cf_noise is a list; use a noise sweep".into()));
        }
    };
    let prepared = prepare(cfg)?;
    check_capabilities(cfg, &prepared)?;
    with_pool(jobs, || run_sigma(cfg, &prepared, sigma))?
}

/// One full experiment per noise level; returns the CSD of every method that
/// produces counterfactual sets. Uses the config's noise list when `sigmas`
/// is empty.
pub fn noise_sweep(cfg: &ExperimentConfig, sigmas: &[f64], jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    let mut cfg = cfg.clone();
    if !sigmas.is_empty() {
        cfg.cf_noise = NoiseSetting::Sweep(sigmas.to_vec());
    }
    cfg.validate()?;
    let sigmas = cfg.sigmas();
    let prepared = prepare(&cfg)?;
    check_capabilities(&cfg, &prepared)?;
    if let Prepared::Csv(ds) = &prepared {
        if !ds.has_counterfactuals() && sigmas.iter().any(|&s| s > 0.0) {
            return Err(Error::Unsupported("noise sweep requires counterfactual features".into()));
        }
    }
    let per_sigma = with_pool(jobs, || {
        sigmas
            .par_iter()
            .map(|&s| run_sigma(&cfg, &prepared, s))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(sigmas
        .iter()
        .zip(per_sigma)
        .flat_map(|(&sigma, rows)| {
            rows.into_iter().filter(|r| r.metric == "csd").map(move |r| SweepRow {
                sigma,
                method: r.method,
                csd_mean: r.mean,
                csd_std: r.std,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Writes records with a fixed column order. CSV always starts with a header
/// line, even for zero records.
pub fn write_records<T: Serialize, W: Write>(rows: &[T], header: &[&str], out: W, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(header)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub const RESULT_HEADER: [&str; 6] = ["method", "metric", "mean", "std", "runs", "config_hash"];
pub const SWEEP_HEADER: [&str; 4] = ["sigma", "method", "csd_mean", "csd_std"];

pub fn emit_results<P: AsRef<Path>>(rows: &[ResultRow], path: P, format: OutputFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records(rows, &RESULT_HEADER, std::io::BufWriter::new(file), format)
}

/// Reads result rows back from CSV.
pub fn read_results_csv<P: AsRef<Path>>(path: P) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}
