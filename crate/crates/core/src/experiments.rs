//! Monte Carlo experiment suites.
//!
//! * [`run_delta_sweep`]: fit on a training sample, solve the program over a
//!   grid of tolerances, evaluate each policy on an independent sample of the
//!   same size.
//! * [`run_dr_comparison`]: the same sweep for the DR, PI and IPW moment
//!   estimators at several sample sizes.
//! * [`run_case_study`]: one train/evaluation split of a CSV table, reporting
//!   risk and unfairness at `δ = 0` and `δ = ∞`.
//!
//! Replicates run in parallel; each derives its seeds from the base seed and
//! its index alone, and results are collected in replicate order, so output
//! files are identical across runs and worker counts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{expand, BasisSpec};
use crate::dataset::{load_csv_with_report, BinaryColumn, CovariateColumn, ObservationalDataset, Schema, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::estimate::Estimator;
use crate::fairness::{fairness_moment, CriterionConfig, FairnessCriterion, FairnessMoment};
use crate::learners::LearnerSpec;
use crate::moments::{influence_values, MomentMethod};
use crate::nuisance::DEFAULT_EPSILON;
use crate::policy::{recidivism_objective_flip, threshold, PolicyReport};
use crate::qp::QpSettings;
use crate::stats::MeanSe;
use crate::synth::{self, Variant};

/// Serializable learner choice. Covariates in `drop` are named as in `W`
/// (`s`, then the covariate names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(flatten)]
    pub kind: LearnerKindConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerKindConfig {
    PolyRidge {
        degree: usize,
        penalty: f64,
    },
    BoostedTrees {
        trees: usize,
        #[serde(default = "one")]
        depth: usize,
        learning_rate: f64,
        #[serde(default = "five")]
        min_leaf: usize,
    },
    Knn {
        k: usize,
    },
    Constant,
    /// The true regression of the synthetic process.
    Oracle,
    /// Predicts `value` everywhere.
    Fixed {
        value: f64,
    },
}

fn one() -> usize {
    1
}

fn five() -> usize {
    5
}

impl LearnerConfig {
    pub fn new(kind: LearnerKindConfig) -> Self {
        Self { kind, drop: Vec::new() }
    }

    pub fn default_outcome() -> Self {
        Self::new(LearnerKindConfig::PolyRidge { degree: 3, penalty: 1e-4 })
    }

    pub fn default_propensity() -> Self {
        Self::new(LearnerKindConfig::PolyRidge { degree: 1, penalty: 1e-3 })
    }

    /// `outcome` selects between the outcome and propensity oracle. Oracles
    /// need a synthetic source.
    pub fn resolve(&self, outcome: bool, variant: Option<Variant>, w_names: &[String]) -> Result<LearnerSpec> {
        let spec = match &self.kind {
            LearnerKindConfig::PolyRidge { degree, penalty } => LearnerSpec::poly_ridge(*degree, *penalty),
            LearnerKindConfig::BoostedTrees {
                trees,
                depth,
                learning_rate,
                min_leaf,
            } => LearnerSpec::new(crate::learners::LearnerKind::BoostedTrees {
                trees: *trees,
                depth: *depth,
                learning_rate: *learning_rate,
                min_leaf: *min_leaf,
            }),
            LearnerKindConfig::Knn { k } => LearnerSpec::knn(*k),
            LearnerKindConfig::Constant => LearnerSpec::constant(),
            LearnerKindConfig::Fixed { value } => synth::fixed_propensity_learner(*value),
            LearnerKindConfig::Oracle => {
                let v = variant.ok_or_else(|| Error::Config("oracle learners need a synthetic data source".into()))?;
                if outcome {
                    synth::oracle_outcome_learner()
                } else {
                    synth::oracle_propensity_learner(v)
                }
            }
        };
        let drop = self
            .drop
            .iter()
            .map(|name| {
                w_names
                    .iter()
                    .position(|w| w == name)
                    .ok_or_else(|| Error::Config(format!("learner drops unknown covariate {name:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        spec.validate().map_err(Error::Config)?;
        Ok(spec.dropping(drop))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Dgp {
        #[serde(default)]
        variant: Variant,
    },
    /// Replicates are random train/evaluation splits of the table.
    Csv { path: PathBuf, schema: Schema },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Dgp { variant: Variant::Paper }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

pub fn default_deltas() -> Vec<f64> {
    linspace(0.0, 4.0, 17)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Training sample size (synthetic sources).
    pub n: usize,
    /// Evaluation sample size; defaults to `n`.
    pub eval_n: Option<usize>,
    /// Sample sizes for the estimator comparison.
    pub sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(with = "crate::fairness::tolerance::vec")]
    pub deltas: Vec<f64>,
    pub criteria: Vec<CriterionConfig>,
    pub estimators: Vec<MomentMethod>,
    pub basis: BasisSpec,
    pub outcome_learner: LearnerConfig,
    pub propensity_learner: LearnerConfig,
    pub folds: usize,
    pub epsilon: f64,
    pub qp: QpSettings,
    /// Training share of CSV splits.
    pub train_fraction: f64,
    /// Negate the outcome before fitting (smaller-is-better outcomes).
    pub flip_outcome: bool,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            n: 2000,
            eval_n: None,
            sizes: vec![2000, 10000],
            replicates: 500,
            deltas: default_deltas(),
            criteria: vec![CriterionConfig::Independence { delta: 0.0 }],
            estimators: vec![MomentMethod::Dr],
            basis: BasisSpec::default(),
            outcome_learner: LearnerConfig::default_outcome(),
            propensity_learner: LearnerConfig::default_propensity(),
            folds: DEFAULT_FOLDS,
            epsilon: DEFAULT_EPSILON,
            qp: QpSettings::default(),
            train_fraction: 2.0 / 3.0,
            flip_outcome: false,
            seed: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("missing required key `seed`".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.replicates == 0 {
            return Err(Error::Config("`replicates` must be at least 1".into()));
        }
        if self.deltas.is_empty() {
            return Err(Error::Config("`deltas` must not be empty".into()));
        }
        if self.deltas.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::Config("`deltas` must be >= 0".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("`deltas` must be sorted ascending".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("`estimators` must not be empty".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("`train_fraction` must lie in (0, 1)".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("`workers` must be at least 1".into()));
        }
        Ok(())
    }

    fn variant(&self) -> Option<Variant> {
        match &self.source {
            DataSource::Dgp { variant } => Some(*variant),
            DataSource::Csv { .. } => None,
        }
    }
}

/// Per-replicate derived seeds, a function of `(base, replicate)` only.
fn replicate_seeds(base: u64, replicate: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(replicate as u64 + 1);
    [rng.random(), rng.random(), rng.random()]
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub replicate: usize,
    pub message: String,
}

/// Aggregated sweep over one training sample size.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub deltas: Vec<f64>,
    pub estimators: Vec<MomentMethod>,
    pub metrics: Vec<String>,
    pub replicates_requested: usize,
    /// Indices of replicates that completed.
    pub completed: Vec<usize>,
    pub failures: Vec<Failure>,
    /// `(estimator, metric) → [replicate][delta]`, completed replicates only.
    #[serde(skip)]
    pub values: BTreeMap<(MomentMethod, String), Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TidyRow {
    pub delta: f64,
    pub estimator: String,
    pub n: usize,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
}

impl SweepResult {
    pub fn series(&self, estimator: MomentMethod, metric: &str) -> Option<&Vec<Vec<f64>>> {
        self.values.get(&(estimator, metric.to_string()))
    }

    /// Mean and MC standard error of `metric` at grid point `d`.
    pub fn cell(&self, estimator: MomentMethod, metric: &str, d: usize) -> Option<MeanSe> {
        let s = self.series(estimator, metric)?;
        Some(MeanSe::of(&s.iter().map(|r| r[d]).collect::<Vec<_>>()))
    }

    /// Paired `metric(d1) − metric(d0)` across replicates.
    pub fn paired_difference(&self, estimator: MomentMethod, metric: &str, d0: usize, d1: usize) -> Option<MeanSe> {
        let s = self.series(estimator, metric)?;
        Some(MeanSe::of(&s.iter().map(|r| r[d1] - r[d0]).collect::<Vec<_>>()))
    }

    /// Per-replicate average of `metric` over the grid.
    pub fn grid_average(&self, estimator: MomentMethod, metric: &str) -> Option<Vec<f64>> {
        let s = self.series(estimator, metric)?;
        Some(s.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect())
    }

    pub fn rows(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for &est in &self.estimators {
            for metric in &self.metrics {
                for (d, &delta) in self.deltas.iter().enumerate() {
                    if let Some(c) = self.cell(est, metric, d) {
                        rows.push(TidyRow {
                            delta,
                            estimator: est.as_str().into(),
                            n: self.n,
                            metric: metric.clone(),
                            mean: c.mean,
                            se: c.se,
                        });
                    }
                }
            }
        }
        rows
    }
}

pub fn write_tidy_csv(path: impl AsRef<Path>, results: &[SweepResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delta", "estimator", "n", "metric", "mean", "se"])?;
    for r in results {
        for row in r.rows() {
            w.write_record([
                row.delta.to_string(),
                row.estimator,
                row.n.to_string(),
                row.metric,
                row.mean.to_string(),
                row.se.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything needed to re-run a suite, plus bookkeeping.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub suite: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub replicate_seeds: Vec<[u64; 3]>,
    pub failures: Vec<Failure>,
    pub elapsed_seconds: f64,
}

pub fn write_manifest<C: Serialize>(path: impl AsRef<Path>, manifest: &Manifest<'_, C>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

struct Split {
    train: ObservationalDataset,
    eval: ObservationalDataset,
}

/// Random split of `data` with `share` of the records for training.
fn split(data: &ObservationalDataset, share: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((data.len() as f64) * share).round() as usize;
    let (mut tr, mut ev) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    tr.sort_unstable();
    ev.sort_unstable();
    Split {
        train: data.subset(&tr),
        eval: data.subset(&ev),
    }
}

/// Inputs shared by every replicate of a sweep.
struct Plan {
    variant: Option<Variant>,
    table: Option<ObservationalDataset>,
    outcome: LearnerSpec,
    propensity: LearnerSpec,
    criteria: Vec<FairnessCriterion>,
    metric_names: Vec<String>,
}

fn load_source(cfg: &ExperimentConfig) -> Result<Option<ObservationalDataset>> {
    match &cfg.source {
        DataSource::Dgp { .. } => Ok(None),
        DataSource::Csv { path, schema } => {
            let (d, report) = load_csv_with_report(path, schema).map_err(|e| missing_data_hint(e, path))?;
            if report.rows_filtered > 0 {
                log::info!("{}: {} of {} rows filtered by value mappings", path.display(), report.rows_filtered, report.rows_read);
            }
            Ok(Some(if cfg.flip_outcome { recidivism_objective_flip(&d) } else { d }))
        }
    }
}

fn missing_data_hint(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { path: p, source } if source.kind() == std::io::ErrorKind::NotFound => Error::Io {
            path: p,
            source: std::io::Error::new(
                source.kind(),
                format!(
                    "data file {} not found; the data is not bundled, supply a CSV path matching the schema",
                    path.display()
                ),
            ),
        },
        other => other,
    }
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan> {
    cfg.validate()?;
    let table = load_source(cfg)?;
    let (w_names, covariates) = match &table {
        Some(t) => (t.w_names(), t.covariate_names().to_vec()),
        None => (
            vec!["s".to_string(), "x1".to_string(), "x2".to_string()],
            vec!["x1".to_string(), "x2".to_string()],
        ),
    };
    let variant = cfg.variant();
    let outcome = cfg.outcome_learner.resolve(true, variant, &w_names)?;
    let propensity = cfg.propensity_learner.resolve(false, variant, &w_names)?;
    let criteria = cfg
        .criteria
        .iter()
        .map(|c| c.resolve(&covariates))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let mut metric_names: Vec<String> = ["welfare", "cate_gap", "treated_s0", "treated_s1"].map(String::from).to_vec();
    if variant.is_some() {
        metric_names.extend(["regret", "misclassification"].map(String::from));
    }
    for c in &criteria {
        let l = c.label();
        metric_names.extend([format!("unfairness_{l}"), format!("lambda_{l}"), format!("residual_{l}")]);
    }
    Ok(Plan {
        variant,
        table,
        outcome,
        propensity,
        criteria,
        metric_names,
    })
}

type ReplicateValues = BTreeMap<(MomentMethod, String), Vec<f64>>;

/// Evaluation-sample fairness moments; the basis is irrelevant for
/// `|Pₙ[ûf·g]|`, so the intercept-only expansion is used.
fn eval_fairness(
    criteria: &[FairnessCriterion],
    eval: &ObservationalDataset,
    fit: &crate::nuisance::NuisanceFit,
    iv: &crate::moments::InfluenceValues,
) -> Result<Vec<FairnessMoment>> {
    let basis = expand(eval, &BasisSpec::new(0))?;
    criteria
        .iter()
        .map(|c| fairness_moment(c, eval, &basis, Some(fit), Some(iv)))
        .collect()
}

fn run_replicate(cfg: &ExperimentConfig, plan: &Plan, n: usize, r: usize, seeds: [u64; 3]) -> Result<ReplicateValues> {
    let split = match (&plan.table, plan.variant) {
        (Some(t), _) => split(t, cfg.train_fraction, seeds[0]),
        (None, Some(v)) => Split {
            train: synth::generate(n, seeds[0], v)?.dataset,
            eval: synth::generate(cfg.eval_n.unwrap_or(n), seeds[1], v)?.dataset,
        },
        (None, None) => unreachable!("a source is either a table or synthetic"),
    };
    let base = Estimator::new(cfg.basis.clone())
        .criteria(plan.criteria.iter().map(|c| c.with_delta(cfg.deltas[0])).collect())
        .learners(plan.outcome.clone(), plan.propensity.clone())
        .folds(cfg.folds)
        .epsilon(cfg.epsilon)
        .seed(seeds[2])
        .qp_settings(cfg.qp);
    let (train, nuisance) = base.fit_nuisance(&split.train)?;
    let (eval, eval_nuisance) = base.fit_nuisance(&split.eval)?;
    let eval_iv = influence_values(&eval, &eval_nuisance)?;
    let eval_uf = eval_fairness(&plan.criteria, &eval, &eval_nuisance, &eval_iv)?;
    let tau_fn = synth::tau;
    let tau: Option<&dyn Fn(&[f64]) -> f64> = plan.variant.map(|_| &tau_fn as &dyn Fn(&[f64]) -> f64);

    let mut out: ReplicateValues = BTreeMap::new();
    for &method in &cfg.estimators {
        let first = base.clone().method(method).fit_with_nuisance(&train, nuisance.clone())?;
        for &delta in &cfg.deltas {
            let fit = first.with_deltas(&vec![delta; plan.criteria.len()])?;
            let tau_eval = fit.cate.evaluate_all(&eval)?;
            let policy = threshold(&tau_eval);
            let report = PolicyReport::evaluate(&policy, &eval, &eval_iv, &eval_uf, tau)?;
            let mut push = |name: String, v: f64| out.entry((method, name)).or_default().push(v);
            push("welfare".into(), report.welfare);
            push("cate_gap".into(), group_gap(&eval, &tau_eval).abs());
            push("treated_s0".into(), report.treated_fraction_by_s[0]);
            push("treated_s1".into(), report.treated_fraction_by_s[1]);
            if let (Some(reg), Some(mis)) = (report.regret, report.misclassification) {
                push("regret".into(), reg);
                push("misclassification".into(), mis);
            }
            let residuals = fit.constraint_residuals();
            for (j, (label, u)) in report.unfairness.iter().enumerate() {
                push(format!("unfairness_{label}"), *u);
                push(format!("lambda_{label}"), fit.solution.lambda[j]);
                push(format!("residual_{label}"), residuals[j].abs());
            }
        }
    }
    log::debug!("replicate {r} done");
    Ok(out)
}

fn group_gap(data: &ObservationalDataset, t: &[f64]) -> f64 {
    let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0.0, 0.0, 0.0);
    for (r, v) in data.records().iter().zip(t) {
        if r.s {
            s1 += v;
            n1 += 1.0;
        } else {
            s0 += v;
            n0 += 1.0;
        }
    }
    s0 / n0 - s1 / n1
}

fn sweep_at(cfg: &ExperimentConfig, plan: &Plan, n: usize) -> Result<SweepResult> {
    let seed = cfg.seed()?;
    let outcomes: Vec<Result<ReplicateValues>> = with_workers(cfg.workers, || {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, plan, n, r, replicate_seeds(seed ^ n as u64, r)))
            .collect()
    })?;
    let mut values: BTreeMap<(MomentMethod, String), Vec<Vec<f64>>> = BTreeMap::new();
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => {
                completed.push(r);
                for (k, row) in v {
                    values.entry(k).or_default().push(row);
                }
            }
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push(Failure {
                    replicate: r,
                    message: e.to_string(),
                });
            }
        }
    }
    if completed.is_empty() {
        let first = failures.first().map(|f| f.message.clone()).unwrap_or_default();
        return Err(Error::Inference(format!("all {} replicates failed; first error: {first}", cfg.replicates)));
    }
    Ok(SweepResult {
        n: plan.table.as_ref().map_or(n, |t| (t.len() as f64 * cfg.train_fraction).round() as usize),
        deltas: cfg.deltas.clone(),
        estimators: cfg.estimators.clone(),
        metrics: plan.metric_names.clone(),
        replicates_requested: cfg.replicates,
        completed,
        failures,
        values,
    })
}

pub fn run_delta_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let plan = plan(cfg)?;
    sweep_at(cfg, &plan, cfg.n)
}

/// One sweep per entry of `cfg.sizes`, with all three moment estimators
/// unless `cfg.estimators` lists more than the default.
pub fn run_dr_comparison(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>> {
    let mut cfg = cfg.clone();
    if cfg.estimators == [MomentMethod::Dr] {
        cfg.estimators = MomentMethod::ALL.to_vec();
    }
    if cfg.sizes.is_empty() {
        return Err(Error::Config("`sizes` must not be empty".into()));
    }
    let plan = plan(&cfg)?;
    cfg.sizes.iter().map(|&n| sweep_at(&cfg, &plan, n)).collect()
}

pub fn seeds_for(cfg: &ExperimentConfig, n: usize) -> Result<Vec<[u64; 3]>> {
    let seed = cfg.seed()?;
    Ok((0..cfg.replicates).map(|r| replicate_seeds(seed ^ n as u64, r)).collect())
}

/// Column roles of the public two-year recidivism table: outcome rearrest,
/// treatment release, `S = 1` for African-American and `S = 0` for
/// Caucasian defendants (other rows dropped), covariates age, sex, priors.
pub fn compas_schema() -> Schema {
    Schema {
        outcome: "two_year_recid".into(),
        treatment: BinaryColumn::Name("released".into()),
        sensitive: BinaryColumn::Mapped {
            column: "race".into(),
            positive: "African-American".into(),
            negative: Some("Caucasian".into()),
        },
        covariates: vec![
            CovariateColumn::Name("age".into()),
            CovariateColumn::Mapped {
                column: "sex".into(),
                levels: [("Male".to_string(), 1.0), ("Female".to_string(), 0.0)].into(),
            },
            CovariateColumn::Name("priors_count".into()),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub path: PathBuf,
    pub schema: Schema,
    pub criteria: Vec<CriterionConfig>,
    pub train_fraction: f64,
    pub basis: BasisSpec,
    pub outcome_learner: LearnerConfig,
    pub propensity_learner: LearnerConfig,
    pub folds: usize,
    pub epsilon: f64,
    pub qp: QpSettings,
    pub seed: Option<u64>,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("compas.csv"),
            schema: compas_schema(),
            criteria: vec![
                CriterionConfig::Independence { delta: 0.0 },
                CriterionConfig::PositiveBalance { delta: 0.0 },
            ],
            train_fraction: 2.0 / 3.0,
            basis: BasisSpec::new(2),
            outcome_learner: LearnerConfig::new(LearnerKindConfig::PolyRidge { degree: 2, penalty: 1e-3 }),
            propensity_learner: LearnerConfig::default_propensity(),
            folds: DEFAULT_FOLDS,
            epsilon: DEFAULT_EPSILON,
            qp: QpSettings::default(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudyRow {
    pub delta: f64,
    pub risk: f64,
    /// `(criterion label, |Pₙ[ûf·g]|)` on the evaluation split.
    pub unfairness: Vec<(String, f64)>,
    pub treated_fraction_by_s: [f64; 2],
}

impl CaseStudyRow {
    pub fn unfairness_of(&self, label: &str) -> Option<f64> {
        self.unfairness.iter().find(|(l, _)| l == label).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseStudyReport {
    pub train_size: usize,
    pub eval_size: usize,
    pub rows_filtered: usize,
    pub rows: Vec<CaseStudyRow>,
}

/// Fits on a random `train_fraction` of the table with the outcome negated
/// (lower is better), and reports risk and unfairness on the remainder at
/// `δ = ∞` and `δ = 0` (all criteria at once).
pub fn run_case_study(cfg: &CaseStudyConfig) -> Result<CaseStudyReport> {
    let seed = cfg.seed.ok_or_else(|| Error::Config("missing required key `seed`".into()))?;
    let (table, report) = load_csv_with_report(&cfg.path, &cfg.schema).map_err(|e| missing_data_hint(e, &cfg.path))?;
    let table = recidivism_objective_flip(&table);
    let w_names = table.w_names();
    let outcome = cfg.outcome_learner.resolve(true, None, &w_names)?;
    let propensity = cfg.propensity_learner.resolve(false, None, &w_names)?;
    let criteria: Vec<FairnessCriterion> = cfg
        .criteria
        .iter()
        .map(|c| c.resolve(table.covariate_names()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let seeds = replicate_seeds(seed, 0);
    let parts = split(&table, cfg.train_fraction, seeds[0]);
    let est = Estimator::new(cfg.basis.clone())
        .criteria(criteria.clone())
        .learners(outcome, propensity)
        .folds(cfg.folds)
        .epsilon(cfg.epsilon)
        .seed(seeds[1])
        .qp_settings(cfg.qp);
    let (train, nuisance) = est.fit_nuisance(&parts.train)?;
    let (eval, eval_nuisance) = est.fit_nuisance(&parts.eval)?;
    let eval_iv = influence_values(&eval, &eval_nuisance)?;
    let eval_uf = eval_fairness(&criteria, &eval, &eval_nuisance, &eval_iv)?;
    let fitted = est.fit_with_nuisance(&train, nuisance)?;
    let mut rows = Vec::new();
    for delta in [f64::INFINITY, 0.0] {
        let fit = fitted.with_deltas(&vec![delta; criteria.len()])?;
        let policy = threshold(&fit.cate.evaluate_all(&eval)?);
        let r = PolicyReport::evaluate(&policy, &eval, &eval_iv, &eval_uf, None)?;
        rows.push(CaseStudyRow {
            delta,
            risk: r.risk(),
            unfairness: r.unfairness.clone(),
            treated_fraction_by_s: r.treated_fraction_by_s,
        });
    }
    Ok(CaseStudyReport {
        train_size: train.len(),
        eval_size: eval.len(),
        rows_filtered: report.rows_filtered,
        rows,
    })
}

pub fn write_case_study_csv(path: impl AsRef<Path>, report: &CaseStudyReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let labels: Vec<String> = report.rows.first().map_or(Vec::new(), |r| r.unfairness.iter().map(|(l, _)| l.clone()).collect());
    let mut header = vec!["delta".to_string(), "risk".to_string()];
    header.extend(labels);
    header.extend(["treated_s0".to_string(), "treated_s1".to_string()]);
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.delta.to_string(), r.risk.to_string()];
        rec.extend(r.unfairness.iter().map(|(_, v)| v.to_string()));
        rec.extend(r.treated_fraction_by_s.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Wall-clock helper for manifests.
pub fn elapsed_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n: 400,
            replicates: 4,
            deltas: vec![0.0, 1.0, 4.0],
            basis: BasisSpec::new(2),
            seed: Some(1),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn grid() {
        let g = default_deltas();
        assert_eq!(g.len(), 17);
        assert_eq!((g[0], g[16], g[1]), (0.0, 4.0, 0.25));
    }

    #[test]
    fn sweep_shape_and_feasibility() {
        let r = run_delta_sweep(&small()).unwrap();
        assert_eq!(r.completed.len(), 4);
        let rows = r.rows();
        assert_eq!(rows.len(), r.metrics.len() * 3);
        let res = r.cell(MomentMethod::Dr, "residual_IDP", 0).unwrap();
        assert!(res.mean <= 1e-8);
        assert!(r.cell(MomentMethod::Dr, "regret", 0).is_some());
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_tidy_csv(&a, &[run_delta_sweep(&small()).unwrap()]).unwrap();
        let cfg = ExperimentConfig {
            workers: Some(1),
            ..small()
        };
        write_tidy_csv(&b, &[run_delta_sweep(&cfg).unwrap()]).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn comparison_runs_all_estimators() {
        let cfg = ExperimentConfig {
            sizes: vec![300, 600],
            replicates: 2,
            ..small()
        };
        let out = run_dr_comparison(&cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].n, 600);
        for m in MomentMethod::ALL {
            assert!(out[0].cell(m, "regret", 2).is_some());
        }
    }

    #[test]
    fn config_validation() {
        assert!(matches!(ExperimentConfig::default().validate(), Err(Error::Config(m)) if m.contains("seed")));
        let mut c = small();
        c.deltas = vec![1.0, 0.0];
        assert!(c.validate().is_err());
        let json = r#"{"n": 100, "seed": 4, "criteria": [{"kind": "positive-balance"}],
                       "outcome_learner": {"kind": "knn", "k": 5, "drop": ["x1"]}}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.n, 100);
        assert_eq!(c.outcome_learner.drop, vec!["x1".to_string()]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn case_study_on_standin() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("compas.csv");
        synth::write_compas_standin(&p, 3000, 2).unwrap();
        let cfg = CaseStudyConfig {
            path: p,
            seed: Some(3),
            ..CaseStudyConfig::default()
        };
        let rep = run_case_study(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        for row in &rep.rows {
            assert!(row.risk.is_finite());
            assert!(row.unfairness_of("IDP").is_some() && row.unfairness_of("PB").is_some());
        }
        let out = dir.path().join("t.csv");
        write_case_study_csv(&out, &rep).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("delta,risk,IDP,PB,treated_s0,treated_s1"));
    }

    #[test]
    fn case_study_missing_file() {
        let cfg = CaseStudyConfig {
            path: "/nonexistent/compas.csv".into(),
            seed: Some(1),
            ..CaseStudyConfig::default()
        };
        let e = run_case_study(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("not bundled"));
    }
}
