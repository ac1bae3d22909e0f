//! Command-line front end.
//!
//! Every subcommand reads an optional JSON config (`--config`) and then
//! applies flags on top of it. A run manifest written by `sweep`, `compare`
//! or `case-study` is itself a valid config: its `config` member is used.
//! Outputs go to the `--out` directory, which is created if needed.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::dataset::{load_csv, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::estimate::Estimator;
use crate::experiments::{
    self, linspace, with_workers, CaseStudyConfig, DataSource, ExperimentConfig, LearnerConfig, Manifest,
};
use crate::fairness::{parse_delta, CriterionConfig, FairnessCriterion};
use crate::inference::{bootstrap_beta, BootstrapMethod, BootstrapSettings};
use crate::moments::MomentMethod;
use crate::nuisance::DEFAULT_EPSILON;
use crate::qp::QpSettings;
use crate::synth::{self, Variant};

#[derive(Debug, Parser)]
#[command(name = "faircate", version, about = "Fairness-constrained doubly robust CATE estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one constrained CATE and write beta.json.
    Fit(FitArgs),
    /// Replicated δ sweep; writes sweep.csv and manifest.json.
    Sweep(SweepArgs),
    /// DR, PI and IPW across sample sizes; writes compare.csv and manifest.json.
    Compare(SweepArgs),
    /// Recidivism case study on a user-supplied table; writes case_study.csv.
    CaseStudy(CaseStudyArgs),
    /// Write a synthetic sample (or a recidivism-style stand-in) as CSV.
    SynthDump(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file (or a previous run manifest). Flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base random seed. Required, either here or as `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Synthetic source: `paper` or `randomized-pi`.
    #[arg(long, conflicts_with = "csv")]
    pub dgp: Option<Variant>,
    /// CSV source; needs `--schema`.
    #[arg(long, requires = "schema")]
    pub csv: Option<PathBuf>,
    /// JSON column-role schema for `--csv`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Fairness constraint `kind[:delta]`, repeatable. Kinds: independence
    /// (idp), positive-balance (pb). Replaces the config's list.
    #[arg(long = "fairness")]
    pub fairness: Vec<String>,
    /// Basis degree.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Use raw (unstandardized) covariates in the basis.
    #[arg(long)]
    pub raw_basis: bool,
    /// Cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Propensity clip level.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sample size for synthetic sources.
    #[arg(long)]
    pub n: Option<usize>,
    /// Moment estimator: DR, PI or IPW.
    #[arg(long)]
    pub estimator: Option<MomentMethod>,
    /// Bootstrap replicates for intervals on β (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Bootstrap scheme: multiplier or pairs.
    #[arg(long)]
    pub bootstrap_method: Option<BootstrapMethod>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation sample size (defaults to n).
    #[arg(long)]
    pub eval_n: Option<usize>,
    /// Comma-separated sample sizes (compare).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// δ grid, `lo:hi:count` or a comma-separated list (`inf` allowed).
    #[arg(long)]
    pub deltas: Option<String>,
    /// Comma-separated moment estimators.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<MomentMethod>,
    /// Negate the outcome before fitting.
    #[arg(long)]
    pub flip_outcome: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "FAIRCATE_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Path to the two-year recidivism table.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "fairness")]
    pub fairness: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value = "paper")]
    pub dgp: Variant,
    /// Also write truth.csv with τ, π₁, μ₀, μ₁ and both potential outcomes.
    #[arg(long)]
    pub truth: bool,
    /// Write a synthetic table with the recidivism column layout instead.
    #[arg(long)]
    pub standin: bool,
}

/// Configuration of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub source: DataSource,
    pub n: usize,
    pub criteria: Vec<CriterionConfig>,
    pub estimator: MomentMethod,
    pub basis: BasisSpec,
    pub outcome_learner: LearnerConfig,
    pub propensity_learner: LearnerConfig,
    pub folds: usize,
    pub epsilon: f64,
    pub qp: QpSettings,
    pub bootstrap: Option<BootstrapSettings>,
    pub seed: Option<u64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            n: 2000,
            criteria: Vec::new(),
            estimator: MomentMethod::Dr,
            basis: BasisSpec::default(),
            outcome_learner: LearnerConfig::default_outcome(),
            propensity_learner: LearnerConfig::default_propensity(),
            folds: DEFAULT_FOLDS,
            epsilon: DEFAULT_EPSILON,
            qp: QpSettings::default(),
            bootstrap: None,
            seed: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct Interval {
    lower: Vec<f64>,
    upper: Vec<f64>,
    sd: Vec<f64>,
    method: BootstrapMethod,
    alpha: f64,
    dropped: usize,
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    term_labels: &'a [String],
    beta: &'a [f64],
    criteria: Vec<String>,
    deltas: &'a [f64],
    /// `a_jᵀβ̂` per constraint.
    constraint_residuals: Vec<f64>,
    lambda: &'a [f64],
    active_set: &'a [usize],
    objective: f64,
    iterations: usize,
    polished: bool,
    warnings: &'a [String],
    /// `Pₙ(τ̂ | S = 0) − Pₙ(τ̂ | S = 1)`.
    group_gap: f64,
    bootstrap: Option<Interval>,
    config: &'a FitConfig,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Sweep(a) => run_sweep(a, false),
        Command::Compare(a) => run_sweep(a, true),
        Command::CaseStudy(a) => run_case(a),
        Command::SynthDump(a) => run_synth(a),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    if value.get("suite").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
}

fn read_schema(path: &Path) -> Result<crate::dataset::Schema> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read schema {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("schema {}: {e}", path.display())))
}

fn apply_source(source: &mut DataSource, args: &SourceArgs) -> Result<()> {
    if let Some(v) = args.dgp {
        *source = DataSource::Dgp { variant: v };
    }
    if let Some(path) = &args.csv {
        let schema = read_schema(args.schema.as_deref().expect("clap requires --schema with --csv"))?;
        *source = DataSource::Csv {
            path: path.clone(),
            schema,
        };
    }
    Ok(())
}

fn parse_fairness(flags: &[String]) -> Result<Option<Vec<CriterionConfig>>> {
    if flags.is_empty() {
        return Ok(None);
    }
    flags.iter().map(|f| CriterionConfig::parse_flag(f)).collect::<Result<_>>().map(Some)
}

fn apply_model(basis: &mut BasisSpec, folds: &mut usize, epsilon: &mut f64, args: &ModelArgs) {
    if let Some(d) = args.degree {
        basis.degree = d;
    }
    if args.raw_basis {
        basis.standardize = false;
    }
    if let Some(k) = args.folds {
        *folds = k;
    }
    if let Some(e) = args.epsilon {
        *epsilon = e;
    }
}

/// `lo:hi:count` or a comma-separated list.
pub fn parse_deltas(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse --deltas {s:?}; use lo:hi:count or a comma list"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let lo = parse_delta(parts[0]).map_err(|_| bad())?;
        let hi = parse_delta(parts[1]).map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite()) || count == 0 {
            return Err(bad());
        }
        return Ok(linspace(lo, hi, count));
    }
    if parts.len() != 1 {
        return Err(bad());
    }
    s.split(',').map(|d| parse_delta(d).map_err(|_| bad())).collect()
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("output directory {}: {e}", out.display())))
}

fn missing_seed() -> Error {
    Error::Config("missing required key `seed` (pass --seed or set it in the config)".into())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let mut cfg: FitConfig = read_config(args.common.config.as_deref())?;
    apply_source(&mut cfg.source, &args.source)?;
    apply_model(&mut cfg.basis, &mut cfg.folds, &mut cfg.epsilon, &args.model);
    if let Some(c) = parse_fairness(&args.model.fairness)? {
        cfg.criteria = c;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(m) = args.estimator {
        cfg.estimator = m;
    }
    if args.common.seed.is_some() {
        cfg.seed = args.common.seed;
    }
    let seed = cfg.seed.ok_or_else(missing_seed)?;
    match (args.bootstrap, args.bootstrap_method) {
        (Some(0), _) => cfg.bootstrap = None,
        (Some(r), m) => {
            cfg.bootstrap = Some(BootstrapSettings {
                replicates: r,
                method: m.unwrap_or_default(),
                seed,
                ..BootstrapSettings::default()
            })
        }
        (None, Some(m)) => {
            if let Some(b) = cfg.bootstrap.as_mut() {
                b.method = m;
            }
        }
        (None, None) => {}
    }
    prepare_out(&args.common.out)?;

    let (data, variant) = match &cfg.source {
        DataSource::Dgp { variant } => (synth::generate(cfg.n, seed, *variant)?.dataset, Some(*variant)),
        DataSource::Csv { path, schema } => (load_csv(path, schema)?, None),
    };
    let w_names = data.w_names();
    let criteria: Vec<FairnessCriterion> = cfg
        .criteria
        .iter()
        .map(|c| c.resolve(data.covariate_names()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let fit = Estimator::new(cfg.basis.clone())
        .criteria(criteria.clone())
        .method(cfg.estimator)
        .learners(
            cfg.outcome_learner.resolve(true, variant, &w_names)?,
            cfg.propensity_learner.resolve(false, variant, &w_names)?,
        )
        .folds(cfg.folds)
        .epsilon(cfg.epsilon)
        .seed(seed)
        .qp_settings(cfg.qp)
        .fit(&data)?;
    let bootstrap = match &cfg.bootstrap {
        Some(s) => {
            let r = bootstrap_beta(&fit, s)?;
            Some(Interval {
                sd: r.sd(),
                lower: r.ci_lower,
                upper: r.ci_upper,
                method: r.method,
                alpha: r.alpha,
                dropped: r.dropped,
            })
        }
        None => None,
    };
    let output = FitOutput {
        term_labels: &fit.basis.term_labels,
        beta: fit.beta(),
        criteria: criteria.iter().map(FairnessCriterion::label).collect(),
        deltas: &fit.deltas,
        constraint_residuals: fit.constraint_residuals(),
        lambda: &fit.solution.lambda,
        active_set: &fit.solution.active_set,
        objective: fit.solution.objective,
        iterations: fit.solution.iterations,
        polished: fit.solution.polished,
        warnings: &fit.solution.warnings,
        group_gap: fit.group_gap(&data),
        bootstrap,
        config: &cfg,
    };
    write_json(&args.common.out.join("beta.json"), &output)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run_sweep(args: SweepArgs, compare: bool) -> Result<()> {
    let start = Instant::now();
    let mut cfg: ExperimentConfig = read_config(args.common.config.as_deref())?;
    apply_source(&mut cfg.source, &args.source)?;
    apply_model(&mut cfg.basis, &mut cfg.folds, &mut cfg.epsilon, &args.model);
    if let Some(c) = parse_fairness(&args.model.fairness)? {
        cfg.criteria = c;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if args.eval_n.is_some() {
        cfg.eval_n = args.eval_n;
    }
    if !args.sizes.is_empty() {
        cfg.sizes = args.sizes.clone();
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(d) = &args.deltas {
        cfg.deltas = parse_deltas(d)?;
    }
    if !args.estimators.is_empty() {
        cfg.estimators = args.estimators.clone();
    }
    if args.flip_outcome {
        cfg.flip_outcome = true;
    }
    if args.common.seed.is_some() {
        cfg.seed = args.common.seed;
    }
    cfg.seed.ok_or_else(missing_seed)?;
    // Worker count affects speed only, so it stays out of the echoed config.
    let workers = args.workers.or(cfg.workers);
    cfg.workers = None;
    prepare_out(&args.common.out)?;

    let (suite, results) = if compare {
        ("compare", with_workers(workers, || experiments::run_dr_comparison(&cfg))??)
    } else {
        ("sweep", vec![with_workers(workers, || experiments::run_delta_sweep(&cfg))??])
    };
    experiments::write_tidy_csv(args.common.out.join(format!("{suite}.csv")), &results)?;
    let sizes: Vec<usize> = if compare { cfg.sizes.clone() } else { vec![cfg.n] };
    let mut seeds = Vec::new();
    for n in sizes {
        seeds.extend(experiments::seeds_for(&cfg, n)?);
    }
    let manifest = Manifest {
        suite,
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        replicate_seeds: seeds,
        failures: results.iter().flat_map(|r| r.failures.clone()).collect(),
        elapsed_seconds: experiments::elapsed_since(start),
    };
    experiments::write_manifest(args.common.out.join("manifest.json"), &manifest)
}

fn run_case(args: CaseStudyArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg: CaseStudyConfig = read_config(args.common.config.as_deref())?;
    if let Some(p) = &args.data {
        cfg.path = p.clone();
    }
    if let Some(c) = parse_fairness(&args.fairness)? {
        cfg.criteria = c;
    }
    if args.common.seed.is_some() {
        cfg.seed = args.common.seed;
    }
    cfg.seed.ok_or_else(missing_seed)?;
    prepare_out(&args.common.out)?;
    let report = experiments::run_case_study(&cfg)?;
    experiments::write_case_study_csv(args.common.out.join("case_study.csv"), &report)?;
    for r in &report.rows {
        let unfair: Vec<String> = r.unfairness.iter().map(|(l, v)| format!("{l} {v:.3}")).collect();
        println!("delta {:>3}: risk {:.3}, {}", r.delta, r.risk, unfair.join(", "));
    }
    let manifest = Manifest {
        suite: "case-study",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        replicate_seeds: Vec::new(),
        failures: Vec::new(),
        elapsed_seconds: experiments::elapsed_since(start),
    };
    experiments::write_manifest(args.common.out.join("manifest.json"), &manifest)
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let seed = args.common.seed.ok_or_else(missing_seed)?;
    prepare_out(&args.common.out)?;
    if args.standin {
        return synth::write_compas_standin(args.common.out.join("compas_standin.csv"), args.n, seed);
    }
    let sample = synth::generate(args.n, seed, args.dgp)?;
    sample.dataset.write_csv(args.common.out.join("synth.csv"))?;
    if args.truth {
        let path = args.common.out.join("truth.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["tau", "pi1", "mu0", "mu1", "y0", "y1"])?;
        for i in 0..args.n {
            w.write_record(
                [
                    sample.true_tau[i],
                    sample.true_pi1[i],
                    sample.true_mu0[i],
                    sample.true_mu1[i],
                    sample.y0[i],
                    sample.y1[i],
                ]
                .map(|v| v.to_string()),
            )?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_grids() {
        let g = parse_deltas("0:4:17").unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!((g[0], g[16], g[1]), (0.0, 4.0, 0.25));
        assert_eq!(parse_deltas("0,0.5,inf").unwrap(), vec![0.0, 0.5, f64::INFINITY]);
        assert!(parse_deltas("0:4").is_err());
        assert!(parse_deltas("0:inf:3").is_err());
    }

    #[test]
    fn manifests_are_configs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seed: Some(3),
            replicates: 7,
            deltas: vec![0.0, 1.5, f64::INFINITY],
            criteria: vec![CriterionConfig::PositiveBalance { delta: f64::INFINITY }],
            ..ExperimentConfig::default()
        };
        let m = Manifest {
            suite: "sweep",
            version: "0",
            config: &cfg,
            replicate_seeds: Vec::new(),
            failures: Vec::new(),
            elapsed_seconds: 0.0,
        };
        let path = dir.path().join("m.json");
        experiments::write_manifest(&path, &m).unwrap();
        let back: ExperimentConfig = read_config(Some(&path)).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "replicats": 3}"#).unwrap();
        let e = read_config::<ExperimentConfig>(Some(&path)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
