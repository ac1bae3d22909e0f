//! Synthetic data with full oracle access.
//!
//! ```text
//! S ~ Bernoulli(0.5)
//! (X₁, X₂) | S ~ N((0, 2S − 1), I₂)
//! A | W ~ Bernoulli(expit(S + S·X₁))          (0.5 for RandomizedPi)
//! μ_a(W) = a·X₂³/2 + log(S·X₁² + 10) + exp(−S·X₂/5) + S·X₁
//! Yᵃ = μ_a(W) + ε,  ε ~ N(0, 1) shared by both arms
//! ```
//!
//! so `τ(W) = X₂³/2` and the optimal policy is `1(X₂ > 0)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{ObservationalDataset, Observation};
use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Oracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Paper,
    /// Treatment assigned by a fair coin.
    RandomizedPi,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Variant::Paper),
            "randomized-pi" => Ok(Variant::RandomizedPi),
            other => Err(Error::Config(format!("unknown dgp {other:?} (paper, randomized-pi)"))),
        }
    }
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shared part of both outcome regressions; `w = [s, x1, x2]`.
pub fn f_mu(w: &[f64]) -> f64 {
    let (s, x1, x2) = (w[0], w[1], w[2]);
    (s * x1 * x1 + 10.0).ln() + (-s * x2 / 5.0).exp() + s * x1
}

pub fn tau(w: &[f64]) -> f64 {
    w[2].powi(3) / 2.0
}

pub fn mu(w: &[f64], arm: bool) -> f64 {
    if arm {
        tau(w) + f_mu(w)
    } else {
        f_mu(w)
    }
}

pub fn pi1(w: &[f64], variant: Variant) -> f64 {
    match variant {
        Variant::Paper => expit(w[0] + w[0] * w[1]),
        Variant::RandomizedPi => 0.5,
    }
}

/// `1(τ(W) > 0)`.
pub fn optimal_policy(w: &[f64]) -> bool {
    tau(w) > 0.0
}

pub fn oracle_outcome_learner() -> LearnerSpec {
    LearnerSpec::oracle(Oracle::new("true-mu", mu))
}

pub fn oracle_propensity_learner(variant: Variant) -> LearnerSpec {
    LearnerSpec::oracle(Oracle::new("true-pi", move |w, _| pi1(w, variant)))
}

/// Propensity "learner" that always predicts `p`, regardless of the data.
pub fn fixed_propensity_learner(p: f64) -> LearnerSpec {
    LearnerSpec::oracle(Oracle::new(format!("fixed-{p}"), move |_, _| p))
}

#[derive(Debug, Clone)]
pub struct DgpSample {
    pub dataset: ObservationalDataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub true_tau: Vec<f64>,
    pub true_pi1: Vec<f64>,
    pub true_mu0: Vec<f64>,
    pub true_mu1: Vec<f64>,
    pub seed: u64,
    pub variant: Variant,
}

impl DgpSample {
    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    /// `1(τ(Wᵢ) > 0)` per record.
    pub fn optimal_policy(&self) -> Vec<bool> {
        self.true_tau.iter().map(|&t| t > 0.0).collect()
    }
}

const CHUNK: usize = 4096;

struct Draw {
    s: bool,
    x1: f64,
    x2: f64,
    a: bool,
    eps: f64,
}

fn draw_chunk(seed: u64, chunk: usize, len: usize, variant: Variant) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    (0..len)
        .map(|_| {
            let s = rng.random_bool(0.5);
            let x1: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let x2 = z + if s { 1.0 } else { -1.0 };
            let sf = f64::from(u8::from(s));
            let a = rng.random::<f64>() < pi1(&[sf, x1, x2], variant);
            let eps = rng.sample(StandardNormal);
            Draw { s, x1, x2, a, eps }
        })
        .collect()
}

/// Draws `n` records. Records are generated in fixed-size chunks, each with
/// its own RNG stream, so the output depends only on `(n, seed, variant)`.
pub fn generate(n: usize, seed: u64, variant: Variant) -> Result<DgpSample> {
    if n == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    let chunks = n.div_ceil(CHUNK);
    let draws: Vec<Draw> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| draw_chunk(seed, c, CHUNK.min(n - c * CHUNK), variant))
        .collect();

    let mut out = DgpSample {
        dataset: ObservationalDataset::new(Vec::new(), vec![])?,
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        true_tau: Vec::with_capacity(n),
        true_pi1: Vec::with_capacity(n),
        true_mu0: Vec::with_capacity(n),
        true_mu1: Vec::with_capacity(n),
        seed,
        variant,
    };
    let mut records = Vec::with_capacity(n);
    for d in draws {
        let w = [f64::from(u8::from(d.s)), d.x1, d.x2];
        let m0 = mu(&w, false);
        let m1 = mu(&w, true);
        let (y0, y1) = (m0 + d.eps, m1 + d.eps);
        out.y0.push(y0);
        out.y1.push(y1);
        out.true_tau.push(tau(&w));
        out.true_pi1.push(pi1(&w, variant));
        out.true_mu0.push(m0);
        out.true_mu1.push(m1);
        records.push(Observation::new(if d.a { y1 } else { y0 }, d.a, d.s, vec![d.x1, d.x2]));
    }
    out.dataset = ObservationalDataset::new(records, vec!["x1".into(), "x2".into()])?;
    Ok(out)
}

/// Closed-form population quantities of the process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValues {
    /// `P(X₂ > 0 | S = 0) = 1 − Φ(1)`.
    pub treated_given_s0: f64,
    /// `P(X₂ > 0 | S = 1) = Φ(1)`.
    pub treated_given_s1: f64,
    /// Independence unfairness of the optimal policy.
    pub optimal_policy_unfairness: f64,
    /// `E[τ | S = 0]`.
    pub tau_mean_s0: f64,
    /// `E[τ | S = 1]`.
    pub tau_mean_s1: f64,
    /// `|E[τ | S = 0] − E[τ | S = 1]|`, the unconstrained CATE gap.
    pub tau_gap: f64,
}

pub fn oracle_values() -> OracleValues {
    let phi1 = Normal::standard().cdf(1.0);
    // E[(μ + Z)³] = μ³ + 3μ for Z ~ N(0, 1).
    let third = |m: f64| m.powi(3) + 3.0 * m;
    let (t0, t1) = (third(-1.0) / 2.0, third(1.0) / 2.0);
    OracleValues {
        treated_given_s0: 1.0 - phi1,
        treated_given_s1: phi1,
        optimal_policy_unfairness: (2.0 * phi1 - 1.0).abs(),
        tau_mean_s0: t0,
        tau_mean_s1: t1,
        tau_gap: (t1 - t0).abs(),
    }
}

/// COMPAS-shaped synthetic table for smoke tests of the case-study
/// pipeline. Columns: `two_year_recid, released, race, sex, age,
/// priors_count`; `race` includes a third level that the default schema
/// filters out.
pub fn write_compas_standin(path: impl AsRef<std::path::Path>, n: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["two_year_recid", "released", "race", "sex", "age", "priors_count"])?;
    for _ in 0..n {
        let u: f64 = rng.random();
        let (race, s) = if u < 0.06 {
            ("Hispanic", 0.5)
        } else if u < 0.42 {
            ("Caucasian", 0.0)
        } else {
            ("African-American", 1.0)
        };
        let male = rng.random_bool(0.8);
        let age = (18.0 + 40.0 * rng.random::<f64>().powf(1.6)).round();
        let lambda = 1.5 + 2.5 * s + if male { 1.0 } else { 0.0 } - (age - 18.0) / 40.0;
        let priors = {
            let z: f64 = rng.sample(StandardNormal);
            (lambda.max(0.2) + lambda.max(0.2).sqrt() * z).round().max(0.0)
        };
        let released = rng.random_bool(expit(1.2 - 0.25 * priors + 0.02 * (age - 30.0) - 0.3 * s));
        // Release raises risk for young defendants with many priors and
        // lowers it for the rest.
        let base = -0.6 + 0.12 * priors - 0.03 * (age - 30.0) + 0.3 * f64::from(u8::from(male));
        let lift = if released { -0.5 + 0.15 * priors - 0.03 * (age - 30.0) } else { 0.0 };
        let recid = rng.random_bool(expit(base + lift));
        w.write_record([
            u8::from(recid).to_string(),
            u8::from(released).to_string(),
            race.to_string(),
            if male { "Male" } else { "Female" }.to_string(),
            age.to_string(),
            priors.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s0_record_values() {
        let w = [0.0, 0.7, -1.3];
        assert_eq!(pi1(&w, Variant::Paper), 0.5);
        assert!((mu(&w, false) - (10f64.ln() + 1.0)).abs() < 1e-15);
        assert!((mu(&w, false) - 3.302585).abs() < 1e-6);
    }

    #[test]
    fn oracle_constants() {
        let o = oracle_values();
        assert!((o.treated_given_s0 - 0.15866).abs() < 1e-5);
        assert!((o.treated_given_s1 - 0.84134).abs() < 1e-5);
        assert!((o.optimal_policy_unfairness - 0.68269).abs() < 1e-5);
        assert_eq!((o.tau_mean_s0, o.tau_mean_s1, o.tau_gap), (-2.0, 2.0, 4.0));
    }

    #[test]
    fn consistency_and_identities() {
        let g = generate(3000, 5, Variant::Paper).unwrap();
        for (i, r) in g.dataset.records().iter().enumerate() {
            assert_eq!(r.y, if r.a { g.y1[i] } else { g.y0[i] });
            assert_eq!(g.true_tau[i], r.x[1].powi(3) / 2.0);
            let s = f64::from(u8::from(r.s));
            assert_eq!(g.true_pi1[i], expit(s + s * r.x[0]));
            assert!((g.y1[i] - g.y0[i] - g.true_tau[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(5000, 9, Variant::Paper).unwrap();
        let b = generate(5000, 9, Variant::Paper).unwrap();
        let c = generate(5000, 10, Variant::Paper).unwrap();
        assert_eq!(a.dataset.y(), b.dataset.y());
        assert_ne!(a.dataset.y(), c.dataset.y());
        // A longer sample extends a shorter one.
        let d = generate(6000, 9, Variant::Paper).unwrap();
        assert_eq!(a.dataset.y()[..5000], d.dataset.y()[..5000]);
    }

    #[test]
    fn randomized_variant() {
        let g = generate(200, 1, Variant::RandomizedPi).unwrap();
        assert!(g.true_pi1.iter().all(|&p| p == 0.5));
        assert!(generate(0, 1, Variant::Paper).is_err());
    }

    #[test]
    fn standin_csv_loads() {
        use crate::dataset::{load_csv_with_report, BinaryColumn, CovariateColumn, Schema};
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_compas_standin(&p, 500, 3).unwrap();
        let schema = Schema {
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
        };
        let (d, report) = load_csv_with_report(&p, &schema).unwrap();
        assert_eq!(report.rows_read, 500);
        assert!(report.rows_filtered > 0);
        assert_eq!(d.len() + report.rows_filtered, 500);
    }
}
