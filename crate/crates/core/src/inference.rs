//! Bootstrap intervals for `β̂`.
//!
//! Both schemes hold the cross-fitted nuisance predictions fixed and perturb
//! only the inputs of the program: record `i` gets weight `wᵢ` in the Gram
//! matrix, the moment vector and every fairness moment, and the program is
//! re-solved. This ignores the variability of the nuisance fits themselves,
//! which the influence-function expansion of `β̂` makes second order.
//!
//! * multiplier: `wᵢ` i.i.d. unit-rate exponential, rescaled to mean 1;
//! * pairs: `wᵢ` the multiplicity of record `i` in a resample of size `n`
//!   drawn with replacement.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FittedEstimate;
use crate::qp::{solve, QpProblem};
use crate::stats::quantile;

pub const MIN_REPLICATES: usize = 200;

/// Largest fraction of replicates that may fail before the run is rejected.
pub const MAX_DROP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMethod {
    #[default]
    Multiplier,
    Pairs,
}

impl std::str::FromStr for BootstrapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplier" => Ok(BootstrapMethod::Multiplier),
            "pairs" => Ok(BootstrapMethod::Pairs),
            other => Err(Error::Config(format!("unknown bootstrap method {other:?} (multiplier, pairs)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub method: BootstrapMethod,
    /// Miscoverage level; intervals have nominal coverage `1 − alpha`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 500,
            method: BootstrapMethod::Multiplier,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    /// `R × k`, one successful replicate per row.
    #[serde(skip)]
    pub replicates: DMatrix<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub point: Vec<f64>,
    pub method: BootstrapMethod,
    pub alpha: f64,
    pub dropped: usize,
}

impl BootstrapResult {
    pub fn sd(&self) -> Vec<f64> {
        self.replicates
            .column_iter()
            .map(|c| crate::stats::sd(c.as_slice()))
            .collect()
    }

    pub fn covers(&self, j: usize, value: f64) -> bool {
        self.ci_lower[j] <= value && value <= self.ci_upper[j]
    }
}

fn weights(method: BootstrapMethod, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match method {
        BootstrapMethod::Multiplier => {
            let mut w: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
            let mean = w.iter().sum::<f64>() / n as f64;
            w.iter_mut().for_each(|v| *v /= mean);
            w
        }
        BootstrapMethod::Pairs => {
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
            w
        }
    }
}

/// `(1/n) Σᵢ wᵢ rowᵢ` for each column of `m`.
fn weighted_means(m: &DMatrix<f64>, w: &DVector<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (m.transpose() * w).iter().map(|v| v / n).collect()
}

fn weighted_problem(fit: &FittedEstimate, w: &[f64]) -> QpProblem {
    let b = &fit.basis.values;
    let wv = DVector::from_column_slice(w);
    let mut scaled = b.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let n = b.nrows() as f64;
    let g = b.transpose() * &scaled / n;
    let q = (&g + g.transpose()) * 0.5;
    let c = weighted_means(&fit.moments.contributions, &wv);
    let mut p = QpProblem::new(q, c);
    for (f, &delta) in fit.fairness.iter().zip(&fit.deltas) {
        let uw = DVector::from_iterator(w.len(), f.per_record_uf.iter().zip(w).map(|(u, wi)| u * wi));
        p = p.constrain(weighted_means(b, &uw), delta);
    }
    p
}

pub fn bootstrap_beta(fit: &FittedEstimate, settings: &BootstrapSettings) -> Result<BootstrapResult> {
    if settings.replicates < MIN_REPLICATES {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {}",
            settings.replicates
        )));
    }
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", settings.alpha)));
    }
    let n = fit.basis.n();
    let draws: Vec<Option<Vec<f64>>> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(r as u64);
            let w = weights(settings.method, n, &mut rng);
            match solve(&weighted_problem(fit, &w), &fit.qp) {
                Ok(s) => Some(s.beta),
                Err(e) => {
                    log::debug!("bootstrap replicate {r} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let kept: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let dropped = settings.replicates - kept.len();
    if dropped as f64 > MAX_DROP_FRACTION * settings.replicates as f64 {
        return Err(Error::Inference(format!(
            "{dropped} of {} bootstrap replicates failed to solve",
            settings.replicates
        )));
    }
    if dropped > 0 {
        log::warn!("{dropped} bootstrap replicates dropped after solver failure");
    }
    let k = fit.beta().len();
    let replicates = DMatrix::from_fn(kept.len(), k, |i, j| kept[i][j]);
    let (mut ci_lower, mut ci_upper) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for col in replicates.column_iter() {
        let v: Vec<f64> = col.iter().copied().collect();
        ci_lower.push(quantile(&v, settings.alpha / 2.0));
        ci_upper.push(quantile(&v, 1.0 - settings.alpha / 2.0));
    }
    Ok(BootstrapResult {
        replicates,
        ci_lower,
        ci_upper,
        point: fit.beta().to_vec(),
        method: settings.method,
        alpha: settings.alpha,
        dropped,
    })
}
