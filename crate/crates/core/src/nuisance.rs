//! Cross-fitted nuisance functions `μ₀, μ₁` (outcome regressions) and `π₁`
//! (propensity score).
//!
//! For each fold `b`, the models are trained on records with `B ≠ b` and
//! evaluated only on records with `B = b`, so every stored prediction is
//! out-of-fold. Propensity predictions are clipped to `[ε, 1 − ε]`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Regressor};

pub const DEFAULT_EPSILON: f64 = 0.025;

/// Models trained with fold `held_out` excluded.
#[derive(Debug, Clone)]
pub struct FoldModels {
    pub held_out: usize,
    pub trained_on: Vec<usize>,
    pub mu0: Arc<dyn Regressor>,
    pub mu1: Arc<dyn Regressor>,
    pub pi1: Arc<dyn Regressor>,
}

#[derive(Debug, Clone)]
pub struct NuisanceFit {
    /// Out-of-fold `μ̂₀(W_i)`.
    pub mu0_hat: Vec<f64>,
    /// Out-of-fold `μ̂₁(W_i)`.
    pub mu1_hat: Vec<f64>,
    /// Out-of-fold `π̂₁(W_i)`, clipped.
    pub pi1_hat: Vec<f64>,
    pub epsilon: f64,
    /// Number of propensity predictions moved by clipping.
    pub clipped: usize,
    /// Fold label of each record (empty when built from raw predictions).
    pub fold_of: Vec<usize>,
    pub per_fold_models: Vec<FoldModels>,
    w_dim: Option<usize>,
}

pub fn clip(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("clipping epsilon {epsilon} must lie in (0, 0.5)")))
    }
}

impl NuisanceFit {
    /// Wraps precomputed per-record predictions; propensities are clipped.
    pub fn from_predictions(mu0_hat: Vec<f64>, mu1_hat: Vec<f64>, pi1_raw: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let n = mu0_hat.len();
        for len in [mu1_hat.len(), pi1_raw.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        let clipped = pi1_raw.iter().filter(|&&p| clip(p, epsilon) != p).count();
        Ok(Self {
            mu0_hat,
            mu1_hat,
            pi1_hat: pi1_raw.into_iter().map(|p| clip(p, epsilon)).collect(),
            epsilon,
            clipped,
            fold_of: Vec::new(),
            per_fold_models: Vec::new(),
            w_dim: None,
        })
    }

    pub fn len(&self) -> usize {
        self.mu0_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0_hat.is_empty()
    }

    /// Out-of-fold `τ̂ = μ̂₁ − μ̂₀` per record.
    pub fn tau_hat(&self) -> Vec<f64> {
        self.mu1_hat.iter().zip(&self.mu0_hat).map(|(a, b)| a - b).collect()
    }

    /// Folds labels the models were fit over, if any.
    pub fn k(&self) -> usize {
        self.per_fold_models.len()
    }

    fn models_for(&self, w: &[f64], fold_exclusion: Option<usize>) -> Result<Vec<&FoldModels>> {
        if let Some(d) = self.w_dim {
            if d != w.len() {
                return Err(Error::Dimension { expected: d, got: w.len() });
            }
        }
        if self.per_fold_models.is_empty() {
            return Err(Error::Unsupported("nuisance fit carries no trained models".into()));
        }
        match fold_exclusion {
            Some(b) => self
                .per_fold_models
                .iter()
                .find(|m| m.held_out == b)
                .map(|m| vec![m])
                .ok_or_else(|| Error::Parameter(format!("no model excludes fold {b}"))),
            None => Ok(self.per_fold_models.iter().collect()),
        }
    }

    /// `μ̂_arm(w)` from the model trained without `fold_exclusion`, or the
    /// average over all fold models when `None`.
    pub fn predict_outcome(&self, w: &[f64], arm: bool, fold_exclusion: Option<usize>) -> Result<f64> {
        let models = self.models_for(w, fold_exclusion)?;
        let sum: f64 = models
            .iter()
            .map(|m| if arm { m.mu1.predict(w) } else { m.mu0.predict(w) })
            .sum();
        Ok(sum / models.len() as f64)
    }

    /// Clipped `π̂₁(w)`, same fold semantics as [`Self::predict_outcome`].
    pub fn predict_propensity(&self, w: &[f64], fold_exclusion: Option<usize>) -> Result<f64> {
        let models = self.models_for(w, fold_exclusion)?;
        let sum: f64 = models.iter().map(|m| clip(m.pi1.predict(w), self.epsilon)).sum();
        Ok(sum / models.len() as f64)
    }
}

fn fit_err(fold: usize, arm: &str, message: impl Into<String>) -> Error {
    Error::Fit {
        fold,
        arm: arm.into(),
        message: message.into(),
    }
}

/// Cross-fits all three nuisances; `data` must carry fold labels.
pub fn fit_cross_fitted(
    data: &ObservationalDataset,
    outcome_learner: &LearnerSpec,
    propensity_learner: &LearnerSpec,
    epsilon: f64,
) -> Result<NuisanceFit> {
    check_epsilon(epsilon)?;
    outcome_learner.validate().map_err(Error::Parameter)?;
    propensity_learner.validate().map_err(Error::Parameter)?;
    let folds = data
        .folds()
        .ok_or_else(|| Error::Parameter("folds must be assigned before cross-fitting".into()))?;
    let w = data.w_rows();
    let records = data.records();

    let models: Vec<FoldModels> = (0..folds.k())
        .into_par_iter()
        .map(|b| -> Result<FoldModels> {
            let train: Vec<usize> = (0..data.len()).filter(|&i| folds.label(i) != b).collect();
            let arm_rows = |arm: bool| -> (Vec<Vec<f64>>, Vec<f64>) {
                train
                    .iter()
                    .filter(|&&i| records[i].a == arm)
                    .map(|&i| (w[i].clone(), records[i].y))
                    .unzip()
            };
            let (x0, y0) = arm_rows(false);
            let (x1, y1) = arm_rows(true);
            if x1.is_empty() {
                return Err(fit_err(b, "treated", "no treated units in training folds (positivity violated)"));
            }
            if x0.is_empty() {
                return Err(fit_err(b, "control", "no control units in training folds (positivity violated)"));
            }
            let mu0 = outcome_learner.fit(&x0, &y0, false).map_err(|m| fit_err(b, "control", m))?;
            let mu1 = outcome_learner.fit(&x1, &y1, true).map_err(|m| fit_err(b, "treated", m))?;
            let xp: Vec<Vec<f64>> = train.iter().map(|&i| w[i].clone()).collect();
            let ap: Vec<f64> = train.iter().map(|&i| f64::from(u8::from(records[i].a))).collect();
            let pi1 = propensity_learner
                .fit(&xp, &ap, true)
                .map_err(|m| fit_err(b, "propensity", m))?;
            let mut trained_on: Vec<usize> = (0..folds.k()).filter(|&f| f != b).collect();
            trained_on.sort_unstable();
            Ok(FoldModels {
                held_out: b,
                trained_on,
                mu0: Arc::from(mu0),
                mu1: Arc::from(mu1),
                pi1: Arc::from(pi1),
            })
        })
        .collect::<Result<_>>()?;

    let n = data.len();
    let mut mu0_hat = vec![0.0; n];
    let mut mu1_hat = vec![0.0; n];
    let mut pi1_hat = vec![0.0; n];
    let mut clipped = 0;
    for i in 0..n {
        let m = &models[folds.label(i)];
        mu0_hat[i] = m.mu0.predict(&w[i]);
        mu1_hat[i] = m.mu1.predict(&w[i]);
        let raw = m.pi1.predict(&w[i]);
        pi1_hat[i] = clip(raw, epsilon);
        if pi1_hat[i] != raw {
            clipped += 1;
        }
    }
    Ok(NuisanceFit {
        mu0_hat,
        mu1_hat,
        pi1_hat,
        epsilon,
        clipped,
        fold_of: folds.labels().to_vec(),
        per_fold_models: models,
        w_dim: Some(data.dim() + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use crate::learners::Oracle;

    fn toy(n: usize, y: impl Fn(usize) -> f64) -> ObservationalDataset {
        let recs = (0..n)
            .map(|i| Observation::new(y(i), i % 2 == 0, i % 3 == 0, vec![(i as f64).sin(), i as f64 / n as f64]))
            .collect();
        ObservationalDataset::new(recs, vec!["x1".into(), "x2".into()])
            .unwrap()
            .assign_folds(2, 3)
            .unwrap()
    }

    #[test]
    fn constant_outcome() {
        let d = toy(80, |_| 2.5);
        for learner in [LearnerSpec::poly_ridge(2, 0.01), LearnerSpec::knn(3), LearnerSpec::boosted_stumps(10, 0.2)] {
            let fit = fit_cross_fitted(&d, &learner, &LearnerSpec::constant(), 0.025).unwrap();
            assert!(fit.mu0_hat.iter().chain(&fit.mu1_hat).all(|m| (m - 2.5).abs() < 1e-9));
        }
    }

    #[test]
    fn propensity_clipping() {
        let d = toy(20, |i| i as f64);
        let tiny = LearnerSpec::oracle(Oracle::new("tiny", |_, _| 0.001));
        let fit = fit_cross_fitted(&d, &LearnerSpec::constant(), &tiny, 0.025).unwrap();
        assert!(fit.pi1_hat.iter().all(|&p| p == 0.025));
        assert_eq!(fit.clipped, 20);
        let w = d.record(0).w();
        assert_eq!(fit.predict_propensity(&w, Some(1)).unwrap(), 0.025);
    }

    #[test]
    fn missing_arm_is_fit_error() {
        let recs = (0..10)
            .map(|i| Observation::new(1.0, true, i % 2 == 0, vec![i as f64]))
            .collect();
        let d = ObservationalDataset::new(recs, vec!["x".into()]).unwrap().assign_folds(2, 0).unwrap();
        let err = fit_cross_fitted(&d, &LearnerSpec::constant(), &LearnerSpec::constant(), 0.025).unwrap_err();
        assert!(matches!(err, Error::Fit { ref arm, .. } if arm == "control"));
    }

    #[test]
    fn too_small_training_slice() {
        let d = toy(12, |i| i as f64);
        let err = fit_cross_fitted(&d, &LearnerSpec::knn(50), &LearnerSpec::constant(), 0.025).unwrap_err();
        assert!(matches!(err, Error::Fit { .. }));
    }

    #[test]
    fn requires_folds_and_valid_epsilon() {
        let d = toy(12, |i| i as f64);
        let unfolded = d.subset(&(0..12).collect::<Vec<_>>());
        assert!(fit_cross_fitted(&unfolded, &LearnerSpec::constant(), &LearnerSpec::constant(), 0.025).is_err());
        assert!(fit_cross_fitted(&d, &LearnerSpec::constant(), &LearnerSpec::constant(), 0.5).is_err());
    }

    #[test]
    fn averaging_identical_models() {
        let d = toy(30, |i| i as f64);
        let oracle = LearnerSpec::oracle(Oracle::new("lin", |w, a| w[1] + if a { 1.0 } else { 0.0 }));
        let fit = fit_cross_fitted(&d, &oracle, &LearnerSpec::constant(), 0.025).unwrap();
        let w = [0.0, 0.7, 0.1];
        let avg = fit.predict_outcome(&w, true, None).unwrap();
        let single = fit.predict_outcome(&w, true, Some(0)).unwrap();
        assert_eq!(avg, single);
        assert!((avg - 1.7).abs() < 1e-15);
        assert!(matches!(fit.predict_outcome(&[0.0], true, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fold_models_exclude_their_fold() {
        let d = toy(30, |i| i as f64);
        let fit = fit_cross_fitted(&d, &LearnerSpec::constant(), &LearnerSpec::constant(), 0.1).unwrap();
        for m in &fit.per_fold_models {
            assert!(!m.trained_on.contains(&m.held_out));
        }
    }
}
