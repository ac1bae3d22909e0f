//! End-to-end fitting: folds, nuisances, basis, moments, fairness moments and
//! the constrained program, in that order.

use log::warn;

use crate::basis::{check_a1, expand, BasisMatrix, BasisSpec};
use crate::dataset::{ObservationalDataset, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::fairness::{fairness_moment, FairnessCriterion, FairnessMoment};
use crate::learners::LearnerSpec;
use crate::moments::{influence_values, moments, InfluenceValues, MomentEstimate, MomentMethod};
use crate::nuisance::{fit_cross_fitted, NuisanceFit, DEFAULT_EPSILON};
use crate::policy::{threshold, FittedCate};
use crate::qp::{solve, QpProblem, QpSettings, QpSolution};

/// Default outcome learner: cubic ridge regression.
pub fn default_outcome_learner() -> LearnerSpec {
    LearnerSpec::poly_ridge(3, 1e-4)
}

/// Default propensity learner: linear probability model, clipped downstream.
/// Higher-degree fits of a binary response extrapolate into the clip region
/// on the Gaussian tails and blow up the inverse weights.
pub fn default_propensity_learner() -> LearnerSpec {
    LearnerSpec::poly_ridge(1, 1e-3)
}

#[derive(Debug, Clone)]
pub struct Estimator {
    pub basis: BasisSpec,
    pub criteria: Vec<FairnessCriterion>,
    pub method: MomentMethod,
    pub outcome_learner: LearnerSpec,
    pub propensity_learner: LearnerSpec,
    pub folds: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub qp: QpSettings,
}

impl Estimator {
    pub fn new(basis: BasisSpec) -> Self {
        Self {
            basis,
            criteria: Vec::new(),
            method: MomentMethod::Dr,
            outcome_learner: default_outcome_learner(),
            propensity_learner: default_propensity_learner(),
            folds: DEFAULT_FOLDS,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            qp: QpSettings::default(),
        }
    }

    pub fn criterion(mut self, c: FairnessCriterion) -> Self {
        self.criteria.push(c);
        self
    }

    pub fn criteria(mut self, cs: Vec<FairnessCriterion>) -> Self {
        self.criteria = cs;
        self
    }

    pub fn method(mut self, m: MomentMethod) -> Self {
        self.method = m;
        self
    }

    pub fn learners(mut self, outcome: LearnerSpec, propensity: LearnerSpec) -> Self {
        self.outcome_learner = outcome;
        self.propensity_learner = propensity;
        self
    }

    pub fn folds(mut self, k: usize) -> Self {
        self.folds = k;
        self
    }

    pub fn epsilon(mut self, e: f64) -> Self {
        self.epsilon = e;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn qp_settings(mut self, s: QpSettings) -> Self {
        self.qp = s;
        self
    }

    /// Keeps fold labels already on `data`; assigns them otherwise.
    pub fn with_folds(&self, data: &ObservationalDataset) -> Result<ObservationalDataset> {
        match data.folds() {
            Some(_) => Ok(data.clone()),
            None => data.assign_folds(self.folds, self.seed),
        }
    }

    pub fn fit_nuisance(&self, data: &ObservationalDataset) -> Result<(ObservationalDataset, NuisanceFit)> {
        let data = self.with_folds(data)?;
        let fit = fit_cross_fitted(&data, &self.outcome_learner, &self.propensity_learner, self.epsilon)?;
        if fit.clipped > 0 {
            warn!("{} of {} propensity predictions clipped to [{}, {}]", fit.clipped, fit.len(), fit.epsilon, 1.0 - fit.epsilon);
        }
        Ok((data, fit))
    }

    pub fn fit(&self, data: &ObservationalDataset) -> Result<FittedEstimate> {
        let (data, nuisance) = self.fit_nuisance(data)?;
        self.fit_with_nuisance(&data, nuisance)
    }

    /// Runs everything after the nuisance fit.
    pub fn fit_with_nuisance(&self, data: &ObservationalDataset, nuisance: NuisanceFit) -> Result<FittedEstimate> {
        let basis = expand(data, &self.basis)?;
        let a1 = check_a1(&basis.gram, 1e-10);
        if !a1.satisfied {
            warn!("Gram matrix min eigenvalue {:.3e} is below {:.0e}", a1.min_eigenvalue, a1.tol);
        }
        let influence = influence_values(data, &nuisance)?;
        let moment = moments(self.method, data, &nuisance, &basis)?;
        let fairness = self
            .criteria
            .iter()
            .map(|c| fairness_moment(c, data, &basis, Some(&nuisance), Some(&influence)))
            .collect::<Result<Vec<_>>>()?;
        let deltas: Vec<f64> = self.criteria.iter().map(|c| c.delta).collect();
        let problem = build_problem(&basis, &moment, &fairness, &deltas)?;
        let solution = solve(&problem, &self.qp)?;
        let cate = FittedCate::new(solution.beta.clone(), basis.fitted.clone())?;
        Ok(FittedEstimate {
            basis,
            nuisance,
            influence,
            moments: moment,
            fairness,
            deltas,
            solution,
            cate,
            qp: self.qp,
        })
    }
}

pub fn build_problem(basis: &BasisMatrix, m: &MomentEstimate, fairness: &[FairnessMoment], deltas: &[f64]) -> Result<QpProblem> {
    if deltas.len() != fairness.len() {
        return Err(Error::Dimension {
            expected: fairness.len(),
            got: deltas.len(),
        });
    }
    let mut p = QpProblem::new(basis.gram.clone(), m.c.clone());
    for (f, &d) in fairness.iter().zip(deltas) {
        p = p.constrain(f.a.clone(), d);
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct FittedEstimate {
    pub basis: BasisMatrix,
    pub nuisance: NuisanceFit,
    pub influence: InfluenceValues,
    pub moments: MomentEstimate,
    pub fairness: Vec<FairnessMoment>,
    pub deltas: Vec<f64>,
    pub solution: QpSolution,
    pub cate: FittedCate,
    pub qp: QpSettings,
}

impl FittedEstimate {
    pub fn beta(&self) -> &[f64] {
        &self.solution.beta
    }

    /// `a_jᵀβ̂` per constraint.
    pub fn constraint_residuals(&self) -> Vec<f64> {
        self.fairness
            .iter()
            .map(|f| f.a.iter().zip(self.beta()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn problem(&self) -> QpProblem {
        build_problem(&self.basis, &self.moments, &self.fairness, &self.deltas).expect("dimensions fixed at fit time")
    }

    /// Re-solves the program with new tolerances, reusing every estimated
    /// input.
    pub fn with_deltas(&self, deltas: &[f64]) -> Result<FittedEstimate> {
        let problem = build_problem(&self.basis, &self.moments, &self.fairness, deltas)?;
        let solution = solve(&problem, &self.qp)?;
        let cate = FittedCate::new(solution.beta.clone(), self.basis.fitted.clone())?;
        Ok(FittedEstimate {
            deltas: deltas.to_vec(),
            solution,
            cate,
            ..self.clone()
        })
    }

    /// In-sample `τ̂(Wᵢ)`.
    pub fn tau_hat(&self) -> Vec<f64> {
        (&self.basis.values * nalgebra::DVector::from_column_slice(self.beta()))
            .iter()
            .copied()
            .collect()
    }

    pub fn policy(&self) -> Vec<bool> {
        threshold(&self.tau_hat())
    }

    /// `Pₙ(τ̂ | S = 0) − Pₙ(τ̂ | S = 1)` on the training sample.
    pub fn group_gap(&self, data: &ObservationalDataset) -> f64 {
        let t = self.tau_hat();
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for (r, v) in data.records().iter().zip(&t) {
            if r.s {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        s0 / n0 as f64 - s1 / n1 as f64
    }
}
