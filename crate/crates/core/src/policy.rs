//! Policies derived from a fitted CATE and their evaluation.
//!
//! The default rule treats exactly when the estimated effect is strictly
//! positive, `ĝ(W) = 1{β̂ᵀb(W) > 0}`; a zero estimate is not treated.
//! Welfare is estimated from influence values, `Û(g) = Pₙ[φ₁g + φ₀(1 − g)]`,
//! normally on a sample independent of the one used to fit `β̂`.

use serde::Serialize;

use crate::basis::FittedBasis;
use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::fairness::{policy_unfairness, FairnessMoment};
use crate::moments::InfluenceValues;

/// `τ̂(W) = βᵀb(W)`.
#[derive(Debug, Clone)]
pub struct FittedCate {
    pub beta: Vec<f64>,
    pub basis: FittedBasis,
}

impl FittedCate {
    pub fn new(beta: Vec<f64>, basis: FittedBasis) -> Result<Self> {
        if beta.len() != basis.len() {
            return Err(Error::Dimension {
                expected: basis.len(),
                got: beta.len(),
            });
        }
        Ok(Self { beta, basis })
    }

    /// Evaluates at a full `W = (s, x)` vector; covariates outside the basis
    /// selector are ignored.
    pub fn evaluate(&self, w: &[f64]) -> Result<f64> {
        let b = self.basis.evaluate(w)?;
        Ok(b.iter().zip(&self.beta).map(|(x, y)| x * y).sum())
    }

    pub fn evaluate_all(&self, data: &ObservationalDataset) -> Result<Vec<f64>> {
        data.records().iter().map(|r| self.evaluate(&r.w())).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            beta: self.beta.iter().map(|b| b * factor).collect(),
            basis: self.basis.clone(),
        }
    }
}

/// `1{τ̂ > 0}` from precomputed estimates.
pub fn threshold(tau_hat: &[f64]) -> Vec<bool> {
    tau_hat.iter().map(|&t| t > 0.0).collect()
}

pub fn policy_threshold(cate: &FittedCate, data: &ObservationalDataset) -> Result<Vec<bool>> {
    Ok(threshold(&cate.evaluate_all(data)?))
}

/// `1{τ̂ ∈ (lo, hi]}`.
pub fn policy_interval(cate: &FittedCate, data: &ObservationalDataset, lo: f64, hi: f64) -> Result<Vec<bool>> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::Parameter(format!("interval ({lo}, {hi}] is empty")));
    }
    Ok(cate.evaluate_all(data)?.iter().map(|&t| t > lo && t <= hi).collect())
}

pub fn estimate_welfare(policy: &[bool], iv: &InfluenceValues) -> Result<f64> {
    if policy.len() != iv.len() {
        return Err(Error::Dimension {
            expected: iv.len(),
            got: policy.len(),
        });
    }
    let total: f64 = policy
        .iter()
        .enumerate()
        .map(|(i, &g)| if g { iv.phi1[i] } else { iv.phi0[i] })
        .sum();
    Ok(total / policy.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regret {
    pub regret: f64,
    pub misclassification: f64,
}

/// `Pₙ[τ(g* − g)]` and `Pₙ[g ≠ g*]` with `g* = 1{τ > 0}`. Needs the true
/// CATE, so real data (`tau = None`) is rejected.
pub fn oracle_regret(policy: &[bool], data: &ObservationalDataset, tau: Option<&dyn Fn(&[f64]) -> f64>) -> Result<Regret> {
    let tau = tau.ok_or_else(|| Error::Unsupported("regret needs the true CATE; it is only available on synthetic data".into()))?;
    if policy.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            got: policy.len(),
        });
    }
    let n = data.len().max(1) as f64;
    let (mut regret, mut wrong) = (0.0, 0usize);
    for (r, &g) in data.records().iter().zip(policy) {
        let t = tau(&r.w());
        let best = t > 0.0;
        regret += t * (f64::from(u8::from(best)) - f64::from(u8::from(g)));
        wrong += usize::from(best != g);
    }
    Ok(Regret {
        regret: regret / n,
        misclassification: wrong as f64 / n,
    })
}

/// Negates the outcome so that "smaller is better" objectives (such as
/// rearrest) fit the larger-is-better machinery. Welfare on the flipped data
/// is minus the risk.
pub fn recidivism_objective_flip(data: &ObservationalDataset) -> ObservationalDataset {
    data.map_outcome(|y| -y)
}

/// Fraction treated within `S = 0` and `S = 1`.
pub fn treated_fraction_by_s(policy: &[bool], data: &ObservationalDataset) -> [f64; 2] {
    let mut treated = [0usize; 2];
    let mut size = [0usize; 2];
    for (r, &g) in data.records().iter().zip(policy) {
        let s = usize::from(r.s);
        size[s] += 1;
        treated[s] += usize::from(g);
    }
    [0, 1].map(|s| if size[s] == 0 { f64::NAN } else { treated[s] as f64 / size[s] as f64 })
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyReport {
    pub welfare: f64,
    /// `(criterion label, |Pₙ[ûf·g]|)`.
    pub unfairness: Vec<(String, f64)>,
    pub treated_fraction_by_s: [f64; 2],
    pub regret: Option<f64>,
    pub misclassification: Option<f64>,
}

impl PolicyReport {
    pub fn evaluate(
        policy: &[bool],
        data: &ObservationalDataset,
        iv: &InfluenceValues,
        fairness: &[FairnessMoment],
        tau: Option<&dyn Fn(&[f64]) -> f64>,
    ) -> Result<Self> {
        let unfairness = fairness
            .iter()
            .map(|m| Ok((m.criterion.label(), policy_unfairness(policy, m)?)))
            .collect::<Result<_>>()?;
        let regret = tau.map(|t| oracle_regret(policy, data, Some(t))).transpose()?;
        Ok(Self {
            welfare: estimate_welfare(policy, iv)?,
            unfairness,
            treated_fraction_by_s: treated_fraction_by_s(policy, data),
            regret: regret.map(|r| r.regret),
            misclassification: regret.map(|r| r.misclassification),
        })
    }

    /// Welfare reported as risk for flipped outcomes.
    pub fn risk(&self) -> f64 {
        -self.welfare
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSpec, FittedBasis};
    use crate::dataset::Observation;
    use proptest::prelude::*;

    fn data(xs: &[f64]) -> ObservationalDataset {
        let recs = xs.iter().map(|&x| Observation::new(1.0, false, x > 0.5, vec![x])).collect();
        ObservationalDataset::new(recs, vec!["x".into()]).unwrap()
    }

    /// `τ̂ = x` on the raw covariate.
    fn identity_cate(d: &ObservationalDataset) -> FittedCate {
        let basis = FittedBasis::fit(d, &BasisSpec::new(1).intercept(false).select(vec![1]).standardized(false)).unwrap();
        FittedCate::new(vec![1.0], basis).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        let d = data(&[-1.0, 0.0, 1.0]);
        assert_eq!(policy_threshold(&identity_cate(&d), &d).unwrap(), vec![false, false, true]);
        assert_eq!(policy_threshold(&identity_cate(&d).scaled(0.0), &d).unwrap(), vec![false; 3]);
    }

    #[test]
    fn interval_rules() {
        let d = data(&[-1.0, 0.0, 1.0, 3.0]);
        let c = identity_cate(&d);
        assert_eq!(policy_interval(&c, &d, 0.0, f64::INFINITY).unwrap(), policy_threshold(&c, &d).unwrap());
        assert_eq!(policy_interval(&c, &d, f64::NEG_INFINITY, f64::INFINITY).unwrap(), vec![true; 4]);
        let d = data(&[0.2, 0.7]);
        assert_eq!(policy_interval(&identity_cate(&d), &d, 0.5, 1.0).unwrap(), vec![false, true]);
        assert!(policy_interval(&c, &d, 1.0, 1.0).is_err());
    }

    #[test]
    fn welfare_examples() {
        let iv = InfluenceValues {
            phi0: vec![1.0, 1.0],
            phi1: vec![2.0, 0.0],
        };
        assert_eq!(estimate_welfare(&[true, true], &iv).unwrap(), 1.0);
        assert_eq!(estimate_welfare(&[false, false], &iv).unwrap(), 1.0);
        assert_eq!(estimate_welfare(&[true, false], &iv).unwrap(), 1.5);
        assert!(estimate_welfare(&[true], &iv).is_err());
    }

    #[test]
    fn regret_examples() {
        let d = data(&[-2.0, -0.5, 1.0, 3.0]);
        let tau = |w: &[f64]| w[1];
        let best: Vec<bool> = d.records().iter().map(|r| r.x[0] > 0.0).collect();
        let r = oracle_regret(&best, &d, Some(&tau)).unwrap();
        assert_eq!((r.regret, r.misclassification), (0.0, 0.0));
        let worst: Vec<bool> = best.iter().map(|g| !g).collect();
        let r = oracle_regret(&worst, &d, Some(&tau)).unwrap();
        assert_eq!(r.regret, (2.0 + 0.5 + 1.0 + 3.0) / 4.0);
        assert_eq!(r.misclassification, 1.0);
        assert!(matches!(oracle_regret(&best, &d, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn regret_is_welfare_difference_under_oracle_values() {
        let d = data(&[-2.0, -0.5, 1.0, 3.0]);
        let iv = InfluenceValues {
            phi0: vec![0.0; 4],
            phi1: d.records().iter().map(|r| r.x[0]).collect(),
        };
        let tau = |w: &[f64]| w[1];
        let best = vec![false, false, true, true];
        for g in [vec![true; 4], vec![false, true, false, true]] {
            let r = oracle_regret(&g, &d, Some(&tau)).unwrap();
            let gap = estimate_welfare(&best, &iv).unwrap() - estimate_welfare(&g, &iv).unwrap();
            assert!((r.regret - gap).abs() < 1e-15);
        }
    }

    #[test]
    fn flip_is_involution() {
        let d = data(&[0.0, 1.0]);
        let f = recidivism_objective_flip(&d);
        assert_eq!(f.y(), vec![-1.0, -1.0]);
        assert_eq!(recidivism_objective_flip(&f).y(), d.y());
        let iv = InfluenceValues {
            phi0: f.y(),
            phi1: f.y(),
        };
        let report = PolicyReport::evaluate(&[false, true], &f, &iv, &[], None).unwrap();
        assert_eq!(report.risk(), 1.0);
        assert_eq!(report.treated_fraction_by_s, [0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_policy(xs in proptest::collection::vec(-5.0..5.0f64, 1..30), c in 1e-3..1e3f64) {
            let d = data(&xs);
            let cate = identity_cate(&d);
            prop_assert_eq!(policy_threshold(&cate, &d).unwrap(), policy_threshold(&cate.scaled(c), &d).unwrap());
        }
    }
}
