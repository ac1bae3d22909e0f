//! Estimators of the counterfactual moment vector `E[(Y¹ − Y⁰) b(W)]`.
//!
//! * doubly robust: `Pₙ[(φ₁ − φ₀) b]` with cross-fitted influence values,
//! * plug-in: `Pₙ[(μ̂₁ − μ̂₀) b]`,
//! * inverse-probability weighting: `Pₙ[(AY/π̂₁ − (1−A)Y/π̂₀) b]`.
//!
//! Each estimate keeps its `n × k` per-record contributions so that
//! resampling can reuse them without refitting anything.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;

/// Uncentered efficient influence values `φ₀(Zᵢ; η̂₋Bᵢ)`, `φ₁(Zᵢ; η̂₋Bᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceValues {
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
}

impl InfluenceValues {
    pub fn len(&self) -> usize {
        self.phi0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi0.is_empty()
    }

    /// `φ₁ − φ₀` per record.
    pub fn contrast(&self) -> Vec<f64> {
        self.phi1.iter().zip(&self.phi0).map(|(a, b)| a - b).collect()
    }
}

/// `φ_a = 1(A = a)/π̂_a · (Y − μ̂_a) + μ̂_a` with `π̂₀ = 1 − π̂₁`.
pub fn influence_values(data: &ObservationalDataset, fit: &NuisanceFit) -> Result<InfluenceValues> {
    check_len(data.len(), fit.len())?;
    let mut phi0 = Vec::with_capacity(data.len());
    let mut phi1 = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let (m0, m1, p1) = (fit.mu0_hat[i], fit.mu1_hat[i], fit.pi1_hat[i]);
        if r.a {
            phi1.push((r.y - m1) / p1 + m1);
            phi0.push(m0);
        } else {
            phi1.push(m1);
            phi0.push((r.y - m0) / (1.0 - p1) + m0);
        }
    }
    Ok(InfluenceValues { phi0, phi1 })
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MomentMethod {
    Dr,
    Pi,
    Ipw,
}

impl MomentMethod {
    pub const ALL: [MomentMethod; 3] = [MomentMethod::Dr, MomentMethod::Pi, MomentMethod::Ipw];

    pub fn as_str(&self) -> &'static str {
        match self {
            MomentMethod::Dr => "DR",
            MomentMethod::Pi => "PI",
            MomentMethod::Ipw => "IPW",
        }
    }
}

impl std::str::FromStr for MomentMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DR" => Ok(MomentMethod::Dr),
            "PI" => Ok(MomentMethod::Pi),
            "IPW" => Ok(MomentMethod::Ipw),
            other => Err(Error::Config(format!("unknown estimator {other:?} (DR, PI, IPW)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentEstimate {
    /// `Pₙ[w b]`: column means of `contributions`.
    pub c: Vec<f64>,
    pub method: MomentMethod,
    /// Row `i` is `wᵢ · b(Wᵢ)ᵀ` for the method's per-record weight `wᵢ`.
    pub contributions: DMatrix<f64>,
}

/// Builds contributions `weight_i · b_i` and their column means.
pub fn weighted_moments(weights: &[f64], basis: &BasisMatrix, method: MomentMethod) -> Result<MomentEstimate> {
    check_len(basis.n(), weights.len())?;
    let mut contributions = basis.values.clone();
    for (i, &w) in weights.iter().enumerate() {
        contributions.row_mut(i).scale_mut(w);
    }
    let c = column_means(&contributions);
    Ok(MomentEstimate {
        c,
        method,
        contributions,
    })
}

pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|col| col.iter().sum::<f64>() / n).collect()
}

pub fn dr_moments(iv: &InfluenceValues, basis: &BasisMatrix) -> Result<MomentEstimate> {
    weighted_moments(&iv.contrast(), basis, MomentMethod::Dr)
}

pub fn pi_moments(data: &ObservationalDataset, fit: &NuisanceFit, basis: &BasisMatrix) -> Result<MomentEstimate> {
    check_len(data.len(), fit.len())?;
    weighted_moments(&fit.tau_hat(), basis, MomentMethod::Pi)
}

pub fn ipw_moments(data: &ObservationalDataset, fit: &NuisanceFit, basis: &BasisMatrix) -> Result<MomentEstimate> {
    check_len(data.len(), fit.len())?;
    let weights: Vec<f64> = data
        .records()
        .iter()
        .zip(&fit.pi1_hat)
        .map(|(r, &p)| if r.a { r.y / p } else { -r.y / (1.0 - p) })
        .collect();
    weighted_moments(&weights, basis, MomentMethod::Ipw)
}

pub fn moments(
    method: MomentMethod,
    data: &ObservationalDataset,
    fit: &NuisanceFit,
    basis: &BasisMatrix,
) -> Result<MomentEstimate> {
    match method {
        MomentMethod::Dr => dr_moments(&influence_values(data, fit)?, basis),
        MomentMethod::Pi => pi_moments(data, fit, basis),
        MomentMethod::Ipw => ipw_moments(data, fit, basis),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{expand, BasisSpec};
    use crate::dataset::Observation;

    fn data(rows: &[(f64, bool, f64)]) -> ObservationalDataset {
        let recs = rows
            .iter()
            .map(|&(y, a, x)| Observation::new(y, a, false, vec![x]))
            .collect();
        ObservationalDataset::new(recs, vec!["x".into()]).unwrap()
    }

    fn intercept(d: &ObservationalDataset) -> BasisMatrix {
        expand(d, &BasisSpec::new(1).select(vec![1]).standardized(false)).unwrap()
    }

    fn intercept_only(d: &ObservationalDataset) -> BasisMatrix {
        expand(d, &BasisSpec::new(0)).unwrap()
    }

    #[test]
    fn influence_formula() {
        let d = data(&[(2.0, true, 0.0)]);
        let fit = NuisanceFit::from_predictions(vec![0.5], vec![1.0], vec![0.5], 0.025).unwrap();
        let iv = influence_values(&d, &fit).unwrap();
        assert_eq!(iv.phi1, vec![3.0]);
        assert_eq!(iv.phi0, vec![0.5]);
    }

    #[test]
    fn zero_residual_gives_mu() {
        let d = data(&[(1.0, true, 0.0), (4.0, false, 1.0), (2.0, true, 2.0)]);
        let mu0 = vec![7.0, 4.0, -1.0];
        let mu1 = vec![1.0, 3.0, 2.0];
        let fit = NuisanceFit::from_predictions(mu0.clone(), mu1.clone(), vec![0.3, 0.6, 0.9], 0.025).unwrap();
        let iv = influence_values(&d, &fit).unwrap();
        assert_eq!(iv.phi0, mu0);
        assert_eq!(iv.phi1, mu1);
        let b = intercept(&d);
        let dr = dr_moments(&iv, &b).unwrap();
        let pi = pi_moments(&d, &fit, &b).unwrap();
        assert_eq!(dr.c, pi.c);
    }

    #[test]
    fn dr_hand_values() {
        let d = data(&[(0.0, true, 0.0), (0.0, true, 2.0)]);
        let b = intercept(&d);
        let iv = InfluenceValues {
            phi0: vec![0.0, 0.0],
            phi1: vec![1.0, 3.0],
        };
        assert_eq!(dr_moments(&iv, &b).unwrap().c, vec![2.0, 3.0]);
        let iv = InfluenceValues {
            phi0: vec![0.0, 0.0],
            phi1: vec![1.0, -1.0],
        };
        assert_eq!(dr_moments(&iv, &intercept_only(&d)).unwrap().c, vec![0.0]);
        let iv = InfluenceValues {
            phi0: vec![1.0, 1.0],
            phi1: vec![3.5, 3.5],
        };
        assert_eq!(dr_moments(&iv, &intercept_only(&d)).unwrap().c, vec![2.5]);
    }

    #[test]
    fn pi_hand_values() {
        let d = data(&[(0.0, true, 1.0)]);
        let fit = NuisanceFit::from_predictions(vec![1.0], vec![3.0], vec![0.5], 0.025).unwrap();
        assert_eq!(pi_moments(&d, &fit, &intercept(&d)).unwrap().c, vec![2.0, 2.0]);
        let fit = NuisanceFit::from_predictions(vec![1.0], vec![1.0], vec![0.5], 0.025).unwrap();
        assert_eq!(pi_moments(&d, &fit, &intercept(&d)).unwrap().c, vec![0.0, 0.0]);
    }

    #[test]
    fn ipw_hand_values() {
        let d = data(&[(1.0, true, 0.0), (1.0, true, 1.0)]);
        let fit = NuisanceFit::from_predictions(vec![0.0; 2], vec![0.0; 2], vec![0.5; 2], 0.025).unwrap();
        assert_eq!(ipw_moments(&d, &fit, &intercept_only(&d)).unwrap().c, vec![2.0]);

        let d = data(&[(2.0, false, 0.0)]);
        let fit = NuisanceFit::from_predictions(vec![0.0], vec![0.0], vec![0.2], 0.025).unwrap();
        let est = ipw_moments(&d, &fit, &intercept_only(&d)).unwrap();
        assert!((est.c[0] + 2.0 / 0.8).abs() < 1e-15);
    }

    #[test]
    fn c_is_column_mean_of_contributions() {
        let d = data(&[(1.0, true, 0.3), (4.0, false, 1.7), (2.0, true, -2.0)]);
        let fit = NuisanceFit::from_predictions(vec![0.1, 0.2, 0.3], vec![1.0, 0.0, 0.5], vec![0.4; 3], 0.025).unwrap();
        for m in MomentMethod::ALL {
            let est = moments(m, &d, &fit, &intercept(&d)).unwrap();
            let means = column_means(&est.contributions);
            for (a, b) in est.c.iter().zip(&means) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn method_round_trip() {
        for m in MomentMethod::ALL {
            assert_eq!(m.as_str().parse::<MomentMethod>().unwrap(), m);
        }
        assert!("xyz".parse::<MomentMethod>().is_err());
    }
}
