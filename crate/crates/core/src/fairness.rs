//! Fairness functions `uf_j` and their moment vectors `Pₙ[ûf_j b(W)]`.
//!
//! A constraint `|βᵀ Pₙ[ûf_j b]| ≤ δ_j` bounds a group contrast of the
//! fitted CATE `β̂ᵀb`. The supported criteria are
//!
//! * independence (statistical parity),
//!   `uf = (1−S)/Pₙ(1−S) − S/Pₙ(S)`;
//! * conditional parity within a stratum `L = l` of legitimate factors,
//!   `uf = (1−S)1{L=l}/Pₙ[(1−S)1{L=l}] − S1{L=l}/Pₙ[S1{L=l}]`;
//! * balance for the positive class, where the indicator `1{τ > 0}` is
//!   replaced by the out-of-fold plug-in `1{μ̂₁,₋B − μ̂₀,₋B > 0}`;
//! * any smooth function of the influence values `(φ₀, φ₁, W)`, for
//!   criteria defined through potential outcomes.
//!
//! All normalizers are empirical means over the full sample, so the
//! group-normalized criteria satisfy `Pₙ[ûf] = 0` exactly.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::moments::{column_means, InfluenceValues};
use crate::nuisance::NuisanceFit;

/// The stratifying function `L(X)` for conditional parity.
#[derive(Clone)]
pub enum LegitimateFactor {
    /// Bin index of covariate `covariate` (zero-based into `X`): the number
    /// of `cuts` that are `≤ x`.
    Bins { covariate: usize, cuts: Vec<f64> },
    Custom(Arc<dyn Fn(&[f64]) -> i64 + Send + Sync>),
}

impl LegitimateFactor {
    pub fn stratum(&self, x: &[f64]) -> i64 {
        match self {
            LegitimateFactor::Bins { covariate, cuts } => cuts.iter().filter(|&&c| c <= x[*covariate]).count() as i64,
            LegitimateFactor::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for LegitimateFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LegitimateFactor::Bins { covariate, cuts } => write!(f, "Bins(x{}, {cuts:?})", covariate + 1),
            LegitimateFactor::Custom(_) => write!(f, "Custom"),
        }
    }
}

pub type SmoothFairnessFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CriterionKind {
    Independence,
    ConditionalParity { factor: LegitimateFactor, level: i64 },
    PositiveBalance,
    /// `uf(y⁰, y¹, w)` evaluated at `(φ₀, φ₁, W)`.
    CounterfactualSmooth { name: String, f: SmoothFairnessFn },
}

impl fmt::Debug for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriterionKind::Independence => write!(f, "Independence"),
            CriterionKind::ConditionalParity { factor, level } => write!(f, "ConditionalParity({factor:?} = {level})"),
            CriterionKind::PositiveBalance => write!(f, "PositiveBalance"),
            CriterionKind::CounterfactualSmooth { name, .. } => write!(f, "CounterfactualSmooth({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FairnessCriterion {
    pub kind: CriterionKind,
    /// Tolerance `δ ≥ 0`; `f64::INFINITY` leaves the constraint inactive.
    pub delta: f64,
}

impl FairnessCriterion {
    pub fn new(kind: CriterionKind, delta: f64) -> Self {
        Self { kind, delta }
    }

    pub fn independence(delta: f64) -> Self {
        Self::new(CriterionKind::Independence, delta)
    }

    pub fn positive_balance(delta: f64) -> Self {
        Self::new(CriterionKind::PositiveBalance, delta)
    }

    pub fn conditional_parity(factor: LegitimateFactor, level: i64, delta: f64) -> Self {
        Self::new(CriterionKind::ConditionalParity { factor, level }, delta)
    }

    pub fn counterfactual(name: &str, f: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static, delta: f64) -> Self {
        Self::new(
            CriterionKind::CounterfactualSmooth {
                name: name.into(),
                f: Arc::new(f),
            },
            delta,
        )
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            delta,
        }
    }

    /// Short label used in reports (`IDP`, `PB`, ...).
    pub fn label(&self) -> String {
        match &self.kind {
            CriterionKind::Independence => "IDP".into(),
            CriterionKind::ConditionalParity { level, .. } => format!("CP[{level}]"),
            CriterionKind::PositiveBalance => "PB".into(),
            CriterionKind::CounterfactualSmooth { name, .. } => format!("CF[{name}]"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta >= 0.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!("{}: tolerance must be >= 0, got {}", self.label(), self.delta)))
        }
    }
}

/// Estimated fairness moment `a_j = Pₙ[ûf_j b]`.
#[derive(Debug, Clone)]
pub struct FairnessMoment {
    pub a: Vec<f64>,
    pub per_record_uf: Vec<f64>,
    pub criterion: FairnessCriterion,
    /// Normalizers used, by name.
    pub denominators: Vec<(String, f64)>,
}

fn moment_of(uf: Vec<f64>, basis: &BasisMatrix, criterion: FairnessCriterion, denominators: Vec<(String, f64)>) -> Result<FairnessMoment> {
    if uf.len() != basis.n() {
        return Err(Error::Dimension {
            expected: basis.n(),
            got: uf.len(),
        });
    }
    let mut weighted = basis.values.clone();
    for (i, &u) in uf.iter().enumerate() {
        weighted.row_mut(i).scale_mut(u);
    }
    Ok(FairnessMoment {
        a: column_means(&weighted),
        per_record_uf: uf,
        criterion,
        denominators,
    })
}

/// Two-group contrast weights `(1−S)h/Pₙ[(1−S)h] − S h/Pₙ[S h]` over a
/// record mask `h`.
fn group_contrast(s: &[bool], mask: &[bool], what: &str) -> Result<(Vec<f64>, Vec<(String, f64)>)> {
    let n = s.len() as f64;
    let p0 = s.iter().zip(mask).filter(|&(&si, &h)| !si && h).count() as f64 / n;
    let p1 = s.iter().zip(mask).filter(|&(&si, &h)| si && h).count() as f64 / n;
    if p0 == 0.0 {
        return Err(Error::Degenerate(format!("no S=0 records in {what}")));
    }
    if p1 == 0.0 {
        return Err(Error::Degenerate(format!("no S=1 records in {what}")));
    }
    let uf = s
        .iter()
        .zip(mask)
        .map(|(&si, &h)| match (h, si) {
            (false, _) => 0.0,
            (true, false) => 1.0 / p0,
            (true, true) => -1.0 / p1,
        })
        .collect();
    Ok((uf, vec![("S=0".into(), p0), ("S=1".into(), p1)]))
}

pub fn uf_independence(data: &ObservationalDataset, basis: &BasisMatrix, delta: f64) -> Result<FairnessMoment> {
    let mask = vec![true; data.len()];
    let (uf, den) = group_contrast(&data.s(), &mask, "sample")?;
    moment_of(uf, basis, FairnessCriterion::independence(delta), den)
}

pub fn uf_conditional_parity(data: &ObservationalDataset, basis: &BasisMatrix, criterion: &FairnessCriterion) -> Result<FairnessMoment> {
    let CriterionKind::ConditionalParity { factor, level } = &criterion.kind else {
        return Err(Error::Parameter("expected a conditional-parity criterion".into()));
    };
    let mask: Vec<bool> = data.records().iter().map(|r| factor.stratum(&r.x) == *level).collect();
    let (uf, den) = group_contrast(&data.s(), &mask, &format!("stratum L={level}"))?;
    moment_of(uf, basis, criterion.clone(), den)
}

/// Positive-class balance with indicator `1{μ̂₁,₋B − μ̂₀,₋B > 0}`; ties are
/// excluded from the positive class.
pub fn uf_positive_balance(data: &ObservationalDataset, basis: &BasisMatrix, fit: &NuisanceFit, delta: f64) -> Result<FairnessMoment> {
    if fit.len() != data.len() {
        return Err(Error::Dimension {
            expected: data.len(),
            got: fit.len(),
        });
    }
    let mask: Vec<bool> = fit.tau_hat().iter().map(|&t| t > 0.0).collect();
    let (uf, den) = group_contrast(&data.s(), &mask, "estimated positive class")
        .map_err(|e| Error::Degenerate(format!("no estimated responders in group ({e})")))?;
    moment_of(uf, basis, FairnessCriterion::positive_balance(delta), den)
}

pub fn uf_counterfactual_smooth(
    data: &ObservationalDataset,
    basis: &BasisMatrix,
    iv: &InfluenceValues,
    criterion: &FairnessCriterion,
) -> Result<FairnessMoment> {
    let CriterionKind::CounterfactualSmooth { f, .. } = &criterion.kind else {
        return Err(Error::Parameter("expected a counterfactual criterion".into()));
    };
    let mut uf = Vec::with_capacity(data.len());
    for (i, r) in data.records().iter().enumerate() {
        let v = f(iv.phi0[i], iv.phi1[i], &r.w());
        if !v.is_finite() {
            return Err(Error::Evaluation {
                index: i,
                message: format!("fairness function returned {v}"),
            });
        }
        uf.push(v);
    }
    moment_of(uf, basis, criterion.clone(), Vec::new())
}

/// Dispatches on the criterion kind. `fit` and `iv` are needed only by the
/// positive-balance and counterfactual criteria respectively.
pub fn fairness_moment(
    criterion: &FairnessCriterion,
    data: &ObservationalDataset,
    basis: &BasisMatrix,
    fit: Option<&NuisanceFit>,
    iv: Option<&InfluenceValues>,
) -> Result<FairnessMoment> {
    criterion.validate()?;
    match &criterion.kind {
        CriterionKind::Independence => uf_independence(data, basis, criterion.delta),
        CriterionKind::ConditionalParity { .. } => uf_conditional_parity(data, basis, criterion),
        CriterionKind::PositiveBalance => {
            let fit = fit.ok_or_else(|| Error::Parameter("positive balance needs a nuisance fit".into()))?;
            uf_positive_balance(data, basis, fit, criterion.delta)
        }
        CriterionKind::CounterfactualSmooth { .. } => {
            let iv = iv.ok_or_else(|| Error::Parameter("counterfactual criterion needs influence values".into()))?;
            uf_counterfactual_smooth(data, basis, iv, criterion)
        }
    }
}

/// `|Pₙ[ûf · g]|` for a binary policy `g`.
pub fn policy_unfairness(policy: &[bool], uf: &FairnessMoment) -> Result<f64> {
    if policy.len() != uf.per_record_uf.len() {
        return Err(Error::Dimension {
            expected: uf.per_record_uf.len(),
            got: policy.len(),
        });
    }
    let n = policy.len().max(1) as f64;
    let s: f64 = policy.iter().zip(&uf.per_record_uf).filter(|(&g, _)| g).map(|(_, u)| u).sum();
    Ok((s / n).abs())
}

/// Serializable criterion description for configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriterionConfig {
    Independence {
        #[serde(default, with = "tolerance")]
        delta: f64,
    },
    PositiveBalance {
        #[serde(default, with = "tolerance")]
        delta: f64,
    },
    /// One constraint per entry of `levels`, each a bin index of covariate
    /// `covariate` (name) under cut points `cuts`.
    ConditionalParity {
        covariate: String,
        cuts: Vec<f64>,
        levels: Vec<i64>,
        #[serde(default, with = "tolerance")]
        delta: f64,
    },
}

impl CriterionConfig {
    pub fn delta(&self) -> f64 {
        match self {
            CriterionConfig::Independence { delta }
            | CriterionConfig::PositiveBalance { delta }
            | CriterionConfig::ConditionalParity { delta, .. } => *delta,
        }
    }

    pub fn set_delta(&mut self, d: f64) {
        match self {
            CriterionConfig::Independence { delta }
            | CriterionConfig::PositiveBalance { delta }
            | CriterionConfig::ConditionalParity { delta, .. } => *delta = d,
        }
    }

    /// Parses `kind[:delta]`, e.g. `independence:0.0` or `positive-balance`.
    pub fn parse_flag(s: &str) -> Result<Self> {
        let (kind, delta) = match s.split_once(':') {
            Some((k, d)) => (
                k,
                parse_delta(d).map_err(|_| Error::Config(format!("bad tolerance in --fairness {s:?}")))?,
            ),
            None => (s, 0.0),
        };
        match kind {
            "independence" | "idp" => Ok(CriterionConfig::Independence { delta }),
            "positive-balance" | "pb" => Ok(CriterionConfig::PositiveBalance { delta }),
            other => Err(Error::Config(format!(
                "unknown fairness criterion {other:?}; use independence or positive-balance \
                 (conditional-parity is configured in the config file)"
            ))),
        }
    }

    /// Expands into runtime criteria for a dataset with the given covariate names.
    pub fn resolve(&self, covariate_names: &[String]) -> Result<Vec<FairnessCriterion>> {
        Ok(match self {
            CriterionConfig::Independence { delta } => vec![FairnessCriterion::independence(*delta)],
            CriterionConfig::PositiveBalance { delta } => vec![FairnessCriterion::positive_balance(*delta)],
            CriterionConfig::ConditionalParity {
                covariate,
                cuts,
                levels,
                delta,
            } => {
                let j = covariate_names
                    .iter()
                    .position(|c| c == covariate)
                    .ok_or_else(|| Error::Config(format!("conditional parity: unknown covariate {covariate:?}")))?;
                levels
                    .iter()
                    .map(|&level| {
                        FairnessCriterion::conditional_parity(
                            LegitimateFactor::Bins {
                                covariate: j,
                                cuts: cuts.clone(),
                            },
                            level,
                            *delta,
                        )
                    })
                    .collect()
            }
        })
    }
}

/// Parses a tolerance; accepts `inf`.
pub fn parse_delta(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    match s.trim() {
        "inf" | "infinity" | "Inf" => Ok(f64::INFINITY),
        t => t.parse(),
    }
}

/// Serde adapter for tolerances: JSON has no infinity, so `δ = ∞` is written
/// as the string `"inf"`. Numbers and numeric strings are both accepted.
pub mod tolerance {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    fn from_raw<E: de::Error>(raw: Raw) -> Result<f64, E> {
        match raw {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) => super::parse_delta(&t).map_err(|_| E::custom(format!("bad tolerance {t:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_raw(Raw::deserialize(d)?)
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            struct One(f64);
            impl serde::Serialize for One {
                fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    super::serialize(&self.0, s)
                }
            }
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&One(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<super::Raw>::deserialize(d)?.into_iter().map(super::from_raw).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{expand, BasisSpec};
    use crate::dataset::Observation;
    use crate::moments::dr_moments;

    fn data(s: &[u8], x: &[f64]) -> ObservationalDataset {
        let recs = s
            .iter()
            .zip(x)
            .map(|(&si, &xi)| Observation::new(0.0, false, si == 1, vec![xi]))
            .collect();
        ObservationalDataset::new(recs, vec!["x".into()]).unwrap()
    }

    fn x_only(d: &ObservationalDataset) -> BasisMatrix {
        expand(d, &BasisSpec::new(1).intercept(false).select(vec![1]).standardized(false)).unwrap()
    }

    fn intercept(d: &ObservationalDataset) -> BasisMatrix {
        expand(d, &BasisSpec::new(0)).unwrap()
    }

    #[test]
    fn independence_examples() {
        let d = data(&[0, 0, 1, 1], &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(uf_independence(&d, &intercept(&d), 0.0).unwrap().a, vec![0.0]);
        assert_eq!(uf_independence(&d, &x_only(&d), 0.0).unwrap().a, vec![-1.0]);
        let d = data(&[0, 1, 1, 1], &[0.0; 4]);
        let m = uf_independence(&d, &intercept(&d), 0.0).unwrap();
        assert!(m.a[0].abs() < 1e-15);
    }

    #[test]
    fn independence_single_group() {
        let d = data(&[1, 1, 1], &[0.0; 3]);
        assert!(matches!(uf_independence(&d, &intercept(&d), 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn conditional_parity_examples() {
        let d = data(&[0, 0, 1, 1], &[5.0, 9.0, 7.0, 9.0]);
        // L = 1 iff x < 8; level 0 is the low bin.
        let crit = FairnessCriterion::conditional_parity(LegitimateFactor::Bins { covariate: 0, cuts: vec![8.0] }, 0, 0.0);
        assert_eq!(uf_conditional_parity(&d, &x_only(&d), &crit).unwrap().a, vec![-2.0]);

        let all = FairnessCriterion::conditional_parity(LegitimateFactor::Custom(Arc::new(|_| 7)), 7, 0.0);
        let cp = uf_conditional_parity(&d, &x_only(&d), &all).unwrap();
        let idp = uf_independence(&d, &x_only(&d), 0.0).unwrap();
        assert_eq!(cp.a, idp.a);
        assert_eq!(cp.per_record_uf, idp.per_record_uf);

        let d = data(&[0, 0, 1, 1], &[9.0, 9.0, 1.0, 9.0]);
        assert!(matches!(uf_conditional_parity(&d, &x_only(&d), &crit), Err(Error::Degenerate(_))));
    }

    #[test]
    fn positive_balance_examples() {
        let d = data(&[0, 0, 1, 1], &[0.0; 4]);
        let fit = NuisanceFit::from_predictions(vec![0.0; 4], vec![1.0, -1.0, 2.0, -3.0], vec![0.5; 4], 0.025).unwrap();
        let m = uf_positive_balance(&d, &intercept(&d), &fit, 0.0).unwrap();
        assert_eq!(m.per_record_uf, vec![4.0, 0.0, -4.0, 0.0]);
        assert_eq!(m.a, vec![0.0]);

        let policy = [true, false, false, false];
        assert_eq!(policy_unfairness(&policy, &m).unwrap(), 1.0);

        let none = NuisanceFit::from_predictions(vec![0.0; 4], vec![0.0, -1.0, 0.0, -3.0], vec![0.5; 4], 0.025).unwrap();
        assert!(matches!(uf_positive_balance(&d, &intercept(&d), &none, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn counterfactual_examples() {
        let d = data(&[0, 1, 0, 1], &[1.0, 2.0, 3.0, 5.0]);
        let b = x_only(&d);
        let iv = InfluenceValues {
            phi0: vec![0.5, 1.0, -2.0, 0.0],
            phi1: vec![1.0, 3.0, 1.0, 2.5],
        };
        let zero = FairnessCriterion::counterfactual("zero", |_, _, _| 0.0, 0.0);
        assert_eq!(uf_counterfactual_smooth(&d, &b, &iv, &zero).unwrap().a, vec![0.0]);
        let one = FairnessCriterion::counterfactual("one", |_, _, _| 1.0, 0.0);
        assert_eq!(uf_counterfactual_smooth(&d, &b, &iv, &one).unwrap().a, vec![2.75]);
        let contrast = FairnessCriterion::counterfactual("ate", |y0, y1, _| y1 - y0, 0.0);
        assert_eq!(
            uf_counterfactual_smooth(&d, &b, &iv, &contrast).unwrap().a,
            dr_moments(&iv, &b).unwrap().c
        );
        let bad = FairnessCriterion::counterfactual("log", |y0, _, _| y0.ln(), 0.0);
        assert!(matches!(
            uf_counterfactual_smooth(&d, &b, &iv, &bad),
            Err(Error::Evaluation { index: 2, .. })
        ));
    }

    #[test]
    fn policy_unfairness_examples() {
        let d = data(&[0, 1, 1, 0, 1], &[0.0; 5]);
        let m = uf_independence(&d, &intercept(&d), 0.0).unwrap();
        assert_eq!(policy_unfairness(&[false; 5], &m).unwrap(), 0.0);
        assert!(policy_unfairness(&[true; 5], &m).unwrap() < 1e-15);
        assert!(policy_unfairness(&[true; 4], &m).is_err());
    }

    #[test]
    fn flag_parsing() {
        assert_eq!(CriterionConfig::parse_flag("independence:0.5").unwrap(), CriterionConfig::Independence { delta: 0.5 });
        assert_eq!(
            CriterionConfig::parse_flag("positive-balance:inf").unwrap(),
            CriterionConfig::PositiveBalance { delta: f64::INFINITY }
        );
        assert!(CriterionConfig::parse_flag("parity").is_err());
        assert!(FairnessCriterion::independence(-1.0).validate().is_err());
    }

    #[test]
    fn config_json() {
        let json = r#"[{"kind":"independence","delta":0.0},{"kind":"positive-balance","delta":0.0},
                      {"kind":"conditional-parity","covariate":"x","cuts":[0.0],"levels":[0,1]}]"#;
        let cfgs: Vec<CriterionConfig> = serde_json::from_str(json).unwrap();
        let names = vec!["x".to_string()];
        let crits: Vec<FairnessCriterion> = cfgs.iter().flat_map(|c| c.resolve(&names).unwrap()).collect();
        assert_eq!(crits.len(), 4);
        assert_eq!(crits[3].label(), "CP[1]");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::basis::{expand, BasisSpec};
    use crate::dataset::Observation;
    use proptest::prelude::*;

    fn sample() -> impl Strategy<Value = ObservationalDataset> {
        proptest::collection::vec((any::<bool>(), -3.0..3.0f64, -3.0..3.0f64), 6..40)
            .prop_filter("both groups", |rows| rows.iter().any(|r| r.0) && rows.iter().any(|r| !r.0))
            .prop_map(|rows| {
                let recs = rows.iter().map(|&(s, x1, x2)| Observation::new(0.0, false, s, vec![x1, x2])).collect();
                ObservationalDataset::new(recs, vec!["x1".into(), "x2".into()]).unwrap()
            })
    }

    proptest! {
        #[test]
        fn independence_is_group_mean_difference(d in sample()) {
            let b = expand(&d, &BasisSpec::new(2).standardized(false)).unwrap();
            let m = uf_independence(&d, &b, 0.0).unwrap();
            for j in 0..b.k() {
                let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..b.n() {
                    if d.record(i).s { s1 += b.values[(i, j)]; n1 += 1.0 } else { s0 += b.values[(i, j)]; n0 += 1.0 }
                }
                prop_assert!((m.a[j] - (s0 / n0 - s1 / n1)).abs() < 1e-12);
            }
            let mean: f64 = m.per_record_uf.iter().sum::<f64>() / d.len() as f64;
            prop_assert!(mean.abs() < 1e-10);
        }

        #[test]
        fn swapping_groups_negates_moments(d in sample(), tau in proptest::collection::vec(-1.0..1.0f64, 40)) {
            let b = expand(&d, &BasisSpec::new(2).standardized(false)).unwrap();
            let flipped = d.flip_sensitive();
            let bf = expand(&flipped, &BasisSpec::new(2).standardized(false)).unwrap();
            // The basis contains s itself, so compare on columns that do not involve s.
            let cols: Vec<usize> = b.term_labels.iter().enumerate().filter(|(_, l)| !l.contains('s')).map(|(j, _)| j).collect();
            let a = uf_independence(&d, &b, 0.0).unwrap().a;
            let af = uf_independence(&flipped, &bf, 0.0).unwrap().a;
            for &j in &cols {
                prop_assert_eq!(a[j], -af[j]);
            }
            let n = d.len();
            let mut t: Vec<f64> = tau[..n].to_vec();
            t[0] = 1.0;
            let pos_both = (0..n).any(|i| t[i] > 0.0 && d.record(i).s) && (0..n).any(|i| t[i] > 0.0 && !d.record(i).s);
            if pos_both {
                let fit = NuisanceFit::from_predictions(vec![0.0; n], t, vec![0.5; n], 0.025).unwrap();
                let a = uf_positive_balance(&d, &b, &fit, 0.0).unwrap().a;
                let af = uf_positive_balance(&flipped, &bf, &fit, 0.0).unwrap().a;
                for &j in &cols {
                    prop_assert_eq!(a[j], -af[j]);
                }
            }
        }
    }
}
