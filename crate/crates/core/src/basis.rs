//! Polynomial basis expansion `b(W)` and the empirical Gram matrix.
//!
//! Columns are all monomials of total degree `≤ degree` in the selected
//! entries of `W = (S, X₁, …, X_d)`, in graded lexicographic order: by total
//! degree first, then lexicographically with higher powers of earlier
//! variables first. Binary variables satisfy `v² = v`, so by default their
//! higher powers are dropped to keep the Gram matrix nonsingular.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisSpec {
    /// Maximum total degree; 0 gives the intercept-only basis.
    pub degree: usize,
    pub include_intercept: bool,
    /// Indices into `W` (0 is `S`, `j ≥ 1` is `X_j`). `None` selects all of `W`.
    pub selector: Option<Vec<usize>>,
    /// Center and scale continuous variables by training-sample moments.
    pub standardize: bool,
    /// Drop monomials in which a binary variable appears with power > 1.
    pub collapse_binary: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            include_intercept: true,
            selector: None,
            standardize: true,
            collapse_binary: true,
        }
    }
}

impl BasisSpec {
    pub fn new(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    pub fn intercept(mut self, yes: bool) -> Self {
        self.include_intercept = yes;
        self
    }

    pub fn select(mut self, selector: Vec<usize>) -> Self {
        self.selector = Some(selector);
        self
    }

    pub fn standardized(mut self, yes: bool) -> Self {
        self.standardize = yes;
        self
    }

    pub fn collapse_binary(mut self, yes: bool) -> Self {
        self.collapse_binary = yes;
        self
    }

    fn resolve_selector(&self, w_dim: usize) -> Result<Vec<usize>> {
        let sel = match &self.selector {
            Some(s) => s.clone(),
            None => (0..w_dim).collect(),
        };
        if sel.is_empty() {
            return Err(Error::Parameter("basis selector is empty".into()));
        }
        if let Some(&bad) = sel.iter().find(|&&j| j >= w_dim) {
            return Err(Error::Parameter(format!(
                "basis selector index {bad} out of range for W of length {w_dim}"
            )));
        }
        if self.degree == 0 && !self.include_intercept {
            return Err(Error::Parameter("a degree-0 basis needs the intercept".into()));
        }
        Ok(sel)
    }
}

/// Exponent vectors of total degree exactly `deg` over `m` variables, in
/// lexicographic order with larger leading exponents first.
fn monomials_of_degree(m: usize, deg: usize) -> Vec<Vec<u32>> {
    fn rec(m: usize, deg: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == m {
            prefix.push(deg as u32);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=deg).rev() {
            prefix.push(e as u32);
            rec(m, deg - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, deg, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Graded-lex exponent list up to `degree`.
pub fn graded_monomials(m: usize, degree: usize, intercept: bool) -> Vec<Vec<u32>> {
    let start = if intercept { 0 } else { 1 };
    (start..=degree).flat_map(|d| monomials_of_degree(m, d)).collect()
}

/// A basis whose variable scaling has been fixed on a training sample and
/// can be evaluated at any `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBasis {
    pub spec: BasisSpec,
    pub selector: Vec<usize>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub binary: Vec<bool>,
    pub terms: Vec<Vec<u32>>,
    pub term_labels: Vec<String>,
    pub w_dim: usize,
}

impl FittedBasis {
    /// Fixes selector, standardization and binary detection on `data`.
    pub fn fit(data: &ObservationalDataset, spec: &BasisSpec) -> Result<Self> {
        let w_dim = data.dim() + 1;
        let selector = spec.resolve_selector(w_dim)?;
        let names = data.w_names();
        let rows = data.w_rows();
        let n = rows.len().max(1) as f64;
        let mut shift = Vec::with_capacity(selector.len());
        let mut scale = Vec::with_capacity(selector.len());
        let mut binary = Vec::with_capacity(selector.len());
        for &j in &selector {
            let is_binary = j == 0 || rows.iter().all(|w| w[j] == 0.0 || w[j] == 1.0);
            binary.push(is_binary);
            if spec.standardize && !is_binary {
                let mean = rows.iter().map(|w| w[j]).sum::<f64>() / n;
                let var = rows.iter().map(|w| (w[j] - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                shift.push(mean);
                scale.push(if sd > 0.0 { sd } else { 1.0 });
            } else {
                shift.push(0.0);
                scale.push(1.0);
            }
        }
        let terms: Vec<Vec<u32>> = graded_monomials(selector.len(), spec.degree, spec.include_intercept)
            .into_iter()
            .filter(|t| {
                !spec.collapse_binary || t.iter().zip(&binary).all(|(&e, &b)| !b || e <= 1)
            })
            .collect();
        let var_names: Vec<&str> = selector.iter().map(|&j| names[j].as_str()).collect();
        let term_labels = terms.iter().map(|t| label(t, &var_names)).collect();
        Ok(Self {
            spec: spec.clone(),
            selector,
            shift,
            scale,
            binary,
            terms,
            term_labels,
            w_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluates `b(w)` for one `W` vector.
    pub fn evaluate(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.w_dim {
            return Err(Error::Dimension {
                expected: self.w_dim,
                got: w.len(),
            });
        }
        Ok(self.evaluate_unchecked(w))
    }

    fn evaluate_unchecked(&self, w: &[f64]) -> Vec<f64> {
        let v: Vec<f64> = self
            .selector
            .iter()
            .enumerate()
            .map(|(i, &j)| (w[j] - self.shift[i]) / self.scale[i])
            .collect();
        self.terms
            .iter()
            .map(|t| t.iter().zip(&v).map(|(&e, &x)| x.powi(e as i32)).product())
            .collect()
    }

    /// Builds the `n × k` design and Gram matrix for `data`.
    pub fn apply(&self, data: &ObservationalDataset) -> Result<BasisMatrix> {
        if data.dim() + 1 != self.w_dim {
            return Err(Error::Dimension {
                expected: self.w_dim - 1,
                got: data.dim(),
            });
        }
        let n = data.len();
        let k = self.len();
        let mut values = DMatrix::zeros(n, k);
        for (i, r) in data.records().iter().enumerate() {
            for (c, v) in self.evaluate_unchecked(&r.w()).into_iter().enumerate() {
                values[(i, c)] = v;
            }
        }
        let gram = gram_of(&values);
        let mut warnings = Vec::new();
        if k > n {
            let msg = format!("basis has {k} columns but only {n} records; Gram matrix is singular");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(BasisMatrix {
            values,
            gram,
            term_labels: self.term_labels.clone(),
            fitted: self.clone(),
            warnings,
        })
    }
}

fn label(t: &[u32], names: &[&str]) -> String {
    let parts: Vec<String> = t
        .iter()
        .zip(names)
        .filter(|(&e, _)| e > 0)
        .map(|(&e, n)| if e == 1 { n.to_string() } else { format!("{n}^{e}") })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// `valuesᵀ values / n`, symmetrized.
pub fn gram_of(values: &DMatrix<f64>) -> DMatrix<f64> {
    let n = values.nrows().max(1) as f64;
    let g = values.transpose() * values / n;
    (&g + g.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct BasisMatrix {
    /// Row `i` is `b(W_i)ᵀ`.
    pub values: DMatrix<f64>,
    /// `Pₙ[b bᵀ]`.
    pub gram: DMatrix<f64>,
    pub term_labels: Vec<String>,
    pub fitted: FittedBasis,
    pub warnings: Vec<String>,
}

impl BasisMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }
}

/// Fits scaling on `data` and expands it.
pub fn expand(data: &ObservationalDataset, spec: &BasisSpec) -> Result<BasisMatrix> {
    FittedBasis::fit(data, spec)?.apply(data)
}

/// Positive-definiteness check of the Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1Diagnostic {
    pub min_eigenvalue: f64,
    pub tol: f64,
    pub satisfied: bool,
}

pub fn check_a1(gram: &DMatrix<f64>, tol: f64) -> A1Diagnostic {
    let min_eigenvalue = if gram.is_empty() {
        0.0
    } else {
        SymmetricEigen::new(gram.clone()).eigenvalues.min()
    };
    A1Diagnostic {
        min_eigenvalue,
        tol,
        satisfied: min_eigenvalue >= tol,
    }
}
