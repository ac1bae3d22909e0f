//! Built-in regression learners used for the nuisance functions.
//!
//! Every learner maps a `W` vector to a real prediction. The propensity score
//! is fit as a regression on the binary treatment and clipped afterwards.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::graded_monomials;

/// A trained predictor.
pub trait Regressor: Send + Sync + fmt::Debug {
    fn predict(&self, w: &[f64]) -> f64;
}

/// Closed-form nuisance function `(w, arm) ↦ value`, for synthetic studies
/// where the truth is known. Propensity oracles ignore `arm`.
#[derive(Clone)]
pub struct Oracle {
    pub name: String,
    pub f: Arc<dyn Fn(&[f64], bool) -> f64 + Send + Sync>,
}

impl Oracle {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64], bool) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oracle({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum LearnerKind {
    /// Ridge regression on a graded polynomial expansion of standardized
    /// inputs; the intercept is not penalized.
    PolyRidge { degree: usize, penalty: f64 },
    /// Gradient boosting of shallow regression trees under squared loss.
    BoostedTrees {
        trees: usize,
        depth: usize,
        learning_rate: f64,
        min_leaf: usize,
    },
    /// Mean of the `k` nearest training labels in standardized coordinates.
    Knn { k: usize },
    /// Training-sample mean.
    Constant,
    Oracle(Oracle),
}

#[derive(Debug, Clone)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Indices into `W` hidden from the learner (deliberate misspecification).
    pub drop: Vec<usize>,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self { kind, drop: Vec::new() }
    }

    pub fn poly_ridge(degree: usize, penalty: f64) -> Self {
        Self::new(LearnerKind::PolyRidge { degree, penalty })
    }

    pub fn boosted_stumps(trees: usize, learning_rate: f64) -> Self {
        Self::new(LearnerKind::BoostedTrees {
            trees,
            depth: 1,
            learning_rate,
            min_leaf: 5,
        })
    }

    pub fn knn(k: usize) -> Self {
        Self::new(LearnerKind::Knn { k })
    }

    pub fn constant() -> Self {
        Self::new(LearnerKind::Constant)
    }

    pub fn oracle(oracle: Oracle) -> Self {
        Self::new(LearnerKind::Oracle(oracle))
    }

    pub fn dropping(mut self, indices: Vec<usize>) -> Self {
        self.drop = indices;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        match &self.kind {
            LearnerKind::PolyRidge { degree, penalty } => {
                if *degree == 0 || !(*penalty >= 0.0) {
                    return Err("poly-ridge needs degree >= 1 and penalty >= 0".into());
                }
            }
            LearnerKind::BoostedTrees {
                trees,
                depth,
                learning_rate,
                min_leaf,
            } => {
                if *trees == 0 || *depth == 0 || !(*learning_rate > 0.0) || *min_leaf == 0 {
                    return Err("boosted trees need positive trees, depth, learning rate and leaf size".into());
                }
            }
            LearnerKind::Knn { k } => {
                if *k == 0 {
                    return Err("k-nn needs k >= 1".into());
                }
            }
            LearnerKind::Constant | LearnerKind::Oracle(_) => {}
        }
        Ok(())
    }

    /// Fewest training records the learner accepts.
    pub fn min_records(&self) -> usize {
        match &self.kind {
            LearnerKind::PolyRidge { .. } => 2,
            LearnerKind::BoostedTrees { min_leaf, .. } => 2 * min_leaf,
            LearnerKind::Knn { k } => *k,
            LearnerKind::Constant => 1,
            LearnerKind::Oracle(_) => 0,
        }
    }

    pub fn name(&self) -> String {
        let base = match &self.kind {
            LearnerKind::PolyRidge { .. } => "poly-ridge".to_string(),
            LearnerKind::BoostedTrees { .. } => "boosted-trees".into(),
            LearnerKind::Knn { .. } => "knn".into(),
            LearnerKind::Constant => "constant".into(),
            LearnerKind::Oracle(o) => format!("oracle:{}", o.name),
        };
        if self.drop.is_empty() {
            base
        } else {
            format!("{base}(drop {:?})", self.drop)
        }
    }

    /// Trains on rows `xs` (each a `W` vector) and targets `ys`. `arm` is
    /// forwarded to oracles.
    pub fn fit(&self, xs: &[Vec<f64>], ys: &[f64], arm: bool) -> Result<Box<dyn Regressor>, String> {
        self.validate()?;
        if xs.len() != ys.len() {
            return Err(format!("{} rows but {} targets", xs.len(), ys.len()));
        }
        if xs.len() < self.min_records() {
            return Err(format!(
                "{} needs at least {} training records, got {}",
                self.name(),
                self.min_records(),
                xs.len()
            ));
        }
        if let LearnerKind::Oracle(o) = &self.kind {
            return Ok(Box::new(OracleModel { oracle: o.clone(), arm }));
        }
        let keep: Option<Vec<usize>> = if self.drop.is_empty() {
            None
        } else {
            let dim = xs.first().map_or(0, Vec::len);
            Some((0..dim).filter(|j| !self.drop.contains(j)).collect())
        };
        let projected: Vec<Vec<f64>>;
        let train: &[Vec<f64>] = match &keep {
            Some(k) => {
                projected = xs.iter().map(|w| project(w, k)).collect();
                &projected
            }
            None => xs,
        };
        let inner: Box<dyn Regressor> = match &self.kind {
            LearnerKind::PolyRidge { degree, penalty } => Box::new(PolyRidge::fit(train, ys, *degree, *penalty)?),
            LearnerKind::BoostedTrees {
                trees,
                depth,
                learning_rate,
                min_leaf,
            } => Box::new(BoostedTrees::fit(train, ys, *trees, *depth, *learning_rate, *min_leaf)),
            LearnerKind::Knn { k } => Box::new(Knn::fit(train, ys, *k)),
            LearnerKind::Constant => Box::new(ConstantModel(mean(ys))),
            LearnerKind::Oracle(_) => unreachable!(),
        };
        Ok(match keep {
            Some(keep) => Box::new(Projected { keep, inner }),
            None => inner,
        })
    }
}

fn project(w: &[f64], keep: &[usize]) -> Vec<f64> {
    keep.iter().map(|&j| w[j]).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug)]
struct Projected {
    keep: Vec<usize>,
    inner: Box<dyn Regressor>,
}

impl Regressor for Projected {
    fn predict(&self, w: &[f64]) -> f64 {
        self.inner.predict(&project(w, &self.keep))
    }
}

#[derive(Debug)]
struct OracleModel {
    oracle: Oracle,
    arm: bool,
}

impl Regressor for OracleModel {
    fn predict(&self, w: &[f64]) -> f64 {
        (self.oracle.f)(w, self.arm)
    }
}

#[derive(Debug)]
pub struct ConstantModel(pub f64);

impl Regressor for ConstantModel {
    fn predict(&self, _w: &[f64]) -> f64 {
        self.0
    }
}

/// Column centering and scaling fixed on training data.
#[derive(Debug, Clone)]
struct Scaler {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn fit(xs: &[Vec<f64>], skip_binary: bool) -> Self {
        let dim = xs.first().map_or(0, Vec::len);
        let n = xs.len().max(1) as f64;
        let mut shift = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            if skip_binary && xs.iter().all(|w| w[j] == 0.0 || w[j] == 1.0) {
                continue;
            }
            let m = xs.iter().map(|w| w[j]).sum::<f64>() / n;
            let sd = (xs.iter().map(|w| (w[j] - m).powi(2)).sum::<f64>() / n).sqrt();
            shift[j] = m;
            scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
        Self { shift, scale }
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug)]
pub struct PolyRidge {
    scaler: Scaler,
    terms: Vec<Vec<u32>>,
    coef: Vec<f64>,
}

impl PolyRidge {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], degree: usize, penalty: f64) -> Result<Self, String> {
        let scaler = Scaler::fit(xs, true);
        let dim = xs.first().map_or(0, Vec::len);
        let binary: Vec<bool> = (0..dim)
            .map(|j| xs.iter().all(|w| w[j] == 0.0 || w[j] == 1.0))
            .collect();
        let terms: Vec<Vec<u32>> = graded_monomials(dim, degree, true)
            .into_iter()
            .filter(|t| t.iter().zip(&binary).all(|(&e, &b)| !b || e <= 1))
            .collect();
        let p = terms.len();
        let n = xs.len();
        let mut design = DMatrix::zeros(n, p);
        for (i, w) in xs.iter().enumerate() {
            let z = scaler.apply(w);
            for (c, t) in terms.iter().enumerate() {
                design[(i, c)] = monomial(t, &z);
            }
        }
        let y = DVector::from_column_slice(ys);
        let mut lhs = design.transpose() * &design;
        for c in 1..p {
            lhs[(c, c)] += penalty * n as f64;
        }
        let rhs = design.transpose() * y;
        let coef = match lhs.clone().cholesky() {
            Some(ch) if penalty > 0.0 => ch.solve(&rhs),
            _ => lhs
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| format!("ridge solve failed: {e}"))?,
        };
        Ok(Self {
            scaler,
            terms,
            coef: coef.iter().copied().collect(),
        })
    }
}

fn monomial(t: &[u32], z: &[f64]) -> f64 {
    t.iter().zip(z).map(|(&e, &x)| x.powi(e as i32)).product()
}

impl Regressor for PolyRidge {
    fn predict(&self, w: &[f64]) -> f64 {
        let z = self.scaler.apply(w);
        self.terms.iter().zip(&self.coef).map(|(t, c)| c * monomial(t, &z)).sum()
    }
}

#[derive(Debug)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, w: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if w[*feature] <= *threshold {
                    left.predict(w)
                } else {
                    right.predict(w)
                }
            }
        }
    }
}

#[derive(Debug)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<Node>,
}

impl BoostedTrees {
    pub fn fit(
        xs: &[Vec<f64>],
        ys: &[f64],
        n_trees: usize,
        depth: usize,
        learning_rate: f64,
        min_leaf: usize,
    ) -> Self {
        let base = mean(ys);
        let mut pred = vec![base; ys.len()];
        let dim = xs.first().map_or(0, Vec::len);
        // Pre-sort each feature once; nodes filter these orders.
        let orders: Vec<Vec<usize>> = (0..dim)
            .map(|j| {
                let mut o: Vec<usize> = (0..xs.len()).collect();
                o.sort_by(|&a, &b| xs[a][j].total_cmp(&xs[b][j]));
                o
            })
            .collect();
        let mut trees = Vec::with_capacity(n_trees);
        let mut in_node = vec![false; xs.len()];
        for _ in 0..n_trees {
            let resid: Vec<f64> = ys.iter().zip(&pred).map(|(y, p)| y - p).collect();
            let all: Vec<usize> = (0..xs.len()).collect();
            let tree = grow(xs, &resid, &orders, &all, &mut in_node, depth, min_leaf);
            for (p, w) in pred.iter_mut().zip(xs) {
                *p += learning_rate * tree.predict(w);
            }
            trees.push(tree);
        }
        Self {
            base,
            learning_rate,
            trees,
        }
    }
}

fn grow(
    xs: &[Vec<f64>],
    resid: &[f64],
    orders: &[Vec<usize>],
    members: &[usize],
    in_node: &mut [bool],
    depth: usize,
    min_leaf: usize,
) -> Node {
    let total: f64 = members.iter().map(|&i| resid[i]).sum();
    let count = members.len();
    let leaf = Node::Leaf(if count == 0 { 0.0 } else { total / count as f64 });
    if depth == 0 || count < 2 * min_leaf {
        return leaf;
    }
    for &i in members {
        in_node[i] = true;
    }
    // Maximize sum_L^2/n_L + sum_R^2/n_R over splits between distinct values.
    let parent = total * total / count as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for (j, order) in orders.iter().enumerate() {
        let mut left_sum = 0.0;
        let mut left_n = 0usize;
        let mut prev: Option<usize> = None;
        for &i in order.iter().filter(|&&i| in_node[i]) {
            if let Some(p) = prev {
                if left_n >= min_leaf && count - left_n >= min_leaf && xs[p][j] < xs[i][j] {
                    let right_sum = total - left_sum;
                    let gain = left_sum * left_sum / left_n as f64
                        + right_sum * right_sum / (count - left_n) as f64
                        - parent;
                    if best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, j, 0.5 * (xs[p][j] + xs[i][j])));
                    }
                }
            }
            left_sum += resid[i];
            left_n += 1;
            prev = Some(i);
        }
    }
    for &i in members {
        in_node[i] = false;
    }
    match best {
        Some((gain, feature, threshold)) if gain > 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| xs[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(xs, resid, orders, &l, in_node, depth - 1, min_leaf)),
                right: Box::new(grow(xs, resid, orders, &r, in_node, depth - 1, min_leaf)),
            }
        }
        _ => leaf,
    }
}

impl Regressor for BoostedTrees {
    fn predict(&self, w: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(w)).sum::<f64>()
    }
}

#[derive(Debug)]
pub struct Knn {
    scaler: Scaler,
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    k: usize,
}

impl Knn {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], k: usize) -> Self {
        let scaler = Scaler::fit(xs, false);
        Self {
            points: xs.iter().map(|w| scaler.apply(w)).collect(),
            scaler,
            labels: ys.to_vec(),
            k,
        }
    }
}

impl Regressor for Knn {
    fn predict(&self, w: &[f64]) -> f64 {
        let z = self.scaler.apply(w);
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = self.k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..k].iter().map(|&(_, i)| self.labels[i]).sum::<f64>() / k as f64
    }
}
