//! The constrained least-squares program
//!
//! ```text
//! minimize    ½ βᵀQβ − cᵀβ
//! subject to  |a_jᵀβ| ≤ δ_j,   j = 1..m
//! ```
//!
//! solved by an OSQP-style ADMM iteration (over-relaxed, with the KKT matrix
//! factored once per penalty value) followed by a polishing step that solves
//! the equality-constrained KKT system on the detected active set.
//!
//! Each absolute-value constraint is carried as one two-sided row
//! `−δ_j ≤ a_jᵀβ ≤ δ_j`; its multiplier `y_j` splits into the upper face
//! `max(y_j, 0)` and the lower face `max(−y_j, 0)`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl QpProblem {
    pub fn new(q: DMatrix<f64>, c: Vec<f64>) -> Self {
        Self {
            q,
            c,
            constraints: Vec::new(),
        }
    }

    pub fn constrain(mut self, a: Vec<f64>, delta: f64) -> Self {
        self.constraints.push(Constraint { a, delta });
        self
    }

    pub fn k(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        0.5 * b.dot(&(&self.q * &b)) - b.dot(&DVector::from_column_slice(&self.c))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.q.nrows() != k || self.q.ncols() != k {
            return Err(Error::Dimension {
                expected: k,
                got: self.q.nrows(),
            });
        }
        if self.c.iter().any(|v| !v.is_finite()) || self.q.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinAlg("non-finite entries in Q or c".into()));
        }
        let scale = self.q.amax().max(1.0);
        for i in 0..k {
            for j in 0..i {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::LinAlg(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        for (j, con) in self.constraints.iter().enumerate() {
            if con.a.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    got: con.a.len(),
                });
            }
            if con.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::LinAlg(format!("constraint {j} has non-finite coefficients")));
            }
            if con.delta.is_nan() || con.delta < 0.0 {
                return Err(Error::Parameter(format!("constraint {j}: tolerance must be >= 0, got {}", con.delta)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub stat_tol: f64,
    /// Jitter relative to `trace(Q)/k`; added to the diagonal only when the
    /// smallest eigenvalue of `Q` falls below it.
    pub ridge_jitter: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            feas_tol: 1e-8,
            stat_tol: 1e-8,
            ridge_jitter: 1e-10,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub beta: Vec<f64>,
    /// `(upper, lower)` face multipliers per constraint.
    pub face_duals: Vec<(f64, f64)>,
    /// Sum of the two face multipliers.
    pub lambda: Vec<f64>,
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub jitter: f64,
    pub warnings: Vec<String>,
}

impl QpSolution {
    /// Signed multiplier `upper − lower` per constraint.
    pub fn signed_duals(&self) -> Vec<f64> {
        self.face_duals.iter().map(|(u, l)| u - l).collect()
    }
}

/// Returns `Q` (possibly with jitter on the diagonal) and the jitter used.
fn regularize(q: &DMatrix<f64>, relative: f64, warnings: &mut Vec<String>) -> (DMatrix<f64>, f64) {
    let k = q.nrows();
    if k == 0 {
        return (q.clone(), 0.0);
    }
    let threshold = relative * q.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
    let min_eig = SymmetricEigen::new(q.clone()).eigenvalues.min();
    if min_eig >= threshold {
        return (q.clone(), 0.0);
    }
    let msg = format!("Gram matrix min eigenvalue {min_eig:.3e} below {threshold:.3e}; adding ridge jitter");
    log::warn!("{msg}");
    warnings.push(msg);
    let mut out = q.clone();
    for i in 0..k {
        out[(i, i)] += threshold;
    }
    (out, threshold)
}

/// `Q⁻¹c` by Cholesky, with the same jitter rule as [`solve`].
pub fn solve_unconstrained(q: &DMatrix<f64>, c: &[f64]) -> Result<Vec<f64>> {
    if q.nrows() != c.len() || q.ncols() != c.len() {
        return Err(Error::Dimension {
            expected: c.len(),
            got: q.nrows(),
        });
    }
    let (q, _) = regularize(q, QpSettings::default().ridge_jitter, &mut Vec::new());
    let chol = Cholesky::new(q).ok_or_else(|| Error::LinAlg("Gram matrix is singular after jitter".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(c)).as_slice().to_vec())
}

struct Kkt {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Kkt {
    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn dual_residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (&self.p * x + &self.q + self.a.transpose() * y).amax()
    }

    fn primal_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.m())
            .map(|i| (ax[i] - self.hi[i]).max(self.lo[i] - ax[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn factor(kkt: &Kkt, sigma: f64, rho: &DVector<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let k = kkt.p.nrows();
    let mut m = kkt.p.clone();
    for i in 0..k {
        m[(i, i)] += sigma;
    }
    let at = kkt.a.transpose();
    let mut ra = kkt.a.clone();
    for (i, mut row) in ra.row_iter_mut().enumerate() {
        row *= rho[i];
    }
    m += &at * ra;
    Cholesky::new(m).ok_or_else(|| Error::LinAlg("ADMM system matrix is not positive definite".into()))
}

fn rho_vector(kkt: &Kkt, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        kkt.m(),
        (0..kkt.m()).map(|i| if kkt.hi[i] - kkt.lo[i] < 1e-12 { rho * 1e3 } else { rho }),
    )
}

/// Solves the equality KKT system with the rows in `active` held at the
/// given bounds. Returns `(x, y)` with `y` zero off the active set.
fn polish(kkt: &Kkt, active: &[(usize, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let k = kkt.p.nrows();
    let r = active.len();
    let mut mat = DMatrix::zeros(k + r, k + r);
    mat.view_mut((0, 0), (k, k)).copy_from(&kkt.p);
    let mut rhs = DVector::zeros(k + r);
    rhs.rows_mut(0, k).copy_from(&(-&kkt.q));
    for (t, &(i, bound)) in active.iter().enumerate() {
        for j in 0..k {
            mat[(k + t, j)] = kkt.a[(i, j)];
            mat[(j, k + t)] = kkt.a[(i, j)];
        }
        rhs[k + t] = bound;
    }
    let sol = mat.clone().lu().solve(&rhs).or_else(|| {
        let svd = mat.svd(true, true);
        svd.solve(&rhs, 1e-12).ok()
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, k).into_owned();
    let mut y = DVector::zeros(kkt.m());
    for (t, &(i, _)) in active.iter().enumerate() {
        y[i] = sol[k + t];
    }
    Some((x, y))
}

/// KKT check of a candidate; `true` if it meets the tolerances.
fn kkt_ok(kkt: &Kkt, x: &DVector<f64>, y: &DVector<f64>, settings: &QpSettings, scale: f64) -> bool {
    if kkt.primal_violation(x) > settings.feas_tol {
        return false;
    }
    if kkt.dual_residual(x, y) > settings.stat_tol * scale {
        return false;
    }
    let ax = &kkt.a * x;
    (0..kkt.m()).all(|i| {
        let gap_hi = (kkt.hi[i] - ax[i]).max(0.0);
        let gap_lo = (ax[i] - kkt.lo[i]).max(0.0);
        let up = y[i].max(0.0);
        let down = (-y[i]).max(0.0);
        let equality = kkt.hi[i] - kkt.lo[i] < 1e-12;
        equality || (up * gap_hi <= settings.feas_tol * scale && down * gap_lo <= settings.feas_tol * scale)
    })
}

fn guess_active(kkt: &Kkt, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, tol: f64) -> Vec<(usize, f64)> {
    let ax = &kkt.a * x;
    let mut out = Vec::new();
    for i in 0..kkt.m() {
        let width = 1.0 + kkt.hi[i].abs();
        if kkt.hi[i] - kkt.lo[i] < 1e-12 {
            out.push((i, kkt.hi[i]));
        } else if y[i] > tol || (z[i] >= kkt.hi[i] - tol * width && ax[i] >= kkt.hi[i] - tol * width) {
            out.push((i, kkt.hi[i]));
        } else if y[i] < -tol || (z[i] <= kkt.lo[i] + tol * width && ax[i] <= kkt.lo[i] + tol * width) {
            out.push((i, kkt.lo[i]));
        }
    }
    out
}

/// Drops infinite-tolerance constraints; they never bind.
fn finite_rows(problem: &QpProblem) -> Vec<usize> {
    (0..problem.constraints.len())
        .filter(|&j| problem.constraints[j].delta.is_finite())
        .collect()
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let k = problem.k();
    let mut warnings = Vec::new();
    let (p, jitter) = regularize(&problem.q, settings.ridge_jitter, &mut warnings);
    let rows = finite_rows(problem);
    let m = rows.len();
    let mut a = DMatrix::zeros(m, k);
    for (t, &j) in rows.iter().enumerate() {
        for l in 0..k {
            a[(t, l)] = problem.constraints[j].a[l];
        }
    }
    let hi = DVector::from_iterator(m, rows.iter().map(|&j| problem.constraints[j].delta));
    let kkt = Kkt {
        p,
        q: -DVector::from_column_slice(&problem.c),
        a,
        lo: -&hi,
        hi,
    };
    let scale = problem.c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));

    let finish = |x: DVector<f64>, y: DVector<f64>, iterations: usize, polished: bool, mut warnings: Vec<String>| {
        let ax = &kkt.a * &x;
        let mut face_duals = vec![(0.0, 0.0); problem.constraints.len()];
        let mut active_set = Vec::new();
        let mut active_rows = Vec::new();
        for (t, &j) in rows.iter().enumerate() {
            face_duals[j] = (y[t].max(0.0), (-y[t]).max(0.0));
            if ax[t].abs() >= kkt.hi[t] - 1e-7 * (1.0 + kkt.hi[t]) {
                active_set.push(j);
                active_rows.push(t);
            }
        }
        if active_rows.len() > 1 {
            let sub = kkt.a.select_rows(active_rows.iter());
            let sv = sub.singular_values();
            let (smax, smin) = (sv.max(), sv.min());
            if active_rows.len() > k || smin <= 1e-8 * smax.max(f64::MIN_POSITIVE) {
                let msg = format!("active constraint matrix is rank-deficient (rows {active_set:?})");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let beta = x.as_slice().to_vec();
        QpSolution {
            objective: problem.objective(&beta),
            lambda: face_duals.iter().map(|(u, l)| u + l).collect(),
            face_duals,
            active_set,
            iterations,
            polished,
            primal_residual: kkt.primal_violation(&x),
            dual_residual: kkt.dual_residual(&x, &y),
            jitter,
            warnings,
            beta,
        }
    };

    if m == 0 {
        let chol = Cholesky::new(kkt.p.clone()).ok_or_else(|| Error::LinAlg("Gram matrix is singular after jitter".into()))?;
        let x = chol.solve(&(-&kkt.q));
        return Ok(finish(x, DVector::zeros(0), 0, true, warnings));
    }

    let mut rho_scalar = settings.rho;
    let mut rho = rho_vector(&kkt, rho_scalar);
    let mut chol = factor(&kkt, settings.sigma, &rho)?;
    let mut x = DVector::zeros(k);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let alpha = settings.alpha;
    let at = kkt.a.transpose();
    let mut next_polish = 1e-4;
    let (mut rp, mut rd) = (f64::INFINITY, f64::INFINITY);

    for iter in 1..=settings.max_iter {
        let rhs = &x * settings.sigma - &kkt.q + &at * (rho.component_mul(&z) - &y);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &kkt.a * &x_tilde;
        let x_next = &x_tilde * alpha + &x * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let mut z_next = &z_relaxed + y.component_div(&rho);
        for i in 0..m {
            z_next[i] = z_next[i].clamp(kkt.lo[i], kkt.hi[i]);
        }
        y += rho.component_mul(&(&z_relaxed - &z_next));
        x = x_next;
        z = z_next;

        if iter % 10 != 0 && iter != settings.max_iter {
            continue;
        }
        let ax = &kkt.a * &x;
        rp = (&ax - &z).amax();
        rd = kkt.dual_residual(&x, &y);
        let prim_scale = ax.amax().max(z.amax()).max(1e-12);
        let dual_scale = (&kkt.p * &x).amax().max((&at * &y).amax()).max(kkt.q.amax()).max(1e-12);

        let coarse = rp <= next_polish * (1.0 + prim_scale) && rd <= next_polish * (1.0 + dual_scale);
        if coarse && settings.polish {
            let active = guess_active(&kkt, &x, &z, &y, next_polish.sqrt().min(1e-3));
            if let Some((xp, yp)) = polish(&kkt, &active) {
                let signs_ok = active.iter().all(|&(i, bound)| {
                    kkt.hi[i] - kkt.lo[i] < 1e-12 || (bound > 0.0 && yp[i] >= -settings.stat_tol) || (bound <= 0.0 && yp[i] <= settings.stat_tol)
                });
                if signs_ok && kkt_ok(&kkt, &xp, &yp, settings, scale) {
                    return Ok(finish(xp, yp, iter, true, warnings));
                }
            }
            next_polish = (next_polish * 0.1).max(settings.feas_tol.min(settings.stat_tol) * 0.1);
        }
        if rp <= settings.feas_tol && rd <= settings.stat_tol * scale && kkt_ok(&kkt, &x, &y, settings, scale) {
            return Ok(finish(x, y, iter, false, warnings));
        }

        // Residual balancing.
        if iter % 50 == 0 {
            let ratio = ((rp / prim_scale) / (rd / dual_scale).max(1e-30)).sqrt();
            if (ratio > 5.0 || ratio < 0.2) && ratio.is_finite() {
                rho_scalar = (rho_scalar * ratio).clamp(1e-6, 1e6);
                rho = rho_vector(&kkt, rho_scalar);
                // y keeps its meaning across the rescale.
                chol = factor(&kkt, settings.sigma, &rho)?;
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iter,
        primal_residual: rp,
        dual_residual: rd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    /// Euclidean projection onto `{β : |a_jᵀβ| ≤ δ_j}` by enumerating which
    /// faces are tight.
    fn project(v: &[f64], cons: &[Constraint]) -> Vec<f64> {
        let k = v.len();
        let m = cons.len();
        let feasible = |b: &[f64]| {
            cons.iter()
                .all(|c| c.a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs() <= c.delta + 1e-12)
        };
        if feasible(v) {
            return v.to_vec();
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for code in 0..3usize.pow(m as u32) {
            let mut faces = Vec::new();
            let mut c = code;
            for con in cons {
                match c % 3 {
                    1 => faces.push((con.a.clone(), con.delta)),
                    2 => faces.push((con.a.clone(), -con.delta)),
                    _ => {}
                }
                c /= 3;
            }
            if faces.is_empty() {
                continue;
            }
            // Minimize ‖β − v‖² subject to F β = d: β = v − Fᵀ(FFᵀ)⁻¹(Fv − d).
            let f = DMatrix::from_fn(faces.len(), k, |i, j| faces[i].0[j]);
            let d = DVector::from_iterator(faces.len(), faces.iter().map(|x| x.1));
            let vv = DVector::from_column_slice(v);
            let Some(inv) = (&f * f.transpose()).try_inverse() else { continue };
            let b = &vv - f.transpose() * (inv * (&f * &vv - d));
            let dist = (&b - &vv).norm();
            if feasible(b.as_slice()) && best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                best = Some((dist, b.as_slice().to_vec()));
            }
        }
        best.unwrap().1
    }

    fn projected_gradient(p: &QpProblem, steps: usize, step: f64) -> Vec<f64> {
        let mut b = vec![0.0; p.k()];
        for _ in 0..steps {
            let bv = DVector::from_column_slice(&b);
            let g = &p.q * &bv - DVector::from_column_slice(&p.c);
            let next: Vec<f64> = b.iter().zip(g.iter()).map(|(x, gi)| x - step * gi).collect();
            b = project(&next, &p.constraints);
        }
        b
    }

    #[test]
    fn unconstrained_examples() {
        let s = solve(&QpProblem::new(DMatrix::identity(2, 2), vec![1.0, 0.0]), &QpSettings::default()).unwrap();
        assert_eq!(s.beta, vec![1.0, 0.0]);
        assert_eq!(solve_unconstrained(&DMatrix::identity(3, 3), &[1.0, -2.0, 5.0]).unwrap(), vec![1.0, -2.0, 5.0]);
        assert_abs_diff_eq!(solve_unconstrained(&mat(&[&[2.0]]), &[4.0]).unwrap()[0], 2.0, epsilon = 1e-14);
        let b = solve_unconstrained(&mat(&[&[2.0, 1.0], &[1.0, 2.0]]), &[3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn scalar_constraint_binds() {
        let p = QpProblem::new(mat(&[&[1.0]]), vec![1.0]).constrain(vec![1.0], 0.5);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(s.beta[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.face_duals[0].0, 0.5, epsilon = 1e-9);
        assert_eq!(s.face_duals[0].1, 0.0);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn equality_constraint() {
        let p = QpProblem::new(mat(&[&[2.0, 0.5], &[0.5, 1.0]]), vec![1.0, 1.0]).constrain(vec![1.0, -1.0], 0.0);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(s.beta[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(s.beta[1], 0.5, epsilon = 1e-9);
        let oracle = projected_gradient(&p, 200_000, 1e-2);
        assert_abs_diff_eq!(s.beta[0], oracle[0], epsilon = 1e-6);
    }

    #[test]
    fn lower_face() {
        let p = QpProblem::new(mat(&[&[1.0]]), vec![-2.0]).constrain(vec![1.0], 1.0);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(s.beta[0], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.face_duals[0].1, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.lambda[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infinite_tolerance_is_ignored() {
        let p = QpProblem::new(mat(&[&[1.0]]), vec![3.0]).constrain(vec![1.0], f64::INFINITY);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(s.beta, vec![3.0]);
        assert_eq!(s.lambda, vec![0.0]);
    }

    #[test]
    fn singular_gram_gets_jitter() {
        let p = QpProblem::new(mat(&[&[1.0, 1.0], &[1.0, 1.0]]), vec![1.0, 1.0]);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert!(s.jitter > 0.0);
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn rank_deficient_active_set_warns() {
        let p = QpProblem::new(DMatrix::identity(2, 2), vec![1.0, 1.0])
            .constrain(vec![1.0, 0.0], 0.0)
            .constrain(vec![2.0, 0.0], 0.0);
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_abs_diff_eq!(s.beta[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.beta[1], 1.0, epsilon = 1e-8);
        assert!(s.warnings.iter().any(|w| w.contains("rank-deficient")));
    }

    #[test]
    fn invalid_problems() {
        let p = QpProblem::new(mat(&[&[1.0]]), vec![1.0]).constrain(vec![1.0], -0.1);
        assert!(matches!(solve(&p, &QpSettings::default()), Err(Error::Parameter(_))));
        let p = QpProblem::new(mat(&[&[1.0, 0.0], &[0.2, 1.0]]), vec![1.0, 1.0]);
        assert!(matches!(solve(&p, &QpSettings::default()), Err(Error::LinAlg(_))));
        let p = QpProblem::new(mat(&[&[1.0]]), vec![1.0]).constrain(vec![1.0, 2.0], 0.1);
        assert!(matches!(solve(&p, &QpSettings::default()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nonconvergence_reports_residuals() {
        let settings = QpSettings {
            max_iter: 10,
            polish: false,
            ..QpSettings::default()
        };
        let p = QpProblem::new(mat(&[&[2.0, 0.5], &[0.5, 1.0]]), vec![1.0, 1.0]).constrain(vec![1.0, -1.0], 0.1);
        assert!(matches!(solve(&p, &settings), Err(Error::NonConvergence { iterations: 10, .. })));
    }

    fn problem() -> impl Strategy<Value = QpProblem> {
        (1usize..=3, 0usize..=2).prop_flat_map(|(k, m)| {
            (
                proptest::collection::vec(-1.0..1.0f64, k * k),
                proptest::collection::vec(-2.0..2.0f64, k),
                proptest::collection::vec((proptest::collection::vec(-1.0..1.0f64, k), 0.0..0.5f64), m),
            )
                .prop_map(move |(mm, c, cons)| {
                    let r = DMatrix::from_row_slice(k, k, &mm);
                    let q = r.transpose() * &r + DMatrix::identity(k, k) * 0.5;
                    let q = (&q + q.transpose()) * 0.5;
                    let mut p = QpProblem::new(q, c);
                    for (a, d) in cons {
                        p = p.constrain(a, d);
                    }
                    p
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn agrees_with_projected_gradient(p in problem()) {
            let s = solve(&p, &QpSettings::default()).unwrap();
            let oracle = projected_gradient(&p, 1_000_000, 1e-3);
            for (a, b) in s.beta.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", s.beta, oracle);
            }
        }

        #[test]
        fn kkt_conditions_hold(p in problem()) {
            let s = solve(&p, &QpSettings::default()).unwrap();
            let b = DVector::from_column_slice(&s.beta);
            let mut grad = &p.q * &b - DVector::from_column_slice(&p.c);
            for (j, con) in p.constraints.iter().enumerate() {
                let a = DVector::from_column_slice(&con.a);
                let ab = a.dot(&b);
                prop_assert!(ab.abs() <= con.delta + 1e-8);
                let (up, down) = s.face_duals[j];
                prop_assert!(up >= 0.0 && down >= 0.0);
                prop_assert!(s.lambda[j] * (con.delta - ab.abs()) <= 1e-8);
                grad += a * (up - down);
            }
            prop_assert!(grad.amax() <= 1e-8 * p.c.iter().fold(1.0f64, |m, v| m.max(v.abs())));
        }

        #[test]
        fn objective_nonincreasing_in_delta(p in problem()) {
            prop_assume!(!p.constraints.is_empty());
            let mut last = f64::INFINITY;
            for step in 0..8 {
                let d = step as f64 * 0.25;
                let mut q = p.clone();
                q.constraints[0].delta = d;
                let obj = solve(&q, &QpSettings::default()).unwrap().objective;
                prop_assert!(obj <= last + 1e-9);
                last = obj;
            }
        }

        #[test]
        fn slack_constraints_recover_unconstrained(p in problem()) {
            let free = solve_unconstrained(&p.q, &p.c).unwrap();
            let mut q = p.clone();
            for con in &mut q.constraints {
                let v: f64 = con.a.iter().zip(&free).map(|(x, y)| x * y).sum();
                con.delta = v.abs() + 0.1;
            }
            let s = solve(&q, &QpSettings::default()).unwrap();
            for (a, b) in s.beta.iter().zip(&free) {
                prop_assert!((a - b).abs() < 1e-8);
            }
            prop_assert!(s.lambda.iter().all(|&l| l <= 1e-8));
        }
    }
}
