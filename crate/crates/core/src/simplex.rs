//! Weight vectors on the probability simplex and a least-squares solver
//! constrained to it.
//!
//! The solver minimises
//!
//! ```text
//!   sum_r rho_r (b_r - (A w)_r)^2 + ridge * |w|^2   s.t.  w >= 0, sum(w) = 1
//! ```
//!
//! with accelerated projected gradient (adaptive restart), then refines the
//! result with a primal active-set pass on the identified support. The
//! refinement brings strictly convex problems to machine precision; when the
//! reduced system is singular the projected-gradient answer is kept.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Negative weights down to this value are treated as rounding and clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of the weight sum from one.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Relative singular value below which the refinement treats directions as flat.
const KKT_RANK_TOLERANCE: f64 = 1e-10;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates `weights`, clamping tiny negatives to zero.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        for w in weights.iter_mut() {
            if !w.is_finite() || *w < -NEGATIVE_TOLERANCE {
                return Err(Error::InvalidWeights(format!("entry {w} outside [0, 1]")));
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Clamps negatives and rescales so the entries sum to one exactly
    /// (up to rounding). Used on solver output only.
    fn from_solver(mut weights: Vec<f64>) -> Self {
        for w in weights.iter_mut() {
            if *w < 0.0 || !w.is_finite() {
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            for w in weights.iter_mut() {
                *w /= sum;
            }
            Self(weights)
        } else {
            Self::uniform(weights.len())
        }
    }
}

impl core::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // guard against total underflow of the support
    if out.iter().all(|&x| x == 0.0) {
        out = vec![0.0; n];
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        out[imax] = 1.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Stop when the objective changes by less than this between iterations.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Run the active-set refinement after projected gradient.
    pub refine: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Constrained least-squares problem on the simplex.
#[derive(Debug, Clone)]
pub struct SimplexLsq<'a> {
    pub design: &'a DMatrix<f64>,
    pub target: &'a DVector<f64>,
    pub row_weights: Option<&'a [f64]>,
    pub ridge: f64,
}

impl SimplexLsq<'_> {
    /// Exact objective evaluated from residuals.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let a = self.design;
        let mut total = 0.0;
        for r in 0..a.nrows() {
            let mut fit = 0.0;
            for (j, wj) in w.iter().enumerate() {
                fit += a[(r, j)] * wj;
            }
            let res = self.target[r] - fit;
            let rho = self.row_weights.map_or(1.0, |rw| rw[r]);
            total += rho * res * res;
        }
        total + self.ridge * w.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn solve(&self, opts: &QpOptions) -> QpSolution {
        let n = self.design.ncols();
        assert!(n > 0, "simplex problem needs at least one column");
        let (h, g) = self.normal_form();
        let quad = Quadratic { h: &h, g: &g };

        if n == 1 {
            let w = vec![1.0];
            return QpSolution {
                objective: self.objective(&w),
                weights: WeightVector(w),
                iterations: 0,
                converged: true,
            };
        }

        let (pg, iterations, converged) = projected_gradient(&quad, opts);
        let mut best = pg;
        let best_obj = self.objective(&best);
        if opts.refine {
            if let Some(refined) = active_set_refine(&quad, &best) {
                let obj = self.objective(&refined);
                // the refined point is exact; allow for rounding in the comparison
                if obj <= best_obj + 1e-12 * (1.0 + best_obj) {
                    best = refined;
                }
            }
        }
        let weights = WeightVector::from_solver(best);
        let objective = self.objective(weights.as_slice());
        QpSolution {
            weights,
            objective,
            iterations,
            converged,
        }
    }

    /// Whether the quadratic form is numerically singular, in which case the
    /// minimiser may not be unique and the solver output is one of several.
    pub fn is_singular(&self) -> bool {
        let (h, _) = self.normal_form();
        is_singular(&h)
    }

    /// Hessian `H` and linear term `g` of `0.5 w'Hw - g'w`.
    fn normal_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.design;
        let (m, n) = a.shape();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for r in 0..m {
            let rho = self.row_weights.map_or(1.0, |rw| rw[r]);
            if rho == 0.0 {
                continue;
            }
            for i in 0..n {
                let ai = a[(r, i)] * rho;
                g[i] += 2.0 * ai * self.target[r];
                for j in i..n {
                    h[(i, j)] += 2.0 * ai * a[(r, j)];
                }
            }
        }
        for i in 0..n {
            h[(i, i)] += 2.0 * self.ridge;
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        (h, g)
    }
}

struct Quadratic<'a> {
    h: &'a DMatrix<f64>,
    g: &'a DVector<f64>,
}

impl Quadratic<'_> {
    fn value(&self, w: &[f64]) -> f64 {
        let n = w.len();
        let mut v = 0.0;
        for i in 0..n {
            let mut hw = 0.0;
            for j in 0..n {
                hw += self.h[(i, j)] * w[j];
            }
            v += w[i] * (0.5 * hw - self.g[i]);
        }
        v
    }

    fn gradient(&self, w: &[f64], out: &mut [f64]) {
        let n = w.len();
        for i in 0..n {
            let mut hw = 0.0;
            for j in 0..n {
                hw += self.h[(i, j)] * w[j];
            }
            out[i] = hw - self.g[i];
        }
    }
}

fn is_singular(h: &DMatrix<f64>) -> bool {
    let eig = h.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    max == 0.0 || min <= 1e-10 * max
}

fn projected_gradient(q: &Quadratic<'_>, opts: &QpOptions) -> (Vec<f64>, usize, bool) {
    let n = q.g.len();
    let lipschitz = libm::sqrt(q.h.iter().map(|x| x * x).sum::<f64>());
    let mut w = vec![1.0 / n as f64; n];
    if lipschitz == 0.0 {
        return (w, 0, true);
    }
    let step = 1.0 / lipschitz;
    let mut y = w.clone();
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut momentum = 1.0;
    let mut f_prev = q.value(&w);

    for it in 0..opts.max_iterations {
        q.gradient(&y, &mut grad);
        for i in 0..n {
            trial[i] = y[i] - step * grad[i];
        }
        let next = project_to_simplex(&trial);
        let f_next = q.value(&next);
        if f_next > f_prev {
            // adaptive restart: drop momentum and take a plain step from w
            if momentum > 1.0 {
                momentum = 1.0;
                y.copy_from_slice(&w);
                continue;
            }
            return (w, it + 1, true);
        }
        let momentum_next = (1.0 + libm::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
        let beta = (momentum - 1.0) / momentum_next;
        for i in 0..n {
            y[i] = next[i] + beta * (next[i] - w[i]);
        }
        let change = f_prev - f_next;
        w = next;
        momentum = momentum_next;
        f_prev = f_next;
        if change < opts.tolerance * f_prev.abs().max(1.0) && it > 0 {
            return (w, it + 1, true);
        }
    }
    (w, opts.max_iterations, false)
}

/// Primal active-set method started from a feasible point.
///
/// Returns `None` when an equality-constrained subproblem is singular.
fn active_set_refine(q: &Quadratic<'_>, start: &[f64]) -> Option<Vec<f64>> {
    let n = start.len();
    let mut w = start.to_vec();
    let mut free: Vec<bool> = w.iter().map(|&x| x > 0.0).collect();
    let mut grad = vec![0.0; n];
    let scale = q.h.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let dual_tol = 1e-12 * scale;

    for _ in 0..(4 * n + 20) {
        let support: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let (x, nu) = solve_equality_qp(q, &support)?;

        if x.iter().all(|&v| v >= 0.0) {
            for i in 0..n {
                w[i] = 0.0;
            }
            for (k, &i) in support.iter().enumerate() {
                w[i] = x[k];
            }
            q.gradient(&w, &mut grad);
            let mut worst: Option<(usize, f64)> = None;
            for i in (0..n).filter(|&i| !free[i]) {
                let eta = grad[i] + nu;
                if eta < -dual_tol && worst.is_none_or(|(_, e)| eta < e) {
                    worst = Some((i, eta));
                }
            }
            match worst {
                Some((i, _)) => free[i] = true,
                None => return Some(w),
            }
        } else {
            // step towards x until the first free weight hits zero
            let mut alpha = 1.0;
            let mut blocking = None;
            for (k, &i) in support.iter().enumerate() {
                if x[k] < 0.0 {
                    let denom = w[i] - x[k];
                    let ratio = if denom > 0.0 { w[i] / denom } else { 0.0 };
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            let blocking = blocking?;
            for (k, &i) in support.iter().enumerate() {
                w[i] += alpha * (x[k] - w[i]);
            }
            w[blocking] = 0.0;
            free[blocking] = false;
            if free.iter().all(|f| !f) {
                return None;
            }
        }
    }
    None
}

/// Solves `min 0.5 x'H_SS x - g_S'x  s.t. sum(x) = 1` on the support `S`.
///
/// The KKT system is solved by a truncated eigendecomposition, so a singular `H_SS` yields
/// the minimum-norm minimiser instead of a failure.
fn solve_equality_qp(q: &Quadratic<'_>, support: &[usize]) -> Option<(Vec<f64>, f64)> {
    let m = support.len();
    let c = support
        .iter()
        .flat_map(|&i| support.iter().map(move |&j| (i, j)))
        .fold(0.0f64, |acc, (i, j)| acc.max(q.h[(i, j)].abs()));
    let c = if c > 0.0 { c } else { 1.0 };
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = q.h[(i, j)];
        }
        kkt[(a, m)] = c;
        kkt[(m, a)] = c;
        rhs[a] = q.g[i];
    }
    rhs[m] = c;
    let eig = kkt.clone().symmetric_eigen();
    let cutoff = KKT_RANK_TOLERANCE * eig.eigenvalues.amax();
    let mut coef = eig.eigenvectors.tr_mul(&rhs);
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        coef[k] = if lambda.abs() > cutoff { coef[k] / lambda } else { 0.0 };
    }
    let sol = &eig.eigenvectors * coef;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // an inconsistent system means the truncation threw away real information
    let residual = (&kkt * &sol - &rhs).amax();
    let scale = c * sol.amax().max(1.0);
    if residual > 1e-8 * scale {
        return None;
    }
    let x: Vec<f64> = sol.iter().take(m).copied().collect();
    Some((x, c * sol[m]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(a: &[&[f64]], b: &[f64]) -> QpSolution {
        let rows = a.len();
        let cols = a[0].len();
        let design = DMatrix::from_fn(rows, cols, |r, c| a[r][c]);
        let target = DVector::from_column_slice(b);
        SimplexLsq {
            design: &design,
            target: &target,
            row_weights: None,
            ridge: 0.0,
        }
        .solve(&QpOptions::default())
    }

    #[test]
    fn projection_of_interior_point_is_identity() {
        let p = project_to_simplex(&[0.2, 0.3, 0.5]);
        for (x, y) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_known_values() {
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[1.0, 1.0, -5.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn midpoint_of_two_donors() {
        let s = solve(&[&[1.0, 3.0]], &[2.0]);
        assert!((s.weights[0] - 0.5).abs() < 1e-12);
        assert!((s.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_midpoint_two_predictors() {
        let s = solve(&[&[1.0, 3.0], &[2.0, 4.0]], &[2.0, 3.0]);
        assert!((s.weights[0] - 0.5).abs() < 1e-12);
        assert!(s.objective < 1e-20);
    }

    #[test]
    fn perfect_fit_vertex() {
        let s = solve(&[&[1.0, 5.0, 9.0], &[4.0, 2.0, 0.0], &[3.0, 3.0, 7.0]], &[5.0, 2.0, 3.0]);
        assert!((s.weights[1] - 1.0).abs() < 1e-12);
        assert!(s.weights[0].abs() < 1e-12 && s.weights[2].abs() < 1e-12);
    }

    #[test]
    fn ridge_only_gives_uniform() {
        let design = DMatrix::zeros(4, 3);
        let target = DVector::zeros(4);
        let s = SimplexLsq {
            design: &design,
            target: &target,
            row_weights: None,
            ridge: 1e-12,
        }
        .solve(&QpOptions::default());
        for w in s.weights.iter() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert_eq!(WeightVector::new(vec![1.0, -1e-13]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(WeightVector::new(vec![1.0, -1e-6]).is_err());
        assert!(WeightVector::new(vec![0.5, 0.4]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
    }
}
