//! Small dense solvers: nonnegative least squares, bound-constrained convex
//! QP, minimum-norm points of convex hulls and SVD least squares.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a x = b` through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * smax * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Numerical rank of `a` using the usual `max(m, n) * eps * sigma_max` cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let cut = smax * 1e-10;
    sv.iter().filter(|&&s| s > cut).count()
}

fn submatrix_cols(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

/// Lawson–Hanson nonnegative least squares: minimizes `‖a x − b‖` over `x ≥ 0`.
///
/// Returns the minimizer and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return (x, b.norm());
    }
    let scale = a.abs().max().max(1.0) * b.amax().max(1.0);
    let tol = 10.0 * f64::EPSILON * scale * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..(3 * n + 10) {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sp = lstsq(&submatrix_cols(a, &idx), b);
            let mut s = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                s[i] = sp[k];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = 1.0_f64;
            for &i in &idx {
                if s[i] <= 0.0 {
                    let d = x[i] - s[i];
                    if d > 0.0 {
                        alpha = alpha.min(x[i] / d);
                    }
                }
            }
            x += (s - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let r = (a * &x - b).norm();
    (x, r)
}

/// Active-set solver for `min ½ μᵀ q μ + rᵀ μ` subject to `μ ≥ 0`, with `q`
/// symmetric positive semidefinite.
pub fn bound_qp(q: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let n = r.len();
    let mut mu = DVector::zeros(n);
    if n == 0 {
        return mu;
    }
    let scale = q.abs().max().max(1.0) * r.amax().max(1.0);
    let tol = 100.0 * f64::EPSILON * scale * n as f64;
    let mut passive = vec![false; n];
    for _ in 0..(3 * n + 10) {
        let w = -(q * &mu + r);
        let candidate = (0..n)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..(3 * n + 10) {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let qpp = DMatrix::from_fn(idx.len(), idx.len(), |a, b| q[(idx[a], idx[b])]);
            let rp = DVector::from_fn(idx.len(), |a, _| -r[idx[a]]);
            let sp = lstsq(&qpp, &rp);
            let mut s = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                s[i] = sp[k];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                mu = s;
                break;
            }
            let mut alpha = 1.0_f64;
            for &i in &idx {
                if s[i] <= 0.0 {
                    let d = mu[i] - s[i];
                    if d > 0.0 {
                        alpha = alpha.min(mu[i] / d);
                    }
                }
            }
            mu += (s - &mu) * alpha;
            for &i in &idx {
                if mu[i] <= tol {
                    mu[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    mu
}

/// Wolfe's algorithm for the point of minimum norm in the convex hull of
/// `points`. Returns the barycentric weights and the point itself.
pub fn min_norm_in_hull(points: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let count = points.len();
    assert!(count > 0, "convex hull of an empty set");
    let dim = points[0].len();
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;

    let start = (0..count)
        .min_by(|&i, &j| points[i].norm_squared().total_cmp(&points[j].norm_squared()))
        .unwrap_or(0);
    let mut support = vec![start];
    let mut weights = vec![1.0];

    let combine = |support: &[usize], weights: &[f64]| -> DVector<f64> {
        let mut x = DVector::zeros(dim);
        for (k, &i) in support.iter().enumerate() {
            x += &points[i] * weights[k];
        }
        x
    };

    for _ in 0..(10 * count + 10) {
        let x = combine(&support, &weights);
        let xx = x.norm_squared();
        let j = (0..count)
            .min_by(|&i, &k| x.dot(&points[i]).total_cmp(&x.dot(&points[k])))
            .unwrap_or(0);
        if x.dot(&points[j]) > xx - tol || support.contains(&j) {
            break;
        }
        support.push(j);
        weights.push(0.0);
        loop {
            let s = support.len();
            let mut kkt = DMatrix::zeros(s + 1, s + 1);
            for a in 0..s {
                for b in 0..s {
                    kkt[(a, b)] = points[support[a]].dot(&points[support[b]]);
                }
                kkt[(a, s)] = 1.0;
                kkt[(s, a)] = 1.0;
            }
            let mut rhs = DVector::zeros(s + 1);
            rhs[s] = 1.0;
            let sol = lstsq(&kkt, &rhs);
            let alpha: Vec<f64> = (0..s).map(|a| sol[a]).collect();
            if alpha.iter().all(|&a| a > 1e-14) {
                weights = alpha;
                break;
            }
            let mut theta = 1.0_f64;
            for a in 0..s {
                if alpha[a] <= 1e-14 {
                    let d = weights[a] - alpha[a];
                    if d > 0.0 {
                        theta = theta.min(weights[a] / d);
                    }
                }
            }
            for a in 0..s {
                weights[a] += theta * (alpha[a] - weights[a]);
            }
            let mut keep_s = Vec::new();
            let mut keep_w = Vec::new();
            for a in 0..s {
                if weights[a] > 1e-14 {
                    keep_s.push(support[a]);
                    keep_w.push(weights[a]);
                }
            }
            if keep_s.is_empty() {
                keep_s.push(support[0]);
                keep_w.push(1.0);
            }
            let total: f64 = keep_w.iter().sum();
            support = keep_s;
            weights = keep_w.iter().map(|w| w / total).collect();
            if support.len() == 1 {
                break;
            }
        }
    }
    let x = combine(&support, &weights);
    let mut full = DVector::zeros(count);
    for (k, &i) in support.iter().enumerate() {
        full[i] = weights[k];
    }
    (full, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let (x, r) = nnls(&a, &b);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
        assert!(r < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_direction() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 4.0]);
        let (x, r) = nnls(&a, &b);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 4.0).abs() < 1e-12);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_qp_matches_clamped_unconstrained_minimizer() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let r = DVector::from_vec(vec![-4.0, 3.0]);
        let mu = bound_qp(&q, &r);
        assert!((mu[0] - 2.0).abs() < 1e-12);
        assert_eq!(mu[1], 0.0);
    }

    #[test]
    fn wolfe_on_unit_vectors() {
        let pts = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        let (w, x) = min_norm_in_hull(&pts);
        assert!((x.norm() - 0.5_f64.sqrt()).abs() < 1e-12);
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wolfe_detects_origin_between_opposites() {
        let pts = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-1.0, 0.0]),
        ];
        let (_, x) = min_norm_in_hull(&pts);
        assert!(x.norm() < 1e-12);
    }

    #[test]
    fn rank_of_dependent_columns() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(rank(&a), 1);
    }
}
