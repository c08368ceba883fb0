//! Ground state of a tridiagonal Schrödinger-type matrix.
//!
//! The matrix has negative off-diagonals with `A[i][i+1]·A[i+1][i] > 0`, so it
//! is similar to a symmetric matrix and its smallest eigenvalue has a positive
//! eigenvector. The eigenvalue comes from Sturm-count bisection and the vector
//! from a twisted factorization, which returns every component with full
//! relative accuracy even when the vector spans hundreds of orders of
//! magnitude. Components are returned as logarithms.

use crate::tridiag::Tridiagonal;

const BISECTION_CAP: usize = 300;

/// Smallest eigenvalue and the logarithm of its positive eigenvector.
/// Returns `None` when an off-diagonal pair has the wrong sign.
pub(crate) fn ground_state(a: &Tridiagonal) -> Option<(f64, Vec<f64>)> {
    let n = a.diag.len();
    if n == 1 {
        return Some((a.diag[0], vec![0.0]));
    }
    // Symmetrized off-diagonals e[i] between i and i+1, and the log of the
    // diagonal similarity P with S = P A P⁻¹.
    let mut e = vec![0.0; n - 1];
    let mut log_p = vec![0.0; n];
    for i in 0..n - 1 {
        let (up, down) = (a.sup[i], a.sub[i + 1]);
        if !(up < 0.0 && down < 0.0) {
            return None;
        }
        e[i] = -(up * down).sqrt();
        log_p[i + 1] = log_p[i] - 0.5 * (down / up).ln();
    }
    let d = &a.diag;

    // Gershgorin lower bound; the smallest diagonal entry is an upper bound.
    let mut lo = f64::INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..n {
        let left = if i > 0 { e[i - 1].abs() } else { 0.0 };
        let right = if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - left - right);
        hi = hi.min(d[i]);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    // Invariant: no eigenvalue below lo, at least one at or below hi.
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if negative_pivots(d, &e, mid) == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = lo;

    // A - λ is positive (semi)definite at λ = lo, so both one-sided LDLᵀ
    // factorizations have positive pivots.
    let mut top = vec![0.0; n];
    let mut bottom = vec![0.0; n];
    top[0] = d[0] - lambda;
    for i in 1..n {
        top[i] = d[i] - lambda - e[i - 1] * e[i - 1] / top[i - 1];
    }
    bottom[n - 1] = d[n - 1] - lambda;
    for i in (0..n - 1).rev() {
        bottom[i] = d[i] - lambda - e[i] * e[i] / bottom[i + 1];
    }
    let twist = (0..n)
        .map(|k| (k, (top[k] + bottom[k] - (d[k] - lambda)).abs()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(k, _)| k)?;

    let mut log_z = vec![0.0; n];
    for i in (0..twist).rev() {
        log_z[i] = log_z[i + 1] + (-e[i] / top[i]).ln();
    }
    for i in twist + 1..n {
        log_z[i] = log_z[i - 1] + (-e[i - 1] / bottom[i]).ln();
    }
    let log_w: Vec<f64> = log_z.iter().zip(&log_p).map(|(z, p)| z - p).collect();
    if lambda.is_finite() && log_w.iter().all(|v| v.is_finite()) {
        Some((lambda, log_w))
    } else {
        None
    }
}

/// Number of eigenvalues of the symmetric tridiagonal `(d, e)` below `mu`.
fn negative_pivots(d: &[f64], e: &[f64], mu: f64) -> usize {
    let tiny = f64::MIN_POSITIVE;
    let mut count = 0;
    let mut q = d[0] - mu;
    for i in 0..d.len() {
        if i > 0 {
            q = d[i] - mu - e[i - 1] * e[i - 1] / q;
        }
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}
