//! Tridiagonal direct solver with row pivoting.

/// Tridiagonal matrix stored by diagonals: `sub[i]` multiplies `x[i-1]` in row
/// `i` (`sub[0]` unused), `diag[i]` multiplies `x[i]`, `sup[i]` multiplies
/// `x[i+1]` (`sup[n-1]` unused).
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

/// One row of the upper factor: entries at columns `i`, `i+1`, `i+2` and the
/// right-hand side.
#[derive(Debug, Clone, Copy)]
struct URow {
    d: f64,
    s1: f64,
    s2: f64,
    f: f64,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
        }
    }

    /// Gaussian elimination with partial pivoting between neighbouring rows.
    /// Returns `None` on a zero pivot.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.diag.len();
        let mut rows = Vec::with_capacity(n.saturating_sub(1));
        let mut cur = URow {
            d: self.diag[0],
            s1: if n > 1 { self.sup[0] } else { 0.0 },
            s2: 0.0,
            f: rhs[0],
        };
        for i in 0..n - 1 {
            let mut next = URow {
                d: self.sub[i + 1],
                s1: self.diag[i + 1],
                s2: if i + 2 < n { self.sup[i + 1] } else { 0.0 },
                f: rhs[i + 1],
            };
            if next.d.abs() > cur.d.abs() {
                std::mem::swap(&mut cur, &mut next);
            }
            if cur.d == 0.0 || !cur.d.is_finite() {
                return None;
            }
            let m = next.d / cur.d;
            let reduced = URow {
                d: next.s1 - m * cur.s1,
                s1: next.s2 - m * cur.s2,
                s2: 0.0,
                f: next.f - m * cur.f,
            };
            rows.push(cur);
            cur = reduced;
        }
        if cur.d == 0.0 || !cur.d.is_finite() {
            return None;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = cur.f / cur.d;
        for i in (0..n - 1).rev() {
            let row = &rows[i];
            let x2 = if i + 2 < n { x[i + 2] } else { 0.0 };
            x[i] = (row.f - row.s1 * x[i + 1] - row.s2 * x2) / row.d;
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(t: &Tridiagonal, x: &[f64], rhs: &[f64]) -> f64 {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = t.diag[i] * x[i] - rhs[i];
                if i > 0 {
                    v += t.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += t.sup[i] * x[i + 1];
                }
                v.abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn thomas_matches_dense_product() {
        let n = 7;
        let mut t = Tridiagonal::zeros(n);
        for i in 0..n {
            t.diag[i] = 4.0 + i as f64 * 0.1;
            t.sub[i] = -1.0 - 0.05 * i as f64;
            t.sup[i] = -1.2;
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = t.solve(&rhs).unwrap();
        assert!(residual(&t, &x, &rhs) < 1e-13);
    }

    #[test]
    fn pivoting_handles_small_diagonal() {
        // Convection-dominated rows whose unpivoted elimination breaks down.
        let n = 6;
        let mut t = Tridiagonal::zeros(n);
        for i in 0..n {
            t.diag[i] = 1e-14;
            t.sub[i] = -1.0 - 0.5 * i as f64;
            t.sup[i] = 2.0;
        }
        let rhs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let x = t.solve(&rhs).unwrap();
        assert!(residual(&t, &x, &rhs) < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut t = Tridiagonal::zeros(3);
        t.diag = vec![1.0, 1.0, 1.0];
        t.sub = vec![0.0, 1.0, 1.0];
        t.sup = vec![1.0, 1.0, 0.0];
        // Rows 0 and 1 of [[1,1,0],[1,1,1],[0,1,1]] leave a zero pivot only if
        // the system is singular; this one is not.
        assert!(t.solve(&[1.0, 2.0, 3.0]).is_some());
        let z = Tridiagonal::zeros(3);
        assert!(z.solve(&[1.0, 0.0, 0.0]).is_none());
    }
}
