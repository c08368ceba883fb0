//! Scalar root finding on a maintained sign-change bracket.

/// Why a bracketed root search stopped without converging.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RootFailure {
    NoSignChange {
        lo: f64,
        f_lo: f64,
        hi: f64,
        f_hi: f64,
    },
    MaxIter {
        x: f64,
        fx: f64,
    },
    NotFinite {
        x: f64,
    },
}

/// Converged root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Newton's method safeguarded by bisection.
///
/// `f` returns `(value, derivative)`. The iterate never leaves `[lo, hi]`, on
/// whose ends `f` must differ in sign. A Newton step is taken only if it lands
/// strictly inside the current bracket and shrinks the residual fast enough;
/// otherwise the bracket is bisected. Converged when `|f| <= tol(x)` or the
/// bracket has shrunk to a few ulps.
pub(crate) fn safeguarded_newton(
    mut f: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    tol: impl Fn(f64) -> f64,
    max_iter: usize,
) -> Result<Root, RootFailure> {
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let (f_lo, _) = f(lo);
    let (f_hi, _) = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(RootFailure::NotFinite {
            x: if f_lo.is_nan() { lo } else { hi },
        });
    }
    if f_lo == 0.0 {
        return Ok(Root {
            x: lo,
            fx: 0.0,
            iterations: 0,
        });
    }
    if f_hi == 0.0 {
        return Ok(Root {
            x: hi,
            fx: 0.0,
            iterations: 0,
        });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(RootFailure::NoSignChange { lo, f_lo, hi, f_hi });
    }
    let lo_positive = f_lo > 0.0;

    let mut x = if x0 > lo && x0 < hi {
        x0
    } else {
        0.5 * (lo + hi)
    };
    let mut last_fx = f64::INFINITY;
    for it in 1..=max_iter {
        let (fx, dfx) = f(x);
        if fx.is_nan() {
            return Err(RootFailure::NotFinite { x });
        }
        if fx.abs() <= tol(x) {
            return Ok(Root {
                x,
                fx,
                iterations: it,
            });
        }
        if (fx > 0.0) == lo_positive {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(Root {
                x,
                fx,
                iterations: it,
            });
        }
        let newton = x - fx / dfx;
        let accept = dfx.is_finite()
            && dfx != 0.0
            && newton > lo
            && newton < hi
            && fx.abs() <= 0.5 * last_fx;
        last_fx = fx.abs();
        x = if accept { newton } else { 0.5 * (lo + hi) };
    }
    let (fx, _) = f(x);
    Err(RootFailure::MaxIter { x, fx })
}
