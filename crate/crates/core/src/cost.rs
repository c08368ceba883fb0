//! Running costs `h(x, m)` with their partial derivatives, plus sampled
//! checks of the monotonicity and mass-bracketing assumptions.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Evaluator for a running cost `h(x, m)` on `Ω × (0, m_sup)`.
#[derive(Clone)]
pub struct CostModel {
    eval: Fn2,
    d_m: Fn2,
    d_x: Fn2,
    m_sup: f64,
    strictly_increasing: bool,
    description: String,
    potential: Option<Potential>,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("description", &self.description)
            .field("m_sup", &self.m_sup)
            .field("strictly_increasing", &self.strictly_increasing)
            .finish()
    }
}

impl CostModel {
    /// Build a cost from closures. `m_sup` is the (possibly infinite) upper end
    /// of the admissible density interval.
    pub fn custom(
        description: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_m: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d_x: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        m_sup: f64,
        strictly_increasing: bool,
    ) -> Result<Self> {
        if !(m_sup > 0.0) {
            return Err(Error::config(format!(
                "m_sup must be positive (got {m_sup})"
            )));
        }
        Ok(CostModel {
            eval: Arc::new(eval),
            d_m: Arc::new(d_m),
            d_x: Arc::new(d_x),
            m_sup,
            strictly_increasing,
            description: description.into(),
            potential: None,
        })
    }

    /// `h(x, m)`. Returns `+∞` outside the admissible density interval.
    #[inline]
    pub fn h(&self, x: f64, m: f64) -> f64 {
        if m >= self.m_sup {
            return f64::INFINITY;
        }
        (self.eval)(x, m)
    }

    /// `∂h/∂m`.
    #[inline]
    pub fn d_m(&self, x: f64, m: f64) -> f64 {
        if m >= self.m_sup {
            return f64::INFINITY;
        }
        (self.d_m)(x, m)
    }

    /// `∂h/∂x`.
    #[inline]
    pub fn d_x(&self, x: f64, m: f64) -> f64 {
        (self.d_x)(x, m)
    }

    /// Supremum of the admissible density interval `(0, m_sup)`.
    pub fn m_sup(&self) -> f64 {
        self.m_sup
    }

    pub fn in_domain(&self, m: f64) -> bool {
        m > 0.0 && m < self.m_sup
    }

    pub fn strictly_increasing(&self) -> bool {
        self.strictly_increasing
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Spatial potential, when the cost was built from one.
    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }

    /// Grid minimum and maximum of `x ↦ h(x, m)`.
    pub fn range_over_grid(&self, g: &Grid, m: f64) -> (f64, f64) {
        g.nodes()
            .iter()
            .map(|&x| self.h(x, m))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// `h(x, m) = βx² + log m`.
pub fn quad_log(beta: f64) -> Result<CostModel> {
    check_beta(beta)?;
    CostModel::custom(
        format!("quad_log(beta={beta})"),
        move |x, m| beta * x * x + m.ln(),
        |_, m| 1.0 / m,
        move |x, _| 2.0 * beta * x,
        f64::INFINITY,
        true,
    )
}

/// `h(x, m) = m^α + βx²`.
pub fn power_law(alpha: f64, beta: f64) -> Result<CostModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!(
            "alpha must be positive (got {alpha})"
        )));
    }
    check_beta(beta)?;
    CostModel::custom(
        format!("power_law(alpha={alpha}, beta={beta})"),
        move |x, m| m.powf(alpha) + beta * x * x,
        move |_, m| alpha * m.powf(alpha - 1.0),
        move |x, _| 2.0 * beta * x,
        f64::INFINITY,
        true,
    )
}

/// `h(x, m) = 1/(m_max - m) + βx²` on `m ∈ (0, m_max)`. Needs `m_max > 1/|Ω|`.
pub fn barrier(m_max: f64, beta: f64, grid_measure: f64) -> Result<CostModel> {
    check_beta(beta)?;
    if !(grid_measure > 0.0) {
        return Err(Error::config(format!(
            "domain measure must be positive (got {grid_measure})"
        )));
    }
    if !(m_max > 1.0 / grid_measure) || !m_max.is_finite() {
        return Err(Error::config(format!(
            "m_max = {m_max} must exceed 1/|Ω| = {} so that the uniform density is admissible",
            1.0 / grid_measure
        )));
    }
    CostModel::custom(
        format!("barrier(m_max={m_max}, beta={beta})"),
        move |x, m| 1.0 / (m_max - m) + beta * x * x,
        move |_, m| {
            let d = m_max - m;
            1.0 / (d * d)
        },
        move |x, _| 2.0 * beta * x,
        m_max,
        true,
    )
}

/// Spatial potential `F₁(x)` with its derivative.
#[derive(Clone)]
pub struct Potential {
    value: Fn1,
    derivative: Option<Fn1>,
    description: String,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("description", &self.description)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl Potential {
    /// Callable potential; the derivative is taken by centered differences.
    pub fn from_fn(
        description: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Potential {
            value: Arc::new(value),
            derivative: None,
            description: description.into(),
        }
    }

    /// Callable potential with an analytic derivative.
    pub fn with_derivative(
        description: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Potential {
            value: Arc::new(value),
            derivative: Some(Arc::new(derivative)),
            description: description.into(),
        }
    }

    /// Piecewise-linear interpolant of grid samples, held constant outside the grid.
    pub fn from_samples(g: &Grid, values: &[f64]) -> Result<Self> {
        g.check_len(values.len())?;
        let (x_lo, dx, n) = (g.x_lo(), g.dx(), g.len());
        let vals: Vec<f64> = values.to_vec();
        Ok(Potential::from_fn("sampled potential", move |x| {
            let s = ((x - x_lo) / dx).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            let t = s - i as f64;
            (1.0 - t) * vals[i] + t * vals[i + 1]
        }))
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(x),
            None => {
                let h = 1e-5 * (1.0 + x.abs());
                ((self.value)(x + h) - (self.value)(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// `h(x, m) = F₁(x) + log m`.
pub fn potential_plus_log(f1: Potential) -> CostModel {
    let (fv, fd) = (f1.clone(), f1.clone());
    CostModel {
        eval: Arc::new(move |x, m| fv.value(x) + m.ln()),
        d_m: Arc::new(|_, m| 1.0 / m),
        d_x: Arc::new(move |x, _| fd.derivative(x)),
        m_sup: f64::INFINITY,
        strictly_increasing: true,
        description: format!("{} + log m", f1.description),
        potential: Some(f1),
    }
}

/// Parameters of one inverted-Gaussian well `-depth·exp(-(x-center)²/width²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Well {
    pub depth: f64,
    pub width: f64,
    pub center: f64,
}

impl Well {
    pub fn new(depth: f64, width: f64, center: f64) -> Self {
        Well {
            depth,
            width,
            center,
        }
    }

    fn value(&self, x: f64) -> f64 {
        let s = (x - self.center) / self.width;
        -self.depth * (-s * s).exp()
    }

    fn derivative(&self, x: f64) -> f64 {
        let s = (x - self.center) / self.width;
        2.0 * self.depth * s / self.width * (-s * s).exp()
    }
}

/// Double-well potential `F₁ = well₁ + well₂` built from two inverted Gaussians.
pub fn double_well(first: Well, second: Well) -> Result<Potential> {
    for (k, w) in [(1, first), (2, second)] {
        if !(w.depth > 0.0 && w.depth.is_finite()) {
            return Err(Error::config(format!(
                "depth{k} must be positive (got {})",
                w.depth
            )));
        }
        if !(w.width > 0.0 && w.width.is_finite()) {
            return Err(Error::config(format!(
                "width{k} must be positive (got {})",
                w.width
            )));
        }
        if !w.center.is_finite() {
            return Err(Error::config(format!("center{k} must be finite")));
        }
    }
    Ok(Potential::with_derivative(
        format!(
            "double_well(d={},w={},c={} | d={},w={},c={})",
            first.depth, first.width, first.center, second.depth, second.width, second.center
        ),
        move |x| first.value(x) + second.value(x),
        move |x| first.derivative(x) + second.derivative(x),
    ))
}

/// Add `ε·log(|Ω|·m)`, which makes any increasing cost strictly increasing while
/// leaving `h(x, 1/|Ω|)` unchanged.
pub fn regularize(c: &CostModel, eps: f64, grid_measure: f64) -> Result<CostModel> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("ε must be positive (got {eps})")));
    }
    if !(grid_measure > 0.0) {
        return Err(Error::config("domain measure must be positive"));
    }
    let (e, dm, dx) = (c.eval.clone(), c.d_m.clone(), c.d_x.clone());
    Ok(CostModel {
        eval: Arc::new(move |x, m| e(x, m) + eps * (grid_measure * m).ln()),
        d_m: Arc::new(move |x, m| dm(x, m) + eps / m),
        d_x: dx,
        m_sup: c.m_sup,
        strictly_increasing: true,
        description: format!("{} + {eps}·log(|Ω|m)", c.description),
        potential: c.potential.clone(),
    })
}

/// Outcome of the sampled assumption checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `∂h/∂m ≥ -1e-12` at every lattice sample.
    pub monotone_ok: bool,
    /// `sup_x h(x, m_lo) < inf_x h(x, 1/|Ω|)`.
    pub mfg_lower_ok: bool,
    /// `sup_x h(x, 1/|Ω|) < inf_x h(x, m_hi)`.
    pub mfg_upper_ok: bool,
    /// Largest violation amount over all checks (zero when everything holds).
    pub worst_violation: f64,
    pub samples_used: usize,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.monotone_ok && self.mfg_lower_ok && self.mfg_upper_ok
    }
}

const MONOTONE_SLACK: f64 = 1e-12;

/// Sample the monotonicity and mass-bracketing assumptions on the grid nodes
/// times a geometric ladder of `samples` densities in `[m_lo, m_hi]`.
///
/// The limits `m → 0` and `m → ∞` are represented by `m_lo` and `m_hi`; for
/// costs monotone in `m` this endpoint evaluation brackets the limits.
pub fn validate_assumptions(
    c: &CostModel,
    g: &Grid,
    m_lo: f64,
    m_hi: f64,
    samples: usize,
) -> Result<AssumptionReport> {
    let uniform = 1.0 / g.measure();
    if !(m_lo > 0.0 && m_lo < uniform && uniform < m_hi && m_hi < c.m_sup) {
        return Err(Error::config(format!(
            "sampling window must satisfy 0 < m_lo < 1/|Ω| < m_hi < m_sup \
             (got m_lo={m_lo}, 1/|Ω|={uniform}, m_hi={m_hi}, m_sup={})",
            c.m_sup
        )));
    }
    if samples < 2 {
        return Err(Error::config(format!(
            "need at least 2 samples (got {samples})"
        )));
    }

    let ratio = (m_hi / m_lo).ln();
    let ladder: Vec<f64> = (0..samples)
        .map(|k| m_lo * (ratio * k as f64 / (samples - 1) as f64).exp())
        .collect();

    let mut mono_violation = 0.0_f64;
    for &x in g.nodes() {
        for &m in &ladder {
            let d = c.d_m(x, m);
            if !(d >= -MONOTONE_SLACK) {
                let v = if d.is_nan() { f64::INFINITY } else { -d };
                mono_violation = mono_violation.max(v);
            }
        }
    }

    let (_, sup_lo) = c.range_over_grid(g, m_lo);
    let (inf_mid, sup_mid) = c.range_over_grid(g, uniform);
    let (inf_hi, _) = c.range_over_grid(g, m_hi);
    let lower_gap = sup_lo - inf_mid;
    let upper_gap = sup_mid - inf_hi;

    let monotone_ok = mono_violation == 0.0;
    let mfg_lower_ok = lower_gap < 0.0;
    let mfg_upper_ok = upper_gap < 0.0;
    Ok(AssumptionReport {
        monotone_ok,
        mfg_lower_ok,
        mfg_upper_ok,
        worst_violation: mono_violation
            .max(lower_gap.max(0.0))
            .max(upper_gap.max(0.0)),
        samples_used: samples * g.len(),
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::config(format!(
            "beta must be non-negative (got {beta})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn symmetric_wells() -> Potential {
        double_well(Well::new(1.0, 0.3, -0.5), Well::new(1.0, 0.3, 0.5)).unwrap()
    }

    #[test]
    fn quad_log_examples() {
        let c = quad_log(1.0).unwrap();
        assert_eq!(c.h(2.0, 1.0), 4.0);
        assert_eq!(c.d_m(0.0, 0.5), 2.0);
        let c0 = quad_log(0.0).unwrap();
        for x in [-3.0, 0.0, 1.7] {
            assert!((c0.h(x, std::f64::consts::E) - 1.0).abs() < 1e-15);
        }
        assert!(matches!(quad_log(-1.0), Err(Error::Config(_))));
    }

    #[test]
    fn power_law_examples() {
        assert_eq!(power_law(10.0, 10.0).unwrap().h(1.0, 1.0), 11.0);
        assert_eq!(power_law(2.0, 0.0).unwrap().d_m(0.3, 3.0), 6.0);
        let c = power_law(1.0, 1.0).unwrap();
        assert_eq!(c.h(0.0, 0.37), 0.37);
        assert!(power_law(0.0, 1.0).is_err());
        assert!(power_law(-1.0, 1.0).is_err());
    }

    #[test]
    fn barrier_examples() {
        let c = barrier(10.0, 1.0, 2.0).unwrap();
        assert!((c.h(0.0, 5.0) - 0.2).abs() < 1e-15);
        assert_eq!(c.h(0.0, 10.0), f64::INFINITY);
        assert!(barrier(1.0, 1.0, 2.0).is_ok());
        assert!(matches!(barrier(0.4, 1.0, 2.0), Err(Error::Config(_))));
        assert!(barrier(0.5, 1.0, 2.0).is_err());
    }

    #[test]
    fn potential_plus_log_reductions() {
        let zero = potential_plus_log(Potential::from_fn("zero", |_| 0.0));
        let q0 = quad_log(0.0).unwrap();
        let sq = potential_plus_log(Potential::with_derivative("x²", |x| x * x, |x| 2.0 * x));
        let q1 = quad_log(1.0).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.8] {
            for m in [0.01, 0.5, 3.0] {
                assert_eq!(zero.h(x, m), q0.h(x, m));
                assert_eq!(sq.h(x, m), q1.h(x, m));
                assert_eq!(sq.d_m(x, m), q1.d_m(x, m));
                assert_eq!(sq.d_x(x, m), q1.d_x(x, m));
            }
        }
        let dw = potential_plus_log(symmetric_wells());
        for x in [0.1, 0.5, 0.77] {
            assert!((dw.h(-x, 0.4) - dw.h(x, 0.4)).abs() < 1e-15);
        }
    }

    #[test]
    fn double_well_values() {
        let f = symmetric_wells();
        let expected = -1.0 - (-100.0_f64 / 9.0).exp();
        assert!((f.value(-0.5) - expected).abs() < 1e-15);
        assert!((f.value(0.5) - expected).abs() < 1e-15);
        for x in [0.05, 0.3, 0.9] {
            assert!((f.value(x) - f.value(-x)).abs() < 1e-15);
        }
        assert!(double_well(Well::new(0.0, 0.3, -0.5), Well::new(1.0, 0.3, 0.5)).is_err());
        assert!(double_well(Well::new(1.0, 0.3, -0.5), Well::new(1.0, -0.3, 0.5)).is_err());
    }

    #[test]
    fn sampled_potential_interpolates() {
        let g = build_grid(-1.0, 1.0, 21).unwrap();
        let vals = g.sample(|x| 3.0 * x + 1.0);
        let p = Potential::from_samples(&g, &vals).unwrap();
        assert!((p.value(0.123) - 1.369).abs() < 1e-12);
        assert!((p.derivative(0.123) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn regularization_examples() {
        let flat = CostModel::custom(
            "flat",
            |_, _| 2.0,
            |_, _| 0.0,
            |_, _| 0.0,
            f64::INFINITY,
            false,
        )
        .unwrap();
        let r = regularize(&flat, 0.1, 2.0).unwrap();
        assert!(r.strictly_increasing());
        assert!((r.d_m(0.0, 0.25) - 0.4).abs() < 1e-15);
        assert_eq!(r.h(0.3, 0.5), 2.0);

        let c = quad_log(1.0).unwrap();
        for eps in [1e-1, 1e-3, 1e-6, 1e-9] {
            let r = regularize(&c, eps, 2.0).unwrap();
            assert_eq!(r.h(0.4, 0.5), c.h(0.4, 0.5));
            assert!((r.h(0.4, 3.0) - c.h(0.4, 3.0)).abs() <= eps * 2.0);
        }
        assert!(regularize(&c, 0.0, 2.0).is_err());
    }

    #[test]
    fn validate_examples() {
        let g = build_grid(-1.0, 1.0, 41).unwrap();
        let rep = validate_assumptions(&quad_log(1.0).unwrap(), &g, 1e-4, 1e4, 20).unwrap();
        assert!(rep.all_ok(), "{rep:?}");
        assert_eq!(rep.worst_violation, 0.0);

        let dec = CostModel::custom(
            "-m",
            |_, m| -m,
            |_, _| -1.0,
            |_, _| 0.0,
            f64::INFINITY,
            false,
        )
        .unwrap();
        let rep = validate_assumptions(&dec, &g, 1e-4, 1e4, 20).unwrap();
        assert!(!rep.monotone_ok);
        assert!(rep.worst_violation > 0.0);

        // Barrier cost: monotone and bounded above near m_max, but h stays
        // finite as m → 0 while βx² spans [0, 1], so the lower bracket fails.
        let b = barrier(10.0, 1.0, 2.0).unwrap();
        let rep = validate_assumptions(&b, &g, 1e-4, 9.99, 20).unwrap();
        assert!(rep.monotone_ok && rep.mfg_upper_ok);
        assert!(!rep.mfg_lower_ok);
        let flat_barrier = barrier(10.0, 0.0, 2.0).unwrap();
        let rep = validate_assumptions(&flat_barrier, &g, 1e-4, 9.99, 20).unwrap();
        assert!(rep.all_ok(), "{rep:?}");

        assert!(validate_assumptions(&b, &g, 0.6, 5.0, 20).is_err());
        assert!(validate_assumptions(&b, &g, 1e-3, 11.0, 20).is_err());
        assert!(validate_assumptions(&b, &g, 1e-3, 5.0, 1).is_err());
    }

    #[test]
    fn derivative_consistency() {
        let g = build_grid(-1.0, 1.0, 9).unwrap();
        let costs = vec![
            quad_log(1.3).unwrap(),
            power_law(3.0, 2.0).unwrap(),
            barrier(10.0, 1.0, 2.0).unwrap(),
            potential_plus_log(symmetric_wells()),
            regularize(&power_law(2.0, 1.0).unwrap(), 0.01, 2.0).unwrap(),
        ];
        for c in &costs {
            for &x in &g.nodes()[1..g.len() - 1] {
                for m in [0.05, 0.4, 1.5, 4.0] {
                    let hx = 1e-6;
                    let fd_x = (c.h(x + hx, m) - c.h(x - hx, m)) / (2.0 * hx);
                    let an_x = c.d_x(x, m);
                    assert!(
                        (fd_x - an_x).abs() <= 1e-6 * an_x.abs().max(1.0),
                        "{c:?} d_x at ({x},{m}): {fd_x} vs {an_x}"
                    );
                    let hm = 1e-6 * m;
                    let fd_m = (c.h(x, m + hm) - c.h(x, m - hm)) / (2.0 * hm);
                    let an_m = c.d_m(x, m);
                    assert!(
                        (fd_m - an_m).abs() <= 1e-6 * an_m.abs().max(1.0),
                        "{c:?} d_m at ({x},{m}): {fd_m} vs {an_m}"
                    );
                    if c.strictly_increasing() {
                        assert!(an_m > 0.0);
                    }
                }
            }
        }
    }
}
