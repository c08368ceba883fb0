//! Closed-form whole-line equilibria for `h(x, m) = βx² + log m` and the
//! large-`m_max` barrier asymptotics.
//!
//! On `ℝ` the MFG value function is `u = b x²` and the density is
//! `m = (a/π)^{1/2} e^{-a x²}`, with `λ` in the whole-line sign convention
//! `-|u'|²/2 + log m + βx² + (σ²/2) u'' + λ = 0`. The BRS density is Gaussian
//! with variance `(2 + σ²)/(4β)`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Whole-line MFG solution for the quadratic potential with log congestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticMfg {
    /// Density exponent rate.
    pub a: f64,
    /// Value coefficient, `u = b x²`.
    pub b: f64,
    /// `½ log(π/a) - σ² b`; infinite when `a = 0`.
    pub lambda: f64,
    /// `1/(2a)`, absent when the density is not normalizable (`a = 0`).
    pub variance: Option<f64>,
}

impl QuadraticMfg {
    pub fn normalizable(&self) -> bool {
        self.a > 0.0
    }

    pub fn density(&self, x: f64) -> f64 {
        (self.a / std::f64::consts::PI).sqrt() * (-self.a * x * x).exp()
    }

    pub fn value(&self, x: f64) -> f64 {
        self.b * x * x
    }
}

/// MFG and BRS variances at one parameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRecord {
    /// MFG variance.
    pub a1: f64,
    /// BRS variance.
    pub a2: f64,
    /// `a2 / a1`.
    pub ratio: f64,
    pub beta: f64,
    pub sigma2: f64,
}

/// Limits of `a2/a1`: `σ² → 0`, `σ² → ∞`, `β → 0`, and `β → ∞` of `(2β)^{1/2} a2/a1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioLimits {
    pub small_noise: f64,
    pub large_noise: f64,
    pub weak_potential: f64,
    pub strong_potential_scaled: f64,
}

/// Large-`m_max` variances for the barrier cost with quadratic potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BarrierAsymptotics {
    pub brs_variance: f64,
    pub mfg_variance: f64,
    pub ratio: f64,
}

fn finite_non_negative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::config(format!(
            "{name} must be finite and non-negative (got {v})"
        )));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(format!("{name} must be positive (got {v})")));
    }
    Ok(())
}

/// `(1 + 2σ⁴β)^{1/2}`.
fn root_term(beta: f64, sigma2: f64) -> f64 {
    (1.0 + 2.0 * sigma2 * sigma2 * beta).sqrt()
}

/// Whole-line MFG solution. `σ = 0` gives `a = β, b = 0`.
pub fn mfg_quadratic(beta: f64, sigma: f64) -> Result<QuadraticMfg> {
    finite_non_negative("beta", beta)?;
    finite_non_negative("sigma", sigma)?;
    if beta == 0.0 && sigma == 0.0 {
        return Err(Error::config(
            "beta = sigma = 0 has no normalizable density",
        ));
    }
    let sigma2 = sigma * sigma;
    let (a, b) = if sigma == 0.0 {
        (beta, 0.0)
    } else {
        // (-1 + s)/σ⁴ rewritten as 2β/(1 + s) to avoid cancellation.
        let a = 2.0 * beta / (1.0 + root_term(beta, sigma2));
        (a, 0.5 * a * sigma2)
    };
    let (lambda, variance) = if a > 0.0 {
        (
            0.5 * (std::f64::consts::PI / a).ln() - sigma2 * b,
            Some(0.5 / a),
        )
    } else {
        (f64::INFINITY, None)
    };
    Ok(QuadraticMfg {
        a,
        b,
        lambda,
        variance,
    })
}

/// BRS variance `(2 + σ²)/(4β)`.
pub fn brs_quadratic(beta: f64, sigma: f64) -> Result<f64> {
    positive("beta", beta)?;
    positive("sigma", sigma)?;
    Ok((2.0 + sigma * sigma) / (4.0 * beta))
}

/// MFG variance `a1 = σ⁴/(2((1+2σ⁴β)^{1/2} - 1)) = (1 + (1+2σ⁴β)^{1/2})/(4β)`,
/// BRS variance `a2 = (2+σ²)/(4β)` and their ratio.
pub fn variance_ratio(beta: f64, sigma2: f64) -> Result<ComparisonRecord> {
    positive("beta", beta)?;
    positive("sigma2", sigma2)?;
    let s = root_term(beta, sigma2);
    let a1 = (1.0 + s) / (4.0 * beta);
    let a2 = (2.0 + sigma2) / (4.0 * beta);
    Ok(ComparisonRecord {
        a1,
        a2,
        ratio: (2.0 + sigma2) / (1.0 + s),
        beta,
        sigma2,
    })
}

/// Closed-form limits of the variance ratio. `large_noise` depends only on
/// `β`; `weak_potential` and `strong_potential_scaled` only on `σ²`.
pub fn ratio_limits(beta: f64, sigma2: f64) -> RatioLimits {
    RatioLimits {
        small_noise: 1.0,
        large_noise: 1.0 / (2.0 * beta).sqrt(),
        weak_potential: 1.0 + 0.5 * sigma2,
        strong_potential_scaled: (2.0 + sigma2) / sigma2,
    }
}

/// Barrier-cost variances predicted by a Taylor expansion for large `m_max`:
/// BRS `σ²/(4β)`, MFG `σ²/(2β)`, relative difference `1/2`.
pub fn barrier_asymptotics(beta: f64, sigma2: f64) -> Result<BarrierAsymptotics> {
    positive("beta", beta)?;
    positive("sigma2", sigma2)?;
    Ok(BarrierAsymptotics {
        brs_variance: sigma2 / (4.0 * beta),
        mfg_variance: sigma2 / (2.0 * beta),
        ratio: 0.5,
    })
}
