//! Uniform 1-D mesh with trapezoid quadrature, second-order difference
//! stencils and no-flux boundary handling.
//!
//! The boundary normal in 1-D is `-1` at `x_lo` and `+1` at `x_hi`, so every
//! Neumann condition reduces to a scalar condition at each endpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization of `[x_lo, x_hi]` with `n` nodes including both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x_lo: f64,
    x_hi: f64,
    n: usize,
    nodes: Vec<f64>,
    dx: f64,
    measure: f64,
}

impl Grid {
    /// Build a uniform grid. Requires `x_hi > x_lo` and `n >= 3`.
    pub fn new(x_lo: f64, x_hi: f64, n: usize) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite()) {
            return Err(Error::config(format!(
                "domain endpoints must be finite (got [{x_lo}, {x_hi}])"
            )));
        }
        if x_hi <= x_lo {
            return Err(Error::config(format!(
                "empty or inverted domain [{x_lo}, {x_hi}]"
            )));
        }
        if n < 3 {
            return Err(Error::config(format!(
                "grid needs at least 3 nodes (got {n})"
            )));
        }
        let measure = x_hi - x_lo;
        let dx = measure / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| x_lo + i as f64 * dx).collect();
        nodes[n - 1] = x_hi;
        Ok(Grid {
            x_lo,
            x_hi,
            n,
            nodes,
            dx,
            measure,
        })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// `|Ω| = x_hi - x_lo`.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Outward normal at node `i` (`-1`, `+1`, or `0` for interior nodes).
    pub fn normal(&self, i: usize) -> f64 {
        if i == 0 {
            -1.0
        } else if i + 1 == self.n {
            1.0
        } else {
            0.0
        }
    }

    /// Trapezoid weights, so that `∫ f ≈ Σ w_i f_i`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dx; self.n];
        w[0] = 0.5 * self.dx;
        w[self.n - 1] = 0.5 * self.dx;
        w
    }

    /// Trapezoid rule on raw values aligned with the nodes.
    pub fn integrate_values(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(trapezoid(values, self.dx))
    }

    /// Second-order finite-difference gradient of raw values.
    pub fn gradient_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        Ok(gradient_raw(values, self.dx))
    }

    /// Sample a function at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::contract(format!(
                "field has {len} values but grid has {} nodes",
                self.n
            )));
        }
        Ok(())
    }
}

/// `build_grid(x_lo, x_hi, n)`.
pub fn build_grid(x_lo: f64, x_hi: f64, n: usize) -> Result<Grid> {
    Grid::new(x_lo, x_hi, n)
}

/// What a sampled field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Density,
    Value,
    Potential,
}

/// Grid-aligned samples of a scalar function. Density fields are strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    values: Vec<f64>,
    role: FieldRole,
}

impl ScalarField {
    /// Wrap values, checking alignment and (for densities) positivity.
    pub fn new(values: Vec<f64>, role: FieldRole, grid: &Grid) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite value {v} at node {i}")));
        }
        if role == FieldRole::Density {
            if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                return Err(Error::contract(format!(
                    "density must be positive, got {v} at node {i}"
                )));
            }
        }
        Ok(ScalarField { values, role })
    }

    pub fn density(values: Vec<f64>, grid: &Grid) -> Result<Self> {
        Self::new(values, FieldRole::Density, grid)
    }

    pub fn value(values: Vec<f64>, grid: &Grid) -> Result<Self> {
        Self::new(values, FieldRole::Value, grid)
    }

    pub fn potential(values: Vec<f64>, grid: &Grid) -> Result<Self> {
        Self::new(values, FieldRole::Potential, grid)
    }

    /// Sample `f` at the grid nodes.
    pub fn from_fn(grid: &Grid, role: FieldRole, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.sample(f), role, grid)
    }

    /// Constant field.
    pub fn constant(grid: &Grid, role: FieldRole, c: f64) -> Result<Self> {
        Self::new(vec![c; grid.len()], role, grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Max-norm distance to another field of the same length.
    pub fn max_distance(&self, other: &ScalarField) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::contract(format!(
                "fields differ in length ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }
}

/// Trapezoid approximation of `∫_Ω f dx`; exact for affine `f`.
pub fn integrate(f: &ScalarField, g: &Grid) -> Result<f64> {
    g.integrate_values(&f.values)
}

/// Centered differences in the interior, second-order one-sided at the endpoints.
pub fn gradient(f: &ScalarField, g: &Grid) -> Result<ScalarField> {
    let d = g.gradient_values(&f.values)?;
    let role = match f.role {
        FieldRole::Density => FieldRole::Value,
        r => r,
    };
    Ok(ScalarField { values: d, role })
}

/// Max-norm of the discrete stationary Fokker-Planck residual
/// `-(σ²/2) m'' - (m·drift)'` with no-flux boundary rows.
///
/// Interior rows use centered second differences for the diffusion term and a
/// centered first difference of the flux `m·drift`. Boundary rows hold the
/// discrete no-flux condition `(σ²/2) m' + m·drift` with `m'` from the
/// second-order one-sided stencil, so every row is second-order consistent.
pub fn divergence_flux_residual(
    m: &ScalarField,
    drift: &ScalarField,
    sigma: f64,
    g: &Grid,
) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("σ must be positive (got {sigma})")));
    }
    g.check_len(m.len())?;
    g.check_len(drift.len())?;
    let rows = fokker_planck_rows(m.values(), drift.values(), sigma * sigma, g.dx());
    Ok(rows.iter().fold(0.0_f64, |a, r| a.max(r.abs())))
}

/// Row-wise residual of the discrete stationary Fokker-Planck operator.
pub(crate) fn fokker_planck_rows(m: &[f64], drift: &[f64], sigma2: f64, dx: f64) -> Vec<f64> {
    let n = m.len();
    let half_s2 = 0.5 * sigma2;
    let flux: Vec<f64> = m.iter().zip(drift).map(|(a, b)| a * b).collect();
    let mut r = vec![0.0; n];
    for i in 1..n - 1 {
        let diff = (m[i + 1] - 2.0 * m[i] + m[i - 1]) / (dx * dx);
        let adv = (flux[i + 1] - flux[i - 1]) / (2.0 * dx);
        r[i] = -half_s2 * diff - adv;
    }
    let dm_lo = (-3.0 * m[0] + 4.0 * m[1] - m[2]) / (2.0 * dx);
    let dm_hi = (3.0 * m[n - 1] - 4.0 * m[n - 2] + m[n - 3]) / (2.0 * dx);
    r[0] = half_s2 * dm_lo + flux[0];
    r[n - 1] = half_s2 * dm_hi + flux[n - 1];
    r
}

pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[n - 1]))
}

pub(crate) fn gradient_raw(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx);
    d
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}
