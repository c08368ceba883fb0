//! Stationary Best Reply Strategy equilibria.
//!
//! The no-flux boundary value problem
//! `-(σ²/2) m'' - (m ∂ₓ[h(x, m)])' = 0`, `∫ m = 1`
//! is equivalent to the pointwise fixed point `m = (1/Z) exp(-2 h(x, m)/σ²)`
//! closed by a scalar normalization `Φ(Z) = ∫ m_Z = 1`. For fixed `Z`, each
//! node is an independent scalar root of the strictly decreasing
//! `G(m) = (1/Z) exp(-2h/σ²) - m`; the outer problem is a root of the strictly
//! decreasing mass map `Φ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::grid::{divergence_flux_residual, FieldRole, Grid, ScalarField};
use crate::roots::{safeguarded_newton, RootFailure};

/// Tolerances and noise level for the BRS solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct BrsConfig {
    /// Noise intensity `σ > 0`.
    pub sigma: f64,
    /// Pointwise tolerance on `|G(m)|`.
    pub inner_tol: f64,
    /// Tolerance on `|Φ(Z) - 1|`.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl BrsConfig {
    pub fn new(sigma: f64) -> Self {
        BrsConfig {
            sigma,
            inner_tol: 1e-12,
            outer_tol: 1e-10,
            max_inner: 100,
            max_outer: 200,
        }
    }

    /// Same defaults, parametrized by `σ²`.
    pub fn with_sigma2(sigma2: f64) -> Self {
        Self::new(sigma2.sqrt())
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!(
                "σ must be positive (got {})",
                self.sigma
            )));
        }
        if !(self.inner_tol > 0.0 && self.outer_tol > 0.0) {
            return Err(Error::config("BRS tolerances must be positive"));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::config("BRS iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Converged BRS equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct BrsSolution {
    pub m: ScalarField,
    /// Normalization constant `Z*` with `Φ(Z*) = 1`.
    pub z: f64,
    /// `max_x |G_{Z,x}(m(x))|`.
    pub pointwise_residual: f64,
    /// `|Φ(Z*) - 1|`.
    pub mass_residual: f64,
    /// Discrete stationary Fokker-Planck residual of `m`.
    pub pde_residual: f64,
    pub outer_iterations: usize,
}

const SCAN_STEPS: usize = 2000;

#[inline]
fn gibbs_factor(c: &CostModel, z: f64, x: f64, m: f64, sigma2: f64) -> f64 {
    (-2.0 * c.h(x, m) / sigma2).exp() / z
}

/// `G_{Z,x}(m)` and its derivative in `m`.
#[inline]
fn g_and_slope(c: &CostModel, z: f64, x: f64, m: f64, sigma2: f64) -> (f64, f64) {
    if !c.in_domain(m) {
        // Left of the domain G → positive, right of it the Gibbs factor vanishes.
        return if m <= 0.0 {
            (f64::INFINITY, -1.0)
        } else {
            (-m, -1.0)
        };
    }
    let e = gibbs_factor(c, z, x, m, sigma2);
    let slope = if e == 0.0 {
        -1.0
    } else {
        -2.0 / sigma2 * c.d_m(x, m) * e - 1.0
    };
    (e - m, slope)
}

/// Residual `G_{Z,x}(m) = (1/Z) exp(-2h(x,m)/σ²) - m`.
pub fn fixed_point_residual(c: &CostModel, z: f64, x: f64, m: f64, sigma: f64) -> f64 {
    g_and_slope(c, z, x, m, sigma * sigma).0
}

/// Unique root of `G_{Z,x}` by safeguarded Newton on a scanned bracket.
///
/// The scan starts at `(1/Z) exp(-2h(x, 1/|Ω|)/σ²)` and moves geometrically
/// down (halving) or up (doubling, or halving the distance to `m_sup`) until
/// `G` changes sign.
pub fn pointwise_density(
    c: &CostModel,
    z: f64,
    x: f64,
    measure: f64,
    cfg: &BrsConfig,
) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::config(format!("Z must be positive (got {z})")));
    }
    let sigma2 = cfg.sigma2();
    let (lo, hi) = density_bracket(c, z, x, measure, sigma2)?;
    let tol = cfg.inner_tol;
    let x0 = if lo > 0.0 && hi.is_finite() {
        (lo * hi).sqrt()
    } else {
        0.5 * (lo + hi)
    };
    match safeguarded_newton(
        |m| g_and_slope(c, z, x, m, sigma2),
        lo,
        hi,
        x0,
        |m| tol * m.abs().max(1.0),
        cfg.max_inner,
    ) {
        Ok(root) => Ok(root.x),
        Err(RootFailure::MaxIter { x: m, fx }) => Err(Error::solver(
            "brs pointwise density",
            format!("no convergence at x = {x} (last m = {m})"),
            fx.abs(),
            cfg.max_inner,
        )),
        Err(e) => Err(Error::solver(
            "brs pointwise density",
            format!("bracket lost at x = {x}: {e:?}"),
            f64::NAN,
            0,
        )),
    }
}

fn density_bracket(c: &CostModel, z: f64, x: f64, measure: f64, sigma2: f64) -> Result<(f64, f64)> {
    let m_sup = c.m_sup();
    let mut m = gibbs_factor(c, z, x, 1.0 / measure, sigma2);
    if !(m > 0.0) || !m.is_finite() || m >= m_sup {
        m = if m_sup.is_finite() { 0.5 * m_sup } else { 1.0 };
    }
    let g0 = g_and_slope(c, z, x, m, sigma2).0;
    if g0 == 0.0 {
        return Ok((m, m));
    }
    let up = g0 > 0.0;
    let mut prev = m;
    for _ in 0..SCAN_STEPS {
        let next = if up {
            if m_sup.is_finite() {
                (2.0 * prev).min(0.5 * (prev + m_sup))
            } else {
                2.0 * prev
            }
        } else {
            0.5 * prev
        };
        if next == prev || next <= 0.0 || !next.is_finite() {
            break;
        }
        let g = g_and_slope(c, z, x, next, sigma2).0;
        if g.is_nan() {
            break;
        }
        if (g > 0.0) != up || g == 0.0 {
            return Ok(if up { (prev, next) } else { (next, prev) });
        }
        prev = next;
    }
    Err(Error::solver(
        "brs density bracket",
        format!(
            "G_(Z={z},x={x}) keeps one sign over the admissible densities; \
             the cost looks non-monotone or unbounded in m"
        ),
        f64::NAN,
        SCAN_STEPS,
    ))
}

/// Densities `m_Z(x_i)` at every node.
pub fn densities_at(c: &CostModel, z: f64, g: &Grid, cfg: &BrsConfig) -> Result<Vec<f64>> {
    g.nodes()
        .par_iter()
        .map(|&x| pointwise_density(c, z, x, g.measure(), cfg))
        .collect()
}

/// Mass map `Φ(Z) = ∫ m_Z dx`.
pub fn mass(c: &CostModel, z: f64, g: &Grid, cfg: &BrsConfig) -> Result<f64> {
    let m = densities_at(c, z, g, cfg)?;
    g.integrate_values(&m)
}

fn mass_slope_from(c: &CostModel, z: f64, g: &Grid, m: &[f64], sigma2: f64) -> Result<f64> {
    let dm: Vec<f64> = g
        .nodes()
        .iter()
        .zip(m)
        .map(|(&x, &mi)| -mi / (z * (1.0 + 2.0 / sigma2 * mi * c.d_m(x, mi))))
        .collect();
    g.integrate_values(&dm)
}

/// `dΦ/dZ = ∫ -m_Z / (Z (1 + (2/σ²) m_Z ∂ₘh(x, m_Z))) dx`, from implicit
/// differentiation of the fixed point in `Z`.
pub fn mass_derivative(c: &CostModel, z: f64, g: &Grid, cfg: &BrsConfig) -> Result<f64> {
    let m = densities_at(c, z, g, cfg)?;
    mass_slope_from(c, z, g, &m, cfg.sigma2())
}

/// Solve the stationary BRS problem on `g`.
pub fn solve(c: &CostModel, g: &Grid, cfg: &BrsConfig) -> Result<BrsSolution> {
    cfg.validate()?;
    let sigma2 = cfg.sigma2();
    let measure = g.measure();

    // Φ(|Ω| e^{-2C₁/σ²}) ≤ 1 ≤ Φ(|Ω| e^{-2C₂/σ²}) with C₁, C₂ the grid inf/sup
    // of h(·, 1/|Ω|).
    let (c_inf, c_sup) = c.range_over_grid(g, 1.0 / measure);
    if !(c_inf.is_finite() && c_sup.is_finite()) {
        return Err(Error::config(format!(
            "h(x, 1/|Ω|) is not finite on the grid for {}",
            c.description()
        )));
    }
    let mut z_a = measure * (-2.0 * c_inf / sigma2).exp();
    let mut z_b = measure * (-2.0 * c_sup / sigma2).exp();

    let eval = |z: f64| -> Result<(f64, f64, Vec<f64>)> {
        let m = densities_at(c, z, g, cfg)?;
        let phi = g.integrate_values(&m)?;
        let dphi = mass_slope_from(c, z, g, &m, sigma2)?;
        Ok((phi - 1.0, dphi, m))
    };

    let (mut f_a, _, m_a) = eval(z_a)?;
    let mut f_b = f_a;
    let mut m_b = m_a.clone();
    if z_b != z_a {
        let r = eval(z_b)?;
        f_b = r.0;
        m_b = r.2;
    }
    if f_a.abs() <= cfg.outer_tol {
        return finish(c, g, cfg, z_a, m_a, 0);
    }
    if f_b.abs() <= cfg.outer_tol {
        return finish(c, g, cfg, z_b, m_b, 0);
    }
    // Normalize so that Φ - 1 > 0 at z_lo and < 0 at z_hi (Φ is decreasing).
    if z_a > z_b {
        std::mem::swap(&mut z_a, &mut z_b);
        std::mem::swap(&mut f_a, &mut f_b);
    }
    let mut expansions = 0;
    while f_a < 0.0 || f_b > 0.0 {
        // Quadrature can blur the proof-backed bracket; widen geometrically.
        expansions += 1;
        if expansions > 60 {
            return Err(Error::solver(
                "brs normalization bracket",
                "Φ(Z) - 1 does not change sign on the expanded bracket",
                f_a.abs().min(f_b.abs()),
                expansions,
            ));
        }
        if f_a < 0.0 {
            z_a *= 0.5;
            f_a = eval(z_a)?.0;
        }
        if f_b > 0.0 {
            z_b *= 2.0;
            f_b = eval(z_b)?.0;
        }
    }

    let (mut lo, mut hi) = (z_a, z_b);
    let mut z = if f_a.is_finite() && f_b.is_finite() && f_a != f_b {
        // Secant guess inside the bracket.
        (lo - f_a * (hi - lo) / (f_b - f_a)).clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    let mut last = f64::INFINITY;
    for it in 1..=cfg.max_outer {
        let (f, df, m) = eval(z)?;
        if f.abs() <= cfg.outer_tol {
            return finish(c, g, cfg, z, m, it);
        }
        if f > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        if hi - lo <= 4.0 * f64::EPSILON * z {
            return Err(Error::solver(
                "brs normalization",
                "bracket collapsed before |Φ(Z) - 1| reached the tolerance",
                f.abs(),
                it,
            ));
        }
        let newton = z - f / df;
        z = if newton > lo && newton < hi && f.abs() <= 0.5 * last {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last = f.abs();
    }
    Err(Error::solver(
        "brs normalization",
        "outer iteration cap reached",
        last,
        cfg.max_outer,
    ))
}

fn finish(
    c: &CostModel,
    g: &Grid,
    cfg: &BrsConfig,
    z: f64,
    m: Vec<f64>,
    iterations: usize,
) -> Result<BrsSolution> {
    let sigma = cfg.sigma;
    let pointwise_residual = g
        .nodes()
        .iter()
        .zip(&m)
        .map(|(&x, &mi)| fixed_point_residual(c, z, x, mi, sigma).abs())
        .fold(0.0_f64, f64::max);
    let mass_residual = (g.integrate_values(&m)? - 1.0).abs();
    let field = ScalarField::density(m, g)?;
    let pde_residual = brs_pde_residual(c, &field, sigma, g)?;
    Ok(BrsSolution {
        m: field,
        z,
        pointwise_residual,
        mass_residual,
        pde_residual,
        outer_iterations: iterations,
    })
}

/// Discrete stationary Fokker-Planck residual of a density with drift
/// `∂ₓ[h(x, m(x))] = ∂ₓh + ∂ₘh · m'`.
pub fn brs_pde_residual(c: &CostModel, m: &ScalarField, sigma: f64, g: &Grid) -> Result<f64> {
    let dm = g.gradient_values(m.values())?;
    let drift: Vec<f64> = g
        .nodes()
        .iter()
        .zip(m.values())
        .zip(&dm)
        .map(|((&x, &mi), &d)| c.d_x(x, mi) + c.d_m(x, mi) * d)
        .collect();
    let drift = ScalarField::new(drift, FieldRole::Value, g)?;
    divergence_flux_residual(m, &drift, sigma, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{barrier, power_law, quad_log, CostModel};
    use crate::grid::build_grid;

    fn log_only() -> CostModel {
        quad_log(0.0).unwrap()
    }

    fn constant_cost(c0: f64) -> CostModel {
        CostModel::custom(
            "const",
            move |_, _| c0,
            |_, _| 0.0,
            |_, _| 0.0,
            f64::INFINITY,
            false,
        )
        .unwrap()
    }

    #[test]
    fn pointwise_closed_form_for_log_cost() {
        // m^{1+2/σ²} = 1/Z with σ² = 2, Z = 4.
        let cfg = BrsConfig::with_sigma2(2.0);
        let m = pointwise_density(&log_only(), 4.0, 0.3, 1.0, &cfg).unwrap();
        assert!((m - 0.5).abs() < 1e-13, "{m}");
    }

    #[test]
    fn pointwise_constant_cost() {
        let cfg = BrsConfig::with_sigma2(0.5);
        let (z, c0) = (2.5, 0.7);
        let m = pointwise_density(&constant_cost(c0), z, 0.0, 2.0, &cfg).unwrap();
        let expected = (-2.0 * c0 / 0.5).exp() / z;
        assert!((m - expected).abs() < 1e-15);
    }

    #[test]
    fn pointwise_rejects_bad_z() {
        let cfg = BrsConfig::with_sigma2(1.0);
        assert!(pointwise_density(&log_only(), 0.0, 0.0, 1.0, &cfg).is_err());
        assert!(pointwise_density(&log_only(), -1.0, 0.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn increasing_cost_without_root_fails_to_bracket() {
        // G > 0 everywhere: h decreasing so fast that the Gibbs factor outruns m.
        let c = CostModel::custom(
            "-m²",
            |_, m| -m * m,
            |_, m| -2.0 * m,
            |_, _| 0.0,
            f64::INFINITY,
            false,
        )
        .unwrap();
        let cfg = BrsConfig::with_sigma2(1.0);
        let e = pointwise_density(&c, 1.0, 0.0, 1.0, &cfg).unwrap_err();
        assert!(e.is_solver_failure());
    }

    #[test]
    fn mass_closed_forms() {
        let g = build_grid(0.0, 1.0, 51).unwrap();
        let cfg = BrsConfig::with_sigma2(2.0);
        for z in [0.25, 1.0, 3.0] {
            let phi = mass(&log_only(), z, &g, &cfg).unwrap();
            assert!((phi - z.powf(-0.5)).abs() < 1e-12);
            let dphi = mass_derivative(&log_only(), z, &g, &cfg).unwrap();
            assert!((dphi + 0.5 * z.powf(-1.5)).abs() < 1e-11);
        }
        let g2 = build_grid(-1.0, 2.0, 31).unwrap();
        let flat = constant_cost(0.0);
        for z in [0.5, 4.0] {
            assert!((mass(&flat, z, &g2, &cfg).unwrap() - 3.0 / z).abs() < 1e-12);
            assert!((mass_derivative(&flat, z, &g2, &cfg).unwrap() + 3.0 / (z * z)).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_derivative_matches_finite_difference() {
        let g = build_grid(-2.0, 2.0, 81).unwrap();
        let cfg = BrsConfig::with_sigma2(0.8);
        let costs = [
            quad_log(1.0).unwrap(),
            power_law(3.0, 2.0).unwrap(),
            barrier(2.0, 1.0, 4.0).unwrap(),
        ];
        for c in &costs {
            for z in [0.5, 2.0, 7.0] {
                let d = 1e-6 * z;
                let fd = (mass(c, z + d, &g, &cfg).unwrap() - mass(c, z - d, &g, &cfg).unwrap())
                    / (2.0 * d);
                let an = mass_derivative(c, z, &g, &cfg).unwrap();
                assert!(an < 0.0);
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs(),
                    "{c:?} z={z}: fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn solve_log_cost_gives_unit_normalizer() {
        let g = build_grid(0.0, 1.0, 41).unwrap();
        for s2 in [0.5, 2.0, 7.0] {
            let sol = solve(&log_only(), &g, &BrsConfig::with_sigma2(s2)).unwrap();
            assert!((sol.z - 1.0).abs() < 1e-10);
            assert!(sol.m.values().iter().all(|&m| (m - 1.0).abs() < 1e-10));
        }
    }

    #[test]
    fn solve_flat_cost_gives_uniform_density() {
        let g = build_grid(-1.0, 2.0, 31).unwrap();
        let sol = solve(&constant_cost(0.0), &g, &BrsConfig::with_sigma2(1.0)).unwrap();
        assert!((sol.z - 3.0).abs() < 1e-9);
        assert!(sol
            .m
            .values()
            .iter()
            .all(|&m| (m - 1.0 / 3.0).abs() < 1e-10));
    }

    #[test]
    fn solve_quadratic_log_second_moment() {
        // Whole-line variance (2 + σ²)/(4β); L ≥ 6 standard deviations.
        let (beta, s2): (f64, f64) = (1.0, 2.0);
        let var = (2.0 + s2) / (4.0 * beta);
        let l = 6.0 * var.sqrt() + 0.5;
        let g = build_grid(-l, l, 601).unwrap();
        let sol = solve(&quad_log(beta).unwrap(), &g, &BrsConfig::with_sigma2(s2)).unwrap();
        let second = g
            .integrate_values(
                &g.nodes()
                    .iter()
                    .zip(sol.m.values())
                    .map(|(x, m)| x * x * m)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        assert!((second - var).abs() <= 0.01 * var, "second moment {second}");
        assert!(sol.mass_residual <= 1e-10);
        assert!(sol.pointwise_residual <= 1e-12);
    }

    #[test]
    fn barrier_density_stays_below_cap() {
        let g = build_grid(-1.0, 1.0, 101).unwrap();
        let c = barrier(1.0, 1.0, 2.0).unwrap();
        let sol = solve(&c, &g, &BrsConfig::with_sigma2(0.4)).unwrap();
        assert!(sol.m.values().iter().all(|&m| m < 1.0));
    }

    #[test]
    fn pointwise_density_is_decreasing_in_z() {
        let g = build_grid(-1.0, 1.0, 21).unwrap();
        let c = power_law(10.0, 10.0).unwrap();
        let cfg = BrsConfig::with_sigma2(2.0);
        let ladder: Vec<f64> = (0..8).map(|k| 0.1 * 2f64.powi(k)).collect();
        for &x in g.nodes() {
            let ms: Vec<f64> = ladder
                .iter()
                .map(|&z| pointwise_density(&c, z, x, g.measure(), &cfg).unwrap())
                .collect();
            assert!(ms.windows(2).all(|w| w[1] < w[0]), "x={x} {ms:?}");
        }
    }
}
