//! Execute one scenario and persist its densities, metadata and metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analytic::{self, BarrierAsymptotics, ComparisonRecord, QuadraticMfg};
use crate::brs::{self, BrsConfig, BrsSolution};
use crate::compare::{compare_densities, ComparisonMetrics};
use crate::error::{Error, Result};
use crate::grid::{max_abs_diff, Grid};
use crate::mfg::{self, MfgConfig, MfgSolution};

use super::config::{CostSpec, ScenarioConfig, SolverChoice};

/// Larger damping weights tried, in order, when Picard fails with the configured one.
const DAMPING_LADDER: [f64; 4] = [0.8, 0.9, 0.95, 0.98];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    SolverFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct BrsSummary {
    pub z: f64,
    pub pointwise_residual: f64,
    pub mass_residual: f64,
    pub pde_residual: f64,
    pub outer_iterations: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MfgSummary {
    pub method: mfg::MfgMethod,
    pub lambda: f64,
    pub z: f64,
    pub hjb_residual: f64,
    pub fpe_residual: f64,
    pub mass_residual: f64,
    pub u_mean_residual: f64,
    pub iterations: usize,
    pub variance: f64,
    /// Damping weight the Picard run converged with.
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticSummary {
    pub mfg: Option<QuadraticMfg>,
    pub brs_variance: Option<f64>,
    pub ratio: Option<ComparisonRecord>,
    pub barrier: Option<BarrierAsymptotics>,
}

/// Contents of `<prefix>_meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub status: Status,
    pub error: Option<String>,
    pub solver: SolverChoice,
    pub cost: CostSpec,
    pub cost_description: Option<String>,
    pub sigma2: f64,
    pub domain: super::config::DomainSpec,
    pub brs_config: BrsConfig,
    pub mfg_config: MfgConfig,
    pub brs: Option<BrsSummary>,
    pub mfg: Option<MfgSummary>,
    /// Nested-solver solution reported alongside the Picard one.
    pub mfg_reference: Option<MfgSummary>,
    /// Max-norm distance between the Picard and nested densities.
    pub mfg_methods_max_diff: Option<f64>,
    pub warnings: Vec<String>,
    pub analytic: Option<AnalyticSummary>,
}

/// Solutions of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub grid: Grid,
    pub brs: Option<BrsSolution>,
    /// Primary MFG solution: Picard when it converged, nested otherwise.
    pub mfg: Option<MfgSolution>,
    pub mfg_reference: Option<MfgSolution>,
    pub metrics: Option<ComparisonMetrics>,
    pub metadata: Metadata,
    pub files: Vec<PathBuf>,
}

fn base_metadata(cfg: &ScenarioConfig) -> Metadata {
    Metadata {
        status: Status::Ok,
        error: None,
        solver: cfg.solver,
        cost: cfg.cost,
        cost_description: None,
        sigma2: cfg.sigma2,
        domain: cfg.domain,
        brs_config: cfg.brs_config(),
        mfg_config: cfg.mfg_config(),
        brs: None,
        mfg: None,
        mfg_reference: None,
        mfg_methods_max_diff: None,
        warnings: Vec::new(),
        analytic: analytic_summary(cfg),
    }
}

fn analytic_summary(cfg: &ScenarioConfig) -> Option<AnalyticSummary> {
    match cfg.cost {
        CostSpec::QuadLog { beta } => Some(AnalyticSummary {
            mfg: analytic::mfg_quadratic(beta, cfg.sigma2.sqrt()).ok(),
            brs_variance: analytic::brs_quadratic(beta, cfg.sigma2.sqrt()).ok(),
            ratio: analytic::variance_ratio(beta, cfg.sigma2).ok(),
            barrier: None,
        }),
        CostSpec::Barrier { beta, .. } => Some(AnalyticSummary {
            mfg: None,
            brs_variance: None,
            ratio: None,
            barrier: analytic::barrier_asymptotics(beta, cfg.sigma2).ok(),
        }),
        _ => None,
    }
}

fn brs_summary(s: &BrsSolution, g: &Grid) -> Result<BrsSummary> {
    Ok(BrsSummary {
        z: s.z,
        pointwise_residual: s.pointwise_residual,
        mass_residual: s.mass_residual,
        pde_residual: s.pde_residual,
        outer_iterations: s.outer_iterations,
        variance: crate::compare::moments(s.m.values(), g)?.1,
    })
}

fn mfg_summary(s: &MfgSolution, g: &Grid, damping: Option<f64>) -> Result<MfgSummary> {
    Ok(MfgSummary {
        method: s.method,
        lambda: s.lambda,
        z: s.z,
        hjb_residual: s.hjb_residual,
        fpe_residual: s.fpe_residual,
        mass_residual: s.mass_residual,
        u_mean_residual: s.u_mean_residual,
        iterations: s.iterations,
        variance: crate::compare::moments(s.m.values(), g)?.1,
        damping,
    })
}

/// Picard with the configured damping, then with the larger weights of the
/// damping ladder. Returns the solution and the damping it used.
fn picard_with_retries(
    c: &crate::cost::CostModel,
    g: &Grid,
    cfg: &MfgConfig,
    warnings: &mut Vec<String>,
) -> Result<(MfgSolution, f64)> {
    let mut last = match mfg::solve_picard(c, g, cfg) {
        Ok(s) => return Ok((s, cfg.damping)),
        Err(e) if e.is_solver_failure() => e,
        Err(e) => return Err(e),
    };
    for &w in DAMPING_LADDER.iter().filter(|&&w| w > cfg.damping) {
        warnings.push(format!("picard failed ({last}); retrying with damping {w}"));
        let mut retry = *cfg;
        retry.damping = w;
        match mfg::solve_picard(c, g, &retry) {
            Ok(s) => return Ok((s, w)),
            Err(e) if e.is_solver_failure() => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Run the configured solvers without writing files.
pub fn solve_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let g = cfg.grid()?;
    let c = cfg.cost_model()?;
    let mut meta = base_metadata(cfg);
    meta.cost_description = Some(c.description().to_string());
    let mfg_cfg = cfg.mfg_config();

    let brs = if cfg.solver.runs_brs() {
        let s = brs::solve(&c, &g, &cfg.brs_config())?;
        meta.brs = Some(brs_summary(&s, &g)?);
        Some(s)
    } else {
        None
    };

    let (mfg, reference) = match cfg.solver {
        SolverChoice::Brs => (None, None),
        SolverChoice::MfgPicard => {
            let (s, w) = picard_with_retries(&c, &g, &mfg_cfg, &mut meta.warnings)?;
            meta.mfg = Some(mfg_summary(&s, &g, Some(w))?);
            (Some(s), None)
        }
        SolverChoice::MfgNested => {
            let s = mfg::solve_nested(&c, &g, &mfg_cfg)?;
            meta.mfg = Some(mfg_summary(&s, &g, None)?);
            (Some(s), None)
        }
        SolverChoice::Both => {
            let picard = picard_with_retries(&c, &g, &mfg_cfg, &mut meta.warnings);
            let nested = mfg::solve_nested(&c, &g, &mfg_cfg);
            match (picard, nested) {
                (Ok((p, w)), Ok(n)) => {
                    meta.mfg = Some(mfg_summary(&p, &g, Some(w))?);
                    meta.mfg_reference = Some(mfg_summary(&n, &g, None)?);
                    meta.mfg_methods_max_diff = Some(max_abs_diff(p.m.values(), n.m.values()));
                    (Some(p), Some(n))
                }
                (Ok((p, w)), Err(e)) => {
                    meta.warnings.push(format!("nested solver failed: {e}"));
                    meta.mfg = Some(mfg_summary(&p, &g, Some(w))?);
                    (Some(p), None)
                }
                (Err(e), Ok(n)) => {
                    meta.warnings.push(format!(
                        "picard failed ({e}); nested solution reported as primary"
                    ));
                    meta.mfg = Some(mfg_summary(&n, &g, None)?);
                    (Some(n), None)
                }
                (Err(e), Err(_)) => return Err(e),
            }
        }
    };

    let metrics = match (&brs, &mfg) {
        (Some(b), Some(m)) => Some(compare_densities(
            b.m.values(),
            m.m.values(),
            &g,
            cfg.split_point()?,
        )?),
        _ => None,
    };

    Ok(ScenarioOutcome {
        grid: g,
        brs,
        mfg,
        mfg_reference: reference,
        metrics,
        metadata: meta,
        files: Vec::new(),
    })
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Density CSV: `x` then whichever of `m_brs`, `m_mfg`, `u_mfg` exist.
pub fn density_csv(out: &ScenarioOutcome) -> String {
    let mut header = vec!["x"];
    let mut cols: Vec<&[f64]> = Vec::new();
    if let Some(b) = &out.brs {
        header.push("m_brs");
        cols.push(b.m.values());
    }
    if let Some(m) = &out.mfg {
        header.push("m_mfg");
        header.push("u_mfg");
        cols.push(m.m.values());
        cols.push(m.u.values());
    }
    let mut s = header.join(",");
    s.push('\n');
    for (i, x) in out.grid.nodes().iter().enumerate() {
        let _ = write!(s, "{x:.16e}");
        for col in &cols {
            let _ = write!(s, ",{:.16e}", col[i]);
        }
        s.push('\n');
    }
    s
}

/// Solve a scenario and write its files. On failure the metadata file records
/// the status and error, and any other output of this prefix is removed.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let density = cfg.path_with_suffix("_density.csv");
    let meta_path = cfg.path_with_suffix("_meta.json");
    let metrics_path = cfg.path_with_suffix("_metrics.json");

    let written = solve_scenario(cfg).and_then(|mut out| {
        write_atomic(&density, density_csv(&out).as_bytes())?;
        out.files.push(density.clone());
        if let (SolverChoice::Both, Some(m)) = (cfg.solver, &out.metrics) {
            write_atomic(&metrics_path, &to_json(m)?)?;
            out.files.push(metrics_path.clone());
        } else {
            let _ = fs::remove_file(&metrics_path);
        }
        write_atomic(&meta_path, &to_json(&out.metadata)?)?;
        out.files.push(meta_path.clone());
        Ok(out)
    });

    match written {
        Ok(out) => Ok(out),
        Err(e) => {
            for p in [&density, &metrics_path] {
                let _ = fs::remove_file(p);
            }
            let mut meta = base_metadata(cfg);
            meta.status = if matches!(e, Error::Config(_)) {
                Status::ConfigError
            } else {
                Status::SolverFailure
            };
            meta.error = Some(e.to_string());
            if let Ok(bytes) = to_json(&meta) {
                let _ = write_atomic(&meta_path, &bytes);
            }
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::parse_config;

    fn config(dir: &Path, body: &str) -> ScenarioConfig {
        let text = format!(
            "sigma2 = 2.0\noutput_prefix = \"{}\"\n{body}",
            dir.join("run").display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn writes_all_files_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            dir.path(),
            "[domain]\nx_lo = -4.0\nx_hi = 4.0\nn = 161\n[cost]\nkind = \"quad_log\"\nbeta = 1.0\n",
        );
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.files.len(), 3);
        let csv = fs::read_to_string(&out.files[0]).unwrap();
        assert!(csv.starts_with("x,m_brs,m_mfg,u_mfg\n"));
        assert_eq!(csv.lines().count(), 162);
        let first = fs::read(&out.files[0]).unwrap();
        let meta1 = fs::read(cfg.path_with_suffix("_meta.json")).unwrap();
        run_scenario(&cfg).unwrap();
        assert_eq!(first, fs::read(&out.files[0]).unwrap());
        assert_eq!(meta1, fs::read(cfg.path_with_suffix("_meta.json")).unwrap());
        let meta: serde_json::Value = serde_json::from_slice(&meta1).unwrap();
        assert_eq!(meta["status"], "ok");
        assert!(meta["analytic"]["ratio"]["a1"].as_f64().is_some());
    }

    #[test]
    fn brs_only_omits_mfg_columns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            dir.path(),
            "solver = \"brs\"\n[domain]\nx_lo = -1.0\nx_hi = 1.0\nn = 21\n[cost]\nkind = \"power_law\"\nalpha = 2.0\nbeta = 1.0\n",
        );
        let out = run_scenario(&cfg).unwrap();
        let csv = fs::read_to_string(&out.files[0]).unwrap();
        assert!(csv.starts_with("x,m_brs\n"));
        assert!(!cfg.path_with_suffix("_metrics.json").exists());
    }

    #[test]
    fn solver_failure_leaves_only_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            dir.path(),
            "solver = \"mfg_picard\"\n[domain]\nx_lo = -1.0\nx_hi = 1.0\nn = 21\n\
             [cost]\nkind = \"quad_log\"\nbeta = 1.0\n[tolerances]\nmax_picard = 1\ndamping = 0.99\n",
        );
        fs::write(cfg.path_with_suffix("_density.csv"), "stale").unwrap();
        let e = run_scenario(&cfg).unwrap_err();
        assert!(e.is_solver_failure());
        assert!(!cfg.path_with_suffix("_density.csv").exists());
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(cfg.path_with_suffix("_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["status"], "solver_failure");
    }
}
