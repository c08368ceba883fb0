//! Scenario file schema.
//!
//! ```toml
//! sigma2 = 2.0
//! solver = "both"            # brs | mfg_picard | mfg_nested | both
//! output_prefix = "out/quad"
//!
//! [domain]
//! x_lo = -8.0
//! x_hi = 8.0
//! n = 801
//!
//! [cost]
//! kind = "quad_log"          # quad_log | power_law | barrier | double_well_log
//! beta = 1.0
//!
//! [tolerances]               # optional, every field optional
//! damping = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brs::BrsConfig;
use crate::compare::well_split_point;
use crate::cost::{barrier, double_well, potential_plus_log, power_law, quad_log, CostModel, Well};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid};
use crate::mfg::MfgConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n: usize,
}

/// Cost catalog entry, tagged by `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    QuadLog {
        beta: f64,
    },
    PowerLaw {
        alpha: f64,
        beta: f64,
    },
    Barrier {
        m_max: f64,
        beta: f64,
    },
    DoubleWellLog {
        depth1: f64,
        width1: f64,
        center1: f64,
        depth2: f64,
        width2: f64,
        center2: f64,
    },
}

impl CostSpec {
    pub fn build(&self, g: &Grid) -> Result<CostModel> {
        match *self {
            CostSpec::QuadLog { beta } => quad_log(beta),
            CostSpec::PowerLaw { alpha, beta } => power_law(alpha, beta),
            CostSpec::Barrier { m_max, beta } => barrier(m_max, beta, g.measure()),
            CostSpec::DoubleWellLog {
                depth1,
                width1,
                center1,
                depth2,
                width2,
                center2,
            } => {
                for (name, c) in [("center1", center1), ("center2", center2)] {
                    if !(c > g.x_lo() && c < g.x_hi()) {
                        return Err(Error::config(format!(
                            "cost.{name} = {c} must lie inside the domain [{}, {}]",
                            g.x_lo(),
                            g.x_hi()
                        )));
                    }
                }
                let f1 = double_well(
                    Well::new(depth1, width1, center1),
                    Well::new(depth2, width2, center2),
                )?;
                Ok(potential_plus_log(f1))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CostSpec::QuadLog { .. } => "quad_log",
            CostSpec::PowerLaw { .. } => "power_law",
            CostSpec::Barrier { .. } => "barrier",
            CostSpec::DoubleWellLog { .. } => "double_well_log",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            CostSpec::QuadLog { beta }
            | CostSpec::PowerLaw { beta, .. }
            | CostSpec::Barrier { beta, .. } => Some(beta),
            CostSpec::DoubleWellLog { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Brs,
    MfgPicard,
    MfgNested,
    #[default]
    Both,
}

impl SolverChoice {
    pub fn runs_brs(self) -> bool {
        matches!(self, SolverChoice::Brs | SolverChoice::Both)
    }
}

/// Optional overrides of the solver defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub damping: Option<f64>,
    pub picard_tol: Option<f64>,
    pub newton_tol: Option<f64>,
    pub bisect_tol: Option<f64>,
    pub max_picard: Option<usize>,
    pub max_newton: Option<usize>,
    pub eps_regularization: Option<f64>,
    pub brs_inner_tol: Option<f64>,
    pub brs_outer_tol: Option<f64>,
    pub brs_max_inner: Option<usize>,
    pub brs_max_outer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSpec,
    pub sigma2: f64,
    pub cost: CostSpec,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output files are `<prefix>_density.csv`, `<prefix>_meta.json` and
    /// `<prefix>_metrics.json`.
    pub output_prefix: PathBuf,
}

impl ScenarioConfig {
    /// Check every field; returns the first problem found.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::config(format!(
                "sigma2 must be positive and finite (got {})",
                self.sigma2
            )));
        }
        let g = self.grid()?;
        self.cost.build(&g)?;
        self.brs_config().validate()?;
        self.mfg_config().validate()?;
        if self.output_prefix.as_os_str().is_empty() {
            return Err(Error::config("output_prefix must not be empty"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let d = self.domain;
        build_grid(d.x_lo, d.x_hi, d.n).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("domain: {msg}")),
            other => other,
        })
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        self.cost.build(&self.grid()?)
    }

    pub fn brs_config(&self) -> BrsConfig {
        let t = &self.tolerances;
        let mut c = BrsConfig::with_sigma2(self.sigma2);
        if let Some(v) = t.brs_inner_tol {
            c.inner_tol = v;
        }
        if let Some(v) = t.brs_outer_tol {
            c.outer_tol = v;
        }
        if let Some(v) = t.brs_max_inner {
            c.max_inner = v;
        }
        if let Some(v) = t.brs_max_outer {
            c.max_outer = v;
        }
        c
    }

    pub fn mfg_config(&self) -> MfgConfig {
        let t = &self.tolerances;
        let mut c = MfgConfig::with_sigma2(self.sigma2);
        if let Some(v) = t.damping {
            c.damping = v;
        }
        if let Some(v) = t.picard_tol {
            c.picard_tol = v;
        }
        if let Some(v) = t.newton_tol {
            c.newton_tol = v;
        }
        if let Some(v) = t.bisect_tol {
            c.bisect_tol = v;
        }
        if let Some(v) = t.max_picard {
            c.max_picard = v;
        }
        if let Some(v) = t.max_newton {
            c.max_newton = v;
        }
        if let Some(v) = t.eps_regularization {
            c.eps_regularization = v;
        }
        c
    }

    /// Where the left/right masses are split: the potential's local maximum
    /// between the wells for double wells, the domain midpoint otherwise.
    pub fn split_point(&self) -> Result<f64> {
        let g = self.grid()?;
        match self.cost {
            CostSpec::DoubleWellLog {
                center1, center2, ..
            } => {
                let c = self.cost.build(&g)?;
                let f1 = c
                    .potential()
                    .ok_or_else(|| Error::contract("double-well cost lost its potential"))?;
                Ok(well_split_point(f1, center1, center2))
            }
            _ => Ok(0.5 * (g.x_lo() + g.x_hi())),
        }
    }

    pub fn path_with_suffix(&self, suffix: &str) -> PathBuf {
        let mut s = self.output_prefix.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    }
}

/// Parse and validate a scenario from TOML text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text)
        .map_err(|e| Error::config(e.message().to_string() + &span_note(&e)))?;
    cfg.validate()?;
    Ok(cfg)
}

fn span_note(e: &toml::de::Error) -> String {
    e.span()
        .map(|s| format!(" (at bytes {}..{})", s.start, s.end))
        .unwrap_or_default()
}

/// Read, parse and validate a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
