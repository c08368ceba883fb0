//! One-parameter sweeps over a base scenario, rows solved in parallel.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic;
use crate::error::{Error, Result};

use super::config::{CostSpec, ScenarioConfig};
use super::run::{run_scenario, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    Sigma2,
    MMax,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Sigma2 => "sigma2",
            SweepParam::MMax => "m_max",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "sigma2" => Ok(SweepParam::Sigma2),
            "m_max" => Ok(SweepParam::MMax),
            other => Err(Error::config(format!(
                "unknown sweep parameter {other:?} (expected beta, sigma2 or m_max)"
            ))),
        }
    }
}

/// One sweep row; solver fields are empty when the row failed.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub variance_brs: Option<f64>,
    pub variance_mfg: Option<f64>,
    pub ratio: Option<f64>,
    /// `a2/a1` of the whole-line formulas, for `quad_log` costs.
    pub analytic_ratio: Option<f64>,
    pub brs_iterations: Option<usize>,
    pub mfg_iterations: Option<usize>,
    pub error: Option<String>,
}

/// Copy of `base` with `param` set to `value` and a row-specific output prefix.
pub fn row_config(
    base: &ScenarioConfig,
    param: SweepParam,
    value: f64,
    index: usize,
) -> Result<ScenarioConfig> {
    let mut cfg = base.clone();
    match (param, &mut cfg.cost) {
        (SweepParam::Sigma2, _) => cfg.sigma2 = value,
        (SweepParam::Beta, CostSpec::QuadLog { beta })
        | (SweepParam::Beta, CostSpec::PowerLaw { beta, .. })
        | (SweepParam::Beta, CostSpec::Barrier { beta, .. }) => *beta = value,
        (SweepParam::MMax, CostSpec::Barrier { m_max, .. }) => *m_max = value,
        (p, cost) => {
            return Err(Error::config(format!(
                "cost kind {} has no parameter {}",
                cost.kind(),
                p.name()
            )))
        }
    }
    cfg.output_prefix = base.path_with_suffix(&format!("_{}_{index}", param.name()));
    Ok(cfg)
}

fn solve_row(base: &ScenarioConfig, param: SweepParam, value: f64, index: usize) -> SweepRow {
    let mut row = SweepRow {
        value,
        variance_brs: None,
        variance_mfg: None,
        ratio: None,
        analytic_ratio: None,
        brs_iterations: None,
        mfg_iterations: None,
        error: None,
    };
    let cfg = match row_config(base, param, value, index) {
        Ok(c) => c,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    if let CostSpec::QuadLog { beta } = cfg.cost {
        row.analytic_ratio = analytic::variance_ratio(beta, cfg.sigma2)
            .ok()
            .map(|r| r.ratio);
    }
    match run_scenario(&cfg) {
        Ok(out) => {
            let meta = &out.metadata;
            row.variance_brs = meta.brs.as_ref().map(|b| b.variance);
            row.variance_mfg = meta.mfg.as_ref().map(|m| m.variance);
            row.brs_iterations = meta.brs.as_ref().map(|b| b.outer_iterations);
            row.mfg_iterations = meta.mfg.as_ref().map(|m| m.iterations);
            row.ratio = match (row.variance_brs, row.variance_mfg) {
                (Some(b), Some(m)) => Some(b / m),
                _ => None,
            };
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Run every value of the sweep; failed rows carry their error and the sweep continues.
pub fn sweep(base: &ScenarioConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    base.validate()?;
    Ok(values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| solve_row(base, param, v, i))
        .collect())
}

/// Path of the sweep table for `base` and `param`.
pub fn table_path(base: &ScenarioConfig, param: SweepParam) -> PathBuf {
    base.path_with_suffix(&format!("_sweep_{}.csv", param.name()))
}

fn cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// CSV table of a sweep.
pub fn table_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{},variance_brs,variance_mfg,ratio,analytic_ratio,brs_iterations,mfg_iterations,error\n",
        param.name()
    );
    for r in rows {
        let err = r
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "'")))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{:.16e},{},{},{},{},{},{},{}",
            r.value,
            real(r.variance_brs),
            real(r.variance_mfg),
            real(r.ratio),
            real(r.analytic_ratio),
            cell(r.brs_iterations),
            cell(r.mfg_iterations),
            err
        );
    }
    s
}

/// Run a sweep and write its table atomically.
pub fn run_sweep(
    base: &ScenarioConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<(Vec<SweepRow>, PathBuf)> {
    let rows = sweep(base, param, values)?;
    let path = table_path(base, param);
    write_atomic(&path, table_csv(param, &rows).as_bytes())?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::config::parse_config;

    #[test]
    fn param_names_round_trip() {
        for p in [SweepParam::Beta, SweepParam::Sigma2, SweepParam::MMax] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("alpha".parse::<SweepParam>().is_err());
    }

    #[test]
    fn single_row_matches_run() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "sigma2 = 2.0\noutput_prefix = \"{}\"\n[domain]\nx_lo = -4.0\nx_hi = 4.0\nn = 121\n\
             [cost]\nkind = \"quad_log\"\nbeta = 1.0\n",
            dir.path().join("s").display()
        );
        let base = parse_config(&text).unwrap();
        let (rows, path) = run_sweep(&base, SweepParam::Beta, &[1.0]).unwrap();
        assert_eq!(rows.len(), 1);
        let direct = run_scenario(&base).unwrap();
        assert_eq!(
            rows[0].variance_brs,
            direct.metadata.brs.as_ref().map(|b| b.variance)
        );
        assert_eq!(
            rows[0].variance_mfg,
            direct.metadata.mfg.as_ref().map(|m| m.variance)
        );
        assert!((rows[0].analytic_ratio.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 2);
    }

    #[test]
    fn bad_rows_do_not_stop_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "sigma2 = 2.0\nsolver = \"brs\"\noutput_prefix = \"{}\"\n[domain]\nx_lo = -1.0\nx_hi = 1.0\nn = 41\n\
             [cost]\nkind = \"barrier\"\nm_max = 10.0\nbeta = 1.0\n",
            dir.path().join("b").display()
        );
        let base = parse_config(&text).unwrap();
        let rows = sweep(&base, SweepParam::MMax, &[0.1, 20.0]).unwrap();
        assert!(rows[0].error.is_some());
        assert!(rows[1].error.is_none() && rows[1].variance_brs.is_some());
        assert!(sweep(&base, SweepParam::MMax, &[]).is_err());
    }
}
