//! Distances, moments and well-occupancy masses of a BRS/MFG density pair.

use serde::Serialize;

use crate::brs::BrsSolution;
use crate::cost::Potential;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mfg::MfgSolution;

/// Comparison of one BRS and one MFG density on a shared grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonMetrics {
    /// `∫ |m_brs - m_mfg|`.
    pub l1_distance: f64,
    pub linf_distance: f64,
    pub variance_brs: f64,
    pub variance_mfg: f64,
    /// `variance_brs / variance_mfg`.
    pub variance_ratio: f64,
    /// Point separating the left and right mass halves.
    pub split: f64,
    pub mass_left_brs: f64,
    pub mass_right_brs: f64,
    pub mass_left_mfg: f64,
    pub mass_right_mfg: f64,
}

/// Mean and variance `∫x²m - (∫xm)²` of a density.
pub fn moments(m: &[f64], g: &Grid) -> Result<(f64, f64)> {
    let x = g.nodes();
    let first: Vec<f64> = x.iter().zip(m).map(|(x, m)| x * m).collect();
    let second: Vec<f64> = x.iter().zip(m).map(|(x, m)| x * x * m).collect();
    let mean = g.integrate_values(&first)?;
    Ok((mean, g.integrate_values(&second)? - mean * mean))
}

/// Trapezoid masses left and right of `split`, with the cell containing
/// `split` divided using the linear interpolant.
pub fn split_masses(m: &[f64], g: &Grid, split: f64) -> Result<(f64, f64)> {
    g.check_len(m.len())?;
    let total = g.integrate_values(m)?;
    if split <= g.x_lo() {
        return Ok((0.0, total));
    }
    if split >= g.x_hi() {
        return Ok((total, 0.0));
    }
    let dx = g.dx();
    let k = (((split - g.x_lo()) / dx).floor() as usize).min(g.len() - 2);
    let x = g.nodes();
    let mut left = 0.0;
    for i in 0..k {
        left += 0.5 * dx * (m[i] + m[i + 1]);
    }
    let t = (split - x[k]) / dx;
    let m_s = m[k] + t * (m[k + 1] - m[k]);
    left += 0.5 * (split - x[k]) * (m[k] + m_s);
    Ok((left, total - left))
}

/// Location of the largest value of `F₁` strictly between two well centers,
/// refined by golden-section search around the best of 2001 samples.
pub fn well_split_point(f1: &Potential, center_a: f64, center_b: f64) -> f64 {
    let (lo, hi) = if center_a <= center_b {
        (center_a, center_b)
    } else {
        (center_b, center_a)
    };
    let samples = 2000;
    let h = (hi - lo) / samples as f64;
    let best = (1..samples)
        .map(|i| lo + i as f64 * h)
        .max_by(|a, b| f1.value(*a).total_cmp(&f1.value(*b)))
        .unwrap_or(0.5 * (lo + hi));
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f1.value(c) > f1.value(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Metrics with the mass split at the domain midpoint.
pub fn compare(brs: &BrsSolution, mfg: &MfgSolution, g: &Grid) -> Result<ComparisonMetrics> {
    compare_with_split(brs, mfg, g, 0.5 * (g.x_lo() + g.x_hi()))
}

/// Metrics with the mass halves split at `split`.
pub fn compare_with_split(
    brs: &BrsSolution,
    mfg: &MfgSolution,
    g: &Grid,
    split: f64,
) -> Result<ComparisonMetrics> {
    compare_densities(brs.m.values(), mfg.m.values(), g, split)
}

/// Metrics for two raw density vectors on `g`.
pub fn compare_densities(
    m_brs: &[f64],
    m_mfg: &[f64],
    g: &Grid,
    split: f64,
) -> Result<ComparisonMetrics> {
    if m_brs.len() != g.len() || m_mfg.len() != g.len() {
        return Err(Error::contract(format!(
            "densities of length {} and {} do not live on a grid of {} nodes",
            m_brs.len(),
            m_mfg.len(),
            g.len()
        )));
    }
    let diff: Vec<f64> = m_brs
        .iter()
        .zip(m_mfg)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let l1_distance = g.integrate_values(&diff)?;
    let linf_distance = diff.iter().fold(0.0_f64, |a, &d| a.max(d));
    let (_, variance_brs) = moments(m_brs, g)?;
    let (_, variance_mfg) = moments(m_mfg, g)?;
    let (mass_left_brs, mass_right_brs) = split_masses(m_brs, g, split)?;
    let (mass_left_mfg, mass_right_mfg) = split_masses(m_mfg, g, split)?;
    Ok(ComparisonMetrics {
        l1_distance,
        linf_distance,
        variance_brs,
        variance_mfg,
        variance_ratio: variance_brs / variance_mfg,
        split,
        mass_left_brs,
        mass_right_brs,
        mass_left_mfg,
        mass_right_mfg,
    })
}
