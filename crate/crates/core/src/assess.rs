//! Clustering accuracy and model assessment: Rand index, MAE and LPML.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GridCounts, PointPattern};
use crate::sampler::PosteriorDraws;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub lpml: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rand_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_point_cpo: Option<Vec<f64>>,
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Fraction of item pairs on which two labelings agree (both together or
/// both apart). Labels are compared by identity only.
pub fn rand_index<A, B>(z1: &[A], z2: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash + Copy,
    B: Eq + std::hash::Hash + Copy,
{
    if z1.len() != z2.len() {
        return Err(Error::Domain(format!("label vectors differ in length ({} vs {})", z1.len(), z2.len())));
    }
    let n = z1.len() as u64;
    if n < 2 {
        return Err(Error::Domain("the Rand index needs at least two items".into()));
    }
    let mut joint: HashMap<(A, B), u64> = HashMap::new();
    let mut left: HashMap<A, u64> = HashMap::new();
    let mut right: HashMap<B, u64> = HashMap::new();
    for (&a, &b) in z1.iter().zip(z2) {
        *joint.entry((a, b)).or_default() += 1;
        *left.entry(a).or_default() += 1;
        *right.entry(b).or_default() += 1;
    }
    let together_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let together_left: u64 = left.values().map(|&c| pairs(c)).sum();
    let together_right: u64 = right.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // Pairs apart in both = total - (together in either).
    let apart_both = total + together_both - together_left - together_right;
    Ok((together_both + apart_both) as f64 / total as f64)
}

/// Mean absolute deviation between per-cell estimates and observed counts.
pub fn mae(estimated: &[f64], counts: &GridCounts) -> Result<f64> {
    if estimated.len() != counts.n_cells() {
        return Err(Error::Domain(format!(
            "{} estimates for a grid of {} cells",
            estimated.len(),
            counts.n_cells()
        )));
    }
    let total: f64 = estimated
        .iter()
        .zip(counts.counts())
        .map(|(e, &c)| (e - c as f64).abs())
        .sum();
    Ok(total / estimated.len() as f64)
}

/// Monte Carlo LPML pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lpml {
    pub lpml: f64,
    /// `Σ_j log λ̃(s_j)`.
    pub log_intensity_sum: f64,
    /// `∫ λ̄(u) du` over the unit square.
    pub integral: f64,
    /// Per-cell harmonic-mean point intensity `λ̃`.
    pub harmonic_intensity: Vec<f64>,
}

impl Lpml {
    /// Per-point terms `log λ̃(s_j) - integral / ℓ`; they sum to the LPML.
    pub fn per_point_cpo(&self, cells: &[usize]) -> Vec<f64> {
        let share = self.integral / cells.len().max(1) as f64;
        cells.iter().map(|&c| self.harmonic_intensity[c].ln() - share).collect()
    }
}

/// Harmonic means of point-level intensity per cell and the integral term.
fn lpml_parts(draws: &PosteriorDraws, grid: &GridCounts) -> Result<(Vec<f64>, f64)> {
    if draws.n != grid.n_cells() || draws.resolution != grid.resolution() {
        return Err(Error::Domain(format!(
            "draws fitted at resolution {} but grid has resolution {}",
            draws.resolution,
            grid.resolution()
        )));
    }
    if draws.is_empty() {
        return Err(Error::Domain("no stored draws".into()));
    }
    let area = grid.cell_area();
    let n = grid.n_cells();
    let mut inv_sum = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for d in &draws.draws {
        for i in 0..n {
            let lambda = d.cell_lambda(i);
            if lambda.is_nan() || lambda <= 0.0 {
                return Err(Error::Numerical {
                    message: format!("non-positive intensity at cell {i}"),
                    achieved: lambda,
                });
            }
            inv_sum[i] += area / lambda;
            sum[i] += lambda;
        }
    }
    let b = draws.len() as f64;
    let harmonic = inv_sum.iter().map(|s| b / s).collect();
    // Piecewise-constant surface: the integral over each cell is the cell-count
    // intensity itself.
    let integral = sum.iter().map(|s| s / b).sum();
    Ok((harmonic, integral))
}

/// LPML from an explicit point pattern.
pub fn lpml(points: &PointPattern, draws: &PosteriorDraws, grid: &GridCounts) -> Result<(Lpml, Vec<f64>)> {
    let (harmonic_intensity, integral) = lpml_parts(draws, grid)?;
    let cells: Vec<usize> = points.points.iter().map(|&(x, y)| grid.cell_of(x, y)).collect();
    let log_intensity_sum = cells.iter().map(|&c| harmonic_intensity[c].ln()).sum::<f64>();
    let out = Lpml { lpml: log_intensity_sum - integral, log_intensity_sum, integral, harmonic_intensity };
    let cpo = out.per_point_cpo(&cells);
    Ok((out, cpo))
}

/// LPML when only the binned counts are available. Every point in a cell
/// shares that cell's harmonic intensity, so this equals [`lpml`] on any
/// pattern that bins to `grid`.
pub fn lpml_from_counts(draws: &PosteriorDraws, grid: &GridCounts) -> Result<Lpml> {
    let (harmonic_intensity, integral) = lpml_parts(draws, grid)?;
    let log_intensity_sum = grid
        .counts()
        .iter()
        .zip(&harmonic_intensity)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, h)| c as f64 * h.ln())
        .sum::<f64>();
    Ok(Lpml { lpml: log_intensity_sum - integral, log_intensity_sum, integral, harmonic_intensity })
}
