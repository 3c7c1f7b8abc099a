//! Posterior summaries: least-squares (Dahl) clustering, posterior-mean
//! intensities and the posterior on the number of occupied clusters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{Draw, PosteriorDraws};

/// Default cap on the number of cells for which the co-clustering matrix is
/// built. The packed matrix needs `2n(n-1)` bytes.
pub const DEFAULT_DAHL_MAX_CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DahlOptions {
    pub max_cells: usize,
    /// Use every `thin`-th draw for the co-clustering matrix and the search.
    pub thin: usize,
}

impl Default for DahlOptions {
    fn default() -> Self {
        Self { max_cells: DEFAULT_DAHL_MAX_CELLS, thin: 1 }
    }
}

/// Mean membership matrix `B̄`, held as exact co-clustering counts over the
/// strict upper triangle. `B̄(i, j) = count(i, j) / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMean {
    n: usize,
    m: u32,
    counts: Vec<u32>,
    sum_sq: i128,
}

#[inline]
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Calls `f(i, j)` for every co-clustered pair `i < j` of a draw.
fn for_each_coclustered_pair(draw: &Draw, mut f: impl FnMut(usize, usize)) {
    for block in draw.blocks() {
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[a + 1..] {
                f(i, j);
            }
        }
    }
}

impl MembershipMean {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of draws averaged.
    pub fn n_draws(&self) -> u32 {
        self.m
    }

    /// Number of draws in which `i` and `j` share a cluster.
    pub fn count(&self, i: usize, j: usize) -> u32 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => self.m,
            std::cmp::Ordering::Less => self.counts[packed_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.counts[packed_index(self.n, j, i)],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.m as f64
    }

    /// `m² · Σ_{i,j} (B(i,j) - B̄(i,j))²` for one draw, in exact integers.
    pub fn scaled_distance(&self, draw: &Draw) -> i128 {
        let m = self.m as i128;
        let mut linear: i128 = 0;
        for_each_coclustered_pair(draw, |i, j| {
            linear += m - 2 * self.counts[packed_index(self.n, i, j)] as i128;
        });
        2 * (self.sum_sq + m * linear)
    }

    /// Squared Frobenius distance between a draw's membership matrix and `B̄`.
    pub fn distance(&self, draw: &Draw) -> f64 {
        let m = self.m as f64;
        self.scaled_distance(draw) as f64 / (m * m)
    }
}

fn selected_indices(draws: &PosteriorDraws, opts: &DahlOptions) -> Result<Vec<usize>> {
    if draws.is_empty() {
        return Err(Error::Domain("no stored draws to summarize".into()));
    }
    if opts.thin == 0 {
        return Err(Error::Config("Dahl thinning must be at least 1".into()));
    }
    if draws.n > opts.max_cells {
        return Err(Error::Capability(format!(
            "co-clustering matrix for {} cells exceeds the limit of {} cells; \
             lower the grid resolution or raise the Dahl cell limit",
            draws.n, opts.max_cells
        )));
    }
    Ok((0..draws.len()).step_by(opts.thin).collect())
}

/// Averages membership matrices block by block, never materialising one
/// matrix per draw.
pub fn coclustering_mean(draws: &PosteriorDraws, opts: &DahlOptions) -> Result<MembershipMean> {
    let idx = selected_indices(draws, opts)?;
    let n = draws.n;
    let mut counts = vec![0u32; n * n.saturating_sub(1) / 2];
    for &d in &idx {
        for_each_coclustered_pair(&draws.draws[d], |i, j| counts[packed_index(n, i, j)] += 1);
    }
    let sum_sq = counts.iter().map(|&c| (c as i128) * (c as i128)).sum();
    Ok(MembershipMean { n, m: idx.len() as u32, counts, sum_sq })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DahlChoice {
    /// Position of the selected draw among the stored draws.
    pub iteration: usize,
    pub distance: f64,
    pub z: Vec<u32>,
    pub lambdas: Vec<f64>,
}

/// Picks the draw closest to `B̄` in squared distance; ties go to the
/// earliest draw.
pub fn dahl_select(draws: &PosteriorDraws, mean: &MembershipMean, opts: &DahlOptions) -> Result<DahlChoice> {
    let idx = selected_indices(draws, opts)?;
    if mean.n != draws.n {
        return Err(Error::Domain("membership mean built for a different grid".into()));
    }
    let mut best: Option<(i128, usize)> = None;
    for d in idx {
        let dist = mean.scaled_distance(&draws.draws[d]);
        if best.is_none_or(|(b, _)| dist < b) {
            best = Some((dist, d));
        }
    }
    let (scaled, iteration) = best.expect("at least one draw");
    let m = mean.m as f64;
    let draw = &draws.draws[iteration];
    Ok(DahlChoice { iteration, distance: scaled as f64 / (m * m), z: draw.z.clone(), lambdas: draw.lambdas.clone() })
}

/// `E[λ_{z_i}]` per cell on the count-per-cell scale.
pub fn posterior_mean_intensity(draws: &PosteriorDraws) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::Domain("no stored draws to summarize".into()));
    }
    let mut acc = vec![0.0; draws.n];
    for d in &draws.draws {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += d.cell_lambda(i);
        }
    }
    let m = draws.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KPosterior {
    pub histogram: BTreeMap<usize, usize>,
    /// Most frequent cluster count; the smaller count wins ties.
    pub mode: usize,
}

pub fn k_posterior(draws: &PosteriorDraws) -> Result<KPosterior> {
    if draws.is_empty() {
        return Err(Error::Domain("no stored draws to summarize".into()));
    }
    let mut histogram = BTreeMap::new();
    for d in &draws.draws {
        *histogram.entry(d.n_clusters()).or_insert(0) += 1;
    }
    let mode = histogram
        .iter()
        .fold((0, 0), |(bk, bc), (&k, &c)| if c > bc { (k, c) } else { (bk, bc) })
        .0;
    Ok(KPosterior { histogram, mode })
}

/// Everything reported for a fitted grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub resolution: usize,
    pub n_draws: usize,
    pub dahl_iteration: usize,
    pub dahl_distance: f64,
    /// 1-based labels of the selected draw.
    pub dahl_z: Vec<u32>,
    pub dahl_lambdas: Vec<f64>,
    pub dahl_cluster_sizes: Vec<usize>,
    /// Posterior-mean expected count per cell.
    pub mean_intensity: Vec<f64>,
    /// Posterior-mean intensity per unit area.
    pub mean_intensity_per_area: Vec<f64>,
    pub k_histogram: BTreeMap<usize, usize>,
    pub k_mode: usize,
}

impl FitSummary {
    /// Intensity of the Dahl draw at each cell, count scale.
    pub fn dahl_intensity(&self) -> Vec<f64> {
        self.dahl_z.iter().map(|&z| self.dahl_lambdas[z as usize - 1]).collect()
    }
}

pub fn summarize(draws: &PosteriorDraws, opts: &DahlOptions) -> Result<FitSummary> {
    let mean = coclustering_mean(draws, opts)?;
    let choice = dahl_select(draws, &mean, opts)?;
    let mean_intensity = posterior_mean_intensity(draws)?;
    let area = draws.cell_area();
    let k = k_posterior(draws)?;
    let mut sizes = vec![0; choice.lambdas.len()];
    for &z in &choice.z {
        sizes[z as usize] += 1;
    }
    Ok(FitSummary {
        resolution: draws.resolution,
        n_draws: draws.len(),
        dahl_iteration: choice.iteration,
        dahl_distance: choice.distance,
        dahl_z: choice.z.iter().map(|z| z + 1).collect(),
        dahl_lambdas: choice.lambdas,
        dahl_cluster_sizes: sizes,
        mean_intensity_per_area: mean_intensity.iter().map(|l| l / area).collect(),
        mean_intensity,
        k_histogram: k.histogram,
        k_mode: k.mode,
    })
}
