//! Synthetic scenarios and replicated fitting experiments.
//!
//! A scenario fixes the grid, the true cluster layout and the true
//! intensities. Counts are drawn independently per cell from the Poisson law
//! of the cell's cluster. [`run_replicates`] repeats generate → fit →
//! summarize and aggregates recovery statistics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::{mae, rand_index};
use crate::error::{Error, Result};
use crate::geo::{GridCounts, PointPattern};
use crate::model::MfmConfig;
use crate::sampler::{run_chain, ChainOptions};
use crate::summary::{summarize, DahlOptions};

/// Built-in true cluster layouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Three vertical bands of (near) equal width, left to right.
    Bands3,
    /// Two rows by three columns of rectangular blocks.
    Blocks6,
    /// Explicit row-major 0-based labels.
    Matrix(Vec<u32>),
}

impl Layout {
    pub fn parse(name: &str) -> Result<Layout> {
        match name {
            "bands-3" => Ok(Layout::Bands3),
            "blocks-6" => Ok(Layout::Blocks6),
            other => Err(Error::Config(format!("unknown layout `{other}` (expected bands-3 or blocks-6)"))),
        }
    }

    pub fn n_clusters(&self) -> usize {
        match self {
            Layout::Bands3 => 3,
            Layout::Blocks6 => 6,
            Layout::Matrix(z) => z.iter().max().map_or(0, |&m| m as usize + 1),
        }
    }

    pub fn labels(&self, resolution: usize) -> Vec<u32> {
        let r = resolution;
        match self {
            Layout::Bands3 => (0..r * r).map(|i| ((i % r) * 3 / r) as u32).collect(),
            Layout::Blocks6 => (0..r * r)
                .map(|i| {
                    let (row, col) = (i / r, i % r);
                    ((row * 2 / r) * 3 + col * 3 / r) as u32
                })
                .collect(),
            Layout::Matrix(z) => z.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub resolution: usize,
    pub true_lambdas: Vec<f64>,
    /// Row-major 0-based true labels.
    pub layout: Vec<u32>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(resolution: usize, layout: &Layout, true_lambdas: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = Self { resolution, true_lambdas, layout: layout.labels(resolution), seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Scenario 1: bands-3 with intensities (0.2, 10, 20) on a 20×20 grid.
    pub fn scenario_one(seed: u64) -> Self {
        Self::new(20, &Layout::Bands3, vec![0.2, 10.0, 20.0], seed).expect("valid preset")
    }

    /// Scenario 2: blocks-6 with intensities (0.2, 5, 20, 40, 80, 200) on a 20×20 grid.
    pub fn scenario_two(seed: u64) -> Self {
        Self::new(20, &Layout::Blocks6, vec![0.2, 5.0, 20.0, 40.0, 80.0, 200.0], seed).expect("valid preset")
    }

    pub fn k(&self) -> usize {
        self.true_lambdas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be at least 1".into()));
        }
        if self.layout.len() != self.resolution * self.resolution {
            return Err(Error::Config(format!(
                "layout has {} cells, resolution {} needs {}",
                self.layout.len(),
                self.resolution,
                self.resolution * self.resolution
            )));
        }
        if let Some(l) = self.true_lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("true intensities must be positive, got {l}")));
        }
        let k = self.k();
        let mut seen = vec![false; k];
        for &z in &self.layout {
            let slot = seen
                .get_mut(z as usize)
                .ok_or_else(|| Error::Config(format!("layout label {} exceeds K = {k}", z + 1)))?;
            *slot = true;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("true cluster {} has no cells", j + 1)));
        }
        Ok(())
    }
}

/// Draws `N(A_i) ~ Poisson(λ_{z0_i})` for every cell; returns the counts and
/// the true labels.
pub fn generate_counts<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<(GridCounts, Vec<u32>)> {
    spec.validate()?;
    let counts = spec
        .layout
        .iter()
        .map(|&z| {
            let dist = Poisson::new(spec.true_lambdas[z as usize]).expect("positive rate");
            let x: f64 = dist.sample(rng);
            x as u64
        })
        .collect();
    Ok((GridCounts::new(spec.resolution, counts)?, spec.layout.clone()))
}

/// Scatters each cell's events uniformly inside the cell.
pub fn scatter_points<R: Rng + ?Sized>(counts: &GridCounts, rng: &mut R) -> PointPattern {
    let r = counts.resolution();
    let width = 1.0 / r as f64;
    let mut points = Vec::with_capacity(counts.total() as usize);
    for (i, &c) in counts.counts().iter().enumerate() {
        let (row, col) = (i / r, i % r);
        for _ in 0..c {
            let x = (col as f64 + rng.random::<f64>()) * width;
            let y = (row as f64 + rng.random::<f64>()) * width;
            points.push((x.min(1.0), y.min(1.0)));
        }
    }
    PointPattern::from_unit_points(points).expect("points lie in their cells")
}

/// Generator for replicate `index` of a scenario.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FitSettings {
    pub model: MfmConfig,
    /// The chain seed is derived per replicate; the value here is ignored.
    pub chain: ChainOptions,
    pub dahl: DahlOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub chain_seed: u64,
    /// Number of clusters in the Dahl partition.
    pub k_hat: usize,
    pub k_mode: usize,
    pub recovered: bool,
    pub rand_index: f64,
    pub mae_posterior_mean: f64,
    pub mae_dahl: f64,
    /// Dahl cluster intensities, ascending.
    pub dahl_lambdas: Vec<f64>,
    /// Posterior-mean intensity averaged within each Dahl cluster, ascending.
    pub mean_lambdas: Vec<f64>,
}

impl ReplicateResult {
    /// Index of the true cluster (in ascending-intensity order) with the
    /// largest squared Dahl error, when K was recovered.
    pub fn worst_dahl_cluster(&self, sorted_truth: &[f64]) -> Option<usize> {
        if !self.recovered {
            return None;
        }
        self.dahl_lambdas
            .iter()
            .zip(sorted_truth)
            .map(|(e, t)| (e - t) * (e - t))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub true_lambda: f64,
    pub bias: f64,
    /// Sample standard deviation (denominator R' - 1; 0 when R' = 1).
    pub sd: f64,
    /// Mean squared error; equals `bias² + sd² (R' - 1) / R'`.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicates: usize,
    pub true_k: usize,
    pub k_recovery_rate: f64,
    pub mean_rand_index: f64,
    /// Histogram of Dahl cluster counts across replicates.
    pub k_histogram: BTreeMap<usize, usize>,
    /// Replicates whose cluster count matched K (the subset aggregated below).
    pub n_recovered: usize,
    pub dahl: Vec<ClusterStats>,
    pub posterior_mean: Vec<ClusterStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub summary: ReplicateSummary,
    pub replicates: Vec<ReplicateResult>,
}

fn fit_replicate(spec: &ScenarioSpec, index: usize, fit: &FitSettings) -> Result<ReplicateResult> {
    let mut rng = replicate_rng(spec.seed, index as u64);
    let (counts, truth) = generate_counts(spec, &mut rng)?;
    let chain_seed = rng.next_u64();
    let options = ChainOptions { seed: chain_seed, ..fit.chain.clone() };
    let draws = run_chain(&counts, &fit.model, &options)?;
    let summary = summarize(&draws, &fit.dahl)?;

    let k_hat = summary.dahl_lambdas.len();
    let mut dahl_lambdas = summary.dahl_lambdas.clone();
    dahl_lambdas.sort_by(f64::total_cmp);
    let mut within = vec![(0.0, 0usize); k_hat];
    for (&z, &m) in summary.dahl_z.iter().zip(&summary.mean_intensity) {
        let slot = &mut within[z as usize - 1];
        slot.0 += m;
        slot.1 += 1;
    }
    let mut mean_lambdas: Vec<f64> = within.iter().map(|(s, c)| s / *c as f64).collect();
    mean_lambdas.sort_by(f64::total_cmp);

    Ok(ReplicateResult {
        index,
        chain_seed,
        k_hat,
        k_mode: summary.k_mode,
        recovered: k_hat == spec.k(),
        rand_index: rand_index(&summary.dahl_z, &truth)?,
        mae_posterior_mean: mae(&summary.mean_intensity, &counts)?,
        mae_dahl: mae(&summary.dahl_intensity(), &counts)?,
        dahl_lambdas,
        mean_lambdas,
    })
}

fn cluster_stats(truth: &[f64], estimates: &[&[f64]]) -> Vec<ClusterStats> {
    let r = estimates.len();
    truth
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if r == 0 {
                return ClusterStats { true_lambda: t, bias: f64::NAN, sd: f64::NAN, mse: f64::NAN };
            }
            let values: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
            let mean = values.iter().sum::<f64>() / r as f64;
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = if r > 1 { (ss / (r - 1) as f64).sqrt() } else { 0.0 };
            let mse = values.iter().map(|v| (v - t) * (v - t)).sum::<f64>() / r as f64;
            ClusterStats { true_lambda: t, bias: mean - t, sd, mse }
        })
        .collect()
}

pub fn aggregate(spec: &ScenarioSpec, results: &[ReplicateResult]) -> ReplicateSummary {
    let mut truth = spec.true_lambdas.clone();
    truth.sort_by(f64::total_cmp);
    let recovered: Vec<&ReplicateResult> = results.iter().filter(|r| r.recovered).collect();
    let dahl: Vec<&[f64]> = recovered.iter().map(|r| r.dahl_lambdas.as_slice()).collect();
    let post: Vec<&[f64]> = recovered.iter().map(|r| r.mean_lambdas.as_slice()).collect();
    let mut k_histogram = BTreeMap::new();
    for r in results {
        *k_histogram.entry(r.k_hat).or_insert(0) += 1;
    }
    let total = results.len().max(1) as f64;
    ReplicateSummary {
        replicates: results.len(),
        true_k: spec.k(),
        k_recovery_rate: recovered.len() as f64 / total,
        mean_rand_index: results.iter().map(|r| r.rand_index).sum::<f64>() / total,
        k_histogram,
        n_recovered: recovered.len(),
        dahl: cluster_stats(&truth, &dahl),
        posterior_mean: cluster_stats(&truth, &post),
    }
}

/// Runs `replicates` independent generate/fit/summarize cycles on a pool of
/// `workers` threads. Output is identical for any worker count.
pub fn run_replicates(spec: &ScenarioSpec, replicates: usize, fit: &FitSettings, workers: usize) -> Result<BenchReport> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    spec.validate()?;
    fit.model.validate()?;
    fit.chain.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<ReplicateResult> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|i| fit_replicate(spec, i, fit))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport { summary: aggregate(spec, &results), replicates: results })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One CSV row per replicate; list columns are `;`-separated.
pub fn write_replicates_csv<W: Write>(w: W, results: &[ReplicateResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "index",
        "chain_seed",
        "k_hat",
        "k_mode",
        "recovered",
        "rand_index",
        "mae_posterior_mean",
        "mae_dahl",
        "dahl_lambdas",
        "mean_lambdas",
    ])?;
    for r in results {
        out.write_record([
            r.index.to_string(),
            r.chain_seed.to_string(),
            r.k_hat.to_string(),
            r.k_mode.to_string(),
            r.recovered.to_string(),
            r.rand_index.to_string(),
            r.mae_posterior_mean.to_string(),
            r.mae_dahl.to_string(),
            join(&r.dahl_lambdas),
            join(&r.mean_lambdas),
        ])?;
    }
    out.flush()?;
    Ok(())
}
