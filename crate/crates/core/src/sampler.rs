//! Collapsed Gibbs sampler for the MFM–Poisson intensity model.
//!
//! Each sweep draws every cluster intensity from its conjugate Gamma
//! posterior, then reassigns each cell through the MFM restaurant process.
//! Existing clusters are weighted by `(|c| + γ) · Poisson(N_i; λ_c)`. A new
//! cluster is weighted by `γ · V_n(t+1)/V_n(t) · m(N_i)`, where `t` is the
//! number of clusters without cell `i`. An opened cluster receives a λ drawn
//! from the single-cell posterior `Gamma(N_i + a, 1 + b)`.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GridCounts;
use crate::model::{build_log_vn, default_t_max, log_marginal_count, LogVnTable, MfmConfig};

/// Identifier of the generator recorded alongside stored draws.
pub const RNG_ALGORITHM: &str = "chacha8";

/// The generator used for every chain.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Current clustering and intensities. Labels are 0-based and contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    z: Vec<u32>,
    lambdas: Vec<f64>,
    log_lambdas: Vec<f64>,
    sizes: Vec<usize>,
    sums: Vec<u64>,
}

impl ChainState {
    /// Builds a state from labels and intensities, compacting labels.
    pub fn from_parts(z: &[u32], lambdas: &[f64], counts: &[u64]) -> Result<Self> {
        if z.len() != counts.len() {
            return Err(Error::Domain("label and count vectors differ in length".into()));
        }
        let k = lambdas.len();
        if z.iter().any(|&l| l as usize >= k) {
            return Err(Error::Domain("label without a matching intensity".into()));
        }
        if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("intensities must be positive".into()));
        }
        let mut state = Self::empty(z.len());
        let mut remap = vec![u32::MAX; k];
        for (i, &label) in z.iter().enumerate() {
            let slot = &mut remap[label as usize];
            if *slot == u32::MAX {
                *slot = state.lambdas.len() as u32;
                state.push_cluster(lambdas[label as usize]);
            }
            let c = *slot as usize;
            state.z[i] = *slot;
            state.sizes[c] += 1;
            state.sums[c] += counts[i];
        }
        Ok(state)
    }

    fn empty(n: usize) -> Self {
        Self { z: vec![0; n], lambdas: Vec::new(), log_lambdas: Vec::new(), sizes: Vec::new(), sums: Vec::new() }
    }

    fn push_cluster(&mut self, lambda: f64) {
        self.lambdas.push(lambda);
        self.log_lambdas.push(lambda.ln());
        self.sizes.push(0);
        self.sums.push(0);
    }

    fn set_lambda(&mut self, c: usize, lambda: f64) {
        self.lambdas[c] = lambda;
        self.log_lambdas[c] = lambda.ln();
    }

    /// Drops empty cluster `c` and shifts higher labels down by one.
    fn remove_cluster(&mut self, c: usize) {
        self.lambdas.remove(c);
        self.log_lambdas.remove(c);
        self.sizes.remove(c);
        self.sums.remove(c);
        let c = c as u32;
        for label in self.z.iter_mut() {
            if *label > c {
                *label -= 1;
            }
        }
    }

    pub fn labels(&self) -> &[u32] {
        &self.z
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Per-cluster total count `N̄_r`.
    pub fn cluster_count_sums(&self) -> &[u64] {
        &self.sums
    }

    pub fn n_clusters(&self) -> usize {
        self.lambdas.len()
    }

    /// Checks label contiguity, size and sum bookkeeping, and λ positivity.
    pub fn validate(&self, counts: &[u64]) -> Result<()> {
        let k = self.lambdas.len();
        let mut sizes = vec![0usize; k];
        let mut sums = vec![0u64; k];
        for (&label, &count) in self.z.iter().zip(counts) {
            let c = label as usize;
            if c >= k {
                return Err(Error::Domain(format!("label {c} ≥ cluster count {k}")));
            }
            sizes[c] += 1;
            sums[c] += count;
        }
        if sizes != self.sizes || sums != self.sums {
            return Err(Error::Domain("cluster bookkeeping out of sync with labels".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Domain("empty cluster".into()));
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("non-positive intensity".into()));
        }
        Ok(())
    }

    pub fn to_draw(&self) -> Draw {
        Draw { z: self.z.clone(), lambdas: self.lambdas.clone() }
    }
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let dist = Gamma::new(shape, 1.0 / rate).expect("shape and rate are positive");
    // Gamma draws are a.s. positive; guard against underflow to exactly zero.
    dist.sample(rng).max(f64::MIN_POSITIVE)
}

/// Random allocation over `k_init` labels with intensities from the prior.
pub fn init_state<R: Rng + ?Sized>(counts: &[u64], k_init: usize, cfg: &MfmConfig, rng: &mut R) -> Result<ChainState> {
    let n = counts.len();
    if k_init == 0 || k_init > n {
        return Err(Error::Config(format!("k_init must lie in 1..={n}, got {k_init}")));
    }
    let raw: Vec<u32> = (0..n).map(|_| rng.random_range(0..k_init) as u32).collect();
    let lambdas: Vec<f64> = (0..k_init).map(|_| gamma_draw(cfg.a, cfg.b, rng)).collect();
    ChainState::from_parts(&raw, &lambdas, counts)
}

/// Redraws every λ_r from `Gamma(N̄_r + a, n_r + b)`.
pub fn update_lambdas<R: Rng + ?Sized>(state: &mut ChainState, cfg: &MfmConfig, rng: &mut R) {
    for c in 0..state.n_clusters() {
        let shape = state.sums[c] as f64 + cfg.a;
        let rate = state.sizes[c] as f64 + cfg.b;
        state.set_lambda(c, gamma_draw(shape, rate, rng));
    }
}

/// Samples an index with probability proportional to `exp(log_weights)`.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let mut buf = log_weights.to_vec();
    sample_log_categorical_in_place(&mut buf, rng)
}

/// Same as [`sample_log_categorical`], reusing `weights` as scratch space.
fn sample_log_categorical_in_place<R: Rng + ?Sized>(weights: &mut [f64], rng: &mut R) -> usize {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (j, w) in weights.iter_mut().enumerate() {
        let p = (*w - max).exp();
        if p > 0.0 {
            last_positive = j;
        }
        cumulative += p;
        *w = cumulative;
    }
    let u = rng.random::<f64>() * cumulative;
    weights.iter().position(|&c| u < c).unwrap_or(last_positive)
}

/// Per-cell constants reused every sweep.
#[derive(Debug, Clone)]
struct CellTerms {
    count: u64,
    log_factorial: f64,
    log_marginal: f64,
}

/// Owns the precomputed tables needed for repeated assignment updates.
#[derive(Debug, Clone)]
pub struct Gibbs<'a> {
    cfg: &'a MfmConfig,
    vn: LogVnTable,
    cells: Vec<CellTerms>,
    log_gamma: f64,
    log_weights: Vec<f64>,
}

impl<'a> Gibbs<'a> {
    pub fn new(counts: &[u64], cfg: &'a MfmConfig) -> Result<Self> {
        cfg.validate()?;
        let n = counts.len();
        let vn = build_log_vn(n, default_t_max(n), cfg)?;
        let cells = counts
            .iter()
            .map(|&count| CellTerms {
                count,
                log_factorial: statrs::function::gamma::ln_gamma(count as f64 + 1.0),
                log_marginal: log_marginal_count(count, cfg.a, cfg.b),
            })
            .collect();
        Ok(Self { cfg, vn, cells, log_gamma: cfg.gamma.ln(), log_weights: Vec::new() })
    }

    pub fn vn_table(&self) -> &LogVnTable {
        &self.vn
    }

    /// Removes cell `i` from its cluster and resamples its label.
    pub fn update_assignment<R: Rng + ?Sized>(&mut self, i: usize, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let cell = &self.cells[i];
        let old = state.z[i] as usize;
        state.sizes[old] -= 1;
        state.sums[old] -= cell.count;
        if state.sizes[old] == 0 {
            state.remove_cluster(old);
        }

        let t = state.n_clusters();
        let choice = if t == 0 {
            0
        } else {
            let count = cell.count as f64;
            self.log_weights.clear();
            for c in 0..t {
                self.log_weights.push(
                    (state.sizes[c] as f64 + self.cfg.gamma).ln() + count * state.log_lambdas[c]
                        - state.lambdas[c]
                        - cell.log_factorial,
                );
            }
            let ratio = self.vn.log_ratio(t)?;
            self.log_weights.push(self.log_gamma + ratio + cell.log_marginal);
            sample_log_categorical_in_place(&mut self.log_weights, rng)
        };

        if choice == t {
            let lambda = gamma_draw(cell.count as f64 + self.cfg.a, 1.0 + self.cfg.b, rng);
            state.push_cluster(lambda);
        }
        state.z[i] = choice as u32;
        state.sizes[choice] += 1;
        state.sums[choice] += cell.count;
        Ok(())
    }

    /// One full sweep: λ update followed by a pass over every cell.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ChainState, order: &mut [usize], scan: ScanOrder, rng: &mut R) -> Result<()> {
        update_lambdas(state, self.cfg, rng);
        if scan == ScanOrder::Random {
            order.shuffle(rng);
        }
        for &i in order.iter() {
            self.update_assignment(i, state, rng)?;
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
}

/// Standalone assignment update for cell `i`; builds the per-cell constants
/// on every call. Prefer [`Gibbs`] inside loops.
pub fn update_assignment<R: Rng + ?Sized>(
    i: usize,
    state: &mut ChainState,
    counts: &[u64],
    vn: &mut LogVnTable,
    cfg: &MfmConfig,
    rng: &mut R,
) -> Result<()> {
    let mut gibbs = Gibbs::new(counts, cfg)?;
    if vn.n() == counts.len() {
        std::mem::swap(&mut gibbs.vn, vn);
        let out = gibbs.update_assignment(i, state, rng);
        std::mem::swap(&mut gibbs.vn, vn);
        out
    } else {
        Err(Error::Domain(format!("V_n table built for n={} but there are {} cells", vn.n(), counts.len())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    /// Cells visited in ascending index order.
    #[default]
    Fixed,
    /// A fresh random permutation every sweep.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainOptions {
    pub total_iters: usize,
    pub burnin: usize,
    pub seed: u64,
    pub k_init: usize,
    pub scan: ScanOrder,
    /// Keep every `thin`-th post burn-in sweep.
    pub thin: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { total_iters: 5000, burnin: 2000, seed: 0, k_init: 5, scan: ScanOrder::Fixed, thin: 1 }
    }
}

impl ChainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.total_iters {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the total iterations ({})",
                self.burnin, self.total_iters
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.k_init == 0 {
            return Err(Error::Config("k_init must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.total_iters - self.burnin).div_ceil(self.thin)
    }
}

/// One stored sample: 0-based labels and the intensity of each label.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub z: Vec<u32>,
    pub lambdas: Vec<f64>,
}

impl Draw {
    pub fn n_clusters(&self) -> usize {
        self.lambdas.len()
    }

    /// Intensity of the cluster holding cell `i`.
    pub fn cell_lambda(&self, i: usize) -> f64 {
        self.lambdas[self.z[i] as usize]
    }

    /// Cell indices of every cluster, in label order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.lambdas.len()];
        for (i, &c) in self.z.iter().enumerate() {
            blocks[c as usize].push(i);
        }
        blocks
    }
}

/// Post burn-in draws plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n: usize,
    pub resolution: usize,
    pub config: MfmConfig,
    pub options: ChainOptions,
    pub rng: String,
    pub draws: Vec<Draw>,
}

pub fn run_chain(counts: &GridCounts, cfg: &MfmConfig, options: &ChainOptions) -> Result<PosteriorDraws> {
    let mut draws = run_chain_cells(counts.counts(), cfg, options)?;
    draws.resolution = counts.resolution();
    Ok(draws)
}

/// Runs the sampler on an arbitrary set of equal-area cells. The returned
/// draws carry resolution 0 unless the cell count is a perfect square.
pub fn run_chain_cells(counts: &[u64], cfg: &MfmConfig, options: &ChainOptions) -> Result<PosteriorDraws> {
    options.validate()?;
    if counts.is_empty() {
        return Err(Error::Domain("no cells to fit".into()));
    }
    let n = counts.len();
    let mut rng = chain_rng(options.seed);
    let mut gibbs = Gibbs::new(counts, cfg)?;
    let mut state = init_state(counts, options.k_init.min(n), cfg, &mut rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut draws = Vec::with_capacity(options.n_stored());
    for iter in 0..options.total_iters {
        gibbs.sweep(&mut state, &mut order, options.scan, &mut rng)?;
        if iter >= options.burnin && (iter - options.burnin).is_multiple_of(options.thin) {
            draws.push(state.to_draw());
        }
    }
    Ok(PosteriorDraws {
        n,
        resolution: (1..=n).find(|r| r * r >= n).filter(|r| r * r == n).unwrap_or(0),
        config: cfg.clone(),
        options: options.clone(),
        rng: RNG_ALGORITHM.to_string(),
        draws,
    })
}

pub const DRAWS_FORMAT: &str = "mfm-nhpp-draws";
pub const DRAWS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DrawsHeader {
    format: String,
    version: u32,
    n: usize,
    resolution: usize,
    n_draws: usize,
    rng: String,
    config: MfmConfig,
    options: ChainOptions,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRecord {
    /// Run-length encoded 1-based labels: `[label, run]` pairs.
    z: Vec<(u32, u32)>,
    lambdas: Vec<f64>,
}

fn run_length_encode(z: &[u32]) -> Vec<(u32, u32)> {
    let mut runs: Vec<(u32, u32)> = Vec::new();
    for &label in z {
        match runs.last_mut() {
            Some((l, run)) if *l == label + 1 => *run += 1,
            _ => runs.push((label + 1, 1)),
        }
    }
    runs
}

fn run_length_decode(runs: &[(u32, u32)]) -> Result<Vec<u32>> {
    let mut z = Vec::new();
    for &(label, run) in runs {
        if label == 0 {
            return Err(Error::Parse("labels in draw records are 1-based".into()));
        }
        z.extend(std::iter::repeat_n(label - 1, run as usize));
    }
    Ok(z)
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Newline-delimited JSON: a header line, then one record per draw.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DrawsHeader {
            format: DRAWS_FORMAT.into(),
            version: DRAWS_VERSION,
            n: self.n,
            resolution: self.resolution,
            n_draws: self.draws.len(),
            rng: self.rng.clone(),
            config: self.config.clone(),
            options: self.options.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for d in &self.draws {
            let rec = DrawRecord { z: run_length_encode(&d.z), lambdas: d.lambdas.clone() };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines.next().transpose()?.ok_or_else(|| Error::Parse("empty draws file".into()))?;
        let header: DrawsHeader = serde_json::from_str(&first)?;
        if header.format != DRAWS_FORMAT || header.version != DRAWS_VERSION {
            return Err(Error::Parse(format!("unsupported draws format {} v{}", header.format, header.version)));
        }
        if header.resolution != 0 && header.resolution * header.resolution != header.n {
            return Err(Error::Parse("draws header: n is not resolution squared".into()));
        }
        let mut draws = Vec::with_capacity(header.n_draws);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DrawRecord = serde_json::from_str(&line)?;
            let z = run_length_decode(&rec.z)?;
            if z.len() != header.n {
                return Err(Error::Parse(format!("draw {} has {} labels, expected {}", draws.len(), z.len(), header.n)));
            }
            if z.iter().any(|&l| l as usize >= rec.lambdas.len()) {
                return Err(Error::Parse(format!("draw {} references a missing cluster", draws.len())));
            }
            draws.push(Draw { z, lambdas: rec.lambdas });
        }
        if draws.len() != header.n_draws {
            return Err(Error::Parse(format!("header promises {} draws, found {}", header.n_draws, draws.len())));
        }
        Ok(Self {
            n: header.n,
            resolution: header.resolution,
            config: header.config,
            options: header.options,
            rng: header.rng,
            draws,
        })
    }
}
