//! MFM prior quantities and the Gamma–Poisson kernels used by the sampler.
//!
//! Everything here works in log space.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Prior on the number of mixture components `k ∈ {1, 2, …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KPrior {
    /// Poisson(rate) conditioned on `k ≥ 1`.
    TruncatedPoisson { rate: f64 },
    /// Explicit pmf; `pmf[j]` is the probability of `k = j + 1`.
    Pmf { pmf: Vec<f64> },
}

impl Default for KPrior {
    fn default() -> Self {
        KPrior::TruncatedPoisson { rate: 1.0 }
    }
}

impl KPrior {
    pub fn log_pmf(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        Ok(self.log_pmf_unchecked(k))
    }

    fn log_pmf_unchecked(&self, k: usize) -> f64 {
        match self {
            KPrior::TruncatedPoisson { rate } => {
                let k = k as f64;
                k * rate.ln() - rate - ln_gamma(k + 1.0) - (-(-rate).exp_m1()).ln()
            }
            KPrior::Pmf { pmf } => pmf.get(k - 1).map_or(f64::NEG_INFINITY, |p| p.ln()),
        }
    }

    /// Largest `k` with positive mass, if the support is finite.
    fn support_max(&self) -> Option<usize> {
        match self {
            KPrior::TruncatedPoisson { .. } => None,
            KPrior::Pmf { pmf } => Some(pmf.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            KPrior::TruncatedPoisson { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::Config(format!("k prior rate must be positive, got {rate}")));
                }
            }
            KPrior::Pmf { pmf } => {
                if pmf.is_empty() || pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Config("k prior pmf must be nonempty and nonnegative".into()));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::Config(format!("k prior pmf sums to {total}, not 1")));
                }
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the MFM–Poisson model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfmConfig {
    /// Dirichlet concentration.
    pub gamma: f64,
    /// Gamma prior shape for cluster intensities.
    pub a: f64,
    /// Gamma prior rate for cluster intensities.
    pub b: f64,
    pub k_prior: KPrior,
    /// Relative tail tolerance for the `V_n(t)` series.
    pub vn_tol: f64,
    /// Hard cap on the number of series terms.
    pub vn_kmax: usize,
}

impl Default for MfmConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            a: 1.0,
            b: 1.0,
            k_prior: KPrior::default(),
            vn_tol: 1e-12,
            vn_kmax: 500,
        }
    }
}

impl MfmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("a", self.a), ("b", self.b), ("vn_tol", self.vn_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.vn_kmax == 0 {
            return Err(Error::Config("vn_kmax must be at least 1".into()));
        }
        self.k_prior.validate()
    }

    pub fn k_prior_log_pmf(&self, k: usize) -> Result<f64> {
        self.k_prior.log_pmf(k)
    }
}

/// Numerically stable `log(exp(a) + exp(b))` accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `log x^{(n)} = log Γ(x + n) - log Γ(x)`.
pub fn log_rising_factorial(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        ln_gamma(x + n as f64) - ln_gamma(x)
    }
}

/// Table of `log V_n(t)` for `t = 1..=t_max` at a fixed `n`.
///
/// Entries are appended on demand by [`LogVnTable::ensure`].
#[derive(Debug, Clone)]
pub struct LogVnTable {
    n: usize,
    gamma: f64,
    k_prior: KPrior,
    tol: f64,
    kmax: usize,
    values: Vec<f64>,
}

/// Default table length: `min(n, 64)`.
pub fn default_t_max(n: usize) -> usize {
    n.clamp(1, 64)
}

pub fn build_log_vn(n: usize, t_max: usize, cfg: &MfmConfig) -> Result<LogVnTable> {
    if n == 0 || t_max == 0 {
        return Err(Error::Domain("V_n table needs n ≥ 1 and t_max ≥ 1".into()));
    }
    cfg.validate()?;
    let mut table = LogVnTable {
        n,
        gamma: cfg.gamma,
        k_prior: cfg.k_prior.clone(),
        tol: cfg.vn_tol,
        kmax: cfg.vn_kmax,
        values: Vec::with_capacity(t_max),
    };
    table.ensure(t_max)?;
    Ok(table)
}

impl LogVnTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_max(&self) -> usize {
        self.values.len()
    }

    /// `log V_n(t)`; `t` must be within the built range.
    pub fn get(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Extends the table so that it covers `t`.
    pub fn ensure(&mut self, t: usize) -> Result<()> {
        while self.values.len() < t {
            let next = self.values.len() + 1;
            let v = self.series(next)?;
            self.values.push(v);
        }
        Ok(())
    }

    /// `log V_n(t + 1) - log V_n(t)`, the new-cluster urn factor.
    pub fn log_ratio(&mut self, t: usize) -> Result<f64> {
        self.ensure(t + 1)?;
        let (num, den) = (self.get(t + 1), self.get(t));
        Ok(if num == f64::NEG_INFINITY { f64::NEG_INFINITY } else { num - den })
    }

    /// Sums `k_(t) / (γk)^{(n)} p(k)` over `k ≥ t`.
    fn series(&self, t: usize) -> Result<f64> {
        let mut sum = LogSum::new();
        let mut prev = f64::NEG_INFINITY;
        let last = self.k_prior.support_max().map_or(self.kmax, |m| m.min(self.kmax));
        let mut k = t;
        while k <= last {
            let kf = k as f64;
            let term = ln_gamma(kf + 1.0) - ln_gamma((k - t) as f64 + 1.0)
                - log_rising_factorial(self.gamma * kf, self.n)
                + self.k_prior.log_pmf_unchecked(k);
            sum.add(term);
            let total = sum.value();
            if term < prev && term - total < self.tol.ln() {
                return Ok(total);
            }
            prev = term;
            k += 1;
        }
        if self.k_prior.support_max().is_some_and(|m| m <= self.kmax) {
            // Finite support fully enumerated; V_n(t) = 0 past the support.
            return Ok(sum.value());
        }
        Err(Error::Numerical {
            message: format!("V_n series for n={}, t={t} did not converge within {} terms", self.n, self.kmax),
            achieved: (prev - sum.value()).exp(),
        })
    }
}

/// Log of the Gamma(a, b)–Poisson marginal `m(N)`, a negative-binomial pmf.
pub fn log_marginal_count(count: u64, a: f64, b: f64) -> f64 {
    let n = count as f64;
    a * b.ln() + ln_gamma(n + a) - ln_gamma(a) - (n + a) * (b + 1.0).ln() - ln_gamma(n + 1.0)
}

pub fn poisson_log_pmf(count: u64, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Domain(format!("Poisson rate must be positive, got {lambda}")));
    }
    let n = count as f64;
    Ok(n * lambda.ln() - lambda - ln_gamma(n + 1.0))
}
