//! Independent reference computations shared by the integration tests.
//!
//! The oracles never call into the library's numerics: series are summed in
//! linear space with compensated addition, factorials are plain products and
//! partitions are enumerated explicitly.

#![allow(dead_code)]

use std::collections::HashMap;

use mfm_nhpp::sampler::{run_chain_cells, ChainOptions, Draw, PosteriorDraws};
use mfm_nhpp::MfmConfig;

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
pub struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// `V_n(t)` for the truncated Poisson(1) prior on k, summed directly over
/// `k = 1..=terms` in linear space.
pub fn vn_direct(n: usize, t: usize, gamma: f64, terms: usize) -> f64 {
    let norm = 1.0 / (std::f64::consts::E - 1.0);
    let mut pk = norm; // p(1) = 1 / (1! (e - 1))
    let mut acc = Compensated::default();
    for k in 1..=terms {
        if k > 1 {
            pk /= k as f64;
        }
        if k < t {
            continue;
        }
        let mut term = pk;
        for j in 0..t {
            term *= (k - j) as f64;
        }
        for j in 0..n {
            term /= gamma * k as f64 + j as f64;
        }
        acc.add(term);
    }
    acc.value()
}

pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Gamma–Poisson marginal of a single count by quadrature over `λ = u²`,
/// for shapes with a closed-form `Γ(a)`.
pub fn marginal_quadrature(count: u64, a: f64, b: f64) -> f64 {
    let gamma_a = match a {
        0.5 => std::f64::consts::PI.sqrt(),
        1.0 | 2.0 => 1.0,
        _ => panic!("unsupported shape {a}"),
    };
    let n = count as f64;
    let rate = b + 1.0;
    let lambda_max = (n + a) / rate + 40.0 * (n + a + 1.0).sqrt() / rate + 50.0;
    let u_max = lambda_max.sqrt();
    let log_const = a * b.ln() - gamma_a.ln() - ln_factorial(count);
    // After substitution the integrand is 2 u^{2(a+N)-1} exp(-(b+1) u²).
    let f = |u: f64| {
        if u == 0.0 {
            return if 2.0 * (a + n) - 1.0 == 0.0 { 2.0 * log_const.exp() } else { 0.0 };
        }
        (log_const + (2.0 * (a + n) - 1.0) * u.ln() - rate * u * u).exp() * 2.0
    };
    let steps = 200_000;
    let h = u_max / steps as f64;
    let mut acc = Compensated::default();
    acc.add(f(0.0));
    acc.add(f(u_max));
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc.add(w * f(i as f64 * h));
    }
    acc.value() * h / 3.0
}

/// All set partitions of `0..n` as restricted-growth label vectors.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    fn rec(i: usize, n: usize, max: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            if i == 0 && l > 0 {
                break;
            }
            cur.push(l);
            rec(i + 1, n, max.max(l), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut cur = Vec::with_capacity(n);
    rec(0, n, 0, &mut cur, &mut out);
    out
}

/// Relabels in order of first appearance.
pub fn canonical(z: &[u32]) -> Vec<u32> {
    let mut map = HashMap::new();
    z.iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Exact partition posterior for `γ = a = b = 1` and the default prior on k,
/// keyed by canonical labels.
pub fn exact_partition_posterior(counts: &[u64]) -> HashMap<Vec<u32>, f64> {
    let n = counts.len();
    let parts = set_partitions(n);
    let mut logs = Vec::with_capacity(parts.len());
    for z in &parts {
        let t = *z.iter().max().unwrap() as usize + 1;
        let mut lp = vn_direct(n, t, 1.0, 200).ln();
        for c in 0..t as u32 {
            let members: Vec<usize> = (0..n).filter(|&i| z[i] == c).collect();
            let size = members.len() as u64;
            let s: u64 = members.iter().map(|&i| counts[i]).sum();
            // γ^{(size)} = size! for γ = 1.
            lp += ln_factorial(size);
            // b^a Γ(S+a) / (Γ(a) (b+size)^{S+a} Π N_i!) with a = b = 1.
            lp += ln_factorial(s) - (s as f64 + 1.0) * (1.0 + size as f64).ln();
            lp -= members.iter().map(|&i| ln_factorial(counts[i])).sum::<f64>();
        }
        logs.push(lp);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    parts.into_iter().zip(logs).map(|(z, l)| (z, (l - max).exp() / total)).collect()
}

/// Empirical partition frequencies of a chain.
pub fn partition_frequencies(draws: &PosteriorDraws) -> HashMap<Vec<u32>, f64> {
    let mut freq: HashMap<Vec<u32>, f64> = HashMap::new();
    let w = 1.0 / draws.draws.len() as f64;
    for d in &draws.draws {
        *freq.entry(canonical(&d.z)).or_insert(0.0) += w;
    }
    freq
}

pub fn total_variation(p: &HashMap<Vec<u32>, f64>, q: &HashMap<Vec<u32>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u32>> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Rand index by enumerating every pair.
pub fn rand_index_pairs(z1: &[u32], z2: &[u32]) -> f64 {
    let n = z1.len();
    let mut agree = 0u64;
    let mut total = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (z1[i] == z1[j]) == (z2[i] == z2[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

/// `M² Σ_{i,j} (B(i,j) - B̄(i,j))²` over the full matrix, from scratch.
pub fn naive_scaled_distance(all: &[Vec<u32>], candidate: &[u32]) -> i128 {
    let n = candidate.len();
    let m = all.len() as i128;
    let mut total: i128 = 0;
    for i in 0..n {
        for j in 0..n {
            let c: i128 = all.iter().filter(|z| z[i] == z[j]).count() as i128;
            let b = (candidate[i] == candidate[j]) as i128;
            let diff = m * b - c;
            total += diff * diff;
        }
    }
    total
}

pub fn draws_from(n: usize, resolution: usize, draws: Vec<Draw>) -> PosteriorDraws {
    PosteriorDraws {
        n,
        resolution,
        config: MfmConfig::default(),
        options: ChainOptions::default(),
        rng: "test".into(),
        draws,
    }
}

/// Runs `sweeps` post burn-in sweeps on `counts` and returns the total
/// variation distance to the exact partition posterior, plus the empirical
/// frequencies.
pub fn chain_partition_tv(counts: &[u64], sweeps: usize, seed: u64) -> (f64, HashMap<Vec<u32>, f64>) {
    let opts = ChainOptions { total_iters: sweeps + 1000, burnin: 1000, seed, k_init: 2.min(counts.len()), ..ChainOptions::default() };
    let draws = run_chain_cells(counts, &MfmConfig::default(), &opts).unwrap();
    let freq = partition_frequencies(&draws);
    (total_variation(&freq, &exact_partition_posterior(counts)), freq)
}
