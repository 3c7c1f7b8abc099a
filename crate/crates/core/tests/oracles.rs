mod common;

use common::*;
use mfm_nhpp::model::{build_log_vn, log_marginal_count, LogVnTable};
use mfm_nhpp::geo::GridCounts;
use mfm_nhpp::sampler::{chain_rng, run_chain, update_lambdas, ChainOptions, ChainState};
use mfm_nhpp::sim::{generate_counts, replicate_rng, ScenarioSpec};
use mfm_nhpp::summary::posterior_mean_intensity;
use mfm_nhpp::MfmConfig;
use statrs::distribution::{ContinuousCDF, Gamma};

fn config(gamma: f64) -> MfmConfig {
    MfmConfig { gamma, ..MfmConfig::default() }
}

#[test]
fn vn_matches_direct_series() {
    for gamma in [0.5, 1.0, 2.0] {
        let cfg = config(gamma);
        for n in 1..=12 {
            let table = build_log_vn(n, n, &cfg).unwrap();
            for t in 1..=n {
                let direct = vn_direct(n, t, gamma, 200);
                let got = table.get(t).exp();
                assert!(
                    ((got - direct) / direct).abs() < 1e-10,
                    "n={n} t={t} gamma={gamma}: {got} vs {direct}"
                );
            }
        }
    }
}

#[test]
fn marginal_matches_quadrature() {
    for a in [0.5, 1.0, 2.0] {
        for b in [0.5, 1.0, 2.0] {
            for count in 0..=50u64 {
                let q = marginal_quadrature(count, a, b);
                let m = log_marginal_count(count, a, b).exp();
                assert!(((m - q) / q).abs() < 1e-8, "N={count} a={a} b={b}: {m} vs {q}");
            }
        }
    }
}

/// Probability of seating items `order[0], order[1], …` one at a time so
/// that they end up in partition `z`, using the table for each prefix size.
fn sequential_log_prob(z: &[u32], order: &[usize], tables: &[LogVnTable], gamma: f64) -> f64 {
    let mut sizes: std::collections::HashMap<u32, usize> = Default::default();
    let mut lp = 0.0;
    for (seated, &i) in order.iter().enumerate() {
        let t = sizes.len();
        let size = sizes.get(&z[i]).copied().unwrap_or(0);
        if seated == 0 {
            // V_1(1) = 1 and γ^{(1)} = γ; the first item always opens a cluster.
            lp += tables[0].get(1) + gamma.ln();
        } else {
            let (prev, next) = (&tables[seated - 1], &tables[seated]);
            lp += if size == 0 {
                gamma.ln() + next.get(t + 1) - prev.get(t)
            } else {
                (size as f64 + gamma).ln() + next.get(t) - prev.get(t)
            };
        }
        *sizes.entry(z[i]).or_insert(0) += 1;
    }
    lp
}

fn log_eppf(z: &[u32], table: &LogVnTable, gamma: f64) -> f64 {
    let t = *z.iter().max().unwrap() as usize + 1;
    let mut lp = table.get(t);
    for c in 0..t as u32 {
        let size = z.iter().filter(|&&l| l == c).count();
        lp += (0..size).map(|j| (gamma + j as f64).ln()).sum::<f64>();
    }
    lp
}

#[test]
fn urn_is_exchangeable() {
    for gamma in [0.5, 1.0, 2.0] {
        let cfg = config(gamma);
        for n in 1..=8 {
            let tables: Vec<LogVnTable> = (1..=n).map(|i| build_log_vn(i, i, &cfg).unwrap()).collect();
            let parts = set_partitions(n);
            let mut total = Compensated::default();
            for (p, z) in parts.iter().enumerate() {
                let forward: Vec<usize> = (0..n).collect();
                let reverse: Vec<usize> = (0..n).rev().collect();
                let rotated: Vec<usize> = (0..n).map(|i| (i + p) % n).collect();
                let reference = sequential_log_prob(z, &forward, &tables, gamma);
                for order in [&reverse, &rotated] {
                    let lp = sequential_log_prob(z, order, &tables, gamma);
                    assert!((lp - reference).abs() < 1e-10, "n={n} z={z:?}");
                }
                assert!((reference - log_eppf(z, &tables[n - 1], gamma)).abs() < 1e-10);
                total.add(reference.exp());
            }
            assert!((total.value() - 1.0).abs() < 1e-10, "n={n} gamma={gamma}");
        }
    }
}

#[test]
fn block_size_law_on_six_cells() {
    let cfg = MfmConfig::default();
    let n = 6;
    let tables: Vec<LogVnTable> = (1..=n).map(|i| build_log_vn(i, i, &cfg).unwrap()).collect();
    let parts = set_partitions(n);
    assert_eq!(parts.len(), 203);
    let order: Vec<usize> = (0..n).collect();
    let reference = |z: &[u32]| {
        let t = *z.iter().max().unwrap() as usize + 1;
        let mut v = vn_direct(n, t, 1.0, 200).ln();
        for c in 0..t as u32 {
            // Γ(b + 1) / Γ(1) = b!
            v += ln_factorial(z.iter().filter(|&&l| l == c).count() as u64);
        }
        v
    };
    let offset = sequential_log_prob(&parts[0], &order, &tables, 1.0) - reference(&parts[0]);
    for z in &parts {
        let diff = sequential_log_prob(z, &order, &tables, 1.0) - reference(z);
        assert!((diff - offset).abs() < 1e-10, "{z:?}");
    }
}

#[test]
fn chain_matches_exact_posterior_on_four_cells() {
    let (tv, _) = chain_partition_tv(&[0, 0, 9, 9], 200_000, 11);
    assert!(tv <= 0.02, "total variation {tv}");
}

#[test]
fn separated_pair_almost_never_shares_a_cluster() {
    let exact = exact_partition_posterior(&[0, 100]);
    let shared = exact[&vec![0, 0]];
    assert!(shared < 1e-6, "exact shared probability {shared}");
    let (tv, freq) = chain_partition_tv(&[0, 100], 50_000, 3);
    assert!(freq.get(&vec![0, 0]).copied().unwrap_or(0.0) < 1e-4);
    assert!(tv <= 0.02);
}

/// Kolmogorov–Smirnov statistic of `sample` against `cdf`.
fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let m = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn lambda_updates_follow_conjugate_gamma() {
    let counts = [0u64, 0, 3, 0, 5, 2];
    // Cluster 1 = cells {2, 4} (0-based); cluster 0 = everything else.
    let z = [0u32, 0, 1, 0, 1, 0];
    let mut state = ChainState::from_parts(&z, &[1.0, 1.0], &counts).unwrap();
    let cfg = MfmConfig::default();
    let mut rng = chain_rng(2024);
    let draws = 100_000;
    let (mut first, mut second) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
    for _ in 0..draws {
        update_lambdas(&mut state, &cfg, &mut rng);
        first.push(state.lambdas()[1]);
        second.push(state.lambdas()[0]);
    }
    // Critical value of the one-sample KS test at level 0.001.
    let critical = 1.9495 / (draws as f64).sqrt();
    let g1 = Gamma::new(9.0, 3.0).unwrap();
    let g2 = Gamma::new(3.0, 5.0).unwrap();
    let d1 = ks_statistic(first.clone(), |x| g1.cdf(x));
    let d2 = ks_statistic(second, |x| g2.cdf(x));
    assert!(d1 < critical && d2 < critical, "KS {d1} {d2} vs {critical}");
    let mean = first.iter().sum::<f64>() / draws as f64;
    assert!((mean - 3.0).abs() < 0.03);
}

/// Batch-means standard error of a correlated series.
fn batch_se(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches;
    let means: Vec<f64> = series.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (means.len() - 1) as f64;
    (var / means.len() as f64).sqrt()
}

#[test]
fn all_zero_grid_posterior_mean_is_prior_dominated() {
    let grid = GridCounts::new(20, vec![0; 400]).unwrap();
    let draws = run_chain(&grid, &MfmConfig::default(), &ChainOptions { seed: 5, ..ChainOptions::default() }).unwrap();
    let mean = posterior_mean_intensity(&draws).unwrap();
    let target = 1.0 / 401.0;
    for i in [0, 57, 199, 399] {
        let series: Vec<f64> = draws.draws.iter().map(|d| d.cell_lambda(i)).collect();
        let se = batch_se(&series, 30);
        assert!((mean[i] - target).abs() <= 3.0 * se, "cell {i}: {} vs {target} (se {se})", mean[i]);
    }
    let spread = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - mean.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.2 * target);
}

#[test]
fn generated_cluster_means_follow_truth() {
    let spec = ScenarioSpec::scenario_one(17);
    let grids = 10_000;
    let k = spec.k();
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for g in 0..grids {
        let (counts, truth) = generate_counts(&spec, &mut replicate_rng(spec.seed, g as u64)).unwrap();
        for (&c, &z) in counts.counts().iter().zip(&truth) {
            sums[z as usize] += c as f64;
            sizes[z as usize] += 1;
        }
    }
    for j in 0..k {
        let lambda = spec.true_lambdas[j];
        let mean = sums[j] / sizes[j] as f64;
        let sigma = (lambda / sizes[j] as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * sigma, "cluster {j}: {mean} vs {lambda}");
    }
}
