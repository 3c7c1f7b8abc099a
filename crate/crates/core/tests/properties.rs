mod common;

use common::*;
use mfm_nhpp::assess::{lpml, lpml_from_counts, rand_index};
use mfm_nhpp::geo::{bin_counts, GridCounts, PointPattern, SourceFrame};
use mfm_nhpp::sampler::Draw;
use mfm_nhpp::summary::{coclustering_mean, dahl_select, DahlOptions};
use proptest::prelude::*;
use rand::Rng;

fn unit_points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 0..max)
}

fn labels(n: usize, k: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..k, n)
}

/// Compacts arbitrary labels to `0..t` in order of first appearance and
/// gives every cluster an intensity.
fn draw_of(z: &[u32], seed: u64) -> Draw {
    let z = canonical(z);
    let t = *z.iter().max().unwrap() as usize + 1;
    let lambdas = (0..t).map(|c| 0.5 + ((seed + 7 * c as u64) % 13) as f64).collect();
    Draw { z, lambdas }
}

/// Applies a label permutation to a draw without changing its partition.
fn relabel(d: &Draw, shift: usize) -> Draw {
    let t = d.lambdas.len();
    let perm: Vec<u32> = (0..t).map(|c| ((c + shift) % t) as u32).collect();
    let mut lambdas = vec![0.0; t];
    for c in 0..t {
        lambdas[perm[c] as usize] = d.lambdas[c];
    }
    Draw { z: d.z.iter().map(|&c| perm[c as usize]).collect(), lambdas }
}

proptest! {
    #[test]
    fn binning_conserves_points(points in unit_points(300), r in 1usize..40) {
        let pattern = PointPattern::from_unit_points(points.clone()).unwrap();
        let grid = bin_counts(&pattern, r).unwrap();
        prop_assert_eq!(grid.total(), points.len() as u64);
    }

    #[test]
    fn refining_then_coarsening_matches_direct_binning(points in unit_points(300), r in 1usize..25) {
        let pattern = PointPattern::from_unit_points(points).unwrap();
        let coarse = bin_counts(&pattern, r).unwrap();
        let fine = bin_counts(&pattern, 2 * r).unwrap();
        prop_assert_eq!(fine.coarsen(2).unwrap(), coarse.clone());
        let finer = bin_counts(&pattern, 4 * r).unwrap();
        prop_assert_eq!(finer.coarsen(4).unwrap(), coarse);
    }

    #[test]
    fn frame_round_trip(lon in -180.0..=180.0f64, lat in -90.0..=90.0f64,
                        lo in -50.0..50.0f64, span in 0.1..300.0f64) {
        for frame in [SourceFrame::GLOBAL, SourceFrame { lon_offset: lo, lon_scale: span, lat_offset: lo / 2.0, lat_scale: span / 2.0 }] {
            let (x, y) = frame.forward(lon, lat);
            let (lon2, lat2) = frame.inverse(x, y);
            prop_assert!((lon - lon2).abs() < 1e-9 && (lat - lat2).abs() < 1e-9);
        }
    }

    #[test]
    fn rand_index_is_symmetric_and_matches_pairs(n in 2usize..120, k1 in 1u32..8, k2 in 1u32..8, seed in any::<u64>()) {
        let mut rng = mfm_nhpp::sampler::chain_rng(seed);
        let z1: Vec<u32> = (0..n).map(|_| rng.random_range(0..k1)).collect();
        let z2: Vec<u32> = (0..n).map(|_| rng.random_range(0..k2)).collect();
        let a = rand_index(&z1, &z2).unwrap();
        prop_assert_eq!(a, rand_index(&z2, &z1).unwrap());
        prop_assert_eq!(a, rand_index_pairs(&z1, &z2));
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn dahl_choice_ignores_labels(parts in prop::collection::vec(labels(12, 4), 1..12), shift in 1usize..4) {
        let draws: Vec<Draw> = parts.iter().enumerate().map(|(i, z)| draw_of(z, i as u64)).collect();
        let relabeled: Vec<Draw> = draws.iter().map(|d| relabel(d, shift)).collect();
        let opts = DahlOptions::default();
        let a = draws_from(12, 0, draws);
        let b = draws_from(12, 0, relabeled);
        let ca = dahl_select(&a, &coclustering_mean(&a, &opts).unwrap(), &opts).unwrap();
        let cb = dahl_select(&b, &coclustering_mean(&b, &opts).unwrap(), &opts).unwrap();
        prop_assert_eq!(ca.iteration, cb.iteration);
        prop_assert_eq!(ca.distance, cb.distance);
    }

    #[test]
    fn incremental_distance_equals_naive(n in 2usize..=30, parts in prop::collection::vec(labels(30, 5), 1..10)) {
        let zs: Vec<Vec<u32>> = parts.iter().map(|z| canonical(&z[..n])).collect();
        let draws: Vec<Draw> = zs.iter().enumerate().map(|(i, z)| draw_of(z, i as u64)).collect();
        let posterior = draws_from(n, 0, draws);
        let mean = coclustering_mean(&posterior, &DahlOptions::default()).unwrap();
        let m = zs.len() as f64;
        for (d, z) in posterior.draws.iter().zip(&zs) {
            let naive = naive_scaled_distance(&zs, z);
            prop_assert_eq!(mean.scaled_distance(d), naive);
            prop_assert!((mean.distance(d) - naive as f64 / (m * m)).abs() < 1e-12);
        }
        for i in 0..n {
            prop_assert_eq!(mean.get(i, i), 1.0);
            for j in 0..n {
                prop_assert!((0.0..=1.0).contains(&mean.get(i, j)));
                prop_assert_eq!(mean.get(i, j), mean.get(j, i));
            }
        }
    }

    #[test]
    fn lpml_ignores_labels(parts in prop::collection::vec(labels(16, 4), 1..6), points in unit_points(60), shift in 1usize..4) {
        let draws: Vec<Draw> = parts.iter().enumerate().map(|(i, z)| draw_of(z, i as u64)).collect();
        let relabeled: Vec<Draw> = draws.iter().map(|d| relabel(d, shift)).collect();
        let pattern = PointPattern::from_unit_points(points).unwrap();
        let grid = bin_counts(&pattern, 4).unwrap();
        let (a, cpo_a) = lpml(&pattern, &draws_from(16, 4, draws), &grid).unwrap();
        let (b, cpo_b) = lpml(&pattern, &draws_from(16, 4, relabeled), &grid).unwrap();
        prop_assert_eq!(a.lpml, b.lpml);
        prop_assert_eq!(cpo_a, cpo_b);
    }

    #[test]
    fn lpml_integral_is_resolution_free(parts in prop::collection::vec(labels(16, 4), 1..6), points in unit_points(60)) {
        let draws: Vec<Draw> = parts.iter().enumerate().map(|(i, z)| draw_of(z, i as u64)).collect();
        // Same point-level surface on a grid twice as fine: every coarse cell
        // splits into four cells carrying a quarter of its expected count.
        let fine: Vec<Draw> = draws
            .iter()
            .map(|d| {
                let z = (0..64).map(|i| {
                    let (row, col) = (i / 8, i % 8);
                    d.z[(row / 2) * 4 + col / 2]
                }).collect();
                Draw { z, lambdas: d.lambdas.iter().map(|l| l / 4.0).collect() }
            })
            .collect();
        let pattern = PointPattern::from_unit_points(points).unwrap();
        let coarse_grid = bin_counts(&pattern, 4).unwrap();
        let fine_grid = bin_counts(&pattern, 8).unwrap();
        let (c, _) = lpml(&pattern, &draws_from(16, 4, draws), &coarse_grid).unwrap();
        let fine = draws_from(64, 8, fine);
        let (f, _) = lpml(&pattern, &fine, &fine_grid).unwrap();
        prop_assert!((c.integral - f.integral).abs() < 1e-9);
        prop_assert!((c.lpml - f.lpml).abs() < 1e-9 * (1.0 + c.lpml.abs()));
        let binned = lpml_from_counts(&fine, &fine_grid).unwrap();
        prop_assert!((binned.lpml - f.lpml).abs() < 1e-9 * (1.0 + f.lpml.abs()));
    }
}

#[test]
fn coarsening_rejects_non_divisors() {
    let g = GridCounts::new(6, vec![1; 36]).unwrap();
    assert!(g.coarsen(4).is_err());
    assert_eq!(g.coarsen(3).unwrap().counts(), &[9, 9, 9, 9]);
}
