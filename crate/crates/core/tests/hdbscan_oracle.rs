mod common;

use common::oracle::{brute_force_mst_weight, canonical, random_distances, reference_hdbscan, seeded, Dense};
use freqfed::clustering::hdbscan::{core_distances, mutual_reachability, prim_mst};
use freqfed::clustering::{
    cosine_distance_matrix, filter_models, hdbscan, DistanceMatrix, HdbscanParams, NOISE,
};
use freqfed::frequency::FrequencyFingerprint;
use proptest::prelude::*;
use rand::Rng;

fn to_matrix(d: &Dense) -> DistanceMatrix {
    DistanceMatrix::new(d.len(), d.iter().flatten().copied().collect()).unwrap()
}

fn params(mcs: usize, ms: usize) -> HdbscanParams {
    HdbscanParams {
        min_cluster_size: mcs,
        min_samples: ms,
    }
}

fn groups(sizes: &[usize], intra: f64, inter: f64, wobble: f64) -> Dense {
    let group: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| vec![g; s]).collect();
    let n = group.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = wobble * ((i * 7 + j * 7) % 5) as f64;
                d[i][j] = if group[i] == group[j] { intra - w } else { inter + w };
            }
        }
    }
    d
}

#[test]
fn matches_reference_on_random_matrices() {
    let mut rng = seeded(2024);
    let mut splits = 0;
    let mut noisy = 0;
    for case in 0..200 {
        let n = rng.random_range(2..=10);
        let d = random_distances(&mut rng, n, case % 2 == 1);
        let mcs = rng.random_range(2..=n.min(4));
        let ms = rng.random_range(1..=(n - 1).min(4));
        let ours = hdbscan(&to_matrix(&d), &params(mcs, ms)).unwrap();
        let reference = reference_hdbscan(&d, mcs, ms);
        assert_eq!(
            canonical(&ours.labels),
            canonical(&reference),
            "case {case}: n={n} mcs={mcs} ms={ms} d={d:?}"
        );
        if ours.cluster_sizes.len() > 1 {
            splits += 1;
        }
        if ours.noise_count() > 0 {
            noisy += 1;
        }
    }
    // The sample must exercise splits and noise, not only single clusters.
    assert!(splits >= 20, "only {splits} multi-cluster cases");
    assert!(noisy >= 20, "only {noisy} cases with noise");
}

#[test]
fn prim_tree_is_minimal() {
    let mut rng = seeded(7);
    for case in 0..60 {
        let n = rng.random_range(2..=7);
        let d = random_distances(&mut rng, n, case % 3 == 0);
        let m = to_matrix(&d);
        let ms = rng.random_range(1..n);
        let mr = mutual_reachability(&m, &core_distances(&m, ms));
        let tree = prim_mst(&mr, n);
        assert_eq!(tree.len(), n - 1);
        let ours: f64 = tree.iter().map(|e| e.weight).sum();
        let dense: Dense = (0..n).map(|i| mr[i * n..(i + 1) * n].to_vec()).collect();
        let best = brute_force_mst_weight(&dense);
        assert!((ours - best).abs() <= 1e-12, "case {case}: {ours} vs {best}");
    }
}

#[test]
fn two_separated_groups_of_five() {
    let d = groups(&[5, 5], 0.01, 1.0, 0.001);
    let a = hdbscan(&to_matrix(&d), &params(2, 1)).unwrap();
    assert_eq!(a.cluster_sizes.values().copied().collect::<Vec<_>>(), vec![5, 5]);
    assert_eq!(a.noise_count(), 0);
    assert_eq!(canonical(&a.labels), vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
}

#[test]
fn distant_singleton_is_noise() {
    let d = groups(&[5, 1], 0.01, 1.0, 0.0);
    let a = hdbscan(&to_matrix(&d), &params(2, 1)).unwrap();
    assert_eq!(a.labels[5], NOISE);
    assert!(a.labels[..5].iter().all(|&l| l == a.labels[0] && l != NOISE));
}

#[test]
fn coincident_points_form_one_cluster() {
    let d = vec![vec![0.0; 8]; 8];
    let a = hdbscan(&to_matrix(&d), &params(2, 1)).unwrap();
    assert_eq!(a.cluster_sizes.values().copied().collect::<Vec<_>>(), vec![8]);
}

#[test]
fn filter_keeps_the_benign_majority() {
    let d = groups(&[7, 3], 0.01, 1.0, 0.001);
    let a = hdbscan(&to_matrix(&d), &params(2, 1)).unwrap();
    let accepted: Vec<usize> = (0..10).filter(|&i| a.labels[i] == a.labels[0]).collect();
    assert_eq!(accepted, (0..7).collect::<Vec<_>>());

    // Same layout through fingerprints: two nearly parallel bundles.
    let fp = |v: Vec<f64>| FrequencyFingerprint { coeffs: v, source_n: 2 };
    let mut fps = Vec::new();
    for i in 0..7 {
        fps.push(fp(vec![1.0, 0.01 * i as f64, 0.0]));
    }
    for i in 0..3 {
        fps.push(fp(vec![-1.0, 0.0, 0.01 * i as f64]));
    }
    assert_eq!(filter_models(&fps, &params(2, 1)).unwrap(), (0..7).collect::<Vec<_>>());
}

fn fingerprints(raw: &[Vec<f64>]) -> Vec<FrequencyFingerprint> {
    raw.iter()
        .map(|c| FrequencyFingerprint {
            coeffs: c.clone(),
            source_n: 3,
        })
        .collect()
}

fn nonzero_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..=9).prop_flat_map(|n| {
        proptest::collection::vec(
            proptest::collection::vec(-1.0f64..1.0, 6).prop_filter("nonzero", |v| {
                v.iter().map(|x| x * x).sum::<f64>() > 1e-6
            }),
            n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabelling_inputs_permutes_the_partition(raw in nonzero_rows(), seed in any::<u64>()) {
        let n = raw.len();
        let d = cosine_distance_matrix(&fingerprints(&raw)).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = seeded(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let p = params(2, 1);
        let base = hdbscan(&d, &p).unwrap();
        let moved = hdbscan(&d.permuted(&perm), &p).unwrap();
        let pulled: Vec<i64> = perm.iter().map(|&old| base.labels[old]).collect();
        prop_assert_eq!(canonical(&moved.labels), canonical(&pulled));
    }

    #[test]
    fn scaling_fingerprints_changes_nothing(raw in nonzero_rows(), scale in 0.01f64..100.0) {
        let fps = fingerprints(&raw);
        let scaled: Vec<_> = fps
            .iter()
            .map(|f| FrequencyFingerprint { coeffs: f.coeffs.iter().map(|c| c * scale).collect(), source_n: 3 })
            .collect();
        let a = cosine_distance_matrix(&fps).unwrap();
        let b = cosine_distance_matrix(&scaled).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn accepted_sets_are_valid(raw in nonzero_rows(), mcs in 2usize..4) {
        let n = raw.len();
        prop_assume!(mcs <= n);
        if let Ok(accepted) = filter_models(&fingerprints(&raw), &params(mcs, 1)) {
            prop_assert!(accepted.len() >= mcs);
            prop_assert!(accepted.iter().all(|&i| i < n));
            prop_assert!(accepted.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
