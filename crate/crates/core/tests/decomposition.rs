use curvete::cae::FeatureMatrix;
use curvete::decomposition::{class_decompose, kmeans_points, sample_decompose, KMeansParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum within-cluster SED over every 2-way split of the points.
fn brute_force_two_means(points: &[f64], d: usize) -> f64 {
    let n = points.len() / d;
    let mut best = f64::INFINITY;
    // Point 0 always sits in cluster 0; the mask assigns the rest.
    for mask in 0u32..(1 << (n - 1)) {
        let assign: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
        if !assign.contains(&1) {
            continue;
        }
        let mut sed = 0.0;
        for c in 0..2 {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            for k in 0..d {
                let mean = members.iter().map(|&i| points[i * d + k]).sum::<f64>() / members.len() as f64;
                sed += members.iter().map(|&i| (points[i * d + k] - mean).powi(2)).sum::<f64>();
            }
        }
        best = best.min(sed);
    }
    best
}

#[test]
fn two_means_reaches_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..50 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=3);
        let points: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let optimum = brute_force_two_means(&points, d);
        let mut best = f64::INFINITY;
        for seed in 0..10 {
            let m = kmeans_points(&points, d, 2, seed, 100, 0.0).unwrap();
            assert!(m.inertia_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", m.inertia_history);
            best = best.min(m.inertia);
        }
        assert!((best - optimum).abs() <= 1e-9 * (1.0 + optimum), "instance {instance}: {best} vs {optimum}");
    }
}

#[test]
fn well_separated_blobs_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centres = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
    let mut points = vec![];
    for i in 0..90 {
        let c = centres[i % 3];
        points.push(c[0] + rng.random_range(-1.0..1.0));
        points.push(c[1] + rng.random_range(-1.0..1.0));
    }
    let m = kmeans_points(&points, 2, 3, 0, 100, 1e-9).unwrap();
    for i in 0..90 {
        assert_eq!(m.assignments[i], m.assignments[i % 3]);
    }
}

fn features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMatrix::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        d,
        (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn labelled() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
    (2usize..=5, 10usize..=200, prop_oneof![Just(2usize), Just(5), Just(10)], any::<u64>()).prop_flat_map(
        |(classes, n, k, seed)| {
            // The first `classes` samples pin every class as non-empty.
            proptest::collection::vec(0..classes, n - classes).prop_map(move |rest| {
                let mut labels: Vec<usize> = (0..classes).collect();
                labels.extend(rest);
                (labels, k, seed)
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn class_ladder_partitions_each_class((labels, k_max, seed) in labelled()) {
        let classes = labels.iter().max().unwrap() + 1;
        let f = features(labels.len(), 3, seed);
        let ladder = class_decompose(&f, &labels, k_max, seed, &KMeansParams::default()).unwrap();
        prop_assert_eq!(ladder.levels.len(), k_max);
        for j in 1..=k_max {
            let level = ladder.level(j).unwrap();
            prop_assert_eq!(level.parent_map.len(), level.sub_class_count());
            let mut image: Vec<usize> = level.parent_map.clone();
            image.sort_unstable();
            image.dedup();
            prop_assert_eq!(image, (0..classes).collect::<Vec<_>>());
            for c in 0..classes {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                let mut subs: Vec<usize> = members.iter().map(|&i| level.sub_labels[i]).collect();
                for &s in &subs {
                    prop_assert!(s < level.sub_class_count());
                    prop_assert_eq!(level.parent_map[s], c);
                }
                subs.sort_unstable();
                subs.dedup();
                prop_assert_eq!(subs.len(), j.min(members.len()));
            }
        }
    }

    #[test]
    fn sample_ladder_uses_every_cluster(n in 10usize..=120, k_max in 2usize..=6, seed in any::<u64>()) {
        let f = features(n, 2, seed);
        let ladder = sample_decompose(&f, k_max, seed, &KMeansParams::default()).unwrap();
        for j in 1..=k_max {
            let level = ladder.level(j).unwrap();
            let mut used = level.sub_labels.clone();
            used.sort_unstable();
            used.dedup();
            prop_assert_eq!(used, (0..j).collect::<Vec<_>>());
            prop_assert!(level.parent_map.iter().all(|&p| p == 0));
        }
    }
}

#[test]
fn small_class_gets_fewer_sub_classes() {
    let mut labels = vec![0; 20];
    labels.extend([1, 1, 1]);
    let f = features(labels.len(), 2, 3);
    let ladder = class_decompose(&f, &labels, 5, 1, &KMeansParams::default()).unwrap();
    let level = ladder.level(5).unwrap();
    let mut subs: Vec<usize> = level.sub_labels[20..].to_vec();
    subs.sort_unstable();
    assert_eq!(subs, [5, 6, 7]);
    assert_eq!(level.parent_map.len(), 10);
}

#[test]
fn ladder_file_round_trips() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let f = features(30, 4, 9);
    let ladder = class_decompose(&f, &labels, 4, 2, &KMeansParams::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ladder.jsonl");
    ladder.save(&path, Some("abc")).unwrap();
    let (back, hash) = curvete::decomposition::GranularityLadder::load(&path).unwrap();
    assert_eq!(back, ladder);
    assert_eq!(hash.as_deref(), Some("abc"));
}
