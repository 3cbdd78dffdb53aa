use std::time::Instant;

use curvete::curriculum::{build_schedule, order_by_score, pace, CurriculumSchedule};
use proptest::prelude::*;

fn check_shape(s: &CurriculumSchedule) {
    let (k, cycles) = (s.k_max, s.cycles);
    assert_eq!(s.visits.len(), cycles * (2 * k - 1));
    assert_eq!(s.visits[0], k);
    assert_eq!(*s.visits.last().unwrap(), k);
    for cycle in s.visits.chunks(2 * k - 1) {
        assert_eq!(cycle.iter().filter(|&&l| l == 1).count(), 1);
        for w in cycle.windows(2) {
            assert_eq!(w[0].abs_diff(w[1]), 1, "k {k} cycles {cycles}: {cycle:?}");
        }
        let low = cycle.iter().position(|&l| l == 1).unwrap();
        assert!(cycle[..=low].windows(2).all(|w| w[0] > w[1]));
        assert!(cycle[low..].windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn exhaustive_schedule_shapes() {
    let start = Instant::now();
    for k in 1..=12 {
        for cycles in 1..=25 {
            let s = build_schedule(k, cycles, 3).unwrap();
            check_shape(&s);
            s.validate().unwrap();
        }
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn degenerate_inputs_rejected() {
    assert!(build_schedule(0, 1, 1).is_err());
    assert!(build_schedule(3, 0, 1).is_err());
}

#[test]
fn tampered_schedule_fails_validation() {
    let mut s = build_schedule(4, 2, 1).unwrap();
    s.visits.swap(1, 2);
    assert!(s.validate().is_err());
}

proptest! {
    #[test]
    fn order_is_a_descending_permutation(levels in prop::collection::vec(1usize..=6, 0..60), seed in any::<u64>()) {
        let order = order_by_score(&levels, 6, seed).unwrap();
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..levels.len()).collect::<Vec<_>>());
        prop_assert!(order.windows(2).all(|w| levels[w[0]] >= levels[w[1]]));
    }

    #[test]
    fn pace_partitions_the_pool(n in 1usize..100, batch in 1usize..17, seed in any::<u64>()) {
        let pool: Vec<usize> = (0..n).collect();
        let plan = pace(&pool, batch, seed).unwrap();
        prop_assert!(plan.batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        let mut seen: Vec<usize> = plan.batches.concat();
        seen.sort();
        prop_assert_eq!(seen, pool);
    }
}
