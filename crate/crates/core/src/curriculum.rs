//! Anti-curriculum over granularity levels: start at the finest level, walk
//! down one level at a time to the original labelling, then back up.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkModel, Scalar};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub k_max: usize,
    pub cycles: usize,
    pub epochs_per_level: usize,
    pub visits: Vec<usize>,
}

/// One visit of the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    /// Position in `visits`.
    pub index: usize,
    pub cycle: usize,
    pub level: usize,
}

/// Levels of one cycle: `k, k-1, .., 1, 2, .., k`.
pub fn cycle_levels(k_max: usize) -> Vec<usize> {
    (1..=k_max).rev().chain(2..=k_max).collect()
}

pub fn build_schedule(k_max: usize, cycles: usize, epochs_per_level: usize) -> Result<CurriculumSchedule> {
    if k_max < 1 || cycles < 1 {
        return Err(Error::input(format!(
            "schedule needs k_max >= 1 and cycles >= 1 (got {k_max}, {cycles})"
        )));
    }
    let one = cycle_levels(k_max);
    Ok(CurriculumSchedule {
        k_max,
        cycles,
        epochs_per_level,
        visits: one.iter().copied().cycle().take(one.len() * cycles).collect(),
    })
}

impl CurriculumSchedule {
    pub fn cycle_len(&self) -> usize {
        2 * self.k_max - 1
    }

    pub fn iter_visits(&self) -> impl Iterator<Item = Visit> + '_ {
        let len = self.cycle_len();
        self.visits.iter().enumerate().map(move |(index, &level)| Visit {
            index,
            cycle: index / len,
            level,
        })
    }

    /// Checks that a deserialized schedule has the expected shape.
    pub fn validate(&self) -> Result<()> {
        let expect = build_schedule(self.k_max, self.cycles, self.epochs_per_level)?;
        if expect.visits != self.visits {
            return Err(Error::input("schedule visits do not form a descending-ascending walk"));
        }
        Ok(())
    }

    /// Visit indices before which the head is re-initialized. With
    /// `skip_level_one` (unlabelled data) level-1 visits are not trained and
    /// are ignored when comparing consecutive levels.
    pub fn head_resets(&self, skip_level_one: bool) -> Vec<usize> {
        let mut out = vec![];
        let mut last: Option<usize> = None;
        for v in self.iter_visits() {
            if skip_level_one && v.level == 1 {
                continue;
            }
            if last.is_some_and(|l| l != v.level) {
                out.push(v.index);
            }
            last = Some(v.level);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Difficulty of a sample, realized as the granularity level of its view.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DifficultyScore(pub f64);

pub fn score(level: usize, k_max: usize) -> Result<DifficultyScore> {
    if level < 1 || level > k_max {
        return Err(Error::input(format!("level {level} outside 1..={k_max}")));
    }
    Ok(DifficultyScore(level as f64))
}

/// Presentation order for a pool of samples tagged with their level:
/// descending score, uniformly shuffled within a level.
pub fn order_by_score(levels: &[usize], k_max: usize, seed: u64) -> Result<Vec<usize>> {
    let scores = levels
        .iter()
        .map(|&l| score(l, k_max))
        .collect::<Result<Vec<_>>>()?;
    let mut idx: Vec<usize> = (0..levels.len()).collect();
    idx.shuffle(&mut rng_from(seed, &[tag("order")]));
    idx.sort_by(|&a, &b| scores[b].0.total_cmp(&scores[a].0));
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchPlan<T> {
    pub batch_size: usize,
    pub batches: Vec<Vec<T>>,
}

/// Shuffles `samples` with `epoch_seed` and cuts consecutive batches of
/// `batch_size` (the last may be shorter).
pub fn pace<T: Clone>(samples: &[T], batch_size: usize, epoch_seed: u64) -> Result<MiniBatchPlan<T>> {
    if batch_size == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::input("cannot pace an empty sample set"));
    }
    let mut order = samples.to_vec();
    order.shuffle(&mut rng_from(epoch_seed, &[tag("pace")]));
    Ok(MiniBatchPlan {
        batch_size,
        batches: order.chunks(batch_size).map(<[T]>::to_vec).collect(),
    })
}

/// Carries the backbone over and gives the model a fresh head for the next
/// level, even when the class count is unchanged.
pub fn transfer_policy<T: Scalar>(model: &mut NetworkModel<T>, to_level_classes: usize, seed: u64) -> Result<()> {
    model.reinit_head(to_level_classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn five_level_cycle() {
        let s = build_schedule(5, 1, 2).unwrap();
        assert_eq!(s.visits, [5, 4, 3, 2, 1, 2, 3, 4, 5]);
        assert_eq!(build_schedule(1, 3, 1).unwrap().visits, [1, 1, 1]);
        assert!(build_schedule(0, 1, 1).is_err());
        assert!(build_schedule(5, 20, 1).is_ok());
        assert!(build_schedule(5, 10, 1).is_ok());
    }

    #[test]
    fn reset_counts() {
        let s = build_schedule(5, 3, 1).unwrap();
        assert_eq!(s.head_resets(false).len(), 3 * 8);
        // 5 4 3 2 (1) 2 3 4 5: the 2 -> 2 step around the skipped level keeps the head.
        assert_eq!(s.head_resets(true).len(), 3 * 6);
        assert!(build_schedule(1, 4, 1).unwrap().head_resets(false).is_empty());
    }

    #[test]
    fn scores_follow_levels() {
        assert!(score(5, 5).unwrap() > score(2, 5).unwrap());
        assert_eq!(score(3, 5).unwrap(), score(3, 5).unwrap());
        assert!(score(0, 5).is_err());
        assert!(score(6, 5).is_err());
    }

    #[test]
    fn mixed_pool_presents_fine_levels_first() {
        let levels = [3, 5, 3, 5, 1, 5, 3];
        let order = order_by_score(&levels, 5, 0).unwrap();
        let seen: Vec<usize> = order.iter().map(|&i| levels[i]).collect();
        assert_eq!(seen, [5, 5, 5, 3, 3, 3, 1]);
    }

    #[test]
    fn pace_cuts_batches() {
        let ids: Vec<usize> = (0..103).collect();
        let plan = pace(&ids, 50, 7).unwrap();
        let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, [50, 50, 3]);
        assert_eq!(plan, pace(&ids, 50, 7).unwrap());
        let mut all: Vec<usize> = plan.batches.concat();
        all.sort();
        assert_eq!(all, ids);
        assert!(pace::<usize>(&[], 5, 0).is_err());
        assert!(pace(&ids, 0, 0).is_err());
    }

    #[test]
    fn transfer_keeps_backbone() {
        let mut m = NetworkModel::<f32>::new(&[4], &[LayerSpec::Dense { out_dim: 3 }], 10, 1).unwrap();
        let before = m.backbone_digest();
        let head = m.head().clone();
        transfer_policy(&mut m, 5, 2).unwrap();
        assert_eq!(m.class_count(), 5);
        assert_eq!(m.backbone_digest(), before);
        transfer_policy(&mut m, 10, 3).unwrap();
        assert_eq!(m.backbone_digest(), before);
        assert_ne!(m.head(), &head);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schedule.json");
        let s = build_schedule(4, 2, 3).unwrap();
        s.save(&p).unwrap();
        assert_eq!(CurriculumSchedule::load(&p).unwrap(), s);
    }
}
