//! Granularity ladders: the dataset relabelled at levels 1..=k_max.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, ClusterModel, KMeansParams};
use crate::cae::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};

/// One granularity level: every original class split into `j` sub-classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelView {
    pub j: usize,
    /// Number of original classes (1 for an unlabelled pool).
    pub class_count: usize,
    /// Per-sample sub-label in `[0, class_count * j)`.
    pub sub_labels: Vec<usize>,
    /// Sub-label to original class, length `class_count * j`.
    pub parent_map: Vec<usize>,
}

impl LevelView {
    fn new(j: usize, class_count: usize, sub_labels: Vec<usize>) -> Self {
        Self {
            j,
            class_count,
            sub_labels,
            parent_map: (0..class_count * j).map(|s| s / j).collect(),
        }
    }

    /// Width of a classification head trained on this view.
    pub fn sub_class_count(&self) -> usize {
        self.class_count * self.j
    }
}

pub fn map_to_parent(level: &LevelView, sub_label: usize) -> Result<usize> {
    level.parent_map.get(sub_label).copied().ok_or_else(|| {
        Error::input(format!(
            "sub-label {sub_label} out of range for level {} ({} sub-classes)",
            level.j,
            level.parent_map.len()
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LadderKind {
    /// Unlabelled pool, one pseudo-class.
    Sample,
    /// Labelled data decomposed per class.
    Class,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularityLadder {
    pub kind: LadderKind,
    pub k_max: usize,
    /// Sample ids, aligned with every level's `sub_labels`.
    pub ids: Vec<String>,
    /// `levels[j - 1]` is level `j`.
    pub levels: Vec<LevelView>,
}

impl GranularityLadder {
    pub fn level(&self, j: usize) -> Result<&LevelView> {
        if j == 0 {
            return Err(Error::input("levels start at 1"));
        }
        self.levels
            .get(j - 1)
            .ok_or_else(|| Error::input(format!("level {j} beyond k_max {}", self.k_max)))
    }

    pub fn class_count(&self) -> usize {
        self.levels[0].class_count
    }

    /// Original labels (level-1 sub-labels).
    pub fn original_labels(&self) -> &[usize] {
        &self.levels[0].sub_labels
    }
}

/// Pseudo-label ladder for unlabelled features: level 1 is a single class,
/// level `j >= 2` an independent `j`-means clustering.
pub fn sample_decompose(features: &FeatureMatrix, k_max: usize, seed: u64, params: &KMeansParams) -> Result<GranularityLadder> {
    Ok(sample_decompose_with_centroids(features, k_max, seed, params)?.0)
}

/// [`sample_decompose`] plus every level's centroids, rows named `g<j>-c<i>`.
pub fn sample_decompose_with_centroids(
    features: &FeatureMatrix,
    k_max: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<(GranularityLadder, FeatureMatrix)> {
    if k_max < 2 {
        return Err(Error::input("sample decomposition needs k_max >= 2"));
    }
    let mut levels = vec![LevelView::new(1, 1, vec![0; features.n()])];
    let mut centroids = Centroids::default();
    for j in 2..=k_max {
        let m = kmeans(features, j, derive_seed(seed, &[tag("sample-level"), j as u64]), params.max_iter, params.tol)?;
        centroids.add(&m, |i| format!("g{j}-c{i}"));
        levels.push(LevelView::new(j, 1, m.assignments));
    }
    let ladder = GranularityLadder {
        kind: LadderKind::Sample,
        k_max,
        ids: features.ids().to_vec(),
        levels,
    };
    Ok((ladder, centroids.finish(features.d())?))
}

/// Per-class ladder: at level `j` class `c` with `n_c` samples is clustered
/// into `min(j, n_c)` groups and sample sub-labels are `c * j + cluster`.
pub fn class_decompose(
    features: &FeatureMatrix,
    labels: &[usize],
    k_max: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<GranularityLadder> {
    Ok(class_decompose_with_centroids(features, labels, k_max, seed, params)?.0)
}

/// [`class_decompose`] plus centroids, rows named `g<j>-class<c>-c<i>`.
pub fn class_decompose_with_centroids(
    features: &FeatureMatrix,
    labels: &[usize],
    k_max: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<(GranularityLadder, FeatureMatrix)> {
    if k_max < 2 {
        return Err(Error::input("class decomposition needs k_max >= 2"));
    }
    if labels.len() != features.n() {
        return Err(Error::input(format!("{} labels for {} feature rows", labels.len(), features.n())));
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<usize>> = (0..class_count)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::input(format!("class {c} has no samples")));
    }
    let mut levels = vec![LevelView::new(1, class_count, labels.to_vec())];
    let mut centroids = Centroids::default();
    for j in 2..=k_max {
        let mut sub = vec![0; labels.len()];
        for (c, idx) in members.iter().enumerate() {
            let s = derive_seed(seed, &[tag("class-level"), c as u64, j as u64]);
            let m = kmeans(&features.select(idx)?, j.min(idx.len()), s, params.max_iter, params.tol)?;
            centroids.add(&m, |i| format!("g{j}-class{c}-c{i}"));
            for (&i, cl) in idx.iter().zip(&m.assignments) {
                sub[i] = c * j + cl;
            }
        }
        levels.push(LevelView::new(j, class_count, sub));
    }
    let ladder = GranularityLadder {
        kind: LadderKind::Class,
        k_max,
        ids: features.ids().to_vec(),
        levels,
    };
    Ok((ladder, centroids.finish(features.d())?))
}

#[derive(Default)]
struct Centroids {
    ids: Vec<String>,
    data: Vec<f32>,
}

impl Centroids {
    fn add(&mut self, m: &ClusterModel, name: impl Fn(usize) -> String) {
        for i in 0..m.k {
            self.ids.push(name(i));
            self.data.extend(m.centroid(i).iter().map(|&v| v as f32));
        }
    }

    fn finish(self, d: usize) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.ids, d, self.data)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    manifest_hash: Option<String>,
    kind: LadderKind,
    k_max: usize,
    class_count: usize,
    samples: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    level: usize,
    sample_id: String,
    sub_label: usize,
    parent: usize,
}

impl GranularityLadder {
    /// A header line, then one `{level, sample_id, sub_label, parent}` record
    /// per sample and level.
    pub fn to_json_lines(&self, manifest_hash: Option<&str>) -> String {
        let header = Header {
            manifest_hash: manifest_hash.map(str::to_string),
            kind: self.kind,
            k_max: self.k_max,
            class_count: self.class_count(),
            samples: self.ids.len(),
        };
        let mut out = serde_json::to_string(&header).expect("plain struct");
        out.push('\n');
        for level in &self.levels {
            for (id, &s) in self.ids.iter().zip(&level.sub_labels) {
                let rec = Record {
                    level: level.j,
                    sample_id: id.clone(),
                    sub_label: s,
                    parent: level.parent_map[s],
                };
                out.push_str(&serde_json::to_string(&rec).expect("plain struct"));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path, manifest_hash: Option<&str>) -> Result<()> {
        fs::write(path, self.to_json_lines(manifest_hash)).map_err(|e| Error::io(path, e))
    }

    /// Reads a ladder and the manifest hash recorded in its header.
    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::input(format!("{} is empty", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first)?;
        let n = header.samples;
        let mut ids = Vec::with_capacity(n);
        let mut subs = vec![Vec::with_capacity(n); header.k_max];
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line)?;
            if r.level == 0 || r.level > header.k_max {
                return Err(Error::input(format!("record level {} outside 1..={}", r.level, header.k_max)));
            }
            if r.sub_label >= header.class_count * r.level || r.parent != r.sub_label / r.level {
                return Err(Error::input(format!("inconsistent record for `{}`", r.sample_id)));
            }
            let level = &mut subs[r.level - 1];
            if r.level == 1 {
                ids.push(r.sample_id);
            } else if ids.get(level.len()) != Some(&r.sample_id) {
                return Err(Error::input(format!("sample `{}` out of order at level {}", r.sample_id, r.level)));
            }
            level.push(r.sub_label);
        }
        if subs.iter().any(|s| s.len() != n) || ids.len() != n {
            return Err(Error::input(format!("{} does not hold {n} samples at every level", path.display())));
        }
        let levels = subs
            .into_iter()
            .enumerate()
            .map(|(i, s)| LevelView::new(i + 1, header.class_count, s))
            .collect();
        Ok((
            Self {
                kind: header.kind,
                k_max: header.k_max,
                ids,
                levels,
            },
            header.manifest_hash,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(per_class: &[usize]) -> (FeatureMatrix, Vec<usize>) {
        let mut data = vec![];
        let mut labels = vec![];
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                data.extend([c as f32 * 10.0 + (i % 3) as f32, (i % 5) as f32]);
                labels.push(c);
            }
        }
        let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
        (FeatureMatrix::new(ids, 2, data).unwrap(), labels)
    }

    #[test]
    fn parent_arithmetic() {
        let v = LevelView::new(5, 2, vec![7]);
        assert_eq!(v.sub_class_count(), 10);
        assert_eq!(map_to_parent(&v, 7).unwrap(), 1);
        assert!((0..5).all(|s| map_to_parent(&v, s).unwrap() == 0));
        assert!(map_to_parent(&v, 10).is_err());
        let id = LevelView::new(1, 3, vec![0, 1, 2]);
        assert!((0..3).all(|s| map_to_parent(&id, s).unwrap() == s));
    }

    #[test]
    fn sample_ladder_levels() {
        let (f, _) = blobs(&[12]);
        let l = sample_decompose(&f, 4, 0, &KMeansParams::default()).unwrap();
        assert_eq!(l.levels.len(), 4);
        assert!(l.level(1).unwrap().sub_labels.iter().all(|&s| s == 0));
        assert!(l.levels.iter().all(|v| v.parent_map.iter().all(|&p| p == 0)));
        assert!(l.level(5).is_err());
        assert!(sample_decompose(&f, 1, 0, &KMeansParams::default()).is_err());
    }

    #[test]
    fn level_one_is_original_labels() {
        let (f, labels) = blobs(&[6, 4]);
        let l = class_decompose(&f, &labels, 3, 1, &KMeansParams::default()).unwrap();
        assert_eq!(l.level(1).unwrap().sub_labels, labels);
        assert_eq!(l.level(1).unwrap().parent_map, [0, 1]);
    }

    #[test]
    fn small_class_gets_fewer_sub_classes() {
        let (f, labels) = blobs(&[3, 20]);
        let l = class_decompose(&f, &labels, 5, 2, &KMeansParams::default()).unwrap();
        let v = l.level(5).unwrap();
        let mut used: Vec<usize> = v.sub_labels[..3].to_vec();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 3);
        assert!(used.iter().all(|&s| s < 5));
        assert_eq!(v.parent_map.len(), 10);
    }

    #[test]
    fn json_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ladder.jsonl");
        let (f, labels) = blobs(&[7, 9]);
        let l = class_decompose(&f, &labels, 3, 4, &KMeansParams::default()).unwrap();
        l.save(&p, Some("abc")).unwrap();
        let (back, hash) = GranularityLadder::load(&p).unwrap();
        assert_eq!(back, l);
        assert_eq!(hash.as_deref(), Some("abc"));
    }
}
