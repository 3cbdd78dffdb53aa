//! Stratified train/validation/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::image::ImageSample;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub ratios: [f64; 3],
}

impl DatasetSplit {
    pub fn ids(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Picks the samples of one subset, in split order.
    pub fn select<'a>(&self, samples: &'a [ImageSample], subset: Subset) -> Result<Vec<&'a ImageSample>> {
        let by_id: BTreeMap<&str, &ImageSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        self.ids(subset)
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::input(format!("split references unknown sample `{id}`")))
            })
            .collect()
    }

    /// One `{"id": .., "subset": ..}` object per line, after an optional
    /// `{"manifest_hash": ..}` header line.
    pub fn to_json_lines(&self, manifest_hash: Option<&str>) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            subset: Subset,
        }
        let mut out = String::new();
        if let Some(h) = manifest_hash {
            out.push_str(&serde_json::json!({ "manifest_hash": h }).to_string());
            out.push('\n');
        }
        for subset in [Subset::Train, Subset::Validation, Subset::Test] {
            for id in self.ids(subset) {
                out.push_str(&serde_json::to_string(&Row { id, subset }).expect("plain struct"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_json_lines(&self, path: &Path, manifest_hash: Option<&str>) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json_lines(manifest_hash).as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a split and its header hash back; `ratios` are recomputed from
    /// the counts.
    pub fn read_json_lines(path: &Path) -> Result<(Self, Option<String>)> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Line {
            Row { id: String, subset: Subset },
            Header { manifest_hash: String },
        }
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut split = DatasetSplit {
            train: vec![],
            validation: vec![],
            test: vec![],
            ratios: [0.0; 3],
        };
        let mut hash = None;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                Line::Header { manifest_hash } => hash = Some(manifest_hash),
                Line::Row { id, subset } => match subset {
                    Subset::Train => split.train.push(id),
                    Subset::Validation => split.validation.push(id),
                    Subset::Test => split.test.push(id),
                },
            }
        }
        let n = split.len().max(1) as f64;
        split.ratios = [
            split.train.len() as f64 / n,
            split.validation.len() as f64 / n,
            split.test.len() as f64 / n,
        ];
        Ok((split, hash))
    }
}

/// Per-class counts by largest remainder, ties to the earlier subset.
pub fn stratum_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Splits labelled samples per class. Every label in `0..=max_label` must
/// occur at least once.
pub fn split_dataset(samples: &[ImageSample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut seen = HashSet::new();
    let mut classes: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for s in samples {
        let label = s
            .label
            .ok_or_else(|| Error::input(format!("sample `{}` has no label", s.id)))?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::input(format!("duplicate sample id `{}`", s.id)));
        }
        classes.entry(label).or_default().push(&s.id);
    }
    let Some(&max_label) = classes.keys().next_back() else {
        return Err(Error::input("cannot split an empty dataset"));
    };
    if let Some(c) = (0..=max_label).find(|c| !classes.contains_key(c)) {
        return Err(Error::input(format!("class {c} has no samples")));
    }
    let mut split = DatasetSplit {
        train: vec![],
        validation: vec![],
        test: vec![],
        ratios,
    };
    for (class, mut ids) in classes {
        ids.sort_unstable();
        ids.shuffle(&mut rng_from(seed, &[tag("split"), class as u64]));
        let [a, b, _] = stratum_sizes(ids.len(), ratios);
        split.train.extend(ids[..a].iter().map(|s| s.to_string()));
        split.validation.extend(ids[a..a + b].iter().map(|s| s.to_string()));
        split.test.extend(ids[a + b..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}
