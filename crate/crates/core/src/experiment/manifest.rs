//! Declarative experiment description, parsed from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cae::CaeSpec;
use crate::data::{AugmentConfig, SynthSpec};
use crate::decomposition::KMeansParams;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkModel, OptimizerConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synth {
        classes: usize,
        samples_per_class: usize,
        image_size: usize,
        noise_sigma: f64,
        intra_class_modes: usize,
        #[serde(default)]
        equalize: bool,
    },
    /// `path/<class_name>/<file>.pgm`
    Directory {
        path: PathBuf,
        #[serde(default = "yes")]
        equalize: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.2,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextKind {
    /// The labelled training split, labels ignored.
    Train,
    /// A fresh draw from the synthetic generator of `[dataset]`.
    Synth,
    /// A flat directory of `.pgm` files.
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextData {
    pub source: PretextKind,
    /// Pool size for `synth`.
    pub samples: usize,
    pub path: Option<PathBuf>,
    /// Augmented copies added per pool image.
    pub augment_copies: usize,
    pub augment: AugmentConfig,
}

impl Default for PretextData {
    fn default() -> Self {
        Self {
            source: PretextKind::Train,
            samples: 300,
            path: None,
            augment_copies: 0,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionSection {
    pub pretext_k: usize,
    pub downstream_k: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DecompositionSection {
    fn default() -> Self {
        Self {
            pretext_k: 5,
            downstream_k: 5,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

impl DecompositionSection {
    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    /// Downstream cycles.
    pub cycles: usize,
    pub pretext_cycles: usize,
    pub epochs_per_level: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            cycles: 3,
            pretext_cycles: 1,
            epochs_per_level: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { batch_size: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    /// Compact layer specs, e.g. `conv2d(8,3)`, `relu`, `maxpool(2)`, `dense(64)`.
    pub layers: Vec<String>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            layers: [
                "conv2d(8,3)",
                "relu",
                "maxpool(2)",
                "conv2d(16,3)",
                "relu",
                "maxpool(2)",
                "flatten",
                "dense(64)",
                "relu",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub seed: u64,
    /// Seeds dataset synthesis and the split; defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Side of the square network input; images are resized to it.
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default)]
    pub pretext_data: PretextData,
    #[serde(default)]
    pub cae: CaeSpec,
    #[serde(default)]
    pub decomposition: DecompositionSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub backbone: BackboneSection,
    /// Directory relative paths are resolved against (the manifest's own).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_input_size() -> usize {
    32
}

impl ExperimentManifest {
    /// Parses TOML; schema errors name the offending field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::validation("<toml>", e.to_string()))?;
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::validation(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Canonical JSON of everything that affects results (the output
    /// directory and base directory are excluded).
    pub fn canonical_json(&self) -> String {
        let mut m = self.clone();
        m.output_dir = PathBuf::new();
        serde_json::to_string(&m).expect("plain data")
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_json().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    /// Hash with the seed zeroed; equal across seeds of one configuration.
    pub fn config_hash_hex(&self) -> String {
        let mut m = self.clone();
        m.seed = 0;
        m.hash_hex()
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn backbone_specs(&self) -> Result<Vec<LayerSpec>> {
        self.backbone
            .layers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<LayerSpec>()
                    .map_err(|e| Error::validation(format!("backbone.layers[{i}]"), e.to_string()))
            })
            .collect()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.input_size, self.input_size]
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer.clone(),
            epochs_per_level: self.schedule.epochs_per_level,
            batch_size: self.train.batch_size,
            seed: self.seed,
        }
    }

    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match self.dataset {
            DatasetSource::Synth {
                classes,
                samples_per_class,
                image_size,
                noise_sigma,
                intra_class_modes,
                ..
            } => Some(SynthSpec {
                classes,
                samples_per_class,
                image_size,
                noise_sigma,
                intra_class_modes,
            }),
            DatasetSource::Directory { .. } => None,
        }
    }

    /// Checks every field; the first violation is reported with its path.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation(field, msg));
        if self.input_size < crate::data::MIN_TRAIN_SIDE || !self.input_size.is_multiple_of(4) {
            return bad("input_size", "must be at least 8 and divisible by 4");
        }
        match &self.dataset {
            DatasetSource::Synth { .. } => {
                let s = self.synth_spec().expect("synth");
                if s.samples_per_class < 1 {
                    return bad("dataset.samples_per_class", "must be at least 1");
                }
                s.validate().map_err(|e| Error::validation("dataset", e.to_string()))?;
            }
            DatasetSource::Directory { path, .. } => {
                if !self.resolve(path).is_dir() {
                    return bad("dataset.path", &format!("{} is not a directory", self.resolve(path).display()));
                }
            }
        }
        let r = self.split.as_array();
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split", "ratios must be non-negative and sum to 1");
        }
        if self.split.train <= 0.0 || self.split.test <= 0.0 {
            return bad("split", "train and test ratios must be positive");
        }
        let p = &self.pretext_data;
        match p.source {
            PretextKind::Synth if self.synth_spec().is_none() => {
                return bad("pretext_data.source", "`synth` needs a synthetic [dataset]")
            }
            PretextKind::Synth if p.samples < 2 => return bad("pretext_data.samples", "must be at least 2"),
            PretextKind::Directory => match &p.path {
                None => return bad("pretext_data.path", "required for source `directory`"),
                Some(d) if !self.resolve(d).is_dir() => {
                    return bad("pretext_data.path", &format!("{} is not a directory", self.resolve(d).display()))
                }
                _ => {}
            },
            _ => {}
        }
        let a = &p.augment;
        if !(a.max_rotation_degrees >= 0.0 && a.max_rotation_degrees < 180.0) {
            return bad("pretext_data.augment.max_rotation_degrees", "must lie in [0, 180)");
        }
        if a.max_shift < 0 {
            return bad("pretext_data.augment.max_shift", "must be non-negative");
        }
        if !(a.zoom_range.0 > 0.0 && a.zoom_range.0 <= a.zoom_range.1 && a.zoom_range.1.is_finite()) {
            return bad("pretext_data.augment.zoom_range", "must be positive and ordered");
        }
        if !(a.min_crop_fraction > 0.0 && a.min_crop_fraction <= 1.0) {
            return bad("pretext_data.augment.min_crop_fraction", "must lie in (0, 1]");
        }
        let [f1, f2] = self.cae.encoder_filters;
        if f2 < 1 || f1 < f2 {
            return bad("cae.encoder_filters", "must satisfy f1 >= f2 >= 1");
        }
        if self.cae.epochs < 1 {
            return bad("cae.epochs", "must be at least 1");
        }
        if !(self.cae.learning_rate > 0.0 && self.cae.learning_rate.is_finite()) {
            return bad("cae.learning_rate", "must be positive");
        }
        if self.cae.batch_size < 1 {
            return bad("cae.batch_size", "must be at least 1");
        }
        let d = &self.decomposition;
        if d.pretext_k < 2 {
            return bad("decomposition.pretext_k", "must be at least 2");
        }
        if d.downstream_k < 2 {
            return bad("decomposition.downstream_k", "must be at least 2");
        }
        if d.max_iter < 1 {
            return bad("decomposition.max_iter", "must be at least 1");
        }
        if !(d.tol >= 0.0) {
            return bad("decomposition.tol", "must be non-negative");
        }
        let s = &self.schedule;
        if s.cycles < 1 {
            return bad("schedule.cycles", "must be at least 1");
        }
        if s.pretext_cycles < 1 {
            return bad("schedule.pretext_cycles", "must be at least 1");
        }
        if s.epochs_per_level < 1 {
            return bad("schedule.epochs_per_level", "must be at least 1");
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return bad("optimizer.learning_rate", "must be positive");
        }
        self.optimizer.validate().map_err(|e| match e {
            Error::Validation { field, message } => Error::validation(format!("optimizer.{field}"), message),
            other => other,
        })?;
        if self.train.batch_size < 1 {
            return bad("train.batch_size", "must be at least 1");
        }
        let specs = self.backbone_specs()?;
        if let Err(e) = NetworkModel::<f32>::new(&self.input_shape(), &specs, 2, 0) {
            let field = match &e {
                Error::Config { layer, .. } => format!("backbone.layers[{layer}]"),
                _ => "backbone.layers".into(),
            };
            return Err(Error::validation(field, e.to_string()));
        }
        Ok(())
    }
}
