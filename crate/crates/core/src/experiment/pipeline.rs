//! The command pipeline: each step reads upstream artifacts from the output
//! directory, skips work whose artifacts already carry the current manifest
//! hash, and writes hash-stamped results.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetSource, ExperimentManifest, PretextKind};
use crate::cae::{train_cae, CaeModel, FeatureMatrix};
use crate::curriculum::build_schedule;
use crate::data::{
    augment_random, load_labelled_dir, load_unlabelled_dir, prepare, split_dataset, synth_dataset, synth_from_templates, synth_templates, DatasetSplit,
    ImageSample, Subset, SynthSpec,
};
use crate::decomposition::{class_decompose_with_centroids, sample_decompose_with_centroids, GranularityLadder, LevelView};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics_with_classes, MetricsReport};
use crate::nn::{NetworkModel, Tensor};
use crate::rng::{derive_seed, tag};
use crate::training::{
    model_from_checkpoint, original_ladder, predict_with_relabel, random_model, AblationMode, Checkpoint,
    CurriculumRunner, EvalSet, Phase, RunState, TrainData, Walk,
};

pub const LOCK: &str = "manifest.lock.json";
pub const SPLIT: &str = "split.jsonl";
pub const CAE: &str = "cae.crvt";
pub const CAE_HISTORY: &str = "cae_history.jsonl";
pub const FEATURES_PRETEXT: &str = "features_pretext.crvf";
pub const FEATURES_TRAIN: &str = "features_train.crvf";
pub const LADDER_PRETEXT: &str = "ladder_pretext.jsonl";
pub const LADDER_DOWNSTREAM: &str = "ladder_downstream.jsonl";
pub const CENTROIDS_PRETEXT: &str = "centroids_pretext.crvf";
pub const CENTROIDS_DOWNSTREAM: &str = "centroids_downstream.crvf";
pub const SCHEDULE_PRETEXT: &str = "schedule_pretext.json";
pub const SCHEDULE_DOWNSTREAM: &str = "schedule_downstream.json";
pub const PRETEXT: &str = "pretext.crvt";
pub const CURVETE: &str = "curvete.crvt";
pub const REPORT: &str = "report.md";

/// Name of the full method's arm in metrics files and reports.
pub const CURVETE_ARM: &str = "curvete";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Computed,
    UpToDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Pretext,
    Downstream,
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretext" => Ok(Which::Pretext),
            "downstream" => Ok(Which::Downstream),
            _ => Err(Error::input(format!("unknown decomposition target `{s}`"))),
        }
    }
}

/// Test-set evaluation of one arm, as written to `metrics_<arm>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub manifest_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub arm: String,
    /// Deviations from the full protocol worth flagging in reports.
    pub note: Option<String>,
    pub report: MetricsReport,
    pub test_ids: Vec<String>,
    pub correct: Vec<bool>,
}

pub fn metrics_file(arm: &str) -> String {
    format!("metrics_{arm}.json")
}

/// Manifest hash recorded in an artifact, if the file exists.
pub fn artifact_hash(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(match ext {
        "crvt" => Some(hex::encode(Checkpoint::decode(&bytes)?.manifest_hash)),
        "crvf" => FeatureMatrix::decode(&bytes)?.1.map(hex::encode),
        "json" | "jsonl" => {
            let first = bytes.split(|&b| b == b'\n').next().unwrap_or(&[]);
            let text = if ext == "json" { &bytes[..] } else { first };
            serde_json::from_slice::<serde_json::Value>(text)
                .ok()
                .and_then(|v| v.get("manifest_hash").and_then(|h| h.as_str()).map(str::to_string))
        }
        "md" => String::from_utf8_lossy(&bytes)
            .lines()
            .find_map(|l| l.strip_prefix("manifest hash: `").and_then(|r| r.strip_suffix('`')).map(str::to_string)),
        _ => None,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stamp(value: impl Serialize, hash: &str) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("manifest_hash".into(), hash.into());
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

pub struct Experiment {
    pub manifest: ExperimentManifest,
    out: PathBuf,
    hash: [u8; 32],
    hash_hex: String,
}

impl Experiment {
    /// Validates the manifest and prepares the output directory.
    pub fn new(manifest: ExperimentManifest, out: Option<PathBuf>) -> Result<Self> {
        manifest.validate()?;
        let out = out.unwrap_or_else(|| manifest.output_path());
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let hash = manifest.hash();
        let exp = Self {
            hash_hex: hex::encode(hash),
            hash,
            out,
            manifest,
        };
        let lock = serde_json::json!({
            "manifest_hash": exp.hash_hex,
            "config_hash": exp.manifest.config_hash_hex(),
            "manifest": serde_json::from_str::<serde_json::Value>(&exp.manifest.canonical_json())?,
        });
        let text = serde_json::to_string_pretty(&lock)?;
        let lock_path = exp.path(LOCK);
        if fs::read_to_string(&lock_path).ok().as_deref() != Some(text.as_str()) {
            write_file(&lock_path, text.as_bytes())?;
        }
        Ok(exp)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn hash_hex(&self) -> &str {
        &self.hash_hex
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn fresh(&self, name: &str) -> Result<bool> {
        Ok(artifact_hash(&self.path(name))?.as_deref() == Some(self.hash_hex.as_str()))
    }

    fn fresh_all(&self, names: &[&str]) -> Result<bool> {
        for n in names {
            if !self.fresh(n)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Path of an upstream artifact, or a dependency error naming the
    /// command that produces it.
    fn require(&self, name: &str, command: &str) -> Result<PathBuf> {
        if !self.fresh(name)? {
            return Err(Error::Dependency {
                path: self.path(name),
                command: command.into(),
            });
        }
        Ok(self.path(name))
    }

    // ---- data ----

    /// The labelled dataset, resized (and optionally equalized).
    pub fn labelled_samples(&self) -> Result<Vec<ImageSample>> {
        let size = self.manifest.input_size;
        match &self.manifest.dataset {
            DatasetSource::Synth { equalize, .. } => {
                let spec = self.manifest.synth_spec().expect("synth dataset");
                let raw = synth_dataset(&spec, derive_seed(self.manifest.data_seed(), &[tag("dataset")]))?;
                prepare(&raw, size, *equalize)
            }
            DatasetSource::Directory { path, equalize } => {
                let (raw, _) = load_labelled_dir(&self.manifest.resolve(path))?;
                prepare(&raw, size, *equalize)
            }
        }
    }

    fn equalize(&self) -> bool {
        match self.manifest.dataset {
            DatasetSource::Synth { equalize, .. } | DatasetSource::Directory { equalize, .. } => equalize,
        }
    }

    fn compute_split(&self, samples: &[ImageSample]) -> Result<DatasetSplit> {
        split_dataset(
            samples,
            self.manifest.split.as_array(),
            derive_seed(self.manifest.data_seed(), &[tag("split")]),
        )
    }

    fn ensure_split(&self, samples: &[ImageSample]) -> Result<DatasetSplit> {
        if self.fresh(SPLIT)? {
            return Ok(DatasetSplit::read_json_lines(&self.path(SPLIT))?.0);
        }
        let split = self.compute_split(samples)?;
        split.write_json_lines(&self.path(SPLIT), Some(&self.hash_hex))?;
        Ok(split)
    }

    fn split(&self) -> Result<DatasetSplit> {
        Ok(DatasetSplit::read_json_lines(&self.require(SPLIT, "pretrain-cae")?)?.0)
    }

    /// Unlabelled pool for CAE training and pretext decomposition.
    pub fn pretext_pool(&self, samples: &[ImageSample], split: &DatasetSplit) -> Result<Vec<ImageSample>> {
        let m = &self.manifest;
        let p = &m.pretext_data;
        let mut pool: Vec<ImageSample> = match p.source {
            PretextKind::Train => split.select(samples, Subset::Train)?.into_iter().cloned().collect(),
            PretextKind::Synth => {
                let base = m.synth_spec().expect("validated");
                let spec = SynthSpec {
                    samples_per_class: p.samples.div_ceil(base.classes),
                    ..base
                };
                // Same templates as the labelled data, fresh noise.
                let templates = synth_templates(&spec, derive_seed(m.data_seed(), &[tag("dataset")]))?;
                let all = synth_from_templates(&spec, &templates, derive_seed(m.data_seed(), &[tag("pretext-pool")]))?;
                let mut order: Vec<usize> = (0..all.len()).collect();
                // Interleave classes so truncation keeps the pool balanced.
                order.sort_by_key(|&i| (i % spec.samples_per_class, i / spec.samples_per_class));
                let out: Vec<ImageSample> = order.into_iter().take(p.samples).map(|i| all[i].clone()).collect();
                prepare(&out, m.input_size, self.equalize())?
            }
            PretextKind::Directory => {
                let dir = m.resolve(p.path.as_ref().expect("validated"));
                prepare(&load_unlabelled_dir(&dir)?, m.input_size, self.equalize())?
            }
        };
        for s in &mut pool {
            s.label = None;
            s.id = format!("pool/{}", s.id);
        }
        let mut augmented = vec![];
        for (i, s) in pool.iter().enumerate() {
            for c in 0..p.augment_copies {
                let seed = derive_seed(m.seed, &[tag("augment"), i as u64, c as u64]);
                let mut a = augment_random(s, &p.augment, seed)?;
                a.id = format!("{}+aug{c}", s.id);
                augmented.push(a);
            }
        }
        pool.extend(augmented);
        Ok(pool)
    }

    fn subset<'a>(&self, samples: &'a [ImageSample], split: &DatasetSplit, subset: Subset) -> Result<Vec<&'a ImageSample>> {
        split.select(samples, subset)
    }

    fn labels_of(samples: &[&ImageSample]) -> Vec<usize> {
        samples.iter().map(|s| s.label.expect("labelled")).collect()
    }

    fn class_count(samples: &[ImageSample]) -> usize {
        samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1)
    }

    // ---- commands ----

    /// Writes the split, trains the autoencoder on the pretext pool and
    /// encodes both the pool and the labelled training split.
    pub fn pretrain_cae(&self) -> Result<Outcome> {
        let samples = self.labelled_samples()?;
        let split = self.ensure_split(&samples)?;
        if self.fresh_all(&[CAE, CAE_HISTORY, FEATURES_PRETEXT, FEATURES_TRAIN])? {
            return Ok(Outcome::UpToDate);
        }
        let pool = self.pretext_pool(&samples, &split)?;
        let model = train_cae(&pool, &self.manifest.cae, derive_seed(self.manifest.seed, &[tag("cae")]))?;
        let mut ckpt = Checkpoint::new(self.hash);
        for (name, t) in model.named_params() {
            ckpt.push(name, t.clone());
        }
        ckpt.set_meta("epochs", model.history.len() as u64);
        ckpt.save(&self.path(CAE))?;
        let mut hist = serde_json::json!({ "manifest_hash": self.hash_hex }).to_string() + "\n";
        for (epoch, loss) in model.history.iter().enumerate() {
            hist.push_str(&serde_json::json!({ "epoch": epoch, "reconstruction_loss": loss }).to_string());
            hist.push('\n');
        }
        write_file(&self.path(CAE_HISTORY), hist.as_bytes())?;
        model.encode(&pool)?.save(&self.path(FEATURES_PRETEXT), Some(&self.hash))?;
        let train: Vec<ImageSample> = self.subset(&samples, &split, Subset::Train)?.into_iter().cloned().collect();
        model.encode(&train)?.save(&self.path(FEATURES_TRAIN), Some(&self.hash))?;
        Ok(Outcome::Computed)
    }

    /// Reloads the trained autoencoder.
    pub fn load_cae(&self) -> Result<CaeModel> {
        let ckpt = Checkpoint::load(&self.require(CAE, "pretrain-cae")?)?;
        let s = self.manifest.input_size;
        let mut model = CaeModel::new(&self.manifest.cae, s, s, 0)?;
        model.load_params(ckpt.with_prefix("cae.").into_iter().map(|(_, t)| t).collect())?;
        Ok(model)
    }

    pub fn decompose(&self, which: Which) -> Result<Outcome> {
        let m = &self.manifest;
        let params = m.decomposition.kmeans();
        match which {
            Which::Pretext => {
                let (features, _) = FeatureMatrix::load(&self.require(FEATURES_PRETEXT, "pretrain-cae")?)?;
                if self.fresh_all(&[LADDER_PRETEXT, CENTROIDS_PRETEXT])? {
                    return Ok(Outcome::UpToDate);
                }
                let seed = derive_seed(m.seed, &[tag("pretext-ladder")]);
                let (ladder, centroids) = sample_decompose_with_centroids(&features, m.decomposition.pretext_k, seed, &params)?;
                ladder.save(&self.path(LADDER_PRETEXT), Some(&self.hash_hex))?;
                centroids.save(&self.path(CENTROIDS_PRETEXT), Some(&self.hash))?;
            }
            Which::Downstream => {
                let (features, _) = FeatureMatrix::load(&self.require(FEATURES_TRAIN, "pretrain-cae")?)?;
                if self.fresh_all(&[LADDER_DOWNSTREAM, CENTROIDS_DOWNSTREAM])? {
                    return Ok(Outcome::UpToDate);
                }
                let samples = self.labelled_samples()?;
                let by_id: HashMap<&str, usize> =
                    samples.iter().map(|s| (s.id.as_str(), s.label.expect("labelled"))).collect();
                let labels = features
                    .ids()
                    .iter()
                    .map(|id| {
                        by_id
                            .get(id.as_str())
                            .copied()
                            .ok_or_else(|| Error::input(format!("feature row `{id}` is not in the dataset")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let seed = derive_seed(m.seed, &[tag("downstream-ladder")]);
                let (ladder, centroids) =
                    class_decompose_with_centroids(&features, &labels, m.decomposition.downstream_k, seed, &params)?;
                ladder.save(&self.path(LADDER_DOWNSTREAM), Some(&self.hash_hex))?;
                centroids.save(&self.path(CENTROIDS_DOWNSTREAM), Some(&self.hash))?;
            }
        }
        Ok(Outcome::Computed)
    }

    fn load_ladder(&self, name: &str, command: &str) -> Result<GranularityLadder> {
        Ok(GranularityLadder::load(&self.require(name, command)?)?.0)
    }

    fn train_data_for(&self, ladder: &GranularityLadder, images: &[ImageSample]) -> Result<TrainData> {
        let by_id: HashMap<&str, &ImageSample> = images.iter().map(|s| (s.id.as_str(), s)).collect();
        let ordered = ladder
            .ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::input(format!("ladder sample `{id}` is not in the dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        TrainData::new(&ordered)
    }

    /// Pretext training over the pseudo-label ladder along the anti-curriculum.
    pub fn pretext(&self) -> Result<Outcome> {
        let ladder = self.load_ladder(LADDER_PRETEXT, "decompose --which pretext")?;
        if self.fresh(PRETEXT)? {
            return Ok(Outcome::UpToDate);
        }
        let m = &self.manifest;
        let schedule = build_schedule(m.decomposition.pretext_k, m.schedule.pretext_cycles, m.schedule.epochs_per_level)?;
        write_file(&self.path(SCHEDULE_PRETEXT), stamp(&schedule, &self.hash_hex)?.as_bytes())?;
        self.pretext_with(&ladder, &Walk::from_schedule(&schedule), "pretext", PRETEXT)
    }

    fn pretext_with(&self, ladder: &GranularityLadder, walk: &Walk, name: &str, artifact: &str) -> Result<Outcome> {
        let samples = self.labelled_samples()?;
        let split = self.split()?;
        let pool = self.pretext_pool(&samples, &split)?;
        let data = self.train_data_for(ladder, &pool)?;
        let init = random_model(&self.manifest.input_shape(), &self.manifest.backbone_specs()?, self.manifest.seed)?;
        let model = self.run_phase(Phase::Pretext, ladder, walk, &data, None, init, name)?;
        self.save_model(&model, None, artifact)?;
        Ok(Outcome::Computed)
    }

    /// Downstream fine-tuning from the pretext backbone with class
    /// decomposition, then test-set evaluation.
    pub fn finetune(&self) -> Result<Outcome> {
        let pretext = Checkpoint::load(&self.require(PRETEXT, "pretext")?)?;
        let ladder = self.load_ladder(LADDER_DOWNSTREAM, "decompose --which downstream")?;
        self.split()?;
        if self.fresh(CURVETE)? {
            return Ok(Outcome::UpToDate);
        }
        let m = &self.manifest;
        let init = model_from_checkpoint(&pretext, &m.input_shape(), &m.backbone_specs()?)?;
        let schedule = build_schedule(m.decomposition.downstream_k, m.schedule.cycles, m.schedule.epochs_per_level)?;
        write_file(&self.path(SCHEDULE_DOWNSTREAM), stamp(&schedule, &self.hash_hex)?.as_bytes())?;
        self.downstream_with(&ladder, &Walk::from_schedule(&schedule), init, CURVETE_ARM)?;
        Ok(Outcome::Computed)
    }

    fn downstream_with(&self, ladder: &GranularityLadder, walk: &Walk, init: NetworkModel, arm: &str) -> Result<()> {
        let samples = self.labelled_samples()?;
        let split = self.split()?;
        let data = self.train_data_for(ladder, &samples)?;
        let val_imgs = self.subset(&samples, &split, Subset::Validation)?;
        let (val_data, val_labels);
        let val = if val_imgs.is_empty() {
            None
        } else {
            val_data = TrainData::new(&val_imgs)?;
            val_labels = Self::labels_of(&val_imgs);
            Some(EvalSet {
                data: &val_data,
                labels: &val_labels,
            })
        };
        let model = self.run_phase(Phase::Downstream, ladder, walk, &data, val, init, arm)?;
        let last = *walk.visits.last().ok_or_else(|| Error::input("empty walk"))?;
        let level = ladder.level(last)?;
        self.save_model(&model, Some(level), &format!("{arm}.crvt"))?;
        let view = serde_json::json!({ "arm": arm, "level": level });
        write_file(&self.path(&format!("{arm}_level.json")), stamp(view, &self.hash_hex)?.as_bytes())
    }

    fn save_model(&self, model: &NetworkModel, level: Option<&LevelView>, name: &str) -> Result<()> {
        let mut c = Checkpoint::new(self.hash);
        for (n, t) in model.named_params() {
            c.push(n, t.clone());
        }
        if let Some(level) = level {
            let map: Vec<f32> = level.parent_map.iter().map(|&p| p as f32).collect();
            c.push("relabel.parent_map", Tensor::new(vec![map.len()], map)?);
            c.set_meta("level", level.j as u64);
            c.set_meta("class_count", level.class_count as u64);
        }
        c.set_meta("rng_state", self.manifest.seed);
        c.save(&self.path(name))
    }

    /// Runs a walk, checkpointing after every epoch and resuming from a
    /// partial checkpoint of the same manifest if one exists.
    #[allow(clippy::too_many_arguments)]
    fn run_phase(
        &self,
        phase: Phase,
        ladder: &GranularityLadder,
        walk: &Walk,
        data: &TrainData,
        val: Option<EvalSet>,
        init: NetworkModel,
        name: &str,
    ) -> Result<NetworkModel> {
        let m = &self.manifest;
        let config = m.train_config();
        let runner = CurriculumRunner {
            phase,
            ladder,
            walk: walk.clone(),
            data,
            val,
            config: &config,
        };
        let partial = self.path(&format!("{name}.partial.crvt"));
        let history_path = self.path(&format!("{name}_history.jsonl"));
        let header = serde_json::json!({ "manifest_hash": self.hash_hex, "phase": phase, "arm": name }).to_string() + "\n";
        let mut state = if artifact_hash(&partial)?.as_deref() == Some(self.hash_hex.as_str()) {
            let c = Checkpoint::load(&partial)?;
            let state = RunState::from_checkpoint(&c, &m.input_shape(), &m.backbone_specs()?, &m.optimizer)?;
            // Keep the records the checkpoint already covers.
            let old = fs::read_to_string(&history_path).unwrap_or_default();
            let kept: String = old
                .lines()
                .skip(1)
                .take(state.global_epoch)
                .map(|l| format!("{l}\n"))
                .collect();
            write_file(&history_path, (header + &kept).as_bytes())?;
            state
        } else {
            write_file(&history_path, header.as_bytes())?;
            runner.start(init)?
        };
        let mut log = fs::OpenOptions::new()
            .append(true)
            .open(&history_path)
            .map_err(|e| Error::io(&history_path, e))?;
        runner.run(&mut state, None, &mut |st: &RunState| {
            let rec = st.history.last().expect("epoch just ran");
            writeln!(log, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&history_path, e))?;
            st.to_checkpoint(self.hash, &runner.walk, m.seed).save(&partial)
        })?;
        if partial.exists() {
            fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        Ok(state.model)
    }

    /// Scores a checkpoint on the test split through relabel correction and
    /// writes `metrics_<checkpoint stem>.json`.
    pub fn evaluate(&self, checkpoint: Option<&Path>) -> Result<Outcome> {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => self.require(CURVETE, "finetune")?,
        };
        if !path.exists() {
            return Err(Error::Dependency {
                path,
                command: "finetune".into(),
            });
        }
        let arm = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| CURVETE_ARM.into());
        let metrics_name = metrics_file(&arm);
        if self.fresh(&metrics_name)? {
            return Ok(Outcome::UpToDate);
        }
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.manifest_hash != self.hash {
            return Err(Error::input(format!(
                "{} was produced under manifest {}, not {}",
                path.display(),
                hex::encode(ckpt.manifest_hash),
                self.hash_hex
            )));
        }
        let m = &self.manifest;
        let model = model_from_checkpoint(&ckpt, &m.input_shape(), &m.backbone_specs()?)?;
        let samples = self.labelled_samples()?;
        let split = self.split()?;
        let class_count = Self::class_count(&samples);
        let level = match ckpt.get("relabel.parent_map") {
            Some(t) => {
                let parent_map: Vec<usize> = t.data().iter().map(|&v| v as usize).collect();
                let j = ckpt.meta("level")? as usize;
                LevelView {
                    j,
                    class_count: ckpt.meta("class_count")? as usize,
                    sub_labels: vec![],
                    parent_map,
                }
            }
            None => LevelView {
                j: 1,
                class_count: model.class_count(),
                sub_labels: vec![],
                parent_map: (0..model.class_count()).collect(),
            },
        };
        let test = self.subset(&samples, &split, Subset::Test)?;
        let data = TrainData::new(&test)?;
        let labels = Self::labels_of(&test);
        let pred = predict_with_relabel(&model, &data, &level)?;
        let report = compute_metrics_with_classes(&pred, &labels, class_count.max(level.class_count))?;
        let metrics = ArmMetrics {
            manifest_hash: self.hash_hex.clone(),
            config_hash: m.config_hash_hex(),
            seed: m.seed,
            arm: arm.clone(),
            note: (arm == AblationMode::ClogCd.as_str())
                .then(|| "backbone randomly initialized; no pretrained weights at this scale".to_string()),
            report,
            test_ids: data.ids.clone(),
            correct: pred.iter().zip(&labels).map(|(p, l)| p == l).collect(),
        };
        write_file(&self.path(&metrics_name), serde_json::to_string_pretty(&metrics)?.as_bytes())?;
        Ok(Outcome::Computed)
    }

    /// Trains and evaluates one ablation arm.
    pub fn ablate(&self, mode: AblationMode) -> Result<Outcome> {
        let arm = mode.as_str();
        let ckpt_name = format!("{arm}.crvt");
        self.split()?;
        if self.fresh_all(&[&ckpt_name, &metrics_file(arm)])? {
            return Ok(Outcome::UpToDate);
        }
        let m = &self.manifest;
        let (k, cycles, epl) = (m.decomposition.downstream_k, m.schedule.cycles, m.schedule.epochs_per_level);
        let downstream_walk = Walk::from_schedule(&build_schedule(k, cycles, epl)?);
        match mode {
            AblationMode::TraditionalTransfer => {
                // Same epoch budget as the downstream curriculum, original classes only.
                let samples = self.labelled_samples()?;
                let split = self.split()?;
                let train = self.subset(&samples, &split, Subset::Train)?;
                let ladder = original_ladder(train.iter().map(|s| s.id.clone()).collect(), Self::labels_of(&train))?;
                let budget = cycles * (2 * k - 1) * epl;
                let init = random_model(&m.input_shape(), &m.backbone_specs()?, m.seed)?;
                self.downstream_with(&ladder, &Walk::fixed(1, 1, budget), init, arm)?;
            }
            AblationMode::WoClWSd => {
                let pretext_ladder = self.load_ladder(LADDER_PRETEXT, "decompose --which pretext")?;
                let ladder = self.load_ladder(LADDER_DOWNSTREAM, "decompose --which downstream")?;
                let pretext_ckpt = format!("{arm}_pretext.crvt");
                if !self.fresh(&pretext_ckpt)? {
                    // Finest level only, for as many visits as the curriculum trains.
                    let k = m.decomposition.pretext_k;
                    let visits = Walk::from_schedule(&build_schedule(k, m.schedule.pretext_cycles, epl)?)
                        .trained_visits(Phase::Pretext)
                        .max(1);
                    let walk = Walk::fixed(k, visits, epl);
                    self.pretext_with(&pretext_ladder, &walk, &format!("{arm}_pretext"), &pretext_ckpt)?;
                }
                let c = Checkpoint::load(&self.path(&pretext_ckpt))?;
                let init = model_from_checkpoint(&c, &m.input_shape(), &m.backbone_specs()?)?;
                self.downstream_with(&ladder, &downstream_walk, init, arm)?;
            }
            AblationMode::ClogCd => {
                let ladder = self.load_ladder(LADDER_DOWNSTREAM, "decompose --which downstream")?;
                let init = random_model(&m.input_shape(), &m.backbone_specs()?, m.seed)?;
                self.downstream_with(&ladder, &downstream_walk, init, arm)?;
            }
        }
        self.evaluate(Some(&self.path(&ckpt_name)))?;
        Ok(Outcome::Computed)
    }
}
