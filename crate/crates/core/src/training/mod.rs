//! Curriculum walks over granularity ladders: pretext training on pseudo
//! labels, downstream fine-tuning with class decomposition, and prediction
//! through relabel correction.

pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;

use crate::curriculum::{pace, transfer_policy, CurriculumSchedule};
use crate::data::image::ImageSample;
use crate::data::loader::to_batch;
use crate::decomposition::{map_to_parent, GranularityLadder, LevelView};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_with_grad, LayerSpec, NetworkModel, Optimizer, OptimizerConfig, Tensor};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs_per_level: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 1 {
            return Err(Error::input("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Images packed as one `[n, 1, h, w]` tensor, with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub ids: Vec<String>,
    pub x: Tensor,
}

impl TrainData {
    pub fn new(samples: &[&ImageSample]) -> Result<Self> {
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            x: to_batch(samples)?,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> Result<Tensor> {
        let rows: Vec<&[f32]> = idx.iter().map(|&i| self.x.row(i)).collect();
        Tensor::stack(&self.x.shape()[1..], &rows)
    }
}

/// Held-out images with their original class labels.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub data: &'a TrainData,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretext,
    Downstream,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Pretext => tag("pretext"),
            Phase::Downstream => tag("downstream"),
        }
    }

    /// Level 1 of an unlabelled ladder is a single pseudo-class, which gives
    /// cross-entropy nothing to learn, so pretext walks do not train it.
    pub fn trains_level(self, level: usize) -> bool {
        !(self == Phase::Pretext && level == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub cycle: usize,
    pub visit: usize,
    pub level: usize,
    /// Epoch counter across the whole phase (drives the learning-rate decay).
    pub epoch: usize,
    pub epoch_in_level: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub learning_rate: f64,
}

pub type RunHistory = Vec<EpochRecord>;

/// Ordered level visits; `cycle_len` visits form one cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Walk {
    pub visits: Vec<usize>,
    pub cycle_len: usize,
    pub epochs_per_level: usize,
}

impl Walk {
    pub fn from_schedule(s: &CurriculumSchedule) -> Self {
        Self {
            visits: s.visits.clone(),
            cycle_len: s.cycle_len(),
            epochs_per_level: s.epochs_per_level,
        }
    }

    /// `cycles` visits of a single level, no curriculum.
    pub fn fixed(level: usize, cycles: usize, epochs_per_level: usize) -> Self {
        Self {
            visits: vec![level; cycles],
            cycle_len: 1,
            epochs_per_level,
        }
    }

    /// Visit indices that start with a head re-initialization: a trained visit
    /// whose level differs from the previous trained visit.
    pub fn head_resets(&self, phase: Phase) -> Vec<usize> {
        let mut out = vec![];
        let mut last = None;
        for (i, &level) in self.visits.iter().enumerate() {
            if !phase.trains_level(level) {
                continue;
            }
            if last.is_some_and(|l| l != level) {
                out.push(i);
            }
            last = Some(level);
        }
        out
    }

    pub fn trained_visits(&self, phase: Phase) -> usize {
        self.visits.iter().filter(|&&l| phase.trains_level(l)).count()
    }
}

/// Position of a walk: the next epoch to run is `epoch_in_visit` of `visit`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub model: NetworkModel,
    pub optimizer: Optimizer,
    pub visit: usize,
    pub epoch_in_visit: usize,
    pub global_epoch: usize,
    /// Records produced since this state was created or restored.
    pub history: RunHistory,
}

impl RunState {
    pub fn to_checkpoint(&self, manifest_hash: [u8; 32], walk: &Walk, seed: u64) -> Checkpoint {
        let mut c = Checkpoint::new(manifest_hash);
        for (name, t) in self.model.named_params() {
            c.push(name, t.clone());
        }
        for (name, t) in self.optimizer.export_state() {
            c.push(name, t);
        }
        let level = walk.visits.get(self.visit).copied().unwrap_or(0);
        c.set_meta("level", level as u64);
        c.set_meta("cycle", (self.visit / walk.cycle_len.max(1)) as u64);
        c.set_meta("visit", self.visit as u64);
        c.set_meta("epoch", self.epoch_in_visit as u64);
        c.set_meta("global_epoch", self.global_epoch as u64);
        c.set_meta("opt_step", self.optimizer.steps_taken());
        c.set_meta("rng_state", seed);
        c
    }

    /// Rebuilds a state from a checkpoint written by [`RunState::to_checkpoint`].
    pub fn from_checkpoint(
        c: &Checkpoint,
        input_shape: &[usize],
        backbone: &[LayerSpec],
        optimizer: &OptimizerConfig,
    ) -> Result<Self> {
        Ok(Self {
            model: model_from_checkpoint(c, input_shape, backbone)?,
            optimizer: {
                let mut o = Optimizer::new(optimizer.clone());
                o.import_state(c.with_prefix("opt."), c.meta("opt_step")?)?;
                o
            },
            visit: c.meta("visit")? as usize,
            epoch_in_visit: c.meta("epoch")? as usize,
            global_epoch: c.meta("global_epoch")? as usize,
            history: vec![],
        })
    }
}

/// Loads `backbone.*` and `head.*` tensors into a model of the given shape.
pub fn model_from_checkpoint(c: &Checkpoint, input_shape: &[usize], backbone: &[LayerSpec]) -> Result<NetworkModel> {
    let head = c
        .get("head.weight")
        .ok_or_else(|| Error::input("checkpoint has no head.weight"))?;
    let mut model = NetworkModel::new(input_shape, backbone, head.shape()[0], 0)?;
    let expected = model.named_params().len();
    let mut loaded = 0;
    for (name, t) in &c.tensors {
        if name.starts_with("backbone.") || name.starts_with("head.") {
            model.set_param(name, t.clone())?;
            loaded += 1;
        }
    }
    if loaded != expected {
        return Err(Error::input(format!(
            "checkpoint holds {loaded} model tensors, model needs {expected}"
        )));
    }
    Ok(model)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Sub-class argmax per row, evaluated in chunks.
pub fn predict_sub_classes(model: &NetworkModel, data: &TrainData) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let logits = model.forward(&data.rows(chunk)?)?;
        out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
    }
    Ok(out)
}

/// Argmax over sub-class logits, mapped to the parent class.
pub fn predict_with_relabel(model: &NetworkModel, data: &TrainData, level: &LevelView) -> Result<Vec<usize>> {
    if model.class_count() != level.sub_class_count() {
        return Err(Error::State(format!(
            "head has {} outputs but level {} has {} sub-classes",
            model.class_count(),
            level.j,
            level.sub_class_count()
        )));
    }
    predict_sub_classes(model, data)?
        .into_iter()
        .map(|s| map_to_parent(level, s))
        .collect()
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Where an epoch sits in a walk; seeds and the decay schedule hang off it.
#[derive(Debug, Clone, Copy)]
pub struct EpochContext {
    pub phase: Phase,
    pub cycle: usize,
    pub visit: usize,
    pub global_epoch: usize,
    pub epoch_in_level: usize,
}

/// One epoch of mini-batch training on a level's sub-labels.
pub fn train_epoch(
    model: &mut NetworkModel,
    optimizer: &mut Optimizer,
    data: &TrainData,
    level: &LevelView,
    val: Option<&EvalSet>,
    config: &TrainConfig,
    ctx: EpochContext,
) -> Result<EpochRecord> {
    if model.class_count() != level.sub_class_count() {
        return Err(Error::State(format!(
            "head has {} outputs but level {} has {} sub-classes",
            model.class_count(),
            level.j,
            level.sub_class_count()
        )));
    }
    if level.sub_labels.len() != data.len() {
        return Err(Error::input(format!(
            "level {} labels {} samples, data has {}",
            level.j,
            level.sub_labels.len(),
            data.len()
        )));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let epoch_seed = derive_seed(config.seed, &[ctx.phase.tag(), tag("epoch"), ctx.global_epoch as u64]);
    let plan = pace(&indices, config.batch_size, epoch_seed)?;
    let mut losses = vec![0f32; data.len()];
    let mut correct = 0usize;
    for batch in &plan.batches {
        let x = data.rows(batch)?;
        let y: Vec<usize> = batch.iter().map(|&i| level.sub_labels[i]).collect();
        let logits = model.forward_train(&x)?;
        let (per, grad) = cross_entropy_with_grad(&logits, &y)?;
        for (k, &i) in batch.iter().enumerate() {
            losses[i] = per[k];
            correct += usize::from(argmax(logits.row(k)) == y[k]);
        }
        let grads = model.backward(&grad)?;
        optimizer.step(model, &grads, ctx.global_epoch)?;
    }
    let train_loss = losses.iter().map(|&l| l as f64).sum::<f64>() / data.len() as f64;
    if !train_loss.is_finite() {
        return Err(Error::Numerical(format!(
            "training loss diverged at level {} epoch {}",
            level.j, ctx.global_epoch
        )));
    }
    let val_accuracy = match val {
        Some(v) => Some(accuracy(&predict_with_relabel(model, v.data, level)?, v.labels)),
        None => None,
    };
    Ok(EpochRecord {
        phase: ctx.phase,
        cycle: ctx.cycle,
        visit: ctx.visit,
        level: level.j,
        epoch: ctx.global_epoch,
        epoch_in_level: ctx.epoch_in_level,
        train_loss,
        train_accuracy: correct as f64 / data.len() as f64,
        val_accuracy,
        learning_rate: optimizer.config().lr_at(ctx.global_epoch),
    })
}

/// Runs `config.epochs_per_level` epochs on one level (a single visit).
pub fn train_level(
    model: &mut NetworkModel,
    level: &LevelView,
    data: &TrainData,
    val: Option<&EvalSet>,
    config: &TrainConfig,
) -> Result<RunHistory> {
    let mut optimizer = Optimizer::new(config.optimizer.clone());
    (0..config.epochs_per_level)
        .map(|e| {
            let ctx = EpochContext {
                phase: Phase::Downstream,
                cycle: 0,
                visit: 0,
                global_epoch: e,
                epoch_in_level: e,
            };
            train_epoch(model, &mut optimizer, data, level, val, config, ctx)
        })
        .collect()
}

/// A walk over a ladder, resumable at any epoch boundary.
pub struct CurriculumRunner<'a> {
    pub phase: Phase,
    pub ladder: &'a GranularityLadder,
    pub walk: Walk,
    pub data: &'a TrainData,
    pub val: Option<EvalSet<'a>>,
    pub config: &'a TrainConfig,
}

impl<'a> CurriculumRunner<'a> {
    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.ladder.ids != self.data.ids {
            return Err(Error::input("ladder and training data list different samples"));
        }
        if let Some(&bad) = self.walk.visits.iter().find(|&&l| l < 1 || l > self.ladder.k_max) {
            return Err(Error::input(format!(
                "walk visits level {bad}, ladder has 1..={}",
                self.ladder.k_max
            )));
        }
        Ok(())
    }

    fn head_seed(&self, visit: usize) -> u64 {
        derive_seed(self.config.seed, &[self.phase.tag(), tag("head"), visit as u64])
    }

    /// Gives `init` a fresh head for the first trained level.
    pub fn start(&self, mut init: NetworkModel) -> Result<RunState> {
        self.check()?;
        if let Some((v, &level)) = self
            .walk
            .visits
            .iter()
            .enumerate()
            .find(|(_, &l)| self.phase.trains_level(l))
        {
            transfer_policy(&mut init, self.ladder.level(level)?.sub_class_count(), self.head_seed(v))?;
        }
        Ok(RunState {
            model: init,
            optimizer: Optimizer::new(self.config.optimizer.clone()),
            visit: 0,
            epoch_in_visit: 0,
            global_epoch: 0,
            history: vec![],
        })
    }

    /// Continues the walk for at most `max_epochs` epochs (all if `None`).
    /// `on_epoch` sees the state after each epoch. Returns whether the walk
    /// is complete.
    pub fn run(
        &self,
        state: &mut RunState,
        max_epochs: Option<usize>,
        on_epoch: &mut dyn FnMut(&RunState) -> Result<()>,
    ) -> Result<bool> {
        self.check()?;
        let resets = self.walk.head_resets(self.phase);
        let mut budget = max_epochs.unwrap_or(usize::MAX);
        while state.visit < self.walk.visits.len() {
            let level_j = self.walk.visits[state.visit];
            if !self.phase.trains_level(level_j) || self.walk.epochs_per_level == 0 {
                state.visit += 1;
                state.epoch_in_visit = 0;
                continue;
            }
            if budget == 0 {
                return Ok(false);
            }
            let level = self.ladder.level(level_j)?;
            if state.epoch_in_visit == 0 && resets.contains(&state.visit) {
                transfer_policy(&mut state.model, level.sub_class_count(), self.head_seed(state.visit))?;
                state.optimizer.reset();
            }
            let ctx = EpochContext {
                phase: self.phase,
                cycle: state.visit / self.walk.cycle_len.max(1),
                visit: state.visit,
                global_epoch: state.global_epoch,
                epoch_in_level: state.epoch_in_visit,
            };
            let rec = train_epoch(
                &mut state.model,
                &mut state.optimizer,
                self.data,
                level,
                self.val.as_ref(),
                self.config,
                ctx,
            )?;
            state.history.push(rec);
            state.global_epoch += 1;
            state.epoch_in_visit += 1;
            if state.epoch_in_visit == self.walk.epochs_per_level {
                state.visit += 1;
                state.epoch_in_visit = 0;
            }
            budget -= 1;
            on_epoch(state)?;
        }
        Ok(true)
    }

    /// Level view of the last visit, used for relabel correction.
    pub fn final_level(&self) -> Result<&'a LevelView> {
        let last = *self
            .walk
            .visits
            .last()
            .ok_or_else(|| Error::input("empty walk"))?;
        self.ladder.level(last)
    }
}

/// Pretext walk over a pseudo-label ladder from a freshly initialized model.
pub fn run_pretext(
    ladder: &GranularityLadder,
    walk: &Walk,
    input_shape: &[usize],
    backbone: &[LayerSpec],
    data: &TrainData,
    config: &TrainConfig,
) -> Result<(NetworkModel, RunHistory)> {
    let runner = CurriculumRunner {
        phase: Phase::Pretext,
        ladder,
        walk: walk.clone(),
        data,
        val: None,
        config,
    };
    let init = NetworkModel::new(input_shape, backbone, 1, backbone_seed(config.seed))?;
    let mut state = runner.start(init)?;
    runner.run(&mut state, None, &mut |_| Ok(()))?;
    Ok((state.model, state.history))
}

/// Downstream walk starting from `init`'s backbone. Returns the final model
/// and the level view its head predicts.
pub fn run_downstream(
    ladder: &GranularityLadder,
    walk: &Walk,
    init: NetworkModel,
    data: &TrainData,
    val: Option<EvalSet>,
    config: &TrainConfig,
) -> Result<(NetworkModel, LevelView, RunHistory)> {
    let runner = CurriculumRunner {
        phase: Phase::Downstream,
        ladder,
        walk: walk.clone(),
        data,
        val,
        config,
    };
    let mut state = runner.start(init)?;
    runner.run(&mut state, None, &mut |_| Ok(()))?;
    Ok((state.model, runner.final_level()?.clone(), state.history))
}

/// Seed of randomly initialized backbones.
pub fn backbone_seed(seed: u64) -> u64 {
    derive_seed(seed, &[tag("backbone-init")])
}

/// Randomly initialized model, as used when no pretext weights exist.
pub fn random_model(input_shape: &[usize], backbone: &[LayerSpec], seed: u64) -> Result<NetworkModel> {
    NetworkModel::new(input_shape, backbone, 1, backbone_seed(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Random backbone fine-tuned on the original classes only.
    TraditionalTransfer,
    /// Pretext at the finest level only, then the usual downstream walk.
    WoClWSd,
    /// No pretext; downstream curriculum with class decomposition.
    ClogCd,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::TraditionalTransfer,
        AblationMode::WoClWSd,
        AblationMode::ClogCd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::TraditionalTransfer => "traditional_transfer",
            AblationMode::WoClWSd => "wo_cl_w_sd",
            AblationMode::ClogCd => "clog_cd",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown ablation mode `{s}`")))
    }
}

/// Ladder with only the original labelling (k_max = 1).
pub fn original_ladder(ids: Vec<String>, labels: Vec<usize>) -> Result<GranularityLadder> {
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    if class_count == 0 {
        return Err(Error::input("no labelled samples"));
    }
    Ok(GranularityLadder {
        kind: crate::decomposition::LadderKind::Class,
        k_max: 1,
        ids,
        levels: vec![LevelView {
            j: 1,
            class_count,
            sub_labels: labels,
            parent_map: (0..class_count).collect(),
        }],
    })
}
