//! Convolutional autoencoder whose pooled bottleneck activations serve as
//! clustering features.

pub mod features;

use serde::{Deserialize, Serialize};

pub use features::FeatureMatrix;

use crate::curriculum::pace;
use crate::data::image::ImageSample;
use crate::data::loader::to_batch;
use crate::error::{Error, Result};
use crate::nn::{mse_with_grad, LayerSpec, Optimizer, OptimizerConfig, Parameterized, Sequential, Tensor};
use crate::rng::{derive_seed, tag};

/// Layers of the encoder; the output of the last one is the latent code.
const ENCODER_LAYERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaeSpec {
    /// Filters of the first and second encoder convolutions.
    pub encoder_filters: [usize; 2],
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for CaeSpec {
    fn default() -> Self {
        Self {
            encoder_filters: [16, 8],
            epochs: 50,
            learning_rate: 0.001,
            batch_size: 16,
        }
    }
}

impl CaeSpec {
    pub fn validate(&self) -> Result<()> {
        let [f1, f2] = self.encoder_filters;
        if f2 < 1 || f1 < f2 {
            return Err(Error::input(format!("encoder filters ({f1}, {f2}) must satisfy f1 >= f2 >= 1")));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::input("CAE epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("CAE learning rate must be positive"));
        }
        Ok(())
    }

    /// Encoder then mirrored decoder: conv/relu/pool twice, then
    /// upsample/conv/relu, upsample/conv to one channel.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let [f1, f2] = self.encoder_filters;
        vec![
            LayerSpec::conv(f1, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::conv(f2, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::conv(f1, 3),
            LayerSpec::Relu,
            LayerSpec::Upsample { factor: 2 },
            LayerSpec::conv(1, 3),
        ]
    }

    /// Latent dimension `f2 * (h/4) * (w/4)`.
    pub fn latent_dim(&self, height: usize, width: usize) -> usize {
        self.encoder_filters[1] * (height / 4) * (width / 4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub spec: CaeSpec,
    net: Sequential,
    /// Mean reconstruction loss of each training epoch.
    pub history: Vec<f64>,
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(4) || !width.is_multiple_of(4) || height == 0 || width == 0 {
        return Err(Error::input(format!(
            "CAE input {width}x{height} must have sides divisible by 4"
        )));
    }
    Ok(())
}

impl CaeModel {
    /// Untrained model with seeded weights.
    pub fn new(spec: &CaeSpec, height: usize, width: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        check_size(height, width)?;
        Ok(Self {
            spec: spec.clone(),
            net: Sequential::new(&[1, height, width], &spec.layers(), derive_seed(seed, &[tag("cae")]))?,
            history: vec![],
        })
    }

    /// `(height, width)` of accepted images.
    pub fn input_size(&self) -> (usize, usize) {
        let s = self.net.input_shape();
        (s[1], s[2])
    }

    pub fn latent_dim(&self) -> usize {
        let (h, w) = self.input_size();
        self.spec.latent_dim(h, w)
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    /// Parameters named `cae.<layer>.weight|bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.net
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("cae.{n}"), t))
            .collect()
    }

    /// Replaces all parameters, in [`CaeModel::named_params`] order.
    pub fn load_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let mut slots = self.net.params_mut();
        if slots.len() != tensors.len() {
            return Err(Error::input(format!(
                "CAE has {} parameter tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::input(format!(
                    "CAE parameter shape {:?} does not match {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
        Ok(())
    }

    fn batch(&self, images: &[&ImageSample]) -> Result<Tensor> {
        let (h, w) = self.input_size();
        for img in images {
            if (img.height(), img.width()) != (h, w) {
                return Err(Error::input(format!(
                    "image `{}` is {}x{}, CAE expects {w}x{h}",
                    img.id,
                    img.width(),
                    img.height()
                )));
            }
        }
        to_batch(images)
    }

    /// One row of latent activations per image.
    pub fn encode(&self, images: &[ImageSample]) -> Result<FeatureMatrix> {
        let refs: Vec<&ImageSample> = images.iter().collect();
        let latent = self.net.forward_prefix(&self.batch(&refs)?, ENCODER_LAYERS)?;
        let d = latent.row_len();
        FeatureMatrix::new(images.iter().map(|i| i.id.clone()).collect(), d, latent.into_data())
    }

    /// Decoder output clamped to `[0, 1]`, shape `[n, 1, h, w]`.
    pub fn reconstruct(&self, images: &[ImageSample]) -> Result<Tensor> {
        let refs: Vec<&ImageSample> = images.iter().collect();
        let mut out = self.net.forward(&self.batch(&refs)?)?;
        for v in out.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(out)
    }

    /// Mean squared error between the clamped reconstruction and the input.
    pub fn reconstruction_error(&self, images: &[ImageSample]) -> Result<f64> {
        let refs: Vec<&ImageSample> = images.iter().collect();
        let target = self.batch(&refs)?;
        let out = self.reconstruct(images)?;
        let sum: f64 = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        Ok(sum / out.len() as f64)
    }
}

/// Trains with Adam on MSE; images are shuffled per epoch under `seed`.
pub fn train_cae(images: &[ImageSample], spec: &CaeSpec, seed: u64) -> Result<CaeModel> {
    if images.len() < 2 {
        return Err(Error::input("CAE training needs at least 2 images"));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let mut model = CaeModel::new(spec, h, w, seed)?;
    let mut opt = Optimizer::new(OptimizerConfig::adam(spec.learning_rate));
    let indices: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..spec.epochs {
        let plan = pace(&indices, spec.batch_size, derive_seed(seed, &[tag("cae-epoch"), epoch as u64]))?;
        let mut total = 0.0;
        for batch in &plan.batches {
            let refs: Vec<&ImageSample> = batch.iter().map(|&i| &images[i]).collect();
            let x = model.batch(&refs)?;
            let out = model.net.forward_train(&x)?;
            let (loss, grad) = mse_with_grad(&out, &x)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("CAE loss diverged at epoch {epoch}")));
            }
            total += loss as f64 * batch.len() as f64;
            let grads = model.net.backward(&grad)?;
            opt.step(&mut model.net, &grads, epoch)?;
        }
        model.history.push(total / images.len() as f64);
    }
    Ok(model)
}
