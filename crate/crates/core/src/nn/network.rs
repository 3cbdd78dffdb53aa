//! Sequential layer stacks with a recorded forward pass for reverse-mode
//! gradients, and the backbone + classification-head model built on top.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::layers::{Layer, LayerSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

/// Samples per gradient-accumulation chunk. Chunk results are reduced in chunk
/// order, so gradients do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// Anything exposing an ordered list of parameter tensors.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    /// Layer index owning each parameter, aligned with [`Parameterized::params`].
    fn param_layers(&self) -> Vec<usize>;
}

/// One gradient tensor per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
    pub layers: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// Returns the layer index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors
            .iter()
            .zip(&self.layers)
            .find(|(t, _)| !t.is_finite())
            .map(|(_, &l)| l)
    }
}

#[derive(Debug, Clone)]
struct Tape<T> {
    /// `acts[s][i]` is the input of layer `i` for sample `s`.
    acts: Vec<Vec<Vec<T>>>,
}

#[derive(Debug, Clone)]
pub struct Sequential<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    tape: Option<Tape<T>>,
}

impl<T: Scalar> PartialEq for Sequential<T> {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl<T: Scalar> Sequential<T> {
    /// Builds the stack, checking shape compatibility layer by layer.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed, &[tag("layers")]);
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config {
                layer: 0,
                message: format!("invalid input shape {shape:?}"),
            });
        }
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::new(i, *spec, &shape, &mut rng)?;
            shape = layer.out_shape().to_vec();
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            tape: None,
        })
    }

    pub(crate) fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Self {
        Self {
            input_shape,
            layers,
            tape: None,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.out_shape())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer<T>> {
        self.tape = None;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let per_sample: usize = self.input_shape.iter().product();
        if batch.rows() == 0 {
            return Err(Error::input("empty batch"));
        }
        let shape_ok = batch.shape()[1..] == self.input_shape[..]
            || (batch.shape().len() == 2 && batch.row_len() == per_sample);
        if !shape_ok {
            return Err(Error::Config {
                layer: 0,
                message: format!(
                    "batch shape {:?} does not match model input {:?}",
                    batch.shape(),
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[T], upto: usize) -> Vec<T> {
        let mut cur = x.to_vec();
        for layer in &self.layers[..upto] {
            cur = layer.forward(&cur);
        }
        cur
    }

    fn batch_output(&self, rows: Vec<Vec<T>>, shape: &[usize]) -> Result<Tensor<T>> {
        let refs: Vec<&[T]> = rows.iter().map(Vec::as_slice).collect();
        Tensor::stack(shape, &refs)
    }

    /// Inference pass; does not touch the recorded tape.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_prefix(batch, self.layers.len())
    }

    /// Runs only the first `upto` layers.
    pub fn forward_prefix(&self, batch: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let upto = upto.min(self.layers.len());
        let rows: Vec<Vec<T>> = (0..batch.rows())
            .into_par_iter()
            .map(|s| self.forward_sample(batch.row(s), upto))
            .collect();
        let shape = if upto == 0 {
            self.input_shape.clone()
        } else {
            self.layers[upto - 1].out_shape().to_vec()
        };
        self.batch_output(rows, &shape)
    }

    /// Forward pass that records activations for a following [`Sequential::backward`].
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let layers = &self.layers;
        let traced: Vec<(Vec<Vec<T>>, Vec<T>)> = (0..batch.rows())
            .into_par_iter()
            .map(|s| {
                let mut acts = Vec::with_capacity(layers.len());
                let mut cur = batch.row(s).to_vec();
                for layer in layers {
                    let next = layer.forward(&cur);
                    acts.push(cur);
                    cur = next;
                }
                (acts, cur)
            })
            .collect();
        let (acts, outs): (Vec<_>, Vec<_>) = traced.into_iter().unzip();
        let out = self.batch_output(outs, self.output_shape())?;
        self.tape = Some(Tape { acts });
        Ok(out)
    }

    /// Backpropagates `grad_output` (same shape as the last forward output)
    /// through the recorded pass. Consumes the tape.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let n = tape.acts.len();
        let out_len: usize = self.output_shape().iter().product();
        if grad_output.rows() != n || grad_output.row_len() != out_len {
            return Err(Error::input(format!(
                "output gradient shape {:?} does not match forward output [{n}, {out_len}]",
                grad_output.shape()
            )));
        }
        let layers = &self.layers;
        let zero_grads = || -> Vec<(Vec<T>, Vec<T>)> {
            layers
                .iter()
                .map(|l| {
                    (
                        vec![T::zero(); l.weight().map_or(0, |w| w.len())],
                        vec![T::zero(); l.bias().map_or(0, |b| b.len())],
                    )
                })
                .collect()
        };
        let first_param = layers.iter().position(|l| l.spec().has_params());
        let chunks: Vec<Vec<(Vec<T>, Vec<T>)>> = tape
            .acts
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc = zero_grads();
                for (j, acts) in chunk.iter().enumerate() {
                    let s = ci * GRAD_CHUNK + j;
                    let mut dy = grad_output.row(s).to_vec();
                    for (i, layer) in layers.iter().enumerate().rev() {
                        // Gradients below the first parameterised layer are never used.
                        let need_dx = first_param.is_some_and(|fp| i > fp);
                        let (gw, gb) = &mut acc[i];
                        match layer.backward(&acts[i], &dy, gw, gb, need_dx) {
                            Some(dx) => dy = dx,
                            None => break,
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = zero_grads();
        for chunk in chunks {
            for ((tw, tb), (cw, cb)) in total.iter_mut().zip(chunk) {
                tw.iter_mut().zip(cw).for_each(|(a, b)| *a += b);
                tb.iter_mut().zip(cb).for_each(|(a, b)| *a += b);
            }
        }
        let mut tensors = Vec::new();
        let mut owner = Vec::new();
        for (i, (layer, (gw, gb))) in layers.iter().zip(total).enumerate() {
            if let (Some(w), Some(b)) = (layer.weight(), layer.bias()) {
                tensors.push(Tensor::new(w.shape().to_vec(), gw)?);
                tensors.push(Tensor::new(b.shape().to_vec(), gb)?);
                owner.extend([i, i]);
            }
        }
        Ok(Gradients {
            tensors,
            layers: owner,
        })
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// `(name, tensor)` pairs, names like `3.weight`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let (Some(w), Some(b)) = (l.weight(), l.bias()) {
                out.push((format!("{i}.weight"), w));
                out.push((format!("{i}.bias"), b));
            }
        }
        out
    }
}

impl<T: Scalar> Parameterized<T> for Sequential<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
            .collect()
    }

    fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec().has_params())
            .flat_map(|(i, _)| [i, i])
            .collect()
    }
}

/// Heads start near zero. A full-scale random head sends large random
/// gradients into a trained backbone after every level change and kills
/// ReLU units in the layer below it.
pub const HEAD_INIT_SCALE: f64 = 0.01;

/// Backbone layers followed by a dense classification head sized to the
/// class count of the dataset view currently being trained.
#[derive(Debug, Clone)]
pub struct NetworkModel<T = f32> {
    net: Sequential<T>,
    backbone_specs: Vec<LayerSpec>,
}

impl<T: Scalar> PartialEq for NetworkModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.backbone_specs == other.backbone_specs
    }
}

impl<T: Scalar> NetworkModel<T> {
    /// Backbone weights come from `seed`; the head from a seed derived from it.
    pub fn new(
        input_shape: &[usize],
        backbone: &[LayerSpec],
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::input("class count must be at least 1"));
        }
        let body = Sequential::<T>::new(input_shape, backbone, seed)?;
        let mut model = Self {
            net: body,
            backbone_specs: backbone.to_vec(),
        };
        let head = model.fresh_head(class_count, crate::rng::derive_seed(seed, &[tag("head")]))?;
        model.net.layers_mut().push(head);
        Ok(model)
    }

    fn fresh_head(&self, class_count: usize, seed: u64) -> Result<Layer<T>> {
        let backbone_out = match self.backbone_specs.len() {
            0 => self.net.input_shape().to_vec(),
            n => self.net.layers()[n - 1].out_shape().to_vec(),
        };
        let mut rng = rng_from(seed, &[tag("head-init")]);
        let mut head = Layer::new(
            self.backbone_specs.len(),
            LayerSpec::Dense {
                out_dim: class_count,
            },
            &backbone_out,
            &mut rng,
        )?;
        head.scale_weights(T::from_f64_lossy(HEAD_INIT_SCALE));
        Ok(head)
    }

    /// Replaces the head with a freshly initialised dense layer of
    /// `new_class_count` outputs. Backbone parameters are left untouched.
    pub fn reinit_head(&mut self, new_class_count: usize, seed: u64) -> Result<()> {
        if new_class_count == 0 {
            return Err(Error::input("class count must be at least 1"));
        }
        let head = self.fresh_head(new_class_count, seed)?;
        let layers = self.net.layers_mut();
        *layers.last_mut().expect("model always has a head") = head;
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.head().out_len()
    }

    pub fn input_shape(&self) -> &[usize] {
        self.net.input_shape()
    }

    pub fn backbone_specs(&self) -> &[LayerSpec] {
        &self.backbone_specs
    }

    pub fn backbone(&self) -> &[Layer<T>] {
        &self.net.layers()[..self.backbone_specs.len()]
    }

    pub fn head(&self) -> &Layer<T> {
        self.net.layers().last().expect("model always has a head")
    }

    pub fn network(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(batch)
    }

    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward_train(batch)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        self.net.backward(grad_logits)
    }

    /// Parameter names: `backbone.<i>.weight|bias`, `head.weight|bias`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let head_idx = self.backbone_specs.len();
        self.net
            .named_params()
            .into_iter()
            .map(|(name, t)| {
                let (idx, kind) = name.split_once('.').expect("index.kind");
                let label = if idx.parse::<usize>().ok() == Some(head_idx) {
                    format!("head.{kind}")
                } else {
                    format!("backbone.{name}")
                };
                (label, t)
            })
            .collect()
    }

    /// Little-endian `f32` bytes of all backbone parameters, in order.
    pub fn backbone_bytes(&self) -> Vec<u8> {
        self.backbone()
            .iter()
            .flat_map(|l| l.weight().into_iter().chain(l.bias()))
            .flat_map(|t| t.to_le_f32_bytes())
            .collect()
    }

    pub fn backbone_digest(&self) -> [u8; 32] {
        Sha256::digest(self.backbone_bytes()).into()
    }

    /// Overwrites a named parameter (see [`NetworkModel::named_params`]).
    /// A head of a different width is rebuilt to match.
    pub fn set_param(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let head_idx = self.backbone_specs.len();
        let (idx, kind) = if let Some(kind) = name.strip_prefix("head.") {
            (head_idx, kind)
        } else if let Some(rest) = name.strip_prefix("backbone.") {
            let (i, kind) = rest
                .split_once('.')
                .ok_or_else(|| Error::input(format!("bad parameter name `{name}`")))?;
            let i: usize = i
                .parse()
                .map_err(|_| Error::input(format!("bad parameter name `{name}`")))?;
            (i, kind)
        } else {
            return Err(Error::input(format!("bad parameter name `{name}`")));
        };
        if idx == head_idx && kind == "weight" && tensor.shape()[0] != self.class_count() {
            self.reinit_head(tensor.shape()[0], 0)?;
        }
        let layer = self
            .net
            .layers_mut()
            .get_mut(idx)
            .ok_or_else(|| Error::input(format!("no layer for parameter `{name}`")))?;
        let slot = match kind {
            "weight" => layer.weight.as_mut(),
            "bias" => layer.bias.as_mut(),
            _ => None,
        }
        .ok_or_else(|| Error::input(format!("layer has no parameter `{name}`")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::Config {
                layer: idx,
                message: format!(
                    "parameter `{name}` has shape {:?}, got {:?}",
                    slot.shape(),
                    tensor.shape()
                ),
            });
        }
        *slot = tensor;
        Ok(())
    }

    /// Converts to another scalar type (used by gradient checks).
    pub fn cast<U: Scalar>(&self) -> NetworkModel<U> {
        let layers = self
            .net
            .layers()
            .iter()
            .map(|l| Layer {
                spec: *l.spec(),
                in_shape: l.in_shape().to_vec(),
                out_shape: l.out_shape().to_vec(),
                weight: l.weight().map(Tensor::cast),
                bias: l.bias().map(Tensor::cast),
            })
            .collect();
        NetworkModel {
            net: Sequential::from_layers(self.net.input_shape().to_vec(), layers),
            backbone_specs: self.backbone_specs.clone(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for NetworkModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.net.params_mut()
    }

    fn param_layers(&self) -> Vec<usize> {
        self.net.param_layers()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cnn() -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv(2, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 5 },
            LayerSpec::Relu,
        ]
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut m = NetworkModel::<f32>::new(&[1, 8, 8], &small_cnn(), 3, 1).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|i| i as f32).collect()).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut m = NetworkModel::<f32>::new(&[3], &[], 3, 0).unwrap();
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        m.set_param("head.weight", eye).unwrap();
        m.set_param("head.bias", Tensor::zeros(vec![3])).unwrap();
        let y = m.forward(&Tensor::new(vec![1, 3], vec![1., 2., 3.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1., 2., 3.]);
    }

    #[test]
    fn mismatched_batch_is_config_error() {
        let m = NetworkModel::<f32>::new(&[1, 8, 8], &small_cnn(), 3, 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 1, 6, 6]);
        assert!(matches!(m.forward(&x), Err(Error::Config { layer: 0, .. })));
    }

    #[test]
    fn incompatible_layers_name_the_layer() {
        let specs = [LayerSpec::Flatten, LayerSpec::conv(2, 3)];
        let err = NetworkModel::<f32>::new(&[1, 8, 8], &specs, 2, 0).unwrap_err();
        assert!(matches!(err, Error::Config { layer: 1, .. }), "{err}");
    }

    #[test]
    fn backward_requires_forward() {
        let mut m = NetworkModel::<f32>::new(&[4], &[], 2, 0).unwrap();
        let g = Tensor::zeros(vec![1, 2]);
        assert!(matches!(m.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mut m = NetworkModel::<f32>::new(&[1, 8, 8], &small_cnn(), 3, 4).unwrap();
        let x = Tensor::new(vec![3, 1, 8, 8], (0..192).map(|i| (i % 7) as f32).collect()).unwrap();
        m.forward_train(&x).unwrap();
        let g = m.backward(&Tensor::zeros(vec![3, 3])).unwrap();
        assert_eq!(g.tensors.len(), m.params().len());
        for (gt, p) in g.tensors.iter().zip(m.params()) {
            assert_eq!(gt.shape(), p.shape());
            assert!(gt.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reinit_head_keeps_backbone() {
        let mut m = NetworkModel::<f32>::new(&[1, 8, 8], &small_cnn(), 10, 9).unwrap();
        let before = m.backbone_bytes();
        let head_before = m.head().clone();
        m.reinit_head(10, 77).unwrap();
        assert_eq!(m.backbone_bytes(), before);
        assert_ne!(m.head(), &head_before);
        m.reinit_head(2, 78).unwrap();
        assert_eq!(m.class_count(), 2);
        assert_eq!(m.backbone_bytes(), before);
        let y = m.forward(&Tensor::zeros(vec![1, 1, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
    }

    #[test]
    fn reinit_head_is_deterministic() {
        let mut a = NetworkModel::<f32>::new(&[6], &[], 4, 1).unwrap();
        let mut b = a.clone();
        a.reinit_head(3, 5).unwrap();
        b.reinit_head(3, 5).unwrap();
        assert_eq!(a, b);
    }
}
