//! Analytic gradients vs. central finite differences.
//!
//! Central differences are only meaningful where the loss is smooth over
//! `[θ - h, θ + h]`. A check first certifies that no perturbation flips a
//! ReLU sign or a max-pool winner (the activation pattern); instances that do
//! are redrawn.

use rand::Rng;

use super::layers::LayerSpec;
use super::loss::{cross_entropy, cross_entropy_with_grad, mse_loss, mse_with_grad};
use super::network::{NetworkModel, Parameterized, Sequential};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    /// Instances to try before giving up on finding a kink-free one.
    pub max_draws: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            rel_tol: 1e-4,
            max_draws: 40,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Comparison {
    pub checked: usize,
    pub kink_crossings: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.kink_crossings == 0 && self.failures.is_empty()
    }
}

pub fn uniform_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from(seed, &[tag("gradcheck")]);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// ReLU signs and max-pool argmax positions for the whole batch.
pub fn activation_pattern(net: &Sequential<f64>, batch: &Tensor<f64>) -> Vec<usize> {
    let mut pattern = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match *layer.spec() {
            LayerSpec::Relu => {
                let input = net.forward_prefix(batch, i).expect("valid batch");
                pattern.extend(input.data().iter().map(|&v| (v > 0.0) as usize));
            }
            LayerSpec::MaxPool { size } => {
                let input = net.forward_prefix(batch, i).expect("valid batch");
                let [c, h, w] = [layer.in_shape()[0], layer.in_shape()[1], layer.in_shape()[2]];
                for s in 0..batch.rows() {
                    let x = input.row(s);
                    for ch in 0..c {
                        for oy in 0..h / size {
                            for ox in 0..w / size {
                                let mut best = (f64::NEG_INFINITY, 0);
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let idx = ch * h * w + (oy * size + dy) * w + ox * size + dx;
                                        if x[idx] > best.0 {
                                            best = (x[idx], idx);
                                        }
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    pattern
}

/// Compares every parameter entry of `model` against `analytic`.
pub fn compare<M, L>(
    model: &mut M,
    net_of: fn(&M) -> &Sequential<f64>,
    analytic: &[Tensor<f64>],
    batch: &Tensor<f64>,
    cfg: &GradCheckConfig,
    loss: L,
) -> Comparison
where
    M: Parameterized<f64>,
    L: Fn(&M) -> f64,
{
    let h = cfg.h;
    let base = activation_pattern(net_of(model), batch);
    let mut out = Comparison::default();
    for pi in 0..model.params().len() {
        for e in 0..model.params()[pi].len() {
            let orig = model.params()[pi].data()[e];
            model.params_mut()[pi].data_mut()[e] = orig + h;
            let plus = loss(model);
            let plus_ok = activation_pattern(net_of(model), batch) == base;
            model.params_mut()[pi].data_mut()[e] = orig - h;
            let minus = loss(model);
            let minus_ok = activation_pattern(net_of(model), batch) == base;
            model.params_mut()[pi].data_mut()[e] = orig;
            if !(plus_ok && minus_ok) {
                out.kink_crossings += 1;
                continue;
            }
            out.checked += 1;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[e];
            let err = rel_err(a, numeric);
            out.worst = out.worst.max(err);
            if err >= cfg.rel_tol {
                out.failures.push(format!("param {pi}[{e}]: analytic {a:e} vs numeric {numeric:e}"));
            }
        }
    }
    out
}

fn first_smooth(cfg: &GradCheckConfig, mut attempt: impl FnMut(u64) -> Result<Comparison>) -> Result<Comparison> {
    for draw in 0..cfg.max_draws {
        let cmp = attempt(draw)?;
        if cmp.kink_crossings == 0 {
            return Ok(cmp);
        }
    }
    Err(Error::Numerical(format!("no kink-free instance in {} draws", cfg.max_draws)))
}

/// Cross-entropy check of a classifier with backbone `specs`. The head gets
/// full-scale weights (heads normally start near zero) so the gradients
/// reaching the backbone sit well above finite-difference noise.
pub fn check_classifier(
    input: &[usize],
    specs: &[LayerSpec],
    classes: usize,
    batch_size: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<(Comparison, usize)> {
    let mut shape = vec![batch_size];
    shape.extend_from_slice(input);
    let labels: Vec<usize> = (0..batch_size).map(|i| i % classes).collect();
    let mut params = 0;
    let cmp = first_smooth(cfg, |draw| {
        let mut model = NetworkModel::<f64>::new(input, specs, classes, seed + draw)?;
        let head_shape = model.head().weight().expect("dense head").shape().to_vec();
        model.set_param("head.weight", uniform_tensor(&head_shape, 5000 + seed + draw))?;
        params = model.network().param_count();
        let batch = uniform_tensor(&shape, 1000 + seed + draw);
        let logits = model.forward_train(&batch)?;
        let (_, g) = cross_entropy_with_grad(&logits, &labels)?;
        let grads = model.backward(&g)?;
        Ok(compare(&mut model, NetworkModel::network, &grads.tensors, &batch, cfg, |m| {
            cross_entropy(&m.forward(&batch).expect("valid batch"), &labels).expect("valid labels")
        }))
    })?;
    Ok((cmp, params))
}

/// Mean-squared-error check of a plain layer stack against a random target.
pub fn check_regressor(
    input: &[usize],
    specs: &[LayerSpec],
    batch_size: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<(Comparison, usize)> {
    let mut shape = vec![batch_size];
    shape.extend_from_slice(input);
    let mut params = 0;
    let cmp = first_smooth(cfg, |draw| {
        let mut net = Sequential::<f64>::new(input, specs, seed + draw)?;
        params = net.param_count();
        let batch = uniform_tensor(&shape, 9 + seed + draw);
        let mut out_shape = vec![batch_size];
        out_shape.extend_from_slice(net.output_shape());
        let target = uniform_tensor(&out_shape, 500 + seed + draw);
        let out = net.forward_train(&batch)?;
        let (_, g) = mse_with_grad(&out, &target)?;
        let grads = net.backward(&g)?;
        Ok(compare(&mut net, |n| n, &grads.tensors, &batch, cfg, |n| {
            mse_loss(&n.forward(&batch).expect("valid batch"), &target).expect("same shape")
        }))
    })?;
    Ok((cmp, params))
}
