//! Mini-batch SGD and Adam with a stepped learning-rate decay.

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Parameterized};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Msgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Multiplicative factor applied to the learning rate every
    /// `decay_period_epochs` epochs.
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
    /// Heavy-ball momentum for mSGD; 0 disables it.
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Msgd,
            learning_rate: 0.01,
            decay_factor: 1.0,
            decay_period_epochs: 15,
            momentum: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn msgd(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn with_decay(mut self, factor: f64, period_epochs: usize) -> Self {
        self.decay_factor = factor;
        self.decay_period_epochs = period_epochs;
        self
    }

    /// Checks the invariants; errors carry the offending field name.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation(field, msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be a finite non-negative number");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor", "must lie in (0, 1]");
        }
        if self.decay_period_epochs == 0 {
            return bad("decay_period_epochs", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta1", "Adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon", "must be positive");
        }
        Ok(())
    }

    /// `learning_rate * decay_factor^floor(epoch / decay_period_epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_period_epochs.max(1)) as i32;
        self.learning_rate * self.decay_factor.powi(steps)
    }
}

fn check_grads<T: Scalar, M: Parameterized<T>>(model: &M, grads: &Gradients<T>) -> Result<()> {
    let params = model.params();
    if params.len() != grads.tensors.len() {
        return Err(Error::input(format!(
            "{} gradient tensors for {} parameters",
            grads.tensors.len(),
            params.len()
        )));
    }
    for ((p, g), &layer) in params.iter().zip(&grads.tensors).zip(&grads.layers) {
        if p.shape() != g.shape() {
            return Err(Error::Config {
                layer,
                message: format!("gradient shape {:?} vs parameter {:?}", g.shape(), p.shape()),
            });
        }
    }
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::Numerical(format!("non-finite gradient in layer {layer}")));
    }
    Ok(())
}

/// Plain mSGD step at the decayed rate for `epoch`: `p -= lr(epoch) * g`.
pub fn msgd_step<T: Scalar, M: Parameterized<T>>(
    model: &mut M,
    grads: &Gradients<T>,
    config: &OptimizerConfig,
    epoch: usize,
) -> Result<()> {
    check_grads(model, grads)?;
    let lr = T::from_f64_lossy(config.lr_at(epoch));
    for (p, g) in model.params_mut().into_iter().zip(&grads.tensors) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Per-parameter first/second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_model<M: Parameterized<T>>(model: &M) -> Self {
        let zeros: Vec<Tensor<T>> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// Adam update with bias correction. `step` counts from 1.
pub fn adam_step<T: Scalar, M: Parameterized<T>>(
    model: &mut M,
    grads: &Gradients<T>,
    config: &OptimizerConfig,
    state: &mut AdamState<T>,
    step: u64,
    epoch: usize,
) -> Result<()> {
    check_grads(model, grads)?;
    if step == 0 {
        return Err(Error::input("Adam step counter starts at 1"));
    }
    if state.first.len() != grads.tensors.len() {
        *state = AdamState::for_model(model);
    }
    let b1 = config.adam_beta1;
    let b2 = config.adam_beta2;
    let t = step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.lr_at(epoch);
    let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    let (c1t, c2t) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
    let (lrt, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(config.adam_epsilon));
    let params = model.params_mut();
    for (((p, g), m), v) in params
        .into_iter()
        .zip(&grads.tensors)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1t * *mv + one_b1 * gv;
            *vv = b2t * *vv + one_b2 * gv * gv;
            let m_hat = *mv / c1t;
            let v_hat = *vv / c2t;
            *pv -= lrt * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Stateful optimizer wrapper used by the training loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T = f32> {
    config: OptimizerConfig,
    velocity: Option<Vec<Tensor<T>>>,
    adam: Option<AdamState<T>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            velocity: None,
            adam: None,
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Drops momentum / moment estimates (after a head change).
    pub fn reset(&mut self) {
        self.velocity = None;
        self.adam = None;
        self.step = 0;
    }

    pub fn velocity(&self) -> Option<&[Tensor<T>]> {
        self.velocity.as_deref()
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<T>>) {
        self.velocity = Some(velocity);
    }

    /// Moment tensors named `opt.velocity.<i>`, `opt.adam_m.<i>`, `opt.adam_v.<i>`.
    pub fn export_state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![];
        if let Some(v) = &self.velocity {
            out.extend(v.iter().enumerate().map(|(i, t)| (format!("opt.velocity.{i}"), t.clone())));
        }
        if let Some(a) = &self.adam {
            out.extend(a.first.iter().enumerate().map(|(i, t)| (format!("opt.adam_m.{i}"), t.clone())));
            out.extend(a.second.iter().enumerate().map(|(i, t)| (format!("opt.adam_v.{i}"), t.clone())));
        }
        out
    }

    /// Restores what [`Optimizer::export_state`] produced, plus the step counter.
    pub fn import_state(&mut self, tensors: Vec<(String, Tensor<T>)>, step: u64) -> Result<()> {
        let mut velocity = vec![];
        let mut first = vec![];
        let mut second = vec![];
        for (name, t) in tensors {
            let (kind, idx) = name
                .strip_prefix("opt.")
                .and_then(|r| r.rsplit_once('.'))
                .ok_or_else(|| Error::input(format!("bad optimizer tensor `{name}`")))?;
            let list = match kind {
                "velocity" => &mut velocity,
                "adam_m" => &mut first,
                "adam_v" => &mut second,
                _ => return Err(Error::input(format!("bad optimizer tensor `{name}`"))),
            };
            if idx.parse::<usize>().ok() != Some(list.len()) {
                return Err(Error::input(format!("optimizer tensor `{name}` out of order")));
            }
            list.push(t);
        }
        if first.len() != second.len() {
            return Err(Error::input("Adam moment lists differ in length"));
        }
        self.velocity = (!velocity.is_empty()).then_some(velocity);
        self.adam = (!first.is_empty()).then_some(AdamState { first, second });
        self.step = step;
        Ok(())
    }

    pub fn step<M: Parameterized<T>>(
        &mut self,
        model: &mut M,
        grads: &Gradients<T>,
        epoch: usize,
    ) -> Result<()> {
        self.step += 1;
        match self.config.kind {
            OptimizerKind::Msgd if self.config.momentum == 0.0 => {
                msgd_step(model, grads, &self.config, epoch)
            }
            OptimizerKind::Msgd => {
                check_grads(model, grads)?;
                let mu = T::from_f64_lossy(self.config.momentum);
                let lr = T::from_f64_lossy(self.config.lr_at(epoch));
                let velocity = self.velocity.get_or_insert_with(|| {
                    grads
                        .tensors
                        .iter()
                        .map(|g| Tensor::zeros(g.shape().to_vec()))
                        .collect()
                });
                for ((p, g), v) in model
                    .params_mut()
                    .into_iter()
                    .zip(&grads.tensors)
                    .zip(velocity.iter_mut())
                {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = mu * *vv + gv;
                        *pv -= lr * *vv;
                    }
                }
                Ok(())
            }
            OptimizerKind::Adam => {
                let state = self.adam.get_or_insert_with(|| AdamState::for_model(model));
                adam_step(model, grads, &self.config, state, self.step, epoch)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::NetworkModel;

    #[test]
    fn stepped_decay_values() {
        let brain = OptimizerConfig::msgd(0.001).with_decay(0.85, 15);
        assert!((brain.lr_at(14) - 0.001).abs() < 1e-18);
        assert!((brain.lr_at(15) - 0.00085).abs() < 1e-15);
        let knee = OptimizerConfig::msgd(0.01).with_decay(0.90, 15);
        assert!((knee.lr_at(30) - 0.0081).abs() < 1e-15);
    }

    #[test]
    fn decay_is_piecewise_constant_and_non_increasing() {
        let c = OptimizerConfig::msgd(0.1).with_decay(0.9, 4);
        let mut prev = f64::INFINITY;
        for e in 0..50 {
            let lr = c.lr_at(e);
            assert!(lr <= prev);
            assert_eq!(lr, 0.1 * 0.9f64.powi((e / 4) as i32));
            if e % 4 != 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(OptimizerConfig::msgd(0.1).with_decay(0.0, 15).validate().is_err());
        assert!(OptimizerConfig::msgd(0.1).with_decay(1.5, 15).validate().is_err());
        assert!(OptimizerConfig::msgd(0.1).with_decay(0.9, 0).validate().is_err());
        assert!(OptimizerConfig::msgd(-1.0).validate().is_err());
        assert!(OptimizerConfig::msgd(0.1).validate().is_ok());
    }

    fn zero_grads(m: &NetworkModel<f64>) -> Gradients<f64> {
        Gradients {
            tensors: m.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            layers: m.param_layers(),
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut m = NetworkModel::<f64>::new(&[4], &[], 3, 2).unwrap();
        let before = m.clone();
        let g = zero_grads(&m);
        msgd_step(&mut m, &g, &OptimizerConfig::msgd(0.5), 0).unwrap();
        assert_eq!(m, before);
        let mut st = AdamState::for_model(&m);
        adam_step(&mut m, &g, &OptimizerConfig::adam(0.001), &mut st, 1, 0).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.first.len(), m.params().len());
        for (s, p) in st.first.iter().zip(m.params()) {
            assert_eq!(s.shape(), p.shape());
        }
    }

    #[test]
    fn adam_matches_scalar_recurrence() {
        let mut m = NetworkModel::<f64>::new(&[1], &[], 1, 0).unwrap();
        let w0 = m.params()[0].data()[0];
        let g = 0.3;
        let mut grads = zero_grads(&m);
        grads.tensors[0].data_mut()[0] = g;
        let cfg = OptimizerConfig::adam(0.001);
        let mut st = AdamState::for_model(&m);
        // Independent scalar evaluation of the recurrence.
        let (mut mm, mut vv, mut w) = (0.0f64, 0.0f64, w0);
        for t in 1..=3u64 {
            adam_step(&mut m, &grads, &cfg, &mut st, t, 0).unwrap();
            mm = 0.9 * mm + 0.1 * g;
            vv = 0.999 * vv + 0.001 * g * g;
            let mh = mm / (1.0 - 0.9f64.powi(t as i32));
            let vh = vv / (1.0 - 0.999f64.powi(t as i32));
            w -= 0.001 * mh / (vh.sqrt() + 1e-8);
            assert!((m.params()[0].data()[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut m = NetworkModel::<f64>::new(&[2], &[], 2, 0).unwrap();
        let mut g = zero_grads(&m);
        g.tensors[1].data_mut()[0] = f64::NAN;
        let err = msgd_step(&mut m, &g, &OptimizerConfig::msgd(0.1), 0).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref s) if s.contains("layer 0")), "{err}");
    }
}
