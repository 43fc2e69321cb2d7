//! Loss, Adam with bias correction and decoupled weight decay, and early
//! stopping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Graph, Scalar, Var};

/// Mean softmax cross-entropy of `logits [B × C]` against `labels`.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = match g.shape(logits) {
        [r, c] => (*r, *c),
        s => return Err(Error::Shape(format!("cross_entropy expects [B × C] logits, got {s:?}"))),
    };
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} logit rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!("label {bad} outside 0..{classes}")));
    }
    let log_probs = g.log_softmax(logits)?;
    let picked = g.pick(log_probs, labels)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, -T::one()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Per-parameter moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

/// One scalar Adam update; returns the new (θ, m, v).
pub fn adam_update(theta: f64, g: f64, m: f64, v: f64, t: u64, h: &AdamHyper) -> (f64, f64, f64) {
    let m = h.beta1 * m + (1.0 - h.beta1) * g;
    let v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    let m_hat = m / (1.0 - h.beta1.powi(t as i32));
    let v_hat = v / (1.0 - h.beta2.powi(t as i32));
    let mut theta = theta - h.lr * m_hat / (v_hat.sqrt() + h.eps);
    theta -= h.lr * h.weight_decay * theta;
    (theta, m, v)
}

/// Applies one Adam step using the gradients stored on each parameter.
/// Nothing is modified if any gradient is missing or non-finite.
pub fn adam_step<T: Scalar>(model: &mut Model<T>, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    model.clear_pad_row();
    let mut problem = None;
    model.params.visit(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match &t.grad {
            None => problem = Some(Error::Contract(format!("parameter {name} has no gradient"))),
            Some(g) if g.iter().any(|x| !x.is_finite()) => {
                problem = Some(Error::Numeric(format!("non-finite gradient in parameter {name}")))
            }
            _ => {}
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }

    state.step += 1;
    let t = state.step;
    model.params.visit_mut(&mut |name, p| {
        let n = p.numel();
        let grad = p.grad.take().expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name).or_insert_with(|| vec![0.0; n]);
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            let (nt, nm, nv) = adam_update(theta.as_f64(), grad[i].as_f64(), m[i] as f64, v[i] as f64, t, hyper);
            *theta = T::from_f64_lossy(nt);
            m[i] = nm as f32;
            v[i] = nv as f32;
        }
        p.grad = Some(grad);
    });
    model.clear_pad_row();
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_val_loss: f64,
    pub epochs_since_improve: usize,
    pub patience: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            patience,
        }
    }

    /// Only a strict decrease of the best loss counts as improvement.
    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        if self.epochs_since_improve >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn improved(&self) -> bool {
        self.epochs_since_improve == 0
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(5)
    }
}
