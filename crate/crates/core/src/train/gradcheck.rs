use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EncodedExample;
use crate::error::Result;
use crate::layers::uniform;
use crate::model::{Model, ModelConfig};
use crate::tensor::{finite_diff_grad, relative_error, BackwardFault, Tensor};

/// Reduced model dimensions for a finite-difference check.
#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub seed: u64,
    pub step: f64,
    /// Denominator floor of the relative error, so gradients that are
    /// numerically zero compare by absolute difference.
    pub floor: f64,
    pub tolerance: f64,
    /// Every parameter is redrawn from uniform(±bound). The training init
    /// leaves attention nearly uniform, where query/key gradients are
    /// ~1e-10 and a finite-difference comparison says nothing.
    pub param_bound: f64,
    /// Corrupts one backward rule; used to show the check can fail.
    pub fault: Option<BackwardFault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                vocab_size: 12,
                embed_dim: 8,
                max_len: 5,
                conv_filters: 8,
                conv_width: 3,
                gru_hidden: 8,
                lstm_hidden: 8,
                heads: 2,
                num_classes: 2,
                biases_enabled: false,
                seed: 7,
                ..ModelConfig::default()
            },
            batch: 2,
            seed: 7,
            step: 1e-4,
            floor: 1e-6,
            tolerance: 1e-4,
            param_bound: 1.0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub numel: usize,
    /// Largest analytic gradient entry, to show the comparison is not
    /// between two near-zero vectors.
    pub max_abs_grad: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.name.as_str()).collect()
    }

    pub fn text(&self) -> String {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for g in &self.groups {
            s.push_str(&format!(
                "{:<width$}  {:>5}  |g| {:.2e}  rel {:.3e}  {}\n",
                g.name,
                g.numel,
                g.max_abs_grad,
                g.max_rel_error,
                if g.passed { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(&format!(
            "{} (tolerance {:.0e})\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        ));
        s
    }
}

/// A seeded batch of real-token prefixes of random lengths (at least one
/// token, at least one example padded when `max_len > 1`).
pub fn random_batch(rng: &mut ChaCha8Rng, batch: usize, max_len: usize, vocab_size: usize) -> Vec<EncodedExample> {
    (0..batch)
        .map(|b| {
            let real = if b == 0 { max_len } else { rng.gen_range(1..=max_len.saturating_sub(1).max(1)) };
            let mut ids = vec![0; max_len];
            let mut mask = vec![false; max_len];
            for t in 0..real {
                ids[t] = rng.gen_range(1..vocab_size as u32);
                mask[t] = true;
            }
            EncodedExample {
                ids,
                mask,
                label: b % 2,
            }
        })
        .collect()
}

fn set_param(model: &mut Model<f64>, name: &str, value: &Tensor<f64>) {
    model.params.visit_mut(&mut |n, t| {
        if n == name {
            t.data_mut().copy_from_slice(value.data());
        }
    });
}

/// Compares the analytic gradient of the mean cross-entropy with central
/// differences, in f64, for every parameter tensor.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut model = Model::<f64>::build(cfg.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut redraw = Ok(());
    model.params.visit_mut(&mut |_, t| match uniform(&mut rng, t.shape(), cfg.param_bound) {
        Ok(fresh) => *t = fresh.with_grad(),
        Err(e) => redraw = Err(e),
    });
    redraw?;
    model.clear_pad_row();
    let batch = random_batch(&mut rng, cfg.batch, cfg.model.max_len, cfg.model.vocab_size);
    let fault = cfg.fault;
    model.compute_gradients_with(&batch, |g| g.set_backward_fault(fault))?;

    let mut params = Vec::new();
    model.params.visit(&mut |name, t| params.push((name, t.clone())));
    let mut groups = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let analytic = tensor.grad.clone().expect("gradients computed");
        let mut probe = model.clone();
        let numeric = finite_diff_grad(
            |theta| {
                set_param(&mut probe, &name, theta);
                probe.loss(&batch).unwrap_or(f64::NAN)
            },
            &tensor,
            cfg.step,
        )?;
        let max_rel_error = analytic
            .iter()
            .zip(numeric.data())
            .map(|(&a, &n)| relative_error(a, n, cfg.floor))
            .fold(0.0, f64::max);
        groups.push(GroupCheck {
            numel: tensor.numel(),
            max_abs_grad: analytic.iter().fold(0.0, |m, g| m.max(g.abs())),
            passed: max_rel_error < cfg.tolerance,
            max_rel_error,
            name,
        });
    }
    Ok(GradcheckReport {
        passed: groups.iter().all(|g| g.passed),
        tolerance: cfg.tolerance,
        groups,
    })
}
