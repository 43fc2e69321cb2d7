//! The assembled classifier: embedding → CNN → GRU → BiLSTM → multi-head
//! attention → masked mean pooling → affine head.

mod checkpoint;
mod predict;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_embedding_table, EncodedExample, PAD_ID};
use crate::error::{shape_err, Error, Result};
use crate::layers::{
    bilstm_layer, conv1d_same, embed, gru_layer, multi_head_attention, ConvParams, EmbeddingParams, GruParams,
    LinearParams, LstmParams, MhaParams, SeqLayout,
};
use crate::optim::cross_entropy;
use crate::tensor::{Gradients, Graph, Scalar, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use predict::{predict, softmax_probs, Prediction, Unclassifiable};

fn default_true() -> bool {
    true
}

/// Architecture and size settings. Defaults follow the reference
/// hyperparameters (embedding 100, hidden 128, 4 heads, length 20).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub gru_hidden: usize,
    pub lstm_hidden: usize,
    pub heads: usize,
    pub num_classes: usize,
    /// Gate biases in the recurrent cells. Off reproduces the bias-free
    /// gate equations exactly.
    pub biases_enabled: bool,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub use_cnn: bool,
    #[serde(default = "default_true")]
    pub use_gru: bool,
    #[serde(default = "default_true")]
    pub use_lstm: bool,
    #[serde(default = "default_true")]
    pub use_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            embed_dim: 100,
            max_len: 20,
            conv_filters: 128,
            conv_width: 3,
            gru_hidden: 128,
            lstm_hidden: 128,
            heads: 4,
            num_classes: 2,
            biases_enabled: true,
            seed: 42,
            use_cnn: true,
            use_gru: true,
            use_lstm: true,
            use_attention: true,
        }
    }
}

impl ModelConfig {
    /// Width of the per-token features entering attention and pooling.
    pub fn sequence_dim(&self) -> usize {
        if self.use_lstm {
            2 * self.lstm_hidden
        } else if self.use_gru {
            self.gru_hidden
        } else if self.use_cnn {
            self.conv_filters
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return err(format!("vocab_size {} leaves no room for pad and unknown ids", self.vocab_size));
        }
        if self.num_classes < 2 {
            return err("num_classes must be at least 2".into());
        }
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("max_len", self.max_len),
            ("conv_filters", self.conv_filters),
            ("gru_hidden", self.gru_hidden),
            ("lstm_hidden", self.lstm_hidden),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return err(format!("{name} must be positive"));
        }
        if !self.use_gru && !self.use_lstm {
            return err("at least one of the GRU and LSTM encoders must be enabled".into());
        }
        if self.use_cnn {
            if self.conv_width.is_multiple_of(2) {
                return err(format!("conv_width {} must be odd", self.conv_width));
            }
            if self.max_len < self.conv_width {
                return err(format!("max_len {} is shorter than conv_width {}", self.max_len, self.conv_width));
            }
        }
        if self.use_attention && !self.sequence_dim().is_multiple_of(self.heads) {
            return err(format!(
                "attention width {} is not divisible by {} heads",
                self.sequence_dim(),
                self.heads
            ));
        }
        Ok(())
    }
}

/// Every trainable tensor of the model; disabled modules are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub embedding: EmbeddingParams<P>,
    pub conv: Option<ConvParams<P>>,
    pub gru: Option<GruParams<P>>,
    pub lstm_fwd: Option<LstmParams<P>>,
    pub lstm_bwd: Option<LstmParams<P>>,
    pub mha: Option<MhaParams<P>>,
    pub classifier: LinearParams<P>,
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            embedding: self.embedding.map(f),
            conv: self.conv.as_ref().map(|p| p.map(f)),
            gru: self.gru.as_ref().map(|p| p.map(f)),
            lstm_fwd: self.lstm_fwd.as_ref().map(|p| p.map(f)),
            lstm_bwd: self.lstm_bwd.as_ref().map(|p| p.map(f)),
            mha: self.mha.as_ref().map(|p| p.map(f)),
            classifier: self.classifier.map(f),
        }
    }

    /// Visits parameters in a fixed order with dotted names
    /// (`gru.w_r`, `mha.w_q.0`, …).
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        self.embedding.visit("embedding", f);
        if let Some(p) = &self.conv {
            p.visit("conv", f);
        }
        if let Some(p) = &self.gru {
            p.visit("gru", f);
        }
        if let Some(p) = &self.lstm_fwd {
            p.visit("lstm_fwd", f);
        }
        if let Some(p) = &self.lstm_bwd {
            p.visit("lstm_bwd", f);
        }
        if let Some(p) = &self.mha {
            p.visit("mha", f);
        }
        self.classifier.visit("classifier", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        self.embedding.visit_mut("embedding", f);
        if let Some(p) = &mut self.conv {
            p.visit_mut("conv", f);
        }
        if let Some(p) = &mut self.gru {
            p.visit_mut("gru", f);
        }
        if let Some(p) = &mut self.lstm_fwd {
            p.visit_mut("lstm_fwd", f);
        }
        if let Some(p) = &mut self.lstm_bwd {
            p.visit_mut("lstm_bwd", f);
        }
        if let Some(p) = &mut self.mha {
            p.visit_mut("mha", f);
        }
        self.classifier.visit_mut("classifier", f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }
}

/// Builds the forward graph for `batch` and returns logits `[B × classes]`.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    batch: &[EncodedExample],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("forward called with an empty batch".into()));
    }
    let len = config.max_len;
    if let Some(bad) = batch.iter().find(|e| e.ids.len() != len || e.mask.len() != len) {
        return Err(shape_err!(
            "example of length {} (mask {}) does not match max_len {len}",
            bad.ids.len(),
            bad.mask.len()
        ));
    }
    let ids: Vec<u32> = batch.iter().flat_map(|e| e.ids.iter().copied()).collect();
    let mask: Vec<bool> = batch.iter().flat_map(|e| e.mask.iter().copied()).collect();
    let layout = SeqLayout::new(batch.len(), len, mask)?;

    let mut x = embed(g, params.embedding.table, &ids)?;
    if let Some(conv) = &params.conv {
        x = conv1d_same(g, x, &layout, conv)?;
    }
    if let Some(gru) = &params.gru {
        x = gru_layer(g, x, &layout, gru)?;
    }
    if let (Some(fwd), Some(bwd)) = (&params.lstm_fwd, &params.lstm_bwd) {
        x = bilstm_layer(g, x, &layout, fwd, bwd)?;
    }
    if let Some(mha) = &params.mha {
        x = multi_head_attention(g, x, &layout, mha)?;
    }
    let pooled = masked_mean_pool(g, x, &layout)?;
    let logits = g.matmul(pooled, params.classifier.weight)?;
    g.add_bias(logits, params.classifier.bias)
}

/// Mean over each example's real positions, as a product with a constant
/// `[B × B·L]` averaging matrix.
fn masked_mean_pool<T: Scalar>(g: &mut Graph<T>, x: Var, layout: &SeqLayout) -> Result<Var> {
    let (batch, len) = (layout.batch(), layout.len());
    let mut weights = vec![T::zero(); batch * batch * len];
    for b in 0..batch {
        let real = layout.example_mask(b).iter().filter(|&&m| m).count();
        if real == 0 {
            return Err(Error::Contract(format!("example {b} in the batch has no real tokens")));
        }
        let w = T::one() / T::from_usize(real).expect("count");
        for (t, &m) in layout.example_mask(b).iter().enumerate() {
            if m {
                weights[b * batch * len + b * len + t] = w;
            }
        }
    }
    let pool = g.constant(Tensor::new([batch, batch * len], weights)?);
    g.matmul(pool, x)
}

/// A model together with its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Allocates and seeds every parameter. Weight matrices are
    /// uniform(±1/√fan_in); biases start at zero; the embedding table is
    /// small uniform noise with a zero pad row.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let embedding = EmbeddingParams {
            table: random_embedding_table(&mut rng, c.vocab_size, c.embed_dim)?,
        };
        let mut dim = c.embed_dim;
        let conv = if c.use_cnn {
            let p = ConvParams::init(&mut rng, c.conv_filters, c.conv_width, dim)?;
            dim = c.conv_filters;
            Some(p)
        } else {
            None
        };
        let gru = if c.use_gru {
            let p = GruParams::init(&mut rng, dim, c.gru_hidden, c.biases_enabled)?;
            dim = c.gru_hidden;
            Some(p)
        } else {
            None
        };
        let (lstm_fwd, lstm_bwd) = if c.use_lstm {
            let f = LstmParams::init(&mut rng, dim, c.lstm_hidden, c.biases_enabled)?;
            let b = LstmParams::init(&mut rng, dim, c.lstm_hidden, c.biases_enabled)?;
            dim = 2 * c.lstm_hidden;
            (Some(f), Some(b))
        } else {
            (None, None)
        };
        debug_assert_eq!(dim, c.sequence_dim());
        let mha = if c.use_attention {
            Some(MhaParams::init(&mut rng, dim, c.heads)?)
        } else {
            None
        };
        let classifier = LinearParams::init(&mut rng, dim, c.num_classes)?;
        Ok(Self {
            params: ModelParams {
                embedding,
                conv,
                gru,
                lstm_fwd,
                lstm_bwd,
                mha,
                classifier,
            },
            config,
        })
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.params.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Replaces the embedding table (e.g. with pre-trained vectors).
    pub fn set_embeddings(&mut self, embedding: EmbeddingParams<Tensor<T>>) -> Result<()> {
        let want = [self.config.vocab_size, self.config.embed_dim];
        if embedding.table.shape() != want {
            return Err(shape_err!(
                "embedding table {:?} does not match model {want:?}",
                embedding.table.shape()
            ));
        }
        self.params.embedding = embedding;
        self.params.embedding.table.requires_grad = true;
        Ok(())
    }

    /// Records every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> ModelParams<Var> {
        self.params.map(&mut |t| g.param(t))
    }

    pub fn logits(&self, batch: &[EncodedExample]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.map(&mut |t| g.constant(t.clone()));
        let out = forward(&mut g, &bound, &self.config, batch)?;
        Ok(g.value(out).clone())
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, batch: &[EncodedExample]) -> Result<T> {
        let mut g = Graph::new();
        let bound = self.params.map(&mut |t| g.constant(t.clone()));
        let logits = forward(&mut g, &bound, &self.config, batch)?;
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let loss = cross_entropy(&mut g, logits, &labels)?;
        Ok(g.value(loss).data()[0])
    }

    /// Forward + backward on one batch. Each parameter's `grad` is replaced
    /// by its gradient of the mean cross-entropy; the loss is returned.
    pub fn compute_gradients(&mut self, batch: &[EncodedExample]) -> Result<T> {
        self.compute_gradients_with(batch, |_| {})
    }

    /// As [`Model::compute_gradients`], letting the caller adjust the graph
    /// before recording (fault injection in verification runs).
    pub fn compute_gradients_with(
        &mut self,
        batch: &[EncodedExample],
        setup: impl FnOnce(&mut Graph<T>),
    ) -> Result<T> {
        let mut g = Graph::new();
        setup(&mut g);
        let bound = self.bind(&mut g);
        let logits = forward(&mut g, &bound, &self.config, batch)?;
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let loss = cross_entropy(&mut g, logits, &labels)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        self.store_gradients(&bound, &grads)?;
        Ok(value)
    }

    fn store_gradients(&mut self, bound: &ModelParams<Var>, grads: &Gradients<T>) -> Result<()> {
        let mut vars = Vec::new();
        bound.visit(&mut |_, v| vars.push(*v));
        let mut i = 0;
        let mut result = Ok(());
        self.params.visit_mut(&mut |_, t| {
            t.zero_grad();
            match grads.get(vars[i]) {
                Some(g) => {
                    if let Err(e) = t.accumulate_grad(g) {
                        result = Err(e);
                    }
                }
                None => {
                    if let Err(e) = t.accumulate_grad(&vec![T::zero(); t.numel()]) {
                        result = Err(e);
                    }
                }
            }
            i += 1;
        });
        result
    }

    pub fn zero_grad(&mut self) {
        self.params.visit_mut(&mut |_, t| t.zero_grad());
    }

    /// Re-zeroes the pad row of the embedding table.
    pub fn clear_pad_row(&mut self) {
        let dim = self.config.embed_dim;
        let row = PAD_ID as usize * dim;
        let table = &mut self.params.embedding.table;
        table.data_mut()[row..row + dim].iter_mut().for_each(|v| *v = T::zero());
        if let Some(g) = &mut table.grad {
            g[row..row + dim].iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.map(&mut |t| t.cast::<U>()),
        }
    }
}
