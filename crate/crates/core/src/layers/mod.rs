//! Differentiable building blocks: embedding lookup, same-length 1-D
//! convolution, GRU, (bi)LSTM and multi-head attention.
//!
//! Parameter groups are generic over their storage `P`: `Tensor<T>` when
//! owned by a model, [`Var`] once bound into a [`Graph`](crate::tensor::Graph).
//!
//! Sequences are laid out batch-major as a `[B·L × D]` matrix whose row
//! `b·L + t` holds timestep `t` of example `b`; see [`SeqLayout`].

mod attention;
mod conv;
mod embedding;
mod recurrent;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub use attention::{multi_head_attention, scaled_dot_attention, scaled_dot_attention_weights};
pub use conv::conv1d_same;
pub use embedding::embed;
pub use recurrent::{bilstm_layer, gru_cell, gru_layer, lstm_cell, lstm_layer, Direction};

/// Shape and pad mask of a batch of equal-length sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    batch: usize,
    len: usize,
    mask: Vec<bool>,
}

impl SeqLayout {
    /// `mask[b·len + t]` is true for real tokens.
    pub fn new(batch: usize, len: usize, mask: Vec<bool>) -> Result<Self> {
        if batch == 0 || len == 0 {
            return Err(shape_err!("empty sequence batch ({batch}×{len})"));
        }
        if mask.len() != batch * len {
            return Err(shape_err!(
                "mask of length {} for {batch} sequences of length {len}",
                mask.len()
            ));
        }
        Ok(Self { batch, len, mask })
    }

    pub fn single(mask: Vec<bool>) -> Result<Self> {
        Self::new(1, mask.len(), mask)
    }

    pub fn unmasked(batch: usize, len: usize) -> Result<Self> {
        Self::new(batch, len, vec![true; batch * len])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rows(&self) -> usize {
        self.batch * self.len
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn example_mask(&self, b: usize) -> &[bool] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }

    /// Row indices of timestep `t` across the batch.
    pub fn rows_at(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.len + t).collect()
    }

    pub fn mask_at(&self, t: usize) -> Vec<bool> {
        (0..self.batch).map(|b| self.mask[b * self.len + t]).collect()
    }

    /// Permutation taking time-major rows (`t·B + b`) to batch-major order.
    pub(crate) fn time_to_batch_major(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.rows());
        for b in 0..self.batch {
            for t in 0..self.len {
                idx.push(t * self.batch + b);
            }
        }
        idx
    }

    pub(crate) fn check_rows(&self, rows: usize, what: &str) -> Result<()> {
        if rows != self.rows() {
            return Err(shape_err!(
                "{what}: input has {rows} rows, layout expects {}×{}",
                self.batch,
                self.len
            ));
        }
        Ok(())
    }
}

macro_rules! param_group {
    ($(#[$meta:meta])* $name:ident { $($req:ident),+ ; $($opt:ident),* }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $req: P,)+
            $(pub $opt: Option<P>,)*
        }

        impl<P> $name<P> {
            pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> $name<Q> {
                $name {
                    $($req: f(&self.$req),)+
                    $($opt: self.$opt.as_ref().map(|p| f(p)),)*
                }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
                $(f(format!("{prefix}.{}", stringify!($req)), &self.$req);)+
                $(if let Some(p) = &self.$opt {
                    f(format!("{prefix}.{}", stringify!($opt)), p);
                })*
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
                $(f(format!("{prefix}.{}", stringify!($req)), &mut self.$req);)+
                $(if let Some(p) = &mut self.$opt {
                    f(format!("{prefix}.{}", stringify!($opt)), p);
                })*
            }
        }
    };
}

param_group!(
    /// Embedding table `[vocab × dim]`. The pad row is kept at zero by the
    /// optimizer.
    EmbeddingParams { table ; }
);

param_group!(
    /// `kernels: [filters × width × in_dim]`, `bias: [filters]`.
    ConvParams { kernels, bias ; }
);

param_group!(
    /// Gate weights `[hidden × (hidden + in_dim)]` acting on `[h_{t-1}, x_t]`.
    GruParams { w_r, w_z, w_h ; b_r, b_z, b_h }
);

param_group!(
    /// Gate weights `[hidden × (hidden + in_dim)]` acting on `[h_{t-1}, x_t]`.
    LstmParams { w_i, w_f, w_o, w_c ; b_i, b_f, b_o, b_c }
);

param_group!(
    /// Affine output head: `weight: [in × classes]`, `bias: [classes]`.
    LinearParams { weight, bias ; }
);

/// Per-head projections `[model_dim × head_dim]` and the shared output
/// projection `[(heads·head_dim) × model_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams<P> {
    pub w_q: Vec<P>,
    pub w_k: Vec<P>,
    pub w_v: Vec<P>,
    pub w_o: P,
}

impl<P> MhaParams<P> {
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> MhaParams<Q> {
        MhaParams {
            w_q: self.w_q.iter().map(&mut *f).collect(),
            w_k: self.w_k.iter().map(&mut *f).collect(),
            w_v: self.w_v.iter().map(&mut *f).collect(),
            w_o: f(&self.w_o),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        for (kind, list) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            for (i, p) in list.iter().enumerate() {
                f(format!("{prefix}.{kind}.{i}"), p);
            }
        }
        f(format!("{prefix}.w_o"), &self.w_o);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        for (kind, list) in [("w_q", &mut self.w_q), ("w_k", &mut self.w_k), ("w_v", &mut self.w_v)] {
            for (i, p) in list.iter_mut().enumerate() {
                f(format!("{prefix}.{kind}.{i}"), p);
            }
        }
        f(format!("{prefix}.w_o"), &mut self.w_o);
    }
}

/// Uniform(−bound, bound) tensor.
pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Tensor<T>> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Ok(Tensor::new(shape.to_vec(), data)?.with_grad())
}

fn fan_in_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    uniform(rng, shape, 1.0 / (fan_in as f64).sqrt())
}

fn zeros<T: Scalar>(shape: &[usize]) -> Result<Tensor<T>> {
    Ok(Tensor::zeros(shape.to_vec())?.with_grad())
}

impl<T: Scalar> ConvParams<Tensor<T>> {
    pub fn init(rng: &mut ChaCha8Rng, filters: usize, width: usize, in_dim: usize) -> Result<Self> {
        Ok(Self {
            kernels: fan_in_uniform(rng, &[filters, width, in_dim], width * in_dim)?,
            bias: zeros(&[filters])?,
        })
    }
}

impl<T: Scalar> GruParams<Tensor<T>> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, bias: bool) -> Result<Self> {
        let shape = [hidden, hidden + in_dim];
        let fan = hidden + in_dim;
        let b = || -> Result<Option<Tensor<T>>> { bias.then(|| zeros(&[hidden])).transpose() };
        Ok(Self {
            w_r: fan_in_uniform(rng, &shape, fan)?,
            w_z: fan_in_uniform(rng, &shape, fan)?,
            w_h: fan_in_uniform(rng, &shape, fan)?,
            b_r: b()?,
            b_z: b()?,
            b_h: b()?,
        })
    }
}

impl<T: Scalar> LstmParams<Tensor<T>> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, bias: bool) -> Result<Self> {
        let shape = [hidden, hidden + in_dim];
        let fan = hidden + in_dim;
        let b = || -> Result<Option<Tensor<T>>> { bias.then(|| zeros(&[hidden])).transpose() };
        Ok(Self {
            w_i: fan_in_uniform(rng, &shape, fan)?,
            w_f: fan_in_uniform(rng, &shape, fan)?,
            w_o: fan_in_uniform(rng, &shape, fan)?,
            w_c: fan_in_uniform(rng, &shape, fan)?,
            b_i: b()?,
            b_f: b()?,
            b_o: b()?,
            b_c: b()?,
        })
    }
}

impl<T: Scalar> MhaParams<Tensor<T>> {
    pub fn init(rng: &mut ChaCha8Rng, model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(crate::Error::Config(format!(
                "model dimension {model_dim} is not divisible by {heads} attention heads"
            )));
        }
        let head_dim = model_dim / heads;
        let mut proj = || -> Result<Vec<Tensor<T>>> {
            (0..heads)
                .map(|_| fan_in_uniform(rng, &[model_dim, head_dim], model_dim))
                .collect()
        };
        let w_q = proj()?;
        let w_k = proj()?;
        let w_v = proj()?;
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o: fan_in_uniform(rng, &[heads * head_dim, model_dim], heads * head_dim)?,
        })
    }
}

impl<T: Scalar> LinearParams<Tensor<T>> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: fan_in_uniform(rng, &[in_dim, out_dim], in_dim)?,
            bias: zeros(&[out_dim])?,
        })
    }
}
