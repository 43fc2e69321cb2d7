use super::{MhaParams, SeqLayout};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// `softmax(Q·Kᵀ / √d_k)` restricted to unmasked keys; `[L_q × L_k]`.
pub fn scaled_dot_attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    key_mask: &[bool],
) -> Result<Var> {
    let (_, dq) = g.value(q).dims2()?;
    let (lk, dk) = g.value(k).dims2()?;
    if dq != dk {
        return Err(shape_err!(
            "attention: queries {:?} and keys {:?} differ in width",
            g.shape(q),
            g.shape(k)
        ));
    }
    if key_mask.len() != lk {
        return Err(shape_err!("attention: key mask of length {} for {lk} keys", key_mask.len()));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::one() / T::from_usize(dk).expect("dim").sqrt());
    g.masked_softmax(scores, key_mask)
}

/// Scaled dot-product attention; masked keys receive zero weight.
pub fn scaled_dot_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    key_mask: &[bool],
) -> Result<Var> {
    let weights = scaled_dot_attention_weights(g, q, k, key_mask)?;
    g.matmul(weights, v)
}

/// Multi-head self-attention over `[B·L × model_dim]`. Each head projects
/// with its own `W_Q`, `W_K`, `W_V`; heads are concatenated and mapped
/// through `W_O`. Attention never crosses example boundaries.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    params: &MhaParams<Var>,
) -> Result<Var> {
    let (rows, model_dim) = g.value(x).dims2()?;
    layout.check_rows(rows, "attention")?;
    let heads = params.heads();
    if heads == 0 || params.w_k.len() != heads || params.w_v.len() != heads {
        return Err(Error::Config("attention needs the same number (≥ 1) of Q, K, V projections".into()));
    }
    let head_dim = g.shape(params.w_q[0])[1];
    if heads * head_dim != model_dim {
        return Err(Error::Config(format!(
            "{heads} heads × head dim {head_dim} does not equal model dim {model_dim}"
        )));
    }
    let len = layout.len();
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.matmul(x, params.w_q[h])?;
        let k = g.matmul(x, params.w_k[h])?;
        let v = g.matmul(x, params.w_v[h])?;
        let mut per_example = Vec::with_capacity(layout.batch());
        for b in 0..layout.batch() {
            let qb = g.narrow(q, 0, b * len, len)?;
            let kb = g.narrow(k, 0, b * len, len)?;
            let vb = g.narrow(v, 0, b * len, len)?;
            per_example.push(scaled_dot_attention(g, qb, kb, vb, layout.example_mask(b))?);
        }
        head_outputs.push(g.concat(&per_example, 0)?);
    }
    let joined = g.concat(&head_outputs, 1)?;
    g.matmul(joined, params.w_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn singleton_returns_values() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_f64([1, 2], &[0.3, -0.7]).unwrap());
        let k = g.constant(Tensor::from_f64([1, 2], &[1.5, 2.0]).unwrap());
        let v = g.constant(Tensor::from_f64([1, 3], &[4.0, 5.0, 6.0]).unwrap());
        let out = scaled_dot_attention(&mut g, q, k, v, &[true]).unwrap();
        assert_eq!(g.value(out).data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_f64([2, 2], &[1.0, -3.0, 0.5, 2.0]).unwrap());
        let k = g.constant(Tensor::from_f64([3, 2], &[0.2, 0.1, 0.2, 0.1, 0.2, 0.1]).unwrap());
        let v = g.constant(Tensor::from_f64([3, 1], &[1.0, 2.0, 6.0]).unwrap());
        let out = scaled_dot_attention(&mut g, q, k, v, &[true; 3]).unwrap();
        for &o in g.value(out).data() {
            assert!((o - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_masked_keys_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros([2, 2]).unwrap());
        let out = scaled_dot_attention(&mut g, q, q, q, &[false, false]);
        assert!(matches!(out, Err(Error::Contract(_))));
    }

    #[test]
    fn default_four_head_geometry() {
        let mut g = Graph::<f32>::new();
        let layout = SeqLayout::unmasked(1, 20).unwrap();
        let x = g.zeros(&[20, 256]).unwrap();
        let mut proj = |shape: [usize; 2]| g.constant(Tensor::zeros(shape).unwrap());
        let params = MhaParams {
            w_q: (0..4).map(|_| proj([256, 64])).collect(),
            w_k: (0..4).map(|_| proj([256, 64])).collect(),
            w_v: (0..4).map(|_| proj([256, 64])).collect(),
            w_o: proj([256, 256]),
        };
        let out = multi_head_attention(&mut g, x, &layout, &params).unwrap();
        assert_eq!(g.shape(out), &[20, 256]);
    }
}
