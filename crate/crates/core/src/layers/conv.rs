use super::{ConvParams, SeqLayout};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Same-length 1-D convolution over each sequence followed by a rectifier.
///
/// `x` is `[B·L × in_dim]`; every sequence is zero-padded by `width / 2`
/// on both sides, so the output is `[B·L × filters]`.
pub fn conv1d_same<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    params: &ConvParams<Var>,
) -> Result<Var> {
    let (rows, in_dim) = g.value(x).dims2()?;
    layout.check_rows(rows, "conv1d")?;
    let (filters, width, k_in) = match *g.shape(params.kernels) {
        [f, w, d] => (f, w, d),
        ref s => return Err(shape_err!("conv kernels must be rank 3, got {s:?}")),
    };
    if width % 2 == 0 {
        return Err(Error::Config(format!("convolution width {width} must be odd")));
    }
    if k_in != in_dim {
        return Err(shape_err!(
            "conv kernels expect input dim {k_in}, got {in_dim}"
        ));
    }
    if width > layout.len() {
        return Err(shape_err!(
            "convolution width {width} exceeds sequence length {}",
            layout.len()
        ));
    }

    // im2col: row b·L+t holds [x_{t-h}, …, x_{t+h}] with out-of-range
    // positions reading an appended zero row.
    let zero = g.zeros(&[1, in_dim])?;
    let padded = g.concat(&[x, zero], 0)?;
    let half = width / 2;
    let len = layout.len() as isize;
    let mut windows = Vec::with_capacity(width);
    for k in 0..width {
        let shift = k as isize - half as isize;
        let idx: Vec<usize> = (0..rows)
            .map(|r| {
                let t = (r as isize) % len + shift;
                if (0..len).contains(&t) {
                    (r as isize + shift) as usize
                } else {
                    rows
                }
            })
            .collect();
        windows.push(g.gather_rows(padded, &idx)?);
    }
    let cols = g.concat(&windows, 1)?;
    let flat = g.reshape(params.kernels, &[filters, width * in_dim])?;
    let kt = g.transpose(flat)?;
    let pre = g.matmul(cols, kt)?;
    let pre = g.add_bias(pre, params.bias)?;
    Ok(g.relu(pre))
}
