use super::{GruParams, LstmParams, SeqLayout};
use crate::error::{shape_err, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Order in which a recurrent layer walks the timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A gate weight stored transposed, so `[h, x] · Wᵀ` is one matmul.
struct Gate {
    w_t: Var,
    bias: Option<Var>,
}

impl Gate {
    fn new<T: Scalar>(g: &mut Graph<T>, w: Var, bias: Option<Var>) -> Result<Self> {
        Ok(Self {
            w_t: g.transpose(w)?,
            bias,
        })
    }

    fn pre<T: Scalar>(&self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let z = g.matmul(input, self.w_t)?;
        match self.bias {
            Some(b) => g.add_bias(z, b),
            None => Ok(z),
        }
    }
}

fn check_gate_shape<T: Scalar>(g: &Graph<T>, w: Var, hidden: usize, in_dim: usize, name: &str) -> Result<()> {
    if g.shape(w) != [hidden, hidden + in_dim] {
        return Err(shape_err!(
            "{name}: weight {:?} does not act on [h ({hidden}), x ({in_dim})]",
            g.shape(w)
        ));
    }
    Ok(())
}

struct GruCell {
    reset: Gate,
    update: Gate,
    candidate: Gate,
    hidden: usize,
}

impl GruCell {
    fn new<T: Scalar>(g: &mut Graph<T>, p: &GruParams<Var>, in_dim: usize) -> Result<Self> {
        let hidden = g.shape(p.w_r)[0];
        for w in [p.w_r, p.w_z, p.w_h] {
            check_gate_shape(g, w, hidden, in_dim, "gru")?;
        }
        Ok(Self {
            reset: Gate::new(g, p.w_r, p.b_r)?,
            update: Gate::new(g, p.w_z, p.b_z)?,
            candidate: Gate::new(g, p.w_h, p.b_h)?,
            hidden,
        })
    }

    fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, h_prev: Var) -> Result<Var> {
        let hx = g.concat(&[h_prev, x], 1)?;
        let r = self.reset.pre(g, hx)?;
        let r = g.sigmoid(r);
        let z = self.update.pre(g, hx)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, h_prev)?;
        let rhx = g.concat(&[rh, x], 1)?;
        let cand = self.candidate.pre(g, rhx)?;
        let cand = g.tanh(cand);
        // h_t = z ∘ h_{t-1} + (1 − z) ∘ h̃_t
        let keep = g.mul(z, h_prev)?;
        let one_minus_z = g.one_minus(z);
        let fresh = g.mul(one_minus_z, cand)?;
        g.add(keep, fresh)
    }
}

struct LstmCell {
    input: Gate,
    forget: Gate,
    output: Gate,
    candidate: Gate,
    hidden: usize,
}

impl LstmCell {
    fn new<T: Scalar>(g: &mut Graph<T>, p: &LstmParams<Var>, in_dim: usize) -> Result<Self> {
        let hidden = g.shape(p.w_i)[0];
        for w in [p.w_i, p.w_f, p.w_o, p.w_c] {
            check_gate_shape(g, w, hidden, in_dim, "lstm")?;
        }
        Ok(Self {
            input: Gate::new(g, p.w_i, p.b_i)?,
            forget: Gate::new(g, p.w_f, p.b_f)?,
            output: Gate::new(g, p.w_o, p.b_o)?,
            candidate: Gate::new(g, p.w_c, p.b_c)?,
            hidden,
        })
    }

    fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let hx = g.concat(&[h_prev, x], 1)?;
        let i = self.input.pre(g, hx)?;
        let i = g.sigmoid(i);
        let f = self.forget.pre(g, hx)?;
        let f = g.sigmoid(f);
        let o = self.output.pre(g, hx)?;
        let o = g.sigmoid(o);
        let cand = self.candidate.pre(g, hx)?;
        let cand = g.tanh(cand);
        let kept = g.mul(f, c_prev)?;
        let written = g.mul(i, cand)?;
        let c = g.add(kept, written)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }
}

fn row_dims<T: Scalar>(g: &Graph<T>, x: Var, h: Var, hidden: usize) -> Result<usize> {
    let (b, in_dim) = g.value(x).dims2()?;
    if g.shape(h) != [b, hidden] {
        return Err(shape_err!(
            "state {:?} does not match batch {b} × hidden {hidden}",
            g.shape(h)
        ));
    }
    Ok(in_dim)
}

/// One GRU step. Rows of `x_t` (`[B × in]`) and `h_prev` (`[B × hidden]`)
/// are independent examples.
pub fn gru_cell<T: Scalar>(g: &mut Graph<T>, x_t: Var, h_prev: Var, params: &GruParams<Var>) -> Result<Var> {
    let hidden = g.shape(params.w_r)[0];
    let in_dim = row_dims(g, x_t, h_prev, hidden)?;
    GruCell::new(g, params, in_dim)?.step(g, x_t, h_prev)
}

/// One LSTM step, returning `(h_t, c_t)`.
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<T>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    params: &LstmParams<Var>,
) -> Result<(Var, Var)> {
    let hidden = g.shape(params.w_i)[0];
    let in_dim = row_dims(g, x_t, h_prev, hidden)?;
    if g.shape(c_prev) != g.shape(h_prev) {
        return Err(shape_err!(
            "lstm: cell state {:?} vs hidden state {:?}",
            g.shape(c_prev),
            g.shape(h_prev)
        ));
    }
    LstmCell::new(g, params, in_dim)?.step(g, x_t, h_prev, c_prev)
}

/// Runs a recurrence over every timestep, carrying state unchanged through
/// pad positions. `step` maps `(x_t, state) → state`; the first state
/// component is the emitted output.
fn unroll<T: Scalar, const N: usize>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    hidden: usize,
    direction: Direction,
    mut step: impl FnMut(&mut Graph<T>, Var, [Var; N]) -> Result<[Var; N]>,
) -> Result<Vec<Var>> {
    let batch = layout.batch();
    let zero = g.zeros(&[batch, hidden])?;
    let mut state = [zero; N];
    let mut outputs = vec![zero; layout.len()];
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..layout.len()).collect(),
        Direction::Backward => (0..layout.len()).rev().collect(),
    };
    for t in order {
        let active = layout.mask_at(t);
        if active.iter().any(|&a| a) {
            let x_t = g.gather_rows(x, &layout.rows_at(t))?;
            let next = step(g, x_t, state)?;
            if active.iter().all(|&a| a) {
                state = next;
            } else {
                for k in 0..N {
                    state[k] = g.select_rows(&active, next[k], state[k])?;
                }
            }
        }
        outputs[t] = state[0];
    }
    Ok(outputs)
}

/// Reassembles per-timestep `[B × H]` outputs into a `[B·L × H]` sequence.
fn stack_batch_major<T: Scalar>(g: &mut Graph<T>, per_step: &[Var], layout: &SeqLayout) -> Result<Var> {
    let time_major = g.concat(per_step, 0)?;
    g.gather_rows(time_major, &layout.time_to_batch_major())
}

/// Unidirectional GRU over `[B·L × in]` with `h_0 = 0`; output `[B·L × hidden]`.
pub fn gru_layer<T: Scalar>(g: &mut Graph<T>, x: Var, layout: &SeqLayout, params: &GruParams<Var>) -> Result<Var> {
    let (rows, in_dim) = g.value(x).dims2()?;
    layout.check_rows(rows, "gru")?;
    let cell = GruCell::new(g, params, in_dim)?;
    let outs = unroll(g, x, layout, cell.hidden, Direction::Forward, |g, x_t, [h]| {
        Ok([cell.step(g, x_t, h)?])
    })?;
    stack_batch_major(g, &outs, layout)
}

fn lstm_steps<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    params: &LstmParams<Var>,
    direction: Direction,
) -> Result<Vec<Var>> {
    let (rows, in_dim) = g.value(x).dims2()?;
    layout.check_rows(rows, "lstm")?;
    let cell = LstmCell::new(g, params, in_dim)?;
    unroll(g, x, layout, cell.hidden, direction, |g, x_t, [h, c]| {
        let (h, c) = cell.step(g, x_t, h, c)?;
        Ok([h, c])
    })
}

/// Unidirectional LSTM with `h_0 = c_0 = 0`; output `[B·L × hidden]`.
pub fn lstm_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    params: &LstmParams<Var>,
    direction: Direction,
) -> Result<Var> {
    let outs = lstm_steps(g, x, layout, params, direction)?;
    stack_batch_major(g, &outs, layout)
}

/// Bidirectional LSTM; position `t` of the output is `[h_fwd_t, h_bwd_t]`,
/// shape `[B·L × 2·hidden]`.
pub fn bilstm_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    layout: &SeqLayout,
    fwd: &LstmParams<Var>,
    bwd: &LstmParams<Var>,
) -> Result<Var> {
    let f = lstm_steps(g, x, layout, fwd, Direction::Forward)?;
    let b = lstm_steps(g, x, layout, bwd, Direction::Backward)?;
    let joined = f
        .iter()
        .zip(&b)
        .map(|(&hf, &hb)| g.concat(&[hf, hb], 1))
        .collect::<Result<Vec<_>>>()?;
    stack_batch_major(g, &joined, layout)
}
