//! Plain nested-loop reference implementations, written independently of
//! the graph code, and randomized comparisons against the library layers.

use cgl_mha::layers::{
    bilstm_layer, conv1d_same, gru_cell, gru_layer, lstm_cell, multi_head_attention, scaled_dot_attention,
    ConvParams, GruParams, LstmParams, MhaParams, SeqLayout,
};
use cgl_mha::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 100;

type Mat = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(m: &Mat) -> Tensor<f64> {
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    Tensor::new([m.len(), m[0].len()], flat).unwrap()
}

fn vec_tensor(v: &[f64]) -> Tensor<f64> {
    Tensor::new([v.len()], v.to_vec()).unwrap()
}

fn max_diff(actual: &[f64], expected: &Mat) -> f64 {
    let flat: Vec<f64> = expected.iter().flatten().copied().collect();
    assert_eq!(actual.len(), flat.len(), "output size");
    actual.iter().zip(&flat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// W·v + b for a `[rows × cols]` matrix.
fn affine(w: &Mat, v: &[f64], b: Option<&Vec<f64>>) -> Vec<f64> {
    w.iter()
        .enumerate()
        .map(|(j, row)| {
            let mut s = b.map_or(0.0, |b| b[j]);
            for (k, &wk) in row.iter().enumerate() {
                s += wk * v[k];
            }
            s
        })
        .collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn random_prefix_mask(rng: &mut ChaCha8Rng, batch: usize, len: usize, allow_empty: bool) -> Vec<bool> {
    let mut mask = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let lo = usize::from(!allow_empty);
        let real = rng.gen_range(lo..=len);
        mask.extend((0..len).map(|t| t < real));
    }
    mask
}

struct Gru {
    w: [Mat; 3],
    b: Option<[Vec<f64>; 3]>,
}

impl Gru {
    fn random(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> Self {
        let w = [(); 3].map(|_| rand_mat(rng, hidden, hidden + in_dim));
        let b = rng.gen_bool(0.5).then(|| [(); 3].map(|_| rand_vec(rng, hidden)));
        Self { w, b }
    }

    fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hx = cat(h, x);
        let b = self.b.as_ref();
        let r: Vec<f64> = affine(&self.w[0], &hx, b.map(|b| &b[0])).into_iter().map(sigmoid).collect();
        let z: Vec<f64> = affine(&self.w[1], &hx, b.map(|b| &b[1])).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
        let cand: Vec<f64> = affine(&self.w[2], &cat(&rh, x), b.map(|b| &b[2]))
            .into_iter()
            .map(f64::tanh)
            .collect();
        (0..h.len()).map(|j| z[j] * h[j] + (1.0 - z[j]) * cand[j]).collect()
    }

    fn bind(&self, g: &mut Graph<f64>) -> GruParams<Var> {
        let [wr, wz, wh] = &self.w;
        GruParams {
            w_r: g.constant(tensor(wr)),
            w_z: g.constant(tensor(wz)),
            w_h: g.constant(tensor(wh)),
            b_r: self.b.as_ref().map(|b| g.constant(vec_tensor(&b[0]))),
            b_z: self.b.as_ref().map(|b| g.constant(vec_tensor(&b[1]))),
            b_h: self.b.as_ref().map(|b| g.constant(vec_tensor(&b[2]))),
        }
    }
}

struct Lstm {
    w: [Mat; 4],
    b: Option<[Vec<f64>; 4]>,
}

impl Lstm {
    fn random(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> Self {
        let w = [(); 4].map(|_| rand_mat(rng, hidden, hidden + in_dim));
        let b = rng.gen_bool(0.5).then(|| [(); 4].map(|_| rand_vec(rng, hidden)));
        Self { w, b }
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hx = cat(h, x);
        let b = self.b.as_ref();
        let gate = |k: usize| affine(&self.w[k], &hx, b.map(|b| &b[k]));
        let i: Vec<f64> = gate(0).into_iter().map(sigmoid).collect();
        let f: Vec<f64> = gate(1).into_iter().map(sigmoid).collect();
        let o: Vec<f64> = gate(2).into_iter().map(sigmoid).collect();
        let cand: Vec<f64> = gate(3).into_iter().map(f64::tanh).collect();
        let c_new: Vec<f64> = (0..c.len()).map(|j| f[j] * c[j] + i[j] * cand[j]).collect();
        let h_new = (0..c.len()).map(|j| o[j] * c_new[j].tanh()).collect();
        (h_new, c_new)
    }

    /// Outputs per position; pad positions repeat the carried state.
    fn run(&self, xs: &[Vec<f64>], mask: &[bool], hidden: usize, reverse: bool) -> Mat {
        let mut out = vec![vec![0.0; hidden]; xs.len()];
        let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            if mask[t] {
                (h, c) = self.step(&xs[t], &h, &c);
            }
            out[t] = h.clone();
        }
        out
    }

    fn bind(&self, g: &mut Graph<f64>) -> LstmParams<Var> {
        let w: Vec<Var> = self.w.iter().map(|m| g.constant(tensor(m))).collect();
        let b: Option<Vec<Var>> = self
            .b
            .as_ref()
            .map(|b| b.iter().map(|v| g.constant(vec_tensor(v))).collect());
        LstmParams {
            w_i: w[0],
            w_f: w[1],
            w_o: w[2],
            w_c: w[3],
            b_i: b.as_ref().map(|b| b[0]),
            b_f: b.as_ref().map(|b| b[1]),
            b_o: b.as_ref().map(|b| b[2]),
            b_c: b.as_ref().map(|b| b[3]),
        }
    }
}

pub fn gru_cell_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (batch, in_dim, hidden) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
        let cell = Gru::random(&mut rng, in_dim, hidden);
        let x = rand_mat(&mut rng, batch, in_dim);
        let h = rand_mat(&mut rng, batch, hidden);
        let expected: Mat = (0..batch).map(|b| cell.step(&x[b], &h[b])).collect();
        let mut g = Graph::new();
        let p = cell.bind(&mut g);
        let (xv, hv) = (g.constant(tensor(&x)), g.constant(tensor(&h)));
        let out = gru_cell(&mut g, xv, hv, &p).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}

pub fn gru_layer_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (batch, len) = (rng.gen_range(1..4), rng.gen_range(1..6));
        let (in_dim, hidden) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let cell = Gru::random(&mut rng, in_dim, hidden);
        let x = rand_mat(&mut rng, batch * len, in_dim);
        let mask = random_prefix_mask(&mut rng, batch, len, true);
        let mut expected = Vec::new();
        for b in 0..batch {
            let mut h = vec![0.0; hidden];
            for t in 0..len {
                if mask[b * len + t] {
                    h = cell.step(&x[b * len + t], &h);
                }
                expected.push(h.clone());
            }
        }
        let mut g = Graph::new();
        let p = cell.bind(&mut g);
        let xv = g.constant(tensor(&x));
        let layout = SeqLayout::new(batch, len, mask).unwrap();
        let out = gru_layer(&mut g, xv, &layout, &p).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}

pub fn lstm_cell_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (batch, in_dim, hidden) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
        let cell = Lstm::random(&mut rng, in_dim, hidden);
        let x = rand_mat(&mut rng, batch, in_dim);
        let h = rand_mat(&mut rng, batch, hidden);
        let c = rand_mat(&mut rng, batch, hidden);
        let (mut eh, mut ec) = (Vec::new(), Vec::new());
        for b in 0..batch {
            let (hn, cn) = cell.step(&x[b], &h[b], &c[b]);
            eh.push(hn);
            ec.push(cn);
        }
        let mut g = Graph::new();
        let p = cell.bind(&mut g);
        let (xv, hv, cv) = (g.constant(tensor(&x)), g.constant(tensor(&h)), g.constant(tensor(&c)));
        let (ho, co) = lstm_cell(&mut g, xv, hv, cv, &p).unwrap();
        worst = worst
            .max(max_diff(g.value(ho).data(), &eh))
            .max(max_diff(g.value(co).data(), &ec));
    }
    worst
}

pub fn bilstm_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (batch, len) = (rng.gen_range(1..4), rng.gen_range(1..6));
        let (in_dim, hidden) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let fwd = Lstm::random(&mut rng, in_dim, hidden);
        let bwd = Lstm::random(&mut rng, in_dim, hidden);
        let x = rand_mat(&mut rng, batch * len, in_dim);
        let mask = random_prefix_mask(&mut rng, batch, len, false);
        let mut expected = Vec::new();
        for b in 0..batch {
            let xs = &x[b * len..(b + 1) * len];
            let m = &mask[b * len..(b + 1) * len];
            let f = fwd.run(xs, m, hidden, false);
            let r = bwd.run(xs, m, hidden, true);
            for t in 0..len {
                expected.push(cat(&f[t], &r[t]));
            }
        }
        let mut g = Graph::new();
        let (pf, pb) = (fwd.bind(&mut g), bwd.bind(&mut g));
        let xv = g.constant(tensor(&x));
        let layout = SeqLayout::new(batch, len, mask).unwrap();
        let out = bilstm_layer(&mut g, xv, &layout, &pf, &pb).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}

pub fn conv_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let width = [1, 3, 5][rng.gen_range(0..3)];
        let (batch, len) = (rng.gen_range(1..4), rng.gen_range(width..width + 4));
        let (in_dim, filters) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let kernels: Vec<Mat> = (0..filters).map(|_| rand_mat(&mut rng, width, in_dim)).collect();
        let bias = rand_vec(&mut rng, filters);
        let x = rand_mat(&mut rng, batch * len, in_dim);
        let half = width as isize / 2;
        let mut expected = Vec::new();
        for b in 0..batch {
            for t in 0..len as isize {
                let mut row = Vec::with_capacity(filters);
                for f in 0..filters {
                    let mut s = bias[f];
                    for j in 0..width as isize {
                        let src = t + j - half;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        for d in 0..in_dim {
                            s += kernels[f][j as usize][d] * x[b * len + src as usize][d];
                        }
                    }
                    row.push(s.max(0.0));
                }
                expected.push(row);
            }
        }
        let mut g = Graph::new();
        let flat: Vec<f64> = kernels.iter().flatten().flatten().copied().collect();
        let p = ConvParams {
            kernels: g.constant(Tensor::new([filters, width, in_dim], flat).unwrap()),
            bias: g.constant(vec_tensor(&bias)),
        };
        let xv = g.constant(tensor(&x));
        let layout = SeqLayout::unmasked(batch, len).unwrap();
        let out = conv1d_same(&mut g, xv, &layout, &p).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}

/// Direct exp-normalize attention over the unmasked keys.
fn attention_oracle(q: &Mat, k: &Mat, v: &Mat, key_mask: &[bool]) -> Mat {
    let dk = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let max = scores
                .iter()
                .zip(key_mask)
                .filter(|(_, &m)| m)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores
                .iter()
                .zip(key_mask)
                .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
                .collect();
            let total: f64 = weights.iter().sum();
            (0..v[0].len())
                .map(|c| weights.iter().zip(v).map(|(w, vr)| w / total * vr[c]).sum())
                .collect()
        })
        .collect()
}

pub fn attention_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (len, dk, dv) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..5));
        let q = rand_mat(&mut rng, len, dk);
        let k = rand_mat(&mut rng, len, dk);
        let v = rand_mat(&mut rng, len, dv);
        let mask = random_prefix_mask(&mut rng, 1, len, false);
        let expected = attention_oracle(&q, &k, &v, &mask);
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(tensor(&q)), g.constant(tensor(&k)), g.constant(tensor(&v)));
        let out = scaled_dot_attention(&mut g, qv, kv, vv, &mask).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn mha_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (batch, len) = (rng.gen_range(1..3), rng.gen_range(1..5));
        let (heads, head_dim) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let model_dim = heads * head_dim;
        let wq: Vec<Mat> = (0..heads).map(|_| rand_mat(&mut rng, model_dim, head_dim)).collect();
        let wk: Vec<Mat> = (0..heads).map(|_| rand_mat(&mut rng, model_dim, head_dim)).collect();
        let wv: Vec<Mat> = (0..heads).map(|_| rand_mat(&mut rng, model_dim, head_dim)).collect();
        let wo = rand_mat(&mut rng, model_dim, model_dim);
        let x = rand_mat(&mut rng, batch * len, model_dim);
        let mask = random_prefix_mask(&mut rng, batch, len, false);
        let mut expected = Vec::new();
        for b in 0..batch {
            let xb: Mat = x[b * len..(b + 1) * len].to_vec();
            let mb = &mask[b * len..(b + 1) * len];
            let per_head: Vec<Mat> = (0..heads)
                .map(|h| attention_oracle(&matmul(&xb, &wq[h]), &matmul(&xb, &wk[h]), &matmul(&xb, &wv[h]), mb))
                .collect();
            let joined: Mat = (0..len).map(|t| per_head.iter().flat_map(|m| m[t].clone()).collect()).collect();
            expected.extend(matmul(&joined, &wo));
        }
        let mut g = Graph::new();
        let mut bind = |ms: &[Mat]| -> Vec<Var> { ms.iter().map(|m| g.constant(tensor(m))).collect() };
        let (w_q, w_k, w_v) = (bind(&wq), bind(&wk), bind(&wv));
        let p = MhaParams {
            w_q,
            w_k,
            w_v,
            w_o: g.constant(tensor(&wo)),
        };
        let xv = g.constant(tensor(&x));
        let layout = SeqLayout::new(batch, len, mask).unwrap();
        let out = multi_head_attention(&mut g, xv, &layout, &p).unwrap();
        worst = worst.max(max_diff(g.value(out).data(), &expected));
    }
    worst
}
