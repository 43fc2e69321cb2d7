//! Worked examples with exact expected values, gathered so that both the
//! focused tests and the acceptance run can evaluate them.

use cgl_mha::data::{
    batch_iter, encode, init_embeddings, load_dataset, normalize, tokenize, ClassCounts, EmbeddingSource, RawExample,
    SplitStats, Vocabulary, PAD_ID, REFERENCE_TEST_COUNTS, REFERENCE_TRAIN_COUNTS, UNK_ID,
};
use cgl_mha::layers::{gru_cell, lstm_cell, GruParams, LstmParams};
use cgl_mha::model::{Model, ModelConfig};
use cgl_mha::optim::{adam_step, cross_entropy, AdamHyper, AdamState};
use cgl_mha::tensor::{Graph, Tensor};
use cgl_mha::Error;

pub type Check = (&'static str, bool);

fn ex(text: &str) -> RawExample {
    RawExample::new(text, 0).unwrap()
}

fn toks(s: &[&str]) -> Vec<String> {
    s.iter().map(|t| t.to_string()).collect()
}

/// Every data-pipeline example, each with its pass/fail outcome.
pub fn pipeline_examples() -> Vec<Check> {
    let mut out: Vec<Check> = vec![
        ("normalize punctuation", normalize("Hello, World!!") == "hello world"),
        ("normalize fixed point", normalize("already clean") == "already clean"),
        ("normalize apostrophe and dash", normalize("C'mon—REALLY?!") == "c mon really"),
        ("tokenize two words", tokenize("hello world") == toks(&["hello", "world"])),
        ("tokenize empty", tokenize("").is_empty()),
        ("tokenize double space", tokenize("a b  c") == toks(&["a", "b", "c"])),
    ];

    let v = Vocabulary::build(&[ex("a b a")]).unwrap();
    out.push(("vocab frequency order", v.tokens() == ["a", "b"] && v.id("a") == 2 && v.id("b") == 3));
    let corpus = [ex("The cat sat on the mat."), ex("the dog & THE cat")];
    let (v1, v2) = (Vocabulary::build(&corpus).unwrap(), Vocabulary::build(&corpus).unwrap());
    out.push(("vocab determinism", v1.to_text() == v2.to_text()));
    out.push(("vocab empty corpus", matches!(Vocabulary::build(&[]), Err(Error::Contract(_)))));

    let v = Vocabulary::build(&[ex("t1 t2 t3")]).unwrap();
    let e = encode(&toks(&["t1", "t2", "t3"]), &v, 20, 0).unwrap();
    let mut ids = vec![v.id("t1"), v.id("t2"), v.id("t3")];
    ids.resize(20, PAD_ID);
    let mut mask = vec![true; 3];
    mask.resize(20, false);
    out.push(("encode pads to 20", e.ids == ids && e.mask == mask));
    let long: Vec<String> = (0..25).map(|i| format!("x{i}")).collect();
    let vl = Vocabulary::build(&[ex(&long.join(" "))]).unwrap();
    let e = encode(&long, &vl, 20, 0).unwrap();
    let first: Vec<u32> = long[..20].iter().map(|t| vl.id(t)).collect();
    out.push(("encode keeps leftmost 20", e.ids == first && e.mask.iter().all(|&m| m)));
    let e = encode(&toks(&["t1", "zebra", "t3"]), &v, 20, 0).unwrap();
    out.push(("encode unknown id", e.ids[1] == UNK_ID && e.mask[1]));
    out.push(("encode rejects no tokens", encode::<String>(&[], &v, 20, 0).is_err()));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    out.push(("load empty file", matches!(load_dataset(&empty, None), Err(Error::Contract(_)))));
    let small = dir.path().join("small.csv");
    let body = "headline,label\n\"a, b\",1\nc d,0\ne,1\n";
    std::fs::write(&small, body).unwrap();
    let ds = load_dataset(&small, None).unwrap();
    // independent count: last field of every data line
    let ones = body.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    let zeros = body.lines().skip(1).filter(|l| l.ends_with(",0")).count();
    out.push((
        "load counts match a line scan",
        ds.stats.counts == ClassCounts { sarcastic: ones, non_sarcastic: zeros },
    ));
    out.push((
        "reference count mismatch warning",
        ds.stats.mismatch(&REFERENCE_TRAIN_COUNTS, "train").is_some()
            && SplitStats { counts: REFERENCE_TEST_COUNTS, mean_tokens: 10.0 }.mismatch(&REFERENCE_TEST_COUNTS, "test").is_none(),
    ));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "headline,label\nfine,0\nodd,2\n").unwrap();
    out.push(("load unknown label line", matches!(load_dataset(&bad, None), Err(Error::Parse { line: 3, .. }))));

    let v = Vocabulary::build(&[ex("apple banana")]).unwrap();
    let mut src = EmbeddingSource::new(3);
    src.insert("banana", vec![0.25, -1.5, 3.0]).unwrap();
    let (a, cov) = init_embeddings::<f32>(&v, &src, 3, 11).unwrap();
    let (b, _) = init_embeddings::<f32>(&v, &src, 3, 11).unwrap();
    out.push(("embedding copies vector", a.table.row(v.id("banana") as usize) == [0.25, -1.5, 3.0]));
    out.push(("embedding pad row zero", a.table.row(PAD_ID as usize) == [0.0; 3]));
    out.push(("embedding determinism", a.table.data() == b.table.data()));
    out.push(("embedding coverage", cov.found == 1 && cov.total == 2));
    let vecs = dir.path().join("vec.txt");
    std::fs::write(&vecs, "apple 1 2 3\nbanana 1 2\n").unwrap();
    out.push((
        "embedding dimension line",
        matches!(EmbeddingSource::load(&vecs, 3, None), Err(Error::Parse { line: 2, .. })),
    ));

    let items: Vec<usize> = (0..100).collect();
    let sizes: Vec<usize> = batch_iter(&items, 32, false, 0, 0).map(|b| b.len()).collect();
    out.push(("batches 32,32,32,4", sizes == [32, 32, 32, 4]));
    let flat: Vec<usize> = batch_iter(&items, 32, false, 0, 0).flatten().collect();
    out.push(("unshuffled order", flat == items));
    let a: Vec<Vec<usize>> = batch_iter(&items, 32, true, 9, 2).collect();
    let b: Vec<Vec<usize>> = batch_iter(&items, 32, true, 9, 2).collect();
    out.push(("shuffle determinism", a == b));
    out
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Analytic fixed points; each entry is the largest deviation found.
pub fn fixed_points() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    // softmax: probability vector, shift invariant
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 4], &[0.3, -1.2, 4.0, 2.5, 700.0, 701.0, -3.0, 0.0]));
    let shifted = g.add_scalar(x, 37.5);
    let (p, q) = (g.softmax(x, 1).unwrap(), g.softmax(shifted, 1).unwrap());
    let pv = g.value(p).data().to_vec();
    let sums: f64 = pv.chunks(4).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let negative = pv.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    out.push(("softmax rows sum to 1", sums.max(negative)));
    out.push(("softmax shift invariance", max_dev(&pv, g.value(q).data())));

    let (hidden, in_dim) = (3, 2);
    let zeros = |r, c| t(&[r, c], &vec![0.0; r * c]);
    let h_prev = [0.8, -0.4, 0.1];
    let x_t = [1.5, -2.0];

    // GRU with z saturated at exactly 1 keeps the state
    let mut g = Graph::<f64>::new();
    let rnd = t(&[hidden, hidden + in_dim], &[0.3, -0.2, 0.5, 0.1, 0.9, -0.7, 0.4, 0.2, -0.6, 0.8, 0.05, -0.3, 0.6, 0.7, -0.1]);
    let p = GruParams {
        w_r: g.constant(rnd.clone()),
        w_z: g.constant(zeros(hidden, hidden + in_dim)),
        w_h: g.constant(rnd),
        b_r: None,
        b_z: Some(g.constant(t(&[hidden], &[1e3; 3]))),
        b_h: None,
    };
    let (xv, hv) = (g.constant(t(&[1, in_dim], &x_t)), g.constant(t(&[1, hidden], &h_prev)));
    let h = gru_cell(&mut g, xv, hv, &p).unwrap();
    out.push(("gru z=1 keeps state", max_dev(g.value(h).data(), &h_prev)));

    // zero-weight GRU halves the state
    let mut g = Graph::<f64>::new();
    let p = GruParams {
        w_r: g.constant(zeros(hidden, hidden + in_dim)),
        w_z: g.constant(zeros(hidden, hidden + in_dim)),
        w_h: g.constant(zeros(hidden, hidden + in_dim)),
        b_r: None,
        b_z: None,
        b_h: None,
    };
    let (xv, hv) = (g.constant(t(&[1, in_dim], &x_t)), g.constant(t(&[1, hidden], &h_prev)));
    let h = gru_cell(&mut g, xv, hv, &p).unwrap();
    let half: Vec<f64> = h_prev.iter().map(|v| 0.5 * v).collect();
    out.push(("gru zero weights", max_dev(g.value(h).data(), &half)));

    // zero-weight LSTM
    let mut g = Graph::<f64>::new();
    let w = |g: &mut Graph<f64>| g.constant(zeros(hidden, hidden + in_dim));
    let p = LstmParams {
        w_i: w(&mut g),
        w_f: w(&mut g),
        w_o: w(&mut g),
        w_c: w(&mut g),
        b_i: None,
        b_f: None,
        b_o: None,
        b_c: None,
    };
    let c_prev = [2.0, -1.0, 0.25];
    let (xv, hv, cv) = (
        g.constant(t(&[1, in_dim], &x_t)),
        g.constant(t(&[1, hidden], &h_prev)),
        g.constant(t(&[1, hidden], &c_prev)),
    );
    let (h, c) = lstm_cell(&mut g, xv, hv, cv, &p).unwrap();
    let c_expect: Vec<f64> = c_prev.iter().map(|v| 0.5 * v).collect();
    let h_expect: Vec<f64> = c_prev.iter().map(|v| 0.5 * (0.5 * v).tanh()).collect();
    out.push(("lstm zero weights", max_dev(g.value(c).data(), &c_expect).max(max_dev(g.value(h).data(), &h_expect))));

    // Adam t=1 through the model-level step: Δθ = −α·g/(|g|+ε)
    let cfg = ModelConfig {
        vocab_size: 6,
        embed_dim: 4,
        max_len: 3,
        conv_filters: 4,
        gru_hidden: 2,
        lstm_hidden: 2,
        heads: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::build(cfg).unwrap();
    let before = model.clone();
    let mut k = 0.0;
    model.params.visit_mut(&mut |_, p| {
        let grads: Vec<f64> = (0..p.numel())
            .map(|i| {
                k += 1.0;
                if i % 3 == 0 { -(k * 0.37) } else { k * 0.11 }
            })
            .collect();
        p.grad = Some(grads);
    });
    let with_grads = model.clone();
    let hyper = AdamHyper {
        weight_decay: 0.0,
        ..AdamHyper::default()
    };
    adam_step(&mut model, &mut AdamState::default(), &hyper).unwrap();
    let mut dev: f64 = 0.0;
    let mut new_vals = Vec::new();
    model.params.visit(&mut |name, p| new_vals.push((name, p.data().to_vec())));
    let mut i = 0;
    with_grads.params.visit(&mut |name, p| {
        let (_, after) = &new_vals[i];
        i += 1;
        for (j, (&g, &theta)) in p.grad.as_ref().unwrap().iter().zip(p.data()).enumerate() {
            if name == "embedding.table" && j < 4 {
                continue; // pad row is pinned at zero
            }
            let expect = theta - hyper.lr * g / (g.abs() + hyper.eps);
            dev = dev.max((after[j] - expect).abs());
        }
    });
    out.push(("adam first step", dev));
    out.push((
        "adam keeps pad row zero",
        model.params.embedding.table.row(0).iter().map(|v| v.abs()).fold(0.0, f64::max)
            + before.params.embedding.table.row(0).iter().map(|v| v.abs()).fold(0.0, f64::max),
    ));

    // cross-entropy at uniform logits
    let mut g = Graph::<f64>::new();
    let l = g.constant(t(&[3, 2], &[0.0; 6]));
    let loss = cross_entropy(&mut g, l, &[0, 1, 1]).unwrap();
    out.push(("cross-entropy ln 2", (g.value(loss).data()[0] - std::f64::consts::LN_2).abs()));
    out
}
