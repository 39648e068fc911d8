//! Gradient-check cases. Each returns the worst relative error between
//! backprop and central differences.

use domex_core::features::{NodeFeatureBundle, TokenIds, Vocab, TYPE_FEATURES};
use domex_core::nn::{Activation, BiLstm, Conv1dMaxPool, Dense, Embedding, Graph, Lstm, Mode, NnError, ParamStore};
use domex_core::node_model::{NodeModel, NodeModelConfig};
use domex_core::relation::{PairInput, PairSide, RelationConfig, RelationModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{max_relative_error, probe, random_tensor};

pub const LAYER_TOL: f64 = 1e-4;
pub const END_TO_END_TOL: f64 = 1e-3;

pub type Case = (&'static str, fn() -> f64);

pub const LAYER_CASES: [Case; 9] = [
    ("embedding", embedding),
    ("conv1d max-pool", conv1d_maxpool),
    ("conv1d segments", conv1d_segments),
    ("lstm forward", lstm_forward),
    ("lstm backward", lstm_backward),
    ("bilstm segments", bilstm_average),
    ("dense relu/linear", dense_layers),
    ("softmax cross-entropy", softmax_cross_entropy),
    ("dropout and shape ops", dropout_and_shape_ops),
];

pub const MODEL_CASES: [Case; 2] = [("stage one", stage_one_end_to_end), ("stage two", stage_two_end_to_end)];

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

macro_rules! loss_fn {
    (|$g:ident| $body:block) => {
        |s: &ParamStore| {
            let mut $g = Graph::new(s);
            #[allow(clippy::redundant_closure_call)]
            let out = (|| -> Result<_, NnError> { $body })().unwrap();
            let loss = probe(&mut $g, out, 99).unwrap();
            ($g.value(loss).data()[0], Some($g.backward(loss).unwrap()))
        }
    };
}

pub fn embedding() -> f64 {
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "e", 6, 4, &mut rng()).unwrap();
    max_relative_error(&mut store, loss_fn!(|g| { emb.forward(&mut g, &[3, 1, 3, 0]) }))
}

pub fn conv1d_maxpool() -> f64 {
    let mut store = ParamStore::new();
    let conv = Conv1dMaxPool::new(&mut store, "c", 8, 6, 3, &mut rng()).unwrap();
    let x = store.add("x", random_tensor(5, 8, 1)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            conv.forward(&mut g, xv)
        }),
    )
}

pub fn conv1d_segments() -> f64 {
    let mut store = ParamStore::new();
    let conv = Conv1dMaxPool::new(&mut store, "c", 3, 4, 3, &mut rng()).unwrap();
    let x = store.add("x", random_tensor(6, 3, 2)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            conv.forward_segments(&mut g, xv, &[1, 3, 2])
        }),
    )
}

pub fn lstm_forward() -> f64 {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 3, 5, &mut rng()).unwrap();
    let x = store.add("x", random_tensor(4, 3, 3)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            lstm.forward(&mut g, xv)
        }),
    )
}

pub fn lstm_backward() -> f64 {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 3, 5, &mut rng()).unwrap();
    let x = store.add("x", random_tensor(4, 3, 3)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            lstm.backward_dir(&mut g, xv)
        }),
    )
}

pub fn bilstm_average() -> f64 {
    let mut store = ParamStore::new();
    let bi = BiLstm::new(&mut store, "b", 3, 4, &mut rng()).unwrap();
    let x = store.add("x", random_tensor(7, 3, 4)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            bi.forward_avg_segments(&mut g, xv, &[3, 0, 4])
        }),
    )
}

pub fn dense_layers() -> f64 {
    let mut store = ParamStore::new();
    let relu = Dense::new(&mut store, "d1", 5, 4, Activation::Relu, &mut rng()).unwrap();
    let lin = Dense::new(&mut store, "d2", 4, 3, Activation::None, &mut rng()).unwrap();
    store.get_mut(relu.bias).value = random_tensor(1, 4, 8);
    let x = store.add("x", random_tensor(3, 5, 5)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let xv = g.param(x);
            let h = relu.forward(&mut g, xv)?;
            lin.forward(&mut g, h)
        }),
    )
}

pub fn softmax_cross_entropy() -> f64 {
    let mut store = ParamStore::new();
    let logits = store.add("z", random_tensor(3, 4, 6)).unwrap();
    max_relative_error(&mut store, |s: &ParamStore| {
        let mut g = Graph::new(s);
        let z = g.param(logits);
        let loss = g.softmax_xent(z, &[2, 0, 3]).unwrap();
        (g.value(loss).data()[0], Some(g.backward(loss).unwrap()))
    })
}

pub fn dropout_and_shape_ops() -> f64 {
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(4, 3, 10)).unwrap();
    let b = store.add("b", random_tensor(4, 2, 11)).unwrap();
    max_relative_error(
        &mut store,
        loss_fn!(|g| {
            let (av, bv) = (g.param(a), g.param(b));
            let c = g.concat_cols(&[av, bv])?;
            let d = g.dropout(c, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5))?;
            let e = g.gather_rows(d, &[3, 0, 0, 2])?;
            let f = g.slice_cols(e, 1, 3)?;
            let t = g.tanh(f)?;
            let s = g.sigmoid(t)?;
            let m = g.max_rows(s)?;
            let mean = g.mean_rows(e)?;
            let head = g.slice_cols(mean, 0, 3)?;
            let stacked = g.stack_rows(&[m, head])?;
            let r = g.reverse_rows(stacked)?;
            let sm = g.segment_mean(r, &[2])?;
            let cat = g.concat_cols(&[sm, head])?;
            let w = g.input(random_tensor(6, 2, 12))?;
            g.matmul(cat, w)
        }),
    )
}

pub fn tiny_vocab() -> Vocab {
    let mut v = Vocab::default();
    for (i, w) in ["price", "date", "$", "9"].iter().enumerate() {
        v.word_to_id.insert(w.to_string(), i as u32 + 2);
    }
    for (i, c) in "pricedat$9".chars().enumerate() {
        v.char_to_id.insert(c, i as u32 + 2);
    }
    v.tag_to_id.insert("OTHER_TAG".into(), 0);
    v.tag_to_id.insert("span".into(), 1);
    for (i, t) in TYPE_FEATURES.iter().enumerate() {
        v.type_to_id.insert(t.to_string(), i as u32);
    }
    for (i, t) in ["html", "body", "div", "span"].iter().enumerate() {
        v.xpath_tag_to_id.insert(t.to_string(), i as u32 + 1);
    }
    v
}

fn tok(word: u32, chars: &[u32]) -> TokenIds {
    TokenIds { word, chars: chars.to_vec() }
}

pub fn tiny_node_config() -> NodeModelConfig {
    NodeModelConfig {
        dim_char: 3,
        dim_word: 4,
        cnn_filters: 3,
        cnn_kernel: 3,
        lstm_hidden_node_text: 4,
        lstm_hidden_prev_text: 2,
        dim_tag: 2,
        dim_type: 3,
        mlp_hidden: 5,
        ..Default::default()
    }
}

pub fn stage_one_end_to_end() -> f64 {
    let vocab = tiny_vocab();
    let mut model = NodeModel::new(tiny_node_config(), &vocab, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let bundles = [
        NodeFeatureBundle {
            node_tokens: vec![tok(4, &[9]), tok(5, &[10, 0])],
            prev_tokens: vec![tok(2, &[2, 3, 4, 5, 6]), tok(0, &[0])],
            tag_features: vec![1],
            type_features: vec![0, 4, 7],
        },
        NodeFeatureBundle {
            node_tokens: vec![tok(3, &[7, 8, 9, 6])],
            prev_tokens: vec![],
            tag_features: vec![0],
            type_features: vec![],
        },
        NodeFeatureBundle {
            node_tokens: vec![tok(4, &[9]), tok(0, &[1])],
            prev_tokens: vec![tok(4, &[9])],
            tag_features: vec![1],
            type_features: vec![7],
        },
    ];
    let refs: Vec<&NodeFeatureBundle> = bundles.iter().collect();
    let targets = [0, 2, 1];
    let cfg = model.config.clone();
    let classes = model.num_classes;
    let loss = |s: &ParamStore| {
        let m = NodeModel::from_store(cfg.clone(), classes, s.clone()).unwrap();
        let mut g = Graph::new(s);
        let v = m.encode_batch(&mut g, &refs).unwrap();
        let logits = m.logits(&mut g, v, Mode::Train, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let l = g.softmax_xent(logits, &targets).unwrap();
        (g.value(l).data()[0], Some(g.backward(l).unwrap()))
    };
    max_relative_error(&mut model.store, loss)
}

pub fn tiny_relation_config() -> RelationConfig {
    RelationConfig {
        dim_xpath_tag: 3,
        xpath_lstm_hidden: 4,
        dim_pos: 2,
        pos_range: 6,
        mlp_hidden: 5,
        ..Default::default()
    }
}

pub fn stage_two_end_to_end() -> f64 {
    let vocab = tiny_vocab();
    let node_dim = 5;
    let mut model =
        RelationModel::new(tiny_relation_config(), &vocab, node_dim, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let vectors = random_tensor(4, node_dim, 30);
    let paths: [Vec<usize>; 4] = [vec![1, 2, 3, 4], vec![1, 2, 3], vec![1, 2, 3, 3, 4], vec![1, 2, 0]];
    let buckets = [0, 2, 5, 3];
    let side = |i: usize| PairSide { node_vector: vectors.row(i), xpath_tags: &paths[i], bucket: buckets[i] };
    let pairs = vec![
        PairInput { head: side(0), tail: side(1) },
        PairInput { head: side(2), tail: side(0) },
        PairInput { head: side(3), tail: side(2) },
        PairInput { head: side(1), tail: side(3) },
    ];
    let targets = [3, 1, 0, 2];
    let cfg = model.config.clone();
    let loss = |s: &ParamStore| {
        let m = RelationModel::from_store(cfg.clone(), node_dim, s.clone()).unwrap();
        let mut g = Graph::new(s);
        let r = m.encode_pairs(&mut g, &pairs).unwrap();
        let logits = m.logits(&mut g, r, Mode::Train, &mut ChaCha8Rng::seed_from_u64(23)).unwrap();
        let l = g.softmax_xent(logits, &targets).unwrap();
        (g.value(l).data()[0], Some(g.backward(l).unwrap()))
    };
    max_relative_error(&mut model.store, loss)
}
