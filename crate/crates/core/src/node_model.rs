//! Stage one: encode each node from three views and classify it into one of
//! the K schema fields or none.
//!
//! Classes are laid out as fields `0..K` in schema order followed by none at
//! index `K`. Argmax ties resolve to the lowest index.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::VerticalSchema;
use crate::features::{NodeFeatureBundle, TokenIds, Vocab};
use crate::nn::{
    argmax, softmax, Activation, Adam, AdamConfig, BiLstm, Conv1dMaxPool, Dense, Embedding, Graph, Mode, NnError,
    ParamStore, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum NodeModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no labeled nodes to train on")]
    EmptyTrainingSet,
    #[error("invalid node model config: {0}")]
    InvalidConfig(String),
    #[error("labels and bundles differ in length ({labels} vs {bundles})")]
    LabelMismatch { labels: usize, bundles: usize },
    #[error("malformed word vector file at line {line}: {reason}")]
    WordVectors { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeModelConfig {
    pub dim_char: usize,
    pub dim_word: usize,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    /// Both directions together.
    pub lstm_hidden_node_text: usize,
    /// Both directions together.
    pub lstm_hidden_prev_text: usize,
    pub dim_tag: usize,
    pub dim_type: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for NodeModelConfig {
    fn default() -> Self {
        Self {
            dim_char: 100,
            dim_word: 100,
            cnn_filters: 50,
            cnn_kernel: 3,
            lstm_hidden_node_text: 100,
            lstm_hidden_prev_text: 100,
            dim_tag: 20,
            dim_type: 30,
            mlp_hidden: 100,
            dropout: 0.3,
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
        }
    }
}

impl NodeModelConfig {
    pub fn node_vector_dim(&self) -> usize {
        self.lstm_hidden_node_text + self.lstm_hidden_prev_text + self.dim_tag + self.dim_type
    }

    pub fn validate(&self) -> Result<(), NodeModelError> {
        let sizes = [
            ("dim_char", self.dim_char),
            ("dim_word", self.dim_word),
            ("cnn_filters", self.cnn_filters),
            ("cnn_kernel", self.cnn_kernel),
            ("lstm_hidden_node_text", self.lstm_hidden_node_text),
            ("lstm_hidden_prev_text", self.lstm_hidden_prev_text),
            ("dim_tag", self.dim_tag),
            ("dim_type", self.dim_type),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NodeModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.lstm_hidden_node_text.is_multiple_of(2) || !self.lstm_hidden_prev_text.is_multiple_of(2) {
            return Err(NodeModelError::InvalidConfig("text LSTM sizes must split evenly across directions".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NodeModelError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextView {
    Node,
    Prev,
}

/// Concatenated node-text, preceding-text and discrete views.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVector(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct NodePrediction {
    pub ordinal: usize,
    pub class: usize,
    /// Pre-softmax scores, one per class.
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl NodePrediction {
    fn from_scores(ordinal: usize, scores: Vec<f64>) -> Self {
        let probs = softmax(&scores);
        Self { ordinal, class: argmax(&scores), scores, probs }
    }

    /// The predicted field name, or `None` for the none class.
    pub fn label<'a>(&self, schema: &'a VerticalSchema) -> Option<&'a str> {
        schema.fields.get(self.class).map(String::as_str)
    }
}

/// Stage-one output for one page.
#[derive(Clone, Debug, PartialEq)]
pub struct PageNodeOutput {
    pub predictions: Vec<NodePrediction>,
    /// `[n x node_vector_dim]`, row `i` for ordinal `i`.
    pub node_vectors: Tensor,
}

/// A featurized page with one class label per node.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPage {
    pub bundles: Vec<NodeFeatureBundle>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct NodeLayers {
    char_emb: Embedding,
    word_emb: Embedding,
    cnn: Conv1dMaxPool,
    node_text: BiLstm,
    prev_text: BiLstm,
    tag_emb: Embedding,
    type_emb: Embedding,
    hidden: Dense,
    output: Dense,
}

#[derive(Clone, Debug)]
pub struct NodeModel {
    pub config: NodeModelConfig,
    pub num_classes: usize,
    pub store: ParamStore,
    layers: NodeLayers,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl NodeModel {
    pub fn new(
        config: NodeModelConfig,
        vocab: &Vocab,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NodeModelError> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let s = &mut store;
        let layers = NodeLayers {
            char_emb: Embedding::new(s, "char_emb", vocab.char_count(), c.dim_char, rng)?,
            word_emb: Embedding::new(s, "word_emb", vocab.word_count(), c.dim_word, rng)?,
            cnn: Conv1dMaxPool::new(s, "char_cnn", c.dim_char, c.cnn_filters, c.cnn_kernel, rng)?,
            node_text: BiLstm::new(s, "node_text", c.dim_word + c.cnn_filters, c.lstm_hidden_node_text / 2, rng)?,
            prev_text: BiLstm::new(s, "prev_text", c.dim_word + c.cnn_filters, c.lstm_hidden_prev_text / 2, rng)?,
            tag_emb: Embedding::new(s, "tag_emb", vocab.tag_count().max(1), c.dim_tag, rng)?,
            type_emb: Embedding::new(s, "type_emb", vocab.type_count().max(1), c.dim_type, rng)?,
            hidden: Dense::new(s, "mlp_hidden", c.node_vector_dim(), c.mlp_hidden, Activation::Relu, rng)?,
            output: Dense::new(s, "mlp_out", c.mlp_hidden, num_classes, Activation::None, rng)?,
        };
        Ok(Self { config, num_classes, store, layers })
    }

    /// Rebuilds a model around parameters restored from a checkpoint.
    pub fn from_store(config: NodeModelConfig, num_classes: usize, store: ParamStore) -> Result<Self, NodeModelError> {
        config.validate()?;
        let s = &store;
        let layers = NodeLayers {
            char_emb: Embedding::from_store(s, "char_emb")?,
            word_emb: Embedding::from_store(s, "word_emb")?,
            cnn: Conv1dMaxPool::from_store(s, "char_cnn", config.cnn_kernel)?,
            node_text: BiLstm::from_store(s, "node_text")?,
            prev_text: BiLstm::from_store(s, "prev_text")?,
            tag_emb: Embedding::from_store(s, "tag_emb")?,
            type_emb: Embedding::from_store(s, "type_emb")?,
            hidden: Dense::from_store(s, "mlp_hidden", Activation::Relu)?,
            output: Dense::from_store(s, "mlp_out", Activation::None)?,
        };
        let model = Self { config, num_classes, store, layers };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), NodeModelError> {
        let out = self.store.value(self.layers.output.weights);
        let hidden = self.store.value(self.layers.hidden.weights);
        if out.cols() != self.num_classes || hidden.rows() != self.config.node_vector_dim() {
            return Err(NodeModelError::InvalidConfig(format!(
                "stored shapes {:?}/{:?} disagree with {} classes and {}-d node vectors",
                hidden.shape(),
                out.shape(),
                self.num_classes,
                self.config.node_vector_dim()
            )));
        }
        Ok(())
    }

    /// Overrides word embedding rows from a text file of `token v1 .. vd` lines.
    /// Returns how many vocabulary words were replaced.
    pub fn load_word_vectors(&mut self, vocab: &Vocab, reader: impl BufRead) -> Result<usize, NodeModelError> {
        let dim = self.config.dim_word;
        let table = self.layers.word_emb.table;
        let mut replaced = 0;
        for (i, line) in reader.lines().enumerate() {
            let bad = |reason: String| NodeModelError::WordVectors { line: i + 1, reason };
            let line = line.map_err(|e| bad(e.to_string()))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|e| bad(format!("{e}")))?;
            if values.len() != dim {
                return Err(bad(format!("expected {dim} values, found {}", values.len())));
            }
            if let Some(&id) = vocab.word_to_id.get(token) {
                self.store.get_mut(table).value.row_mut(id as usize).copy_from_slice(&values);
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    /// Embeds the distinct tokens once: rows are `[word ; char-CNN]`.
    fn token_table<'t>(
        &self,
        g: &mut Graph,
        tokens: impl Iterator<Item = &'t TokenIds>,
    ) -> Result<(Var, HashMap<&'t TokenIds, usize>), NnError> {
        let mut index: HashMap<&TokenIds, usize> = HashMap::new();
        let mut order: Vec<&TokenIds> = Vec::new();
        for t in tokens {
            index.entry(t).or_insert_with(|| {
                order.push(t);
                order.len() - 1
            });
        }
        let chars: Vec<usize> = order.iter().flat_map(|t| t.chars.iter().map(|&c| c as usize)).collect();
        let lens: Vec<usize> = order.iter().map(|t| t.chars.len()).collect();
        let words: Vec<usize> = order.iter().map(|t| t.word as usize).collect();
        let char_rows = self.layers.char_emb.forward(g, &chars)?;
        let char_vecs = if order.is_empty() {
            let f = self.config.cnn_filters;
            g.input(Tensor::zeros(&[0, f]))?
        } else {
            self.layers.cnn.forward_segments(g, char_rows, &lens)?
        };
        let word_vecs = self.layers.word_emb.forward(g, &words)?;
        let table = g.concat_cols(&[word_vecs, char_vecs])?;
        Ok((table, index))
    }

    fn text_views(
        &self,
        g: &mut Graph,
        table: Var,
        index: &HashMap<&TokenIds, usize>,
        sequences: &[&[TokenIds]],
        view: TextView,
    ) -> Result<Var, NnError> {
        let rows: Vec<usize> = sequences.iter().flat_map(|s| s.iter().map(|t| index[t])).collect();
        let lens: Vec<usize> = sequences.iter().map(|s| s.len()).collect();
        let seq = g.gather_rows(table, &rows)?;
        let lstm = match view {
            TextView::Node => self.layers.node_text,
            TextView::Prev => self.layers.prev_text,
        };
        lstm.forward_avg_segments(g, seq, &lens)
    }

    /// `[1 x text_dim]`; an empty token list gives a zero vector.
    pub fn encode_text_view(&self, g: &mut Graph, tokens: &[TokenIds], view: TextView) -> Result<Var, NnError> {
        let (table, index) = self.token_table(g, tokens.iter())?;
        self.text_views(g, table, &index, &[tokens], view)
    }

    /// `[1 x (dim_tag + dim_type)]` max-pooled bags; empty bags give zeros.
    pub fn encode_discrete_view(&self, g: &mut Graph, tags: &[u32], types: &[u32]) -> Result<Var, NnError> {
        self.discrete_views(g, &[tags], &[types])
    }

    fn discrete_views(&self, g: &mut Graph, tags: &[&[u32]], types: &[&[u32]]) -> Result<Var, NnError> {
        let tag = bag_max(g, self.layers.tag_emb, tags)?;
        let ty = bag_max(g, self.layers.type_emb, types)?;
        g.concat_cols(&[tag, ty])
    }

    /// Node vectors `[batch x node_vector_dim]` for a batch of bundles.
    pub fn encode_batch(&self, g: &mut Graph, bundles: &[&NodeFeatureBundle]) -> Result<Var, NnError> {
        let all_tokens = bundles.iter().flat_map(|b| b.node_tokens.iter().chain(&b.prev_tokens));
        let (table, index) = self.token_table(g, all_tokens)?;
        let node_seqs: Vec<&[TokenIds]> = bundles.iter().map(|b| b.node_tokens.as_slice()).collect();
        let prev_seqs: Vec<&[TokenIds]> = bundles.iter().map(|b| b.prev_tokens.as_slice()).collect();
        let node = self.text_views(g, table, &index, &node_seqs, TextView::Node)?;
        let prev = self.text_views(g, table, &index, &prev_seqs, TextView::Prev)?;
        let tags: Vec<&[u32]> = bundles.iter().map(|b| b.tag_features.as_slice()).collect();
        let types: Vec<&[u32]> = bundles.iter().map(|b| b.type_features.as_slice()).collect();
        let discrete = self.discrete_views(g, &tags, &types)?;
        g.concat_cols(&[node, prev, discrete])
    }

    /// Class scores `[batch x classes]` from node vectors.
    pub fn logits(&self, g: &mut Graph, nodes: Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var, NnError> {
        let h = self.layers.hidden.forward(g, nodes)?;
        let h = g.dropout(h, self.config.dropout, mode, rng)?;
        self.layers.output.forward(g, h)
    }

    pub fn encode_node(&self, bundle: &NodeFeatureBundle) -> Result<NodeVector, NnError> {
        let mut g = Graph::new(&self.store);
        let v = self.encode_batch(&mut g, &[bundle])?;
        Ok(NodeVector(g.value(v).data().to_vec()))
    }

    pub fn classify_node(&self, v: &NodeVector, ordinal: usize) -> Result<NodePrediction, NnError> {
        let mut g = Graph::new(&self.store);
        let x = g.input(Tensor::row_vector(v.0.clone()))?;
        let logits = self.logits(&mut g, x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(NodePrediction::from_scores(ordinal, g.value(logits).data().to_vec()))
    }

    /// Predictions and node vectors for every node of one page.
    pub fn predict_page(&self, bundles: &[NodeFeatureBundle]) -> Result<PageNodeOutput, NnError> {
        let dim = self.config.node_vector_dim();
        if bundles.is_empty() {
            return Ok(PageNodeOutput { predictions: Vec::new(), node_vectors: Tensor::zeros(&[0, dim]) });
        }
        let mut g = Graph::new(&self.store);
        let refs: Vec<&NodeFeatureBundle> = bundles.iter().collect();
        let vectors = self.encode_batch(&mut g, &refs)?;
        let logits = self.logits(&mut g, vectors, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        let scores = g.value(logits);
        let predictions = (0..bundles.len()).map(|i| NodePrediction::from_scores(i, scores.row(i).to_vec())).collect();
        Ok(PageNodeOutput { predictions, node_vectors: g.value(vectors).clone() })
    }

    pub fn predict_pages(&self, pages: &[Vec<NodeFeatureBundle>]) -> Result<Vec<PageNodeOutput>, NnError> {
        use rayon::prelude::*;
        pages.par_iter().map(|p| self.predict_page(p)).collect()
    }

    /// Mean cross-entropy of one batch, with parameter gradients accumulated into the store.
    fn train_batch(&mut self, batch: &[(&NodeFeatureBundle, usize)], rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
        let bundles: Vec<&NodeFeatureBundle> = batch.iter().map(|(b, _)| *b).collect();
        let targets: Vec<usize> = batch.iter().map(|(_, l)| *l).collect();
        let grads = {
            let mut g = Graph::new(&self.store);
            let v = self.encode_batch(&mut g, &bundles)?;
            let logits = self.logits(&mut g, v, Mode::Train, rng)?;
            let loss = g.softmax_xent(logits, &targets)?;
            let value = g.value(loss).data()[0];
            (g.backward(loss)?, value)
        };
        self.store.accumulate(&grads.0);
        Ok(grads.1)
    }
}

fn bag_max(g: &mut Graph, emb: Embedding, bags: &[&[u32]]) -> Result<Var, NnError> {
    let ids: Vec<usize> = bags.iter().flat_map(|b| b.iter().map(|&i| i as usize)).collect();
    let lens: Vec<usize> = bags.iter().map(|b| b.len()).collect();
    let rows = emb.forward(g, &ids)?;
    g.segment_max(rows, &lens)
}

/// Trains a fresh stage-one model on every node of the given pages.
pub fn train_node_model(
    pages: &[LabeledPage],
    vocab: &Vocab,
    num_classes: usize,
    config: &NodeModelConfig,
    seed: u64,
    word_vectors: Option<&Path>,
) -> Result<(NodeModel, TrainLog), NodeModelError> {
    let mut examples: Vec<(&NodeFeatureBundle, usize)> = Vec::new();
    for page in pages {
        if page.labels.len() != page.bundles.len() {
            return Err(NodeModelError::LabelMismatch { labels: page.labels.len(), bundles: page.bundles.len() });
        }
        examples.extend(page.bundles.iter().zip(page.labels.iter().copied()));
    }
    if examples.is_empty() {
        return Err(NodeModelError::EmptyTrainingSet);
    }
    if let Some(&(_, bad)) = examples.iter().find(|(_, l)| *l >= num_classes) {
        return Err(NnError::IndexOutOfRange { op: "node labels", index: bad, bound: num_classes }.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = NodeModel::new(config.clone(), vocab, num_classes, &mut rng)?;
    if let Some(path) = word_vectors {
        let file = File::open(path)
            .map_err(|e| NodeModelError::WordVectors { line: 0, reason: format!("{}: {e}", path.display()) })?;
        let replaced = model.load_word_vectors(vocab, BufReader::new(file))?;
        info!("{replaced} word vectors loaded from {}", path.display());
    }
    let mut adam = Adam::new(&model.store, config.adam);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in examples.chunks(config.batch_size) {
            total += model.train_batch(batch, &mut rng)? * batch.len() as f64;
            adam.step(&mut model.store)?;
        }
        let mean = total / examples.len() as f64;
        info!("node model epoch {} loss {:.5}", epoch + 1, mean);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::OOV_ID;

    fn tiny_config() -> NodeModelConfig {
        NodeModelConfig {
            dim_char: 4,
            dim_word: 4,
            cnn_filters: 3,
            cnn_kernel: 3,
            lstm_hidden_node_text: 4,
            lstm_hidden_prev_text: 4,
            dim_tag: 2,
            dim_type: 3,
            mlp_hidden: 6,
            epochs: 10,
            batch_size: 4,
            ..Default::default()
        }
    }

    fn toy_vocab() -> Vocab {
        let mut v = Vocab::default();
        for (i, w) in ["city", "hwy", "33", "27"].iter().enumerate() {
            v.word_to_id.insert(w.to_string(), i as u32 + 2);
        }
        for (i, c) in "cityhw0123456789".chars().enumerate() {
            v.char_to_id.insert(c, i as u32 + 2);
        }
        v.tag_to_id.insert("OTHER_TAG".into(), 0);
        v.tag_to_id.insert("span".into(), 1);
        for (i, t) in crate::features::TYPE_FEATURES.iter().enumerate() {
            v.type_to_id.insert(t.to_string(), i as u32);
        }
        v
    }

    fn tok(v: &Vocab, s: &str) -> TokenIds {
        TokenIds { word: v.word_id(s), chars: s.chars().map(|c| v.char_id(c)).collect() }
    }

    fn model(cfg: NodeModelConfig) -> (NodeModel, Vocab) {
        let v = toy_vocab();
        let m = NodeModel::new(cfg, &v, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (m, v)
    }

    #[test]
    fn default_vector_dim() {
        assert_eq!(NodeModelConfig::default().node_vector_dim(), 250);
    }

    #[test]
    fn empty_prev_view_is_zero() {
        let (m, _) = model(NodeModelConfig::default());
        let mut g = Graph::new(&m.store);
        let v = m.encode_text_view(&mut g, &[], TextView::Prev).unwrap();
        assert_eq!(g.value(v).data(), &[0.0; 100]);
    }

    #[test]
    fn digits_change_text_encoding() {
        let (m, v) = model(tiny_config());
        let a: Vec<TokenIds> = ["city", "33", "hwy", "27"].iter().map(|s| tok(&v, s)).collect();
        let b: Vec<TokenIds> = ["city", "34", "hwy", "28"].iter().map(|s| tok(&v, s)).collect();
        let mut g = Graph::new(&m.store);
        let ea = m.encode_text_view(&mut g, &a, TextView::Node).unwrap();
        let eb = m.encode_text_view(&mut g, &b, TextView::Node).unwrap();
        assert_ne!(g.value(ea).data(), g.value(eb).data());
    }

    #[test]
    fn discrete_view_pools() {
        let (m, _) = model(tiny_config());
        let mut g = Graph::new(&m.store);
        let empty = m.encode_discrete_view(&mut g, &[], &[]).unwrap();
        assert_eq!(g.value(empty).data(), &[0.0; 5]);
        let one = m.encode_discrete_view(&mut g, &[1], &[]).unwrap();
        assert_eq!(&g.value(one).data()[..2], m.store.value(m.layers.tag_emb.table).row(1));
        let two = m.encode_discrete_view(&mut g, &[], &[2, 5]).unwrap();
        let table = m.store.value(m.layers.type_emb.table);
        let expected: Vec<f64> = table.row(2).iter().zip(table.row(5)).map(|(a, b)| a.max(*b)).collect();
        assert_eq!(&g.value(two).data()[2..], expected.as_slice());
    }

    #[test]
    fn node_vector_concatenates_views() {
        let (m, v) = model(tiny_config());
        let bundle = NodeFeatureBundle {
            node_tokens: vec![tok(&v, "city"), tok(&v, "33")],
            prev_tokens: vec![tok(&v, "hwy"), TokenIds { word: OOV_ID, chars: vec![OOV_ID] }],
            tag_features: vec![1],
            type_features: vec![0, 7],
        };
        let nv = m.encode_node(&bundle).unwrap();
        assert_eq!(nv, m.encode_node(&bundle).unwrap());
        let mut g = Graph::new(&m.store);
        let node = m.encode_text_view(&mut g, &bundle.node_tokens, TextView::Node).unwrap();
        let prev = m.encode_text_view(&mut g, &bundle.prev_tokens, TextView::Prev).unwrap();
        let dis = m.encode_discrete_view(&mut g, &bundle.tag_features, &bundle.type_features).unwrap();
        assert_eq!(&nv.0[..4], g.value(node).data());
        assert_eq!(&nv.0[4..8], g.value(prev).data());
        assert_eq!(&nv.0[8..], g.value(dis).data());
    }

    #[test]
    fn zero_weights_predict_first_field() {
        let (mut m, _) = model(tiny_config());
        for p in m.store.iter_mut() {
            p.value.fill(0.0);
        }
        let pred = m.classify_node(&NodeVector(vec![0.3; 13]), 0).unwrap();
        assert!(pred.probs.iter().all(|p| (p - 0.2).abs() < 1e-12));
        assert_eq!(pred.class, 0);
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_training_set() {
        let v = toy_vocab();
        assert!(matches!(train_node_model(&[], &v, 5, &tiny_config(), 1, None), Err(NodeModelError::EmptyTrainingSet)));
    }

    #[test]
    fn learns_separable_tokens() {
        let v = toy_vocab();
        let words = ["city", "hwy", "33", "27"];
        let pages: Vec<LabeledPage> = (0..4)
            .map(|_| LabeledPage {
                bundles: words
                    .iter()
                    .map(|w| NodeFeatureBundle {
                        node_tokens: vec![tok(&v, w)],
                        prev_tokens: vec![],
                        tag_features: vec![1],
                        type_features: vec![],
                    })
                    .collect(),
                labels: vec![0, 1, 2, 4],
            })
            .collect();
        let cfg = NodeModelConfig {
            dim_char: 8,
            dim_word: 8,
            cnn_filters: 8,
            lstm_hidden_node_text: 16,
            lstm_hidden_prev_text: 4,
            mlp_hidden: 16,
            epochs: 30,
            adam: AdamConfig { learning_rate: 0.01, ..Default::default() },
            ..tiny_config()
        };
        let (m, log) = train_node_model(&pages, &v, 5, &cfg, 9, None).unwrap();
        assert!(log.epoch_losses.last() < log.epoch_losses.first());
        let out = m.predict_page(&pages[0].bundles).unwrap();
        let classes: Vec<usize> = out.predictions.iter().map(|p| p.class).collect();
        assert_eq!(classes, vec![0, 1, 2, 4]);
        let (m2, _) = train_node_model(&pages, &v, 5, &cfg, 9, None).unwrap();
        assert_eq!(m.store, m2.store);
    }

    #[test]
    fn pretrained_vectors_override_rows() {
        let (mut m, v) = model(tiny_config());
        let text = "city 1 2 3 4\nunknown 0 0 0 0\n";
        assert_eq!(m.load_word_vectors(&v, text.as_bytes()).unwrap(), 1);
        assert_eq!(m.store.value(m.layers.word_emb.table).row(2), &[1.0, 2.0, 3.0, 4.0]);
        assert!(m.load_word_vectors(&v, "city 1 2".as_bytes()).is_err());
    }
}
