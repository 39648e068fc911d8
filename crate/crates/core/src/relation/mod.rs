//! Stage two: score pairs of candidate nodes from their frozen node vectors,
//! XPath encodings and page positions, then resolve each field per page.

mod pairs;
mod voting;

use std::collections::HashMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pairs::{construct_pairs, expected_pair_count, partition_fields, CertaintyPartition, NodePair, PairLabel};
pub use voting::{
    aggregate_votes, majority_xpaths, site_vote, stage_one_choices, tally_votes, ChoiceSource, FieldChoice,
    PageChoices, PairVote,
};

use crate::dom::Page;
use crate::features::{xpath_tags, FeatureError, Vocab};
use crate::nn::{
    argmax, softmax, Activation, Adam, AdamConfig, BiLstm, Dense, Embedding, Graph, Mode, NnError, ParamStore, Tensor,
    Var,
};
use crate::node_model::PageNodeOutput;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("stage one produced no node pairs to train on")]
    NoPairsConstructed,
    #[error("invalid relation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub dim_xpath_tag: usize,
    /// Both directions together.
    pub xpath_lstm_hidden: usize,
    pub dim_pos: usize,
    pub pos_range: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub vote_threshold: usize,
    pub m: usize,
    pub adam: AdamConfig,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            dim_xpath_tag: 30,
            xpath_lstm_hidden: 100,
            dim_pos: 30,
            pos_range: 100,
            mlp_hidden: 100,
            dropout: 0.3,
            epochs: 10,
            batch_size: 32,
            vote_threshold: 1,
            m: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl RelationConfig {
    pub fn pair_vector_dim(&self, node_dim: usize) -> usize {
        2 * node_dim + 2 * self.xpath_lstm_hidden + 2 * self.dim_pos
    }

    pub fn validate(&self) -> Result<(), RelationError> {
        let sizes = [
            ("dim_xpath_tag", self.dim_xpath_tag),
            ("xpath_lstm_hidden", self.xpath_lstm_hidden),
            ("dim_pos", self.dim_pos),
            ("pos_range", self.pos_range),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
            ("m", self.m),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(RelationError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.xpath_lstm_hidden.is_multiple_of(2) {
            return Err(RelationError::InvalidConfig("xpath LSTM size must split evenly across directions".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RelationError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `floor(ordinal * L / max(page_size, 1))`, clamped to `L - 1`.
pub fn position_bucket(ordinal: usize, page_size: usize, range: usize) -> usize {
    ((ordinal * range) / page_size.max(1)).min(range.saturating_sub(1))
}

/// Tag ids along an XPath, sibling indices dropped.
pub fn xpath_tag_ids(vocab: &Vocab, xpath: &str) -> Result<Vec<usize>, FeatureError> {
    Ok(xpath_tags(xpath)?.into_iter().map(|t| vocab.xpath_tag_id(t) as usize).collect())
}

/// Everything the pair encoder reads about one side of a pair.
#[derive(Clone, Copy, Debug)]
pub struct PairSide<'a> {
    pub node_vector: &'a [f64],
    pub xpath_tags: &'a [usize],
    pub bucket: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct PairInput<'a> {
    pub head: PairSide<'a>,
    pub tail: PairSide<'a>,
}

impl<'a> PairInput<'a> {
    fn side(&self, tail: bool) -> PairSide<'a> {
        if tail {
            self.tail
        } else {
            self.head
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct RelationLayers {
    xpath_tag_emb: Embedding,
    xpath_lstm: BiLstm,
    pos_emb: Embedding,
    hidden: Dense,
    output: Dense,
}

#[derive(Clone, Debug)]
pub struct RelationModel {
    pub config: RelationConfig,
    pub node_dim: usize,
    pub store: ParamStore,
    layers: RelationLayers,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelationTrainLog {
    pub epoch_losses: Vec<f64>,
    /// Training pairs per label, indexed by [`PairLabel::index`].
    pub label_counts: [usize; 4],
}

/// One page as stage two sees it: the retained nodes and stage-one output.
#[derive(Clone, Copy, Debug)]
pub struct StagedPage<'a> {
    pub page: &'a Page,
    pub stage1: &'a PageNodeOutput,
}

/// Stage-two output for one page.
#[derive(Clone, Debug, PartialEq)]
pub struct PagePairOutput {
    pub partition: CertaintyPartition,
    pub pairs: Vec<NodePair>,
    pub pair_labels: Vec<PairLabel>,
    pub votes: Vec<PairVote>,
    pub choices: PageChoices,
}

impl RelationModel {
    pub fn new(
        config: RelationConfig,
        vocab: &Vocab,
        node_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, RelationError> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let s = &mut store;
        let layers = RelationLayers {
            xpath_tag_emb: Embedding::new(s, "xpath_tag_emb", vocab.xpath_tag_count(), c.dim_xpath_tag, rng)?,
            xpath_lstm: BiLstm::new(s, "xpath_lstm", c.dim_xpath_tag, c.xpath_lstm_hidden / 2, rng)?,
            pos_emb: Embedding::new(s, "pos_emb", c.pos_range, c.dim_pos, rng)?,
            hidden: Dense::new(s, "mlp_hidden", c.pair_vector_dim(node_dim), c.mlp_hidden, Activation::Relu, rng)?,
            output: Dense::new(s, "mlp_out", c.mlp_hidden, PairLabel::ALL.len(), Activation::None, rng)?,
        };
        Ok(Self { config, node_dim, store, layers })
    }

    pub fn from_store(config: RelationConfig, node_dim: usize, store: ParamStore) -> Result<Self, RelationError> {
        config.validate()?;
        let s = &store;
        let layers = RelationLayers {
            xpath_tag_emb: Embedding::from_store(s, "xpath_tag_emb")?,
            xpath_lstm: BiLstm::from_store(s, "xpath_lstm")?,
            pos_emb: Embedding::from_store(s, "pos_emb")?,
            hidden: Dense::from_store(s, "mlp_hidden", Activation::Relu)?,
            output: Dense::from_store(s, "mlp_out", Activation::None)?,
        };
        if store.value(layers.hidden.weights).rows() != config.pair_vector_dim(node_dim) {
            return Err(RelationError::InvalidConfig(format!(
                "stored pair MLP expects {} inputs, config gives {}",
                store.value(layers.hidden.weights).rows(),
                config.pair_vector_dim(node_dim)
            )));
        }
        Ok(Self { config, node_dim, store, layers })
    }

    /// `[n x xpath_lstm_hidden]`, one row per tag sequence.
    pub fn encode_xpaths(&self, g: &mut Graph, sequences: &[&[usize]]) -> Result<Var, NnError> {
        if sequences.iter().any(|s| s.is_empty()) {
            return Err(NnError::ShapeMismatch { op: "encode_xpath", detail: "empty tag sequence".into() });
        }
        let ids: Vec<usize> = sequences.iter().flat_map(|s| s.iter().copied()).collect();
        let lens: Vec<usize> = sequences.iter().map(|s| s.len()).collect();
        let rows = self.layers.xpath_tag_emb.forward(g, &ids)?;
        self.layers.xpath_lstm.forward_avg_segments(g, rows, &lens)
    }

    pub fn encode_xpath(&self, vocab: &Vocab, xpath: &str) -> Result<Vec<f64>, RelationError> {
        let ids = xpath_tag_ids(vocab, xpath)?;
        let mut g = Graph::new(&self.store);
        let v = self.encode_xpaths(&mut g, &[&ids])?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn position_feature(&self, ordinal: usize, page_size: usize) -> Vec<f64> {
        let bucket = position_bucket(ordinal, page_size, self.config.pos_range);
        self.store.value(self.layers.pos_emb.table).row(bucket).to_vec()
    }

    /// Pair vectors `[batch x pair_dim]` ordered
    /// `[node_h, node_t, xpath_h, xpath_t, pos_h, pos_t]`.
    pub fn encode_pairs(&self, g: &mut Graph, pairs: &[PairInput]) -> Result<Var, NnError> {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut distinct: Vec<&[usize]> = Vec::new();
        for side in pairs.iter().flat_map(|p| [p.head, p.tail]) {
            index.entry(side.xpath_tags).or_insert_with(|| {
                distinct.push(side.xpath_tags);
                distinct.len() - 1
            });
        }
        let xpaths = self.encode_xpaths(g, &distinct)?;
        let mut parts = Vec::with_capacity(6);
        for tail in [false, true] {
            let mut data = Vec::with_capacity(pairs.len() * self.node_dim);
            for p in pairs {
                let v = p.side(tail).node_vector;
                if v.len() != self.node_dim {
                    return Err(NnError::ShapeMismatch {
                        op: "encode_pair",
                        detail: format!("node vector of {}", v.len()),
                    });
                }
                data.extend_from_slice(v);
            }
            parts.push(g.input(Tensor::matrix(pairs.len(), self.node_dim, data)?)?);
        }
        for tail in [false, true] {
            let rows: Vec<usize> = pairs.iter().map(|p| index[p.side(tail).xpath_tags]).collect();
            parts.push(g.gather_rows(xpaths, &rows)?);
        }
        for tail in [false, true] {
            let buckets: Vec<usize> = pairs.iter().map(|p| p.side(tail).bucket).collect();
            parts.push(self.layers.pos_emb.forward(g, &buckets)?);
        }
        g.concat_cols(&parts)
    }

    pub fn logits(&self, g: &mut Graph, pairs: Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var, NnError> {
        let h = self.layers.hidden.forward(g, pairs)?;
        let h = g.dropout(h, self.config.dropout, mode, rng)?;
        self.layers.output.forward(g, h)
    }

    /// Probabilities over the four pair labels for one pair vector.
    pub fn classify_pair(&self, r: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut g = Graph::new(&self.store);
        let x = g.input(Tensor::row_vector(r.to_vec()))?;
        let logits = self.logits(&mut g, x, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(softmax(g.value(logits).data()))
    }

    pub fn predict_labels(&self, inputs: &[PairInput]) -> Result<Vec<PairLabel>, NnError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.store);
        let r = self.encode_pairs(&mut g, inputs)?;
        let logits = self.logits(&mut g, r, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        let scores = g.value(logits);
        Ok((0..inputs.len()).map(|i| PairLabel::from_index(argmax(scores.row(i))).expect("four classes")).collect())
    }

    /// Pairs, votes and per-field choices for one page, before site voting.
    pub fn predict_page(
        &self,
        vocab: &Vocab,
        staged: StagedPage,
        num_fields: usize,
    ) -> Result<PagePairOutput, RelationError> {
        let preds = &staged.stage1.predictions;
        let partition = partition_fields(preds, num_fields, self.config.m);
        let pairs = construct_pairs(&partition);
        let sides = PageSides::new(vocab, staged, self.config.pos_range)?;
        let inputs: Vec<PairInput> = pairs.iter().map(|p| sides.input(p)).collect();
        let pair_labels = self.predict_labels(&inputs)?;
        let votes = tally_votes(&pairs, &pair_labels);
        let choices = aggregate_votes(&votes, &partition, preds, self.config.vote_threshold);
        Ok(PagePairOutput { partition, pairs, pair_labels, votes, choices })
    }

    fn train_batch(&mut self, batch: &[(PairInput, usize)], rng: &mut ChaCha8Rng) -> Result<f64, NnError> {
        let inputs: Vec<PairInput> = batch.iter().map(|(p, _)| *p).collect();
        let targets: Vec<usize> = batch.iter().map(|(_, t)| *t).collect();
        let (grads, loss) = {
            let mut g = Graph::new(&self.store);
            let r = self.encode_pairs(&mut g, &inputs)?;
            let logits = self.logits(&mut g, r, Mode::Train, rng)?;
            let loss = g.softmax_xent(logits, &targets)?;
            let value = g.value(loss).data()[0];
            (g.backward(loss)?, value)
        };
        self.store.accumulate(&grads);
        Ok(loss)
    }
}

/// Per-node side features of one page, precomputed once.
pub struct PageSides<'a> {
    vectors: &'a Tensor,
    tags: Vec<Vec<usize>>,
    buckets: Vec<usize>,
}

impl<'a> PageSides<'a> {
    pub fn new(vocab: &Vocab, staged: StagedPage<'a>, range: usize) -> Result<Self, FeatureError> {
        let n = staged.page.nodes.len();
        Ok(Self {
            vectors: &staged.stage1.node_vectors,
            tags: staged.page.nodes.iter().map(|node| xpath_tag_ids(vocab, &node.xpath)).collect::<Result<_, _>>()?,
            buckets: (0..n).map(|i| position_bucket(i, n, range)).collect(),
        })
    }

    pub fn side(&self, ordinal: usize) -> PairSide<'_> {
        PairSide {
            node_vector: self.vectors.row(ordinal),
            xpath_tags: &self.tags[ordinal],
            bucket: self.buckets[ordinal],
        }
    }

    pub fn input(&self, pair: &NodePair) -> PairInput<'_> {
        PairInput { head: self.side(pair.head), tail: self.side(pair.tail) }
    }
}

/// A seed page for stage-two training: its stage-one output and true node classes.
#[derive(Clone, Copy, Debug)]
pub struct RelationTrainPage<'a> {
    pub staged: StagedPage<'a>,
    pub node_labels: &'a [usize],
}

pub fn train_relation_model(
    pages: &[RelationTrainPage],
    vocab: &Vocab,
    num_fields: usize,
    node_dim: usize,
    config: &RelationConfig,
    seed: u64,
) -> Result<(RelationModel, RelationTrainLog), RelationError> {
    config.validate()?;
    let sides: Vec<PageSides> =
        pages.iter().map(|p| PageSides::new(vocab, p.staged, config.pos_range)).collect::<Result<_, _>>()?;
    let mut examples: Vec<(PairInput, usize)> = Vec::new();
    let mut log = RelationTrainLog::default();
    for (page, sides) in pages.iter().zip(&sides) {
        let part = partition_fields(&page.staged.stage1.predictions, num_fields, config.m);
        for pair in construct_pairs(&part) {
            let label = pair.label(page.node_labels).index();
            log.label_counts[label] += 1;
            examples.push((sides.input(&pair), label));
        }
    }
    if examples.is_empty() {
        return Err(RelationError::NoPairsConstructed);
    }
    info!(
        "pair labels: {}",
        PairLabel::ALL
            .iter()
            .map(|l| format!("{}={}", l.name(), log.label_counts[l.index()]))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RelationModel::new(config.clone(), vocab, node_dim, &mut rng)?;
    let mut adam = Adam::new(&model.store, config.adam);
    for epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in examples.chunks(config.batch_size) {
            total += model.train_batch(batch, &mut rng)? * batch.len() as f64;
            adam.step(&mut model.store)?;
        }
        let mean = total / examples.len() as f64;
        info!("relation model epoch {} loss {:.5}", epoch + 1, mean);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}
