//! Seed-site training, unseen-site prediction and the cyclic-permutation protocol.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::PipelineConfig;
use super::metrics::{page_level_f1, MetricsError, MetricsReport, PagePrediction};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::dom::{match_truth_nodes, LoadedVertical, Page, SiteCorpus, VerticalSchema};
use crate::features::{build_vocabs, featurize_page, FeatureError, NodeFeatureBundle, Vocab};
use crate::filter::filter_site;
use crate::nn::NnError;
use crate::node_model::{train_node_model, LabeledPage, NodeModelError, PageNodeOutput};
use crate::relation::{
    site_vote, stage_one_choices, train_relation_model, PageChoices, RelationError, RelationTrainPage, StagedPage,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least {needed} sites for k={k}, have {have}")]
    InsufficientSites { k: usize, needed: usize, have: usize },
    #[error("site `{0}` is not in the corpus")]
    UnknownSite(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("checkpoint has no stage-two model")]
    MissingStageTwo,
    #[error("training pages from `{0}` overlap the evaluation sites")]
    SplitViolation(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Node(#[from] NodeModelError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Stage {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub vertical: VerticalSchema,
    pub site_order: Vec<String>,
    pub k: usize,
    pub permutation: usize,
    pub stage: Stage,
    pub voting: bool,
    pub seed: u64,
}

/// Seed sites `order[perm..perm+k]` taken cyclically, and the rest as targets.
pub fn cyclic_split(
    order: &[String],
    k: usize,
    permutation: usize,
) -> Result<(Vec<String>, Vec<String>), ExperimentError> {
    let n = order.len();
    if k == 0 {
        return Err(ExperimentError::Invalid("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(ExperimentError::InsufficientSites { k, needed: k + 1, have: n });
    }
    if permutation >= n {
        return Err(ExperimentError::Invalid(format!("permutation {permutation} outside 0..{n}")));
    }
    let seeds: Vec<String> = (0..k).map(|i| order[(permutation + i) % n].clone()).collect();
    let targets = (k..n).map(|i| order[(permutation + i) % n].clone()).collect();
    Ok((seeds, targets))
}

/// A site after boilerplate filtering, with node features.
pub struct PreparedSite<'a> {
    pub raw: &'a SiteCorpus,
    pub filtered: SiteCorpus,
    pub bundles: Vec<Vec<NodeFeatureBundle>>,
}

pub fn prepare_site<'a>(raw: &'a SiteCorpus, vocab: &Vocab, cfg: &PipelineConfig) -> PreparedSite<'a> {
    let filtered = filter_site(raw, cfg.filter_top_k);
    let bundles = filtered
        .pages
        .par_iter()
        .zip(&raw.pages)
        .map(|(page, raw_page)| featurize_page(page, Some(raw_page), vocab, &cfg.features))
        .collect();
    PreparedSite { raw, filtered, bundles }
}

fn lookup_sites<'a>(corpus: &'a LoadedVertical, ids: &[String]) -> Result<Vec<&'a SiteCorpus>, ExperimentError> {
    ids.iter().map(|id| corpus.site(id).ok_or_else(|| ExperimentError::UnknownSite(id.clone()))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub training_sites: Vec<String>,
    pub training_pages: usize,
    pub training_nodes: usize,
    pub node_epoch_losses: Vec<f64>,
    pub pair_epoch_losses: Vec<f64>,
    pub pair_label_counts: [usize; 4],
}

fn labeled_pages(prepared: &[PreparedSite], schema: &VerticalSchema) -> Vec<LabeledPage> {
    prepared
        .iter()
        .flat_map(|site| site.filtered.pages.iter().zip(&site.bundles))
        .map(|(page, bundles)| LabeledPage {
            bundles: bundles.clone(),
            labels: match_truth_nodes(page, schema).node_labels(schema, page.nodes.len()),
        })
        .collect()
}

/// Trains stage one on the labeled seed sites.
pub fn train_stage_one(
    corpus: &LoadedVertical,
    seed_sites: &[String],
    cfg: &PipelineConfig,
) -> Result<(Checkpoint, TrainSummary), ExperimentError> {
    let schema = &corpus.schema;
    let raw = lookup_sites(corpus, seed_sites)?;
    let owned: Vec<SiteCorpus> = raw.iter().map(|s| (*s).clone()).collect();
    let vocab = build_vocabs(&owned, &cfg.features)?;
    let prepared: Vec<PreparedSite> = raw.iter().map(|s| prepare_site(s, &vocab, cfg)).collect();
    let labeled = labeled_pages(&prepared, schema);
    let (node, log) =
        train_node_model(&labeled, &vocab, schema.len() + 1, &cfg.node, cfg.seed, cfg.word_vectors.as_deref())?;
    let summary = TrainSummary {
        training_sites: seed_sites.to_vec(),
        training_pages: labeled.len(),
        training_nodes: labeled.iter().map(|p| p.labels.len()).sum(),
        node_epoch_losses: log.epoch_losses,
        ..Default::default()
    };
    let meta = CheckpointMeta {
        schema: schema.clone(),
        features: cfg.features.clone(),
        node_vector_dim: cfg.node.node_vector_dim(),
        node: cfg.node.clone(),
        relation: None,
        vocab,
        hidden_activation: "relu".into(),
        seed_sites: seed_sites.to_vec(),
        rng_seed: cfg.seed,
        filter_top_k: cfg.filter_top_k,
    };
    Ok((Checkpoint { meta, node, relation: None }, summary))
}

/// Trains stage two on the checkpoint's seed sites, keeping stage one frozen.
pub fn train_stage_two(
    checkpoint: &mut Checkpoint,
    corpus: &LoadedVertical,
    cfg: &PipelineConfig,
    summary: &mut TrainSummary,
) -> Result<(), ExperimentError> {
    let schema = &checkpoint.meta.schema;
    let site_cfg = PipelineConfig {
        features: checkpoint.meta.features.clone(),
        filter_top_k: checkpoint.meta.filter_top_k,
        ..cfg.clone()
    };
    let raw = lookup_sites(corpus, &checkpoint.meta.seed_sites)?;
    let prepared: Vec<PreparedSite> = raw.iter().map(|s| prepare_site(s, &checkpoint.meta.vocab, &site_cfg)).collect();
    let pages: Vec<&Page> = prepared.iter().flat_map(|s| s.filtered.pages.iter()).collect();
    let bundles: Vec<Vec<NodeFeatureBundle>> = prepared.iter().flat_map(|s| s.bundles.iter().cloned()).collect();
    let stage1 = checkpoint.node.predict_pages(&bundles)?;
    let labels: Vec<Vec<usize>> =
        pages.iter().map(|p| match_truth_nodes(p, schema).node_labels(schema, p.nodes.len())).collect();
    let train: Vec<RelationTrainPage> = pages
        .iter()
        .zip(&stage1)
        .zip(&labels)
        .map(|((page, out), labels)| RelationTrainPage {
            staged: StagedPage { page, stage1: out },
            node_labels: labels,
        })
        .collect();
    let (model, log) = train_relation_model(
        &train,
        &checkpoint.meta.vocab,
        schema.len(),
        checkpoint.meta.node_vector_dim,
        &cfg.relation,
        checkpoint.meta.rng_seed.wrapping_add(1),
    )?;
    summary.pair_epoch_losses = log.epoch_losses;
    summary.pair_label_counts = log.label_counts;
    checkpoint.meta.relation = Some(cfg.relation.clone());
    checkpoint.relation = Some(model);
    Ok(())
}

/// Per-page choices for one unseen site, before any site-level voting.
pub struct SiteChoices<'a> {
    pub prepared: PreparedSite<'a>,
    pub stage1: Vec<PageChoices>,
    pub stage2: Option<Vec<PageChoices>>,
}

impl SiteChoices<'_> {
    pub fn pages(&self) -> Vec<&Page> {
        self.prepared.filtered.pages.iter().collect()
    }

    /// Choices of `stage`, optionally corrected by site voting over `fraction` of the pages.
    pub fn resolve(
        &self,
        stage: Stage,
        voting: bool,
        fraction: f64,
        num_fields: usize,
    ) -> Result<Vec<PageChoices>, ExperimentError> {
        let base = match stage {
            Stage::One => &self.stage1,
            Stage::Two => self.stage2.as_ref().ok_or(ExperimentError::MissingStageTwo)?,
        };
        Ok(if voting { site_vote(&self.pages(), base, num_fields, fraction) } else { base.clone() })
    }

    pub fn predictions(&self, choices: &[PageChoices], schema: &VerticalSchema) -> Vec<PagePrediction> {
        let mut out = Vec::new();
        for (page, page_choices) in self.prepared.filtered.pages.iter().zip(choices) {
            for (field, choice) in schema.fields.iter().zip(page_choices) {
                if let Some(choice) = choice {
                    let node = &page.nodes[choice.ordinal];
                    out.push(PagePrediction {
                        site_id: page.site_id.clone(),
                        page_id: page.page_id.clone(),
                        field: field.clone(),
                        xpath: node.xpath.clone(),
                        text: node.text.clone(),
                        source: choice.source.as_str().to_string(),
                    });
                }
            }
        }
        out
    }
}

/// Runs stage one, and stage two when the checkpoint has it, on an unseen site.
pub fn predict_site<'a>(
    checkpoint: &Checkpoint,
    raw: &'a SiteCorpus,
    want_stage_two: bool,
) -> Result<SiteChoices<'a>, ExperimentError> {
    let meta = &checkpoint.meta;
    let k = meta.schema.len();
    let cfg = PipelineConfig { features: meta.features.clone(), filter_top_k: meta.filter_top_k, ..Default::default() };
    let prepared = prepare_site(raw, &meta.vocab, &cfg);
    let outputs: Vec<PageNodeOutput> = checkpoint.node.predict_pages(&prepared.bundles)?;
    let stage1 = outputs.iter().map(|o| stage_one_choices(&o.predictions, k)).collect();
    let stage2 = if want_stage_two {
        let relation = checkpoint.relation.as_ref().ok_or(ExperimentError::MissingStageTwo)?;
        let choices = prepared
            .filtered
            .pages
            .par_iter()
            .zip(&outputs)
            .map(|(page, out)| Ok(relation.predict_page(&meta.vocab, StagedPage { page, stage1: out }, k)?.choices))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        Some(choices)
    } else {
        None
    };
    Ok(SiteChoices { prepared, stage1, stage2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub vertical: String,
    pub k: usize,
    pub permutation: usize,
    pub stage: Stage,
    pub voting: bool,
    pub seed: u64,
    pub seed_sites: Vec<String>,
    pub target_sites: Vec<String>,
    pub train: TrainSummary,
    /// Stage one without voting, reported for every run.
    pub stage1: MetricsReport,
    /// The requested stage and voting setting.
    pub result: MetricsReport,
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub checkpoint: Checkpoint,
    pub predictions: Vec<PagePrediction>,
}

/// Checks that no training page belongs to an evaluation site.
pub fn check_split_hygiene(
    summary: &TrainSummary,
    seeds: &[String],
    targets: &[String],
) -> Result<(), ExperimentError> {
    let targets: BTreeSet<&String> = targets.iter().collect();
    for site in summary.training_sites.iter().chain(seeds) {
        if targets.contains(site) {
            return Err(ExperimentError::SplitViolation(site.clone()));
        }
    }
    Ok(())
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    corpus: &LoadedVertical,
    cfg: &PipelineConfig,
) -> Result<ExperimentOutcome, ExperimentError> {
    let started = Instant::now();
    if spec.vertical != corpus.schema {
        return Err(ExperimentError::Invalid("experiment schema differs from the corpus schema".into()));
    }
    let (seeds, targets) = cyclic_split(&spec.site_order, spec.k, spec.permutation)?;
    lookup_sites(corpus, &spec.site_order)?;
    let cfg = PipelineConfig { seed: spec.seed, ..cfg.clone() };
    let (mut checkpoint, mut summary) = train_stage_one(corpus, &seeds, &cfg)?;
    if spec.stage == Stage::Two {
        train_stage_two(&mut checkpoint, corpus, &cfg, &mut summary)?;
    }
    check_split_hygiene(&summary, &seeds, &targets)?;
    let trained = started.elapsed();

    let schema = &corpus.schema;
    let k = schema.len();
    let mut stage1_preds = Vec::new();
    let mut final_preds = Vec::new();
    let mut eval_pages: Vec<Page> = Vec::new();
    for raw in lookup_sites(corpus, &targets)? {
        let site = predict_site(&checkpoint, raw, spec.stage == Stage::Two)?;
        stage1_preds.extend(site.predictions(&site.stage1, schema));
        let chosen = site.resolve(spec.stage, spec.voting, cfg.vote_fraction, k)?;
        final_preds.extend(site.predictions(&chosen, schema));
        eval_pages.extend(site.prepared.filtered.pages);
    }
    let refs: Vec<&Page> = eval_pages.iter().collect();
    let stage1 = page_level_f1(schema, &stage1_preds, &refs)?;
    let result = page_level_f1(schema, &final_preds, &refs)?;
    eprintln!(
        "experiment k={} perm={} stage={} voting={}: train {:.1}s, total {:.1}s",
        spec.k,
        spec.permutation,
        spec.stage.number(),
        spec.voting,
        trained.as_secs_f64(),
        started.elapsed().as_secs_f64()
    );
    info!("macro F1 {:.4} (stage one {:.4})", result.macro_f1, stage1.macro_f1);
    let report = ExperimentReport {
        vertical: schema.vertical_name.clone(),
        k: spec.k,
        permutation: spec.permutation,
        stage: spec.stage,
        voting: spec.voting,
        seed: spec.seed,
        seed_sites: seeds,
        target_sites: targets,
        train: summary,
        stage1,
        result,
    };
    Ok(ExperimentOutcome { report, checkpoint, predictions: final_preds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub stage: Stage,
    pub voting: bool,
    pub permutations: Vec<usize>,
    pub macro_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub vertical: String,
    pub cells: Vec<SweepCell>,
    pub runs: Vec<ExperimentReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub site_order: Vec<String>,
    pub ks: Vec<usize>,
    pub permutations: Vec<usize>,
    pub stages: Vec<Stage>,
    pub voting: bool,
    pub seed: u64,
}

/// Runs every (k, stage, permutation) cell in parallel and averages per (k, stage).
pub fn run_sweep(
    sweep: &SweepSpec,
    corpus: &LoadedVertical,
    cfg: &PipelineConfig,
) -> Result<SweepReport, ExperimentError> {
    let mut jobs = Vec::new();
    for &k in &sweep.ks {
        for &stage in &sweep.stages {
            for &permutation in &sweep.permutations {
                jobs.push(ExperimentSpec {
                    vertical: corpus.schema.clone(),
                    site_order: sweep.site_order.clone(),
                    k,
                    permutation,
                    stage,
                    voting: sweep.voting,
                    seed: sweep.seed,
                });
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|spec| run_experiment(spec, corpus, cfg).map(|o| o.report))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for &k in &sweep.ks {
        for &stage in &sweep.stages {
            let members: Vec<&ExperimentReport> = runs.iter().filter(|r| r.k == k && r.stage == stage).collect();
            let macro_f1: Vec<f64> = members.iter().map(|r| r.result.macro_f1).collect();
            let mean_f1 = if macro_f1.is_empty() { 0.0 } else { macro_f1.iter().sum::<f64>() / macro_f1.len() as f64 };
            cells.push(SweepCell {
                k,
                stage,
                voting: sweep.voting,
                permutations: members.iter().map(|r| r.permutation).collect(),
                macro_f1,
                mean_f1,
            });
        }
    }
    Ok(SweepReport { vertical: corpus.schema.vertical_name.clone(), cells, runs })
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<4} {:<6} {:<7} {:>6} {:>9}\n", "k", "stage", "voting", "runs", "mean F1");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{:<4} {:<6} {:<7} {:>6} {:>9.4}",
                c.k,
                c.stage.number(),
                if c.voting { "on" } else { "off" },
                c.macro_f1.len(),
                c.mean_f1
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("vertical,k,stage,voting,runs,mean_f1\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6}",
                self.vertical,
                c.k,
                c.stage.number(),
                c.voting,
                c.macro_f1.len(),
                c.mean_f1
            );
        }
        out
    }
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "field", "precision", "recall", "F1", "truth", "pred", "correct"
        );
        for m in &self.fields {
            let _ = writeln!(
                out,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}",
                m.field,
                m.page_precision,
                m.page_recall,
                m.page_f1,
                m.pages_with_truth,
                m.pages_with_prediction,
                m.pages_correct
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        );
        out
    }
}
