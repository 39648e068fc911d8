use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use domex_core::checkpoint::Checkpoint;
use domex_core::dom::{load_vertical, read_corpus_cache, write_corpus_cache, LoadedVertical, Page, VerticalSchema};
use domex_core::filter::{collect_xpath_stats, filter_site, select_variable_nodes};
use domex_core::pipeline::{
    distance_matrix, page_level_f1, predict_site, run_experiment, run_sweep, synthesize, train_stage_one,
    train_stage_two, voting_curve, ExperimentSpec, PagePrediction, PipelineConfig, Stage, SweepSpec, SynthSpec,
    TrainSummary,
};

mod error;

use error::CliError;

/// Config file looked up in the corpus root when `--config` is absent.
const ROOT_CONFIG: &str = "domex.toml";

#[derive(Parser)]
#[command(name = "domex", version, about = "Neural field extraction from detail web pages")]
struct Cli {
    /// TOML config with schema and hyperparameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (1 for fully sequential runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Corpus root directory.
    #[arg(long, conflicts_with = "cache")]
    root: Option<PathBuf>,
    /// Corpus cache written by `ingest`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    vertical: Option<String>,
    #[arg(long, value_delimiter = ',')]
    fields: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    #[arg(long, visible_alias = "seed-rng")]
    seed: Option<u64>,
    /// Stage-one epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Stage-two epochs.
    #[arg(long)]
    pair_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    vote_fraction: Option<f64>,
    /// Candidates per uncertain field.
    #[arg(long)]
    m: Option<usize>,
    /// Value votes needed to accept a candidate.
    #[arg(long)]
    vote_threshold: Option<usize>,
    /// Pretrained word vectors, one `token v1 .. vd` line each.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with per-site templates.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        sites: usize,
        #[arg(long, default_value_t = 50)]
        pages: usize,
        #[arg(long, default_value_t = 4)]
        fields: usize,
        #[arg(long)]
        no_decoys: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Parse a corpus and write a cache file.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-site boilerplate filtering statistics.
    FilterStats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        top_k: Option<usize>,
        /// Write per-site XPath statistics as JSON.
        #[arg(long)]
        dump_stats: Option<PathBuf>,
    },
    /// Train stage one on seed sites.
    TrainNode {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<String>,
        #[arg(long, visible_alias = "out-ckpt")]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Write seed-page node predictions as JSON lines.
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Add stage two to a stage-one checkpoint.
    TrainPair {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, visible_alias = "stage1-ckpt")]
        checkpoint: PathBuf,
        #[arg(long, visible_alias = "out-ckpt")]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Extract fields from sites; JSON lines, one per (page, field).
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sites to predict; defaults to every non-seed site.
        #[arg(long, value_delimiter = ',')]
        sites: Vec<String>,
        #[arg(long, default_value_t = 2)]
        stage: u8,
        #[arg(long)]
        voting: bool,
        #[arg(long)]
        vote_fraction: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score JSON-lines predictions against corpus truth.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        predictions: PathBuf,
        /// Sites to score; defaults to the sites present in the predictions.
        #[arg(long, value_delimiter = ',')]
        sites: Vec<String>,
    },
    /// Train on k seed sites and evaluate on the rest.
    Experiment {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        permutation: usize,
        #[arg(long, default_value_t = 2)]
        stage: u8,
        #[arg(long)]
        voting: bool,
        /// Fixed site order; defaults to corpus order.
        #[arg(long, value_delimiter = ',')]
        site_order: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
        #[arg(long)]
        save_predictions: Option<PathBuf>,
    },
    /// Grid of experiments over k, permutations and stages.
    Sweep {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        permutations: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        stages: Vec<u8>,
        #[arg(long)]
        voting: bool,
        #[arg(long, value_delimiter = ',')]
        site_order: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Analysis data series.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
}

#[derive(Subcommand)]
enum ReportKind {
    /// Normalized signed distances between field value nodes, per site.
    Distances {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_delimiter = ',')]
        sites: Vec<String>,
        #[arg(long)]
        table: bool,
    },
    /// Macro F1 as a function of the share of pages used for site voting.
    VotingCurve {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sites: Vec<String>,
        #[arg(long, default_value_t = 2)]
        stage: u8,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        fractions: Vec<f64>,
    },
}

fn load_config(cli_config: Option<&Path>, corpus: Option<&CorpusArgs>) -> Result<PipelineConfig, CliError> {
    let implicit = corpus.and_then(|c| c.root.as_ref()).map(|r| r.join(ROOT_CONFIG)).filter(|p| p.is_file());
    let mut cfg = match cli_config.map(Path::to_path_buf).or(implicit) {
        Some(path) => PipelineConfig::load(&path)?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = corpus {
        if let Some(v) = &c.vertical {
            cfg.vertical = Some(v.clone());
        }
        if !c.fields.is_empty() {
            cfg.fields = c.fields.clone();
        }
    }
    Ok(cfg)
}

fn apply_train_args(cfg: &mut PipelineConfig, t: &TrainArgs) -> Result<(), CliError> {
    if let Some(v) = t.seed {
        cfg.seed = v;
    }
    if let Some(v) = t.epochs {
        cfg.node.epochs = v;
    }
    if let Some(v) = t.pair_epochs {
        cfg.relation.epochs = v;
    }
    if let Some(v) = t.learning_rate {
        cfg.node.adam.learning_rate = v;
        cfg.relation.adam.learning_rate = v;
    }
    if let Some(v) = t.batch_size {
        cfg.node.batch_size = v;
        cfg.relation.batch_size = v;
    }
    if let Some(v) = t.top_k {
        cfg.filter_top_k = v;
    }
    if let Some(v) = t.vote_fraction {
        cfg.vote_fraction = v;
    }
    if let Some(v) = t.m {
        cfg.relation.m = v;
    }
    if let Some(v) = t.vote_threshold {
        cfg.relation.vote_threshold = v;
    }
    if let Some(v) = &t.word_vectors {
        cfg.word_vectors = Some(v.clone());
    }
    cfg.validate()?;
    Ok(())
}

fn load_corpus(args: &CorpusArgs, schema: Option<&VerticalSchema>) -> Result<LoadedVertical, CliError> {
    match (&args.root, &args.cache) {
        (_, Some(cache)) => Ok(read_corpus_cache(cache)?),
        (Some(root), None) => {
            let schema = schema.ok_or_else(|| {
                CliError::Usage("a schema is required: pass --vertical and --fields or a config".into())
            })?;
            Ok(load_vertical(root, schema)?)
        }
        (None, None) => Err(CliError::Usage("pass --root or --cache".into())),
    }
}

fn parse_stage(n: u8) -> Result<Stage, CliError> {
    Stage::from_number(n).ok_or_else(|| CliError::Usage(format!("--stage must be 1 or 2, got {n}")))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::Data(e.to_string()))
}

fn write_lines<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<(), CliError> {
    let mut out = output(path)?;
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| CliError::Data(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Serialize)]
struct NodeRow {
    site_id: String,
    page_id: String,
    xpath: String,
    label: String,
    probs: Vec<f64>,
}

fn seed_node_rows(ck: &Checkpoint, corpus: &LoadedVertical, seeds: &[String]) -> Result<Vec<NodeRow>, CliError> {
    let fields = &ck.meta.schema.fields;
    let mut rows = Vec::new();
    for id in seeds {
        let raw = corpus.site(id).ok_or_else(|| CliError::Data(format!("site `{id}` is not in the corpus")))?;
        let site = predict_site(ck, raw, false)?;
        let outputs = ck.node.predict_pages(&site.prepared.bundles).map_err(|e| CliError::Numeric(e.to_string()))?;
        for (page, out) in site.prepared.filtered.pages.iter().zip(outputs) {
            for p in out.predictions {
                rows.push(NodeRow {
                    site_id: page.site_id.clone(),
                    page_id: page.page_id.clone(),
                    xpath: page.nodes[p.ordinal].xpath.clone(),
                    label: fields.get(p.class).cloned().unwrap_or_else(|| "None".into()),
                    probs: p.probs,
                });
            }
        }
    }
    Ok(rows)
}

fn site_order(corpus: &LoadedVertical, given: &[String]) -> Vec<String> {
    if given.is_empty() {
        corpus.site_ids()
    } else {
        given.to_vec()
    }
}

#[derive(Serialize)]
struct SiteSummary<'a> {
    site_id: &'a str,
    pages: usize,
    mean_nodes: f64,
    pages_with_truth: usize,
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    site_id: &'a str,
    pages: usize,
    mean_raw_nodes: f64,
    mean_retained_nodes: f64,
    variable_xpaths: usize,
    truth_values: usize,
    truth_values_retained: usize,
}

fn mean_nodes(pages: &[Page]) -> f64 {
    if pages.is_empty() {
        0.0
    } else {
        pages.iter().map(|p| p.nodes.len()).sum::<usize>() as f64 / pages.len() as f64
    }
}

fn truth_hits(pages: &[Page]) -> (usize, usize) {
    let mut total = 0;
    let mut hits = 0;
    for page in pages {
        for values in page.truth.values() {
            for v in values {
                total += 1;
                let v = domex_core::text::normalize(v);
                hits += page.nodes.iter().any(|n| domex_core::text::normalize(&n.text) == v) as usize;
            }
        }
    }
    (total, hits)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Synth { out, sites, pages, fields, no_decoys, seed } => {
            let spec =
                SynthSpec { n_sites: sites, pages_per_site: pages, num_fields: fields, decoys: !no_decoys, seed };
            let corpus = synthesize(&spec)?;
            corpus.write(&out)?;
            let cfg = PipelineConfig {
                vertical: Some(corpus.schema.vertical_name.clone()),
                fields: corpus.schema.fields.clone(),
                ..load_config(config_path, None)?
            };
            let path = out.join(ROOT_CONFIG);
            fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))?;
            write_json(
                None,
                &serde_json::json!({
                    "root": out.display().to_string(),
                    "vertical": corpus.schema.vertical_name,
                    "fields": corpus.schema.fields,
                    "sites": corpus.sites.iter().map(|s| s.site_id.clone()).collect::<Vec<_>>(),
                    "pages_per_site": pages,
                    "decoys": !no_decoys,
                    "seed": seed,
                }),
            )
        }
        Command::Ingest { corpus, out } => {
            let cfg = load_config(config_path, Some(&corpus))?;
            let loaded = load_corpus(&corpus, Some(&cfg.schema()?))?;
            for w in &loaded.warnings {
                log::warn!("{w:?}");
            }
            write_corpus_cache(&out, &loaded)?;
            let rows: Vec<SiteSummary> = loaded
                .sites
                .iter()
                .map(|s| SiteSummary {
                    site_id: &s.site_id,
                    pages: s.pages.len(),
                    mean_nodes: mean_nodes(&s.pages),
                    pages_with_truth: s.pages.iter().filter(|p| p.truth.values().any(|v| !v.is_empty())).count(),
                })
                .collect();
            write_lines(None, &rows)
        }
        Command::FilterStats { corpus, top_k, dump_stats } => {
            let cfg = load_config(config_path, Some(&corpus))?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let k = top_k.unwrap_or(cfg.filter_top_k);
            let rows: Vec<FilterSummary> = loaded
                .sites
                .iter()
                .map(|s| {
                    let filtered = filter_site(s, k);
                    let (truth_values, truth_values_retained) = truth_hits(&filtered.pages);
                    FilterSummary {
                        site_id: &s.site_id,
                        pages: s.pages.len(),
                        mean_raw_nodes: mean_nodes(&s.pages),
                        mean_retained_nodes: mean_nodes(&filtered.pages),
                        variable_xpaths: select_variable_nodes(&collect_xpath_stats(s), k).len(),
                        truth_values,
                        truth_values_retained,
                    }
                })
                .collect();
            if let Some(path) = dump_stats {
                let stats: std::collections::BTreeMap<&str, _> =
                    loaded.sites.iter().map(|s| (s.site_id.as_str(), collect_xpath_stats(s))).collect();
                write_json(Some(&path), &stats)?;
            }
            write_lines(None, &rows)
        }
        Command::TrainNode { corpus, seeds, out, train, dump_predictions } => {
            let mut cfg = load_config(config_path, Some(&corpus))?;
            apply_train_args(&mut cfg, &train)?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let (checkpoint, summary) = train_stage_one(&loaded, &seeds, &cfg)?;
            checkpoint.save(&out)?;
            if let Some(path) = dump_predictions {
                write_lines(Some(&path), &seed_node_rows(&checkpoint, &loaded, &seeds)?)?;
            }
            write_json(None, &summary)
        }
        Command::TrainPair { corpus, checkpoint, out, train } => {
            let mut cfg = load_config(config_path, Some(&corpus))?;
            apply_train_args(&mut cfg, &train)?;
            let mut ck = Checkpoint::load(&checkpoint)?;
            let loaded = load_corpus(&corpus, Some(&ck.meta.schema))?;
            let mut summary = TrainSummary { training_sites: ck.meta.seed_sites.clone(), ..Default::default() };
            train_stage_two(&mut ck, &loaded, &cfg, &mut summary)?;
            ck.save(&out)?;
            write_json(None, &summary)
        }
        Command::Predict { corpus, checkpoint, sites, stage, voting, vote_fraction, out } => {
            let cfg = load_config(config_path, Some(&corpus))?;
            let stage = parse_stage(stage)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let loaded = load_corpus(&corpus, Some(&ck.meta.schema))?;
            let targets: Vec<String> = if sites.is_empty() {
                loaded.site_ids().into_iter().filter(|s| !ck.meta.seed_sites.contains(s)).collect()
            } else {
                sites
            };
            let fraction = vote_fraction.unwrap_or(cfg.vote_fraction);
            let mut rows: Vec<PagePrediction> = Vec::new();
            for id in &targets {
                let raw = loaded.site(id).ok_or_else(|| CliError::Data(format!("site `{id}` is not in the corpus")))?;
                let site = predict_site(&ck, raw, stage == Stage::Two)?;
                let choices = site.resolve(stage, voting, fraction, ck.meta.schema.len())?;
                rows.extend(site.predictions(&choices, &ck.meta.schema));
            }
            write_lines(out.as_deref(), &rows)
        }
        Command::Evaluate { corpus, predictions, sites } => {
            let cfg = load_config(config_path, Some(&corpus))?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let text = fs::read_to_string(&predictions).map_err(|e| CliError::io(&predictions, e))?;
            let preds: Vec<PagePrediction> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| CliError::Data(format!("predictions line {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?;
            let mut ids = sites;
            if ids.is_empty() {
                ids = preds
                    .iter()
                    .map(|p| p.site_id.clone())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
            }
            let mut pages: Vec<&Page> = Vec::new();
            for id in &ids {
                let site =
                    loaded.site(id).ok_or_else(|| CliError::Data(format!("site `{id}` is not in the corpus")))?;
                pages.extend(site.pages.iter());
            }
            let report = page_level_f1(&loaded.schema, &preds, &pages)?;
            eprint!("{}", report.to_table());
            write_json(None, &report)
        }
        Command::Experiment {
            corpus,
            k,
            permutation,
            stage,
            voting,
            site_order: order,
            train,
            out,
            save_checkpoint,
            save_predictions,
        } => {
            let mut cfg = load_config(config_path, Some(&corpus))?;
            apply_train_args(&mut cfg, &train)?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let spec = ExperimentSpec {
                vertical: loaded.schema.clone(),
                site_order: site_order(&loaded, &order),
                k,
                permutation,
                stage: parse_stage(stage)?,
                voting,
                seed: cfg.seed,
            };
            let outcome = run_experiment(&spec, &loaded, &cfg)?;
            if let Some(path) = save_checkpoint {
                outcome.checkpoint.save(&path)?;
            }
            if let Some(path) = save_predictions {
                write_lines(Some(&path), &outcome.predictions)?;
            }
            eprint!("{}", outcome.report.result.to_table());
            write_json(out.as_deref(), &outcome.report)
        }
        Command::Sweep { corpus, ks, permutations, stages, voting, site_order: order, train, json, csv } => {
            let mut cfg = load_config(config_path, Some(&corpus))?;
            apply_train_args(&mut cfg, &train)?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let sweep = SweepSpec {
                site_order: site_order(&loaded, &order),
                ks,
                permutations,
                stages: stages.into_iter().map(parse_stage).collect::<Result<_, _>>()?,
                voting,
                seed: cfg.seed,
            };
            let report = run_sweep(&sweep, &loaded, &cfg)?;
            if let Some(path) = csv {
                fs::write(&path, report.to_csv()).map_err(|e| CliError::io(&path, e))?;
            }
            if let Some(path) = json {
                write_json(Some(&path), &report)?;
            }
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Report { kind: ReportKind::Distances { corpus, sites, table } } => {
            let cfg = load_config(config_path, Some(&corpus))?;
            let loaded = load_corpus(&corpus, cfg.schema().ok().as_ref())?;
            let ids = site_order(&loaded, &sites);
            let mut rows = Vec::new();
            for id in &ids {
                let site =
                    loaded.site(id).ok_or_else(|| CliError::Data(format!("site `{id}` is not in the corpus")))?;
                rows.push(distance_matrix(&filter_site(site, cfg.filter_top_k)));
            }
            if table {
                for m in &rows {
                    println!("{}", m.to_table());
                }
                Ok(())
            } else {
                write_lines(None, &rows)
            }
        }
        Command::Report { kind: ReportKind::VotingCurve { corpus, checkpoint, sites, stage, fractions } } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let loaded = load_corpus(&corpus, Some(&ck.meta.schema))?;
            let targets: Vec<String> = if sites.is_empty() {
                loaded.site_ids().into_iter().filter(|s| !ck.meta.seed_sites.contains(s)).collect()
            } else {
                sites
            };
            let curve = voting_curve(&ck, &loaded, &targets, parse_stage(stage)?, &fractions)?;
            write_lines(None, &curve)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
