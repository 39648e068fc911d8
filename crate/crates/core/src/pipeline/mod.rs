//! Experiments, metrics, reports and synthetic corpora.

pub mod analysis;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use analysis::{distance_matrix, pearson, voting_curve, DistanceMatrix, VotingPoint};
pub use config::{ConfigError, PipelineConfig};
pub use experiment::{
    check_split_hygiene, cyclic_split, predict_site, prepare_site, run_experiment, run_sweep, train_stage_one,
    train_stage_two, ExperimentError, ExperimentOutcome, ExperimentReport, ExperimentSpec, PreparedSite, SiteChoices,
    Stage, SweepCell, SweepReport, SweepSpec, TrainSummary,
};
pub use metrics::{page_level_f1, FieldMetrics, MetricsError, MetricsReport, PagePrediction};
pub use synth::{synthesize, SynthCorpus, SynthPage, SynthSite, SynthSpec, DECOY_FIELD, SYNTH_FIELDS, SYNTH_VERTICAL};
