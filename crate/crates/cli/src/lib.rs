//! Orchestration of the bias-audit pipeline: corpus, perturbation, LFCC-GMM
//! countermeasure, EER tables and the score regression.

pub mod analysis;
pub mod config;
pub mod ingest;
pub mod layout;
pub mod pipeline;
pub mod report;

pub use analysis::{run_analysis, sign_checks, InterventionAnalysis, SignCheck};
pub use config::PipelineConfig;
pub use ingest::ingest_external_scores;
pub use layout::Layout;
pub use pipeline::{prepare_corpus, run_eval, run_perturb, Corpus, EerRow, ExperimentCell};

pub mod run;
