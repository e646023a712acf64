//! Measurement pipeline for smart-contract upgradeability.
//!
//! Stages run in order: ingest, normalize, detect, lineage, root cause,
//! activity. Each stage reads and writes through [`store::CorpusStore`].

pub mod activity;
pub mod detect;
pub mod ingest;
pub mod keccak;
pub mod lexer;
pub mod lineage;
pub mod normalize;
pub mod outline;
pub mod pipeline;
pub mod report;
pub mod rootcause;
pub mod store;
pub mod types;

pub use detect::{classify_pattern, prevalence_summary, PatternVerdict, PrevalenceSummary, RuleSet};
pub use normalize::{group_duplicates, normalize_bundle, DuplicateGroup, NormalizedSource};
pub use types::{Address, ContractRecord, SourceBundle, SourceFile, UnixSeconds, UpgradeKind};
pub use activity::{analyze_activity, ActivityReport, RegressionFit};
pub use lineage::{build_lineage, upgrade_rate, UpgradeRate, Version, VersionLineage};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, RunManifest, Stage};
pub use report::{build_report, CorpusReport};
pub use rootcause::{classify_root_causes, RootCause, RootCauseReport};
pub use store::{CorpusStore, StoreError};
