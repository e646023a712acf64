//! End-to-end orchestration: ingest, normalize, detect, trace, root cause and
//! activity, in that order, over one [`CorpusStore`].
//!
//! Configuration is validated in full before any stage runs, so a bad path or
//! missing collection date never leaves partial outputs behind. Each stage
//! reads its inputs from the store and flushes its outputs before the next
//! one starts, which lets single stages be re-run against a persisted store.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::analyze_activity;
use crate::detect::{classify_with, prevalence_summary, PatternVerdict, RuleSet};
use crate::ingest::{
    assign_creators, attach_source, count_received, load_local_source, parse_timestamp, read_etl_contracts,
    read_etl_logs, read_etl_traces, read_etl_transactions, EtlTransactionRow, ExplorerClient, ExplorerConfig,
    FetchError, LocalSource, API_KEY_ENV,
};
use crate::lineage::{
    build_lineage, extract_delegate_targets, extract_upgrade_events, sample_proxies, upgrade_rate, EventRegistry,
    UpgradeEvent, VersionLineage,
};
use crate::normalize::{group_duplicates, normalize_bundle, NormalizedSource};
use crate::rootcause::{
    classify_root_causes, estimate_from_bytecode, estimate_from_source_length, run_detectors, DetectorSet,
    ExternalFindings, GasEstimate, RootCauseReport, UpgradeId, VulnerabilityFinding,
};
use crate::store::{CorpusStore, StoreError, MANIFEST_FILE};
use crate::types::{Address, UnixSeconds};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Normalize,
    Detect,
    Trace,
    Rootcause,
    Activity,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [Stage::Ingest, Stage::Normalize, Stage::Detect, Stage::Trace, Stage::Rootcause, Stage::Activity];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Normalize => "normalize",
            Stage::Detect => "detect",
            Stage::Trace => "trace",
            Stage::Rootcause => "rootcause",
            Stage::Activity => "activity",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub contracts: Option<PathBuf>,
    /// Directory of `<address>/` source trees or `<address>.json` explorer responses.
    pub sources: Option<PathBuf>,
    pub transactions: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub findings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorerSettings {
    pub base_url: String,
    /// Falls back to the `EXPLORER_API_KEY` environment variable.
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub ingest: bool,
    pub normalize: bool,
    pub detect: bool,
    pub trace: bool,
    pub rootcause: bool,
    pub activity: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles::all()
    }
}

impl StageToggles {
    pub fn all() -> Self {
        StageToggles { ingest: true, normalize: true, detect: true, trace: true, rootcause: true, activity: true }
    }

    pub fn none() -> Self {
        StageToggles { ingest: false, normalize: false, detect: false, trace: false, rootcause: false, activity: false }
    }

    pub fn only(stage: Stage) -> Self {
        let mut t = StageToggles::none();
        t.set(stage, true);
        t
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Ingest => self.ingest,
            Stage::Normalize => self.normalize,
            Stage::Detect => self.detect,
            Stage::Trace => self.trace,
            Stage::Rootcause => self.rootcause,
            Stage::Activity => self.activity,
        }
    }

    pub fn set(&mut self, stage: Stage, on: bool) {
        let slot = match stage {
            Stage::Ingest => &mut self.ingest,
            Stage::Normalize => &mut self.normalize,
            Stage::Detect => &mut self.detect,
            Stage::Trace => &mut self.trace,
            Stage::Rootcause => &mut self.rootcause,
            Stage::Activity => &mut self.activity,
        };
        *slot = on;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub store: PathBuf,
    /// Worker threads per stage; unset means one per logical CPU.
    pub workers: Option<usize>,
    /// ISO 8601 instant closing the final version's lifetime.
    pub collection_date: Option<String>,
    pub inputs: InputPaths,
    pub rules: Option<PathBuf>,
    pub upgrade_events: Option<PathBuf>,
    pub explorer: Option<ExplorerSettings>,
    pub stages: StageToggles,
    /// Uniform seeded sample of upgradeable contracts to trace.
    pub sample: Option<SampleConfig>,
    pub log_transform: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            store: PathBuf::from("store"),
            workers: None,
            collection_date: None,
            inputs: InputPaths::default(),
            rules: None,
            upgrade_events: None,
            explorer: None,
            stages: StageToggles::all(),
            sample: None,
            log_transform: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| config_err(format!("config file: {e}")))
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        config.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        for p in [
            &mut self.inputs.contracts,
            &mut self.inputs.sources,
            &mut self.inputs.transactions,
            &mut self.inputs.logs,
            &mut self.inputs.traces,
            &mut self.inputs.findings,
            &mut self.rules,
            &mut self.upgrade_events,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn collection_timestamp(&self) -> Result<Option<UnixSeconds>, PipelineError> {
        self.collection_date
            .as_deref()
            .map(|text| parse_timestamp(text).ok_or_else(|| config_err(format!("collection date `{text}` is not ISO 8601"))))
            .transpose()
    }

    /// The config with secrets removed, for the run manifest.
    pub fn snapshot(&self) -> PipelineConfig {
        let mut copy = self.clone();
        if let Some(explorer) = copy.explorer.as_mut() {
            if explorer.api_key.is_some() {
                explorer.api_key = Some("<redacted>".into());
            }
        }
        copy
    }

    /// Checks everything enabled stages will need and loads the auxiliary files.
    pub fn validate(&self) -> Result<Resolved, PipelineError> {
        let need_file = |label: &str, path: &Option<PathBuf>, required: bool| -> Result<(), PipelineError> {
            match path {
                Some(p) if !p.is_file() => Err(config_err(format!("{label} input {} does not exist", p.display()))),
                None if required => Err(config_err(format!("{label} input is required"))),
                _ => Ok(()),
            }
        };
        if self.workers == Some(0) {
            return Err(config_err("workers must be at least 1"));
        }
        if self.store.exists() && !self.store.is_dir() {
            return Err(config_err(format!("store {} is not a directory", self.store.display())));
        }
        let stages = &self.stages;
        if stages.ingest {
            need_file("contracts", &self.inputs.contracts, true)?;
            if let Some(dir) = &self.inputs.sources {
                if !dir.is_dir() {
                    return Err(config_err(format!("sources directory {} does not exist", dir.display())));
                }
            }
        }
        if stages.ingest || stages.trace {
            need_file("transactions", &self.inputs.transactions, false)?;
        }
        let collection_date = self.collection_timestamp()?;
        if stages.trace {
            if collection_date.is_none() {
                return Err(config_err("collection date is required when tracing is enabled"));
            }
            if self.inputs.logs.is_none() && self.inputs.traces.is_none() {
                return Err(config_err("tracing needs a logs or traces input"));
            }
            need_file("logs", &self.inputs.logs, false)?;
            need_file("traces", &self.inputs.traces, false)?;
        }
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())));
        let rules = match &self.rules {
            Some(p) => RuleSet::from_toml(&read(p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => RuleSet::default(),
        };
        let registry = match &self.upgrade_events {
            Some(p) => EventRegistry::from_toml(&read(p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => EventRegistry::default(),
        };
        let findings = match (&self.inputs.findings, stages.rootcause) {
            (Some(p), true) => {
                ExternalFindings::from_json(&read(p)?).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            _ => ExternalFindings::default(),
        };
        let explorer = match (&self.explorer, stages.ingest) {
            (Some(settings), true) => {
                let key = settings.api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok()).unwrap_or_default();
                if key.is_empty() {
                    return Err(config_err(format!("explorer configured without an API key (set {API_KEY_ENV})")));
                }
                let mut cfg = ExplorerConfig::new(settings.base_url.clone(), key);
                if let Some(rps) = settings.requests_per_second {
                    if !rps.is_finite() || rps <= 0.0 {
                        return Err(config_err("explorer requests_per_second must be positive"));
                    }
                    cfg.requests_per_second = rps;
                }
                Some(cfg)
            }
            _ => None,
        };
        Ok(Resolved { rules, registry, findings, explorer, collection_date })
    }
}

/// Parsed auxiliary inputs produced by [`PipelineConfig::validate`].
#[derive(Debug)]
pub struct Resolved {
    pub rules: RuleSet,
    pub registry: EventRegistry,
    pub findings: ExternalFindings,
    pub explorer: Option<ExplorerConfig>,
    pub collection_date: Option<UnixSeconds>,
}

/// Counts for one stage. Stages that consume the previous stage's output have
/// `inputs` equal to that stage's `outputs`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: usize,
    pub outputs: usize,
    pub skipped: usize,
    pub errors: usize,
    pub wall_time_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Contracts eligible for tracing that have no upgrade evidence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub untraceable: Vec<Address>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Completed,
    Failed { stage: Stage, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage.as_str())
    }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

fn store_err(stage: Stage) -> impl Fn(StoreError) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

fn open_input(stage: Stage, path: &Path) -> Result<fs::File, PipelineError> {
    fs::File::open(path).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

fn read_transactions(stage: Stage, path: &Path, record: &mut StageRecord) -> Result<Vec<EtlTransactionRow>, PipelineError> {
    let out = read_etl_transactions(open_input(stage, path)?).map_err(|e| stage_err(stage)(e.to_string()))?;
    for e in &out.errors {
        log::warn!("{}: row {}: {}", path.display(), e.row, e.message);
    }
    if out.skipped > 0 {
        record.notes.push(format!("transactions: {} rows skipped", out.skipped));
    }
    Ok(out.rows)
}

/// Runs the enabled stages over the configured store and writes `manifest.json`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let resolved = config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| config_err(format!("worker pool: {e}")))?;
    let store = CorpusStore::open(&config.store).map_err(|e| config_err(format!("store: {e}")))?;
    let mut manifest =
        RunManifest { tool_version: TOOL_VERSION.to_string(), config: config.snapshot(), stages: Vec::new(), status: RunStatus::Completed };

    let mut failure = None;
    let mut last_stage = Stage::Ingest;
    for stage in Stage::ORDER.into_iter().filter(|&s| config.stages.enabled(s)) {
        last_stage = stage;
        let started = Instant::now();
        let mut record = StageRecord { stage: stage.as_str().to_string(), ..Default::default() };
        let result = pool.install(|| match stage {
            Stage::Ingest => ingest_stage(config, &resolved, &store, &mut record),
            Stage::Normalize => normalize_stage(&store, &mut record),
            Stage::Detect => detect_stage(&resolved, &store, &mut record),
            Stage::Trace => trace_stage(config, &resolved, &store, &mut record),
            Stage::Rootcause => rootcause_stage(&resolved, &store, &mut record),
            Stage::Activity => activity_stage(config, &store, &mut record),
        });
        let result = result.and_then(|()| store.flush().map(|_| ()).map_err(store_err(stage)));
        record.wall_time_ms = started.elapsed().as_secs_f64() * 1000.0;
        log::info!(
            "{stage}: inputs={} outputs={} skipped={} errors={}",
            record.inputs,
            record.outputs,
            record.skipped,
            record.errors
        );
        manifest.stages.push(record);
        if let Err(e) = result {
            let message = match &e {
                PipelineError::Stage { message, .. } => message.clone(),
                other => other.to_string(),
            };
            manifest.status = RunStatus::Failed { stage, message };
            failure = Some(e);
            break;
        }
    }

    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    store.write_file(MANIFEST_FILE, &bytes).map_err(|e| PipelineError::Stage {
        stage: last_stage,
        message: format!("writing manifest: {e}"),
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn ingest_stage(config: &PipelineConfig, resolved: &Resolved, store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let stage = Stage::Ingest;
    let path = config.inputs.contracts.as_ref().expect("validated");
    let csv = read_etl_contracts(open_input(stage, path)?).map_err(|e| stage_err(stage)(e.to_string()))?;
    for e in &csv.errors {
        log::warn!("{}: row {}: {}", path.display(), e.row, e.message);
    }
    record.inputs = csv.input_rows();
    record.skipped = csv.skipped;
    record.errors = csv.errors.len();
    let mut records = csv.rows;

    if let Some(tx_path) = &config.inputs.transactions {
        let txs = read_transactions(stage, tx_path, record)?;
        assign_creators(&mut records, &txs);
        let counts = count_received(&txs);
        for r in records.iter_mut().filter(|r| r.tx_received == 0) {
            r.tx_received = counts.get(&r.address).copied().unwrap_or(0);
        }
    }

    let client = resolved.explorer.clone().map(ExplorerClient::with_defaults);
    for r in &mut records {
        let local = match &config.inputs.sources {
            Some(dir) => load_local_source(dir, r.address).map_err(|e| stage_err(stage)(e.to_string()))?,
            None => LocalSource::Missing,
        };
        match local {
            LocalSource::Verified { bundle, compiler_version } => attach_source(r, bundle, compiler_version),
            LocalSource::NotVerified => {}
            LocalSource::Missing => {
                if let Some(client) = &client {
                    match client.fetch_source(r.address) {
                        Ok(fetched) => attach_source(r, fetched.bundle, fetched.compiler_version),
                        Err(FetchError::NotVerified(_)) => {}
                        Err(e) => {
                            log::warn!("{}: {e}", r.address);
                            record.errors += 1;
                        }
                    }
                }
            }
        }
    }

    let verified = records.iter().filter(|r| r.verified).count();
    record.notes.push(format!("verified={verified} unverified={}", records.len() - verified));
    record.outputs = records.len();
    store.replace_records(records).map_err(store_err(stage))?;
    Ok(())
}

fn normalize_stage(store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let records = store.query_records(&Default::default());
    record.inputs = records.len();
    let verified: Vec<_> = records.into_iter().filter(|r| r.verified).collect();
    record.skipped = record.inputs - verified.len();
    let results: Vec<_> = verified
        .par_iter()
        .map(|r| {
            let bundle = r.source.as_ref().expect("verified records carry source");
            (r.address, normalize_bundle(r.address, r.deployed_at, bundle))
        })
        .collect();
    let mut sources = Vec::new();
    for (address, result) in results {
        match result {
            Ok(source) => {
                for w in &source.warnings {
                    log::warn!("{address}: {w}");
                }
                sources.push(source);
            }
            Err(e) => {
                log::warn!("{address}: {e}");
                record.errors += 1;
            }
        }
    }
    let groups = group_duplicates(&sources);
    record.outputs = sources.len();
    record.notes.push(format!("groups={} contracts={} duplicates={}", groups.len(), sources.len(), sources.len() - groups.len()));
    store.replace_normalized(sources);
    Ok(())
}

fn detect_stage(resolved: &Resolved, store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let sources = store.normalized();
    record.inputs = sources.len();
    let groups = group_duplicates(&sources);
    let by_address: HashMap<Address, &NormalizedSource> = sources.iter().map(|s| (s.address, s)).collect();
    let verdicts: Vec<PatternVerdict> = groups
        .par_iter()
        .flat_map_iter(|g| {
            let verdict = classify_with(by_address[&g.representative], &resolved.rules);
            g.members.iter().map(move |&m| verdict.for_member(m)).collect::<Vec<_>>()
        })
        .collect();
    let summary = prevalence_summary(&verdicts);
    record.outputs = verdicts.len();
    record.notes.push(format!(
        "proxies={} upgradeable={} upgradeable_share={}",
        summary.proxies,
        summary.upgradeable,
        summary.upgradeable_proportion.map_or("n/a".into(), |p| format!("{p:.4}"))
    ));
    store.replace_verdicts(verdicts);
    Ok(())
}

fn trace_stage(config: &PipelineConfig, resolved: &Resolved, store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let stage = Stage::Trace;
    let collection_date = resolved.collection_date.expect("validated");
    let verdicts = store.verdicts();
    record.inputs = verdicts.len();
    let mut candidates: Vec<Address> = verdicts.iter().filter(|v| v.is_upgradeable).map(|v| v.address).collect();
    if let Some(sample) = config.sample {
        candidates = sample_proxies(&candidates, sample.n, sample.seed);
        record.notes.push(format!("sampled {} of the upgradeable contracts (seed {})", candidates.len(), sample.seed));
    }
    let candidate_set: BTreeSet<Address> = candidates.iter().copied().collect();

    let mut events: BTreeMap<Address, Vec<UpgradeEvent>> = BTreeMap::new();
    if let Some(path) = &config.inputs.logs {
        let logs = read_etl_logs(open_input(stage, path)?).map_err(|e| stage_err(stage)(e.to_string()))?;
        if logs.skipped > 0 {
            record.notes.push(format!("logs: {} rows skipped", logs.skipped));
        }
        let outcome = extract_upgrade_events(&logs.rows, &candidate_set, &resolved.registry);
        for e in &outcome.errors {
            log::warn!("{} block {} log {}: {}", e.proxy_address, e.block_number, e.log_index, e.message);
        }
        if !outcome.errors.is_empty() {
            record.notes.push(format!("undecodable upgrade events: {}", outcome.errors.len()));
        }
        for e in outcome.events {
            events.entry(e.proxy_address).or_default().push(e);
        }
    }
    if let Some(path) = &config.inputs.traces {
        let traces = read_etl_traces(open_input(stage, path)?).map_err(|e| stage_err(stage)(e.to_string()))?;
        if traces.skipped > 0 {
            record.notes.push(format!("traces: {} rows skipped", traces.skipped));
        }
        for &proxy in &candidates {
            let inferred = extract_delegate_targets(&traces.rows, proxy);
            if !inferred.is_empty() {
                events.entry(proxy).or_default().extend(inferred);
            }
        }
    }

    let mut received: BTreeMap<Address, Vec<UnixSeconds>> = BTreeMap::new();
    let windowed = match &config.inputs.transactions {
        Some(path) => {
            for tx in read_transactions(stage, path, record)? {
                if let Some(to) = tx.to_address.filter(|a| candidate_set.contains(a)) {
                    received.entry(to).or_default().push(tx.block_timestamp);
                }
            }
            true
        }
        None => false,
    };
    let fallback_counts: BTreeMap<Address, u64> =
        store.query_records(&Default::default()).iter().map(|r| (r.address, r.tx_received)).collect();

    let mut lineages: Vec<VersionLineage> = Vec::new();
    for &proxy in &candidates {
        let Some(proxy_events) = events.get(&proxy) else {
            record.untraceable.push(proxy);
            continue;
        };
        match build_lineage(proxy_events, collection_date, &fallback_counts) {
            Ok(mut lineage) => {
                if windowed {
                    lineage.assign_window_counts(received.get(&proxy).map_or(&[][..], Vec::as_slice));
                }
                lineages.push(lineage);
            }
            Err(e) => {
                log::warn!("{proxy}: {e}");
                record.errors += 1;
            }
        }
    }
    record.skipped = record.inputs - lineages.len() - record.errors;
    record.outputs = lineages.len();
    let rate = upgrade_rate(&lineages);
    record.notes.push(format!(
        "candidates={} untraceable={} upgraded={} of {} versions={}",
        candidates.len(),
        record.untraceable.len(),
        rate.upgraded,
        rate.total,
        rate.versions
    ));
    store.replace_lineages(lineages);
    Ok(())
}

fn gas_for(store: &CorpusStore, source: &NormalizedSource) -> Option<GasEstimate> {
    let code = store.get_record(&source.address).map(|r| r.bytecode).unwrap_or_default();
    let trimmed = code.trim_start_matches("0x");
    if trimmed.is_empty() {
        return Some(estimate_from_source_length(source.canonical_text.len()));
    }
    match estimate_from_bytecode(&code) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("{}: bytecode unusable for gas: {e}", source.address);
            None
        }
    }
}

fn rootcause_stage(resolved: &Resolved, store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let stage = Stage::Rootcause;
    let lineages = store.lineages();
    record.inputs = lineages.len();
    let detectors = DetectorSet::builtin().with_external(resolved.findings.clone());

    let mut pairs: Vec<(UpgradeId, Address, Address)> = Vec::new();
    for lineage in &lineages {
        if !lineage.was_upgraded() {
            record.skipped += 1;
            continue;
        }
        let missing: Vec<Address> = lineage
            .versions
            .iter()
            .map(|v| v.implementation)
            .filter(|a| store.get_normalized(a).is_none())
            .collect();
        if !missing.is_empty() {
            log::warn!("{}: no verified source for implementations {missing:?}", lineage.proxy_address);
            record.errors += 1;
            continue;
        }
        for w in lineage.versions.windows(2) {
            let id = UpgradeId {
                proxy_address: lineage.proxy_address,
                from_version: w[0].version_index,
                to_version: w[1].version_index,
            };
            pairs.push((id, w[0].implementation, w[1].implementation));
        }
    }

    let implementations: BTreeSet<Address> = pairs.iter().flat_map(|&(_, a, b)| [a, b]).collect();
    let analyzed: Vec<(Address, NormalizedSource, Vec<VulnerabilityFinding>, Option<GasEstimate>)> = implementations
        .into_par_iter()
        .map(|a| {
            let source = store.get_normalized(&a).expect("checked above");
            let findings = run_detectors(&source, &detectors).map_err(|e| e.to_string())?;
            let gas = gas_for(store, &source);
            Ok((a, source, findings, gas))
        })
        .collect::<Result<_, String>>()
        .map_err(stage_err(stage))?;
    let by_address: HashMap<Address, (&NormalizedSource, &[VulnerabilityFinding], Option<GasEstimate>)> =
        analyzed.iter().map(|(a, s, f, g)| (*a, (s, f.as_slice(), *g))).collect();

    let reports: Vec<RootCauseReport> = pairs
        .par_iter()
        .map(|&(id, a, b)| {
            let (s1, f1, g1) = by_address[&a];
            let (s2, f2, g2) = by_address[&b];
            classify_root_causes(id, s1, s2, f1, f2, g1, g2)
        })
        .collect();
    record.outputs = reports.len();
    let histogram = crate::rootcause::label_histogram(&reports);
    record.notes.push(histogram.iter().map(|(c, n)| format!("{c}={n}")).collect::<Vec<_>>().join(" "));
    store.replace_reports(reports);
    Ok(())
}

fn activity_stage(config: &PipelineConfig, store: &CorpusStore, record: &mut StageRecord) -> Result<(), PipelineError> {
    let lineages = store.lineages();
    record.inputs = lineages.len();
    let report = analyze_activity(&lineages, config.log_transform);
    record.outputs = report.n_observations;
    record.skipped = report.excluded_zero_lifetime;
    record.errors = usize::from(report.lifetime_fit_error.is_some()) + usize::from(report.version_fit_error.is_some());
    record.notes.push(report.impact.summary.clone());
    store.set_activity(report);
    Ok(())
}
