//! On-disk corpus shared by all stages.
//!
//! Each entity type lives in its own newline-delimited JSON file under the
//! store directory, one object per line, sorted by primary key. A flush
//! rewrites only the files whose entities changed, through a temporary file
//! and a rename, so readers never observe a half-written file and identical
//! content yields identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::activity::ActivityReport;
use crate::detect::PatternVerdict;
use crate::lineage::VersionLineage;
use crate::normalize::NormalizedSource;
use crate::rootcause::{RootCauseReport, UpgradeId};
use crate::types::{Address, ContractRecord, UnixSeconds, UpgradeKind};

pub const CONTRACTS_FILE: &str = "contracts.ndjson";
pub const NORMALIZED_FILE: &str = "normalized.ndjson";
pub const VERDICTS_FILE: &str = "verdicts.ndjson";
pub const LINEAGES_FILE: &str = "lineages.ndjson";
pub const REPORTS_FILE: &str = "reports.ndjson";
pub const ACTIVITY_FILE: &str = "activity.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {source}")]
    Decode { path: PathBuf, line: usize, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Entity files tracked for dirtiness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Entity {
    Contracts,
    Normalized,
    Verdicts,
    Lineages,
    Reports,
    Activity,
}

impl Entity {
    pub fn file_name(self) -> &'static str {
        match self {
            Entity::Contracts => CONTRACTS_FILE,
            Entity::Normalized => NORMALIZED_FILE,
            Entity::Verdicts => VERDICTS_FILE,
            Entity::Lineages => LINEAGES_FILE,
            Entity::Reports => REPORTS_FILE,
            Entity::Activity => ACTIVITY_FILE,
        }
    }
}

/// Predicate over stored records; unset fields match everything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordFilter {
    pub verified: Option<bool>,
    /// Requires a verdict of this kind.
    pub kind: Option<UpgradeKind>,
    /// Inclusive lower bound on `deployed_at`.
    pub deployed_from: Option<UnixSeconds>,
    /// Exclusive upper bound on `deployed_at`.
    pub deployed_until: Option<UnixSeconds>,
}

impl RecordFilter {
    pub fn verified() -> Self {
        RecordFilter { verified: Some(true), ..Default::default() }
    }
}

/// Validates the invariants `put_record` enforces.
pub fn validate_record(record: &ContractRecord) -> Result<(), StoreError> {
    if record.verified != record.source.is_some() {
        return Err(StoreError::Validation(format!(
            "{}: verified={} but source {}",
            record.address,
            record.verified,
            if record.source.is_some() { "present" } else { "absent" }
        )));
    }
    if let Some(bundle) = &record.source {
        bundle.validate().map_err(|e| StoreError::Validation(format!("{}: {e}", record.address)))?;
    }
    Ok(())
}

/// Concurrent reads, serialized writes.
#[derive(Debug)]
pub struct CorpusStore {
    dir: PathBuf,
    contracts: RwLock<BTreeMap<Address, ContractRecord>>,
    normalized: RwLock<BTreeMap<Address, NormalizedSource>>,
    verdicts: RwLock<BTreeMap<Address, PatternVerdict>>,
    lineages: RwLock<BTreeMap<Address, VersionLineage>>,
    reports: RwLock<BTreeMap<UpgradeId, RootCauseReport>>,
    activity: RwLock<Option<ActivityReport>>,
    dirty: Mutex<BTreeSet<Entity>>,
}

fn load_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| StoreError::Decode { path: path.to_path_buf(), line: i + 1, source }))
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_ndjson<'a, T: Serialize + 'a>(values: impl Iterator<Item = &'a T>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        serde_json::to_writer(&mut out, v).expect("store entities serialize");
        out.push(b'\n');
    }
    out
}

impl CorpusStore {
    /// Opens `dir`, creating it if needed, and loads any existing entity files.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let contracts: Vec<ContractRecord> = load_ndjson(&dir.join(CONTRACTS_FILE))?;
        let normalized: Vec<NormalizedSource> = load_ndjson(&dir.join(NORMALIZED_FILE))?;
        let verdicts: Vec<PatternVerdict> = load_ndjson(&dir.join(VERDICTS_FILE))?;
        let lineages: Vec<VersionLineage> = load_ndjson(&dir.join(LINEAGES_FILE))?;
        let reports: Vec<RootCauseReport> = load_ndjson(&dir.join(REPORTS_FILE))?;
        let activity_path = dir.join(ACTIVITY_FILE);
        let activity = if activity_path.exists() {
            let text = fs::read_to_string(&activity_path).map_err(io_err(&activity_path))?;
            Some(serde_json::from_str(&text).map_err(|source| StoreError::Decode { path: activity_path.clone(), line: 1, source })?)
        } else {
            None
        };
        Ok(CorpusStore {
            dir,
            contracts: RwLock::new(contracts.into_iter().map(|r| (r.address, r)).collect()),
            normalized: RwLock::new(normalized.into_iter().map(|n| (n.address, n)).collect()),
            verdicts: RwLock::new(verdicts.into_iter().map(|v| (v.address, v)).collect()),
            lineages: RwLock::new(lineages.into_iter().map(|l| (l.proxy_address, l)).collect()),
            reports: RwLock::new(reports.into_iter().map(|r| (r.id(), r)).collect()),
            activity: RwLock::new(activity),
            dirty: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn mark(&self, entity: Entity) {
        self.dirty.lock().expect("store lock").insert(entity);
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.read().expect("store lock").is_empty() && self.verdicts.read().expect("store lock").is_empty()
    }

    /// Stores or replaces the record keyed by its address.
    pub fn put_record(&self, record: ContractRecord) -> Result<Address, StoreError> {
        validate_record(&record)?;
        let key = record.address;
        self.contracts.write().expect("store lock").insert(key, record);
        self.mark(Entity::Contracts);
        Ok(key)
    }

    /// Replaces the whole contract set; every record is validated first.
    pub fn replace_records(&self, records: Vec<ContractRecord>) -> Result<(), StoreError> {
        for r in &records {
            validate_record(r)?;
        }
        *self.contracts.write().expect("store lock") = records.into_iter().map(|r| (r.address, r)).collect();
        self.mark(Entity::Contracts);
        Ok(())
    }

    /// Parses and stores one JSON record; malformed addresses are validation errors.
    pub fn put_record_json(&self, json: &str) -> Result<Address, StoreError> {
        let record: ContractRecord = serde_json::from_str(json).map_err(|e| StoreError::Validation(e.to_string()))?;
        self.put_record(record)
    }

    pub fn get_record(&self, address: &Address) -> Option<ContractRecord> {
        self.contracts.read().expect("store lock").get(address).cloned()
    }

    pub fn query_records(&self, filter: &RecordFilter) -> Vec<ContractRecord> {
        let verdicts = self.verdicts.read().expect("store lock");
        self.contracts
            .read()
            .expect("store lock")
            .values()
            .filter(|r| filter.verified.is_none_or(|v| r.verified == v))
            .filter(|r| filter.deployed_from.is_none_or(|t| r.deployed_at >= t))
            .filter(|r| filter.deployed_until.is_none_or(|t| r.deployed_at < t))
            .filter(|r| filter.kind.is_none_or(|k| verdicts.get(&r.address).is_some_and(|v| v.kind == k)))
            .cloned()
            .collect()
    }

    pub fn record_count(&self) -> usize {
        self.contracts.read().expect("store lock").len()
    }

    /// Replaces all normalized sources.
    pub fn replace_normalized(&self, sources: Vec<NormalizedSource>) {
        *self.normalized.write().expect("store lock") = sources.into_iter().map(|s| (s.address, s)).collect();
        self.mark(Entity::Normalized);
    }

    pub fn normalized(&self) -> Vec<NormalizedSource> {
        self.normalized.read().expect("store lock").values().cloned().collect()
    }

    pub fn get_normalized(&self, address: &Address) -> Option<NormalizedSource> {
        self.normalized.read().expect("store lock").get(address).cloned()
    }

    pub fn replace_verdicts(&self, verdicts: Vec<PatternVerdict>) {
        *self.verdicts.write().expect("store lock") = verdicts.into_iter().map(|v| (v.address, v)).collect();
        self.mark(Entity::Verdicts);
    }

    pub fn verdicts(&self) -> Vec<PatternVerdict> {
        self.verdicts.read().expect("store lock").values().cloned().collect()
    }

    pub fn replace_lineages(&self, lineages: Vec<VersionLineage>) {
        *self.lineages.write().expect("store lock") = lineages.into_iter().map(|l| (l.proxy_address, l)).collect();
        self.mark(Entity::Lineages);
    }

    pub fn lineages(&self) -> Vec<VersionLineage> {
        self.lineages.read().expect("store lock").values().cloned().collect()
    }

    pub fn replace_reports(&self, reports: Vec<RootCauseReport>) {
        *self.reports.write().expect("store lock") = reports.into_iter().map(|r| (r.id(), r)).collect();
        self.mark(Entity::Reports);
    }

    pub fn reports(&self) -> Vec<RootCauseReport> {
        self.reports.read().expect("store lock").values().cloned().collect()
    }

    pub fn set_activity(&self, report: ActivityReport) {
        *self.activity.write().expect("store lock") = Some(report);
        self.mark(Entity::Activity);
    }

    pub fn activity(&self) -> Option<ActivityReport> {
        self.activity.read().expect("store lock").clone()
    }

    /// Writes every changed entity file. Holding the dirty-set lock for the
    /// whole flush serializes concurrent flushes.
    pub fn flush(&self) -> Result<Vec<Entity>, StoreError> {
        let mut dirty = self.dirty.lock().expect("store lock");
        let written: Vec<Entity> = dirty.iter().copied().collect();
        for &entity in &written {
            let bytes = match entity {
                Entity::Contracts => to_ndjson(self.contracts.read().expect("store lock").values()),
                Entity::Normalized => to_ndjson(self.normalized.read().expect("store lock").values()),
                Entity::Verdicts => to_ndjson(self.verdicts.read().expect("store lock").values()),
                Entity::Lineages => to_ndjson(self.lineages.read().expect("store lock").values()),
                Entity::Reports => to_ndjson(self.reports.read().expect("store lock").values()),
                Entity::Activity => match &*self.activity.read().expect("store lock") {
                    Some(a) => {
                        let mut b = serde_json::to_vec_pretty(a).expect("activity serializes");
                        b.push(b'\n');
                        b
                    }
                    None => continue,
                },
            };
            write_atomic(&self.dir.join(entity.file_name()), &bytes)?;
        }
        dirty.clear();
        Ok(written)
    }

    /// Writes an auxiliary file (such as the run manifest) atomically.
    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        write_atomic(&self.dir.join(name), bytes)
    }
}
