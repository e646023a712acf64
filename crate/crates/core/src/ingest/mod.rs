//! Contract metadata and sources from CSV exports, local source trees and an
//! explorer API.

mod etl;
mod explorer;

pub use etl::{
    assign_creators, count_received, read_etl_contracts, read_etl_logs, read_etl_traces, read_etl_transactions,
    CsvOutcome, EtlLogRow, EtlTraceRow, EtlTransactionRow, RowError,
};
pub use explorer::{
    decode_source_code, parse_source_response, Clock, ExplorerClient, ExplorerConfig, FetchError, FetchedSource,
    HttpTransport, SystemClock, TransportError, UreqTransport, API_KEY_ENV, DEFAULT_MAX_ATTEMPTS,
    DEFAULT_REQUESTS_PER_SECOND,
};

use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::types::{Address, ContractRecord, SourceBundle, SourceFile, UnixSeconds};

/// A 32-byte EVM word: hashes, topics, storage slots.
pub type Word = [u8; 32];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("CSV is missing required column `{0}`")]
    MissingColumn(String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("source for {address}: {message}")]
    Source { address: Address, message: String },
}

/// Accepts integer seconds, `YYYY-MM-DD HH:MM:SS[ UTC]`, RFC 3339, or a bare date (midnight UTC).
pub fn parse_timestamp(text: &str) -> Option<UnixSeconds> {
    let text = text.trim();
    if let Ok(n) = text.parse::<i64>() {
        return Some(n);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    let bare = text.strip_suffix("UTC").map(str::trim_end).unwrap_or(text);
    for format in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(bare, format) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(bare, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// `0x`-prefixed even-length hex. `0x` alone is the empty byte string.
pub fn parse_hex_bytes(text: &str) -> Option<Vec<u8>> {
    let digits = text.trim().strip_prefix("0x").or_else(|| text.trim().strip_prefix("0X")).unwrap_or(text.trim());
    hex::decode(digits).ok()
}

pub fn parse_word(text: &str) -> Option<Word> {
    let bytes = parse_hex_bytes(text)?;
    bytes.try_into().ok()
}

/// The version constraint of the first `pragma solidity` directive.
pub fn solidity_version_of(bundle: &SourceBundle) -> String {
    bundle
        .files
        .iter()
        .flat_map(|f| f.content.lines())
        .find_map(|line| {
            let rest = line.trim().strip_prefix("pragma")?.trim_start().strip_prefix("solidity")?;
            Some(rest.trim().trim_end_matches(';').trim().to_string())
        })
        .unwrap_or_default()
}

/// Source found on disk for one address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalSource {
    Verified { bundle: SourceBundle, compiler_version: String },
    NotVerified,
    Missing,
}

/// Looks up `<dir>/<address>/**/*.sol` or `<dir>/<address>.json` (a saved explorer response).
pub fn load_local_source(dir: &Path, address: Address) -> Result<LocalSource, IngestError> {
    let name = address.to_string();
    let tree = dir.join(&name);
    if tree.is_dir() {
        let mut paths = Vec::new();
        collect_sol_files(&tree, &mut paths)?;
        paths.sort();
        let files = paths
            .iter()
            .map(|p| {
                let content = std::fs::read_to_string(p).map_err(|source| IngestError::Io { path: p.clone(), source })?;
                let rel = p.strip_prefix(&tree).unwrap_or(p).to_string_lossy().replace('\\', "/");
                Ok(SourceFile { path: rel, content })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        if files.is_empty() {
            return Ok(LocalSource::NotVerified);
        }
        return Ok(LocalSource::Verified {
            bundle: SourceBundle { files, entry_contract: None },
            compiler_version: String::new(),
        });
    }
    let json = dir.join(format!("{name}.json"));
    if json.is_file() {
        let body = std::fs::read_to_string(&json).map_err(|source| IngestError::Io { path: json.clone(), source })?;
        return match parse_source_response(address, &body) {
            Ok(fetched) => Ok(LocalSource::Verified { bundle: fetched.bundle, compiler_version: fetched.compiler_version }),
            Err(FetchError::NotVerified(_)) => Ok(LocalSource::NotVerified),
            Err(e) => Err(IngestError::Source { address, message: e.to_string() }),
        };
    }
    Ok(LocalSource::Missing)
}

fn collect_sol_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IngestError> {
    let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    for entry in entries {
        let path = entry.map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?.path();
        if path.is_dir() {
            collect_sol_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "sol") {
            out.push(path);
        }
    }
    Ok(())
}

/// Attaches a verified source to a record, filling versions the export lacked.
pub fn attach_source(record: &mut ContractRecord, bundle: SourceBundle, compiler_version: String) {
    if record.solidity_version.is_empty() {
        record.solidity_version = solidity_version_of(&bundle);
    }
    if record.compiler_version.is_empty() {
        record.compiler_version = compiler_version;
    }
    record.source = Some(bundle);
    record.verified = true;
}
