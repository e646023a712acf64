//! Version histories of upgradeable contracts and per-version lifetimes.
//!
//! A version becomes active at the timestamp of the upgrade that installed it
//! and stays active until the next upgrade, or until the collection date for
//! the latest version. Lifetimes therefore telescope: they sum to the
//! collection date minus the first activation.

mod registry;

pub use registry::{
    decode_diamond_cut, encode_diamond_cut, word_address, ArgLayout, EventRegistry, EventSpec, RegistryError,
    DIAMOND_CUT_SIGNATURE, UPGRADED_SIGNATURE,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{EtlLogRow, EtlTraceRow};
use crate::types::{Address, UnixSeconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    SignatureTopic,
    DelegatecallTarget,
    DiamondCut,
    Manual,
}

impl Provenance {
    /// Explicit declarations, as opposed to targets inferred from traces.
    pub fn is_declared(self) -> bool {
        self != Provenance::DelegatecallTarget
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpgradeEvent {
    pub proxy_address: Address,
    pub new_implementation: Address,
    pub block_number: u64,
    pub timestamp: UnixSeconds,
    /// Position within the block; orders same-block upgrades.
    pub log_index: u64,
    pub provenance: Provenance,
}

impl UpgradeEvent {
    fn sort_key(&self) -> (u64, UnixSeconds, u64, Provenance, Address) {
        (self.block_number, self.timestamp, self.log_index, self.provenance, self.new_implementation)
    }
}

/// A log that matched a registered topic but could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventError {
    pub proxy_address: Address,
    pub block_number: u64,
    pub log_index: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractOutcome {
    pub events: Vec<UpgradeEvent>,
    pub errors: Vec<EventError>,
}

/// Decodes registered upgrade events emitted by `proxies`, sorted by block.
pub fn extract_upgrade_events(
    logs: &[EtlLogRow],
    proxies: &BTreeSet<Address>,
    registry: &EventRegistry,
) -> ExtractOutcome {
    let mut outcome = ExtractOutcome::default();
    for log in logs.iter().filter(|l| proxies.contains(&l.address)) {
        let Some(spec) = log.topics.first().and_then(|t| registry.lookup(t)) else { continue };
        let decoded = match spec.new_impl_arg {
            ArgLayout::Topic1 => log
                .topics
                .get(1)
                .ok_or_else(|| "missing indexed argument".to_string())
                .and_then(|t| word_address(t).ok_or_else(|| "topic 1 is not an address".to_string()))
                .map(Some),
            ArgLayout::Data0 => log
                .data
                .get(..32)
                .and_then(word_address)
                .ok_or_else(|| "data word 0 is not an address".to_string())
                .map(Some),
            ArgLayout::DiamondCut => decode_diamond_cut(&log.data),
        };
        let provenance = match spec.new_impl_arg {
            ArgLayout::DiamondCut => Provenance::DiamondCut,
            _ => Provenance::SignatureTopic,
        };
        match decoded {
            Ok(Some(new_implementation)) => outcome.events.push(UpgradeEvent {
                proxy_address: log.address,
                new_implementation,
                block_number: log.block_number,
                timestamp: log.block_timestamp,
                log_index: log.log_index,
                provenance,
            }),
            // A cut that only removes selectors installs nothing.
            Ok(None) => {}
            Err(message) => outcome.errors.push(EventError {
                proxy_address: log.address,
                block_number: log.block_number,
                log_index: log.log_index,
                message: format!("{}: {message}", spec.signature),
            }),
        }
    }
    outcome.events.sort_by_key(UpgradeEvent::sort_key);
    outcome
}

/// Delegatecall targets of `proxy` as version changes: each run of identical
/// consecutive targets becomes one event at the run's first call.
pub fn extract_delegate_targets(traces: &[EtlTraceRow], proxy: Address) -> Vec<UpgradeEvent> {
    let mut calls: Vec<&EtlTraceRow> = traces
        .iter()
        .filter(|t| t.from_address == proxy && t.call_type == "delegatecall" && t.to_address.is_some())
        .collect();
    calls.sort_by_key(|t| (t.block_number, t.block_timestamp, t.ordinal));
    let mut events: Vec<UpgradeEvent> = Vec::new();
    for call in calls {
        let target = call.to_address.expect("filtered");
        if events.last().is_some_and(|e| e.new_implementation == target) {
            continue;
        }
        events.push(UpgradeEvent {
            proxy_address: proxy,
            new_implementation: target,
            block_number: call.block_number,
            timestamp: call.block_timestamp,
            log_index: call.ordinal as u64,
            provenance: Provenance::DelegatecallTarget,
        });
    }
    events
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Version {
    /// Starts at 1.
    pub version_index: usize,
    pub implementation: Address,
    pub deployed_at: UnixSeconds,
    pub lifetime_seconds: i64,
    pub tx_received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionLineage {
    pub proxy_address: Address,
    pub versions: Vec<Version>,
    pub collection_date: UnixSeconds,
}

impl VersionLineage {
    pub fn was_upgraded(&self) -> bool {
        self.versions.len() >= 2
    }

    pub fn total_lifetime(&self) -> i64 {
        self.versions.iter().map(|v| v.lifetime_seconds).sum()
    }

    /// Counts `timestamps` into each version's active window. The final
    /// window includes the collection date itself.
    pub fn assign_window_counts(&mut self, timestamps: &[UnixSeconds]) {
        let mut sorted = timestamps.to_vec();
        sorted.sort_unstable();
        let n = self.versions.len();
        for i in 0..n {
            let start = self.versions[i].deployed_at;
            let lo = sorted.partition_point(|&t| t < start);
            let hi = if i + 1 < n {
                sorted.partition_point(|&t| t < self.versions[i + 1].deployed_at)
            } else {
                sorted.partition_point(|&t| t <= self.collection_date)
            };
            self.versions[i].tx_received = hi.saturating_sub(lo) as u64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineageError {
    #[error("no upgrade events")]
    NoEvents,
    #[error("events mix proxies {0} and {1}")]
    MixedProxies(Address, Address),
    #[error("{proxy}: collection date {collection_date} precedes last upgrade at {last_event}")]
    CollectionBeforeLastEvent { proxy: Address, collection_date: UnixSeconds, last_event: UnixSeconds },
}

/// Trace-inferred implementations that no declared event mentions.
pub fn conflicting_trace_targets(events: &[UpgradeEvent]) -> BTreeSet<Address> {
    let declared: BTreeSet<Address> =
        events.iter().filter(|e| e.provenance.is_declared()).map(|e| e.new_implementation).collect();
    if declared.is_empty() {
        return BTreeSet::new();
    }
    events
        .iter()
        .filter(|e| !e.provenance.is_declared() && !declared.contains(&e.new_implementation))
        .map(|e| e.new_implementation)
        .collect()
}

/// Builds one proxy's lineage.
///
/// Declared events take precedence: when any exist, trace-inferred events are
/// dropped. Events are deduplicated on (implementation, timestamp), ordered,
/// and consecutive repeats of one implementation collapse into the earliest.
pub fn build_lineage(
    events: &[UpgradeEvent],
    collection_date: UnixSeconds,
    tx_counts: &BTreeMap<Address, u64>,
) -> Result<VersionLineage, LineageError> {
    let first = events.first().ok_or(LineageError::NoEvents)?;
    let proxy = first.proxy_address;
    if let Some(other) = events.iter().find(|e| e.proxy_address != proxy) {
        return Err(LineageError::MixedProxies(proxy, other.proxy_address));
    }
    let conflicts = conflicting_trace_targets(events);
    if !conflicts.is_empty() {
        log::warn!("{proxy}: trace targets {conflicts:?} disagree with declared upgrade events; using events");
    }
    let has_declared = events.iter().any(|e| e.provenance.is_declared());
    let mut kept: Vec<&UpgradeEvent> =
        events.iter().filter(|e| !has_declared || e.provenance.is_declared()).collect();
    kept.sort_by_key(|e| e.sort_key());
    let mut seen = BTreeSet::new();
    kept.retain(|e| seen.insert((e.new_implementation, e.timestamp)));

    let mut activations: Vec<(Address, UnixSeconds)> = Vec::new();
    for e in kept {
        if activations.last().is_some_and(|&(impl_, _)| impl_ == e.new_implementation) {
            continue;
        }
        activations.push((e.new_implementation, e.timestamp));
    }
    let last_event = activations.iter().map(|&(_, t)| t).max().expect("at least one activation");
    if collection_date < last_event {
        return Err(LineageError::CollectionBeforeLastEvent { proxy, collection_date, last_event });
    }
    let versions = activations
        .iter()
        .enumerate()
        .map(|(i, &(implementation, deployed_at))| {
            let end = activations.get(i + 1).map_or(collection_date, |&(_, t)| t);
            Version {
                version_index: i + 1,
                implementation,
                deployed_at,
                lifetime_seconds: end - deployed_at,
                tx_received: tx_counts.get(&implementation).copied().unwrap_or(0),
            }
        })
        .collect();
    Ok(VersionLineage { proxy_address: proxy, versions, collection_date })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpgradeRate {
    pub upgraded: usize,
    pub total: usize,
    /// `upgraded / total`; zero when there are no lineages.
    pub proportion: f64,
    /// Versions over all lineages.
    pub versions: usize,
    /// Versions over upgraded lineages only.
    pub upgraded_versions: usize,
}

pub fn upgrade_rate(lineages: &[VersionLineage]) -> UpgradeRate {
    let upgraded = lineages.iter().filter(|l| l.was_upgraded()).count();
    let total = lineages.len();
    UpgradeRate {
        upgraded,
        total,
        proportion: if total == 0 { 0.0 } else { upgraded as f64 / total as f64 },
        versions: lineages.iter().map(|l| l.versions.len()).sum(),
        upgraded_versions: lineages.iter().filter(|l| l.was_upgraded()).map(|l| l.versions.len()).sum(),
    }
}

/// A seeded uniform sample of `n` candidates without replacement, returned in
/// address order. Candidates are sorted first so the sample does not depend
/// on input order.
pub fn sample_proxies(candidates: &[Address], n: usize, seed: u64) -> Vec<Address> {
    let mut sorted: Vec<Address> = candidates.to_vec();
    sorted.sort();
    sorted.dedup();
    if n >= sorted.len() {
        return sorted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, sorted.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sorted[i]).collect()
}
