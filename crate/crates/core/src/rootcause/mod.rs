//! Why an upgrade happened: bug fix, new feature, gas optimization, or other.
//!
//! Consecutive versions are diffed line by line; vulnerability findings are
//! compared by fingerprint, and diff lines count as security-related when they
//! overlap a finding span.

pub mod detectors;
pub mod diff;
pub mod gas;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use detectors::{
    run_detectors, Detector, DetectorSet, ExternalFinding, ExternalFindings, FindingsError, LineSpan,
    VulnerabilityFinding,
};
pub use diff::{diff_texts, diff_versions, DiffLine, VersionDiff};
pub use gas::{estimate_deploy_gas, estimate_from_bytecode, estimate_from_source_length, GasBasis, GasEstimate, GasError};

use crate::normalize::NormalizedSource;
use crate::types::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RootCause {
    BugFix,
    NewFeature,
    GasOptimization,
    Other,
}

impl std::fmt::Display for RootCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RootCause::BugFix => "BugFix",
            RootCause::NewFeature => "NewFeature",
            RootCause::GasOptimization => "GasOptimization",
            RootCause::Other => "Other",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UpgradeId {
    pub proxy_address: Address,
    pub from_version: usize,
    pub to_version: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasComparison {
    pub old: GasEstimate,
    pub new: GasEstimate,
}

impl GasComparison {
    pub fn decreased(&self) -> bool {
        self.new.deploy_gas < self.old.deploy_gas
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseReport {
    pub proxy_address: Address,
    pub from_version: usize,
    pub to_version: usize,
    /// In the order BugFix, NewFeature, GasOptimization, Other.
    pub labels: Vec<RootCause>,
    pub bug_fixes: Vec<VulnerabilityFinding>,
    pub new_features: Vec<DiffLine>,
    pub other: Vec<DiffLine>,
    pub gas_notes: Option<GasComparison>,
    pub gas_scope: String,
}

impl RootCauseReport {
    pub fn id(&self) -> UpgradeId {
        UpgradeId { proxy_address: self.proxy_address, from_version: self.from_version, to_version: self.to_version }
    }

    pub fn has(&self, cause: RootCause) -> bool {
        self.labels.contains(&cause)
    }
}

fn covered(findings: &[VulnerabilityFinding], line: usize) -> bool {
    findings.iter().any(|f| f.span.contains(line))
}

/// Labels one upgrade from `v1` to `v2`.
///
/// A finding of v1 whose fingerprint is absent from v2 is a resolved bug. An
/// added line is a feature unless it lies in a v2 finding or its hunk removes a
/// line lying in a v1 finding; removed lines are judged symmetrically. Gas only
/// counts when both estimates exist.
pub fn classify_root_causes(
    id: UpgradeId,
    v1: &NormalizedSource,
    v2: &NormalizedSource,
    findings1: &[VulnerabilityFinding],
    findings2: &[VulnerabilityFinding],
    gas1: Option<GasEstimate>,
    gas2: Option<GasEstimate>,
) -> RootCauseReport {
    let diff = diff_versions(v1, v2);
    let (removed_keys, added_keys) = diff.hunk_keys(v1.line_count(), v2.line_count());

    let fixed_hunks: HashSet<usize> = diff
        .removed_lines
        .iter()
        .zip(&removed_keys)
        .filter(|(l, _)| covered(findings1, l.index))
        .map(|(_, &k)| k)
        .collect();
    let flawed_hunks: HashSet<usize> = diff
        .added_lines
        .iter()
        .zip(&added_keys)
        .filter(|(l, _)| covered(findings2, l.index))
        .map(|(_, &k)| k)
        .collect();

    let still_present: BTreeSet<&str> = findings2.iter().map(|f| f.fingerprint.as_str()).collect();
    let mut bug_fixes: Vec<VulnerabilityFinding> =
        findings1.iter().filter(|f| !still_present.contains(f.fingerprint.as_str())).cloned().collect();
    bug_fixes.dedup_by(|a, b| a.fingerprint == b.fingerprint);

    let new_features: Vec<DiffLine> = diff
        .added_lines
        .iter()
        .zip(&added_keys)
        .filter(|(l, k)| !covered(findings2, l.index) && !fixed_hunks.contains(k))
        .map(|(l, _)| l.clone())
        .collect();
    let other: Vec<DiffLine> = diff
        .removed_lines
        .iter()
        .zip(&removed_keys)
        .filter(|(l, k)| !covered(findings1, l.index) && !flawed_hunks.contains(k))
        .map(|(l, _)| l.clone())
        .collect();

    let gas_notes = gas1.zip(gas2).map(|(old, new)| GasComparison { old, new });
    let gas_decreased = gas_notes.is_some_and(|g| g.decreased());

    let mut labels = Vec::new();
    if !bug_fixes.is_empty() {
        labels.push(RootCause::BugFix);
    }
    if !new_features.is_empty() {
        labels.push(RootCause::NewFeature);
    }
    if gas_decreased {
        labels.push(RootCause::GasOptimization);
    }
    if !other.is_empty() {
        labels.push(RootCause::Other);
    }

    RootCauseReport {
        proxy_address: id.proxy_address,
        from_version: id.from_version,
        to_version: id.to_version,
        labels,
        bug_fixes,
        new_features,
        other,
        gas_notes,
        gas_scope: gas::DEPLOYMENT_ONLY_NOTE.to_string(),
    }
}

/// Histogram of labels over reports, in label order.
pub fn label_histogram(reports: &[RootCauseReport]) -> Vec<(RootCause, usize)> {
    [RootCause::BugFix, RootCause::NewFeature, RootCause::GasOptimization, RootCause::Other]
        .into_iter()
        .map(|c| (c, reports.iter().filter(|r| r.has(c)).count()))
        .collect()
}
