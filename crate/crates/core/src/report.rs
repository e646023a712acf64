//! Corpus summary in table or JSON form.
//!
//! The JSON field names are a stable schema; `schema_version` changes when
//! they do.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::detect::{prevalence_summary, PrevalenceSummary};
use crate::lineage::{upgrade_rate, UpgradeRate};
use crate::rootcause::label_histogram;
use crate::store::CorpusStore;
use crate::types::UpgradeKind;

pub const SCHEMA_VERSION: u32 = 1;
pub const NO_DATA: &str = "no data";
pub const NOT_COMPUTED: &str = "not computed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityCoefficients {
    pub n: usize,
    pub excluded_zero_lifetime: usize,
    pub log_transform: bool,
    pub intercept: f64,
    pub lifetime_slope: f64,
    pub version_slope: Option<f64>,
    pub r_squared: f64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: u32,
    pub contracts: usize,
    pub verified: usize,
    pub prevalence: PrevalenceSummary,
    /// Absent until the trace stage has run.
    pub upgrade_rate: Option<UpgradeRate>,
    pub upgrades_analyzed: usize,
    pub root_causes: Vec<LabelCount>,
    /// Absent until the activity stage has produced a fit.
    pub activity: Option<ActivityCoefficients>,
}

/// Summarizes the store, or `None` when it holds no contracts or verdicts.
pub fn build_report(store: &CorpusStore) -> Option<CorpusReport> {
    if store.is_empty() {
        return None;
    }
    let records = store.query_records(&Default::default());
    let verdicts = store.verdicts();
    let lineages = store.lineages();
    let traced = store.dir().join(crate::store::LINEAGES_FILE).exists() || !lineages.is_empty();
    let reports = store.reports();
    let activity = store.activity().and_then(|a| {
        let fit = a.version_fit.as_ref().or(a.lifetime_fit.as_ref())?;
        Some(ActivityCoefficients {
            n: fit.n,
            excluded_zero_lifetime: a.excluded_zero_lifetime,
            log_transform: a.log_transform,
            intercept: fit.intercept,
            lifetime_slope: fit.lifetime_slope,
            version_slope: fit.version_slope,
            r_squared: fit.r_squared,
            summary: a.impact.summary.clone(),
        })
    });
    Some(CorpusReport {
        schema_version: SCHEMA_VERSION,
        contracts: records.len(),
        verified: records.iter().filter(|r| r.verified).count(),
        prevalence: prevalence_summary(&verdicts),
        upgrade_rate: traced.then(|| upgrade_rate(&lineages)),
        upgrades_analyzed: reports.len(),
        root_causes: label_histogram(&reports)
            .into_iter()
            .map(|(c, n)| LabelCount { label: c.to_string(), count: n })
            .collect(),
        activity,
    })
}

fn share(p: Option<f64>) -> String {
    p.map_or("n/a".into(), |p| format!("{:.1}%", p * 100.0))
}

pub fn render_table(report: Option<&CorpusReport>) -> String {
    let Some(r) = report else {
        return format!("{NO_DATA}\n");
    };
    let mut out = String::new();
    let p = &r.prevalence;
    let _ = writeln!(out, "contracts: {} ({} verified)", r.contracts, r.verified);
    let _ = writeln!(out, "\npattern prevalence ({} classified)", p.total);
    let _ = writeln!(out, "  {:<30} {:>6} {:>8}", "kind", "count", "share");
    for kind in UpgradeKind::ALL {
        let n = p.counts.get(&kind).copied().unwrap_or(0);
        let s = (p.total > 0).then(|| n as f64 / p.total as f64);
        let _ = writeln!(out, "  {:<30} {:>6} {:>8}", kind.as_str(), n, share(s));
    }
    let _ = writeln!(out, "  upgradeable: {} ({})", p.upgradeable, share(p.upgradeable_proportion));
    let _ = writeln!(out, "  proxies: {} (upgradeable share {})", p.proxies, share(p.proxy_upgradeable_proportion));

    let _ = writeln!(out, "\nupgrade rate");
    match &r.upgrade_rate {
        Some(u) => {
            let _ = writeln!(
                out,
                "  upgraded {} of {} traced ({:.2}), {} versions ({} in upgraded contracts)",
                u.upgraded, u.total, u.proportion, u.versions, u.upgraded_versions
            );
        }
        None => {
            let _ = writeln!(out, "  {NOT_COMPUTED}");
        }
    }

    let _ = writeln!(out, "\nroot causes ({} upgrades)", r.upgrades_analyzed);
    for c in &r.root_causes {
        let _ = writeln!(out, "  {:<16} {:>4}", c.label, c.count);
    }

    let _ = writeln!(out, "\nactivity");
    match &r.activity {
        Some(a) => {
            let _ = writeln!(
                out,
                "  n={} excluded={} response={}",
                a.n,
                a.excluded_zero_lifetime,
                if a.log_transform { "log1p(tx)" } else { "tx" }
            );
            let _ = writeln!(out, "  intercept={:.6} lifetime_slope={:.6}/day r2={:.4}", a.intercept, a.lifetime_slope, a.r_squared);
            match a.version_slope {
                Some(v) => {
                    let _ = writeln!(out, "  version_slope={v:.6}");
                }
                None => {
                    let _ = writeln!(out, "  version_slope={NOT_COMPUTED}");
                }
            }
            let _ = writeln!(out, "  {}", a.summary);
        }
        None => {
            let _ = writeln!(out, "  {NOT_COMPUTED}");
        }
    }
    out
}

pub fn render_json(report: Option<&CorpusReport>) -> String {
    match report {
        Some(r) => serde_json::to_string_pretty(r).expect("report serializes"),
        None => serde_json::json!({ "schema_version": SCHEMA_VERSION, "status": NO_DATA }).to_string(),
    }
}
