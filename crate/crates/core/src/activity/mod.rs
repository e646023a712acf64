//! Usage of contract versions: transaction counts modeled against version
//! lifetime, optionally with version order as a second predictor.
//!
//! The response is the raw per-version count, or `ln(1 + count)` when the log
//! transform is requested. Lifetime enters in days.

pub mod ols;

use serde::{Deserialize, Serialize};

pub use ols::{ols, OlsError, OlsSolution};

use crate::lineage::VersionLineage;
use crate::types::{Address, SECONDS_PER_DAY};

pub const NO_EFFECT_ESTIMABLE: &str = "no upgrade effect estimable";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityObservation {
    pub proxy_address: Address,
    pub version_index: usize,
    pub tx_received: u64,
    /// Always positive.
    pub lifetime_seconds: i64,
    /// Transactions per day of lifetime.
    pub tx_rate: f64,
}

impl ActivityObservation {
    pub fn lifetime_days(&self) -> f64 {
        self.lifetime_seconds as f64 / SECONDS_PER_DAY
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub observations: Vec<ActivityObservation>,
    /// Versions dropped because their lifetime was zero (same-block upgrades).
    pub excluded_zero_lifetime: usize,
}

/// One observation per version with positive lifetime.
pub fn observations_from_lineages(lineages: &[VersionLineage]) -> Observations {
    let mut out = Observations::default();
    for lineage in lineages {
        for v in &lineage.versions {
            if v.lifetime_seconds <= 0 {
                out.excluded_zero_lifetime += 1;
                continue;
            }
            out.observations.push(ActivityObservation {
                proxy_address: lineage.proxy_address,
                version_index: v.version_index,
                tx_received: v.tx_received,
                lifetime_seconds: v.lifetime_seconds,
                tx_rate: v.tx_received as f64 / (v.lifetime_seconds as f64 / SECONDS_PER_DAY),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictors {
    Lifetime,
    LifetimeAndVersion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub predictors: Predictors,
    pub log_transform: bool,
    pub intercept: f64,
    /// Change in the response per day of lifetime.
    pub lifetime_slope: f64,
    pub version_slope: Option<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

fn response(o: &ActivityObservation, log_transform: bool) -> f64 {
    let y = o.tx_received as f64;
    if log_transform {
        y.ln_1p()
    } else {
        y
    }
}

pub fn fit_ols(observations: &[ActivityObservation], predictors: Predictors, log_transform: bool) -> Result<RegressionFit, OlsError> {
    let y: Vec<f64> = observations.iter().map(|o| response(o, log_transform)).collect();
    let life: Vec<f64> = observations.iter().map(ActivityObservation::lifetime_days).collect();
    let version: Vec<f64> = observations.iter().map(|o| o.version_index as f64).collect();
    let columns: Vec<&[f64]> = match predictors {
        Predictors::Lifetime => vec![&life],
        Predictors::LifetimeAndVersion => vec![&life, &version],
    };
    let sol = ols(&columns, &y)?;
    Ok(RegressionFit {
        predictors,
        log_transform,
        intercept: sol.intercept,
        lifetime_slope: sol.slopes[0],
        version_slope: sol.slopes.get(1).copied(),
        residuals: sol.residuals,
        r_squared: sol.r_squared,
        n: observations.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractDelta {
    pub proxy_address: Address,
    pub versions: usize,
    /// Rate of the first observed version.
    pub first_rate: f64,
    /// Mean rate of the later observed versions.
    pub later_rate: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    /// Version-order coefficient with lifetime controlled.
    pub version_effect: Option<f64>,
    pub summary: String,
    pub per_contract: Vec<ContractDelta>,
}

/// Descriptive before/after rate changes plus the version-order coefficient.
pub fn impact_report(fit: Option<&RegressionFit>, observations: &[ActivityObservation]) -> ImpactReport {
    let mut per_contract = Vec::new();
    let mut start = 0;
    while start < observations.len() {
        let proxy = observations[start].proxy_address;
        let end = start + observations[start..].iter().take_while(|o| o.proxy_address == proxy).count();
        let group = &observations[start..end];
        if group.len() >= 2 {
            let first_rate = group[0].tx_rate;
            let later_rate = group[1..].iter().map(|o| o.tx_rate).sum::<f64>() / (group.len() - 1) as f64;
            per_contract.push(ContractDelta {
                proxy_address: proxy,
                versions: group.len(),
                first_rate,
                later_rate,
                delta: later_rate - first_rate,
            });
        }
        start = end;
    }
    let version_effect = if per_contract.is_empty() { None } else { fit.and_then(|f| f.version_slope) };
    let summary = match version_effect {
        None => NO_EFFECT_ESTIMABLE.to_string(),
        Some(b) => {
            let direction = if b < 0.0 {
                "later versions receive fewer transactions"
            } else if b > 0.0 {
                "later versions receive more transactions"
            } else {
                "version order has no effect"
            };
            format!("version_index coefficient {b:.4} with lifetime controlled: {direction}")
        }
    };
    ImpactReport { version_effect, summary, per_contract }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub n_observations: usize,
    pub excluded_zero_lifetime: usize,
    pub log_transform: bool,
    pub lifetime_fit: Option<RegressionFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime_fit_error: Option<String>,
    pub version_fit: Option<RegressionFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_fit_error: Option<String>,
    pub impact: ImpactReport,
}

/// Both fits and the impact summary. Fit failures are reported, not raised.
pub fn analyze_activity(lineages: &[VersionLineage], log_transform: bool) -> ActivityReport {
    let obs = observations_from_lineages(lineages);
    let split = |r: Result<RegressionFit, OlsError>| match r {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (lifetime_fit, lifetime_fit_error) = split(fit_ols(&obs.observations, Predictors::Lifetime, log_transform));
    let (version_fit, version_fit_error) = split(fit_ols(&obs.observations, Predictors::LifetimeAndVersion, log_transform));
    let impact = impact_report(version_fit.as_ref(), &obs.observations);
    ActivityReport {
        n_observations: obs.observations.len(),
        excluded_zero_lifetime: obs.excluded_zero_lifetime,
        log_transform,
        lifetime_fit,
        lifetime_fit_error,
        version_fit,
        version_fit_error,
        impact,
    }
}
