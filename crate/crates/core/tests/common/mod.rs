#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use upgradescope::{Address, PipelineConfig};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

/// The fixture pipeline config with its store moved under `store`.
pub fn fixture_config(store: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::from_toml_file(&corpus_dir().join("pipeline.toml")).expect("fixture config");
    config.store = store.to_path_buf();
    config
}

#[derive(Debug, Deserialize)]
pub struct Truth {
    pub records: usize,
    pub verified: usize,
    pub groups: usize,
    pub duplicates: Vec<Vec<Address>>,
    pub kinds: BTreeMap<String, Vec<Address>>,
    pub trace: TraceTruth,
    pub lineage: Vec<LineageTruth>,
    pub report: Vec<ReportTruth>,
    pub histogram: BTreeMap<String, usize>,
}

#[derive(Debug, Deserialize)]
pub struct TraceTruth {
    pub candidates: usize,
    pub lineages: usize,
    pub untraceable: usize,
    pub upgraded: usize,
    pub versions: usize,
    pub upgraded_versions: usize,
}

#[derive(Debug, Deserialize)]
pub struct LineageTruth {
    pub proxy: Address,
    pub implementations: Vec<Address>,
    pub tx_received: Vec<u64>,
}

#[derive(Debug, Deserialize)]
pub struct ReportTruth {
    pub proxy: Address,
    pub from: usize,
    pub to: usize,
    pub labels: Vec<String>,
}

pub fn truth() -> Truth {
    let text = std::fs::read_to_string(corpus_dir().join("manifest.toml")).expect("manifest.toml");
    toml::from_str(&text).expect("manifest.toml parses")
}
