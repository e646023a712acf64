mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{fixture_config, truth};
use upgradescope::pipeline::{RunStatus, StageToggles};
use upgradescope::report::{build_report, render_json, render_table};
use upgradescope::store::MANIFEST_FILE;
use upgradescope::{run_pipeline, CorpusStore, Stage};

fn store_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != MANIFEST_FILE)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn full_run_matches_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let store_dir = tmp.path().join("store");
    let manifest = run_pipeline(&fixture_config(&store_dir)).unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    let truth = truth();
    let store = CorpusStore::open(&store_dir).unwrap();

    assert_eq!(store.record_count(), truth.records);
    let records = store.query_records(&Default::default());
    assert_eq!(records.iter().filter(|r| r.verified).count(), truth.verified);

    let normalized = store.normalized();
    let groups = upgradescope::group_duplicates(&normalized);
    assert_eq!(groups.len(), truth.groups);
    for pair in &truth.duplicates {
        assert!(groups.iter().any(|g| pair.iter().all(|a| g.members.contains(a))), "{pair:?}");
    }

    let verdicts = store.verdicts();
    assert_eq!(verdicts.len(), truth.verified);
    for (kind, addresses) in &truth.kinds {
        for a in addresses {
            let v = verdicts.iter().find(|v| &v.address == a).unwrap_or_else(|| panic!("no verdict for {a}"));
            assert_eq!(format!("{:?}", v.kind), *kind, "{a}");
        }
    }

    let lineages = store.lineages();
    assert_eq!(lineages.len(), truth.trace.lineages);
    for expected in &truth.lineage {
        let l = lineages.iter().find(|l| l.proxy_address == expected.proxy).unwrap();
        let impls: Vec<_> = l.versions.iter().map(|v| v.implementation).collect();
        let tx: Vec<_> = l.versions.iter().map(|v| v.tx_received).collect();
        assert_eq!(impls, expected.implementations, "{}", expected.proxy);
        assert_eq!(tx, expected.tx_received, "{}", expected.proxy);
        assert_eq!(l.total_lifetime(), l.collection_date - l.versions[0].deployed_at);
    }
    let rate = upgradescope::upgrade_rate(&lineages);
    assert_eq!((rate.upgraded, rate.total, rate.versions), (truth.trace.upgraded, truth.trace.lineages, truth.trace.versions));
    assert_eq!(rate.upgraded_versions, truth.trace.upgraded_versions);

    let trace = manifest.stage(Stage::Trace).unwrap();
    assert_eq!(trace.outputs, truth.trace.lineages);
    assert_eq!(trace.untraceable.len(), truth.trace.untraceable);
    assert_eq!(trace.outputs + trace.untraceable.len(), truth.trace.candidates);

    let reports = store.reports();
    assert_eq!(reports.len(), truth.report.len());
    for expected in &truth.report {
        let r = reports
            .iter()
            .find(|r| r.proxy_address == expected.proxy && r.from_version == expected.from && r.to_version == expected.to)
            .unwrap();
        let labels: Vec<String> = r.labels.iter().map(|l| format!("{l:?}")).collect();
        assert_eq!(labels, expected.labels, "{} {}->{}", expected.proxy, expected.from, expected.to);
    }
    let histogram: BTreeMap<String, usize> =
        upgradescope::rootcause::label_histogram(&reports).into_iter().map(|(c, n)| (format!("{c:?}"), n)).collect();
    assert_eq!(histogram, truth.histogram);

    let activity = store.activity().unwrap();
    assert_eq!(activity.n_observations + activity.excluded_zero_lifetime, truth.trace.versions);

    let on_disk: upgradescope::RunManifest =
        serde_json::from_str(&fs::read_to_string(store_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.stages.len(), 6);
}

#[test]
fn stage_counts_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = run_pipeline(&fixture_config(&tmp.path().join("store"))).unwrap();
    let s = |stage| manifest.stage(stage).unwrap().clone();
    let (ingest, normalize, detect, trace, rootcause, activity) =
        (s(Stage::Ingest), s(Stage::Normalize), s(Stage::Detect), s(Stage::Trace), s(Stage::Rootcause), s(Stage::Activity));
    assert_eq!(normalize.inputs, ingest.outputs);
    assert_eq!(detect.inputs, normalize.outputs);
    assert_eq!(trace.inputs, detect.outputs);
    assert_eq!(rootcause.inputs, trace.outputs);
    assert_eq!(activity.inputs, trace.outputs);
    // Stages whose inputs and outputs are the same kind of item.
    for r in [&normalize, &detect, &trace] {
        assert_eq!(r.outputs + r.skipped + r.errors, r.inputs, "{r:?}");
    }
    // Root cause consumes lineages; single-version ones are skipped.
    assert_eq!(rootcause.skipped + rootcause.errors + 2, rootcause.inputs);
    assert_eq!((trace.inputs, trace.outputs, trace.skipped), (25, 5, 20));
    assert_eq!(normalize.skipped, 1);
    assert_eq!(rootcause.outputs, 3);
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_pipeline(&fixture_config(&a)).unwrap();
    let first = store_files(&a);
    run_pipeline(&fixture_config(&a)).unwrap();
    assert_eq!(store_files(&a), first);
    let mut config = fixture_config(&b);
    config.workers = Some(1);
    run_pipeline(&config).unwrap();
    assert_eq!(store_files(&b), first);
}

#[test]
fn detect_only_rewrites_only_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    run_pipeline(&fixture_config(&dir)).unwrap();
    let before = store_files(&dir);
    let verdicts = dir.join(upgradescope::store::VERDICTS_FILE);
    fs::remove_file(&verdicts).unwrap();

    let mut config = fixture_config(&dir);
    config.stages = StageToggles::only(Stage::Detect);
    let manifest = run_pipeline(&config).unwrap();
    assert_eq!(manifest.stages.len(), 1);
    assert_eq!(store_files(&dir), before);
}

#[test]
fn missing_logs_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    let mut config = fixture_config(&dir);
    config.inputs.logs = Some(tmp.path().join("absent.csv"));
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.exists());
}

#[test]
fn missing_collection_date_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    let mut config = fixture_config(&dir);
    config.collection_date = None;
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("collection date"));
    assert!(!dir.exists());
}

#[test]
fn report_renders_after_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("store");
    run_pipeline(&fixture_config(&dir)).unwrap();
    let store = CorpusStore::open(&dir).unwrap();
    let report = build_report(&store).unwrap();
    assert_eq!(report.contracts, 26);
    assert_eq!(report.upgrade_rate.as_ref().unwrap().upgraded, 2);
    let json: serde_json::Value = serde_json::from_str(&render_json(Some(&report))).unwrap();
    assert_eq!(json["schema_version"], 1);
    let table = render_table(Some(&report));
    assert!(table.contains("UpgradeableProxyTransparent") || table.contains("transparent"), "{table}");

    let empty = tempfile::tempdir().unwrap();
    let store = CorpusStore::open(empty.path()).unwrap();
    assert!(build_report(&store).is_none());
    assert_eq!(render_table(None), "no data\n");
}
