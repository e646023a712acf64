use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/corpus")
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upgradescope"))
        .args(args)
        .env_remove("EXPLORER_API_KEY")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ndjson_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn run_with_config(store: &Path) -> Output {
    bin(&["run", "--config", path(&corpus().join("pipeline.toml")), "--store", path(store)])
}

#[test]
fn run_with_config_prints_stage_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let out = run_with_config(&store);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("groups=23 contracts=25 duplicates=2"), "{text}");
    for stage in ["ingest", "normalize", "detect", "trace", "rootcause", "activity"] {
        assert!(text.contains(&format!("{stage}: inputs=")), "{stage}\n{text}");
    }
    assert!(store.join("manifest.json").is_file());
}

#[test]
fn stage_commands_match_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    assert!(run_with_config(&full).status.success());

    let staged = tmp.path().join("staged");
    let c = corpus();
    let s = path(&staged);
    let steps: Vec<Vec<String>> = vec![
        vec![
            "ingest".into(),
            "--store".into(),
            s.into(),
            "--contracts".into(),
            path(&c.join("contracts.csv")).into(),
            "--sources".into(),
            path(&c.join("sources")).into(),
            "--transactions".into(),
            path(&c.join("transactions.csv")).into(),
        ],
        vec!["normalize".into(), "--in".into(), s.into()],
        vec!["detect".into(), "--in".into(), s.into(), "--rules".into(), path(&config_dir().join("rules.toml")).into()],
        vec![
            "trace".into(),
            "--in".into(),
            s.into(),
            "--logs".into(),
            path(&c.join("logs.csv")).into(),
            "--traces".into(),
            path(&c.join("traces.csv")).into(),
            "--transactions".into(),
            path(&c.join("transactions.csv")).into(),
            "--collected-at".into(),
            "2021-01-01T00:00:00Z".into(),
        ],
        vec!["rootcause".into(), "--in".into(), s.into(), "--external-findings".into(), path(&c.join("findings.json")).into()],
        vec!["activity".into(), "--in".into(), s.into(), "--out".into(), path(&tmp.path().join("activity-report.json")).into()],
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = bin(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(ndjson_files(&staged), ndjson_files(&full));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("activity-report.json")).unwrap()).unwrap();
    assert!(report.get("n_observations").is_some());
    assert!(report.get("excluded_zero_lifetime").is_some());
}

#[test]
fn out_store_leaves_input_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    assert!(run_with_config(&a).status.success());
    let before = ndjson_files(&a);
    let b = tmp.path().join("b");
    let out = bin(&["detect", "--in", path(&a), "--out", path(&b)]);
    assert!(out.status.success());
    assert_eq!(ndjson_files(&a), before);
    assert_eq!(ndjson_files(&b), before);
}

#[test]
fn report_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    assert!(run_with_config(&store).status.success());

    let json = bin(&["report", "--store", path(&store), "--format", "json"]);
    assert!(json.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(value["schema_version"], 1);
    assert_eq!(value["contracts"], 26);
    assert_eq!(value["verified"], 25);
    assert_eq!(value["upgrade_rate"]["upgraded"], 2);
    assert_eq!(value["upgrade_rate"]["total"], 5);
    assert_eq!(value["upgrades_analyzed"], 3);

    let table = bin(&["report", "--store", path(&store)]);
    let text = stdout(&table);
    assert!(text.contains("contracts: 26 (25 verified)"), "{text}");
    assert!(text.contains("upgraded 2 of 5 traced"), "{text}");
}

#[test]
fn report_on_empty_store_says_no_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["report", "--store", path(&tmp.path().join("nothing"))]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "no data");
}

#[test]
fn verdicts_only_store_reports_activity_not_computed() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let out = bin(&[
        "run",
        "--config",
        path(&corpus().join("pipeline.toml")),
        "--store",
        path(&store),
        "--skip",
        "trace,rootcause,activity",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&bin(&["report", "--store", path(&store)]));
    assert!(text.contains("activity\n  not computed"), "{text}");
    assert!(text.contains("upgrade rate\n  not computed"), "{text}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let missing = bin(&[
        "run",
        "--config",
        path(&corpus().join("pipeline.toml")),
        "--store",
        path(&store),
        "--logs",
        path(&tmp.path().join("absent.csv")),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!store.exists());

    let no_date = bin(&["trace", "--store", path(&store), "--logs", path(&corpus().join("logs.csv"))]);
    assert_eq!(no_date.status.code(), Some(2));

    let explorer_without_key = bin(&[
        "ingest",
        "--store",
        path(&store),
        "--contracts",
        path(&corpus().join("contracts.csv")),
        "--api-url",
        "http://127.0.0.1:9",
    ]);
    assert_eq!(explorer_without_key.status.code(), Some(2));

    // An unreadable store is rejected before any stage runs.
    let broken = tmp.path().join("broken");
    fs::create_dir_all(&broken).unwrap();
    fs::write(broken.join("verdicts.ndjson"), "{not json\n").unwrap();
    let out = bin(&["normalize", "--store", path(&broken)]);
    assert_eq!(out.status.code(), Some(2));
}
