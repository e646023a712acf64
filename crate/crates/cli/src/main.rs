//! `upgradescope` command line.
//!
//! Every stage command runs that single stage against the store. `run`
//! executes all enabled stages. Flags override values from `--config`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use upgradescope::pipeline::{ExplorerSettings, SampleConfig, StageRecord, StageToggles};
use upgradescope::report::{build_report, render_json, render_table};
use upgradescope::store::ACTIVITY_FILE;
use upgradescope::{run_pipeline, CorpusStore, PipelineConfig, PipelineError, Stage};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "upgradescope", version, about = "Measure upgradeability of deployed smart contracts")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Worker threads per stage (default: logical CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load contracts and their verified sources.
    Ingest(IngestCmd),
    /// Canonicalize sources and group duplicates.
    Normalize(StoreIo),
    /// Classify upgrade patterns.
    Detect(DetectCmd),
    /// Rebuild version lineages of upgradeable contracts.
    Trace(TraceCmd),
    /// Label the root causes of each upgrade.
    Rootcause(RootcauseCmd),
    /// Fit transaction activity against version lifetime and order.
    Activity(ActivityCmd),
    /// Summarize the store.
    Report(ReportCmd),
    /// Run all enabled stages.
    Run(RunCmd),
}

#[derive(Debug, Args)]
struct StoreIo {
    /// Store to read; defaults to `--store`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Store to write; its contents are replaced by a copy of `--in` first.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestInputs {
    /// contracts.csv export.
    #[arg(long)]
    contracts: Option<PathBuf>,
    /// Directory of local source trees or explorer responses.
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Explorer API base URL; the key comes from EXPLORER_API_KEY.
    #[arg(long)]
    api_url: Option<String>,
    #[arg(long)]
    requests_per_second: Option<f64>,
}

#[derive(Debug, Args)]
struct TransactionsInput {
    /// transactions.csv export.
    #[arg(long)]
    transactions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TraceInputs {
    /// logs.csv export.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// traces.csv export with delegate calls.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Collection date closing the last version, ISO 8601.
    #[arg(long)]
    collected_at: Option<String>,
    /// Upgrade event registry.
    #[arg(long)]
    upgrade_events: Option<PathBuf>,
    /// Trace a seeded uniform sample of N upgradeable contracts.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "sample")]
    seed: u64,
}

#[derive(Debug, Args)]
struct IngestCmd {
    #[command(flatten)]
    io: StoreIo,
    #[command(flatten)]
    inputs: IngestInputs,
    #[command(flatten)]
    tx: TransactionsInput,
}

#[derive(Debug, Args)]
struct DetectCmd {
    #[command(flatten)]
    io: StoreIo,
    /// Rules file.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TraceCmd {
    #[command(flatten)]
    io: StoreIo,
    #[command(flatten)]
    inputs: TraceInputs,
    #[command(flatten)]
    tx: TransactionsInput,
}

#[derive(Debug, Args)]
struct RootcauseCmd {
    #[command(flatten)]
    io: StoreIo,
    /// External detector findings.
    #[arg(long)]
    external_findings: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ActivityCmd {
    /// Store to read; defaults to `--store`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Also write the activity report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model ln(1 + tx) instead of raw counts.
    #[arg(long)]
    log_transform: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct ReportCmd {
    /// Store to read; defaults to `--store`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct RunCmd {
    #[command(flatten)]
    inputs: IngestInputs,
    #[command(flatten)]
    tx: TransactionsInput,
    #[command(flatten)]
    trace: TraceInputs,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    external_findings: Option<PathBuf>,
    #[arg(long)]
    log_transform: bool,
    /// Skip these stages.
    #[arg(long, value_delimiter = ',', value_parser = parse_stage)]
    skip: Vec<Stage>,
}

fn parse_stage(text: &str) -> Result<Stage, String> {
    Stage::ORDER.into_iter().find(|s| s.as_str() == text).ok_or_else(|| format!("unknown stage `{text}`"))
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl IngestInputs {
    fn apply(self, config: &mut PipelineConfig) {
        set(&mut config.inputs.contracts, self.contracts);
        set(&mut config.inputs.sources, self.sources);
        if let Some(base_url) = self.api_url {
            let api_key = config.explorer.take().and_then(|e| e.api_key);
            config.explorer = Some(ExplorerSettings { base_url, api_key, requests_per_second: None });
        }
        if let (Some(rps), Some(explorer)) = (self.requests_per_second, config.explorer.as_mut()) {
            explorer.requests_per_second = Some(rps);
        }
    }
}

impl TraceInputs {
    fn apply(self, config: &mut PipelineConfig) {
        set(&mut config.inputs.logs, self.logs);
        set(&mut config.inputs.traces, self.traces);
        set(&mut config.collection_date, self.collected_at);
        set(&mut config.upgrade_events, self.upgrade_events);
        if let Some(n) = self.sample {
            config.sample = Some(SampleConfig { n, seed: self.seed });
        }
    }
}

/// Points the config at the output store, seeding it from `--in` when they differ.
fn apply_io(config: &mut PipelineConfig, input: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(input) = input {
        config.store = input;
    }
    if let Some(out) = out {
        if out != config.store {
            copy_store(&config.store, &out)?;
            config.store = out;
        }
    }
    Ok(())
}

fn copy_store(from: &Path, to: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(to).with_context(|| format!("creating {}", to.display()))?;
    if !from.is_dir() {
        return Ok(());
    }
    for entry in fs::read_dir(from).with_context(|| format!("reading {}", from.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            fs::copy(entry.path(), to.join(entry.file_name()))
                .with_context(|| format!("copying {}", entry.path().display()))?;
        }
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_toml_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(store) = &cli.store {
        config.store = store.clone();
    }
    set(&mut config.workers, cli.workers);
    Ok(config)
}

fn print_stage(record: &StageRecord) {
    println!(
        "{}: inputs={} outputs={} skipped={} errors={} ({:.0} ms)",
        record.stage, record.inputs, record.outputs, record.skipped, record.errors, record.wall_time_ms
    );
    for note in &record.notes {
        println!("  {note}");
    }
    if !record.untraceable.is_empty() {
        println!("  untraceable: {}", record.untraceable.len());
    }
}

enum Outcome {
    Ok,
    Config(String),
    Stage(String),
}

fn run_stages(config: &PipelineConfig) -> Outcome {
    match run_pipeline(config) {
        Ok(manifest) => {
            manifest.stages.iter().for_each(print_stage);
            Outcome::Ok
        }
        Err(e @ PipelineError::Config(_)) => Outcome::Config(e.to_string()),
        Err(e) => {
            // The manifest is on disk up to the failed stage.
            if let Ok(text) = fs::read_to_string(config.store.join(upgradescope::store::MANIFEST_FILE)) {
                if let Ok(m) = serde_json::from_str::<upgradescope::RunManifest>(&text) {
                    m.stages.iter().for_each(print_stage);
                }
            }
            Outcome::Stage(e.to_string())
        }
    }
}

fn single(config: &mut PipelineConfig, stage: Stage) -> Outcome {
    config.stages = StageToggles::only(stage);
    run_stages(config)
}

fn execute(cli: Cli) -> Outcome {
    let mut config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => return Outcome::Config(e.to_string()),
    };
    let io = |config: &mut PipelineConfig, input, out| apply_io(config, input, out).map_err(|e| Outcome::Config(format!("{e:#}")));
    let result = match cli.command {
        Command::Ingest(cmd) => io(&mut config, cmd.io.input, cmd.io.out).map(|()| {
            cmd.inputs.apply(&mut config);
            set(&mut config.inputs.transactions, cmd.tx.transactions);
            single(&mut config, Stage::Ingest)
        }),
        Command::Normalize(cmd) => io(&mut config, cmd.input, cmd.out).map(|()| single(&mut config, Stage::Normalize)),
        Command::Detect(cmd) => io(&mut config, cmd.io.input, cmd.io.out).map(|()| {
            set(&mut config.rules, cmd.rules);
            single(&mut config, Stage::Detect)
        }),
        Command::Trace(cmd) => io(&mut config, cmd.io.input, cmd.io.out).map(|()| {
            cmd.inputs.apply(&mut config);
            set(&mut config.inputs.transactions, cmd.tx.transactions);
            single(&mut config, Stage::Trace)
        }),
        Command::Rootcause(cmd) => io(&mut config, cmd.io.input, cmd.io.out).map(|()| {
            set(&mut config.inputs.findings, cmd.external_findings);
            single(&mut config, Stage::Rootcause)
        }),
        Command::Activity(cmd) => io(&mut config, cmd.input, None).map(|()| {
            config.log_transform |= cmd.log_transform;
            match single(&mut config, Stage::Activity) {
                Outcome::Ok => match cmd.out {
                    Some(out) => export_activity(&config.store, &out),
                    None => Outcome::Ok,
                },
                other => other,
            }
        }),
        Command::Report(cmd) => io(&mut config, cmd.input, None).map(|()| report(&config.store, cmd.format)),
        Command::Run(cmd) => {
            cmd.inputs.apply(&mut config);
            set(&mut config.inputs.transactions, cmd.tx.transactions);
            cmd.trace.apply(&mut config);
            set(&mut config.rules, cmd.rules);
            set(&mut config.inputs.findings, cmd.external_findings);
            config.log_transform |= cmd.log_transform;
            for stage in cmd.skip {
                config.stages.set(stage, false);
            }
            Ok(run_stages(&config))
        }
    };
    result.unwrap_or_else(|e| e)
}

fn export_activity(store: &Path, out: &Path) -> Outcome {
    match fs::copy(store.join(ACTIVITY_FILE), out) {
        Ok(_) => {
            println!("activity report written to {}", out.display());
            Outcome::Ok
        }
        Err(e) => Outcome::Stage(format!("writing {}: {e}", out.display())),
    }
}

fn report(store_dir: &Path, format: Format) -> Outcome {
    let report = if store_dir.is_dir() {
        match CorpusStore::open(store_dir) {
            Ok(store) => build_report(&store),
            Err(e) => return Outcome::Stage(e.to_string()),
        }
    } else {
        None
    };
    match format {
        Format::Json => println!("{}", render_json(report.as_ref())),
        Format::Table => print!("{}", render_table(report.as_ref())),
    }
    Outcome::Ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match execute(cli) {
        Outcome::Ok => ExitCode::SUCCESS,
        Outcome::Config(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
        Outcome::Stage(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
