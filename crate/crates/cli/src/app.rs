//! Command-line surface. Settings resolve as built-in defaults, then the
//! `--config` file, then flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use streamsift::analytics::{Report, ReportFormat};
use streamsift::index::SearchQuery;
use streamsift::streamproc::StopSignal;
use streamsift::synth::{
    write_jsonl, write_sentiment140, write_stream, StreamConfig, SynthConfig, TweetGenerator,
};
use streamsift::Sentiment;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::http::{self, ServeOptions};
use crate::pipeline::{self, CountSource, IngestSource, Pipeline, StreamOptions};

#[derive(Debug, Parser)]
#[command(
    name = "streamsift",
    version,
    about = "Streaming tweet sentiment pipeline"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `data_dir`.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a JSON-lines file or a TCP stream into the raw topic, archive and index.
    Ingest(IngestArgs),
    /// Train the LSTM on a Sentiment140-format CSV.
    Train(TrainArgs),
    /// Score a Sentiment140-format CSV with the saved model.
    Evaluate(EvaluateArgs),
    /// Label the raw topic in micro-batches until stopped.
    Stream(StreamArgs),
    /// Reports over labeled records, the archive or a CSV.
    #[command(subcommand)]
    Query(QueryCommand),
    /// Ranked full-text search.
    Search(SearchArgs),
    /// HTTP API for search and reports.
    Serve(ServeArgs),
    /// List topics with partition high watermarks and consumer lag.
    Topics,
    /// Ask a running `stream` or `serve` to finish its batch and exit.
    Stop,
    /// Print the effective configuration as TOML.
    Config,
    /// Write a synthetic Sentiment140-format CSV plus a manifest.
    Synth(SynthArgs),
    /// Write a synthetic JSON-lines tweet stream plus a manifest.
    SynthStream(SynthStreamArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON-lines file to replay.
    #[arg(
        long,
        conflicts_with = "tcp_port",
        required_unless_present = "tcp_port"
    )]
    pub file: Option<PathBuf>,
    /// Accept newline-delimited JSON on this port until the sender closes.
    #[arg(long, alias = "tcp")]
    pub tcp_port: Option<u16>,
    /// Replay speed relative to the recorded timestamps.
    #[arg(long, default_value_t = 1.0, conflicts_with = "full_speed")]
    pub speedup: f64,
    /// Replay without pacing.
    #[arg(long)]
    pub full_speed: bool,
    #[arg(long)]
    pub dedup_capacity: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Train on a class-balanced sample of this many rows.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Where to write the model; defaults to `<data_dir>/model`.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub interval_ms: Option<u64>,
    #[arg(long)]
    pub max_batch: Option<usize>,
    /// Scoring threads; 0 means one per core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Exit after this many batches.
    #[arg(long)]
    pub max_batches: Option<u64>,
    /// Exit once a poll comes back empty.
    #[arg(long)]
    pub until_idle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountFrom {
    Labeled,
    Archive,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    /// Positive/negative totals.
    Counts(CountsArgs),
    /// Per-window counts and mean probability.
    Timeline(TimelineArgs),
}

#[derive(Debug, Args)]
pub struct CountsArgs {
    #[arg(long, value_enum, default_value_t = CountFrom::Labeled)]
    pub source: CountFrom,
    /// CSV to count when `--source csv`.
    #[arg(long, required_if_eq("source", "csv"))]
    pub csv: Option<PathBuf>,
    /// Count each distinct text once (CSV source).
    #[arg(long)]
    pub dedup: bool,
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long, default_value_t = u64::MAX)]
    pub end: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct TimelineArgs {
    /// Window length in milliseconds.
    #[arg(long, default_value_t = http::DEFAULT_WINDOW_MS)]
    pub window_ms: u64,
    #[arg(long)]
    pub start: Option<u64>,
    #[arg(long)]
    pub end: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Terms, optionally with a `label:positive` or `label:negative` clause.
    #[arg(required = true, num_args = 1..)]
    pub query: Vec<String>,
    #[arg(long)]
    pub label: Option<Sentiment>,
    #[arg(short, long, default_value_t = http::DEFAULT_K)]
    pub k: usize,
    /// Rebuild the index from the archive and log instead of the snapshot.
    #[arg(long)]
    pub rebuild: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    /// Run the micro-batch loop in the same process.
    #[arg(long)]
    pub with_stream: bool,
    /// Also replay this JSON-lines file into the raw topic.
    #[arg(long, conflicts_with = "ingest_tcp_port")]
    pub ingest_file: Option<PathBuf>,
    /// Also accept newline-delimited JSON on this port.
    #[arg(long)]
    pub ingest_tcp_port: Option<u16>,
    /// Replay speed for `--ingest-file`.
    #[arg(long, default_value_t = 1.0, conflicts_with = "full_speed")]
    pub speedup: f64,
    #[arg(long)]
    pub full_speed: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().positive)]
    pub positive: usize,
    #[arg(long, default_value_t = SynthConfig::default().negative)]
    pub negative: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().label_noise)]
    pub label_noise: f64,
    /// Also write the tweets as labeled JSON lines to this path.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthStreamArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = StreamConfig::default().records)]
    pub records: usize,
    #[arg(long, default_value_t = StreamConfig::default().rate_per_sec)]
    pub rate: f64,
    #[arg(long, default_value_t = StreamConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = StreamConfig::default().duplicate_rate)]
    pub duplicate_rate: f64,
    #[arg(long, default_value_t = StreamConfig::default().malformed_rate)]
    pub malformed_rate: f64,
}

/// Defaults, overlaid by the config file, overlaid by flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut c = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        c.data_dir = d.clone();
    }
    match &cli.command {
        Command::Ingest(a) => set(&mut c.ingest.dedup_capacity, a.dedup_capacity),
        Command::Train(a) => {
            let m = &a.model;
            set(&mut c.model.epochs, m.epochs);
            set(&mut c.model.batch_size, m.batch_size);
            set(&mut c.model.learning_rate, m.learning_rate);
            set(&mut c.model.embed_dim, m.embed_dim);
            set(&mut c.model.hidden_dim, m.hidden_dim);
            set(&mut c.textprep.seq_len, m.seq_len);
            set(&mut c.textprep.max_vocab, m.max_vocab);
            set(&mut c.model.seed, m.seed);
            set(&mut c.model.threads, m.threads);
        }
        Command::Stream(a) => {
            set(&mut c.stream.interval_ms, a.interval_ms);
            set(&mut c.stream.max_batch, a.max_batch);
            set(&mut c.stream.threads, a.threads);
        }
        Command::Serve(a) => set(&mut c.serve.port, a.port),
        _ => {}
    }
    Ok(c)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializes")
    );
}

fn render<R: Report>(report: &R, format: OutputFormat, table: impl FnOnce(&R) -> String) -> String {
    match format {
        OutputFormat::Table => table(report),
        OutputFormat::Csv => report.render(ReportFormat::Csv),
        OutputFormat::Json => report.render(ReportFormat::Json),
    }
}

/// Writes CSV and JSON copies of a report under `<data_dir>/reports`.
fn save_report<R: Report>(dir: &Path, name: &str, report: &R) -> Result<(), CliError> {
    for (format, ext) in [(ReportFormat::Csv, "csv"), (ReportFormat::Json, "json")] {
        streamsift::analytics::export_report(report, format, &dir.join(format!("{name}.{ext}")))?;
    }
    Ok(())
}

fn stop_signal(p: &Pipeline) -> Result<StopSignal, CliError> {
    let stop = StopSignal::with_control_file(p.paths().stop_file());
    let flag = stop.flag();
    if let Err(e) =
        ctrlc::set_handler(move || flag.store(true, std::sync::atomic::Ordering::SeqCst))
    {
        log::warn!("cannot install interrupt handler: {e}");
    }
    Ok(stop)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::Synth(a) => synth(&a),
        Command::SynthStream(a) => synth_stream(&a),
        Command::Train(a) => {
            let rows = pipeline::load_rows(&a.csv, a.sample, config.model.seed)?;
            let dir = a.model_dir.unwrap_or_else(|| config.paths().model_dir());
            let summary = pipeline::train_model(&config, &rows, &dir)?;
            println!("{summary}");
            Ok(())
        }
        Command::Evaluate(a) => {
            let dir = a.model_dir.unwrap_or_else(|| config.paths().model_dir());
            let scorer = pipeline::load_scorer(&dir)?;
            let rows = pipeline::load_rows(&a.csv, a.sample, a.seed)?;
            let report = pipeline::evaluate_rows(&scorer, &rows)?;
            match a.format {
                OutputFormat::Json => print_json(&report),
                _ => println!("{report}"),
            }
            Ok(())
        }
        Command::Stop => {
            let path = config.paths().stop_file();
            fs::create_dir_all(path.parent().expect("stop file has a parent"))?;
            fs::write(&path, b"stop\n")?;
            println!("stop requested via {}", path.display());
            Ok(())
        }
        command => {
            let p = Pipeline::open(config)?;
            run_on_pipeline(p, command)
        }
    }
}

fn run_on_pipeline(p: Pipeline, command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => {
            let source = match (a.file, a.tcp_port) {
                (Some(path), _) => IngestSource::File {
                    path,
                    speedup: if a.full_speed {
                        f64::INFINITY
                    } else {
                        a.speedup
                    },
                },
                (None, Some(port)) => IngestSource::Tcp { port, bound: None },
                (None, None) => return Err(CliError::Source("give --file or --tcp-port".into())),
            };
            let summary = pipeline::ingest(&p, source)?;
            println!("{summary}");
            Ok(())
        }
        Command::Stream(a) => {
            let stop = stop_signal(&p)?;
            let summary = pipeline::stream(
                &p,
                StreamOptions {
                    stop,
                    max_batches: a.max_batches,
                    until_idle: a.until_idle,
                    index: true,
                },
            )?;
            print_json(&summary);
            Ok(())
        }
        Command::Query(QueryCommand::Counts(a)) => {
            let source = match a.source {
                CountFrom::Labeled => CountSource::Labeled,
                CountFrom::Archive => CountSource::Archive {
                    start: a.start,
                    end: a.end,
                },
                CountFrom::Csv => CountSource::Csv {
                    path: a.csv.expect("clap requires --csv"),
                    dedup: a.dedup,
                },
            };
            let report = pipeline::counts(&p, &source)?;
            save_report(&p.paths().reports(), "counts", &report)?;
            print!("{}", render(&report, a.format, |r| r.to_table()));
            Ok(())
        }
        Command::Query(QueryCommand::Timeline(a)) => {
            let points = pipeline::timeline(&p, a.window_ms, a.start, a.end)?;
            save_report(&p.paths().reports(), "timeline", &points)?;
            print!("{}", render(&points, a.format, |pts| timeline_table(pts)));
            Ok(())
        }
        Command::Search(a) => {
            let mut query = SearchQuery::parse(&a.query.join(" ")).map_err(CliError::Config)?;
            if a.label.is_some() {
                query.label = a.label;
            }
            if a.k == 0 {
                return Err(CliError::Config("k must be positive".into()));
            }
            let hits = pipeline::search(&p, &query, a.k, a.rebuild)?;
            match a.format {
                OutputFormat::Json => print_json(&hits),
                OutputFormat::Csv | OutputFormat::Table => {
                    for (rank, h) in hits.iter().enumerate() {
                        let label = h.label.map_or("-", |l| l.as_str());
                        println!(
                            "{:>3}  {:>8.4}  {:<8}  {:<20}  {}",
                            rank + 1,
                            h.score,
                            label,
                            h.doc_id,
                            h.snippet
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Serve(a) => {
            let stop = stop_signal(&p)?;
            let _ = fs::remove_file(p.paths().stop_file());
            let port = p.config.serve.port;
            let ingest = match (a.ingest_file, a.ingest_tcp_port) {
                (Some(path), _) => Some(IngestSource::File {
                    path,
                    speedup: if a.full_speed {
                        f64::INFINITY
                    } else {
                        a.speedup
                    },
                }),
                (None, Some(port)) => Some(IngestSource::Tcp { port, bound: None }),
                (None, None) => None,
            };
            let summary = http::serve(
                Arc::new(p),
                ServeOptions {
                    port,
                    with_stream: a.with_stream,
                    ingest,
                    stop,
                    bound: None,
                },
            )?;
            if let Some(s) = summary {
                println!("{s}");
            }
            Ok(())
        }
        Command::Topics => {
            let groups = [
                "streamproc",
                pipeline::ARCHIVER_GROUP,
                crate::indexer::INDEXER_GROUP,
            ];
            for t in p.log.topics() {
                let hw = p.log.high_watermarks(&t.name)?;
                println!(
                    "{}  partitions={}  high_watermarks={:?}",
                    t.name, t.partitions, hw
                );
                for g in groups {
                    println!("  group {g:<10}  lag={}", p.log.lag(g, &t.name)?);
                }
            }
            Ok(())
        }
        Command::Config
        | Command::Synth(_)
        | Command::SynthStream(_)
        | Command::Train(_)
        | Command::Evaluate(_)
        | Command::Stop => {
            unreachable!("handled without opening the pipeline")
        }
    }
}

fn timeline_table(points: &[streamsift::analytics::TimeSeriesPoint]) -> String {
    let mut s = format!(
        "{:>15}  {:>9}  {:>9}  {:>9}\n",
        "window_start", "positive", "negative", "mean_p"
    );
    for p in points {
        s.push_str(&format!(
            "{:>15}  {:>9}  {:>9}  {:>9.4}\n",
            p.window_start, p.positive_count, p.negative_count, p.mean_probability
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    config: &'a SynthConfig,
    rows: usize,
    positive: usize,
    negative: usize,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Source(format!("cannot create {}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        seed: a.seed,
        positive: a.positive,
        negative: a.negative,
        label_noise: a.label_noise,
        ..SynthConfig::default()
    };
    let tweets = TweetGenerator::new(config.clone()).dataset();
    let mut out = create(&a.out)?;
    write_sentiment140(&tweets, &mut out)?;
    out.flush()?;
    if let Some(path) = &a.jsonl {
        let mut j = create(path)?;
        write_jsonl(&tweets, true, &mut j)?;
        j.flush()?;
    }
    let manifest = SynthManifest {
        config: &config,
        rows: tweets.len(),
        positive: tweets
            .iter()
            .filter(|t| t.label == Sentiment::Positive)
            .count(),
        negative: tweets
            .iter()
            .filter(|t| t.label == Sentiment::Negative)
            .count(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("serializes") + "\n";
    fs::write(manifest_path(&a.out), json)?;
    println!("wrote {} rows to {}", tweets.len(), a.out.display());
    Ok(())
}

fn synth_stream(a: &SynthStreamArgs) -> Result<(), CliError> {
    let config = StreamConfig {
        seed: a.seed,
        records: a.records,
        rate_per_sec: a.rate,
        duplicate_rate: a.duplicate_rate,
        malformed_rate: a.malformed_rate,
    };
    let mut out = create(&a.out)?;
    let manifest = write_stream(&config, &mut out)?;
    out.flush()?;
    let json = serde_json::to_string_pretty(&manifest).expect("serializes") + "\n";
    fs::write(manifest_path(&a.out), json)?;
    println!("wrote {} lines to {}", manifest.lines, a.out.display());
    Ok(())
}
