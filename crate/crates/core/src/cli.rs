//! Command-line front end. `run_command` is the whole program; `main` only
//! forwards the process arguments, environment and standard streams.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{resize_for_budget, ResizeResult};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, Corpus};
use crate::egrpo::{history_csv, train};
use crate::episode_log::{parse_log, write_log};
use crate::nav::{run_corpus, EngineConfig, Episode, Strategy};
use crate::policy::{OraclePolicy, Policy, RandomPolicy, RelevancePolicy, TokenSoftmaxPolicy};
use crate::reward::{summarize, EvalReport};
use crate::trajgen::{annotate_corpus, sft_rows, write_sft_dataset, MockAnnotator, RetryingAnnotator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "scrollnav", version, about = "Page-by-page document navigation: episodes, evaluation, training and data generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file: `key=value` lines, or any artifact with an embedded config.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FormatArgs {
    /// Print machine-readable JSON.
    #[arg(long, conflicts_with = "table")]
    json: bool,
    /// Print an aligned plain-text table (default).
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n_docs: Option<usize>,
        /// Output directory; receives corpus.jsonl and config.kv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one policy and strategy over a corpus.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus JSONL; a synthetic corpus is generated from the config when absent.
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        strategy: Option<String>,
        /// Token-policy checkpoint.
        #[arg(long)]
        checkpoint: Option<String>,
        /// Output directory; receives episodes.jsonl, report.json and config.kv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Recompute a report from an episode log.
    Eval {
        #[arg(long)]
        log: PathBuf,
        /// Corpus JSONL; defaults to the corpus named in the log's config.
        #[arg(long)]
        corpus: Option<String>,
        /// Write the report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Compare navigation strategies with one policy.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "serial,random,cos")]
        strategies: Vec<String>,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Train the token policy with the group-relative optimizer.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory; receives history.csv, checkpoint.json, train.json and config.kv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a supervised dataset from sampled trajectories and the mock annotator.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: Option<String>,
        /// Annotator response cache directory.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Output directory; receives plans.jsonl, annotations.jsonl, sft.jsonl and config.kv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Image token budget for page sizes.
    Budget {
        /// Image heights; paired with --w in order.
        #[arg(long = "h", required = true, num_args = 1..)]
        heights: Vec<u64>,
        #[arg(long = "w", required = true, num_args = 1..)]
        widths: Vec<u64>,
        #[arg(long)]
        max_pixels: Option<u64>,
        #[command(flatten)]
        format: FormatArgs,
    },
}

/// Report file shared by `run` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: BTreeMap<String, String>,
    pub policy: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub config: BTreeMap<String, String>,
    pub policy: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFile {
    pub config: BTreeMap<String, String>,
    pub before: EvalReport,
    pub after: EvalReport,
}

/// Config embedded in an artifact: the `config` object of a JSON file, or
/// of the first line of a JSONL file.
fn embedded_config(text: &str) -> Option<BTreeMap<String, String>> {
    #[derive(Deserialize)]
    struct WithConfig {
        config: BTreeMap<String, String>,
    }
    serde_json::from_str::<WithConfig>(text)
        .or_else(|_| serde_json::from_str::<WithConfig>(text.lines().next().unwrap_or("")))
        .ok()
        .map(|w| w.config)
}

fn resolve_config(
    args: &ConfigArgs,
    env: &[(String, String)],
    flags: &[(&str, Option<String>)],
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if text.trim_start().starts_with('{') {
            let map = embedded_config(&text)
                .ok_or_else(|| CliError::Usage(format!("{}: no embedded config found", path.display())))?;
            for (k, v) in &map {
                cfg.set(k, v)?;
            }
        } else {
            cfg.apply_kv(&text)?;
        }
    }
    cfg.apply_env(env.iter().cloned())?;
    for item in &args.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn load_or_generate(cfg: &RunConfig) -> Result<Corpus, CliError> {
    match cfg.corpus_path() {
        Some(path) => load_corpus(Path::new(path)).map_err(|e| data(format!("{path}: {e}"))),
        None => generate_synthetic_corpus(&cfg.gen_spec()).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn build_policy(cfg: &RunConfig) -> Result<Box<dyn Policy>, CliError> {
    Ok(match cfg.policy_name() {
        "oracle" => Box::new(OraclePolicy),
        "random" => Box::new(RandomPolicy { p_answer: cfg.p_answer() }),
        "relevance" => Box::new(RelevancePolicy { answer_threshold: cfg.answer_threshold() }),
        "token" => {
            let mut p = match cfg.checkpoint_path() {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| data(format!("{path}: {e}")))?;
                    TokenSoftmaxPolicy::from_json(&text).map_err(|e| data(format!("{path}: {e}")))?
                }
                None => TokenSoftmaxPolicy::uniform(cfg.train().temperature),
            };
            let t = cfg.train();
            p.temperature = t.temperature;
            p.top_k = t.top_k;
            p.top_p = t.top_p;
            Box::new(p)
        }
        other => return Err(CliError::Usage(format!("unknown policy {other:?}"))),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts serialize");
    s.push('\n');
    s
}

fn run_engine(corpus: &Corpus, policy: &dyn Policy, engine: &EngineConfig) -> Result<(Vec<Episode>, EvalReport), CliError> {
    let episodes = run_corpus(corpus, policy, engine).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = summarize(&episodes, corpus, &engine.reward).map_err(data)?;
    Ok((episodes, report))
}

fn strategy_label(s: Strategy) -> &'static str {
    match s {
        Strategy::Serial => "Serial",
        Strategy::Random => "Random",
        Strategy::Cos => "CoS",
    }
}

fn print_reports(out: &mut dyn Write, rows: &[(String, EvalReport)], json: bool) -> Result<(), CliError> {
    let text = if json {
        let map: BTreeMap<&str, &EvalReport> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
        to_json(&map)
    } else {
        EvalReport::table(rows)
    };
    out.write_all(text.as_bytes()).map_err(data)
}

fn print_budget(out: &mut dyn Write, rows: &[ResizeResult], json: bool) -> Result<(), CliError> {
    let text = if json {
        to_json(&rows)
    } else {
        let mut s = format!("{:>6} {:>6} {:>10} {:>6} {:>6} {:>10} {:>7}\n", "h", "w", "budget", "out_h", "out_w", "pixels", "tokens");
        for r in rows {
            s.push_str(&format!(
                "{:>6} {:>6} {:>10} {:>6} {:>6} {:>10} {:>7}\n",
                r.in_h, r.in_w, r.max_pixels, r.out_h, r.out_w, r.out_pixels, r.tokens
            ));
        }
        s
    };
    out.write_all(text.as_bytes()).map_err(data)
}

fn dispatch(cli: Cli, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus { cfg, n_docs, out: dir } => {
            let cfg = resolve_config(&cfg, env, &[("n_docs", n_docs.map(|n| n.to_string()))])?;
            let corpus = generate_synthetic_corpus(&cfg.gen_spec()).map_err(|e| CliError::Usage(e.to_string()))?;
            fs::create_dir_all(&dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            save_corpus(&corpus, &dir.join("corpus.jsonl")).map_err(data)?;
            write_file(&dir.join("config.kv"), &cfg.to_kv())?;
            writeln!(out, "wrote {} documents, {} queries to {}", corpus.records.len(), corpus.query_count(), dir.display())
                .map_err(data)?;
        }
        Command::Run { cfg, corpus, policy, strategy, checkpoint, out: dir, format } => {
            let cfg = resolve_config(
                &cfg,
                env,
                &[("corpus", corpus), ("policy", policy), ("strategy", strategy), ("checkpoint", checkpoint)],
            )?;
            let corpus = load_or_generate(&cfg)?;
            let policy = build_policy(&cfg)?;
            let engine = cfg.engine();
            let (episodes, report) = run_engine(&corpus, policy.as_ref(), &engine)?;
            if let Some(dir) = dir {
                write_file(&dir.join("episodes.jsonl"), &write_log(policy.name(), cfg.as_map(), &episodes))?;
                let file = ReportFile { config: cfg.as_map().clone(), policy: policy.name().to_string(), report: report.clone() };
                write_file(&dir.join("report.json"), &to_json(&file))?;
                write_file(&dir.join("config.kv"), &cfg.to_kv())?;
            }
            let label = format!("{}/{}", policy.name(), strategy_label(engine.strategy));
            print_reports(out, &[(label, report)], format.json)?;
        }
        Command::Eval { log, corpus, out: path, format } => {
            let text = fs::read_to_string(&log).map_err(|e| data(format!("{}: {e}", log.display())))?;
            let parsed = parse_log(&text).map_err(|e| data(format!("{}: {e}", log.display())))?;
            let mut cfg = RunConfig::from_map(&parsed.config).map_err(data)?;
            if let Some(c) = corpus {
                cfg.set("corpus", &c)?;
            }
            let corpus = load_or_generate(&cfg)?;
            let report = summarize(&parsed.episodes, &corpus, &cfg.engine().reward).map_err(data)?;
            if let Some(path) = path {
                let file = ReportFile { config: parsed.config.clone(), policy: parsed.policy.clone(), report: report.clone() };
                write_file(&path, &to_json(&file))?;
            }
            let label = format!("{}/{}", parsed.policy, strategy_label(cfg.engine().strategy));
            print_reports(out, &[(label, report)], format.json)?;
        }
        Command::Ablate { cfg, corpus, policy, strategies, checkpoint, out: dir, format } => {
            let mut cfg = resolve_config(&cfg, env, &[("corpus", corpus), ("policy", policy), ("checkpoint", checkpoint)])?;
            let parsed: Vec<Strategy> = strategies
                .iter()
                .map(|s| s.parse::<Strategy>().map_err(CliError::Usage))
                .collect::<Result<_, _>>()?;
            let corpus = load_or_generate(&cfg)?;
            let policy = build_policy(&cfg)?;
            let mut rows = Vec::new();
            let mut logs = Vec::new();
            for s in parsed {
                cfg.set("strategy", s.name())?;
                let (episodes, report) = run_engine(&corpus, policy.as_ref(), &cfg.engine())?;
                logs.push((s, write_log(policy.name(), cfg.as_map(), &episodes)));
                rows.push(AblationRow { strategy: strategy_label(s).to_string(), report });
            }
            // the embedded config names the last strategy run; the list itself is recorded per row
            if let Some(dir) = dir {
                for (s, log) in &logs {
                    write_file(&dir.join(format!("episodes_{}.jsonl", s.name())), log)?;
                }
                let file = AblationFile { config: cfg.as_map().clone(), policy: policy.name().to_string(), rows: rows.clone() };
                write_file(&dir.join("ablation.json"), &to_json(&file))?;
                write_file(&dir.join("config.kv"), &cfg.to_kv())?;
            }
            let table: Vec<(String, EvalReport)> = rows.into_iter().map(|r| (r.strategy, r.report)).collect();
            print_reports(out, &table, format.json)?;
        }
        Command::Train { cfg, corpus, iterations, out: dir } => {
            let cfg = resolve_config(&cfg, env, &[("corpus", corpus), ("iterations", iterations.map(|n| n.to_string()))])?;
            let corpus = load_or_generate(&cfg)?;
            let engine = cfg.engine();
            let tcfg = cfg.train();
            let mut policy = TokenSoftmaxPolicy::uniform(tcfg.temperature);
            policy.top_k = tcfg.top_k;
            policy.top_p = tcfg.top_p;
            let (_, before) = run_engine(&corpus, &policy, &engine)?;
            let history = train(&corpus, &mut policy, &engine, &tcfg, |_, _| {}).map_err(|e| match e {
                crate::egrpo::TrainError::Config(m) => CliError::Usage(m),
                other => data(other),
            })?;
            let (_, after) = run_engine(&corpus, &policy, &engine)?;
            let mut csv: String = cfg.to_kv().lines().map(|l| format!("# {l}\n")).collect();
            csv.push_str(&history_csv(&history));
            write_file(&dir.join("history.csv"), &csv)?;
            write_file(&dir.join("checkpoint.json"), &policy.to_json())?;
            let file = TrainFile { config: cfg.as_map().clone(), before: before.clone(), after: after.clone() };
            write_file(&dir.join("train.json"), &to_json(&file))?;
            write_file(&dir.join("config.kv"), &cfg.to_kv())?;
            print_reports(out, &[("before".to_string(), before), ("after".to_string(), after)], false)?;
        }
        Command::GenData { cfg, corpus, cache, out: dir } => {
            let cfg = resolve_config(&cfg, env, &[("corpus", corpus)])?;
            let corpus = load_or_generate(&cfg)?;
            let client = RetryingAnnotator::new(
                MockAnnotator,
                Duration::from_millis(cfg.annotator_timeout_ms()),
                cfg.annotator_retries(),
                cache,
            );
            let annotated = annotate_corpus(&client, &corpus, &cfg.trajgen()).map_err(data)?;
            let plans: Vec<_> = annotated.iter().map(|(p, _)| p.clone()).collect();
            let records: Vec<_> = annotated.into_iter().flat_map(|(_, r)| r).collect();
            let rows = sft_rows(&corpus, &plans, &records).map_err(data)?;
            fs::create_dir_all(&dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            let jsonl = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
            write_file(&dir.join("plans.jsonl"), &jsonl(plans.iter().map(|p| serde_json::to_string(p).expect("plans serialize")).collect()))?;
            write_file(
                &dir.join("annotations.jsonl"),
                &jsonl(records.iter().map(|r| serde_json::to_string(r).expect("records serialize")).collect()),
            )?;
            write_sft_dataset(&rows, &dir.join("sft.jsonl")).map_err(data)?;
            write_file(&dir.join("config.kv"), &cfg.to_kv())?;
            writeln!(out, "wrote {} plans, {} annotations, {} SFT rows to {}", plans.len(), records.len(), rows.len(), dir.display())
                .map_err(data)?;
        }
        Command::Budget { heights, widths, max_pixels, format } => {
            if heights.len() != widths.len() {
                return Err(CliError::Usage(format!("{} heights but {} widths", heights.len(), widths.len())));
            }
            let mut cfg = RunConfig::default();
            if let Some(m) = max_pixels {
                cfg.set("max_pixels", &m.to_string())?;
            }
            let spec = cfg.budget().map_err(|e| CliError::Usage(e.to_string()))?;
            let rows = heights
                .iter()
                .zip(&widths)
                .map(|(&h, &w)| resize_for_budget(h, w, spec).map_err(data))
                .collect::<Result<Vec<_>, _>>()?;
            print_budget(out, &rows, format.json)?;
        }
    }
    let _ = err.flush();
    Ok(())
}

/// Parse `argv` (including the program name) and run it; returns the exit code.
pub fn run_command_with<I, T>(argv: I, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli, env, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Process entry point: real arguments, environment and standard streams.
pub fn run_command() -> i32 {
    let env: Vec<(String, String)> = std::env::vars().collect();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(std::env::args_os(), &env, &mut stdout.lock(), &mut stderr.lock())
}
