//! The `aicare` command line: synthetic cohorts, preprocessing,
//! cross-validated training, calibration, evaluation, population
//! statistics and the API server.
//!
//! Every artifact-producing subcommand writes `manifest.json` (config
//! hash, seed, code version, arguments) next to its outputs. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use aicare_advisory::ClientConfig;
use aicare_core::analytics::{population_aggregate, DEFAULT_SAMPLE_SIZE};
use aicare_core::data::{generate_synthetic_cohort, write_cohort, SyntheticSpec};
use aicare_core::model::Checkpoint;
use aicare_service::{serve, ServiceConfig, Store};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use config::RunConfig;
use pipeline::{calibrate_checkpoint, evaluate_checkpoint, folds, load_labeled, summarize, train_fold};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Parser, Debug)]
#[command(name = "aicare", version, about = "Interpretable longitudinal EHR risk prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic cohort (visits.csv, static.csv, schema.json).
    GenSynth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        patients: usize,
        #[arg(long, default_value_t = 10)]
        dynamic: usize,
        #[arg(long = "static", default_value_t = 3)]
        static_: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label, split and fit per-fold preprocessing statistics.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        /// Also import the labeled cohort into this service store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Cross-validated training; one checkpoint per fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Calibrate each fold on its validation part.
        #[arg(long)]
        with_calibration: bool,
    },
    /// Fit temperature and threshold on the checkpoint fold's validation part.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write here instead of updating the checkpoint in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics of a checkpoint on one part of its fold.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Part::Test)]
        fold: Part,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Population (value, importance, risk) triples for one feature.
    Popstats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        feature: String,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the REST API. LLM settings come from AICARE_LLM_* variables.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(dir: &Path, command: &str, config_hash: Option<&str>, seed: u64, args: Value) -> Result<()> {
    write_json(
        &dir.join(MANIFEST_FILE),
        &json!({
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "code_version": env!("CARGO_PKG_VERSION"),
            "args": args,
        }),
    )
}

/// Prints JSON to stdout, or writes it to `out`.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn checkpoint_fold(ckpt: &Checkpoint) -> Result<usize> {
    ckpt.meta.fold.context("checkpoint records no fold")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth { seed, patients, dynamic, static_, out } => {
            let spec = SyntheticSpec { n_patients: patients, n_dynamic: dynamic, n_static: static_, seed, ..SyntheticSpec::default() };
            let cohort = generate_synthetic_cohort(&spec)?;
            write_cohort(&cohort, &out)?;
            write_manifest(&out, "gen-synth", None, seed, json!({ "patients": patients, "dynamic": dynamic, "static": static_ }))?;
            log::info!("wrote {} patients ({} visits) to {}", cohort.records.len(), cohort.n_visits(), out.display());
        }
        Command::Preprocess { config, store } => {
            let cfg = RunConfig::load(&config)?;
            let cohort = load_labeled(&cfg)?;
            let splits = folds(&cfg, &cohort)?;
            for fold in &splits {
                let dir = cfg.out_dir.join(format!("fold-{}", fold.index));
                let pre = aicare_core::data::fit_preprocessor(&cohort, &fold.train, Some(fold.index))?;
                write_json(&dir.join("split.json"), fold)?;
                write_json(&dir.join("preprocessor.json"), &pre)?;
            }
            write_json(
                &cfg.out_dir.join("labels.json"),
                &json!({
                    "schema_hash": cohort.schema.hash(),
                    "patients": cohort.records.len(),
                    "labeled_visits": cohort.n_labeled(),
                    "positive_rate": cohort.positive_rate(),
                    "report": cohort.report,
                }),
            )?;
            if let Some(path) = &store {
                Store::open(path)?.import_cohort(&cohort)?;
                log::info!("imported {} patients into {}", cohort.records.len(), path.display());
            }
            write_manifest(&cfg.out_dir, "preprocess", Some(&cfg.source_hash), cfg.seed, json!({ "folds": cfg.folds }))?;
        }
        Command::Train { config, fold, with_calibration } => {
            let cfg = RunConfig::load(&config)?;
            let cohort = load_labeled(&cfg)?;
            let splits = folds(&cfg, &cohort)?;
            let chosen: Vec<_> = match fold {
                Some(i) if i >= splits.len() => bail!("fold {i} out of range for {} folds", splits.len()),
                Some(i) => vec![&splits[i]],
                None => splits.iter().collect(),
            };
            let mut summaries = Vec::new();
            for f in chosen {
                log::info!("fold {}: {} train, {} val, {} test patients", f.index, f.train.len(), f.val.len(), f.test.len());
                let run = train_fold(&cfg, &cohort, f, with_calibration, |e| {
                    log::info!("fold {} epoch {}: loss {:.4}, val AUPRC {:.4}", f.index, e.epoch, e.train_loss, e.val_auprc)
                })?;
                let dir = cfg.out_dir.join(format!("fold-{}", f.index));
                run.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
                write_json(&dir.join(METRICS_FILE), &run.test)?;
                write_json(&dir.join("training_log.json"), &run.log)?;
                let s = run.summary();
                log::info!("fold {}: test AUROC {:?}, AUPRC {:?}", f.index, s.auroc, s.auprc);
                summaries.push(s);
            }
            if fold.is_none() {
                write_json(&cfg.out_dir.join(SUMMARY_FILE), &summarize(summaries))?;
            }
            write_manifest(
                &cfg.out_dir,
                "train",
                Some(&cfg.source_hash),
                cfg.seed,
                json!({ "fold": fold, "with_calibration": with_calibration }),
            )?;
        }
        Command::Calibrate { config, checkpoint, out } => {
            let cfg = RunConfig::load(&config)?;
            let cohort = load_labeled(&cfg)?;
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            let i = checkpoint_fold(&ckpt)?;
            let splits = folds(&cfg, &cohort)?;
            let f = splits.get(i).with_context(|| format!("fold {i} out of range"))?;
            let artifact = calibrate_checkpoint(&ckpt, &cohort, &f.val, cfg.beta)?;
            ckpt.calibration = Some(artifact.clone());
            ckpt.save(out.as_deref().unwrap_or(&checkpoint))?;
            emit(&artifact, None)?;
        }
        Command::Evaluate { config, checkpoint, fold, out } => {
            let cfg = RunConfig::load(&config)?;
            let cohort = load_labeled(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let i = checkpoint_fold(&ckpt)?;
            let splits = folds(&cfg, &cohort)?;
            let f = splits.get(i).with_context(|| format!("fold {i} out of range"))?;
            let ids = match fold {
                Part::Train => &f.train,
                Part::Val => &f.val,
                Part::Test => &f.test,
            };
            emit(&evaluate_checkpoint(&ckpt, &cohort, ids, cfg.beta)?, out.as_deref())?;
        }
        Command::Popstats { config, checkpoint, feature, n, seed, csv, out } => {
            let cfg = RunConfig::load(&config)?;
            let cohort = load_labeled(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let summary = population_aggregate(&ckpt, &cohort, &feature, n, seed)?;
            if csv {
                match &out {
                    Some(path) => summary.write_csv(std::fs::File::create(path)?)?,
                    None => summary.write_csv(std::io::stdout().lock())?,
                }
            } else {
                emit(&summary, out.as_deref())?;
            }
        }
        Command::Serve { checkpoint, store, port, bind, cors_origin } => {
            let config = ServiceConfig { bind, port, checkpoint, store, cors_origin, llm: ClientConfig::from_env() };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let handle = serve(config).await?;
                println!("listening on http://{}", handle.addr);
                handle.wait().await
            })?;
        }
    }
    Ok(())
}
