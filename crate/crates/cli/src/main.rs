//! Command line front end: dataset synthesis, training, evaluation, gradient
//! checks, and loss ablations. Every command reads its settings from a JSON
//! config file, applies the few CLI overrides, and echoes the resolved config
//! to a run.json beside its outputs so runs are diffable and repeatable.
//!
//! Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use wafl_core::checkpoint::{load_checkpoint, save_checkpoint};
use wafl_core::datamodel::{
    load_features, load_manifest, save_features, save_manifest, Dataset, PadConfig,
};
use wafl_core::error::Error as CoreError;
use wafl_core::eval::{evaluate, EvalConfig, EvalReport};
use wafl_core::gradcheck;
use wafl_core::loss::LossKind;
use wafl_core::model::{ModelBundle, ModelConfig};
use wafl_core::synth::{generate, SynthConfig};
use wafl_core::trainer::{score_dataset, train, write_loss_log, TrainConfig};

#[derive(Parser)]
#[command(name = "wafl", version, about = "Word-anchored temporal forgery localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset into a directory
    Synth {
        /// JSON file holding the generator settings
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset directory
    Train {
        /// JSON file with optional "train", "model", and "pad" sections
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory holding manifest.json and features.bin
        #[arg(long)]
        data: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override the training seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a dataset with a checkpoint and write an evaluation report
    Eval {
        /// Checkpoint file written by `wafl train`
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory holding manifest.json and features.bin
        #[arg(long)]
        data: PathBuf,
        /// JSON file holding the evaluation settings
        #[arg(long)]
        config: PathBuf,
        /// Where to write the report JSON
        #[arg(long)]
        report: PathBuf,
        /// Merge adjacent tokens scoring above the merge threshold
        #[arg(long)]
        merge_adjacent: bool,
        /// Score threshold used when merging adjacent tokens
        #[arg(long)]
        merge_threshold: Option<f64>,
    },
    /// Check analytic gradients against finite differences
    Gradcheck,
    /// Re-train once per loss kind with identical seeds and compare metrics
    Ablate {
        /// JSON file with optional "train", "model", "pad", and "eval" sections
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory holding manifest.json and features.bin
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated loss kinds to compare (aca, focal, bce)
        #[arg(long, value_delimiter = ',', required = true)]
        losses: Vec<String>,
        /// Where to write the comparison table JSON
        #[arg(long)]
        report: PathBuf,
        /// Override the training seed shared by all runs
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(_) => Failure::Numeric(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Sectioned training config; absent sections fall back to defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainFileConfig {
    train: TrainConfig,
    model: ModelConfig,
    pad: PadConfig,
}

/// Ablation adds an eval section on top of the training sections.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AblateFileConfig {
    train: TrainConfig,
    model: ModelConfig,
    pad: PadConfig,
    eval: EvalConfig,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_run_echo<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<(), Failure> {
    #[derive(Serialize)]
    struct RunEcho<'a, T> {
        command: &'a str,
        config: &'a T,
    }
    write_json(&dir.join("run.json"), &RunEcho { command, config })
}

fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    let manifest = dir.join("manifest.json");
    let features = dir.join("features.bin");
    let videos = load_manifest(&manifest)
        .map_err(|e| Failure::Data(format!("{}: {e}", manifest.display())))?;
    let store = load_features(&features)
        .map_err(|e| Failure::Data(format!("{}: {e}", features.display())))?;
    Ok(Dataset::new(videos, store)?)
}

fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg: SynthConfig = read_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let dataset = generate(&cfg)?;
    fs::create_dir_all(out)?;
    save_manifest(out.join("manifest.json"), &dataset.videos)?;
    save_features(out.join("features.bin"), &dataset.features)?;
    write_run_echo(out, "synth", &cfg)?;
    println!(
        "wrote {} videos / {} tokens to {}",
        dataset.videos.len(),
        dataset.token_count(),
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg: TrainFileConfig = read_config(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let dataset = load_dataset(data)?;
    let mut bundle = ModelBundle::init(cfg.model, cfg.train.seed)?;
    let log = train(&dataset, &mut bundle, &cfg.pad, &cfg.train)?;
    fs::create_dir_all(out)?;
    save_checkpoint(out.join("model.ckpt"), &bundle, &cfg.pad)?;
    write_loss_log(&out.join("loss_log.jsonl"), &log)?;
    write_run_echo(out, "train", &cfg)?;
    let last = log.last().map(|e| e.total).unwrap_or(f64::NAN);
    println!("trained {} iterations, final loss {last:.6}", cfg.train.iterations);
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    config: &Path,
    report_path: &Path,
    merge_adjacent: bool,
    merge_threshold: Option<f64>,
) -> Result<(), Failure> {
    let mut cfg: EvalConfig = read_config(config)?;
    if merge_adjacent {
        cfg.merge_adjacent = true;
    }
    if let Some(threshold) = merge_threshold {
        cfg.merge_score_threshold = threshold;
    }
    let (bundle, pad) = load_checkpoint(ckpt)?;
    let dataset = load_dataset(data)?;
    let scores = score_dataset(&dataset, &bundle, &pad)?;
    let report = evaluate(&dataset, &scores, &cfg)?;
    write_json(report_path, &report)?;
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        write_run_echo(dir, "eval", &cfg)?;
    }
    for (tau, ap) in &report.ap {
        println!("AP@{tau} {ap:.4}");
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<(), Failure> {
    let rows = gradcheck::run_all(0)?;
    let mut all_passed = true;
    println!("{:<18} {:>12}  {}", "check", "max rel err", "result");
    for row in &rows {
        let verdict = if row.passed { "pass" } else { "FAIL" };
        println!("{:<18} {:>12.3e}  {verdict}", row.name, row.max_rel_err);
        all_passed &= row.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure::Numeric("gradient check failed".into()))
    }
}

#[derive(Serialize)]
struct AblationRow {
    loss: String,
    report: EvalReport,
}

fn cmd_ablate(
    config: &Path,
    data: &Path,
    losses: &[String],
    report_path: &Path,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut cfg: AblateFileConfig = read_config(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let kinds = losses
        .iter()
        .map(|name| LossKind::from_str(name))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if kinds.is_empty() {
        return Err(Failure::Usage("at least one loss kind is required".into()));
    }
    let dataset = load_dataset(data)?;
    let mut rows = Vec::new();
    for kind in kinds {
        let train_cfg = TrainConfig { loss_kind: kind, ..cfg.train.clone() };
        let mut bundle = ModelBundle::init(cfg.model, train_cfg.seed)?;
        train(&dataset, &mut bundle, &cfg.pad, &train_cfg)?;
        let scores = score_dataset(&dataset, &bundle, &cfg.pad)?;
        let report = evaluate(&dataset, &scores, &cfg.eval)?;
        let ap = report.ap_at(0.95).unwrap_or(f64::NAN);
        println!("{kind}: AP@0.95 {ap:.4}");
        rows.push(AblationRow { loss: kind.to_string(), report });
    }
    write_json(report_path, &rows)?;
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        write_run_echo(dir, "ablate", &cfg)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config, out, *seed),
        Command::Train { config, data, out, seed } => cmd_train(config, data, out, *seed),
        Command::Eval { ckpt, data, config, report, merge_adjacent, merge_threshold } => {
            cmd_eval(ckpt, data, config, report, *merge_adjacent, *merge_threshold)
        }
        Command::Gradcheck => cmd_gradcheck(),
        Command::Ablate { config, data, losses, report, seed } => {
            cmd_ablate(config, data, losses, report, *seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
