//! `qfusion`: generate synthetic multimodal data, train the fusion model,
//! evaluate it and inspect its learned sample qualities.
//!
//! Hyperparameters live in one TOML file (`--config`); flags only name
//! inputs, outputs and seeds. Every command writes `config.resolved.toml`
//! with all defaults expanded next to its outputs. On failure a single JSON
//! line `{"error": <kind>, "message": ...}` goes to stderr and the exit code
//! is 1.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qfusion::checkpoint;
use qfusion::config::Config;
use qfusion::error::{Error, Result};
use qfusion::eval::{self, Fusion, QualityRow};
use qfusion::synthdata::{self, read_dataset, write_dataset, Dataset, Protocol};
use qfusion::trainer::{train, OptimizerState, TrainLog, TrainSpec};

const RESOLVED: &str = "config.resolved.toml";
const MODEL_FILE: &str = "model.qfck";
const LOG_FILE: &str = "train_log.csv";

#[derive(Parser, Debug)]
#[command(name = "qfusion", version, about = "Quality-aware multi-sample multimodal fusion on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (QADS file).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `generator.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the training identities of a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints, the log and the resolved config.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the top-level `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out identities.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path; ROC and CMC CSVs are written beside it.
        #[arg(long)]
        report: PathBuf,
        /// Overrides `eval.protocol`; the config's parameters are kept when
        /// the kind matches.
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        /// Overrides `eval.fusion`.
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
    },
    /// Per-sample learned quality against the generator's ground truth.
    QualityReport {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Verification,
    Identification,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FusionArg {
    Quality,
    Avg,
    Sum,
    Major,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Quality => Fusion::Quality,
            FusionArg::Avg => Fusion::Avg,
            FusionArg::Sum => Fusion::Sum,
            FusionArg::Major => Fusion::Major,
        }
    }
}

fn main() -> ExitCode {
    let defaults = Config::default().resolved().unwrap_or_default();
    let help = format!("Configuration defaults (every key may be overridden in --config):\n\n{defaults}");
    let matches = Cli::command()
        .after_long_help(help.clone())
        .mut_subcommands(|c| c.after_long_help(help.clone()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { config, out, seed } => cmd_gen(&load_config(config.as_deref())?, &out, seed),
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
        } => cmd_train(&load_config(config.as_deref())?, &data, &out, seed, resume.as_deref()),
        Command::Eval {
            config,
            model,
            data,
            report,
            protocol,
            fusion,
        } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(p) = protocol {
                c.eval.protocol = protocol_override(&c.eval.protocol, p);
            }
            if let Some(f) = fusion {
                c.eval.fusion = f.into();
            }
            cmd_eval(&c, &model, &data, &report)
        }
        Command::QualityReport {
            config,
            model,
            data,
            out,
        } => cmd_quality_report(&load_config(config.as_deref())?, &model, &data, &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn protocol_override(current: &Protocol, arg: ProtocolArg) -> Protocol {
    match (arg, current) {
        (ProtocolArg::Verification, p @ Protocol::Verification { .. }) => p.clone(),
        (ProtocolArg::Identification, p @ Protocol::Identification { .. }) => p.clone(),
        (ProtocolArg::Verification, _) => qfusion::config::EvalConfig::default().protocol,
        (ProtocolArg::Identification, _) => Protocol::Identification { gallery_per_class: 4 },
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn parent_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

fn write_resolved(dir: &Path, config: &Config) -> Result<()> {
    ensure_dir(dir)?;
    fs::write(dir.join(RESOLVED), config.resolved()?)?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(config: &Config, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = config.clone();
    if let Some(s) = seed {
        config.generator.seed = s;
    }
    let data = synthdata::generate(&config.generator)?;
    ensure_dir(parent_of(out))?;
    let mut w = create(out)?;
    write_dataset(&mut w, &data)?;
    w.flush()?;
    write_resolved(parent_of(out), &config)
}

/// The run's configuration as actually used: the dataset's generator
/// replaces the config's.
fn with_dataset(config: &Config, data: &Dataset) -> Result<Config> {
    let mut c = config.clone();
    c.generator = data.config.clone();
    c.validate()?;
    Ok(c)
}

fn cmd_train(config: &Config, data_path: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let data = load_dataset(data_path)?;
    let mut config = with_dataset(config, &data)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    ensure_dir(out)?;
    write_resolved(out, &config)?;

    let tc = &config.trainer;
    let (mut model, mut state) = match resume {
        Some(path) => {
            let (model, state) = checkpoint::load(path)?;
            if model.layout.shape != config.model_shape() || model.layout.config != config.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was trained with a different model shape or model config",
                    path.display()
                )));
            }
            if state.momentum != tc.momentum || state.weight_decay != tc.weight_decay {
                return Err(Error::Config("checkpoint optimizer settings differ from [trainer]".into()));
            }
            (model, state)
        }
        None => {
            let model = qfusion::fusion::FusionModel::new(config.model_shape(), config.model.clone(), config.seed)?;
            let state = OptimizerState::new(&model.store, tc.momentum, tc.weight_decay);
            (model, state)
        }
    };
    let start = state.step;
    let spec = TrainSpec {
        hp: &config.loss,
        dropout: &config.dropout,
        trainer: tc,
        seed: config.seed,
    };
    let mut log = TrainLog::default();
    let total_steps = data.train_sets().len().div_ceil(tc.batch_size) as u64 * tc.epochs as u64;
    let mut save = |m: &qfusion::fusion::FusionModel, s: &OptimizerState| -> Result<()> {
        checkpoint::save(&out.join(format!("ckpt-{:06}.qfck", s.step)), m, s)?;
        if s.step == total_steps {
            checkpoint::save(&out.join(MODEL_FILE), m, s)?;
        }
        Ok(())
    };
    let result = train(&mut model, &mut state, &data.train_sets(), &spec, &mut log, &mut save);
    // The log is written even when training aborts, so the failing step is visible.
    write_log(&out.join(LOG_FILE), &log, start, resume.is_some())?;
    result?;
    if tc.epochs == 0 || start >= total_steps {
        checkpoint::save(&out.join(MODEL_FILE), &model, &state)?;
    }
    Ok(())
}

/// Write the training log. A resumed run keeps the earlier rows of an
/// existing log (those before its first step) and appends its own.
fn write_log(path: &Path, log: &TrainLog, start: u64, resumed: bool) -> Result<()> {
    let mut fresh = Vec::new();
    log.write_csv(&mut fresh)?;
    let fresh = String::from_utf8(fresh).map_err(|e| Error::Format(e.to_string()))?;
    if !(resumed && path.exists()) {
        fs::write(path, fresh)?;
        return Ok(());
    }
    let mut lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let keep = |line: &String| {
        line.split(',')
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .is_some_and(|step| step < start)
    };
    let header = lines.first().cloned();
    lines.retain(keep);
    let mut text = header.unwrap_or_default();
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    for l in fresh.lines().skip(1) {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn heldout(data: &Dataset) -> Result<Vec<qfusion::fusion::MultimodalSampleSet>> {
    let sets = data.heldout_sets();
    if sets.is_empty() {
        return Err(Error::InvalidInput("dataset has no held-out identities to evaluate on".into()));
    }
    Ok(sets)
}

fn cmd_eval(config: &Config, model_path: &Path, data_path: &Path, report_path: &Path) -> Result<()> {
    let data = load_dataset(data_path)?;
    let config = with_dataset(config, &data)?;
    let (model, _) = checkpoint::load(model_path)?;
    let sets = heldout(&data)?;
    let split = synthdata::split(&sets, &config.eval.protocol, config.eval.seed)?;
    let report = eval::evaluate(&model, &sets, &split, config.eval.fusion, config.eval.gallery)?;

    let dir = parent_of(report_path);
    write_resolved(dir, &config)?;
    fs::write(report_path, report.to_json()? + "\n")?;
    let stem = report_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    match split {
        synthdata::Split::Verification(_) => report.write_roc_csv(create(&dir.join(format!("{stem}.roc.csv")))?)?,
        synthdata::Split::Identification(_) => report.write_cmc_csv(create(&dir.join(format!("{stem}.cmc.csv")))?)?,
    }
    Ok(())
}

const QUALITY_LEVELS: usize = 5;

fn correlation_json(result: Result<f64>) -> Result<serde_json::Value> {
    match result {
        Ok(r) => Ok(json!({ "value": r })),
        Err(Error::Undefined(msg)) => Ok(json!({ "value": null, "undefined": msg })),
        Err(e) => Err(e),
    }
}

fn cmd_quality_report(config: &Config, model_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(data_path)?;
    let config = with_dataset(config, &data)?;
    let (model, _) = checkpoint::load(model_path)?;
    let emb = eval::embed(&model, &data.sets, qfusion::fusion::FusionMode::Quality)?;
    let rows = eval::quality_rows(&data.sets, &emb);
    ensure_dir(out)?;
    write_resolved(out, &config)?;

    let mut w = create(&out.join("quality_table.csv"))?;
    writeln!(w, "set,label,split,modality,sample,gamma,ground_truth,score,weight")?;
    for r in &rows {
        let split = if data.is_train(&data.sets[r.set]) { "train" } else { "heldout" };
        writeln!(
            w,
            "{},{},{split},{},{},{},{},{},{}",
            r.set,
            r.label,
            r.modality,
            r.sample,
            r.gamma,
            1.0 - r.gamma,
            r.score,
            r.weight
        )?;
    }
    w.flush()?;

    let heldout_rows: Vec<QualityRow> = rows
        .iter()
        .filter(|r| !data.is_train(&data.sets[r.set]))
        .cloned()
        .collect();
    let modalities = data.config.modalities.len();
    let per_modality = (0..modalities)
        .map(|k| {
            let sub: Vec<QualityRow> = heldout_rows.iter().filter(|r| r.modality == k).cloned().collect();
            correlation_json(eval::quality_correlation(&sub))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = json!({
        "rows": rows.len(),
        "heldout_rows": heldout_rows.len(),
        "spearman_quality": correlation_json(eval::quality_correlation(&heldout_rows))?,
        "spearman_quality_per_modality": per_modality,
        "spearman_quality_all_rows": correlation_json(eval::quality_correlation(&rows))?,
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(out.join("quality_summary.json"), text + "\n")?;

    write_histogram(&out.join("quality_hist.csv"), &rows, modalities)
}

/// Distribution of estimated scores and of ground truth per modality,
/// quantized to equal-width levels on `[0, 1]`.
fn write_histogram(path: &Path, rows: &[QualityRow], modalities: usize) -> Result<()> {
    let level = |v: f64| ((v * QUALITY_LEVELS as f64) as usize).min(QUALITY_LEVELS - 1);
    let mut w = create(path)?;
    writeln!(w, "modality,source,level_lo,level_hi,count,fraction")?;
    for k in 0..modalities {
        let sub: Vec<&QualityRow> = rows.iter().filter(|r| r.modality == k).collect();
        for (source, value) in [
            ("estimated", &(|r: &QualityRow| r.score) as &dyn Fn(&QualityRow) -> f64),
            ("ground_truth", &|r: &QualityRow| 1.0 - r.gamma),
        ] {
            let mut counts = [0usize; QUALITY_LEVELS];
            for r in &sub {
                counts[level(value(r))] += 1;
            }
            for (i, c) in counts.iter().enumerate() {
                let lo = i as f64 / QUALITY_LEVELS as f64;
                let hi = (i + 1) as f64 / QUALITY_LEVELS as f64;
                let frac = if sub.is_empty() { 0.0 } else { *c as f64 / sub.len() as f64 };
                writeln!(w, "{k},{source},{lo},{hi},{c},{frac}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
