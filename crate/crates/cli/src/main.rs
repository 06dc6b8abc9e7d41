//! `bta`: generate synthetic data, train, evaluate, infer, dump interaction
//! matrices and run the gradient check.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric
//! failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bta_core::config::AnswerSpace;
use bta_core::gradcheck::{gradient_check_model, GradCheckConfig};
use bta_core::io::checkpoint::checkpoint_dtype;
use bta_core::io::synth::{write_synthetic, SynthSpec};
use bta_core::io::{self, TraceDump};
use bta_core::params::Bound;
use bta_core::{Ablation, Dataset, ErrorClass, Model, ModelConfig, Precision, Prediction, TaskKind, TrainConfig, Trainer};
use bta_tensor::{DType, Scalar};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "bta", version, about = "Graph interaction network for video question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Softmax scaling factor for every affinity and interaction.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Remove a component (repeatable).
    #[arg(long = "ablate", global = true, value_parser = clap::builder::PossibleValuesParser::new(Ablation::NAMES))]
    ablate: Vec<String>,
    /// Output directory (gen-synth, train) or file (dump-interactions).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest; overrides the config's `manifest`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long = "sample-id", global = true)]
    sample_id: Option<String>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    OpenEnded,
    Count,
    MultiChoice,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::OpenEnded => TaskKind::OpenEnded,
            TaskArg::Count => TaskKind::Count,
            TaskArg::MultiChoice => TaskKind::MultiChoice,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (manifest, tensors, planted answers).
    GenSynth {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train on a manifest; writes checkpoint.btac and report.json.
    Train,
    /// Print the metric of a checkpoint on a manifest.
    Eval,
    /// Print the predicted answer of one or every sample.
    Infer,
    /// Write the interaction matrices of one sample as JSON.
    DumpInteractions,
    /// Compare backpropagation with finite differences on a tiny model.
    GradCheck {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
}

/// Architecture settings; feature sizes and the answer space come from the
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ArchConfig {
    d_model: usize,
    fused_dim: Option<usize>,
    gcn_layers: usize,
    lambda: f64,
    question_self_loops: bool,
    ablation: Ablation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            fused_dim: None,
            gcn_layers: 2,
            lambda: 10.0,
            question_self_loops: false,
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Relative paths resolve against the config file's directory.
    manifest: Option<PathBuf>,
    validation_manifest: Option<PathBuf>,
    model: ArchConfig,
    train: TrainConfig,
    synth: SynthSpec,
}

/// Misuse of flags that clap cannot detect on its own.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Library errors already embed their sources; only add causes not yet shown.
fn render(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<bta_core::Error>() {
            return match err.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Numeric => 3,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let (config, base) = load_config(&cli)?;
    match &cli.command {
        Command::GenSynth { task, samples } => gen_synth(&cli, config, *task, *samples),
        Command::Train => train(&cli, config, &base),
        Command::Eval => run_job(&cli, &config, &base, JobKind::Eval),
        Command::Infer => run_job(&cli, &config, &base, JobKind::Infer { sample: cli.sample_id.clone() }),
        Command::DumpInteractions => {
            let sample = cli
                .sample_id
                .clone()
                .ok_or_else(|| usage("dump-interactions needs --sample-id"))?;
            let out = cli.out.clone().ok_or_else(|| usage("dump-interactions needs --out <file>"))?;
            run_job(&cli, &config, &base, JobKind::Dump { out, sample })
        }
        Command::GradCheck { task } => grad_check(&cli, &config, *task),
    }
}

/// The parsed config (defaults when absent) and the directory relative
/// paths in it resolve against.
fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let Some(path) = &cli.config else {
        return Ok((RunConfig::default(), PathBuf::from(".")));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| bta_core::Error::Config(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| bta_core::Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn manifest_path(cli: &Cli, config: &RunConfig, base: &Path) -> Result<PathBuf> {
    match (&cli.manifest, &config.manifest) {
        (Some(m), _) => Ok(m.clone()),
        (None, Some(m)) => Ok(resolve(base, m)),
        (None, None) => Err(usage("no dataset: pass --manifest or set `manifest` in --config")),
    }
}

fn ablation(cli: &Cli, base: Ablation) -> Result<Ablation> {
    let mut a = base;
    for name in &cli.ablate {
        a.apply(name)?;
    }
    a.validate()?;
    Ok(a)
}

fn gen_synth(cli: &Cli, config: RunConfig, task: Option<TaskArg>, samples: Option<usize>) -> Result<()> {
    let out = cli.out.as_ref().ok_or_else(|| usage("gen-synth needs --out <dir>"))?;
    let mut spec = config.synth;
    if let Some(t) = task {
        spec.task = t.into();
    }
    if let Some(n) = samples {
        spec.samples = n;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let manifest = write_synthetic(&spec, out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn model_config<T: Scalar>(cli: &Cli, arch: &ArchConfig, data: &Dataset<T>) -> Result<ModelConfig> {
    let mut c = ModelConfig::new(data.feature_dim, data.word_dim, arch.d_model, data.answer_space.clone());
    c.fused_dim = arch.fused_dim;
    c.gcn_layers = arch.gcn_layers;
    c.lambda = cli.lambda.unwrap_or(arch.lambda);
    c.question_self_loops = arch.question_self_loops;
    c.ablation = ablation(cli, arch.ablation)?;
    c.validate()?;
    Ok(c)
}

fn train(cli: &Cli, config: RunConfig, base: &Path) -> Result<()> {
    let out = cli.out.as_ref().ok_or_else(|| usage("train needs --out <dir>"))?;
    let mut tc = config.train.clone();
    if let Some(e) = cli.epochs {
        tc.epochs = e;
    }
    if let Some(s) = cli.seed {
        tc.seed = s;
    }
    if let Some(p) = cli.precision {
        tc.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    tc.validate()?;
    match tc.precision {
        Precision::F32 => train_as::<f32>(cli, &config, base, tc, out),
        Precision::F64 => train_as::<f64>(cli, &config, base, tc, out),
    }
}

fn train_as<T: Scalar>(cli: &Cli, config: &RunConfig, base: &Path, tc: TrainConfig, out: &Path) -> Result<()> {
    let data = io::load_manifest::<T>(&manifest_path(cli, config, base)?)?;
    let validation = config
        .validation_manifest
        .as_ref()
        .map(|p| io::load_manifest::<T>(&resolve(base, p)))
        .transpose()?;
    let mc = model_config(cli, &config.model, &data)?;
    let model = Model::<T>::new(mc, tc.seed)?;
    let mut trainer = Trainer::new(model, tc)?;
    let report = trainer.fit_with(&data, validation.as_ref(), |r| {
        eprintln!(
            "epoch {:>3}  lr {:.3e}  loss {:.6}  {}",
            r.epoch, r.learning_rate, r.mean_loss, r.metric
        );
    })?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = cli.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.btac"));
    io::save_checkpoint(&trainer.checkpoint(), &ckpt)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    io::write_atomic(&out.join("report.json"), text.as_bytes())?;
    println!("best epoch {}  {}", report.best_epoch, report.best_metric);
    Ok(())
}

/// Dispatches on the checkpoint's stored precision.
fn run_job(cli: &Cli, config: &RunConfig, base: &Path, kind: JobKind) -> Result<()> {
    let path = cli.checkpoint.as_ref().ok_or_else(|| usage("--checkpoint <file> is required"))?;
    let job = CheckpointJob {
        kind,
        manifest: manifest_path(cli, config, base)?,
        lambda: cli.lambda,
    };
    match checkpoint_dtype(path)? {
        DType::F32 => job.run::<f32>(path),
        DType::F64 => job.run::<f64>(path),
    }
}

enum JobKind {
    Eval,
    Infer { sample: Option<String> },
    Dump { out: PathBuf, sample: String },
}

struct CheckpointJob {
    kind: JobKind,
    manifest: PathBuf,
    lambda: Option<f64>,
}

impl CheckpointJob {
    fn run<T: Scalar>(self, path: &Path) -> Result<()> {
        let ckpt = io::load_checkpoint::<T>(path)?;
        let mut model = ckpt.restore()?;
        if let Some(l) = self.lambda {
            model.config.lambda = l;
            model.pipeline.lambda = l;
        }
        let data = io::load_manifest::<T>(&self.manifest)?;
        check_compatible(&model.config, &data)?;
        match self.kind {
            JobKind::Eval => {
                println!("{}", bta_core::evaluate(&model, &data)?);
            }
            JobKind::Infer { sample } => {
                let selected = match &sample {
                    Some(id) => vec![data.sample(id)?],
                    None => data.samples.iter().collect(),
                };
                let mut stdout = std::io::stdout().lock();
                for s in selected {
                    let line = format!("{} {}", s.id, describe(&model.predict(s)?, &data.answer_space));
                    match writeln!(stdout, "{line}") {
                        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                        other => other?,
                    }
                }
            }
            JobKind::Dump { out, sample } => {
                let s = data.sample(&sample)?;
                let bound = Bound::inference(&model.params);
                let fwd = model.forward(&bound, s)?;
                let pass = &fwd.passes[0];
                let dump = TraceDump::new(s, data.frames_per_clip, &pass.pipeline.trace, &pass.pipeline.graphs);
                io::dump_interaction_trace(&dump, &out)?;
                println!("{}", out.display());
            }
        }
        Ok(())
    }
}

fn check_compatible<T: Scalar>(c: &ModelConfig, data: &Dataset<T>) -> Result<()> {
    if c.feature_dim != data.feature_dim || c.word_dim != data.word_dim || c.answer_space != data.answer_space {
        return Err(bta_core::Error::ArchitectureMismatch(format!(
            "checkpoint expects feature_dim {}, word_dim {} and {:?}; dataset has {}, {} and {:?}",
            c.feature_dim, c.word_dim, c.answer_space, data.feature_dim, data.word_dim, data.answer_space
        ))
        .into());
    }
    Ok(())
}

fn describe(p: &Prediction, space: &AnswerSpace) -> String {
    match (p, space) {
        (Prediction::Label { index, .. }, AnswerSpace::OpenEnded { labels }) => {
            format!("answer {index} {}", labels[*index])
        }
        (Prediction::Count { raw, answer }, _) => format!("answer {answer} raw {raw:.4}"),
        (Prediction::Choice { index, scores }, _) => {
            let s: Vec<String> = scores.iter().map(|v| format!("{v:.6}")).collect();
            format!("answer {index} scores {}", s.join(" "))
        }
        (other, _) => format!("{other:?}"),
    }
}

fn grad_check(cli: &Cli, config: &RunConfig, task: Option<TaskArg>) -> Result<()> {
    let mut gc = GradCheckConfig::default();
    if let Some(s) = cli.seed {
        gc.seed = s;
    }
    gc.lambda = cli.lambda.unwrap_or(config.model.lambda);
    let tasks = match task {
        Some(t) => vec![t.into()],
        None => vec![TaskKind::OpenEnded, TaskKind::Count, TaskKind::MultiChoice],
    };
    let mut failed = Vec::new();
    for t in tasks {
        let report = gradient_check_model(t, &gc)?;
        for g in &report.groups {
            println!("{:<13} {:<12} {:>6} {:.3e}", t.name(), g.name, g.elements, g.max_rel_error);
        }
        failed.extend(report.failures(gc.tolerance).iter().map(|g| format!("{}:{}", t.name(), g.name)));
    }
    if !failed.is_empty() {
        bail!(bta_core::Error::GradCheck(format!(
            "relative error above {} in {}",
            gc.tolerance,
            failed.join(", ")
        )));
    }
    println!("ok");
    Ok(())
}
