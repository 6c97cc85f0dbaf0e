use clap::{Args, Parser, Subcommand};
use mmsense::dataio::{load_samples, parse_manifest, DataError, Modality, TimeSeriesSample};
use mmsense::experiments::{
    evaluate, report_write, run_adaptation, run_cross_domain, run_orientation, run_single_env, ConfusionMatrix,
    ExperimentError, OrientationSel, Report, TrainConfig,
};
use mmsense::model::{load_saved, ModelError};
use mmsense::optim::{AdamConfig, OptimError};
use mmsense::synth::{gen_dataset, preset, SynthConfig, SynthError, PRESET_NAMES};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mmsense", version, about = "Gesture recognition from mmWave beam SNR and Wi-Fi CSI")]
struct Cli {
    /// Worker threads for parallel stages (falls back to MMSENSE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train and test on one environment with a 75:25 split.
    Train(TrainArgs),
    /// Evaluate a saved model on a manifest.
    Eval(EvalArgs),
    /// Train on one environment, test on another.
    Xenv(XenvArgs),
    /// Cross-environment training with k target instances per gesture and person.
    Adapt(AdaptArgs),
    /// Train on one orientation, test on another.
    Orient(OrientArgs),
    /// Print the summary of a report directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = PRESET_NAMES, default_value = "single-env", conflicts_with = "config")]
    preset: String,
    /// Generator configuration JSON instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Instances per gesture, person, orientation and environment.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    instances: Option<u64>,
    /// beamsnr, csi or both.
    #[arg(long, default_value = "both")]
    modality: String,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    modality: Modality,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Mini-batch size; `auto` is 16 for beamsnr and 64 for csi.
    #[arg(long, default_value = "auto")]
    batch: String,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time steps fed to the network; `auto` is 128 for beamsnr and 512 for csi.
    #[arg(long, default_value = "auto")]
    input_length: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    orientation: Option<i32>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    orientation: Option<i32>,
    /// Directory for `report.txt` and `confusion.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct XenvArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train_env: String,
    #[arg(long)]
    test_env: String,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    base_env: String,
    #[arg(long)]
    adapt_env: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct OrientArgs {
    #[command(flatten)]
    common: Common,
    /// Degrees, or `both`.
    #[arg(long = "train")]
    train_orientation: OrientationSel,
    /// Degrees, or `both`.
    #[arg(long = "test")]
    test_orientation: OrientationSel,
    #[arg(long)]
    env: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    dir: PathBuf,
}

/// Exit status: 1 usage or configuration, 2 data or I/O, 3 numeric failure.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) => Self::usage(e.to_string()),
            SynthError::Data(d) => d.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Config(_) => 1,
            ExperimentError::Model(ModelError::Config(_)) => 1,
            ExperimentError::Diverged { .. } => 3,
            ExperimentError::Optim(OptimError::NonFiniteGradient { .. } | OptimError::NonFiniteMetric(_)) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn resolve_auto(value: &str, auto: usize, name: &str) -> Result<usize, Failure> {
    if value == "auto" {
        return Ok(auto);
    }
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Failure::usage(format!("--{name} must be a positive integer or auto, got {value:?}"))),
    }
}

impl Common {
    fn train_config(&self) -> Result<TrainConfig, Failure> {
        let mut config = TrainConfig::new(self.modality, self.seed);
        config.epochs = self.epochs;
        config.batch_size = resolve_auto(&self.batch, self.modality.default_batch_size(), "batch")?;
        config.input_length = resolve_auto(&self.input_length, self.modality.default_input_length(), "input-length")?;
        config.adam = AdamConfig { lr: self.lr, ..AdamConfig::default() };
        config.validate()?;
        Ok(config)
    }

    fn load(&self) -> Result<Vec<TimeSeriesSample>, Failure> {
        load_filtered(&self.manifest, Some(self.modality))
    }
}

fn load_filtered(manifest: &Path, modality: Option<Modality>) -> Result<Vec<TimeSeriesSample>, Failure> {
    let metas: Vec<_> =
        parse_manifest(manifest)?.into_iter().filter(|m| modality.is_none_or(|x| m.modality == x)).collect();
    log::info!("loading {} samples from {}", metas.len(), manifest.display());
    Ok(load_samples(&metas)?)
}

fn finish(mut report: Report, common: &Common) -> Result<(), Failure> {
    report.settings.insert("manifest".into(), common.manifest.display().to_string().into());
    report_write(&report, &common.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            SynthConfig::from_json(&text)?
        }
        None => preset(&args.preset)?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.instances {
        config.instances_per_label = n as usize;
    }
    config.modalities = match args.modality.as_str() {
        "both" => config.modalities,
        other => vec![other.parse::<Modality>().map_err(Failure::usage)?],
    };
    let metas = gen_dataset(&config, &args.out)?;
    println!("wrote {} samples to {}", metas.len(), args.out.join("manifest.jsonl").display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let saved = load_saved(&args.model)?;
    let modality = match saved.model.config().in_channels {
        36 => Modality::BeamSnr,
        256 => Modality::Csi,
        c => return Err(Failure::usage(format!("model has {c} input channels; cannot infer the modality"))),
    };
    let samples: Vec<TimeSeriesSample> = load_filtered(&args.manifest, Some(modality))?
        .into_iter()
        .filter(|s| args.env.as_deref().is_none_or(|e| s.meta.environment == e))
        .filter(|s| args.orientation.is_none_or(|o| s.meta.orientation_deg == o))
        .collect();
    if samples.is_empty() {
        return Err(Failure::data(format!("no {modality} samples match in {}", args.manifest.display())));
    }
    let cm = evaluate(&saved, &samples)?;
    let text = confusion_summary(&cm);
    print!("{text}");
    if let Some(out) = &args.out {
        let write = |name: &str, body: &str| {
            let path = out.join(name);
            std::fs::write(&path, body).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
        };
        std::fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
        write("report.txt", &text)?;
        write("confusion.csv", &cm.to_csv())?;
    }
    Ok(())
}

fn confusion_summary(cm: &ConfusionMatrix) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    let mut out = format!("overall accuracy: {} ({}/{})\nper-class accuracy:\n", fmt(cm.accuracy()), cm.correct(), cm.total());
    for l in mmsense::dataio::GestureLabel::ALL {
        out.push_str(&format!("  {:<4} {} ({}/{})\n", l.name(), fmt(cm.class_accuracy(l)), cm.count(l, l), cm.row_total(l)));
    }
    out
}

fn report(args: &ReportArgs) -> Result<(), Failure> {
    let path = args.dir.join("report.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("MMSENSE_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| Failure::usage(format!("MMSENSE_THREADS={v:?} is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("thread count must be ≥ 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::usage(e.to_string()))?;
    }

    match &cli.command {
        Command::Synth(args) => synth(args),
        Command::Train(args) => {
            let config = args.common.train_config()?;
            let samples = args.common.load()?;
            let report = run_single_env(&samples, args.env.as_deref(), args.orientation, &config)?;
            finish(report, &args.common)
        }
        Command::Eval(args) => eval(args),
        Command::Xenv(args) => {
            let config = args.common.train_config()?;
            if args.train_env == args.test_env {
                return Err(Failure::usage(format!("--train-env and --test-env are both {:?}", args.train_env)));
            }
            let samples = args.common.load()?;
            finish(run_cross_domain(&samples, &args.train_env, &args.test_env, &config)?, &args.common)
        }
        Command::Adapt(args) => {
            let config = args.common.train_config()?;
            if args.base_env == args.adapt_env {
                return Err(Failure::usage(format!("--base-env and --adapt-env are both {:?}", args.base_env)));
            }
            let samples = args.common.load()?;
            finish(run_adaptation(&samples, &args.base_env, &args.adapt_env, args.k, &config)?, &args.common)
        }
        Command::Orient(args) => {
            let config = args.common.train_config()?;
            let samples = args.common.load()?;
            let report =
                run_orientation(&samples, args.train_orientation, args.test_orientation, args.env.as_deref(), &config)?;
            finish(report, &args.common)
        }
        Command::Report(args) => report(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
