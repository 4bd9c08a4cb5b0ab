//! `spiderp` command-line interface.
//!
//! Settings resolve in three layers: built-in defaults, then the TOML file
//! given with `--config`, then command-line flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use spiderp::eval::BaselineMode;
use spiderp::fear_model::FrEnsemble;
use spiderp::pipeline::{self, PipelineConfig, PipelineError};
use spiderp::signal::{FeatureWindow, Manifest, Role};
use spiderp::synth::{gen_cohort, MANIFEST_FILE};

const LOG_ENV: &str = "SPIDERP_LOG";

#[derive(Parser, Debug)]
#[command(name = "spiderp", version, about = "PTSD severity estimation from ECG and GSR recordings")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic source and target cohort.
    Synth(SynthArgs),
    /// Write the windowed features of a manifest to CSV.
    Featurize(FeaturizeArgs),
    /// Train the fear-response ensemble on annotated source subjects.
    TrainFr(TrainArgs),
    /// Write fear curves and static features for target subjects.
    Curves(CurvesArgs),
    /// Leave-one-out PCL-M evaluation with baselines.
    Evaluate(EvaluateArgs),
    /// Print a summary of an evaluation report.
    Report(ReportArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for the cohort.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
    /// Record duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Sampling rate in Hz.
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Cohort manifest CSV.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Uniform resampling rate of the derived channels.
    #[arg(long)]
    grid_hz: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoleArg {
    Source,
    Target,
    All,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    role: RoleArg,
}

#[derive(Args, Debug, Default)]
struct MlpArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_units: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    mlp: MlpArgs,
    /// Where to write the model file.
    #[arg(long, visible_alias = "out")]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of interior bandwidth grid points in (0, 0.5).
    #[arg(long)]
    sigma_steps: Option<usize>,
    /// Baseline summary statistic.
    #[arg(long, value_parser = ["mean", "mode"])]
    baseline: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json file or the directory containing it.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn usage_error(message: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, message).exit()
}

fn require(value: Option<PathBuf>, flag: &str) -> PathBuf {
    value.unwrap_or_else(|| usage_error(&format!("{flag} is required (flag or config file)")))
}

impl CommonArgs {
    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(m) = &self.manifest {
            config.paths.manifest = Some(m.clone());
        }
        if let Some(g) = self.grid_hz {
            config.grid_hz = g;
        }
    }
}

impl MlpArgs {
    fn apply(&self, config: &mut PipelineConfig) {
        let m = &mut config.mlp;
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.n_units {
            m.n_units = v;
        }
        if let Some(v) = self.depth {
            m.depth = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            m.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            m.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            m.weight_decay = v;
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
    }
}

fn load_manifest(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    let path = require(config.paths.manifest.clone(), "--manifest");
    Ok(Manifest::read(&path)?)
}

fn load_model(config: &PipelineConfig) -> Result<FrEnsemble, PipelineError> {
    let path = require(config.paths.model.clone(), "--model");
    Ok(FrEnsemble::load(&path)?)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };

    match cli.command {
        Command::Synth(args) => {
            let s = &mut config.synth;
            if let Some(v) = args.seed {
                s.seed = v;
            }
            if let Some(v) = args.n_source {
                s.n_source_subjects = v;
            }
            if let Some(v) = args.n_target {
                s.n_target_subjects = v;
            }
            if let Some(v) = args.duration {
                s.record_duration_s = v;
            }
            if let Some(v) = args.fs {
                s.fs = v;
            }
            config.validate()?;
            let manifest = gen_cohort(&config.synth, &args.out)?;
            println!(
                "wrote {} subjects to {}",
                manifest.entries.len(),
                args.out.join(MANIFEST_FILE).display()
            );
        }
        Command::Featurize(args) => {
            args.common.apply(&mut config);
            config.validate()?;
            let manifest = load_manifest(&config)?;
            let roles: &[Role] = match args.role {
                RoleArg::Source => &[Role::Source],
                RoleArg::Target => &[Role::Target],
                RoleArg::All => &[Role::Source, Role::Target],
            };
            let mut windows: Vec<FeatureWindow> = Vec::new();
            for &role in roles {
                for (_, w) in pipeline::featurize_role(&manifest, role, config.grid_hz)? {
                    windows.extend(w);
                }
            }
            pipeline::write_windows_csv(&args.out, &windows)?;
            println!("wrote {} windows to {}", windows.len(), args.out.display());
        }
        Command::TrainFr(args) => {
            args.common.apply(&mut config);
            args.mlp.apply(&mut config);
            if let Some(m) = args.model {
                config.paths.model = Some(m);
            }
            config.validate()?;
            let model_path = require(config.paths.model.clone(), "--model");
            let manifest = load_manifest(&config)?;
            let trained = pipeline::train_fr(&manifest, &config)?;
            trained.ensemble.save(&model_path)?;
            for (i, acc) in trained.fold_accuracy.iter().enumerate() {
                println!("fold {i}: held-out accuracy {acc:.4}");
            }
            println!("mean fold accuracy {:.4}", trained.mean_fold_accuracy());
            log::info!("model written to {}", model_path.display());
        }
        Command::Curves(args) => {
            args.common.apply(&mut config);
            if let Some(m) = args.model {
                config.paths.model = Some(m);
            }
            if let Some(o) = args.out {
                config.paths.out_dir = Some(o);
            }
            config.validate()?;
            let out = require(config.paths.out_dir.clone(), "--out");
            let manifest = load_manifest(&config)?;
            let model = load_model(&config)?;
            let curves = pipeline::target_features(&manifest, &model, config.grid_hz)?;
            std::fs::create_dir_all(&out).map_err(|e| PipelineError::Io(format!("{}: {e}", out.display())))?;
            pipeline::write_curves(&out, &curves)?;
            println!("wrote {} curves to {}", curves.len(), out.display());
        }
        Command::Evaluate(args) => {
            args.common.apply(&mut config);
            if let Some(m) = args.model {
                config.paths.model = Some(m);
            }
            if let Some(o) = args.out {
                config.paths.out_dir = Some(o);
            }
            if let Some(s) = args.sigma_steps {
                config.sigma_steps = s;
            }
            if let Some(b) = args.baseline {
                config.baseline = b.parse::<BaselineMode>().map_err(PipelineError::Config)?;
            }
            config.validate()?;
            let out = require(config.paths.out_dir.clone(), "--out");
            let manifest = load_manifest(&config)?;
            let model = load_model(&config)?;
            let report = pipeline::evaluate(&manifest, &model, &config, &out)?;
            print!("{}", pipeline::summarize(&report));
        }
        Command::Report(args) => {
            let path = args
                .report
                .or_else(|| config.paths.out_dir.clone())
                .unwrap_or_else(|| usage_error("--report is required (flag or config file)"));
            let path = if path.is_dir() { path.join(pipeline::REPORT_FILE) } else { path };
            let report = pipeline::read_report(&path)?;
            print!("{}", pipeline::summarize(&report));
        }
        Command::Config => {
            config.validate()?;
            print!("{}", config.to_toml_string());
        }
    }
    Ok(())
}

fn single_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", single_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}
