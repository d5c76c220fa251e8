use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use unimotion::config::PipelineConfig;
use unimotion::error::{Error, ErrorClass, Result};
use unimotion::metrics::MetricsConfig;
use unimotion::pipeline::{run_metrics, run_pipeline, run_stabilize, run_synth};
use unimotion::synth::RigSpec;

#[derive(Parser)]
#[command(name = "unimotion", version, about = "Joint video stabilization and stitching for two-camera rigs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stabilize and stitch two camera streams into a panorama.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stabilize every configured stream independently.
    Stabilize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an input frame directory with a processed one.
    Metrics {
        input: PathBuf,
        output: PathBuf,
        /// Metrics settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for metrics.json; the report is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic two-camera dataset and a matching pipeline config.
    Synth {
        /// Rig specification as JSON (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_pipeline_config(path: &Path, out: Option<PathBuf>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = out {
        cfg.output = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline { config, out } => {
            let cfg = load_pipeline_config(&config, out)?;
            let run = run_pipeline(&cfg)?;
            info!("wrote {}", cfg.output.display());
            println!("{}", run.report.to_json());
        }
        Command::Stabilize { config, out } => {
            let cfg = load_pipeline_config(&config, out)?;
            let run = run_stabilize(&cfg)?;
            info!("wrote {}", cfg.output.display());
            println!("{}", run.report.to_json());
        }
        Command::Metrics {
            input,
            output,
            config,
            out,
            seed,
        } => {
            let cfg: MetricsConfig = match config {
                Some(p) => read_json(&p)?,
                None => MetricsConfig::default(),
            };
            let report = run_metrics(&input, &output, &cfg, seed)?;
            let json = report.to_json();
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("metrics.json");
                std::fs::write(&path, &json).map_err(|e| Error::Io { path, source: e })?;
            }
            println!("{json}");
        }
        Command::Synth { config, out } => {
            let spec: RigSpec = match config {
                Some(p) => read_json(&p)?,
                None => RigSpec::default(),
            };
            let rig = run_synth(&spec, &out)?;
            info!("wrote {} frames per camera to {}", rig.n_frames(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
