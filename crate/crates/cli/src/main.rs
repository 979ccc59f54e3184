use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use itd_core::estimate::{estimate_delay, EstimatorConfig};
use itd_core::gcc::{classic_estimate, default_max_lag};
use itd_core::harness::{
    evaluate, gen_dataset, load_corpus, load_dataset, simulate_dataset, sweep, write_sweep_csv, DatasetSpec,
    GccConfig, Method, SweepAxis,
};
use itd_core::audio::load_wav;
use itd_core::nn::load_checkpoint;
use itd_core::sim::SPEED_OF_SOUND;
use itd_core::train::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "itd", version, about = "Interaural time delay estimation: simulation, training and evaluation")]
struct Cli {
    /// Log filter, e.g. `warn`, `info` or `debug`. `RUST_LOG` takes precedence.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Gcc,
    Model,
    Iid,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimateMethod {
    Gcc,
    Model,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Snr,
    Rt60,
    Mixture,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Snr => SweepAxis::Snr,
            AxisArg::Rt60 => SweepAxis::Rt60,
            AxisArg::Mixture => SweepAxis::Mixture,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a simulated dataset: one WAV per scene plus manifest.jsonl.
    Simulate {
        /// Dataset spec (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenes per room and condition.
        #[arg(long)]
        count: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an embedding network on a stereo corpus.
    Train {
        /// Manifest, dataset directory, or directory of stereo WAVs.
        #[arg(long)]
        corpus: PathBuf,
        /// Labeled dataset used for model selection. Defaults to the
        /// `heldout` spec of the config, if any.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Training config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one method on a labeled dataset.
    Eval {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Manifest or dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_if_eq("method", "model"))]
        checkpoint: Option<PathBuf>,
        /// Estimator settings (TOML with `[gcc]` and `[estimator]` tables).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the random baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-clip CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate methods across a grid of noise, reverberation or mixture levels.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "gcc,random")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TOML with `[dataset]`, `[gcc]` and `[estimator]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset seed (also seeds the random baseline).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the delay of a single stereo WAV file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "gcc")]
        method: EstimateMethod,
        #[arg(long, required_if_eq("method", "model"))]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Microphone spacing in meters; bounds the delay and adds an angle.
        #[arg(long)]
        mic_spacing: Option<f64>,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    gcc: GccConfig,
    estimator: EstimatorConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    dataset: DatasetSpec,
    gcc: GccConfig,
    estimator: EstimatorConfig,
}

enum CliError {
    Usage(String),
    Runtime(itd_core::Error),
}

impl From<itd_core::Error> for CliError {
    fn from(e: itd_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| itd_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| itd_core::Error::Config(format!("{}: {e}", path.display())).into())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain record serializes")
}

fn method(arg: MethodArg, checkpoint: Option<&Path>, gcc: &GccConfig, est: &EstimatorConfig, seed: u64) -> CliResult<Method> {
    Ok(match arg {
        MethodArg::Gcc => Method::Gcc(gcc.clone()),
        MethodArg::Iid => Method::Iid,
        MethodArg::Random => Method::Random { seed },
        MethodArg::Model => {
            let path = checkpoint.ok_or_else(|| CliError::Usage("the model method needs --checkpoint".into()))?;
            Method::Model(Box::new(load_checkpoint(path)?), est.clone())
        }
    })
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Simulate {
            config,
            seed,
            count,
            out,
        } => {
            let mut spec: DatasetSpec = read_config(config.as_deref())?;
            spec.seed = seed.unwrap_or(spec.seed);
            spec.count = count.unwrap_or(spec.count);
            let records = gen_dataset(&spec, &out)?;
            info!("wrote {} clips to {}", records.len(), out.display());
        }
        Command::Train {
            corpus,
            heldout,
            config,
            seed,
            max_steps,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| itd_core::Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    TrainConfig::from_toml(&text)?
                }
                None => TrainConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.max_steps = max_steps.unwrap_or(cfg.max_steps);
            let clips = load_corpus(&corpus)?;
            let held = match (&heldout, &cfg.heldout) {
                (Some(path), _) => load_dataset(path)?,
                (None, Some(spec)) => simulate_dataset(spec)?,
                (None, None) => Vec::new(),
            };
            info!("training {} on {} clips, {} held out", cfg.loss.id(), clips.len(), held.len());
            let outcome = train(&cfg, &clips, &held, Some(&out))?;
            #[derive(Serialize)]
            struct Done {
                checkpoint: PathBuf,
                steps_run: usize,
                best_step: usize,
                init_mae_ms: Option<f64>,
                best_mae_ms: Option<f64>,
                stopped_early: bool,
            }
            println!(
                "{}",
                to_json(&Done {
                    checkpoint: out.join("model.ckpt"),
                    steps_run: outcome.steps_run,
                    best_step: outcome.best_step,
                    init_mae_ms: outcome.init_mae_ms,
                    best_mae_ms: outcome.best_mae_ms,
                    stopped_early: outcome.stopped_early,
                })
            );
        }
        Command::Eval {
            method: arg,
            data,
            checkpoint,
            config,
            seed,
            out,
        } => {
            let cfg: EvalConfig = read_config(config.as_deref())?;
            let m = method(arg, checkpoint.as_deref(), &cfg.gcc, &cfg.estimator, seed)?;
            let items = load_dataset(&data)?;
            let report = evaluate(&m, &items)?;
            if let Some(path) = &out {
                report.write_csv(path)?;
            }
            println!("{}", to_json(&report.summary));
        }
        Command::Sweep {
            axis,
            values,
            methods,
            checkpoint,
            config,
            seed,
            count,
            out,
        } => {
            let mut cfg: SweepConfig = read_config(config.as_deref())?;
            cfg.dataset.seed = seed.unwrap_or(cfg.dataset.seed);
            cfg.dataset.count = count.unwrap_or(cfg.dataset.count);
            let axis = SweepAxis::from(axis);
            let values = values.unwrap_or_else(|| axis.default_values());
            let methods = methods
                .iter()
                .map(|&a| method(a, checkpoint.as_deref(), &cfg.gcc, &cfg.estimator, cfg.dataset.seed))
                .collect::<CliResult<Vec<_>>>()?;
            let rows = sweep(axis, &values, &methods, &cfg.dataset)?;
            write_sweep_csv(&rows, &out)?;
            info!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Estimate {
            input,
            method,
            checkpoint,
            config,
            mic_spacing,
        } => {
            let cfg: EvalConfig = read_config(config.as_deref())?;
            let audio = load_wav(&input)?;
            let rate = audio.rate();
            let clip = audio.into_stereo().ok_or_else(|| {
                itd_core::Error::InvalidArgument(format!("{}: expected a two-channel file", input.display()))
            })?;
            let mut est = match method {
                EstimateMethod::Gcc => {
                    let g = &cfg.gcc;
                    let max_lag = g
                        .max_lag
                        .unwrap_or_else(|| default_max_lag(mic_spacing, SPEED_OF_SOUND, rate));
                    classic_estimate(&clip, g.votes, g.window.min(clip.len()), max_lag, g.aggregation)?
                }
                EstimateMethod::Model => {
                    let path = checkpoint.ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
                    let params = load_checkpoint(&path)?;
                    estimate_delay(&params, &clip, &cfg.estimator, mic_spacing)?
                }
            };
            if let Some(d) = mic_spacing {
                est = est.with_angle(d, SPEED_OF_SOUND);
            }
            println!("{}", est.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
