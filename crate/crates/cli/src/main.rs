#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eqprop::gradcheck::BETA_GRID;
use eqprop::harness::{self, ExperimentConfig, GradcheckOptions, ModelKind};
use eqprop::network::{RngSpec, WeightCheckpoint};
use eqprop::task;
use eqprop::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGENCE: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

/// Equilibrium propagation experiments on rate and spiking networks.
#[derive(Parser)]
#[command(name = "eqprop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics and checkpoints
    Train(TrainArgs),
    /// Continue an interrupted run
    Resume {
        /// Output directory of the run
        dir: PathBuf,
    },
    /// Grid error of a weight checkpoint
    Eval {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Compare the contrastive estimate with a brute-force gradient
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Nudge strength used for the stationarity (λ) check
        #[arg(long, default_value_t = 1e-4)]
        lambda_beta: f64,
        /// JSON report path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic and simulated f–I curve as CSV
    FiCurve {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        /// Simulated time per drive value, ms
        #[arg(long, default_value_t = 10_000.0)]
        duration: f64,
        #[arg(long, default_value_t = 20.0)]
        v_min: f64,
        #[arg(long, default_value_t = 100.0)]
        v_max: f64,
        #[arg(long, default_value_t = 81)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write task samples as CSV
    TaskDump {
        /// k×k evaluation grid
        #[arg(long, conflicts_with = "samples")]
        grid: Option<usize>,
        /// Uniform random samples from the data stream of `seed`
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record one spiking trial: membrane trace of a neuron and the raster
    Probe {
        #[command(flatten)]
        source: ConfigSource,
        /// Weight checkpoint; the configured initialization if omitted
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        neuron: usize,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 0.5)]
        phi: f64,
        /// Trace CSV path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Spike raster CSV path
        #[arg(long)]
        raster: Option<PathBuf>,
    },
    /// Print a preset as a config file
    Preset { name: String },
}

#[derive(Args)]
struct ConfigSource {
    /// Built-in preset name
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Config file (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    fn load(&self, default: Option<&str>) -> eqprop::Result<ExperimentConfig> {
        match (&self.preset, &self.config, default) {
            (Some(name), _, _) => harness::preset(name),
            (None, Some(path), _) => ExperimentConfig::load(path),
            (None, None, Some(name)) => harness::preset(name),
            (None, None, None) => Err(Error::Config("pass --preset or --config".into())),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Create the output directory if missing
    #[arg(long)]
    mkdir: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training samples (overrides the config)
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Comma-separated seeds, run in parallel in <out>/seed-<n>
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<u64>,
}

fn output(path: Option<&Path>) -> eqprop::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn finish(mut w: Box<dyn Write>, path: Option<&Path>) -> eqprop::Result<()> {
    w.flush()
        .map_err(|e| io_err(path.unwrap_or(Path::new("<stdout>")), e))
}

fn print_json<T: serde::Serialize>(value: &T) -> eqprop::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(args: TrainArgs) -> eqprop::Result<u8> {
    let mut cfg = args.source.load(None)?;
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.samples {
        cfg.n_train_samples = n;
    }
    if let Some(k) = args.eval_every {
        cfg.eval_every = k;
    }
    cfg.validate()?;
    if args.mkdir {
        fs::create_dir_all(&cfg.output.dir).map_err(|e| io_err(&cfg.output.dir, e))?;
    }
    if args.sweep.is_empty() {
        let summary = harness::run(&cfg)?;
        print_json(&summary)?;
        return Ok(0);
    }
    let mut code = 0;
    for (seed, result) in harness::sweep(&cfg, &args.sweep) {
        match result {
            Ok(summary) => println!("seed {seed}: {}", serde_json::to_string(&summary)?),
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                code = code.max(exit_code(&e));
            }
        }
    }
    Ok(code)
}

fn execute(command: Command) -> eqprop::Result<u8> {
    match command {
        Command::Train(args) => train(args),
        Command::Resume { dir } => {
            print_json(&harness::resume(&dir)?)?;
            Ok(0)
        }
        Command::Eval {
            source,
            weights,
            grid,
        } => {
            let cfg = source.load(None)?;
            println!("{}", harness::evaluate_checkpoint(&cfg, &weights, grid)?);
            Ok(0)
        }
        Command::Gradcheck {
            instances,
            seed,
            lambda_beta,
            out,
        } => {
            let opts = GradcheckOptions {
                instances,
                seed,
                lambda_beta,
                ..Default::default()
            };
            let suite = harness::gradcheck_suite(&opts, &BETA_GRID)?;
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&suite)?)
                .map_err(|e| io_err(Path::new("<report>"), e))?;
            finish(w, out.as_deref())?;
            Ok(if suite.passed() { 0 } else { EXIT_THRESHOLD })
        }
        Command::FiCurve {
            source,
            dt,
            duration,
            v_min,
            v_max,
            points,
            out,
        } => {
            let cfg = source.load(Some("fig3-relu"))?;
            if points < 2 || !(v_max > v_min) {
                return Err(Error::InvalidArgument(
                    "need points ≥ 2 and v_max > v_min".into(),
                ));
            }
            let drives: Vec<f64> = (0..points)
                .map(|i| v_min + (v_max - v_min) * i as f64 / (points - 1) as f64)
                .collect();
            let curve = harness::fi_curve(&cfg.neuron, &drives, dt, duration)?;
            let mut w = output(out.as_deref())?;
            harness::write_fi_csv(&curve, &mut w).map_err(|e| io_err(Path::new("<csv>"), e))?;
            finish(w, out.as_deref())?;
            Ok(0)
        }
        Command::TaskDump {
            grid,
            samples,
            seed,
            out,
        } => {
            let data = match (grid, samples) {
                (_, Some(n)) => {
                    task::sample_uniform(&mut RngSpec::new(seed, RngSpec::DATA).rng(), n)?
                }
                (Some(k), None) => task::grid(k)?,
                (None, None) => task::grid(16)?,
            };
            let mut w = output(out.as_deref())?;
            task::write_csv(&data, &mut w).map_err(|e| io_err(Path::new("<csv>"), e))?;
            finish(w, out.as_deref())?;
            Ok(0)
        }
        Command::Probe {
            source,
            weights,
            neuron,
            theta,
            phi,
            out,
            raster,
        } => {
            let cfg = source.load(Some("fig5-spiking"))?;
            if cfg.model != ModelKind::Spiking {
                return Err(Error::Config("probe needs a spiking configuration".into()));
            }
            let params = match weights {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                    Some(WeightCheckpoint::from_json(&text)?.restore()?.1)
                }
                None => None,
            };
            let sample = task::make_sample(theta, phi)?;
            let run = harness::probe_trial(&cfg, params, &sample, neuron)?;
            let mut w = output(out.as_deref())?;
            run.probe
                .write_csv(&mut w)
                .map_err(|e| io_err(Path::new("<trace>"), e))?;
            finish(w, out.as_deref())?;
            if let Some(path) = raster {
                let file = File::create(&path).map_err(|e| io_err(&path, e))?;
                let mut w = BufWriter::new(file);
                run.state
                    .write_raster_csv(&mut w)
                    .map_err(|e| io_err(&path, e))?;
                w.flush().map_err(|e| io_err(&path, e))?;
            }
            Ok(0)
        }
        Command::Preset { name } => {
            print!("{}", harness::preset(&name)?.to_toml()?);
            Ok(0)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_divergence() {
        EXIT_DIVERGENCE
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
