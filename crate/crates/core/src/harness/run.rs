use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::lif::{SpikingModel, SpikingState};
use crate::network::{init_weights, NetworkParams, NetworkTopology, RngSpec, WeightCheckpoint};
use crate::rate::{LearningRates, RateModel, UpdateMode};
use crate::task::{self, TaskSample};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const STATE_FILE: &str = "run_state.json";
pub const SUMMARY_FILE: &str = "summary.json";

const METRICS_HEADER: &str = "sample_index,phase_residual_fwd,train_error,eval_error";
const TIMING_HEADER: &str = "sample_index,wall_ms";

/// One training sample's log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub sample_index: usize,
    pub train_error: f64,
    pub eval_error: Option<f64>,
    /// Free-phase residual; rate model only.
    pub forward_residual: Option<f64>,
    /// Since the start of this invocation. Goes to the timing file only.
    pub wall_ms: f64,
}

impl MetricsRecord {
    fn metrics_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{}",
            self.sample_index,
            opt(self.forward_residual),
            self.train_error,
            opt(self.eval_error)
        )
    }
}

/// What resume needs besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub samples_done: usize,
    /// Word position of the data stream.
    pub data_word_pos: u64,
    pub initial_eval_error: f64,
    pub last_eval_error: f64,
    /// Present when the spiking model carries traces across trials.
    pub spiking_state: Option<SpikingState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples_done: usize,
    pub initial_eval_error: f64,
    pub final_eval_error: f64,
}

enum Engine {
    Rate(RateModel),
    Spiking(Box<SpikingModel>, SpikingState),
}

impl Engine {
    fn new(cfg: &ExperimentConfig, topology: NetworkTopology) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Rate => Engine::Rate(cfg.rate_model(topology)?),
            ModelKind::Spiking => {
                let model = cfg.spiking_model(topology)?;
                let state = model.new_state();
                Engine::Spiking(Box::new(model), state)
            }
        })
    }

    fn train_one(
        &mut self,
        params: &mut NetworkParams,
        sample: &TaskSample,
        rates: &LearningRates,
        mode: UpdateMode,
    ) -> Result<(f64, Option<f64>)> {
        match self {
            Engine::Rate(m) => {
                let out = m.train_sample(params, sample, rates, mode)?;
                Ok((out.train_error, Some(out.forward_residual)))
            }
            Engine::Spiking(m, state) => {
                let out = m.run_trial(params, state, sample, rates, None)?;
                Ok((out.train_error, None))
            }
        }
    }

    fn evaluate(&self, params: &NetworkParams, samples: &[TaskSample]) -> Result<f64> {
        match self {
            Engine::Rate(m) => m.evaluate(params, samples),
            Engine::Spiking(m, _) => m.evaluate(params, samples),
        }
    }

    fn carried_state(&self) -> Option<SpikingState> {
        match self {
            Engine::Spiking(m, s) if m.carry_traces => Some(s.clone()),
            _ => None,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        ))
    }
}

struct Logs {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    metrics_path: PathBuf,
    timing_path: PathBuf,
}

impl Logs {
    fn create(dir: &Path) -> Result<Self> {
        let mut logs = Self::open(dir, false)?;
        logs.write_line(true, METRICS_HEADER)?;
        logs.write_line(false, TIMING_HEADER)?;
        Ok(logs)
    }

    fn open(dir: &Path, append: bool) -> Result<Self> {
        let open = |name: &str| -> Result<(BufWriter<File>, PathBuf)> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Ok((BufWriter::new(file), path))
        };
        let (metrics, metrics_path) = open(METRICS_FILE)?;
        let (timing, timing_path) = open(TIMING_FILE)?;
        Ok(Self {
            metrics,
            timing,
            metrics_path,
            timing_path,
        })
    }

    fn write_line(&mut self, metrics: bool, line: &str) -> Result<()> {
        let (w, p) = if metrics {
            (&mut self.metrics, &self.metrics_path)
        } else {
            (&mut self.timing, &self.timing_path)
        };
        writeln!(w, "{line}").map_err(|e| Error::io(p, e))
    }

    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        self.write_line(true, &r.metrics_row())?;
        self.write_line(false, &format!("{},{:.3}", r.sample_index, r.wall_ms))
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics
            .flush()
            .map_err(|e| Error::io(&self.metrics_path, e))?;
        self.timing
            .flush()
            .map_err(|e| Error::io(&self.timing_path, e))
    }
}

/// Keeps the header and the rows of samples below `keep`.
fn truncate_log(path: &Path, keep: usize) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let index = line.split(',').next().and_then(|f| f.parse::<usize>().ok());
        if n == 0 || index.is_some_and(|i| i < keep) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    write_file(path, &out)
}

struct Checkpointer<'a> {
    dir: &'a Path,
    topology: &'a NetworkTopology,
}

impl Checkpointer<'_> {
    fn save(&self, params: &NetworkParams, state: &RunState) -> Result<()> {
        let weights = WeightCheckpoint::new(self.topology, params).to_json()?;
        write_file(&self.dir.join(WEIGHTS_FILE), &weights)?;
        write_file(
            &self.dir.join(STATE_FILE),
            &serde_json::to_string_pretty(state)?,
        )
    }
}

fn word_pos(rng: &ChaCha8Rng) -> Result<u64> {
    u64::try_from(rng.get_word_pos())
        .map_err(|_| Error::Checkpoint("data stream position exceeds 64 bits".into()))
}

/// Trains from scratch as configured.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_with_limit(cfg, None)
}

/// Like [`run`] but stops after `limit` samples, leaving a resumable
/// checkpoint behind.
pub fn run_with_limit(cfg: &ExperimentConfig, limit: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output.dir.as_path();
    require_dir(dir)?;
    let topology = cfg.build_topology()?;
    let mut params = init_weights(
        &topology,
        &mut RngSpec::new(cfg.seed, RngSpec::WEIGHTS).rng(),
        cfg.topology.init_scale,
    )?;
    let engine = Engine::new(cfg, topology.clone())?;
    let grid = task::grid(cfg.eval_grid_k)?;
    let initial = engine.evaluate(&params, &grid)?;

    write_file(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    let _ = fs::remove_file(dir.join(SUMMARY_FILE));
    let state = RunState {
        samples_done: 0,
        data_word_pos: 0,
        initial_eval_error: initial,
        last_eval_error: initial,
        spiking_state: engine.carried_state(),
    };
    Checkpointer {
        dir,
        topology: &topology,
    }
    .save(&params, &state)?;
    let logs = Logs::create(dir)?;
    drive(
        cfg,
        dir,
        &topology,
        &mut params,
        engine,
        state,
        logs,
        &grid,
        limit,
    )
}

/// Continues the run stored in `dir` up to its configured sample count.
pub fn resume(dir: &Path) -> Result<RunSummary> {
    resume_with_limit(dir, None)
}

pub fn resume_with_limit(dir: &Path, limit: Option<usize>) -> Result<RunSummary> {
    require_dir(dir)?;
    let mut cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    cfg.output.dir = dir.to_path_buf();
    let checkpoint = WeightCheckpoint::from_json(&read_file(&dir.join(WEIGHTS_FILE))?)?;
    let (topology, mut params) = checkpoint.restore()?;
    if topology.mask_hash() != cfg.build_topology()?.mask_hash() {
        return Err(Error::Checkpoint(
            "weights do not match the configured topology".into(),
        ));
    }
    let state: RunState = serde_json::from_str(&read_file(&dir.join(STATE_FILE))?)?;
    let mut engine = Engine::new(&cfg, topology.clone())?;
    if let (Engine::Spiking(m, s), Some(saved)) = (&mut engine, &state.spiking_state) {
        if saved.len() != m.topology.len() {
            return Err(Error::Checkpoint("spiking state size mismatch".into()));
        }
        *s = saved.clone();
    }
    truncate_log(&dir.join(METRICS_FILE), state.samples_done)?;
    truncate_log(&dir.join(TIMING_FILE), state.samples_done)?;
    let grid = task::grid(cfg.eval_grid_k)?;
    let logs = Logs::open(dir, true)?;
    drive(
        &cfg,
        dir,
        &topology,
        &mut params,
        engine,
        state,
        logs,
        &grid,
        limit,
    )
}

#[allow(clippy::too_many_arguments)]
fn drive(
    cfg: &ExperimentConfig,
    dir: &Path,
    topology: &NetworkTopology,
    params: &mut NetworkParams,
    mut engine: Engine,
    mut state: RunState,
    mut logs: Logs,
    grid: &[TaskSample],
    limit: Option<usize>,
) -> Result<RunSummary> {
    let started = Instant::now();
    let rates = cfg.learning_rates(topology)?;
    let mut rng = RngSpec::new(cfg.seed, RngSpec::DATA).rng();
    rng.set_word_pos(u128::from(state.data_word_pos));
    let ckpt = Checkpointer { dir, topology };
    let end = match limit {
        Some(l) => cfg.n_train_samples.min(state.samples_done + l),
        None => cfg.n_train_samples,
    };

    for k in state.samples_done..end {
        let sample = task::draw(&mut rng)?;
        let (train_error, forward_residual) = engine
            .train_one(params, &sample, &rates, cfg.update_mode)
            .map_err(|e| {
                let _ = logs.flush();
                e.at_sample(k)
            })?;
        let done = k + 1;
        let eval_due = done % cfg.eval_every == 0 || done == cfg.n_train_samples;
        let eval_error = if eval_due {
            Some(engine.evaluate(params, grid)?)
        } else {
            None
        };
        logs.record(&MetricsRecord {
            sample_index: k,
            train_error,
            eval_error,
            forward_residual,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })?;
        if let Some(e) = eval_error {
            state.last_eval_error = e;
        }
        if eval_due || done == end {
            state.samples_done = done;
            state.data_word_pos = word_pos(&rng)?;
            state.spiking_state = engine.carried_state();
            logs.flush()?;
            ckpt.save(params, &state)?;
        }
    }
    logs.flush()?;

    let summary = RunSummary {
        samples_done: state.samples_done,
        initial_eval_error: state.initial_eval_error,
        final_eval_error: state.last_eval_error,
    };
    if state.samples_done == cfg.n_train_samples {
        write_file(
            &dir.join(SUMMARY_FILE),
            &serde_json::to_string_pretty(&summary)?,
        )?;
    }
    Ok(summary)
}

/// Grid error of the weights in `weights` under `cfg`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, weights: &Path, grid_k: usize) -> Result<f64> {
    cfg.validate()?;
    let checkpoint = WeightCheckpoint::from_json(&read_file(weights)?)?;
    let (topology, params) = checkpoint.restore()?;
    if topology.mask_hash() != cfg.build_topology()?.mask_hash() {
        return Err(Error::Checkpoint(
            "weights do not match the configured topology".into(),
        ));
    }
    let engine = Engine::new(cfg, topology)?;
    engine.evaluate(&params, &task::grid(grid_k)?)
}

/// Runs `cfg` once per seed in parallel, each in `<dir>/seed-<seed>`.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<(u64, Result<RunSummary>)> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            c.output.dir = cfg.output.dir.join(format!("seed-{seed}"));
            let result = require_dir(&cfg.output.dir)
                .and_then(|_| {
                    fs::create_dir_all(&c.output.dir).map_err(|e| Error::io(&c.output.dir, e))
                })
                .and_then(|_| run(&c));
            (seed, result)
        })
        .collect()
}
