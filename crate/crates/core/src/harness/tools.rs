use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_report, random_instance, GradReport, GradcheckSetup};
use crate::lif::{simulated_rate, Probe, SpikingState, TrialOutcome};
use crate::network::{init_weights, NetworkParams, NetworkTopology, RngSpec};
use crate::nonlinearity::{liffi, NeuronConstants, Nonlinearity};
use crate::task::TaskSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiPoint {
    pub v: f64,
    pub liffi: f64,
    pub simulated: f64,
}

/// Analytic and simulated rates (per ms) for each drive in `drives`.
pub fn fi_curve(
    k: &NeuronConstants,
    drives: &[f64],
    dt: f64,
    duration: f64,
) -> Result<Vec<FiPoint>> {
    k.validate()?;
    drives
        .par_iter()
        .map(|&v| {
            Ok(FiPoint {
                v,
                liffi: liffi(v, k),
                simulated: simulated_rate(v, k, dt, duration)?,
            })
        })
        .collect()
}

pub fn write_fi_csv<W: Write>(points: &[FiPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "v,liffi,simulated")?;
    for p in points {
        writeln!(out, "{},{},{}", p.v, p.liffi, p.simulated)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    /// Initial weights before symmetrization: uniform in ±scale/√indegree.
    pub weight_scale: f64,
    /// Minimum distance of every free state from the ReLU kink.
    pub kink_margin: f64,
    pub lambda_beta: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            seed: 1,
            weight_scale: 1.0,
            kink_margin: 1e-3,
            lambda_beta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub layer_sizes: Vec<usize>,
    pub options: GradcheckOptions,
    pub reports: Vec<GradReport>,
    /// Cosine, error-decrease and 5% checks on every instance.
    pub estimate_ok: bool,
    pub lambda_ok: bool,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.estimate_ok && self.lambda_ok
    }
}

/// Random symmetric 2-3-2 ReLU networks checked against the oracle.
pub fn gradcheck_suite(opts: &GradcheckOptions, betas: &[f64]) -> Result<GradcheckSuite> {
    if opts.instances == 0 {
        return Err(Error::InvalidArgument("need at least one instance".into()));
    }
    let layer_sizes = vec![2, 3, 2];
    let topology = NetworkTopology::build(&layer_sizes, true)?;
    let setup = GradcheckSetup::new(topology, Nonlinearity::relu());
    let mut rng = RngSpec::new(opts.seed, RngSpec::WEIGHTS).rng();
    let instances = (0..opts.instances)
        .map(|_| random_instance(&setup, &mut rng, opts.weight_scale, opts.kink_margin))
        .collect::<Result<Vec<_>>>()?;
    let reports = instances
        .par_iter()
        .map(|inst| {
            grad_report(
                &setup,
                &inst.params,
                &inst.x,
                &inst.y_hat,
                betas,
                opts.lambda_beta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckSuite {
        layer_sizes,
        options: *opts,
        estimate_ok: reports.iter().all(GradReport::estimate_ok),
        lambda_ok: reports.iter().all(GradReport::lambda_ok),
        reports,
    })
}

/// One recorded training trial of a spiking configuration.
pub struct ProbeRun {
    pub probe: Probe,
    pub state: SpikingState,
    pub outcome: TrialOutcome,
}

/// Runs a single trial on `sample`, recording `neuron` and all spikes.
/// Without `params` the configured initial weights are used.
pub fn probe_trial(
    cfg: &ExperimentConfig,
    params: Option<NetworkParams>,
    sample: &TaskSample,
    neuron: usize,
) -> Result<ProbeRun> {
    cfg.validate()?;
    let topology = cfg.build_topology()?;
    if neuron >= topology.len() {
        return Err(Error::InvalidArgument(format!(
            "neuron {neuron} out of range (network has {})",
            topology.len()
        )));
    }
    let mut params = match params {
        Some(p) => {
            p.check_mask(&topology)?;
            p
        }
        None => init_weights(
            &topology,
            &mut RngSpec::new(cfg.seed, RngSpec::WEIGHTS).rng(),
            cfg.topology.init_scale,
        )?,
    };
    let rates = cfg.learning_rates(&topology)?;
    let model = cfg.spiking_model(topology)?;
    let mut state = model.new_state().with_spike_log();
    let mut probe = Probe::new(neuron);
    let outcome = model.run_trial(&mut params, &mut state, sample, &rates, Some(&mut probe))?;
    Ok(ProbeRun {
        probe,
        state,
        outcome,
    })
}
