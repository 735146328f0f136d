use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lif::{PopulationCode, SpikingModel};
use crate::network::NetworkTopology;
use crate::nonlinearity::{ActivationKind, DerivativeMode, NeuronConstants, Nonlinearity};
use crate::rate::{LearningRates, PhaseSchedule, RateModel, UpdateMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rate,
    Spiking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// Hidden layer sizes; empty for a direct input → output network.
    pub hidden: Vec<usize>,
    pub bias: bool,
    /// Spiking model only; the rate model uses one neuron per dimension.
    pub neurons_per_dim: usize,
    /// Initial weights are uniform in ±init_scale/√indegree.
    pub init_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationConfig {
    pub kind: ActivationKind,
    pub derivative: DerivativeMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    /// η_i = eta_base/√indegree_i
    pub eta_base: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    /// Value of every free neuron when a free phase starts.
    pub initial_state: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikingConfig {
    /// Keep potentials and traces from one trial to the next.
    pub carry_traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Must exist before a run starts.
    pub dir: PathBuf,
}

/// Complete description of one experiment. Times are in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub n_train_samples: usize,
    /// Evaluate and checkpoint after every this many samples.
    pub eval_every: usize,
    pub eval_grid_k: usize,
    pub update_mode: UpdateMode,
    pub topology: TopologyConfig,
    pub activation: ActivationConfig,
    pub neuron: NeuronConstants,
    pub schedule: PhaseSchedule,
    pub learning: LearningConfig,
    pub rate: RateConfig,
    pub spiking: SpikingConfig,
    pub output: OutputConfig,
}

pub const PRESETS: [&str; 6] = [
    "fig3-relu",
    "fig3-liffi",
    "fig3-nohidden",
    "fig5-spiking",
    "fig5-spiking-small",
    "fig5-spiking-small-nohidden",
];

fn fig3_constants() -> NeuronConstants {
    NeuronConstants {
        tau: 15.0,
        u_rest: 20.0,
        u_reset: 0.0,
        theta: 20.0,
        delta: 5.0,
        tau_s: 10.0,
        tau_r: 300.0,
        u_psp: 400.0,
        resistance: 40.0,
    }
}

fn fig5_constants() -> NeuronConstants {
    NeuronConstants {
        tau_s: 15.0,
        tau_r: 100.0,
        ..fig3_constants()
    }
}

fn fig3(name: &str, hidden: Vec<usize>, kind: ActivationKind) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::Rate,
        seed: 1,
        n_train_samples: 3000,
        eval_every: 500,
        eval_grid_k: 16,
        update_mode: UpdateMode::Batched,
        topology: TopologyConfig {
            hidden,
            bias: true,
            neurons_per_dim: 1,
            init_scale: 0.5,
        },
        activation: ActivationConfig {
            kind,
            derivative: DerivativeMode::Surrogate,
        },
        neuron: fig3_constants(),
        schedule: PhaseSchedule {
            t_forward: 600.0,
            t_backward: 600.0,
            beta: 1.0,
            dt: 1.0,
        },
        learning: LearningConfig { eta_base: 0.1 },
        rate: RateConfig { initial_state: 0.5 },
        spiking: SpikingConfig {
            carry_traces: false,
        },
        output: OutputConfig {
            dir: PathBuf::from("runs").join(name),
        },
    }
}

fn fig5(name: &str, neurons_per_dim: usize, hidden: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::Spiking,
        update_mode: UpdateMode::Online,
        topology: TopologyConfig {
            hidden,
            bias: true,
            neurons_per_dim,
            init_scale: 1.0,
        },
        activation: ActivationConfig {
            kind: ActivationKind::Liffi,
            derivative: DerivativeMode::Surrogate,
        },
        neuron: fig5_constants(),
        schedule: PhaseSchedule {
            t_forward: 1000.0,
            t_backward: 1000.0,
            beta: 1.0,
            dt: 1.0,
        },
        learning: LearningConfig { eta_base: 5e-5 },
        ..fig3(name, vec![], ActivationKind::Liffi)
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "fig3-relu" => fig3(name, vec![400], ActivationKind::Relu),
        "fig3-liffi" => fig3(name, vec![400], ActivationKind::Liffi),
        "fig3-nohidden" => fig3(name, vec![], ActivationKind::Relu),
        "fig5-spiking" => fig5(name, 20, vec![300]),
        "fig5-spiking-small" => fig5(name, 10, vec![100]),
        "fig5-spiking-small-nohidden" => fig5(name, 10, vec![]),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.neuron.validate()?;
        self.schedule
            .validate()
            .map_err(|e| Error::Config(format!("schedule: {e}")))?;
        if self.n_train_samples == 0 {
            return bad("n_train_samples must be ≥ 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be ≥ 1".into());
        }
        if self.eval_grid_k < 2 {
            return bad(format!("eval_grid_k must be ≥ 2, got {}", self.eval_grid_k));
        }
        if self.topology.hidden.contains(&0) {
            return bad("hidden layers must not be empty".into());
        }
        let scale = self.topology.init_scale;
        if !(scale > 0.0 && scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {scale}"));
        }
        let eta = self.learning.eta_base;
        if !(eta >= 0.0 && eta.is_finite()) {
            return bad(format!("eta_base must be non-negative, got {eta}"));
        }
        match self.model {
            ModelKind::Rate => {
                if self.topology.neurons_per_dim != 1 {
                    return bad("the rate model uses neurons_per_dim = 1".into());
                }
                if !self.rate.initial_state.is_finite() {
                    return bad("rate.initial_state must be finite".into());
                }
            }
            ModelKind::Spiking => {
                if self.topology.neurons_per_dim == 0 {
                    return bad("neurons_per_dim must be ≥ 1".into());
                }
                if self.update_mode != UpdateMode::Online {
                    return bad("the spiking model only learns online".into());
                }
                let k = &self.neuron;
                if self.schedule.dt > k.tau.min(k.tau_s).min(k.tau_r) {
                    return bad("dt must not exceed any neuron time constant".into());
                }
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let npd = self.topology.neurons_per_dim;
        let mut sizes = vec![2 * npd];
        sizes.extend_from_slice(&self.topology.hidden);
        sizes.push(2 * npd);
        sizes
    }

    pub fn build_topology(&self) -> Result<NetworkTopology> {
        NetworkTopology::build(&self.layer_sizes(), self.topology.bias)
    }

    pub fn learning_rates(&self, topology: &NetworkTopology) -> Result<LearningRates> {
        LearningRates::new(topology, self.learning.eta_base)
    }

    pub fn rate_model(&self, topology: NetworkTopology) -> Result<RateModel> {
        let activation = Nonlinearity::from_config(
            self.activation.kind,
            self.activation.derivative,
            &self.neuron,
        )?;
        Ok(RateModel {
            topology,
            activation,
            tau: self.neuron.tau,
            schedule: self.schedule,
            initial_state: self.rate.initial_state,
        })
    }

    pub fn spiking_model(&self, topology: NetworkTopology) -> Result<SpikingModel> {
        SpikingModel::new(
            topology,
            PopulationCode::new(self.topology.neurons_per_dim)?,
            self.neuron,
            self.schedule,
            self.spiking.carry_traces,
        )
    }
}
