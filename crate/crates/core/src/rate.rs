//! Two-phase equilibrium propagation for the rate network.
//!
//! Each sample runs a free phase with the inputs clamped, then a phase in
//! which the outputs are weakly pulled towards the target, and finally the
//! contrastive Hebbian update
//! `Δw_ij = η_i (ρ(s_i^β) ρ(s_j^β) − ρ(s_i*) ρ(s_j*))`.
//! The 1/β factor of the gradient estimate is folded into η.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{relax, RateState, RelaxConfig, RelaxReport};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkTopology};
use crate::nonlinearity::Nonlinearity;
use crate::task::{euclid_error, TaskSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    /// ms
    pub t_forward: f64,
    /// ms
    pub t_backward: f64,
    /// Output nudging strength in the second phase.
    pub beta: f64,
    /// Euler step, ms
    pub dt: f64,
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_forward > 0.0 && self.t_backward > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "phase durations must be positive ({}, {})",
                self.t_forward, self.t_backward
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_forward.min(self.t_backward)) {
            return Err(Error::InvalidArgument(format!("bad time step {}", self.dt)));
        }
        Ok(())
    }
}

/// Per-neuron learning rates `η_i = eta_base / √indegree_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRates {
    pub eta_base: f64,
    per_neuron: Vec<f64>,
}

impl LearningRates {
    pub fn new(topology: &NetworkTopology, eta_base: f64) -> Result<Self> {
        if !(eta_base >= 0.0 && eta_base.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be non-negative, got {eta_base}"
            )));
        }
        let per_neuron = (0..topology.len())
            .map(|i| match topology.indegree(i) {
                0 => 0.0,
                d => eta_base / (d as f64).sqrt(),
            })
            .collect();
        Ok(Self {
            eta_base,
            per_neuron,
        })
    }

    pub fn eta(&self, i: usize) -> f64 {
        self.per_neuron[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.per_neuron
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// One contrastive update after the second phase.
    Batched,
    /// Anti-Hebbian step after the free phase, Hebbian step after the nudged phase.
    Online,
}

/// Adds `sign · η_i ρ_i ρ_j` to every allowed weight.
pub fn apply_correlation(
    topology: &NetworkTopology,
    params: &mut NetworkParams,
    rho: &[f64],
    rates: &LearningRates,
    sign: f64,
) {
    for i in 0..topology.len() {
        let scale = sign * rates.eta(i) * rho[i];
        if scale == 0.0 {
            continue;
        }
        for &j in topology.inbound(i) {
            params.add(i, j, scale * rho[j]);
        }
    }
}

/// Contrastive Hebbian update on the allowed entries of `params`.
pub fn contrastive_update(
    topology: &NetworkTopology,
    params: &mut NetworkParams,
    act: &Nonlinearity,
    s_star: &RateState,
    s_beta: &RateState,
    rates: &LearningRates,
) {
    let free: Vec<f64> = s_star.s.iter().map(|&s| act.rho(s)).collect();
    let nudged: Vec<f64> = s_beta.s.iter().map(|&s| act.rho(s)).collect();
    for i in 0..topology.len() {
        let eta = rates.eta(i);
        if eta == 0.0 {
            continue;
        }
        for &j in topology.inbound(i) {
            params.add(i, j, eta * (nudged[i] * nudged[j] - free[i] * free[j]));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub state: RateState,
    pub report: RelaxReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub prediction: [f64; 2],
    pub train_error: f64,
    pub forward_residual: f64,
}

/// Per-sample training log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub sample_index: usize,
    pub forward_residual: f64,
    pub train_error: f64,
}

/// A rate network together with everything needed to run its two phases.
#[derive(Debug, Clone)]
pub struct RateModel {
    pub topology: NetworkTopology,
    pub activation: Nonlinearity,
    /// Neuron time constant, ms.
    pub tau: f64,
    pub schedule: PhaseSchedule,
    /// Starting value of every free neuron at the beginning of a free phase.
    pub initial_state: f64,
}

impl RateModel {
    fn relax_config(&self, duration: f64) -> RelaxConfig {
        RelaxConfig::fixed(self.schedule.dt, duration, self.tau)
    }

    /// Free phase: inputs clamped to `x`, no target.
    pub fn forward_phase(&self, params: &NetworkParams, x: &[f64]) -> Result<Phase> {
        let mut state = RateState::new(&self.topology, self.initial_state);
        state.set_inputs(&self.topology, x)?;
        let report = relax(
            &self.topology,
            params,
            &self.activation,
            &mut state,
            &self.relax_config(self.schedule.t_forward),
        )?;
        Ok(Phase { state, report })
    }

    /// Nudged phase starting from the free fixed point.
    pub fn backward_phase(
        &self,
        params: &NetworkParams,
        s_star: &RateState,
        target: &[f64],
    ) -> Result<Phase> {
        if !(self.schedule.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.schedule.beta
            )));
        }
        let mut state = s_star.clone();
        state.beta_y = self.schedule.beta;
        state.set_targets(&self.topology, target)?;
        let report = relax(
            &self.topology,
            params,
            &self.activation,
            &mut state,
            &self.relax_config(self.schedule.t_backward),
        )?;
        Ok(Phase { state, report })
    }

    fn prediction(&self, state: &RateState) -> Result<[f64; 2]> {
        let out = state.outputs(&self.topology);
        <[f64; 2]>::try_from(out.as_slice()).map_err(|_| Error::DimensionMismatch {
            what: "output layer",
            expected: 2,
            got: out.len(),
        })
    }

    /// One full training step on `sample`.
    pub fn train_sample(
        &self,
        params: &mut NetworkParams,
        sample: &TaskSample,
        rates: &LearningRates,
        mode: UpdateMode,
    ) -> Result<SampleOutcome> {
        let free = self.forward_phase(params, &sample.input())?;
        let prediction = self.prediction(&free.state)?;
        let train_error = euclid_error(&[prediction], &[sample.target()])?;
        match mode {
            UpdateMode::Batched => {
                let nudged = self.backward_phase(params, &free.state, &sample.target())?;
                contrastive_update(
                    &self.topology,
                    params,
                    &self.activation,
                    &free.state,
                    &nudged.state,
                    rates,
                );
            }
            UpdateMode::Online => {
                let rho = self.rates_of(&free.state);
                apply_correlation(&self.topology, params, &rho, rates, -1.0);
                let nudged = self.backward_phase(params, &free.state, &sample.target())?;
                let rho = self.rates_of(&nudged.state);
                apply_correlation(&self.topology, params, &rho, rates, 1.0);
            }
        }
        Ok(SampleOutcome {
            prediction,
            train_error,
            forward_residual: free.report.final_residual,
        })
    }

    fn rates_of(&self, state: &RateState) -> Vec<f64> {
        state.s.iter().map(|&s| self.activation.rho(s)).collect()
    }

    /// Trains on `n_samples` draws from `sampler`, calling `observe` after each.
    pub fn train_epoch<S, O>(
        &self,
        params: &mut NetworkParams,
        mut sampler: S,
        rates: &LearningRates,
        n_samples: usize,
        mode: UpdateMode,
        mut observe: O,
    ) -> Result<Vec<SampleMetrics>>
    where
        S: FnMut() -> Result<TaskSample>,
        O: FnMut(&SampleMetrics, &NetworkParams) -> Result<()>,
    {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
        }
        self.schedule.validate()?;
        let mut log = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let sample = sampler()?;
            let outcome = self
                .train_sample(params, &sample, rates, mode)
                .map_err(|e| e.at_sample(k))?;
            let m = SampleMetrics {
                sample_index: k,
                forward_residual: outcome.forward_residual,
                train_error: outcome.train_error,
            };
            observe(&m, params)?;
            log.push(m);
        }
        Ok(log)
    }

    /// Free-phase outputs for every sample, in order.
    pub fn predict(&self, params: &NetworkParams, samples: &[TaskSample]) -> Result<Vec<[f64; 2]>> {
        samples
            .par_iter()
            .map(|s| {
                let free = self.forward_phase(params, &s.input())?;
                self.prediction(&free.state)
            })
            .collect()
    }

    /// Mean Euclidean distance between free-phase outputs and targets.
    pub fn evaluate(&self, params: &NetworkParams, samples: &[TaskSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        let predictions = self.predict(params, samples)?;
        let targets: Vec<[f64; 2]> = samples.iter().map(TaskSample::target).collect();
        euclid_error(&predictions, &targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, RngSpec};
    use crate::task::make_sample;

    fn schedule() -> PhaseSchedule {
        PhaseSchedule {
            t_forward: 600.0,
            t_backward: 600.0,
            beta: 1.0,
            dt: 1.0,
        }
    }

    fn model(layers: &[usize]) -> RateModel {
        RateModel {
            topology: NetworkTopology::build(layers, true).unwrap(),
            activation: Nonlinearity::relu(),
            tau: 15.0,
            schedule: schedule(),
            initial_state: 0.5,
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let m = model(&[2, 4, 2]);
        let p = NetworkParams::zeros(m.topology.len());
        let free = m.forward_phase(&p, &[0.3, 0.7]).unwrap();
        for o in free.state.outputs(&m.topology) {
            assert!(o.abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_size() {
        let m = model(&[2, 4, 2]);
        let p = NetworkParams::zeros(m.topology.len());
        assert!(m.forward_phase(&p, &[0.3]).is_err());
    }

    #[test]
    fn nudging_towards_current_output_changes_nothing() {
        let m = model(&[2, 5, 2]);
        let p = init_weights(&m.topology, &mut RngSpec::new(2, 0).rng(), 1.0).unwrap();
        let free = m.forward_phase(&p, &[0.4, 0.6]).unwrap();
        let y = free.state.outputs(&m.topology);
        let nudged = m.backward_phase(&p, &free.state, &y).unwrap();
        for (a, b) in nudged.state.s.iter().zip(&free.state.s) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_beta_rejected() {
        let mut m = model(&[2, 3, 2]);
        m.schedule.beta = 0.0;
        let p = NetworkParams::zeros(m.topology.len());
        let free = m.forward_phase(&p, &[0.1, 0.1]).unwrap();
        assert!(m.backward_phase(&p, &free.state, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn identical_phases_leave_weights_alone() {
        let m = model(&[2, 3, 2]);
        let p0 = init_weights(&m.topology, &mut RngSpec::new(1, 0).rng(), 1.0).unwrap();
        let free = m.forward_phase(&p0, &[0.2, 0.8]).unwrap();
        let rates = LearningRates::new(&m.topology, 0.1).unwrap();
        let mut p = p0.clone();
        contrastive_update(
            &m.topology,
            &mut p,
            &m.activation,
            &free.state,
            &free.state,
            &rates,
        );
        assert_eq!(p, p0);
    }

    #[test]
    fn two_neuron_update_value() {
        // η = 0.1 on neuron 0 (indegree 1), ρ goes (1,1) -> (2,3)
        let t = NetworkTopology::fully_connected(2, false).unwrap();
        let mut p = NetworkParams::zeros(2);
        let rates = LearningRates::new(&t, 0.1).unwrap();
        let mk = |a: f64, b: f64| RateState {
            s: vec![a, b],
            ..RateState::new(&t, 0.0)
        };
        contrastive_update(
            &t,
            &mut p,
            &Nonlinearity::relu(),
            &mk(1.0, 1.0),
            &mk(2.0, 3.0),
            &rates,
        );
        assert!((p.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(p.get(0, 1), p.get(1, 0));
    }

    #[test]
    fn indegree_scaling_of_rates() {
        let t = NetworkTopology::build(&[2, 400, 2], true).unwrap();
        let r = LearningRates::new(&t, 0.1).unwrap();
        assert!((r.eta(2) - 0.1 / 5f64.sqrt()).abs() < 1e-15);
        assert!((r.eta(402) - 0.1 / 401f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.eta(0), 0.0);
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let m = model(&[2, 3, 2]);
        let p0 = init_weights(&m.topology, &mut RngSpec::new(8, 0).rng(), 0.1).unwrap();
        let mut p = p0.clone();
        let rates = LearningRates::new(&m.topology, 0.0).unwrap();
        let mut rng = RngSpec::new(8, 1).rng();
        let log = m
            .train_epoch(
                &mut p,
                || crate::task::draw(&mut rng),
                &rates,
                5,
                UpdateMode::Batched,
                |_, _| Ok(()),
            )
            .unwrap();
        assert_eq!(p, p0);
        assert_eq!(log.len(), 5);
    }

    #[test]
    fn empty_epoch_rejected() {
        let m = model(&[2, 3, 2]);
        let mut p = NetworkParams::zeros(m.topology.len());
        let rates = LearningRates::new(&m.topology, 0.1).unwrap();
        let s = make_sample(0.1, 0.1).unwrap();
        let res = m.train_epoch(
            &mut p,
            || Ok(s),
            &rates,
            0,
            UpdateMode::Batched,
            |_, _| Ok(()),
        );
        assert!(res.is_err());
    }

    #[test]
    fn evaluation_of_constant_predictor() {
        // zero weights except output biases of 0.5 -> outputs sit at 0.5
        let m = model(&[2, 3, 2]);
        let mut p = NetworkParams::zeros(m.topology.len());
        let bias = m.topology.bias_units()[0];
        for &o in m.topology.output_set() {
            p.set(o, bias, 0.5);
        }
        let s = make_sample(0.0, 0.0).unwrap(); // target (1, 0.5)
        let e = m.evaluate(&p, &[s]).unwrap();
        assert!((e - 0.5).abs() < 1e-9);
        assert!(m.evaluate(&p, &[]).is_err());
    }
}
