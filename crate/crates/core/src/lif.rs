//! Leaky integrate-and-fire implementation of equilibrium propagation.
//!
//! Below threshold each neuron follows
//! `τ u̇ = −u + u_rest + (1 − λ) Σ_j w_ij s_j + λ R I`
//! with nudging factor `λ = R I / (R I + Σ_j w_ij s_j)`. Crossing θ emits a
//! spike, resets `u` to `u_reset` and holds it there for the refractory
//! period. Spikes feed a synaptic trace `τ_s ṡ = −s + u_psp x`, which a slow
//! rate estimator `τ_r ṙ = −r + s` low-pass filters. The contrastive rule
//! uses the estimators: `r⁻ r⁻` is subtracted when the target current is
//! switched on, `r⁺ r⁺` is added at the end of the trial.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::BIAS_ACTIVATION;
use crate::error::{check_len, Error, Result};
use crate::network::{NetworkParams, NetworkTopology, Role};
use crate::nonlinearity::{liffi, NeuronConstants};
use crate::rate::{LearningRates, PhaseSchedule};
use crate::task::{euclid_error, TaskSample};

/// `refract_until` of a neuron that has never fired. Finite so that states
/// survive a JSON round trip.
const NOT_REFRACTORY: f64 = f64::MIN;

/// Points on the value → rate calibration grid.
pub const CALIBRATION_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingState {
    pub u: Vec<f64>,
    pub syn: Vec<f64>,
    pub rate_est: Vec<f64>,
    pub refract_until: Vec<f64>,
    /// Spike times per neuron; only filled when recording is enabled.
    #[serde(skip)]
    pub spikes: Option<Vec<Vec<f64>>>,
    pub t_now: f64,
    #[serde(skip)]
    fired: Vec<bool>,
}

impl SpikingState {
    pub fn new(n: usize, constants: &NeuronConstants) -> Self {
        Self {
            u: vec![constants.u_rest; n],
            syn: vec![0.0; n],
            rate_est: vec![0.0; n],
            refract_until: vec![NOT_REFRACTORY; n],
            spikes: None,
            t_now: 0.0,
            fired: vec![false; n],
        }
    }

    pub fn with_spike_log(mut self) -> Self {
        self.spikes = Some(vec![Vec::new(); self.u.len()]);
        self
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Back to rest: potentials at `u_rest`, traces and clocks cleared.
    pub fn reset(&mut self, constants: &NeuronConstants) {
        self.u.fill(constants.u_rest);
        self.syn.fill(0.0);
        self.rate_est.fill(0.0);
        self.refract_until.fill(NOT_REFRACTORY);
        self.fired.fill(false);
        self.t_now = 0.0;
    }

    /// Which neurons fired during the last step.
    pub fn fired(&self) -> &[bool] {
        &self.fired
    }

    pub fn write_raster_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "neuron_id,spike_time_ms")?;
        if let Some(spikes) = &self.spikes {
            for (i, times) in spikes.iter().enumerate() {
                for t in times {
                    writeln!(out, "{i},{t}")?;
                }
            }
        }
        Ok(())
    }
}

/// `λ = R I / (R I + drive)`, or 0 when the denominator is not positive.
pub fn nudging_factor(r_i: f64, drive: f64) -> f64 {
    let denom = r_i + drive;
    if denom > 0.0 {
        r_i / denom
    } else {
        0.0
    }
}

/// Advances every neuron by one Euler step of length `dt`.
pub fn step_spiking(
    topology: &NetworkTopology,
    params: &NetworkParams,
    k: &NeuronConstants,
    state: &mut SpikingState,
    current: &[f64],
    dt: f64,
) -> Result<()> {
    let n = topology.len();
    check_len("current vector", n, current.len())?;
    check_len("spiking state", n, state.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if let Some(i) = current.iter().position(|&c| !(c >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "current on neuron {i} must be non-negative, got {}",
            current[i]
        )));
    }
    if state.fired.len() != n {
        state.fired = vec![false; n];
    }

    let leak = dt / k.tau;
    let t_start = state.t_now;
    let t_end = t_start + dt;
    for i in 0..n {
        state.fired[i] = false;
        if t_start + 0.5 * dt < state.refract_until[i] {
            state.u[i] = k.u_reset;
            continue;
        }
        let row = params.row(i);
        let drive: f64 = topology
            .inbound(i)
            .iter()
            .map(|&j| row[j] * state.syn[j])
            .sum();
        let external = k.resistance * current[i];
        let lambda = nudging_factor(external, drive);
        let v = k.u_rest + (1.0 - lambda) * drive + lambda * external;
        let u = state.u[i] + leak * (v - state.u[i]);
        if !u.is_finite() {
            return Err(Error::Divergence {
                step: (t_start / dt).round() as usize,
                neuron: i,
                value: u,
            });
        }
        if u >= k.theta {
            state.u[i] = k.u_reset;
            state.refract_until[i] = t_end + k.delta;
            state.fired[i] = true;
            if let Some(log) = state.spikes.as_mut() {
                log[i].push(t_end);
            }
        } else {
            state.u[i] = u;
        }
    }

    let syn_decay = 1.0 - dt / k.tau_s;
    let kick = k.u_psp / k.tau_s;
    let rate_gain = dt / k.tau_r;
    for i in 0..n {
        state.rate_est[i] += rate_gain * (state.syn[i] - state.rate_est[i]);
        state.syn[i] *= syn_decay;
        if state.fired[i] {
            state.syn[i] += kick;
        }
    }
    state.t_now = t_end;
    Ok(())
}

/// Firing rate (per ms) of one neuron under constant total drive `v`,
/// simulated for `duration` ms with step `dt` starting from reset.
///
/// The drive is applied as an external current, so `v` must not lie below
/// `u_rest`.
pub fn simulated_rate(v: f64, k: &NeuronConstants, dt: f64, duration: f64) -> Result<f64> {
    if !(v >= k.u_rest) {
        return Err(Error::InvalidArgument(format!(
            "drive {v} below the resting potential {}",
            k.u_rest
        )));
    }
    let topology = NetworkTopology::from_mask(1, vec![false], vec![0], vec![], vec![])?;
    let params = NetworkParams::zeros(1);
    let mut state = SpikingState::new(1, k);
    state.u[0] = k.u_reset;
    // with no synaptic input λ = 1, so the drive is u_rest + R·I
    let current = [(v - k.u_rest) / k.resistance];
    let steps = (duration / dt).round() as usize;
    let (mut count, mut first, mut last) = (0usize, 0.0, 0.0);
    for _ in 0..steps {
        step_spiking(&topology, &params, k, &mut state, &current, dt)?;
        if state.fired[0] {
            if count == 0 {
                first = state.t_now;
            }
            last = state.t_now;
            count += 1;
        }
    }
    Ok(if count < 2 {
        count as f64 / duration
    } else {
        (count - 1) as f64 / (last - first)
    })
}

/// One real value per input/output dimension, each carried by a group of
/// neurons that receive the identical current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCode {
    pub neurons_per_dim: usize,
    pub input_dims: usize,
    pub output_dims: usize,
}

impl PopulationCode {
    pub fn new(neurons_per_dim: usize) -> Result<Self> {
        if neurons_per_dim == 0 {
            return Err(Error::InvalidArgument("neurons_per_dim must be ≥ 1".into()));
        }
        Ok(Self {
            neurons_per_dim,
            input_dims: 2,
            output_dims: 2,
        })
    }

    pub fn input_size(&self) -> usize {
        self.neurons_per_dim * self.input_dims
    }

    pub fn output_size(&self) -> usize {
        self.neurons_per_dim * self.output_dims
    }

    /// Layer sizes for a network with the given hidden layers between the groups.
    pub fn layer_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = vec![self.input_size()];
        sizes.extend_from_slice(hidden);
        sizes.push(self.output_size());
        sizes
    }

    fn spread(&self, values: &[f64], what: &str) -> Result<Vec<f64>> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "{what} value {v} outside [0,1]"
            )));
        }
        Ok(values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, self.neurons_per_dim))
            .collect())
    }

    /// Currents over the input set for (θ, φ).
    pub fn encode_input(&self, sample: [f64; 2]) -> Result<Vec<f64>> {
        self.spread(&sample, "input")
    }

    /// Currents over the output set for target (x, y).
    pub fn encode_target(&self, target: [f64; 2]) -> Result<Vec<f64>> {
        self.spread(&target, "target")
    }

    /// Mean rate estimate of each output group.
    pub fn group_rates(&self, topology: &NetworkTopology, state: &SpikingState) -> [f64; 2] {
        let outputs = topology.output_set();
        let mut out = [0.0; 2];
        for (d, slot) in out.iter_mut().enumerate() {
            let group = &outputs[d * self.neurons_per_dim..(d + 1) * self.neurons_per_dim];
            *slot = group.iter().map(|&i| state.rate_est[i]).sum::<f64>() / group.len() as f64;
        }
        out
    }
}

/// Monotone map between a value in [0,1] (a current) and the steady rate
/// estimate of a neuron driven only by that current.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCalibration {
    rates: Vec<f64>,
}

impl RateCalibration {
    pub fn new(k: &NeuronConstants) -> Self {
        let rates = (0..CALIBRATION_POINTS)
            .map(|m| {
                let value = m as f64 / (CALIBRATION_POINTS - 1) as f64;
                k.u_psp * liffi(k.u_rest + k.resistance * value, k)
            })
            .collect();
        Self { rates }
    }

    pub fn rate_of(&self, value: f64) -> f64 {
        let x = value.clamp(0.0, 1.0) * (CALIBRATION_POINTS - 1) as f64;
        let m = (x.floor() as usize).min(CALIBRATION_POINTS - 2);
        let frac = x - m as f64;
        self.rates[m] + frac * (self.rates[m + 1] - self.rates[m])
    }

    /// Inverse by linear interpolation, clamped to [0,1].
    pub fn value_of(&self, rate: f64) -> f64 {
        if !(rate > self.rates[0]) {
            return 0.0;
        }
        let top = CALIBRATION_POINTS - 1;
        if rate >= self.rates[top] {
            return 1.0;
        }
        let m = self.rates.partition_point(|&r| r <= rate) - 1;
        let (lo, hi) = (self.rates[m], self.rates[m + 1]);
        let frac = if hi > lo {
            (rate - lo) / (hi - lo)
        } else {
            0.0
        };
        ((m as f64 + frac) / top as f64).clamp(0.0, 1.0)
    }
}

/// One row of a probe trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSample {
    pub t: f64,
    pub u: f64,
    pub syn: f64,
    pub rate_est: f64,
    pub current: f64,
}

/// Records the state of a single neuron at every step of a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub neuron: usize,
    pub samples: Vec<ProbeSample>,
}

impl Probe {
    pub fn new(neuron: usize) -> Self {
        Self {
            neuron,
            samples: Vec::new(),
        }
    }

    fn record(&mut self, state: &SpikingState, t: f64, current: f64) {
        let i = self.neuron;
        self.samples.push(ProbeSample {
            t,
            u: state.u[i],
            syn: state.syn[i],
            rate_est: state.rate_est[i],
            current,
        });
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,u,syn,rate_est,current")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.t, s.u, s.syn, s.rate_est, s.current
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Decoded from the end of the free phase.
    pub prediction: [f64; 2],
    pub train_error: f64,
    /// Trial-local time of the anti-Hebbian step.
    pub anti_hebbian_at: f64,
    /// Trial-local time of the Hebbian step.
    pub hebbian_at: f64,
    pub r_minus: Vec<f64>,
    pub r_plus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub sample_index: usize,
    pub train_error: f64,
}

/// Spiking network with population-coded inputs and outputs.
#[derive(Debug, Clone)]
pub struct SpikingModel {
    pub topology: NetworkTopology,
    pub code: PopulationCode,
    pub constants: NeuronConstants,
    /// `beta` is not used: the nudging strength comes from the target current.
    pub schedule: PhaseSchedule,
    /// Keep traces and potentials from one trial to the next.
    pub carry_traces: bool,
    calibration: RateCalibration,
}

impl SpikingModel {
    pub fn new(
        topology: NetworkTopology,
        code: PopulationCode,
        constants: NeuronConstants,
        schedule: PhaseSchedule,
        carry_traces: bool,
    ) -> Result<Self> {
        constants.validate()?;
        check_len("input layer", code.input_size(), topology.input_set().len())?;
        check_len(
            "output layer",
            code.output_size(),
            topology.output_set().len(),
        )?;
        if !(schedule.t_forward > 0.0 && schedule.t_backward > 0.0) {
            return Err(Error::InvalidArgument(
                "phase durations must be positive".into(),
            ));
        }
        let dt = schedule.dt;
        if !(dt > 0.0 && dt <= constants.tau.min(constants.tau_s).min(constants.tau_r)) {
            return Err(Error::InvalidArgument(format!(
                "dt {dt} must be positive and below every time constant"
            )));
        }
        Ok(Self {
            topology,
            code,
            constants,
            schedule,
            carry_traces,
            calibration: RateCalibration::new(&constants),
        })
    }

    pub fn calibration(&self) -> &RateCalibration {
        &self.calibration
    }

    pub fn new_state(&self) -> SpikingState {
        SpikingState::new(self.topology.len(), &self.constants)
    }

    /// Current vector with inputs and bias units set and outputs silent.
    pub fn input_currents(&self, sample: [f64; 2]) -> Result<Vec<f64>> {
        let mut current = vec![0.0; self.topology.len()];
        for (&i, c) in self
            .topology
            .input_set()
            .iter()
            .zip(self.code.encode_input(sample)?)
        {
            current[i] = c;
        }
        for &b in self.topology.bias_units() {
            current[b] = BIAS_ACTIVATION;
        }
        Ok(current)
    }

    fn set_targets(&self, current: &mut [f64], target: [f64; 2]) -> Result<()> {
        for (&i, c) in self
            .topology
            .output_set()
            .iter()
            .zip(self.code.encode_target(target)?)
        {
            current[i] = c;
        }
        Ok(())
    }

    fn steps(&self, duration: f64) -> usize {
        (duration / self.schedule.dt).round() as usize
    }

    fn simulate(
        &self,
        params: &NetworkParams,
        state: &mut SpikingState,
        current: &[f64],
        duration: f64,
        t0: f64,
        probe: &mut Option<&mut Probe>,
    ) -> Result<()> {
        let dt = self.schedule.dt;
        for k in 0..self.steps(duration) {
            step_spiking(&self.topology, params, &self.constants, state, current, dt)?;
            if let Some(p) = probe.as_deref_mut() {
                p.record(state, t0 + (k + 1) as f64 * dt, current[p.neuron]);
            }
        }
        Ok(())
    }

    pub fn decode_output(&self, state: &SpikingState) -> [f64; 2] {
        self.code
            .group_rates(&self.topology, state)
            .map(|r| self.calibration.value_of(r))
    }

    /// Free phase from rest; returns the decoded prediction.
    pub fn predict(&self, params: &NetworkParams, sample: &TaskSample) -> Result<[f64; 2]> {
        let mut state = self.new_state();
        let current = self.input_currents(sample.input())?;
        self.simulate(
            params,
            &mut state,
            &current,
            self.schedule.t_forward,
            0.0,
            &mut None,
        )?;
        Ok(self.decode_output(&state))
    }

    pub fn evaluate(&self, params: &NetworkParams, samples: &[TaskSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        let predictions = samples
            .par_iter()
            .map(|s| self.predict(params, s))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<[f64; 2]> = samples.iter().map(TaskSample::target).collect();
        euclid_error(&predictions, &targets)
    }

    fn correlate(&self, params: &mut NetworkParams, r: &[f64], rates: &LearningRates, sign: f64) {
        crate::rate::apply_correlation(&self.topology, params, r, rates, sign);
    }

    /// One online trial: free phase, anti-Hebbian step, target phase,
    /// Hebbian step.
    pub fn run_trial(
        &self,
        params: &mut NetworkParams,
        state: &mut SpikingState,
        sample: &TaskSample,
        rates: &LearningRates,
        mut probe: Option<&mut Probe>,
    ) -> Result<TrialOutcome> {
        if !self.carry_traces {
            state.reset(&self.constants);
        }
        let t0 = state.t_now;
        let mut current = self.input_currents(sample.input())?;
        self.simulate(
            params,
            state,
            &current,
            self.schedule.t_forward,
            0.0,
            &mut probe,
        )?;
        let prediction = self.decode_output(state);
        let train_error = euclid_error(&[prediction], &[sample.target()])?;
        let anti_hebbian_at = state.t_now - t0;
        let r_minus = state.rate_est.clone();
        self.correlate(params, &r_minus, rates, -1.0);

        self.set_targets(&mut current, sample.target())?;
        self.simulate(
            params,
            state,
            &current,
            self.schedule.t_backward,
            anti_hebbian_at,
            &mut probe,
        )?;
        let hebbian_at = state.t_now - t0;
        let r_plus = state.rate_est.clone();
        self.correlate(params, &r_plus, rates, 1.0);

        Ok(TrialOutcome {
            prediction,
            train_error,
            anti_hebbian_at,
            hebbian_at,
            r_minus,
            r_plus,
        })
    }

    /// Runs `n_samples` trials, calling `observe` after each.
    pub fn train<S, O>(
        &self,
        params: &mut NetworkParams,
        state: &mut SpikingState,
        mut sampler: S,
        rates: &LearningRates,
        n_samples: usize,
        mut observe: O,
    ) -> Result<Vec<TrialMetrics>>
    where
        S: FnMut() -> Result<TaskSample>,
        O: FnMut(&TrialMetrics, &NetworkParams) -> Result<()>,
    {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
        }
        let mut log = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let sample = sampler()?;
            let outcome = self
                .run_trial(params, state, &sample, rates, None)
                .map_err(|e| e.at_sample(k))?;
            let m = TrialMetrics {
                sample_index: k,
                train_error: outcome.train_error,
            };
            observe(&m, params)?;
            log.push(m);
        }
        Ok(log)
    }

    /// Neurons that never receive recurrent drive.
    pub fn is_source(&self, i: usize) -> bool {
        matches!(self.topology.role(i), Role::Input | Role::Bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, RngSpec};
    use crate::task::make_sample;

    fn constants() -> NeuronConstants {
        NeuronConstants {
            tau: 15.0,
            u_rest: 20.0,
            u_reset: 0.0,
            theta: 20.0,
            delta: 5.0,
            tau_s: 15.0,
            tau_r: 100.0,
            u_psp: 400.0,
            resistance: 40.0,
        }
    }

    fn schedule(t: f64) -> PhaseSchedule {
        PhaseSchedule {
            t_forward: t,
            t_backward: t,
            beta: 1.0,
            dt: 1.0,
        }
    }

    fn small_model(npd: usize, hidden: usize) -> SpikingModel {
        let code = PopulationCode::new(npd).unwrap();
        let topology = NetworkTopology::build(&code.layer_sizes(&[hidden]), true).unwrap();
        SpikingModel::new(topology, code, constants(), schedule(600.0), false).unwrap()
    }

    #[test]
    fn nudging_factor_cases() {
        assert_eq!(nudging_factor(0.0, 12.0), 0.0);
        assert_eq!(nudging_factor(20.0, 20.0), 0.5);
        assert_eq!(nudging_factor(8.0, 0.0), 1.0);
        assert_eq!(nudging_factor(0.0, 0.0), 0.0);
        assert_eq!(nudging_factor(3.0, -5.0), 0.0);
    }

    #[test]
    fn encoding() {
        let code = PopulationCode::new(20).unwrap();
        assert!(code
            .encode_input([0.0, 0.0])
            .unwrap()
            .iter()
            .all(|&c| c == 0.0));
        let c = code.encode_input([1.0, 0.25]).unwrap();
        assert_eq!(c.len(), 40);
        assert!(c[..20].iter().all(|&v| v == 1.0));
        assert!(c[20..].iter().all(|&v| v == 0.25));
        let t = code.encode_target([1.0, 0.5]).unwrap();
        assert!(t[..20].iter().all(|&v| v == 1.0) && t[20..].iter().all(|&v| v == 0.5));
        let s = code.encode_target([0.3, 0.3]).unwrap();
        assert_eq!(s[..20], s[20..]);
        assert!(code.encode_input([1.2, 0.0]).is_err());
        assert!(code.encode_target([0.0, -0.1]).is_err());
        assert!(PopulationCode::new(0).is_err());
    }

    #[test]
    fn calibration_endpoints_and_inverse() {
        let k = constants();
        let cal = RateCalibration::new(&k);
        assert_eq!(cal.value_of(0.0), 0.0);
        assert_eq!(cal.value_of(cal.rate_of(1.0)), 1.0);
        assert_eq!(cal.value_of(1e9), 1.0);
        for v in [0.05, 0.3, 0.6, 0.95] {
            assert!((cal.value_of(cal.rate_of(v)) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn silent_network_decodes_to_zero() {
        let m = small_model(3, 4);
        let st = m.new_state();
        assert_eq!(m.decode_output(&st), [0.0, 0.0]);
    }

    #[test]
    fn step_rejects_negative_current() {
        let m = small_model(2, 3);
        let p = NetworkParams::zeros(m.topology.len());
        let mut st = m.new_state();
        let mut cur = vec![0.0; m.topology.len()];
        cur[0] = -0.1;
        assert!(step_spiking(&m.topology, &p, &m.constants, &mut st, &cur, 1.0).is_err());
    }

    #[test]
    fn refractory_spacing_and_threshold() {
        let k = constants();
        let t = NetworkTopology::from_mask(1, vec![false], vec![0], vec![], vec![]).unwrap();
        let p = NetworkParams::zeros(1);
        for dt in [1.0, 0.1] {
            let mut st = SpikingState::new(1, &k).with_spike_log();
            for _ in 0..(2000.0 / dt) as usize {
                step_spiking(&t, &p, &k, &mut st, &[1.0], dt).unwrap();
                assert!(st.u[0] < k.theta);
            }
            let spikes = &st.spikes.as_ref().unwrap()[0];
            assert!(spikes.len() > 10);
            for w in spikes.windows(2) {
                assert!(w[1] - w[0] >= k.delta - dt / 2.0);
            }
        }
    }

    #[test]
    fn traces_stay_non_negative() {
        let m = small_model(3, 5);
        let p = init_weights(&m.topology, &mut RngSpec::new(3, 0).rng(), 1.0).unwrap();
        let mut st = m.new_state();
        let cur = m.input_currents([0.8, 0.4]).unwrap();
        for _ in 0..500 {
            step_spiking(&m.topology, &p, &m.constants, &mut st, &cur, 1.0).unwrap();
            assert!(st.syn.iter().all(|&s| s >= 0.0));
            assert!(st.rate_est.iter().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn zero_learning_rate_is_pure_simulation() {
        let m = small_model(2, 4);
        let p0 = init_weights(&m.topology, &mut RngSpec::new(1, 0).rng(), 1.0).unwrap();
        let mut p = p0.clone();
        let rates = LearningRates::new(&m.topology, 0.0).unwrap();
        let mut st = m.new_state();
        m.run_trial(
            &mut p,
            &mut st,
            &make_sample(0.3, 0.6).unwrap(),
            &rates,
            None,
        )
        .unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn trial_timing_follows_phases() {
        let m = small_model(2, 4);
        let mut p = init_weights(&m.topology, &mut RngSpec::new(1, 0).rng(), 1.0).unwrap();
        let rates = LearningRates::new(&m.topology, 1e-5).unwrap();
        let mut st = m.new_state();
        let out = m
            .run_trial(
                &mut p,
                &mut st,
                &make_sample(0.3, 0.6).unwrap(),
                &rates,
                None,
            )
            .unwrap();
        assert_eq!(out.anti_hebbian_at, 600.0);
        assert_eq!(out.hebbian_at, 1200.0);
    }

    #[test]
    fn equal_snapshots_cancel() {
        let m = small_model(2, 3);
        let p0 = init_weights(&m.topology, &mut RngSpec::new(2, 0).rng(), 1.0).unwrap();
        let mut p = p0.clone();
        let rates = LearningRates::new(&m.topology, 5e-5).unwrap();
        let r: Vec<f64> = (0..m.topology.len()).map(|i| 3.0 + i as f64).collect();
        m.correlate(&mut p, &r, &rates, -1.0);
        m.correlate(&mut p, &r, &rates, 1.0);
        for (a, b) in p.as_slice().iter().zip(p0.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn probe_and_raster_csv() {
        let m = small_model(2, 3);
        let mut p = init_weights(&m.topology, &mut RngSpec::new(2, 0).rng(), 1.0).unwrap();
        let rates = LearningRates::new(&m.topology, 0.0).unwrap();
        let mut st = m.new_state().with_spike_log();
        let out_neuron = m.topology.output_set()[0];
        let mut probe = Probe::new(out_neuron);
        m.run_trial(
            &mut p,
            &mut st,
            &make_sample(0.5, 0.5).unwrap(),
            &rates,
            Some(&mut probe),
        )
        .unwrap();
        assert_eq!(probe.samples.len(), 1200);
        assert_eq!(probe.samples[599].t, 600.0);
        assert_eq!(probe.samples[599].current, 0.0);
        assert!(probe.samples[600].current > 0.0);
        let mut buf = Vec::new();
        probe.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,u,syn,rate_est,current\n"));
        let mut buf = Vec::new();
        st.write_raster_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().count() > 1);
    }

    #[test]
    fn model_rejects_mismatched_code() {
        let code = PopulationCode::new(3).unwrap();
        let topology = NetworkTopology::build(&[4, 5, 6], true).unwrap();
        assert!(SpikingModel::new(topology, code, constants(), schedule(100.0), false).is_err());
    }
}
