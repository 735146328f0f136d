//! Energy function of the rate network, its state gradient, and forward-Euler
//! relaxation towards a fixed point.
//!
//! Input neurons (when clamped) and bias units are *pinned*: they keep their
//! value and never move. Couplings from a pinned neuron onto a free one are
//! feedforward in the mask, so the energy counts them as if the mirrored
//! feedback weight existed. With that convention the dynamics below is exactly
//! the negative energy gradient whenever the free-to-free weights are
//! symmetric.

use std::io::Write;

use crate::error::{check_len, Error, Result};
use crate::network::{NetworkParams, NetworkTopology, Role};
use crate::nonlinearity::Nonlinearity;

/// State of every bias unit, in value units.
pub const BIAS_ACTIVATION: f64 = 1.0;

/// Any |s_i| above this aborts relaxation.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputMode {
    /// Inputs are held at their targets (infinite input nudging).
    Clamped,
    /// Inputs are free neurons pulled towards their targets with this strength.
    Soft(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateState {
    pub s: Vec<f64>,
    /// External targets; only entries on input and output neurons matter.
    pub s_hat: Vec<f64>,
    pub input_mode: InputMode,
    pub beta_y: f64,
}

impl RateState {
    /// Free neurons at `initial`, bias units at [`BIAS_ACTIVATION`], inputs clamped at 0.
    pub fn new(topology: &NetworkTopology, initial: f64) -> Self {
        let n = topology.len();
        let mut s = vec![initial; n];
        for &i in topology.input_set() {
            s[i] = 0.0;
        }
        for &b in topology.bias_units() {
            s[b] = BIAS_ACTIVATION;
        }
        Self {
            s,
            s_hat: vec![0.0; n],
            input_mode: InputMode::Clamped,
            beta_y: 0.0,
        }
    }

    /// Sets the input targets; under clamping the input states follow.
    pub fn set_inputs(&mut self, topology: &NetworkTopology, x: &[f64]) -> Result<()> {
        check_len("input vector", topology.input_set().len(), x.len())?;
        for (&i, &v) in topology.input_set().iter().zip(x) {
            self.s_hat[i] = v;
            if self.input_mode == InputMode::Clamped {
                self.s[i] = v;
            }
        }
        Ok(())
    }

    pub fn set_targets(&mut self, topology: &NetworkTopology, y: &[f64]) -> Result<()> {
        check_len("target vector", topology.output_set().len(), y.len())?;
        for (&i, &v) in topology.output_set().iter().zip(y) {
            self.s_hat[i] = v;
        }
        Ok(())
    }

    pub fn outputs(&self, topology: &NetworkTopology) -> Vec<f64> {
        topology.output_set().iter().map(|&i| self.s[i]).collect()
    }

    pub fn is_pinned(&self, topology: &NetworkTopology, i: usize) -> bool {
        match topology.role(i) {
            Role::Bias => true,
            Role::Input => self.input_mode == InputMode::Clamped,
            Role::Hidden | Role::Output => false,
        }
    }

    fn check(&self, topology: &NetworkTopology, params: &NetworkParams) -> Result<()> {
        let n = topology.len();
        check_len("weights", n, params.len())?;
        check_len("state", n, self.s.len())?;
        check_len("targets", n, self.s_hat.len())?;
        if !(self.beta_y >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta_y must be non-negative, got {}",
                self.beta_y
            )));
        }
        if let InputMode::Soft(b) = self.input_mode {
            if !(b >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta_x must be non-negative, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// Energy of `state`.
pub fn energy(
    topology: &NetworkTopology,
    params: &NetworkParams,
    act: &Nonlinearity,
    state: &RateState,
) -> Result<f64> {
    state.check(topology, params)?;
    let rho: Vec<f64> = state.s.iter().map(|&s| act.rho(s)).collect();
    Ok(energy_with_rates(topology, params, state, &rho))
}

fn energy_with_rates(
    topology: &NetworkTopology,
    params: &NetworkParams,
    state: &RateState,
    rho: &[f64],
) -> f64 {
    let n = topology.len();
    let mut twice = 0.0;
    for i in 0..n {
        if topology.role(i) != Role::Bias {
            twice += state.s[i] * state.s[i];
        }
        let row = params.row(i);
        let mut coupling = 0.0;
        for &j in topology.inbound(i) {
            let weight = if state.is_pinned(topology, j) {
                2.0
            } else {
                1.0
            };
            coupling += weight * row[j] * rho[j];
        }
        twice -= coupling * rho[i];
    }
    if let InputMode::Soft(beta_x) = state.input_mode {
        for &i in topology.input_set() {
            let d = state.s_hat[i] - state.s[i];
            twice += beta_x * d * d;
        }
    }
    for &i in topology.output_set() {
        let d = state.s_hat[i] - state.s[i];
        twice += state.beta_y * d * d;
    }
    0.5 * twice
}

/// τ·ds/dt for every neuron; zero on pinned neurons.
pub fn dynamics_rhs(
    topology: &NetworkTopology,
    params: &NetworkParams,
    act: &Nonlinearity,
    state: &RateState,
) -> Result<Vec<f64>> {
    state.check(topology, params)?;
    let rho: Vec<f64> = state.s.iter().map(|&s| act.rho(s)).collect();
    let mut out = vec![0.0; topology.len()];
    rhs_into(topology, params, act, state, &rho, &mut out);
    Ok(out)
}

fn rhs_into(
    topology: &NetworkTopology,
    params: &NetworkParams,
    act: &Nonlinearity,
    state: &RateState,
    rho: &[f64],
    out: &mut [f64],
) {
    for (i, slot) in out.iter_mut().enumerate() {
        if state.is_pinned(topology, i) {
            *slot = 0.0;
            continue;
        }
        let s = state.s[i];
        let row = params.row(i);
        let drive: f64 = topology.inbound(i).iter().map(|&j| row[j] * rho[j]).sum();
        let mut v = -s + act.rho_prime(s) * drive;
        match (topology.role(i), state.input_mode) {
            (Role::Input, InputMode::Soft(beta_x)) => v += beta_x * (state.s_hat[i] - s),
            (Role::Output, _) => v += state.beta_y * (state.s_hat[i] - s),
            _ => {}
        }
        *slot = v;
    }
}

/// ∞-norm of the energy gradient over free neurons.
pub fn residual(
    topology: &NetworkTopology,
    params: &NetworkParams,
    act: &Nonlinearity,
    state: &RateState,
) -> Result<f64> {
    Ok(inf_norm(&dynamics_rhs(topology, params, act, state)?))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxConfig {
    /// Euler step (ms).
    pub dt: f64,
    /// Maximum integration time (ms).
    pub duration: f64,
    /// Neuron time constant (ms).
    pub tau: f64,
    /// Stop as soon as the residual falls below this.
    pub residual_tol: Option<f64>,
    pub record_trace: bool,
}

impl RelaxConfig {
    pub fn fixed(dt: f64, duration: f64, tau: f64) -> Self {
        Self {
            dt,
            duration,
            tau,
            residual_tol: None,
            record_trace: false,
        }
    }

    /// Long run that stops at `tol`.
    pub fn converge(dt: f64, tau: f64, tol: f64) -> Self {
        Self {
            dt,
            duration: 1e5,
            tau,
            residual_tol: Some(tol),
            record_trace: false,
        }
    }

    fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt and tau must be positive (dt = {}, tau = {})",
                self.dt, self.tau
            )));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::InvalidArgument(format!(
                "duration {} shorter than one step {}",
                self.duration, self.dt
            )));
        }
        Ok((self.duration / self.dt).round() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub energy: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxReport {
    pub steps_taken: usize,
    pub final_residual: f64,
    /// One point before the first step and one after each step.
    pub trace: Option<Vec<TracePoint>>,
}

impl RelaxReport {
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,energy,residual")?;
        for p in self.trace.iter().flatten() {
            writeln!(out, "{},{},{}", p.step, p.energy, p.residual)?;
        }
        Ok(())
    }
}

/// Forward-Euler relaxation `s ← s + (dt/τ)·rhs`, in place.
///
/// A step that would carry a non-negative state below zero stops at zero.
/// Both activations vanish there with zero derivative, which is where the
/// continuous flow comes to rest.
pub fn relax(
    topology: &NetworkTopology,
    params: &NetworkParams,
    act: &Nonlinearity,
    state: &mut RateState,
    cfg: &RelaxConfig,
) -> Result<RelaxReport> {
    state.check(topology, params)?;
    let steps = cfg.steps()?;
    let n = topology.len();
    let rate = cfg.dt / cfg.tau;
    let free: Vec<usize> = (0..n).filter(|&i| !state.is_pinned(topology, i)).collect();

    let mut rho = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut trace = cfg.record_trace.then(Vec::new);

    let evaluate = |state: &RateState, rho: &mut [f64], rhs: &mut [f64]| -> f64 {
        for (r, &s) in rho.iter_mut().zip(&state.s) {
            *r = act.rho(s);
        }
        rhs_into(topology, params, act, state, rho, rhs);
        inf_norm(rhs)
    };

    let mut res = evaluate(state, &mut rho, &mut rhs);
    let mut taken = 0;
    loop {
        if let Some(t) = trace.as_mut() {
            t.push(TracePoint {
                step: taken,
                energy: energy_with_rates(topology, params, state, &rho),
                residual: res,
            });
        }
        if taken == steps || cfg.residual_tol.is_some_and(|tol| res < tol) {
            break;
        }
        for &i in &free {
            let old = state.s[i];
            let mut new = old + rate * rhs[i];
            if old >= 0.0 && new < 0.0 {
                new = 0.0;
            }
            if !new.is_finite() || new.abs() > DIVERGENCE_BOUND {
                return Err(Error::Divergence {
                    step: taken,
                    neuron: i,
                    value: new,
                });
            }
            state.s[i] = new;
        }
        taken += 1;
        res = evaluate(state, &mut rho, &mut rhs);
    }
    Ok(RelaxReport {
        steps_taken: taken,
        final_residual: res,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_weights, RngSpec};
    use crate::nonlinearity::{DerivativeMode, NeuronConstants};

    fn free_state(n: usize, values: &[f64]) -> RateState {
        RateState {
            s: values.to_vec(),
            s_hat: vec![0.0; n],
            input_mode: InputMode::Clamped,
            beta_y: 0.0,
        }
    }

    fn single_with_bias(b: f64) -> (NetworkTopology, NetworkParams) {
        let t = NetworkTopology::fully_connected(1, true).unwrap();
        let mut p = NetworkParams::zeros(2);
        p.set(0, 1, b);
        (t, p)
    }

    #[test]
    fn scalar_energy() {
        let (t, p) = single_with_bias(0.0);
        let e = energy(&t, &p, &Nonlinearity::relu(), &free_state(2, &[2.0, 1.0])).unwrap();
        assert_eq!(e, 2.0);
    }

    #[test]
    fn two_neuron_energy() {
        let t = NetworkTopology::fully_connected(2, false).unwrap();
        let mut p = NetworkParams::zeros(2);
        p.set(0, 1, 0.5);
        p.set(1, 0, 0.5);
        let e = energy(&t, &p, &Nonlinearity::relu(), &free_state(2, &[1.0, 1.0])).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bias_drive_and_fixed_point() {
        let (t, p) = single_with_bias(3.0);
        let mut st = RateState::new(&t, 1e-9);
        let rhs = dynamics_rhs(&t, &p, &Nonlinearity::relu(), &st).unwrap();
        assert!((rhs[0] - 3.0).abs() < 1e-8);
        assert_eq!(rhs[1], 0.0);

        let cfg = RelaxConfig {
            residual_tol: Some(1e-3),
            ..RelaxConfig::fixed(1.0, 600.0, 15.0)
        };
        let rep = relax(&t, &p, &Nonlinearity::relu(), &mut st, &cfg).unwrap();
        assert!((st.s[0] - 3.0).abs() < 1e-3);
        assert!(rep.final_residual < 1e-3);
        assert_eq!(st.s[1], BIAS_ACTIVATION);
    }

    #[test]
    fn negative_state_leaks() {
        let (t, p) = single_with_bias(3.0);
        let st = RateState {
            s: vec![-0.7, 1.0],
            ..RateState::new(&t, 0.0)
        };
        let rhs = dynamics_rhs(&t, &p, &Nonlinearity::relu(), &st).unwrap();
        assert_eq!(rhs[0], 0.7);
    }

    #[test]
    fn zero_network_relaxes_to_zero() {
        let t = NetworkTopology::build(&[2, 3, 2], false).unwrap();
        let p = NetworkParams::zeros(t.len());
        let mut st = RateState::new(&t, 0.3);
        relax(
            &t,
            &p,
            &Nonlinearity::relu(),
            &mut st,
            &RelaxConfig::fixed(1.0, 600.0, 15.0),
        )
        .unwrap();
        for &i in &[2, 3, 4, 5, 6] {
            assert!(st.s[i].abs() < 1e-12);
        }
    }

    #[test]
    fn relax_rejects_bad_steps() {
        let (t, p) = single_with_bias(1.0);
        let mut st = RateState::new(&t, 0.0);
        let act = Nonlinearity::relu();
        assert!(relax(&t, &p, &act, &mut st, &RelaxConfig::fixed(0.0, 10.0, 15.0)).is_err());
        assert!(relax(&t, &p, &act, &mut st, &RelaxConfig::fixed(1.0, 0.5, 15.0)).is_err());
    }

    #[test]
    fn runaway_excitation_is_reported() {
        let t = NetworkTopology::fully_connected(2, false).unwrap();
        let mut p = NetworkParams::zeros(2);
        p.set(0, 1, 3.0);
        p.set(1, 0, 3.0);
        let mut st = free_state(2, &[1.0, 1.0]);
        let err = relax(
            &t,
            &p,
            &Nonlinearity::relu(),
            &mut st,
            &RelaxConfig::fixed(1.0, 1e4, 15.0),
        )
        .unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn dimension_mismatch() {
        let t = NetworkTopology::fully_connected(2, false).unwrap();
        let p = NetworkParams::zeros(2);
        assert!(energy(&t, &p, &Nonlinearity::relu(), &free_state(3, &[0.0; 3])).is_err());
    }

    #[test]
    fn relu_stays_non_negative() {
        let t = NetworkTopology::build(&[2, 6, 2], true).unwrap();
        let mut rng = RngSpec::new(4, 0).rng();
        let p = init_weights(&t, &mut rng, 2.0).unwrap();
        let mut st = RateState::new(&t, 0.5);
        st.set_inputs(&t, &[0.3, 0.9]).unwrap();
        let cfg = RelaxConfig {
            record_trace: true,
            ..RelaxConfig::fixed(1.0, 300.0, 15.0)
        };
        relax(&t, &p, &Nonlinearity::relu(), &mut st, &cfg).unwrap();
        assert!(st.s.iter().all(|&s| s >= -1e-12));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (t, p) = single_with_bias(1.0);
        let mut st = RateState::new(&t, 0.1);
        let cfg = RelaxConfig {
            record_trace: true,
            ..RelaxConfig::fixed(1.0, 5.0, 15.0)
        };
        let rep = relax(&t, &p, &Nonlinearity::relu(), &mut st, &cfg).unwrap();
        let mut buf = Vec::new();
        rep.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("step,energy,residual\n0,"));
    }

    #[test]
    fn liffi_rhs_uses_surrogate_slope() {
        let k = NeuronConstants {
            tau: 15.0,
            u_rest: 20.0,
            u_reset: 0.0,
            theta: 20.0,
            delta: 5.0,
            tau_s: 10.0,
            tau_r: 300.0,
            u_psp: 400.0,
            resistance: 40.0,
        };
        let act = Nonlinearity::liffi(k, DerivativeMode::Surrogate).unwrap();
        let (t, p) = single_with_bias(0.8);
        let st = RateState::new(&t, 0.25);
        let rhs = dynamics_rhs(&t, &p, &act, &st).unwrap();
        assert!((rhs[0] - (-0.25 + 0.8)).abs() < 1e-15);
    }
}
