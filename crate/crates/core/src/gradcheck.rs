//! Numerical checks of the equilibrium propagation gradient estimate.
//!
//! For a quadratic output cost `C = ½ Σ_out (ŷ_i − s_i)²` at the free fixed
//! point, the contrastive quantity
//! `(ρ_i^β ρ_j^β − ρ_i* ρ_j*) / β`
//! approaches `−dC/dθ_ij` as β → 0. Here θ_ij is the value shared by a
//! reciprocal pair `w_ij = w_ji`, or the single weight when the source
//! neuron is pinned. The oracle differentiates C by re-relaxing the network
//! under perturbed weights.
//!
//! All checks use hard input clamping and the activation's exact
//! derivative.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{dynamics_rhs, relax, RateState, RelaxConfig};
use crate::error::{check_len, Error, Result};
use crate::network::{init_weights, NetworkParams, NetworkTopology};
use crate::nonlinearity::{DerivativeMode, Nonlinearity};

/// Weight perturbation of the oracle.
pub const WEIGHT_STEP: f64 = 1e-5;
/// State perturbation of the finite-difference Hessian.
pub const STATE_STEP: f64 = 1e-6;
/// Default residual every relaxation is driven to.
pub const RELAX_TOL: f64 = 1e-13;
/// Hessians with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;
pub const BETA_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Network, activation and relaxation settings shared by all checks.
#[derive(Debug, Clone)]
pub struct GradcheckSetup {
    pub topology: NetworkTopology,
    pub activation: Nonlinearity,
    /// Euler step relative to τ.
    pub step_ratio: f64,
    pub tol: f64,
    /// Starting value of free neurons in the first relaxation.
    pub initial_state: f64,
}

impl GradcheckSetup {
    /// Forces the exact derivative on `activation`.
    pub fn new(topology: NetworkTopology, activation: Nonlinearity) -> Self {
        Self {
            topology,
            activation: Nonlinearity {
                derivative: DerivativeMode::Exact,
                ..activation
            },
            step_ratio: 0.25,
            tol: RELAX_TOL,
            initial_state: 0.5,
        }
    }

    fn relax_cfg(&self) -> RelaxConfig {
        RelaxConfig {
            dt: self.step_ratio,
            duration: 1e6 * self.step_ratio,
            tau: 1.0,
            residual_tol: Some(self.tol),
            record_trace: false,
        }
    }

    fn settle(&self, params: &NetworkParams, state: &mut RateState) -> Result<()> {
        let report = relax(
            &self.topology,
            params,
            &self.activation,
            state,
            &self.relax_cfg(),
        )?;
        if !(report.final_residual < self.tol) {
            return Err(Error::NotConverged {
                residual: report.final_residual,
                tolerance: self.tol,
            });
        }
        Ok(())
    }

    /// Free-phase fixed point, optionally warm-started from `from`.
    pub fn free_state(
        &self,
        params: &NetworkParams,
        x: &[f64],
        from: Option<&RateState>,
    ) -> Result<RateState> {
        let mut state = match from {
            Some(s) => s.clone(),
            None => RateState::new(&self.topology, self.initial_state),
        };
        state.beta_y = 0.0;
        state.set_inputs(&self.topology, x)?;
        self.settle(params, &mut state)?;
        Ok(state)
    }

    /// Nudged fixed point, started from the free one.
    pub fn nudged_state(
        &self,
        params: &NetworkParams,
        free: &RateState,
        y_hat: &[f64],
        beta: f64,
    ) -> Result<RateState> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {beta}"
            )));
        }
        let mut state = free.clone();
        state.set_targets(&self.topology, y_hat)?;
        state.beta_y = beta;
        self.settle(params, &mut state)?;
        Ok(state)
    }
}

/// `½ Σ_out (ŷ_i − s_i)²`.
pub fn cost(topology: &NetworkTopology, state: &RateState, y_hat: &[f64]) -> Result<f64> {
    let out = topology.output_set();
    check_len("target vector", out.len(), y_hat.len())?;
    check_len("state", topology.len(), state.s.len())?;
    Ok(out
        .iter()
        .zip(y_hat)
        .map(|(&i, &y)| 0.5 * (y - state.s[i]).powi(2))
        .sum())
}

/// dC/ds over all neurons; nonzero only on outputs.
pub fn cost_grad(topology: &NetworkTopology, state: &RateState, y_hat: &[f64]) -> Result<Vec<f64>> {
    check_len("target vector", topology.output_set().len(), y_hat.len())?;
    let mut g = vec![0.0; topology.len()];
    for (&i, &y) in topology.output_set().iter().zip(y_hat) {
        g[i] = -(y - state.s[i]);
    }
    Ok(g)
}

/// Allowed entries grouped into independent parameters: a reciprocal pair
/// is one parameter.
pub fn tied_parameters(topology: &NetworkTopology) -> Vec<Vec<(usize, usize)>> {
    let mut groups = Vec::new();
    for i in 0..topology.len() {
        for &j in topology.inbound(i) {
            if topology.allowed(j, i) {
                if j > i {
                    groups.push(vec![(i, j), (j, i)]);
                }
            } else {
                groups.push(vec![(i, j)]);
            }
        }
    }
    groups
}

/// Brute-force dC/dθ by central differences of the relaxed cost, written to
/// every entry of its parameter group.
pub fn oracle_grad(
    setup: &GradcheckSetup,
    params: &NetworkParams,
    x: &[f64],
    y_hat: &[f64],
    h: f64,
) -> Result<NetworkParams> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    let base = setup.free_state(params, x, None)?;
    let groups = tied_parameters(&setup.topology);
    let derivs = groups
        .par_iter()
        .map(|group| {
            let at = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                for &(i, j) in group {
                    p.add(i, j, delta);
                }
                let s = setup.free_state(&p, x, Some(&base))?;
                cost(&setup.topology, &s, y_hat)
            };
            Ok((at(h)? - at(-h)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = NetworkParams::zeros(setup.topology.len());
    for (group, d) in groups.iter().zip(derivs) {
        for &(i, j) in group {
            grad.set(i, j, d);
        }
    }
    Ok(grad)
}

/// `(ρ^β ρ^βᵀ − ρ* ρ*ᵀ) / β` on the allowed entries. Its negative
/// approximates dC/dθ.
pub fn contrastive_estimate(
    setup: &GradcheckSetup,
    params: &NetworkParams,
    x: &[f64],
    y_hat: &[f64],
    beta: f64,
) -> Result<NetworkParams> {
    let free = setup.free_state(params, x, None)?;
    let nudged = setup.nudged_state(params, &free, y_hat, beta)?;
    Ok(estimate_from_states(setup, &free, &nudged, beta))
}

fn estimate_from_states(
    setup: &GradcheckSetup,
    free: &RateState,
    nudged: &RateState,
    beta: f64,
) -> NetworkParams {
    let act = &setup.activation;
    let r0: Vec<f64> = free.s.iter().map(|&s| act.rho(s)).collect();
    let r1: Vec<f64> = nudged.s.iter().map(|&s| act.rho(s)).collect();
    let mut est = NetworkParams::zeros(setup.topology.len());
    for i in 0..setup.topology.len() {
        for &j in setup.topology.inbound(i) {
            est.set(i, j, (r1[i] * r1[j] - r0[i] * r0[j]) / beta);
        }
    }
    est
}

/// `‖a + b‖ / ‖b‖` over allowed entries, i.e. the relative error of `−a`
/// against `b`.
pub fn relative_error(
    topology: &NetworkTopology,
    estimate: &NetworkParams,
    oracle: &NetworkParams,
) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for_allowed(topology, |i, j| {
        let o = oracle.get(i, j);
        diff += (estimate.get(i, j) + o).powi(2);
        norm += o * o;
    });
    (diff / norm).sqrt()
}

/// Cosine similarity between `−estimate` and `oracle`.
pub fn cosine_similarity(
    topology: &NetworkTopology,
    estimate: &NetworkParams,
    oracle: &NetworkParams,
) -> f64 {
    let (mut dot, mut ne, mut no) = (0.0, 0.0, 0.0);
    for_allowed(topology, |i, j| {
        let (e, o) = (-estimate.get(i, j), oracle.get(i, j));
        dot += e * o;
        ne += e * e;
        no += o * o;
    });
    (dot / (ne.sqrt() * no.sqrt())).clamp(-1.0, 1.0)
}

fn for_allowed(topology: &NetworkTopology, mut f: impl FnMut(usize, usize)) {
    for i in 0..topology.len() {
        for &j in topology.inbound(i) {
            f(i, j);
        }
    }
}

/// Finite-difference Hessian of the energy over the free neurons of `state`.
///
/// Near the ReLU kink (|s_i| < 2h) a one-sided difference is taken on the
/// side given by `direction[i]`.
pub fn energy_hessian(
    setup: &GradcheckSetup,
    params: &NetworkParams,
    state: &RateState,
    direction: &[f64],
    h: f64,
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let topo = &setup.topology;
    let free: Vec<usize> = (0..topo.len())
        .filter(|&i| !state.is_pinned(topo, i))
        .collect();
    let mut probe = state.clone();
    probe.beta_y = 0.0;
    let grad = |s: &RateState| -> Result<Vec<f64>> {
        Ok(dynamics_rhs(topo, params, &setup.activation, s)?
            .into_iter()
            .map(|v| -v)
            .collect())
    };
    let m = free.len();
    let mut hess = DMatrix::zeros(m, m);
    for (c, &i) in free.iter().enumerate() {
        let s_i = state.s[i];
        let (lo, hi) = if s_i.abs() >= 2.0 * h {
            (s_i - h, s_i + h)
        } else if direction[i] > 0.0 {
            (s_i, s_i + h)
        } else {
            (s_i - h, s_i)
        };
        probe.s[i] = hi;
        let g_hi = grad(&probe)?;
        probe.s[i] = lo;
        let g_lo = grad(&probe)?;
        probe.s[i] = s_i;
        for (r, &k) in free.iter().enumerate() {
            hess[(r, c)] = (g_hi[k] - g_lo[k]) / (hi - lo);
        }
    }
    Ok((free, hess))
}

/// 2-norm condition number, or an error above [`MAX_CONDITION`].
pub fn condition_checked(m: &DMatrix<f64>) -> Result<f64> {
    let sv = m.clone().svd(false, false).singular_values;
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &v| (a.max(v), b.min(v)));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    Ok(condition)
}

/// Result of the stationarity check on the Lagrange multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    /// `(s^β − s*)/β` on the free neurons.
    pub lambda_hat: Vec<f64>,
    /// ‖dC/ds + H λ̂‖∞
    pub residual: f64,
    /// ‖dC/ds‖∞
    pub cost_grad_norm: f64,
    pub condition: f64,
}

pub fn lambda_check(
    setup: &GradcheckSetup,
    params: &NetworkParams,
    x: &[f64],
    y_hat: &[f64],
    beta: f64,
) -> Result<LambdaReport> {
    let free = setup.free_state(params, x, None)?;
    let nudged = setup.nudged_state(params, &free, y_hat, beta)?;
    let lambda_full: Vec<f64> = nudged
        .s
        .iter()
        .zip(&free.s)
        .map(|(b, a)| (b - a) / beta)
        .collect();
    let (idx, hess) = energy_hessian(setup, params, &free, &lambda_full, STATE_STEP)?;
    let condition = condition_checked(&hess)?;
    let dc = cost_grad(&setup.topology, &free, y_hat)?;
    let lambda_hat: Vec<f64> = idx.iter().map(|&i| lambda_full[i]).collect();
    let mut residual = 0.0f64;
    for (r, &i) in idx.iter().enumerate() {
        let hl: f64 = (0..idx.len()).map(|c| hess[(r, c)] * lambda_hat[c]).sum();
        residual = residual.max((dc[i] + hl).abs());
    }
    let cost_grad_norm = dc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(LambdaReport {
        lambda_hat,
        residual,
        cost_grad_norm,
        condition,
    })
}

/// Everything the `gradcheck` command reports for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub beta_values: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub cosine_similarities: Vec<f64>,
    pub lambda_beta: f64,
    pub lambda_residual: f64,
    pub cost_grad_norm: f64,
    pub condition: f64,
}

impl GradReport {
    fn at(&self, beta: f64) -> Option<usize> {
        self.beta_values.iter().position(|&b| b == beta)
    }

    /// Cosine ≥ 0.99 at β = 1e-2, error at 1e-3 below 5% and lower than at 1e-1.
    pub fn estimate_ok(&self) -> bool {
        let (Some(a), Some(b), Some(c)) = (self.at(1e-1), self.at(1e-2), self.at(1e-3)) else {
            return false;
        };
        self.cosine_similarities[b] >= 0.99
            && self.relative_errors[c] <= 0.05
            && self.relative_errors[c] < self.relative_errors[a]
    }

    pub fn lambda_ok(&self) -> bool {
        self.lambda_residual <= 1e-3 * self.cost_grad_norm
    }
}

pub fn grad_report(
    setup: &GradcheckSetup,
    params: &NetworkParams,
    x: &[f64],
    y_hat: &[f64],
    betas: &[f64],
    lambda_beta: f64,
) -> Result<GradReport> {
    let oracle = oracle_grad(setup, params, x, y_hat, WEIGHT_STEP)?;
    let free = setup.free_state(params, x, None)?;
    let mut relative_errors = Vec::with_capacity(betas.len());
    let mut cosine_similarities = Vec::with_capacity(betas.len());
    for &beta in betas {
        let nudged = setup.nudged_state(params, &free, y_hat, beta)?;
        let est = estimate_from_states(setup, &free, &nudged, beta);
        relative_errors.push(relative_error(&setup.topology, &est, &oracle));
        cosine_similarities.push(cosine_similarity(&setup.topology, &est, &oracle));
    }
    let lambda = lambda_check(setup, params, x, y_hat, lambda_beta)?;
    Ok(GradReport {
        beta_values: betas.to_vec(),
        relative_errors,
        cosine_similarities,
        lambda_beta,
        lambda_residual: lambda.residual,
        cost_grad_norm: lambda.cost_grad_norm,
        condition: lambda.condition,
    })
}

/// A symmetric-weight network with an input and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub params: NetworkParams,
    pub x: Vec<f64>,
    pub y_hat: Vec<f64>,
}

/// Draws symmetrized weights, inputs and targets until the free phase
/// converges with every free neuron at least `margin` away from zero.
pub fn random_instance<R: Rng + ?Sized>(
    setup: &GradcheckSetup,
    rng: &mut R,
    scale: f64,
    margin: f64,
) -> Result<Instance> {
    let topo = &setup.topology;
    for _ in 0..MAX_DRAWS {
        let mut params = init_weights(topo, rng, scale)?;
        params.symmetrize(topo);
        let x: Vec<f64> = topo.input_set().iter().map(|_| rng.gen()).collect();
        let y_hat: Vec<f64> = topo.output_set().iter().map(|_| rng.gen()).collect();
        let Ok(free) = setup.free_state(&params, &x, None) else {
            continue;
        };
        let clear = (0..topo.len())
            .filter(|&i| !free.is_pinned(topo, i))
            .all(|i| free.s[i].abs() >= margin);
        if clear {
            return Ok(Instance { params, x, y_hat });
        }
    }
    Err(Error::InvalidArgument(format!(
        "no usable instance in {MAX_DRAWS} draws"
    )))
}

const MAX_DRAWS: usize = 1000;
