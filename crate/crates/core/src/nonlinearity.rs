//! Activation functions and the LIF frequency–current curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step used for the numerical derivative of the LIF rate activation.
pub const LIFFI_FD_STEP: f64 = 1e-4;

/// Single-neuron constants. Times are in ms, potentials in dimensionless units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronConstants {
    /// membrane time constant
    pub tau: f64,
    pub u_rest: f64,
    pub u_reset: f64,
    pub theta: f64,
    /// refractory period
    pub delta: f64,
    /// synaptic trace time constant
    pub tau_s: f64,
    /// rate-estimate time constant
    pub tau_r: f64,
    /// area of one post-synaptic response
    pub u_psp: f64,
    /// membrane resistance
    pub resistance: f64,
}

impl NeuronConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("neuron constants: {msg}")));
        let all = [
            self.tau,
            self.u_rest,
            self.u_reset,
            self.theta,
            self.delta,
            self.tau_s,
            self.tau_r,
            self.u_psp,
            self.resistance,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all constants must be finite");
        }
        if self.tau <= 0.0 || self.tau_s <= 0.0 || self.tau_r <= 0.0 {
            return bad("time constants must be positive");
        }
        if self.delta < 0.0 {
            return bad("refractory period must be non-negative");
        }
        if self.theta <= self.u_reset {
            return bad("threshold must lie above the reset potential");
        }
        Ok(())
    }
}

pub fn relu(s: f64) -> f64 {
    if s > 0.0 {
        s
    } else {
        0.0
    }
}

/// Zero at the origin.
pub fn relu_prime(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Firing rate (spikes per ms) of a LIF neuron under constant drive `v`.
pub fn liffi(v: f64, k: &NeuronConstants) -> f64 {
    if v > k.theta {
        1.0 / (k.tau * ((v - k.u_reset) / (v - k.theta)).ln() + k.delta)
    } else {
        0.0
    }
}

pub fn liffi_surrogate_prime(v: f64) -> f64 {
    relu_prime(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Liffi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    Exact,
    Surrogate,
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "liffi" => Ok(Self::Liffi),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::str::FromStr for DerivativeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "surrogate" => Ok(Self::Surrogate),
            other => Err(Error::Config(format!("unknown derivative mode {other:?}"))),
        }
    }
}

/// The f–I curve expressed in value units, the same units the spiking
/// model uses for its input currents: a state `s` is read as a current and
/// mapped to `liffi(u_rest + R·s)`, normalized so that `s = 1` has rate 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiffiRate {
    constants: NeuronConstants,
    norm: f64,
}

impl LiffiRate {
    pub fn new(constants: NeuronConstants) -> Result<Self> {
        constants.validate()?;
        let unit = liffi(constants.u_rest + constants.resistance, &constants);
        if unit <= 0.0 {
            return Err(Error::Config(
                "liffi activation: a unit current does not reach threshold".into(),
            ));
        }
        Ok(Self {
            constants,
            norm: 1.0 / unit,
        })
    }

    pub fn rate(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let k = &self.constants;
        liffi(k.u_rest + k.resistance * s, k) * self.norm
    }

    pub fn numerical_prime(&self, s: f64) -> f64 {
        let h = LIFFI_FD_STEP;
        (self.rate(s + h) - self.rate(s - h)) / (2.0 * h)
    }

    pub fn constants(&self) -> &NeuronConstants {
        &self.constants
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Liffi(LiffiRate),
}

/// Activation ρ together with the derivative rule used in the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    pub activation: Activation,
    pub derivative: DerivativeMode,
}

impl Nonlinearity {
    pub fn relu() -> Self {
        Self {
            activation: Activation::Relu,
            derivative: DerivativeMode::Exact,
        }
    }

    pub fn liffi(constants: NeuronConstants, derivative: DerivativeMode) -> Result<Self> {
        Ok(Self {
            activation: Activation::Liffi(LiffiRate::new(constants)?),
            derivative,
        })
    }

    pub fn from_config(
        kind: ActivationKind,
        derivative: DerivativeMode,
        constants: &NeuronConstants,
    ) -> Result<Self> {
        match kind {
            ActivationKind::Relu => Ok(Self {
                activation: Activation::Relu,
                derivative,
            }),
            ActivationKind::Liffi => Self::liffi(*constants, derivative),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        match self.activation {
            Activation::Relu => ActivationKind::Relu,
            Activation::Liffi(_) => ActivationKind::Liffi,
        }
    }

    #[inline]
    pub fn rho(&self, s: f64) -> f64 {
        match &self.activation {
            Activation::Relu => relu(s),
            Activation::Liffi(l) => l.rate(s),
        }
    }

    #[inline]
    pub fn rho_prime(&self, s: f64) -> f64 {
        match (&self.activation, self.derivative) {
            (Activation::Relu, _) => relu_prime(s),
            (Activation::Liffi(_), DerivativeMode::Surrogate) => liffi_surrogate_prime(s),
            (Activation::Liffi(l), DerivativeMode::Exact) => l.numerical_prime(s),
        }
    }
}
