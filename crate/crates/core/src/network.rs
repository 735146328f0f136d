//! Network topology, weights, seeded random streams and weight checkpoints.
//!
//! Neurons are numbered layer by layer (input first, output last), followed
//! by the bias unit when one is requested. Weight `w[i][j]` is the strength
//! of the connection from presynaptic neuron `j` onto neuron `i`, so row `i`
//! of the mask lists the inputs of neuron `i`.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Hidden,
    Output,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    layer_sizes: Vec<usize>,
    n: usize,
    mask: Vec<bool>,
    roles: Vec<Role>,
    input_set: Vec<usize>,
    output_set: Vec<usize>,
    bias_units: Vec<usize>,
    inbound: Vec<Vec<usize>>,
}

impl NetworkTopology {
    /// Layered architecture: the first layer feeds forward into the second,
    /// every later pair of adjacent layers is connected in both directions,
    /// and an optional bias unit projects onto all non-input neurons.
    pub fn build(layer_sizes: &[usize], bias: bool) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(k) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidTopology(format!("layer {k} has size 0")));
        }

        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0;
        for &s in layer_sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        let n = acc + usize::from(bias);
        let layer = |k: usize| offsets[k]..offsets[k + 1];

        let mut mask = vec![false; n * n];
        for k in 0..layer_sizes.len() - 1 {
            for lo in layer(k) {
                for hi in layer(k + 1) {
                    mask[hi * n + lo] = true;
                    if k > 0 {
                        mask[lo * n + hi] = true;
                    }
                }
            }
        }
        let mut bias_units = Vec::new();
        if bias {
            let b = n - 1;
            for i in layer_sizes[0]..acc {
                mask[i * n + b] = true;
            }
            bias_units.push(b);
        }

        let last = layer_sizes.len() - 1;
        let input_set: Vec<usize> = layer(0).collect();
        let output_set: Vec<usize> = layer(last).collect();
        Self::assemble(
            layer_sizes.to_vec(),
            n,
            mask,
            input_set,
            output_set,
            bias_units,
        )
    }

    /// Arbitrary mask over `n` neurons. Neurons in none of the three sets are hidden.
    pub fn from_mask(
        n: usize,
        mask: Vec<bool>,
        input_set: Vec<usize>,
        output_set: Vec<usize>,
        bias_units: Vec<usize>,
    ) -> Result<Self> {
        check_len("mask", n * n, mask.len())?;
        Self::assemble(vec![n], n, mask, input_set, output_set, bias_units)
    }

    /// All-to-all bidirectional connectivity among `n` free neurons plus an
    /// optional bias unit appended at index `n`.
    pub fn fully_connected(n: usize, bias: bool) -> Result<Self> {
        let total = n + usize::from(bias);
        let mut mask = vec![false; total * total];
        for i in 0..n {
            for j in 0..total {
                if i != j {
                    mask[i * total + j] = true;
                }
            }
        }
        let bias_units = if bias { vec![n] } else { Vec::new() };
        Self::from_mask(total, mask, Vec::new(), Vec::new(), bias_units)
    }

    fn assemble(
        layer_sizes: Vec<usize>,
        n: usize,
        mask: Vec<bool>,
        input_set: Vec<usize>,
        output_set: Vec<usize>,
        bias_units: Vec<usize>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("empty network".into()));
        }
        let mut roles = vec![Role::Hidden; n];
        for (set, role) in [
            (&input_set, Role::Input),
            (&output_set, Role::Output),
            (&bias_units, Role::Bias),
        ] {
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::InvalidTopology(format!("neuron {i} out of range")));
                }
                if roles[i] != Role::Hidden {
                    return Err(Error::InvalidTopology(format!(
                        "neuron {i} belongs to more than one of input/output/bias"
                    )));
                }
                roles[i] = role;
            }
        }
        for i in 0..n {
            if mask[i * n + i] {
                return Err(Error::InvalidTopology(format!("self-connection on {i}")));
            }
        }
        for (i, &role) in roles.iter().enumerate() {
            if matches!(role, Role::Input | Role::Bias)
                && mask[i * n..(i + 1) * n].iter().any(|&m| m)
            {
                return Err(Error::InvalidTopology(format!(
                    "{role:?} neuron {i} must not receive connections"
                )));
            }
        }
        let inbound: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| mask[i * n + j]).collect())
            .collect();
        for (i, &role) in roles.iter().enumerate() {
            if matches!(role, Role::Hidden | Role::Output) && inbound[i].is_empty() {
                return Err(Error::InvalidTopology(format!("neuron {i} has no inputs")));
            }
        }
        Ok(Self {
            layer_sizes,
            n,
            mask,
            roles,
            input_set,
            output_set,
            bias_units,
            inbound,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn has_bias(&self) -> bool {
        !self.bias_units.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n + j]
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn input_set(&self) -> &[usize] {
        &self.input_set
    }

    pub fn output_set(&self) -> &[usize] {
        &self.output_set
    }

    pub fn bias_units(&self) -> &[usize] {
        &self.bias_units
    }

    /// Presynaptic neurons of `i`, ascending.
    pub fn inbound(&self, i: usize) -> &[usize] {
        &self.inbound[i]
    }

    pub fn indegree(&self, i: usize) -> usize {
        self.inbound[i].len()
    }

    pub fn connection_count(&self) -> usize {
        self.inbound.iter().map(Vec::len).sum()
    }

    /// Hex SHA-256 of the mask, one byte (0 or 1) per entry in row-major order.
    pub fn mask_hash(&self) -> String {
        let bytes: Vec<u8> = self.mask.iter().map(|&m| u8::from(m)).collect();
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Dense N×N weight matrix, zero outside the topology mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    n: usize,
    w: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            w: vec![0.0; n * n],
        }
    }

    /// Row-major weights; entries outside `topology`'s mask must be zero.
    pub fn from_dense(topology: &NetworkTopology, w: Vec<f64>) -> Result<Self> {
        let n = topology.len();
        check_len("weights", n * n, w.len())?;
        let params = Self { n, w };
        params.check_mask(topology)?;
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.w[i * self.n + j] = value;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, delta: f64) {
        self.w[i * self.n + j] += delta;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn check_mask(&self, topology: &NetworkTopology) -> Result<()> {
        check_len("weights", topology.len(), self.n)?;
        for (k, (&w, &m)) in self.w.iter().zip(topology.mask()).enumerate() {
            if !m && w != 0.0 {
                return Err(Error::InvalidTopology(format!(
                    "weight ({}, {}) = {w} lies outside the mask",
                    k / self.n,
                    k % self.n
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "weight ({}, {}) is not finite",
                    k / self.n,
                    k % self.n
                )));
            }
        }
        Ok(())
    }

    /// Averages every reciprocal pair (both directions in the mask).
    /// One-way connections are left untouched.
    pub fn symmetrize(&mut self, topology: &NetworkTopology) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                if topology.allowed(i, j) && topology.allowed(j, i) {
                    let avg = 0.5 * (self.get(i, j) + self.get(j, i));
                    self.set(i, j, avg);
                    self.set(j, i, avg);
                }
            }
        }
    }

    /// Largest |w_ij − w_ji| over reciprocal pairs.
    pub fn asymmetry(&self, topology: &NetworkTopology) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for &j in topology.inbound(i) {
                if topology.allowed(j, i) {
                    worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
                }
            }
        }
        worst
    }
}

/// Seed plus stream index for a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub const WEIGHTS: u64 = 0;
    pub const DATA: u64 = 1;

    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform in ±scale/√indegree on every allowed entry, rows in ascending order.
pub fn init_weights<R: Rng + ?Sized>(
    topology: &NetworkTopology,
    rng: &mut R,
    scale: f64,
) -> Result<NetworkParams> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "weight scale must be positive, got {scale}"
        )));
    }
    let mut params = NetworkParams::zeros(topology.len());
    for i in 0..topology.len() {
        let inbound = topology.inbound(i);
        if inbound.is_empty() {
            continue;
        }
        let half = scale / (inbound.len() as f64).sqrt();
        let dist = Uniform::new_inclusive(-half, half);
        for &j in inbound {
            params.set(i, j, dist.sample(rng));
        }
    }
    Ok(params)
}

/// On-disk weight checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCheckpoint {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<f64>,
    pub mask_hash: String,
}

impl WeightCheckpoint {
    pub fn new(topology: &NetworkTopology, params: &NetworkParams) -> Self {
        Self {
            layer_sizes: topology.layer_sizes().to_vec(),
            weights: params.as_slice().to_vec(),
            mask_hash: topology.mask_hash(),
        }
    }

    /// Rebuilds the layered topology; the bias unit is inferred from the
    /// number of weights.
    pub fn restore(&self) -> Result<(NetworkTopology, NetworkParams)> {
        let neurons: usize = self.layer_sizes.iter().sum();
        let bias = if self.weights.len() == neurons * neurons {
            false
        } else if self.weights.len() == (neurons + 1) * (neurons + 1) {
            true
        } else {
            return Err(Error::Checkpoint(format!(
                "{} weights do not fit layer sizes {:?}",
                self.weights.len(),
                self.layer_sizes
            )));
        };
        let topology = NetworkTopology::build(&self.layer_sizes, bias)?;
        if topology.mask_hash() != self.mask_hash {
            return Err(Error::Checkpoint("mask hash does not match".into()));
        }
        let params = NetworkParams::from_dense(&topology, self.weights.clone())?;
        Ok((topology, params))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
