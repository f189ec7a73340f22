//! Actor-critic MLP with a shared tanh trunk, stored as one flat parameter
//! vector so optimizers and gradient checks can treat it uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub action_dim: usize,
}

impl Default for MlpShape {
    fn default() -> Self {
        Self {
            input_dim: 3,
            hidden_layers: 2,
            width: 64,
            action_dim: 6,
        }
    }
}

/// Location of one dense layer inside the flat parameter vector. Weights
/// are row-major `out x in`, followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerSlot {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub trunk: Vec<LayerSlot>,
    pub policy: LayerSlot,
    pub value: LayerSlot,
    pub total: usize,
}

impl MlpShape {
    pub fn is_valid(&self) -> bool {
        self.input_dim >= 1 && self.hidden_layers >= 1 && self.width >= 1 && self.action_dim >= 1
    }

    pub fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut slot = |inputs, outputs| {
            let s = LayerSlot { offset, inputs, outputs };
            offset += s.len();
            s
        };
        let mut trunk = Vec::with_capacity(self.hidden_layers);
        for i in 0..self.hidden_layers {
            let inputs = if i == 0 { self.input_dim } else { self.width };
            trunk.push(slot(inputs, self.width));
        }
        let policy = slot(self.width, self.action_dim);
        let value = slot(self.width, 1);
        Layout {
            trunk,
            policy,
            value,
            total: offset,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let (i, h, w, a) = (self.input_dim, self.hidden_layers, self.width, self.action_dim);
        (i * w + w) + (h - 1) * (w * w + w) + (w * a + a) + (w + 1)
    }

    /// Multiply-accumulates of one forward pass.
    pub fn forward_macs(&self) -> u64 {
        let (i, h, w, a) = (self.input_dim, self.hidden_layers, self.width, self.action_dim);
        (i * w + (h - 1) * w * w + w * a + w) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    shape: MlpShape,
    layout: Layout,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k]` the output of trunk layer k-1.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
}

fn dense(params: &[f64], slot: &LayerSlot, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let w = &params[slot.weights()];
    let b = &params[slot.biases()];
    for o in 0..slot.outputs {
        let row = &w[o * slot.inputs..(o + 1) * slot.inputs];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

impl PolicyNetwork {
    pub fn zeros(shape: MlpShape) -> Self {
        assert!(shape.is_valid(), "invalid MLP shape {shape:?}");
        let layout = shape.layout();
        Self {
            params: vec![0.0; layout.total],
            shape,
            layout,
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(shape: MlpShape, seed: u64) -> Self {
        let mut net = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots: Vec<LayerSlot> = net.layers().collect();
        for slot in slots {
            let bound = 1.0 / (slot.inputs as f64).sqrt();
            for p in &mut net.params[slot.weights()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Option<Self> {
        let mut net = Self::zeros(shape);
        if params.len() != net.params.len() {
            return None;
        }
        net.params = params;
        Some(net)
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Every dense layer: trunk in order, then policy head, then value head.
    pub fn layers(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        self.layout
            .trunk
            .iter()
            .copied()
            .chain([self.layout.policy, self.layout.value])
    }

    pub fn forward(&self, obs: &[f64]) -> (Vec<f64>, f64) {
        let cache = self.forward_cached(obs);
        (cache.logits, cache.value)
    }

    pub fn forward_cached(&self, obs: &[f64]) -> ForwardCache {
        debug_assert_eq!(obs.len(), self.shape.input_dim);
        let mut activations = Vec::with_capacity(self.layout.trunk.len() + 1);
        activations.push(obs.to_vec());
        for slot in &self.layout.trunk {
            let mut out = Vec::with_capacity(slot.outputs);
            dense(&self.params, slot, activations.last().expect("input present"), &mut out);
            out.iter_mut().for_each(|v| *v = v.tanh());
            activations.push(out);
        }
        let top = activations.last().expect("trunk output");
        let mut logits = Vec::with_capacity(self.shape.action_dim);
        dense(&self.params, &self.layout.policy, top, &mut logits);
        let mut value = Vec::with_capacity(1);
        dense(&self.params, &self.layout.value, top, &mut value);
        ForwardCache {
            activations,
            logits,
            value: value[0],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_closed_form() {
        let shape = MlpShape::default();
        // Independent tally: trunk 3->64, 64->64, heads 64->6 and 64->1.
        let tally = (3 * 64 + 64) + (64 * 64 + 64) + (64 * 6 + 6) + (64 + 1);
        assert_eq!(tally, 4_871);
        assert_eq!(shape.parameter_count(), tally);
        assert_eq!(shape.layout().total, tally);
        let net = PolicyNetwork::init(shape, 0);
        assert_eq!(net.params.len(), tally);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let shape = MlpShape {
            width: 8,
            ..Default::default()
        };
        let a = PolicyNetwork::init(shape, 5);
        assert_eq!(a, PolicyNetwork::init(shape, 5));
        assert_ne!(a, PolicyNetwork::init(shape, 6));
        for slot in a.layers() {
            assert!(a.params[slot.biases()].iter().all(|&b| b == 0.0));
            let bound = 1.0 / (slot.inputs as f64).sqrt();
            assert!(a.params[slot.weights()].iter().all(|w| w.abs() < bound));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = PolicyNetwork::zeros(MlpShape::default());
        let (logits, value) = net.forward(&[0.3, -0.2, 0.9]);
        assert_eq!(logits, vec![0.0; 6]);
        assert_eq!(value, 0.0);
        for p in softmax(&logits) {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn value_head_is_linear() {
        let mut net = PolicyNetwork::init(MlpShape { width: 16, ..Default::default() }, 3);
        let obs = [0.1, 0.5, -0.7];
        let (logits, value) = net.forward(&obs);
        let slot = net.layout().value;
        for p in &mut net.params[slot.weights()] {
            *p *= 2.0;
        }
        let (logits2, value2) = net.forward(&obs);
        assert_eq!(logits, logits2);
        assert!((value2 - 2.0 * value).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1e6, 0.0, -3.0, 2.0, 0.5, 7.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[1e6, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(lp[0], 0.0);
    }

    #[test]
    fn forward_mac_count() {
        let s = MlpShape::default();
        assert_eq!(s.forward_macs(), 3 * 64 + 64 * 64 + 64 * 6 + 64);
    }
}
