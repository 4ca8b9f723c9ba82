//! Minimal dense-network numerics.
//!
//! A [`DenseNet`] is an ordered chain of affine layers, each followed by an
//! activation:
//!
//! - `z = W x + b`
//! - `y = activation(z)`
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Everything is
//! `f64`. Training code owns a mutable net; trained nets are shared read-only.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input has dimension {got}, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("gradient shape mismatch: {0}")]
    GradShape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid network layout: {0}")]
    Layout(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// `tanh(z / rms(z))`: the pre-activation is rescaled to unit RMS before
    /// squashing, so the output scale does not depend on the weight scale.
    #[serde(rename = "rms_tanh")]
    RmsTanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity | Activation::RmsTanh => z,
        }
    }

    fn apply_into(self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            Activation::RmsTanh => {
                let r = rms(z);
                if r > 0.0 {
                    out.extend(z.iter().map(|&v| (v / r).tanh()));
                } else {
                    out.resize(z.len(), 0.0);
                }
            }
            _ => out.extend(z.iter().map(|&v| self.apply(v))),
        }
    }

    /// Turns `dL/dy` into `dL/dz` in place.
    fn backprop(self, z: &[f64], y: &[f64], delta: &mut [f64]) {
        match self {
            Activation::RmsTanh => {
                let r = rms(z);
                if r == 0.0 {
                    delta.fill(0.0);
                    return;
                }
                let k = z.len() as f64;
                for (d, &yi) in delta.iter_mut().zip(y) {
                    *d *= 1.0 - yi * yi;
                }
                let proj: f64 = delta.iter().zip(z).map(|(d, &zi)| d * zi / r).sum::<f64>() / k;
                for (d, &zi) in delta.iter_mut().zip(z) {
                    *d = (*d - proj * zi / r) / r;
                }
            }
            _ => {
                for (d, (&zi, &yi)) in delta.iter_mut().zip(z.iter().zip(y)) {
                    *d *= self.derivative(zi, yi);
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity | Activation::RmsTanh => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::RmsTanh => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            3 => Some(Activation::RmsTanh),
            _ => None,
        }
    }
}

fn rms(z: &[f64]) -> f64 {
    (z.iter().map(|v| v * v).sum::<f64>() / z.len().max(1) as f64).sqrt()
}

/// A dense layer: `y = activation(Wx + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major, shape (out_dim, in_dim).
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(NetError::Layout("layer dims must be > 0".into()));
        }
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(NetError::Layout(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(NetError::Layout("non-finite parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            activation,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    #[inline]
    fn affine_into(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(self.weights.chunks_exact(self.in_dim).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b
        }));
    }
}

/// Per-layer parameter gradients, shaped like the net's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }
}

/// Activations cached by a forward pass, consumed by `backward_cached`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the net output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a net with layer widths `dims[0] -> dims[1] -> ... -> dims[n]`.
    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NetError::Layout(format!("bad layer widths {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::glorot(w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetError::Layout("no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NetError::Layout(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters flattened layer by layer (weights, then biases).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(NetError::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine_into(&cur, &mut z);
            layer.activation.apply_into(&z, &mut cur);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine_into(inputs.last().expect("non-empty"), &mut z);
            let mut y = Vec::with_capacity(layer.out_dim);
            layer.activation.apply_into(&z, &mut y);
            pre.push(z);
            inputs.push(y);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Reverse-mode parameter gradients of `loss_grad · net(x)`.
    pub fn backward(&self, x: &[f64], loss_grad: &[f64]) -> Result<Gradients> {
        let cache = self.forward_cached(x)?;
        self.backward_cached(&cache, loss_grad)
    }

    /// Like [`backward`](Self::backward) but reuses a forward pass, and
    /// accumulates into `out` scaled by `scale`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        loss_grad: &[f64],
        scale: f64,
        out: &mut Gradients,
    ) -> Result<()> {
        if loss_grad.len() != self.output_dim() {
            return Err(NetError::GradShape(format!(
                "loss gradient has {} entries, net outputs {}",
                loss_grad.len(),
                self.output_dim()
            )));
        }
        if out.layers.len() != self.layers.len() {
            return Err(NetError::GradShape("gradient buffer layer count".into()));
        }
        let mut delta: Vec<f64> = loss_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[l];
            let y = &cache.inputs[l + 1];
            layer.activation.backprop(z, y, &mut delta);
            let input = &cache.inputs[l];
            let g = &mut out.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let sd = scale * d;
                g.biases[o] += sd;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &xi) in row.iter_mut().zip(input) {
                    *w += sd * xi;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                delta = next;
            }
        }
        Ok(())
    }

    pub fn backward_cached(&self, cache: &ForwardCache, loss_grad: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, loss_grad, 1.0, &mut grads)?;
        Ok(grads)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Cross-entropy `-log softmax(logits)[label]` and its logit gradient
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(NetError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Vec<f64>, b: Vec<f64>, act: Activation) -> DenseNet {
        let out = b.len();
        let inp = w.len() / out;
        DenseNet::from_layers(vec![Layer::from_parts(inp, out, act, w, b).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn affine_tanh_hand_evaluation() {
        let net = single(vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 1.0], Activation::Tanh);
        let y = net.forward(&[0.0, 0.0]).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_yield_activated_bias() {
        let net = single(vec![0.0; 6], vec![0.5, -2.0], Activation::Relu);
        assert_eq!(net.forward(&[3.0, -1.0, 7.0]).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Identity, 1).unwrap();
        assert_eq!(
            net.forward(&[1.0]),
            Err(NetError::InputShape { expected: 3, got: 1 })
        );
    }

    #[test]
    fn identity_backward_is_outer_product() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], Activation::Identity);
        let g = net.backward(&[3.0, -2.0], &[0.5, 2.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![1.5, -1.0, 6.0, -4.0]);
        assert_eq!(g.layers[0].biases, vec![0.5, 2.0]);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let net = DenseNet::new(&[4, 8, 3], Activation::Relu, Activation::Tanh, 9).unwrap();
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_loss_grad() {
        let net = DenseNet::new(&[2, 3], Activation::Relu, Activation::Identity, 1).unwrap();
        assert!(matches!(
            net.backward(&[0.0, 0.0], &[1.0]),
            Err(NetError::GradShape(_))
        ));
    }

    #[test]
    fn glorot_bounds_hold() {
        let net = DenseNet::new(&[16, 64, 10], Activation::Relu, Activation::Tanh, 3).unwrap();
        let lim0 = (6.0f64 / 80.0).sqrt();
        assert!(net.layers()[0].weights().iter().all(|w| w.abs() < lim0));
        assert_eq!(net.param_count(), 16 * 64 + 64 + 64 * 10 + 10);
    }

    #[test]
    fn same_seed_same_net() {
        let a = DenseNet::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, 42).unwrap();
        let b = DenseNet::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, 42).unwrap();
        let c = DenseNet::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, grad) = cross_entropy_grad(&[0.0; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn cross_entropy_confident_logits() {
        // -log(e^10 / (e^10 + e^-10)) = log(1 + e^-20)
        let (loss, _) = cross_entropy_grad(&[10.0, -10.0], 0).unwrap();
        let expected = (-20f64).exp().ln_1p();
        assert!((loss - expected).abs() / expected < 1e-6);
        assert!((loss - 2.061_153_6e-9).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert_eq!(
            cross_entropy_grad(&[0.0, 1.0], 2),
            Err(NetError::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
