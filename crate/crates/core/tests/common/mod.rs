//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use rand::Rng;
use septrace::netcore::{Activation, DenseNet, Layer};

const H: f64 = 1e-6;

pub fn perturbed(net: &DenseNet, index: usize, delta: f64) -> DenseNet {
    let mut seen = 0;
    let layers = net
        .layers()
        .iter()
        .map(|layer| {
            let mut w = layer.weights().to_vec();
            let mut b = layer.biases().to_vec();
            let n = w.len() + b.len();
            if (seen..seen + n).contains(&index) {
                let k = index - seen;
                if k < w.len() {
                    w[k] += delta;
                } else {
                    b[k - w.len()] += delta;
                }
            }
            seen += n;
            Layer::from_parts(layer.in_dim(), layer.out_dim(), layer.activation(), w, b).unwrap()
        })
        .collect();
    DenseNet::from_layers(layers).unwrap()
}

pub fn objective(net: &DenseNet, x: &[f64], g: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(g).map(|(y, gi)| y * gi).sum()
}

/// Returns the worst violation of `|a - n| <= 1e-4 * max(|a|, |n|)` (or
/// `1e-6` absolute when both are tiny), as a ratio to the allowed error.
pub fn gradient_error_ratio(net: &DenseNet, x: &[f64], g: &[f64]) -> f64 {
    let analytic: Vec<f64> = net.backward(x, g).unwrap().iter().collect();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let n = (objective(&perturbed(net, i, H), x, g) - objective(&perturbed(net, i, -H), x, g)) / (2.0 * H);
        let scale = a.abs().max(n.abs());
        let allowed = if scale < 1e-2 { 1e-6 } else { 1e-4 * scale };
        worst = worst.max((a - n).abs() / allowed);
    }
    worst
}

/// A random small net with nonzero biases (so dead relu units stay off the
/// kink at exactly zero), plus a random input and output weighting.
pub fn random_case<R: Rng>(rng: &mut R, hidden: Activation, output: Activation) -> (DenseNet, Vec<f64>, Vec<f64>) {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=7));
    }
    let net = DenseNet::new(&dims, hidden, output, rng.random()).unwrap();
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            let b = (0..l.out_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
            Layer::from_parts(l.in_dim(), l.out_dim(), l.activation(), l.weights().to_vec(), b).unwrap()
        })
        .collect();
    let net = DenseNet::from_layers(layers).unwrap();
    let x = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, x, g)
}
