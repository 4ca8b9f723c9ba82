use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring a [`DenseNet`]'s parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moments(&self) -> &Gradients {
        &self.first
    }

    pub fn second_moments(&self) -> &Gradients {
        &self.second
    }

    /// One bias-corrected Adam update of `net` along `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers().len() || self.first.layers.len() != grads.layers.len() {
            return Err(NetError::GradShape("layer count differs from net".into()));
        }
        for (layer, g) in net.layers().iter().zip(&grads.layers) {
            if layer.weights().len() != g.weights.len() || layer.biases().len() != g.biases.len() {
                return Err(NetError::GradShape(format!(
                    "layer {}->{} gradient has {} weights, {} biases",
                    layer.in_dim(),
                    layer.out_dim(),
                    g.weights.len(),
                    g.biases.len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        };

        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.first.layers[l];
            let v = &mut self.second.layers[l];
            update(layer.weights_mut(), &g.weights, &mut m.weights, &mut v.weights);
            update(layer.biases_mut(), &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Activation;

    fn net() -> DenseNet {
        DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Identity, 5).unwrap()
    }

    fn filled(net: &DenseNet, v: f64) -> Gradients {
        let mut g = Gradients::zeros_like(net);
        for l in &mut g.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut n = net();
        let before = n.flat_params();
        let zeros = Gradients::zeros_like(&n);
        let mut adam = AdamState::new(&n, AdamConfig::default());
        adam.step(&mut n, &zeros).unwrap();
        assert_eq!(n.flat_params(), before);

        let push = filled(&n, 0.5);
        adam.step(&mut n, &push).unwrap();
        let m1: Vec<f64> = adam.first_moments().iter().collect();
        let v1: Vec<f64> = adam.second_moments().iter().collect();
        adam.step(&mut n, &zeros).unwrap();
        for (a, b) in m1.iter().zip(adam.first_moments().iter()) {
            assert!((b - 0.9 * a).abs() < 1e-15);
        }
        for (a, b) in v1.iter().zip(adam.second_moments().iter()) {
            assert!((b - 0.999 * a).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut n = net();
        let before = n.flat_params();
        let mut adam = AdamState::new(&n, AdamConfig::default());
        let mut g = Gradients::zeros_like(&n);
        for (i, v) in g.layers[0].weights.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 3.0 } else { -0.01 };
        }
        adam.step(&mut n, &g).unwrap();
        let after = n.flat_params();
        for i in 0..g.layers[0].weights.len() {
            let delta = after[i] - before[i];
            let gi = g.layers[0].weights[i];
            // lr * g / (|g| + eps)
            let expected = -1e-4 * gi / (gi.abs() + 1e-8);
            assert!((delta - expected).abs() < 1e-12, "{delta} vs {expected}");
            assert!((delta.abs() - 1e-4).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut n = net();
        let before = n.flat_params();
        let mut adam = AdamState::new(&n, AdamConfig::default());
        let g = filled(&n, -2.0);
        for _ in 0..50 {
            adam.step(&mut n, &g).unwrap();
        }
        assert_eq!(adam.step_count(), 50);
        for (a, b) in n.flat_params().iter().zip(before) {
            assert!(*a > b);
        }
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut n = net();
        let other = DenseNet::new(&[3, 5, 2], Activation::Relu, Activation::Identity, 5).unwrap();
        let mut adam = AdamState::new(&n, AdamConfig::default());
        assert!(adam.step(&mut n, &Gradients::zeros_like(&other)).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
