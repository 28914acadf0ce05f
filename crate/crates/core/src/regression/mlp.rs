//! A small fully connected ReLU network trained by full-batch gradient descent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            out.push(self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

/// Multilayer perceptron with ReLU hidden layers and a single linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {layer_sizes:?}")));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidArgument("output layer must have width 1".into()));
        }
        let mut rng = seed::rng(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights: (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() || layers.last().unwrap().out_dim != 1 {
            return Err(Error::InvalidArgument("output layer must have width 1".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidArgument(format!(
                    "layer dimensions disagree: {} then {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidArgument("layer parameter count mismatch".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].in_dim];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Mean squared error over `(inputs, targets)`.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
        let n = inputs.len() as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| (self.forward(x) - t).powi(2))
            .sum::<f64>()
            / n
    }

    /// Loss and its gradient in the layout of [`Mlp::params`].
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, Vec<f64>) {
        let n = inputs.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        // activations[k] is the input of layer k
        let mut activations: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut out = Vec::new();
        for (x, &t) in inputs.iter().zip(targets) {
            activations[0].clear();
            activations[0].extend_from_slice(x);
            for (k, layer) in self.layers.iter().enumerate() {
                layer.forward(&activations[k], &mut out);
                if k < last {
                    out.iter_mut().for_each(|v| *v = v.max(0.0));
                    activations[k + 1].clone_from(&out);
                }
            }
            let err = out[0] - t;
            loss += err * err;

            let mut delta = vec![2.0 * err / n];
            for k in (0..=last).rev() {
                let layer = &self.layers[k];
                let input = &activations[k];
                let (gw, gb) = &mut grads[k];
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                }
                if k > 0 {
                    let mut prev = vec![0.0; layer.in_dim];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
                    }
                    // a ReLU output of zero means the unit was inactive
                    prev.iter_mut()
                        .zip(input)
                        .for_each(|(p, &a)| if a <= 0.0 { *p = 0.0 });
                    delta = prev;
                }
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        (loss / n, flat)
    }
}

/// Per-coordinate feature standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a zero spread is replaced by 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m).powi(2));
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn unstandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            learning_rate: 1e-3,
            hidden_width: 64,
            hidden_layers: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(1);
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub mlp: Mlp,
    pub standardizer: Standardizer,
    /// Loss before each update, followed by the final loss.
    pub losses: Vec<f64>,
}

impl Fitted {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Standardizes `inputs`, then runs full-batch gradient descent on MSE.
pub fn fit(inputs: &[Vec<f64>], targets: &[f64], config: &TrainConfig) -> Result<Fitted> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument("inputs and targets differ in length".into()));
    }
    let d = inputs[0].len();
    if d == 0 || inputs.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidArgument("inconsistent feature dimensions".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let standardizer = Standardizer::fit(inputs);
    let z: Vec<Vec<f64>> = inputs.iter().map(|x| standardizer.standardize(x)).collect();
    let mut mlp = Mlp::new(&config.layer_sizes(d), config.seed)?;
    let mut params = mlp.params();
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grad) = mlp.loss_and_gradient(&z, targets);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
        }
        losses.push(loss);
        params
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p -= config.learning_rate * g);
        mlp.set_params(&params)?;
    }
    let loss = mlp.loss(&z, targets);
    if !loss.is_finite() || !mlp.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite training loss at epoch {}",
            config.epochs
        )));
    }
    losses.push(loss);
    Ok(Fitted { mlp, standardizer, losses })
}
