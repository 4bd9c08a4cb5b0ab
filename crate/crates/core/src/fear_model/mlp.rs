//! Fully connected ReLU network with a sigmoid head, trained by mini-batch
//! SGD with classic momentum on binary cross-entropy plus an L2 penalty on
//! the weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FearModelError;

/// Network shape and optimizer settings. Defaults are the phobia-model
/// hyperparameters: 6 hidden layers of 16 units, 100 epochs, batch 512,
/// lr 0.01, momentum 0.9, weight decay 0.001.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub n_units: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            n_units: 16,
            depth: 6,
            epochs: 100,
            batch_size: 512,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.001,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), FearModelError> {
        let bad = |what: &str| Err(FearModelError::InvalidConfig(what.to_string()));
        if self.n_units == 0 || self.depth == 0 {
            return bad("n_units and depth must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return bad("momentum must lie in (0, 1)");
        }
        if !(self.weight_decay > 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be positive");
        }
        Ok(())
    }
}

/// One affine layer; `weights` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn he_uniform(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.n_in)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum();
        }
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Upper end of the open output interval: the largest double below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Mlp {
    /// `n_in -> n_units x depth (ReLU) -> 1 (sigmoid)`, He-uniform weights, zero biases.
    pub fn new(n_in: usize, n_units: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut width = n_in;
        for _ in 0..depth {
            layers.push(Layer::he_uniform(width, n_units, rng));
            width = n_units;
        }
        layers.push(Layer::he_uniform(width, 1, rng));
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            layer.affine(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur[0]
    }

    /// Fear probability, strictly inside (0, 1).
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn l2_penalty(&self, weight_decay: f64) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .flat_map(|l| &l.weights)
            .map(|w| w * w)
            .sum();
        0.5 * weight_decay * sq
    }

    /// Mean binary cross-entropy over the batch plus `weight_decay / 2 * |W|^2`.
    pub fn loss<X: AsRef<[f64]>>(&self, xs: &[X], ys: &[f64], weight_decay: f64) -> f64 {
        let data: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let z = self.logit(x.as_ref());
                softplus(z) - y * z
            })
            .sum();
        data / xs.len() as f64 + self.l2_penalty(weight_decay)
    }

    /// Loss and its gradient with respect to [`Mlp::params`].
    pub fn loss_and_grad<X: AsRef<[f64]>>(
        &self,
        xs: &[X],
        ys: &[f64],
        weight_decay: f64,
    ) -> (f64, Vec<f64>) {
        let n_layers = self.layers.len();
        let inv_n = 1.0 / xs.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        // acts[0] is the input, acts[i + 1] the output of layer i.
        let mut acts: Vec<Vec<f64>> = std::iter::once(vec![0.0; self.n_in()])
            .chain(self.layers.iter().map(|l| vec![0.0; l.n_out]))
            .collect();
        let mut data_loss = 0.0;

        for (x, &y) in xs.iter().zip(ys) {
            acts[0].copy_from_slice(x.as_ref());
            for (i, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(i + 1);
                layer.affine(&head[i], &mut tail[0]);
                if i + 1 < n_layers {
                    tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            let z = acts[n_layers][0];
            data_loss += softplus(z) - y * z;

            let mut delta = vec![(sigmoid_raw(z) - y) * inv_n];
            for i in (0..n_layers).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let (gw, gb) = &mut grads[i];
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if i == 0 {
                    break;
                }
                let mut back = vec![0.0; layer.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                // ReLU derivative, read off the stored activation.
                for (b, a) in back.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }

        let mut flat = Vec::with_capacity(self.n_params());
        for (layer, (gw, gb)) in self.layers.iter().zip(grads) {
            flat.extend(gw.iter().zip(&layer.weights).map(|(g, w)| g + weight_decay * w));
            flat.extend(gb);
        }
        (data_loss * inv_n + self.l2_penalty(weight_decay), flat)
    }
}

/// Unclamped logistic, used for gradients.
fn sigmoid_raw(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub mlp: Mlp,
    /// Sample-weighted mean mini-batch loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh network on `(xs, ys)` with labels in `{0, 1}`.
pub fn train_mlp<X: AsRef<[f64]>>(
    xs: &[X],
    ys: &[f64],
    config: &MlpConfig,
) -> Result<TrainedMlp, FearModelError> {
    config.validate()?;
    assert_eq!(xs.len(), ys.len());
    let positives = ys.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == ys.len() {
        return Err(FearModelError::DegenerateLabels);
    }
    let n_in = xs[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::new(n_in, config.n_units, config.depth, &mut rng);
    let mut params = mlp.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut bx: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut by: Vec<f64> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.push(xs[i].as_ref());
                by.push(ys[i]);
            }
            let (loss, grad) = mlp.loss_and_grad(&bx, &by, config.weight_decay);
            if !loss.is_finite() {
                return Err(FearModelError::NonFiniteLoss { epoch });
            }
            running += loss * chunk.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            mlp.set_params(&params);
        }
        epoch_losses.push(running / xs.len() as f64);
    }
    if !mlp.is_finite() {
        return Err(FearModelError::NonFiniteLoss { epoch: config.epochs });
    }
    Ok(TrainedMlp { mlp, epoch_losses })
}
