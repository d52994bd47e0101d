//! Small fully-connected networks with hand-written backpropagation.
//!
//! Every network keeps its parameters in one flat vector; gradients use the
//! same layout, so optimizers and finite-difference checks treat all models
//! uniformly.

mod adam;
mod checkpoint;
mod progress;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use progress::{GaussianParams, KlExample, ProgressDims, ProgressNet, TripletCache};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Tanh => S::one() - y * y,
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    input: usize,
    output: usize,
    /// Row-major `output x input` weights start here; biases follow.
    offset: usize,
}

impl Dense {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.input * self.output
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.input * self.output;
        start..start + self.output
    }

    fn end(&self) -> usize {
        self.offset + (self.input + 1) * self.output
    }
}

/// Layout of a multilayer perceptron inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
    layers: Vec<Dense>,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<S> {
    acts: Vec<Vec<S>>,
}

impl<S: Scalar> MlpCache<S> {
    pub fn output(&self) -> &[S] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// `widths` lists input size first, output size last. Parameters are
    /// placed starting at `offset` of the owning vector.
    pub fn new(widths: &[usize], hidden: Activation, output: Activation, offset: usize) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(
            widths.iter().all(|&w| w > 0),
            "layer widths must be positive"
        );
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut at = offset;
        for pair in widths.windows(2) {
            let layer = Dense {
                input: pair[0],
                output: pair[1],
                offset: at,
            };
            at = layer.end();
            layers.push(layer);
        }
        Self {
            widths: widths.to_vec(),
            hidden,
            output,
            layers,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.input + 1) * l.output).sum()
    }

    /// One past the last parameter index this MLP owns.
    pub fn end(&self) -> usize {
        self.layers.last().map_or(0, Dense::end)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, params: &mut [S], rng: &mut R) {
        for layer in &self.layers {
            let bound = (6.0 / (layer.input + layer.output) as f64).sqrt();
            for w in &mut params[layer.weights()] {
                *w = S::lit(rng.gen_range(-bound..=bound));
            }
            for b in &mut params[layer.bias()] {
                *b = S::zero();
            }
        }
    }

    pub fn forward_into<S: Scalar>(&self, params: &[S], x: &[S], cache: &mut MlpCache<S>) {
        debug_assert_eq!(x.len(), self.input_dim());
        cache.acts.resize_with(self.layers.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            let w = &params[layer.weights()];
            let b = &params[layer.bias()];
            for o in 0..layer.output {
                let row = &w[o * layer.input..(o + 1) * layer.input];
                out.push(act.apply(b[o] + dot(row, input)));
            }
        }
    }

    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        let mut cache = MlpCache { acts: Vec::new() };
        self.forward_into(params, x, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    /// Accumulates parameter gradients for upstream gradient `dout` into
    /// `grads` and writes the input gradient into `dx`.
    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        cache: &MlpCache<S>,
        dout: &[S],
        grads: &mut [S],
        dx: &mut Vec<S>,
    ) {
        let mut delta: Vec<S> = dout.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = self.activation(l);
            let y = &cache.acts[l + 1];
            for (d, yo) in delta.iter_mut().zip(y) {
                *d *= act.derivative_from_output(*yo);
            }
            let x = &cache.acts[l];
            let w = &params[layer.weights()];
            {
                let gw = &mut grads[layer.weights()];
                for o in 0..layer.output {
                    let d = delta[o];
                    if d == S::zero() {
                        continue;
                    }
                    let row = &mut gw[o * layer.input..(o + 1) * layer.input];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * *xi;
                    }
                }
            }
            for (g, d) in grads[layer.bias()].iter_mut().zip(&delta) {
                *g += *d;
            }
            next.clear();
            next.resize(layer.input, S::zero());
            for o in 0..layer.output {
                let d = delta[o];
                if d == S::zero() {
                    continue;
                }
                let row = &w[o * layer.input..(o + 1) * layer.input];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += d * *wi;
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        dx.clear();
        dx.extend_from_slice(&delta);
    }
}

/// Dot product with four independent accumulators so the compiler can
/// vectorize it.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut lanes = [S::zero(); 4];
    let (ca, ra) = (a.chunks_exact(4), a.chunks_exact(4).remainder());
    let rb = b.chunks_exact(4).remainder();
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ra.iter().zip(rb) {
        acc += *x * *y;
    }
    acc
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Widens an `f32` observation slice into the model scalar.
pub fn widen<S: Scalar>(values: &[f32], out: &mut Vec<S>) {
    out.clear();
    out.extend(values.iter().map(|&v| S::widen_f32(v)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_seeded_and_bounded() {
        let mlp = Mlp::new(&[8, 64, 32], Activation::Tanh, Activation::Tanh, 0);
        let mut a = vec![0.0f64; mlp.param_count()];
        let mut b = a.clone();
        let mut c = a.clone();
        mlp.init(&mut a, &mut ChaCha8Rng::seed_from_u64(1));
        mlp.init(&mut b, &mut ChaCha8Rng::seed_from_u64(1));
        mlp.init(&mut c, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        for layer in &mlp.layers {
            let bound = (6.0 / (layer.input + layer.output) as f64).sqrt();
            assert!(a[layer.weights()].iter().all(|w| w.abs() <= bound));
            assert!(a[layer.bias()].iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Identity] {
            let mlp = Mlp::new(&[3, 5, 4, 2], act, Activation::Identity, 0);
            let mut p = vec![0.0f64; mlp.param_count()];
            mlp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(9));
            let x = [0.3, -0.7, 0.2];
            let weights = [0.5, -1.5];
            let loss = |p: &[f64]| -> f64 {
                mlp.forward(p, &x)
                    .iter()
                    .zip(&weights)
                    .map(|(y, w)| y * w)
                    .sum()
            };
            let mut cache = MlpCache::default();
            mlp.forward_into(&p, &x, &mut cache);
            let mut g = vec![0.0; p.len()];
            let mut dx = Vec::new();
            mlp.backward(&p, &cache, &weights, &mut g, &mut dx);
            for k in 0..p.len() {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[k] += 1e-5;
                lo[k] -= 1e-5;
                let fd = (loss(&hi) - loss(&lo)) / 2e-5;
                assert!(
                    (fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()),
                    "param {k}: {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0f64, 1000.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-9);
    }
}
