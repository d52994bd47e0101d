use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{widen, Activation, Checkpoint, CheckpointHeader, Mlp, MlpCache};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::reward::kl_with_grad;
use crate::scalar::Scalar;

/// A univariate Gaussian parameterized by mean and log-variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams<S> {
    pub mu: S,
    pub log_var: S,
}

impl<S: Scalar> GaussianParams<S> {
    pub fn new(mu: S, log_var: S) -> Self {
        Self { mu, log_var }
    }

    pub fn from_sigma(mu: S, sigma: S) -> Self {
        Self {
            mu,
            log_var: (sigma * sigma).ln(),
        }
    }

    pub fn sigma(&self) -> S {
        (S::lit(0.5) * self.log_var).exp()
    }

    pub fn variance(&self) -> S {
        self.log_var.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.log_var.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressDims {
    pub obs_dim: usize,
    /// Per-frame encoder widths after the input; the last is the embedding.
    pub encoder: Vec<usize>,
    /// Trunk widths after the concatenated embeddings.
    pub trunk: Vec<usize>,
    pub activation: Activation,
}

impl ProgressDims {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            encoder: vec![64, 32],
            trunk: vec![64],
            activation: Activation::Relu,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0
            || self.encoder.is_empty()
            || self.trunk.is_empty()
            || self.encoder.iter().chain(&self.trunk).any(|&w| w == 0)
        {
            return Err(Error::InvalidConfig(format!(
                "invalid progress network dims {self:?}"
            )));
        }
        Ok(())
    }
}

/// Triplet progress estimator: a shared frame encoder applied to the
/// initial, current and goal frames, a trunk over the concatenated
/// embeddings and two linear heads emitting `mu` and `log sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressNet<S> {
    dims: ProgressDims,
    encoder: Mlp,
    trunk: Mlp,
    head_mu: Mlp,
    head_log_var: Mlp,
    params: Vec<S>,
    seed: u64,
    /// Optimizer steps applied so far; recorded in checkpoints.
    pub updates: u64,
}

/// Forward activations for one triplet.
#[derive(Debug, Clone, Default)]
pub struct TripletCache<S> {
    input: Vec<S>,
    frames: [MlpCache<S>; 3],
    concat: Vec<S>,
    trunk: MlpCache<S>,
    mu: MlpCache<S>,
    log_var: MlpCache<S>,
    scratch: Vec<S>,
    dh: Vec<S>,
    d_concat: Vec<S>,
}

/// One supervised example for the KL objective: frames plus a fixed target.
#[derive(Debug, Clone, Copy)]
pub struct KlExample<'a, S> {
    pub initial: &'a Observation,
    pub current: &'a Observation,
    pub goal: &'a Observation,
    pub target: GaussianParams<S>,
}

impl<S: Scalar> ProgressNet<S> {
    pub fn new(dims: ProgressDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut widths = vec![dims.obs_dim];
        widths.extend(&dims.encoder);
        let encoder = Mlp::new(&widths, dims.activation, dims.activation, 0);
        let embed = *dims.encoder.last().unwrap();
        let mut widths = vec![3 * embed];
        widths.extend(&dims.trunk);
        let trunk = Mlp::new(&widths, dims.activation, dims.activation, encoder.end());
        let hidden = *dims.trunk.last().unwrap();
        let head_mu = Mlp::new(
            &[hidden, 1],
            Activation::Identity,
            Activation::Identity,
            trunk.end(),
        );
        let head_log_var = Mlp::new(
            &[hidden, 1],
            Activation::Identity,
            Activation::Identity,
            head_mu.end(),
        );
        let mut params = vec![S::zero(); head_log_var.end()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mlp in [&encoder, &trunk, &head_mu, &head_log_var] {
            mlp.init(&mut params, &mut rng);
        }
        Ok(Self {
            dims,
            encoder,
            trunk,
            head_mu,
            head_log_var,
            params,
            seed,
            updates: 0,
        })
    }

    pub fn dims(&self) -> &ProgressDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sets both heads to zero so every input maps to `N(0, 1)`.
    pub fn zero_heads(&mut self) {
        let start = self.trunk.end();
        for p in &mut self.params[start..] {
            *p = S::zero();
        }
    }

    /// Parameter index ranges of the mean and log-variance heads.
    pub fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (
            self.trunk.end()..self.head_mu.end(),
            self.head_mu.end()..self.head_log_var.end(),
        )
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if obs.len() != self.dims.obs_dim {
            return Err(Error::ShapeMismatch {
                expected: self.dims.obs_dim,
                actual: obs.len(),
            });
        }
        Ok(())
    }

    pub fn forward_into(
        &self,
        initial: &Observation,
        current: &Observation,
        goal: &Observation,
        cache: &mut TripletCache<S>,
    ) -> Result<GaussianParams<S>> {
        self.check(initial)?;
        self.check(current)?;
        self.check(goal)?;
        cache.concat.clear();
        for (slot, frame) in [initial, current, goal].into_iter().enumerate() {
            widen(frame.as_slice(), &mut cache.input);
            self.encoder
                .forward_into(&self.params, &cache.input, &mut cache.frames[slot]);
            cache.concat.extend_from_slice(cache.frames[slot].output());
        }
        self.trunk
            .forward_into(&self.params, &cache.concat, &mut cache.trunk);
        let h = cache.trunk.output();
        self.head_mu.forward_into(&self.params, h, &mut cache.mu);
        self.head_log_var
            .forward_into(&self.params, h, &mut cache.log_var);
        Ok(GaussianParams::new(
            cache.mu.output()[0],
            cache.log_var.output()[0],
        ))
    }

    /// Predicted progress distribution for `(initial, current, goal)`.
    pub fn predict(
        &self,
        initial: &Observation,
        current: &Observation,
        goal: &Observation,
    ) -> Result<GaussianParams<S>> {
        self.forward_into(initial, current, goal, &mut TripletCache::default())
    }

    /// Accumulates parameter gradients for upstream gradients on the two
    /// heads, using activations from the preceding `forward_into`.
    pub fn backward_into(
        &self,
        cache: &mut TripletCache<S>,
        d_mu: S,
        d_log_var: S,
        grads: &mut [S],
    ) {
        let TripletCache {
            frames,
            trunk,
            mu,
            log_var,
            scratch,
            dh,
            d_concat,
            ..
        } = cache;
        self.head_mu.backward(&self.params, mu, &[d_mu], grads, dh);
        self.head_log_var
            .backward(&self.params, log_var, &[d_log_var], grads, scratch);
        for (a, b) in dh.iter_mut().zip(scratch.iter()) {
            *a += *b;
        }
        self.trunk
            .backward(&self.params, trunk, dh, grads, d_concat);
        let embed = *self.dims.encoder.last().unwrap();
        for (slot, frame_cache) in frames.iter().enumerate() {
            let upstream = &d_concat[slot * embed..(slot + 1) * embed];
            self.encoder
                .backward(&self.params, frame_cache, upstream, grads, scratch);
        }
    }

    /// Batch-mean `KL(target || prediction)` and its exact gradient.
    ///
    /// Targets are constants: no gradient flows through them.
    pub fn kl_loss_and_grad(&self, batch: &[KlExample<'_, S>]) -> Result<(S, Vec<S>)> {
        if batch.is_empty() {
            return Err(Error::ContractViolation("empty training batch".into()));
        }
        let mut grads = vec![S::zero(); self.params.len()];
        let mut cache = TripletCache::default();
        let mut total = S::zero();
        let scale = S::one() / S::from_usize(batch.len()).unwrap();
        for (index, ex) in batch.iter().enumerate() {
            let pred = self.forward_into(ex.initial, ex.current, ex.goal, &mut cache)?;
            let (kl, d_mu, d_log_var) = kl_with_grad(ex.target, pred);
            if !kl.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: kl.as_f64(),
                    index,
                    detail: format!("target {:?}, prediction {:?}", ex.target, pred),
                });
            }
            total += kl;
            self.backward_into(&mut cache, d_mu * scale, d_log_var * scale, &mut grads);
        }
        Ok((total * scale, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader::new(
                "progress",
                serde_json::to_value(&self.dims).expect("dims serialize"),
                self.seed,
                self.updates,
                self.params.len(),
            ),
            params: self.params.iter().map(|p| p.narrow_f32()).collect(),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        checkpoint.header.expect_kind("progress")?;
        let dims: ProgressDims = serde_json::from_value(checkpoint.header.dims.clone())
            .map_err(|e| Error::Malformed(format!("progress dims: {e}")))?;
        let mut net = Self::new(dims, checkpoint.header.seed)?;
        if net.params.len() != checkpoint.params.len() {
            return Err(Error::ShapeMismatch {
                expected: net.params.len(),
                actual: checkpoint.params.len(),
            });
        }
        for (p, v) in net.params.iter_mut().zip(&checkpoint.params) {
            *p = S::widen_f32(*v);
        }
        net.updates = checkpoint.header.step;
        Ok(net)
    }
}
