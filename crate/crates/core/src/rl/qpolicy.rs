use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GoalPolicy;
use crate::env::{Action, EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Checkpoint, CheckpointHeader, Mlp, MlpCache};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QDims {
    obs_dim: usize,
    hidden: Vec<usize>,
    target_update_period: usize,
}

/// Action-value network over `observation ++ goal`, one output per action,
/// with a periodically synchronized target copy.
#[derive(Debug, Clone)]
pub struct QPolicy<S> {
    dims: QDims,
    mlp: Mlp,
    params: Vec<S>,
    target: Vec<S>,
    optimizer: Adam<S>,
    seed: u64,
    updates: u64,
    cache: MlpCache<S>,
    input: Vec<S>,
}

/// One transition with its (already relabeled and scaled) reward.
#[derive(Debug, Clone, Copy)]
pub struct TdBatchEntry<'a> {
    pub observation: &'a Observation,
    pub action: Action,
    pub reward: f64,
    pub next_observation: &'a Observation,
    pub goal: &'a Observation,
    /// The episode terminated here and the final frame is treated as
    /// absorbing; time-limit truncation is not terminal.
    pub absorbing: bool,
}

impl<S: Scalar> QPolicy<S> {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        target_update_period: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Self {
        let mut widths = vec![2 * obs_dim];
        widths.extend_from_slice(hidden);
        // One state-value output followed by one advantage per action.
        widths.push(Action::COUNT + 1);
        let mlp = Mlp::new(&widths, Activation::Relu, Activation::Identity, 0);
        let mut params = vec![S::zero(); mlp.param_count()];
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            dims: QDims {
                obs_dim,
                hidden: hidden.to_vec(),
                target_update_period: target_update_period.max(1),
            },
            optimizer: Adam::new(params.len(), learning_rate),
            target: params.clone(),
            mlp,
            params,
            seed,
            updates: 0,
            cache: MlpCache::default(),
            input: Vec::new(),
        }
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn target_params(&self) -> &[S] {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn fill_input(input: &mut Vec<S>, observation: &Observation, goal: &Observation) {
        input.clear();
        input.extend(observation.as_slice().iter().map(|&v| S::widen_f32(v)));
        input.extend(goal.as_slice().iter().map(|&v| S::widen_f32(v)));
    }

    pub fn q_values(&self, observation: &Observation, goal: &Observation) -> Vec<S> {
        let mut input = Vec::with_capacity(2 * self.dims.obs_dim);
        Self::fill_input(&mut input, observation, goal);
        dueling(&self.mlp.forward(&self.params, &input)).to_vec()
    }

    fn argmax(values: &[S]) -> usize {
        let mut best = 0;
        for (k, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = k;
            }
        }
        best
    }

    pub fn greedy(&mut self, observation: &Observation, goal: &Observation) -> Action {
        Self::fill_input(&mut self.input, observation, goal);
        self.mlp
            .forward_into(&self.params, &self.input, &mut self.cache);
        Action::ALL[Self::argmax(&dueling(self.cache.output()))]
    }

    pub fn epsilon_greedy<R: Rng + ?Sized>(
        &mut self,
        observation: &Observation,
        goal: &Observation,
        epsilon: f64,
        rng: &mut R,
    ) -> Action {
        if rng.gen::<f64>() < epsilon {
            Action::ALL[rng.gen_range(0..Action::COUNT)]
        } else {
            self.greedy(observation, goal)
        }
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.params);
    }

    /// One Huber-loss TD step on `batch` with double-Q targets
    /// `r + gamma * Q_target(s', argmax_a Q(s', a))`, or `r / (1 - gamma)` at
    /// absorbing goals. Returns the batch-mean loss.
    pub fn td_update(&mut self, batch: &[TdBatchEntry<'_>], gamma: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::ContractViolation("empty TD batch".into()));
        }
        let gamma_s = S::lit(gamma);
        let scale = S::one() / S::from_usize(batch.len()).unwrap();
        let mut grads = vec![S::zero(); self.params.len()];
        let mut total = S::zero();
        let mut dout = vec![S::zero(); Action::COUNT + 1];
        let mut dx = Vec::new();
        let share = S::one() / S::from_usize(Action::COUNT).unwrap();
        for (index, entry) in batch.iter().enumerate() {
            let reward = S::lit(entry.reward);
            let target = if entry.absorbing {
                reward / (S::one() - gamma_s)
            } else {
                Self::fill_input(&mut self.input, entry.next_observation, entry.goal);
                self.mlp
                    .forward_into(&self.params, &self.input, &mut self.cache);
                let best = Self::argmax(&dueling(self.cache.output()));
                self.mlp
                    .forward_into(&self.target, &self.input, &mut self.cache);
                reward + gamma_s * dueling(self.cache.output())[best]
            };
            Self::fill_input(&mut self.input, entry.observation, entry.goal);
            self.mlp
                .forward_into(&self.params, &self.input, &mut self.cache);
            let action = entry.action.index();
            let q = dueling(self.cache.output())[action];
            let diff = q - target;
            let loss = if diff.abs() <= S::one() {
                S::lit(0.5) * diff * diff
            } else {
                diff.abs() - S::lit(0.5)
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: loss.as_f64(),
                    index,
                    detail: format!("q {q}, target {target}, action {:?}", entry.action),
                });
            }
            total += loss;
            let g = diff.max(-S::one()).min(S::one()) * scale;
            dout[0] = g;
            for (b, d) in dout[1..].iter_mut().enumerate() {
                *d = if b == action {
                    g * (S::one() - share)
                } else {
                    -g * share
                };
            }
            self.mlp
                .backward(&self.params, &self.cache, &dout, &mut grads, &mut dx);
        }
        self.optimizer.step(&mut self.params, &grads)?;
        self.updates += 1;
        if self.updates % self.dims.target_update_period as u64 == 0 {
            self.sync_target();
        }
        Ok((total * scale).as_f64())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader::new(
                "q",
                serde_json::to_value(&self.dims).expect("dims serialize"),
                self.seed,
                self.updates,
                self.params.len(),
            ),
            params: self.params.iter().map(|p| p.narrow_f32()).collect(),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        checkpoint.header.expect_kind("q")?;
        let dims: QDims = serde_json::from_value(checkpoint.header.dims.clone())
            .map_err(|e| Error::Malformed(format!("q dims: {e}")))?;
        let mut policy = Self::new(
            dims.obs_dim,
            &dims.hidden,
            dims.target_update_period,
            1e-3,
            checkpoint.header.seed,
        );
        if policy.params.len() != checkpoint.params.len() {
            return Err(Error::ShapeMismatch {
                expected: policy.params.len(),
                actual: checkpoint.params.len(),
            });
        }
        for (p, v) in policy.params.iter_mut().zip(&checkpoint.params) {
            *p = S::widen_f32(*v);
        }
        policy.sync_target();
        policy.updates = checkpoint.header.step;
        Ok(policy)
    }
}

/// `Q(a) = V + A(a) - mean(A)` from the raw head `[V, A(0), ..]`.
fn dueling<S: Scalar>(head: &[S]) -> [S; Action::COUNT] {
    let advantages = &head[1..];
    let mean = advantages.iter().copied().sum::<S>() / S::from_usize(Action::COUNT).unwrap();
    let mut q = [S::zero(); Action::COUNT];
    for (q, a) in q.iter_mut().zip(advantages) {
        *q = head[0] + *a - mean;
    }
    q
}

impl<S: Scalar> GoalPolicy for QPolicy<S> {
    fn act(
        &mut self,
        _: &EnvState,
        observation: &Observation,
        goal: &Observation,
        _: &EnvConfig,
    ) -> Action {
        self.greedy(observation, goal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: f32) -> Observation {
        Observation(vec![v, 1.0 - v])
    }

    #[test]
    fn main_and_target_share_shapes() {
        let q = QPolicy::<f64>::new(2, &[8, 8], 3, 1e-2, 1);
        assert_eq!(q.params().len(), q.target_params().len());
        assert_eq!(q.q_values(&obs(0.2), &obs(0.9)).len(), Action::COUNT);
    }

    #[test]
    fn absorbing_targets_converge_to_scaled_reward() {
        let mut q = QPolicy::<f64>::new(2, &[16], 10, 1e-2, 2);
        let (s, g) = (obs(0.3), obs(0.8));
        let entry = TdBatchEntry {
            observation: &s,
            action: Action::PlusY,
            reward: 0.05,
            next_observation: &s,
            goal: &g,
            absorbing: true,
        };
        for _ in 0..2000 {
            q.td_update(&[entry], 0.9).unwrap();
        }
        let value = q.q_values(&s, &g)[Action::PlusY.index()];
        assert!((value - 0.5).abs() < 1e-2, "{value}");
    }

    #[test]
    fn target_sync_period() {
        let mut q = QPolicy::<f64>::new(2, &[4], 2, 1e-2, 3);
        let (s, g) = (obs(0.1), obs(0.5));
        let entry = TdBatchEntry {
            observation: &s,
            action: Action::NoOp,
            reward: 1.0,
            next_observation: &s,
            goal: &g,
            absorbing: false,
        };
        q.td_update(&[entry], 0.5).unwrap();
        assert_ne!(q.params(), q.target_params());
        q.td_update(&[entry], 0.5).unwrap();
        assert_eq!(q.params(), q.target_params());
    }
}
