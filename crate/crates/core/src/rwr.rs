//! Offline imitation from mixed-quality demonstrations by reward-weighted
//! behavior cloning. Each demonstrated transition is weighted by
//! `exp(omega * r)` where `r` comes from a frozen progress model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::env::{Action, EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};
use crate::metrics::MetricRow;
use crate::nn::{
    softmax, Activation, Adam, Checkpoint, CheckpointHeader, Mlp, MlpCache, ProgressNet,
};
use crate::reward::{relabel_reward, RewardConfig};
use crate::rl::GoalPolicy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RwrConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl RwrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden needs positive widths".into()));
        }
        Ok(())
    }
}

/// `exp(omega * reward_hat)`.
pub fn rwr_weight(reward_hat: f64, omega: f64) -> f64 {
    (omega * reward_hat).exp()
}

/// Goal image for a fixed-goal task: the final frame of the first successful
/// demonstration.
pub fn goal_frame(dataset: &Dataset) -> Result<Observation> {
    dataset
        .trajectories()
        .iter()
        .find(|t| t.success)
        .and_then(|t| t.frames.last().cloned())
        .ok_or_else(|| {
            Error::EmptyDataset("no successful demonstration to take a goal frame from".into())
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BcDims {
    obs_dim: usize,
    hidden: Vec<usize>,
}

/// Feed-forward policy over `observation ++ goal` producing action logits.
#[derive(Debug, Clone)]
pub struct BcPolicy<S> {
    dims: BcDims,
    mlp: Mlp,
    params: Vec<S>,
    seed: u64,
    pub updates: u64,
}

/// One demonstrated transition, before weighting.
#[derive(Debug, Clone, Copy)]
pub struct BcTransition<'a> {
    pub initial: &'a Observation,
    pub observation: &'a Observation,
    pub action: Action,
}

/// A transition with its precomputed weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightedTransition<'a> {
    pub observation: &'a Observation,
    pub action: Action,
    pub weight: f64,
}

impl<S: Scalar> BcPolicy<S> {
    pub fn new(obs_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut widths = vec![2 * obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(Action::COUNT);
        let mlp = Mlp::new(&widths, Activation::Relu, Activation::Identity, 0);
        let mut params = vec![S::zero(); mlp.param_count()];
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            dims: BcDims {
                obs_dim,
                hidden: hidden.to_vec(),
            },
            mlp,
            params,
            seed,
            updates: 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.dims.obs_dim
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    fn input(observation: &Observation, goal: &Observation) -> Vec<S> {
        observation
            .as_slice()
            .iter()
            .chain(goal.as_slice())
            .map(|&v| S::widen_f32(v))
            .collect()
    }

    pub fn logits(&self, observation: &Observation, goal: &Observation) -> Vec<S> {
        self.mlp
            .forward(&self.params, &Self::input(observation, goal))
    }

    pub fn probabilities(&self, observation: &Observation, goal: &Observation) -> Vec<S> {
        softmax(&self.logits(observation, goal))
    }

    pub fn greedy(&self, observation: &Observation, goal: &Observation) -> Action {
        let logits = self.logits(observation, goal);
        let mut best = 0;
        for (k, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = k;
            }
        }
        Action::ALL[best]
    }

    /// Mean of `weight * |softmax(logits) - onehot(action)|_1` over `batch`
    /// and its gradient with respect to the policy parameters.
    pub fn weighted_loss_and_grad(
        &self,
        batch: &[WeightedTransition<'_>],
        goal: &Observation,
    ) -> Result<(S, Vec<S>)> {
        if batch.is_empty() {
            return Err(Error::ContractViolation("empty training batch".into()));
        }
        let scale = S::one() / S::from_usize(batch.len()).unwrap();
        let mut grads = vec![S::zero(); self.params.len()];
        let mut cache = MlpCache::default();
        let mut dx = Vec::new();
        let mut dlogits = vec![S::zero(); Action::COUNT];
        let mut total = S::zero();
        for (index, t) in batch.iter().enumerate() {
            if t.observation.len() != self.dims.obs_dim {
                return Err(Error::ShapeMismatch {
                    expected: self.dims.obs_dim,
                    actual: t.observation.len(),
                });
            }
            self.mlp
                .forward_into(&self.params, &Self::input(t.observation, goal), &mut cache);
            let probs = softmax(cache.output());
            let weight = S::lit(t.weight);
            let target = t.action.index();
            let mut l1 = S::zero();
            // d|p - y| / dp, then through the softmax Jacobian.
            let signs: Vec<S> = probs
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let diff = if k == target { p - S::one() } else { p };
                    l1 += diff.abs();
                    if diff > S::zero() {
                        S::one()
                    } else if diff < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    }
                })
                .collect();
            let loss = weight * l1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: loss.as_f64(),
                    index,
                    detail: format!("weight {}, probabilities {probs:?}", t.weight),
                });
            }
            total += loss;
            let dot: S = probs.iter().zip(&signs).map(|(&p, &s)| p * s).sum();
            for k in 0..Action::COUNT {
                dlogits[k] = weight * scale * probs[k] * (signs[k] - dot);
            }
            self.mlp
                .backward(&self.params, &cache, &dlogits, &mut grads, &mut dx);
        }
        Ok((total * scale, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader::new(
                "bc",
                serde_json::to_value(&self.dims).expect("dims serialize"),
                self.seed,
                self.updates,
                self.params.len(),
            ),
            params: self.params.iter().map(|p| p.narrow_f32()).collect(),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        checkpoint.header.expect_kind("bc")?;
        let dims: BcDims = serde_json::from_value(checkpoint.header.dims.clone())
            .map_err(|e| Error::Malformed(format!("bc dims: {e}")))?;
        let mut policy = Self::new(dims.obs_dim, &dims.hidden, checkpoint.header.seed);
        if policy.params.len() != checkpoint.params.len() {
            return Err(Error::ShapeMismatch {
                expected: policy.params.len(),
                actual: checkpoint.params.len(),
            });
        }
        for (p, v) in policy.params.iter_mut().zip(&checkpoint.params) {
            *p = S::widen_f32(*v);
        }
        policy.updates = checkpoint.header.step;
        Ok(policy)
    }
}

impl<S: Scalar> GoalPolicy for BcPolicy<S> {
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

/// Weighted BC loss with weights from the frozen `reward_model`.
pub fn rwr_bc_loss<S: Scalar>(
    policy: &BcPolicy<S>,
    reward_model: &ProgressNet<S>,
    batch: &[BcTransition<'_>],
    goal: &Observation,
    omega: f64,
    alpha: f64,
) -> Result<(S, Vec<S>)> {
    let weighted = batch
        .iter()
        .map(|t| {
            let r = relabel_reward(reward_model, t.initial, t.observation, goal, alpha)?.as_f64();
            Ok(WeightedTransition {
                observation: t.observation,
                action: t.action,
                weight: rwr_weight(r, omega),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    policy.weighted_loss_and_grad(&weighted, goal)
}

/// Result of [`train_rwr`].
#[derive(Debug, Clone)]
pub struct RwrOutcome<S> {
    pub policy: BcPolicy<S>,
    /// Mean weighted loss per epoch.
    pub losses: Vec<f64>,
    pub mean_weight_success: f64,
    pub mean_weight_failed: f64,
    pub metrics: Vec<MetricRow>,
}

fn mean_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Trains a [`BcPolicy`] on every transition of `dataset`, weighted by the
/// frozen `reward_model` with `reward.alpha` and `reward.omega`. Weights are
/// computed once up front.
pub fn train_rwr<S: Scalar>(
    dataset: &Dataset,
    reward_model: &ProgressNet<S>,
    goal: &Observation,
    config: &RwrConfig,
    reward: &RewardConfig,
) -> Result<RwrOutcome<S>> {
    config.validate()?;
    reward.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("RWR needs demonstrations".into()));
    }
    if goal.len() != dataset.obs_dim() {
        return Err(Error::ShapeMismatch {
            expected: dataset.obs_dim(),
            actual: goal.len(),
        });
    }
    let mut transitions = Vec::new();
    let (mut success_w, mut failed_w) = (Vec::new(), Vec::new());
    for trajectory in dataset.trajectories() {
        let actions = trajectory
            .actions
            .as_ref()
            .ok_or(Error::MissingActions(trajectory.id))?;
        for (t, &action) in actions.iter().enumerate() {
            let observation = &trajectory.frames[t];
            let r = relabel_reward(
                reward_model,
                &trajectory.frames[0],
                observation,
                goal,
                reward.alpha,
            )?
            .as_f64();
            let weight = rwr_weight(r, reward.omega);
            if trajectory.success {
                success_w.push(weight);
            } else {
                failed_w.push(weight);
            }
            transitions.push(WeightedTransition {
                observation,
                action,
                weight,
            });
        }
    }
    if transitions.is_empty() {
        return Err(Error::EmptyDataset(
            "demonstrations contain no transitions".into(),
        ));
    }
    let mean_weight_success = mean_or_nan(&success_w);
    let mean_weight_failed = mean_or_nan(&failed_w);
    let weights_cell = Some((mean_weight_success, mean_weight_failed));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = BcPolicy::<S>::new(dataset.obs_dim(), &config.hidden, config.seed);
    let mut optimizer = Adam::new(policy.params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut chunks = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| transitions[k]));
            let (loss, grads) = policy.weighted_loss_and_grad(&batch, goal)?;
            optimizer.step(&mut policy.params, &grads)?;
            policy.updates += 1;
            total += loss.as_f64();
            chunks += 1;
        }
        let loss = total / chunks as f64;
        losses.push(loss);
        metrics.push(MetricRow {
            step: policy.updates,
            episode: epoch as u64,
            relabeled_return: None,
            success: None,
            expert_loss: Some(loss),
            pushback_loss: None,
            mean_weights: weights_cell,
        });
    }
    Ok(RwrOutcome {
        policy,
        losses,
        mean_weight_success,
        mean_weight_failed,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_values() {
        assert_eq!(rwr_weight(0.0, 0.1), 1.0);
        assert_eq!(rwr_weight(123.4, 0.0), 1.0);
        assert!((rwr_weight(1.0, 0.1) - 1.105_170_918_075_647_6).abs() < 1e-12);
    }

    #[test]
    fn weight_scales_contribution() {
        let policy = BcPolicy::<f64>::new(2, &[8], 4);
        let (o, g) = (Observation(vec![0.1, 0.2]), Observation(vec![0.9, 0.9]));
        let unit = [WeightedTransition {
            observation: &o,
            action: Action::PlusX,
            weight: 1.0,
        }];
        let heavy = [WeightedTransition {
            weight: 0.1f64.exp(),
            ..unit[0]
        }];
        let (a, _) = policy.weighted_loss_and_grad(&unit, &g).unwrap();
        let (b, _) = policy.weighted_loss_and_grad(&heavy, &g).unwrap();
        assert!((b / a - 0.1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_hidden() {
        let config = RwrConfig {
            hidden: vec![],
            ..RwrConfig::default()
        };
        assert!(config.validate().is_err());
        assert!(RwrConfig::default().validate().is_ok());
    }
}
