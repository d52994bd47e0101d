use rand::Rng;

use super::OnlineConfig;
use crate::data::{sample_triplet_batch, Dataset, ReplayBuffer, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Adam, ProgressNet};
use crate::reward::{expert_loss, pushback_loss_with_targets, pushback_targets, RewardConfig};
use crate::scalar::Scalar;

/// A progress network together with its optimizer state.
#[derive(Debug, Clone)]
pub struct RewardLearner<S> {
    pub model: ProgressNet<S>,
    optimizer: Adam<S>,
}

/// Mean losses of one refinement round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    pub expert_loss: f64,
    /// `None` when push-back was disabled or the replay buffer was empty.
    pub pushback_loss: Option<f64>,
}

impl<S: Scalar> RewardLearner<S> {
    pub fn new(model: ProgressNet<S>, learning_rate: f64) -> Self {
        let optimizer = Adam::new(model.param_count(), learning_rate);
        Self { model, optimizer }
    }

    fn apply(&mut self, grads: &[S]) -> Result<()> {
        self.optimizer.step(self.model.params_mut(), grads)?;
        self.model.updates += 1;
        Ok(())
    }

    /// One expert-loss step on a fresh batch; returns the loss.
    pub fn expert_step<R: Rng + ?Sized>(
        &mut self,
        expert: &Dataset,
        config: &OnlineConfig,
        reward: &RewardConfig,
        rng: &mut R,
    ) -> Result<f64> {
        let batch = sample_triplet_batch(
            expert,
            rng,
            config.reward_batch,
            config.negative_fraction,
            config.max_gap,
        )?;
        let (loss, grads) = expert_loss(&self.model, expert, &batch, reward.eps_sigma)?;
        self.apply(&grads)?;
        Ok(loss.as_f64())
    }

    /// Runs `pretrain_steps` expert-loss steps and returns the loss curve.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        expert: &Dataset,
        config: &OnlineConfig,
        reward: &RewardConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if expert.is_empty() {
            return Err(Error::EmptyDataset(
                "pretraining needs expert trajectories".into(),
            ));
        }
        (0..config.pretrain_steps)
            .map(|_| self.expert_step(expert, config, reward, rng))
            .collect()
    }

    /// One refinement round: `reward_updates_per_round` iterations of an
    /// expert step followed by a push-back step on rollout triplets.
    /// Push-back targets come from a snapshot taken before the round.
    pub fn refine<T: AsRef<Trajectory>, R: Rng + ?Sized>(
        &mut self,
        expert: &Dataset,
        rollouts: &ReplayBuffer<T>,
        config: &OnlineConfig,
        reward: &RewardConfig,
        rng: &mut R,
    ) -> Result<RoundStats> {
        let use_pushback = config.pushback && rollouts.iter().any(|e| e.as_ref().len() > 2);
        if config.pushback && !use_pushback {
            log::warn!("no rollout long enough for push-back, skipping it this round");
        }
        let snapshot = use_pushback.then(|| self.model.clone());
        let mut expert_total = 0.0;
        let mut pushback_total = 0.0;
        for _ in 0..config.reward_updates_per_round {
            expert_total += self.expert_step(expert, config, reward, rng)?;
            if let Some(snapshot) = &snapshot {
                let batch =
                    sample_triplet_batch(rollouts, rng, config.reward_batch, 0.0, config.max_gap)?;
                let targets = pushback_targets(snapshot, rollouts, &batch, reward.beta)?;
                let (loss, grads) =
                    pushback_loss_with_targets(&self.model, rollouts, &batch, &targets)?;
                self.apply(&grads)?;
                pushback_total += loss.as_f64();
            }
        }
        let rounds = config.reward_updates_per_round as f64;
        Ok(RoundStats {
            expert_loss: expert_total / rounds,
            pushback_loss: snapshot.map(|_| pushback_total / rounds),
        })
    }
}

/// Pretrains `model` on expert triplets; returns the trained model and its
/// loss curve.
pub fn pretrain_reward<S: Scalar, R: Rng + ?Sized>(
    expert: &Dataset,
    model: ProgressNet<S>,
    config: &OnlineConfig,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<(RewardLearner<S>, Vec<f64>)> {
    let mut learner = RewardLearner::new(model, config.reward_learning_rate);
    let losses = learner.pretrain(expert, config, reward, rng)?;
    Ok((learner, losses))
}

/// One online refinement round (expert loss and push-back).
pub fn update_reward_online<S: Scalar, T: AsRef<Trajectory>, R: Rng + ?Sized>(
    learner: &mut RewardLearner<S>,
    expert: &Dataset,
    rollouts: &ReplayBuffer<T>,
    config: &OnlineConfig,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<RoundStats> {
    learner.refine(expert, rollouts, config, reward, rng)
}
