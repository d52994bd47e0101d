//! Online goal-conditioned RL driven purely by the learned progress reward.
//!
//! The policy learner is a one-step TD Q-learner with a target network over
//! the five discrete actions. The environment's success oracle is used for
//! termination and logged metrics only; rewards always come from
//! [`crate::reward::relabel_reward`].

mod online;
mod qpolicy;
mod reward_learner;

pub use online::{train_online, OnlineOutcome, EVAL_SEED_OFFSET};
pub use qpolicy::{QPolicy, TdBatchEntry};
pub use reward_learner::{pretrain_reward, update_reward_online, RewardLearner, RoundStats};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, Action, EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub pretrain_steps: usize,
    pub total_env_steps: usize,
    /// Env-step interval between reward-model refinement rounds.
    pub reward_update_frequency: usize,
    /// Expert + push-back gradient step pairs per round.
    pub reward_updates_per_round: usize,
    pub reward_batch: usize,
    pub reward_learning_rate: f64,
    /// Share of distractor triplets in expert batches.
    pub negative_fraction: f64,
    /// Upper bound on `g - i` for sampled triplets; unbounded when absent.
    pub max_gap: Option<usize>,
    pub pushback: bool,
    pub policy_batch: usize,
    pub policy_learning_rate: f64,
    pub q_hidden: Vec<usize>,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `total_env_steps` over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub learning_starts: usize,
    pub target_update_period: usize,
    /// Replay capacity in episodes.
    pub replay_capacity: usize,
    pub eval_episodes: usize,
    pub parallel_envs: usize,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 2000,
            total_env_steps: 50_000,
            reward_update_frequency: 1000,
            reward_updates_per_round: 50,
            reward_batch: 128,
            reward_learning_rate: 2e-4,
            negative_fraction: 0.25,
            max_gap: None,
            pushback: true,
            policy_batch: 64,
            policy_learning_rate: 1e-3,
            q_hidden: vec![64, 64],
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.4,
            learning_starts: 1000,
            target_update_period: 500,
            replay_capacity: 300,
            eval_episodes: 20,
            parallel_envs: 1,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reward_update_frequency", self.reward_update_frequency),
            ("reward_updates_per_round", self.reward_updates_per_round),
            ("reward_batch", self.reward_batch),
            ("policy_batch", self.policy_batch),
            ("target_update_period", self.target_update_period),
            ("replay_capacity", self.replay_capacity),
            ("eval_episodes", self.eval_episodes),
            ("parallel_envs", self.parallel_envs),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::InvalidConfig(
                "negative_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_decay_fraction)
        {
            return Err(Error::InvalidConfig(
                "epsilon schedule values must lie in [0, 1]".into(),
            ));
        }
        if self.q_hidden.is_empty() || self.q_hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "q_hidden needs positive widths".into(),
            ));
        }
        if !(self.reward_learning_rate > 0.0 && self.policy_learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`.
    pub fn epsilon_at(&self, env_step: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * self.total_env_steps as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (env_step as f64 / horizon).min(1.0);
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// Anything that picks an action for a goal-conditioned observation.
pub trait GoalPolicy {
    fn act(
        &mut self,
        state: &EnvState,
        observation: &Observation,
        goal: &Observation,
        config: &EnvConfig,
    ) -> Action;
}

/// The scripted demonstrator as a policy (it reads the true state).
#[derive(Debug, Clone, Default)]
pub struct ScriptedExpert;

impl GoalPolicy for ScriptedExpert {
    fn act(
        &mut self,
        state: &EnvState,
        _: &Observation,
        _: &Observation,
        config: &EnvConfig,
    ) -> Action {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        env::scripted_expert_action(state, config, 0.0, &mut unused)
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl GoalPolicy for RandomPolicy {
    fn act(&mut self, _: &EnvState, _: &Observation, _: &Observation, _: &EnvConfig) -> Action {
        Action::ALL[self.rng.gen_range(0..Action::COUNT)]
    }
}

/// Replaces the rendered goal frame with a fixed one (e.g. the last frame
/// of a chosen demonstration).
#[derive(Debug, Clone)]
pub struct FixedGoal<P> {
    pub policy: P,
    pub goal: Observation,
}

impl<P: GoalPolicy> GoalPolicy for FixedGoal<P> {
    fn act(
        &mut self,
        state: &EnvState,
        observation: &Observation,
        _: &Observation,
        config: &EnvConfig,
    ) -> Action {
        self.policy.act(state, observation, &self.goal, config)
    }
}

/// Per-episode outcome of [`evaluate_episodes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub episode_seed: u64,
    pub success: bool,
    pub steps: usize,
}

/// Runs `episodes` rollouts on episode seeds `seed, seed + 1, ...`.
pub fn evaluate_episodes<P: GoalPolicy + ?Sized>(
    policy: &mut P,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeResult>> {
    if episodes == 0 {
        return Err(Error::InvalidConfig(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes as u64 {
        let episode_seed = seed.wrapping_add(k);
        let (mut state, mut obs) = env::reset(config, episode_seed)?;
        let goal = env::goal_observation(&state, config);
        loop {
            let action = policy.act(&state, &obs, &goal, config);
            let step = env::step(&state, action, config)?;
            state = step.state;
            obs = step.observation;
            if step.done {
                break;
            }
        }
        out.push(EpisodeResult {
            episode_seed,
            success: env::is_success(&state, config),
            steps: state.step_count,
        });
    }
    Ok(out)
}

/// Fraction of greedy rollouts on which the success oracle fired.
pub fn evaluate_policy<P: GoalPolicy + ?Sized>(
    policy: &mut P,
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let results = evaluate_episodes(policy, config, episodes, seed)?;
    Ok(results.iter().filter(|r| r.success).count() as f64 / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule() {
        let cfg = OnlineConfig {
            total_env_steps: 1000,
            ..Default::default()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert!((cfg.epsilon_at(200) - 0.525).abs() < 1e-12);
        assert!((cfg.epsilon_at(400) - 0.05).abs() < 1e-12);
        assert!((cfg.epsilon_at(900) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_bad_gamma() {
        let cfg = OnlineConfig {
            gamma: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(OnlineConfig::default().validate().is_ok());
    }

    #[test]
    fn expert_policy_always_succeeds_on_reach() {
        let cfg = EnvConfig::reach(0);
        assert_eq!(
            evaluate_policy(&mut ScriptedExpert, &cfg, 50, 1000).unwrap(),
            1.0
        );
    }

    #[test]
    fn single_episode_is_binary() {
        let cfg = EnvConfig::reach(0);
        let rate = evaluate_policy(&mut RandomPolicy::new(3), &cfg, 1, 0).unwrap();
        assert!(rate == 0.0 || rate == 1.0);
        assert!(evaluate_policy(&mut RandomPolicy::new(3), &cfg, 0, 0).is_err());
    }
}
