use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate_policy, OnlineConfig, QPolicy, RewardLearner, RoundStats, TdBatchEntry};
use crate::data::{Dataset, ReplayBuffer, Source, Trajectory};
use crate::env::{self, Action, EnvConfig, EnvState, Observation};
use crate::error::{Error, Result};
use crate::metrics::MetricRow;
use crate::nn::ProgressNet;
use crate::reward::{relabel_reward, RewardConfig};
use crate::scalar::Scalar;

/// Episode seeds used for the final greedy evaluation, far from training
/// seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

/// Result of [`train_online`].
#[derive(Debug, Clone)]
pub struct OnlineOutcome<S> {
    pub policy: QPolicy<S>,
    pub reward_model: ProgressNet<S>,
    pub metrics: Vec<MetricRow>,
    pub final_success_rate: f64,
}

/// A stored rollout with its goal frame and lazily relabeled rewards.
#[derive(Debug, Clone)]
struct Rollout {
    trajectory: Trajectory,
    goal: Observation,
    /// `rewards[t]` is the learned reward of frame `t + 1`; NaN when not yet
    /// computed for `version`.
    rewards: Vec<f64>,
    version: u64,
    /// Ended before the horizon, so the last frame is absorbing.
    terminated: bool,
}

impl AsRef<Trajectory> for Rollout {
    fn as_ref(&self) -> &Trajectory {
        &self.trajectory
    }
}

impl Rollout {
    fn reward<S: Scalar>(&mut self, t: usize, model: &ProgressNet<S>, alpha: f64) -> Result<f64> {
        if self.version != model.updates {
            self.rewards.iter_mut().for_each(|r| *r = f64::NAN);
            self.version = model.updates;
        }
        if self.rewards[t].is_nan() {
            let frames = &self.trajectory.frames;
            self.rewards[t] =
                relabel_reward(model, &frames[0], &frames[t + 1], &self.goal, alpha)?.as_f64();
        }
        Ok(self.rewards[t])
    }
}

struct Worker {
    episode: u64,
    state: EnvState,
    goal: Observation,
    frames: Vec<Observation>,
    actions: Vec<Action>,
}

impl Worker {
    fn start(config: &EnvConfig, episode: u64, episode_seed: u64) -> Result<Self> {
        let (state, obs) = env::reset(config, episode_seed)?;
        Ok(Self {
            episode,
            goal: env::goal_observation(&state, config),
            state,
            frames: vec![obs],
            actions: Vec::new(),
        })
    }
}

/// Online goal-conditioned Q-learning on rewards relabeled by the progress
/// model, with periodic reward refinement (expert loss plus push-back on
/// rollouts).
///
/// `model` is used as given; pretrain it first with
/// [`super::pretrain_reward`]. `parallel_envs` instances are stepped in
/// lockstep, in index order, and every instance step counts toward
/// `total_env_steps`. Rewards are multiplied by `1 - gamma` internally so
/// Q-values stay on the reward's own scale.
pub fn train_online<S: Scalar>(
    env_config: &EnvConfig,
    expert: &Dataset,
    model: ProgressNet<S>,
    config: &OnlineConfig,
    reward: &RewardConfig,
) -> Result<OnlineOutcome<S>> {
    env_config.validate()?;
    config.validate()?;
    reward.validate()?;
    let obs_dim = env_config.obs_dim();
    if model.dims().obs_dim != obs_dim {
        return Err(Error::ShapeMismatch {
            expected: obs_dim,
            actual: model.dims().obs_dim,
        });
    }
    if expert.is_empty() {
        return Err(Error::EmptyDataset(
            "online training needs expert trajectories".into(),
        ));
    }
    if expert.obs_dim() != obs_dim {
        return Err(Error::ShapeMismatch {
            expected: obs_dim,
            actual: expert.obs_dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner = RewardLearner::new(model, config.reward_learning_rate);
    let mut policy = QPolicy::new(
        obs_dim,
        &config.q_hidden,
        config.target_update_period,
        config.policy_learning_rate,
        config.seed.wrapping_add(1),
    );
    let mut replay: ReplayBuffer<Rollout> = ReplayBuffer::new(config.replay_capacity);
    let mut metrics = Vec::new();
    let mut last_round: Option<RoundStats> = None;
    let reward_scale = 1.0 - config.gamma;
    let episode_base = config.seed << 32;
    let mut episodes = 0u64;
    let mut workers = Vec::with_capacity(config.parallel_envs);
    if config.total_env_steps > 0 {
        for _ in 0..config.parallel_envs {
            workers.push(Worker::start(
                env_config,
                episodes,
                episode_base + episodes,
            )?);
            episodes += 1;
        }
    }

    let mut env_steps = 0usize;
    'outer: while env_steps < config.total_env_steps {
        for worker in workers.iter_mut() {
            if env_steps >= config.total_env_steps {
                break 'outer;
            }
            let epsilon = config.epsilon_at(env_steps);
            let obs = worker.frames.last().unwrap();
            let action = policy.epsilon_greedy(obs, &worker.goal, epsilon, &mut rng);
            let outcome = env::step(&worker.state, action, env_config)?;
            worker.state = outcome.state;
            worker.frames.push(outcome.observation);
            worker.actions.push(action);
            env_steps += 1;

            if outcome.done {
                let finished = std::mem::replace(
                    worker,
                    Worker::start(env_config, episodes, episode_base + episodes)?,
                );
                episodes += 1;
                let success = env::is_success(&finished.state, env_config);
                let transitions = finished.actions.len();
                let mut rollout = Rollout {
                    trajectory: Trajectory {
                        id: finished.episode,
                        frames: finished.frames,
                        actions: Some(finished.actions),
                        success,
                        source: Source::Rollout,
                    },
                    goal: finished.goal,
                    rewards: vec![f64::NAN; transitions],
                    version: learner.model.updates,
                    terminated: finished.state.step_count < env_config.horizon,
                };
                let mut relabeled = 0.0;
                for t in 0..transitions {
                    relabeled += rollout.reward(t, &learner.model, reward.alpha)?;
                }
                replay.push_rollout(rollout)?;
                metrics.push(MetricRow {
                    step: env_steps as u64,
                    episode: finished.episode,
                    relabeled_return: Some(relabeled),
                    success: Some(if success { 1.0 } else { 0.0 }),
                    expert_loss: last_round.map(|r| r.expert_loss),
                    pushback_loss: last_round.and_then(|r| r.pushback_loss),
                    mean_weights: None,
                });
            }

            if env_steps >= config.learning_starts && replay.transition_count() > 0 {
                td_step(
                    &mut policy,
                    &mut replay,
                    &learner.model,
                    config,
                    reward.alpha,
                    reward_scale,
                    &mut rng,
                )?;
            }
            if env_steps % config.reward_update_frequency == 0 {
                let stats = learner.refine(expert, &replay, config, reward, &mut rng)?;
                log::debug!("step {env_steps}: reward round {stats:?}");
                last_round = Some(stats);
            }
        }
    }

    let mut greedy = policy.clone();
    let final_success_rate = evaluate_policy(
        &mut greedy,
        env_config,
        config.eval_episodes,
        EVAL_SEED_OFFSET.wrapping_add(config.seed << 32),
    )?;
    Ok(OnlineOutcome {
        policy,
        reward_model: learner.model,
        metrics,
        final_success_rate,
    })
}

fn td_step<S: Scalar>(
    policy: &mut QPolicy<S>,
    replay: &mut ReplayBuffer<Rollout>,
    model: &ProgressNet<S>,
    config: &OnlineConfig,
    alpha: f64,
    reward_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut picks = Vec::with_capacity(config.policy_batch);
    for _ in 0..config.policy_batch {
        let (entry, t) = replay
            .sample_transition(rng)
            .expect("replay holds transitions");
        let r = replay.get_mut(entry).reward(t, model, alpha)?;
        picks.push((entry, t, r * reward_scale));
    }
    let batch: Vec<TdBatchEntry<'_>> = picks
        .iter()
        .map(|&(entry, t, reward)| {
            let rollout = replay.get(entry);
            let frames = &rollout.trajectory.frames;
            TdBatchEntry {
                observation: &frames[t],
                action: rollout.trajectory.actions.as_ref().unwrap()[t],
                reward,
                next_observation: &frames[t + 1],
                goal: &rollout.goal,
                absorbing: rollout.terminated && t + 2 == frames.len(),
            }
        })
        .collect();
    policy.td_update(&batch, config.gamma)?;
    Ok(())
}
