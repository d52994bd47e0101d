#![allow(dead_code)]

use progress_core::data::{
    record_demonstrations, sample_triplet_batch, Dataset, DemoOptions, ReplayBuffer, Source,
    Trajectory, Triplet,
};
use progress_core::env::{self, Action, EnvConfig};
use progress_core::nn::{GaussianParams, ProgressDims, ProgressNet};
use progress_core::reward::{
    expert_loss, gaussian_entropy, kl_gaussian, pushback_loss_with_targets, pushback_targets,
    relabel_reward, triplet_target, RewardConfig,
};
use progress_core::rl::{pretrain_reward, OnlineConfig, RewardLearner};
use progress_core::rwr::{rwr_bc_loss, rwr_weight, BcPolicy, BcTransition};
use progress_core::stats::spearman;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

fn log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// `integral p ln(p / q)` by quadrature over +-14 sigma_p around mu_p.
pub fn kl_by_quadrature(mu_p: f64, sigma_p: f64, mu_q: f64, sigma_q: f64) -> f64 {
    let (a, b) = (mu_p - 14.0 * sigma_p, mu_p + 14.0 * sigma_p);
    simpson(
        |x| {
            let lp = log_density(x, mu_p, sigma_p);
            lp.exp() * (lp - log_density(x, mu_q, sigma_q))
        },
        a,
        b,
        8000,
    )
}

/// `-integral p ln p` by quadrature.
pub fn entropy_by_quadrature(sigma: f64) -> f64 {
    simpson(
        |x| {
            let lp = log_density(x, 0.0, sigma);
            -lp.exp() * lp
        },
        -14.0 * sigma,
        14.0 * sigma,
        8000,
    )
}

/// Central differences of `f` at `params`, one coordinate at a time.
pub fn numeric_gradient(
    params: &mut [f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let original = params[k];
        params[k] = original + step;
        let up = f(params);
        params[k] = original - step;
        let down = f(params);
        params[k] = original;
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

pub fn expert_demos(config: &EnvConfig, count: usize, first_episode: u64) -> Dataset {
    record_demonstrations(
        config,
        &DemoOptions {
            count,
            first_episode,
            ..DemoOptions::default()
        },
    )
    .unwrap()
}

/// Pretrains a fresh progress model with the default settings.
pub fn pretrained(expert: &Dataset, seed: u64, negative_fraction: f64) -> RewardLearner<f64> {
    let config = OnlineConfig {
        seed,
        negative_fraction,
        ..OnlineConfig::default()
    };
    let model = ProgressNet::new(ProgressDims::new(expert.obs_dim()), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pretrain_reward(expert, model, &config, &RewardConfig::default(), &mut rng)
        .unwrap()
        .0
}

/// Mean Spearman correlation between predicted mean progress and frame
/// index along each trajectory, using its first and last frames as
/// initial and goal.
pub fn mean_spearman(model: &ProgressNet<f64>, dataset: &Dataset) -> f64 {
    let mut total = 0.0;
    for t in dataset.trajectories() {
        let first = &t.frames[0];
        let last = t.frames.last().unwrap();
        let mus: Vec<f64> = t
            .frames
            .iter()
            .map(|f| model.predict(first, f, last).unwrap().mu)
            .collect();
        let index: Vec<f64> = (0..mus.len()).map(|k| k as f64).collect();
        total += spearman(&index, &mus);
    }
    total / dataset.len() as f64
}

/// Worst absolute KL and entropy errors against quadrature over `pairs`
/// random parameter pairs with sigma in [0.05, 2].
pub fn kl_entropy_worst_errors(pairs: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_kl = 0.0f64;
    let mut worst_entropy = 0.0f64;
    for _ in 0..pairs {
        let (mu_p, mu_q) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let (s_p, s_q) = (rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0));
        let closed = kl_gaussian(
            GaussianParams::from_sigma(mu_p, s_p),
            GaussianParams::from_sigma(mu_q, s_q),
        )
        .unwrap();
        worst_kl = worst_kl.max((closed - kl_by_quadrature(mu_p, s_p, mu_q, s_q)).abs());
        let h = gaussian_entropy(2.0 * s_p.ln());
        worst_entropy = worst_entropy.max((h - entropy_by_quadrature(s_p)).abs());
    }
    (worst_kl, worst_entropy)
}

/// Outcome of one finite-difference check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Analytic loss minus the forward-only oracle loss.
    pub loss_gap: f64,
    pub relative_error: f64,
}

/// Batch-mean KL recomputed from forward predictions only.
pub fn kl_oracle_loss(
    net: &ProgressNet<f64>,
    data: &Dataset,
    batch: &[Triplet],
    targets: &[GaussianParams<f64>],
) -> f64 {
    let total: f64 = batch
        .iter()
        .zip(targets)
        .map(|(t, target)| {
            let (i, j, g) = t.frames(data);
            kl_gaussian(*target, net.predict(i, j, g).unwrap()).unwrap()
        })
        .sum();
    total / batch.len() as f64
}

pub fn progress_model(seed: u64) -> ProgressNet<f64> {
    ProgressNet::new(ProgressDims::new(progress_core::env::VECTOR_OBS_DIM), seed).unwrap()
}

/// Expert-loss gradients on 5-triplet batches (40% negatives), one check per
/// setting.
pub fn expert_gradient_checks(settings: u64) -> Vec<GradCheck> {
    let data = expert_demos(&EnvConfig::reach(0), 6, 0);
    (0..settings)
        .map(|setting| {
            let mut rng = ChaCha8Rng::seed_from_u64(setting);
            let batch = sample_triplet_batch(&data, &mut rng, 5, 0.4, None).unwrap();
            let targets: Vec<_> = batch
                .iter()
                .map(|t| triplet_target(t, 0.05).unwrap())
                .collect();
            let mut net = progress_model(100 + setting);
            let (loss, analytic) = expert_loss(&net, &data, &batch, 0.05).unwrap();
            let loss_gap = loss - kl_oracle_loss(&net, &data, &batch, &targets);
            let mut params = net.params().to_vec();
            let numeric = numeric_gradient(&mut params, FD_STEP, |p| {
                net.params_mut().copy_from_slice(p);
                kl_oracle_loss(&net, &data, &batch, &targets)
            });
            GradCheck {
                loss_gap,
                relative_error: relative_error(&analytic, &numeric),
            }
        })
        .collect()
}

/// Push-back gradients with the targets held fixed at a random decay.
pub fn pushback_gradient_checks(settings: u64) -> Vec<GradCheck> {
    let data = expert_demos(&EnvConfig::reach(1), 6, 50);
    (0..settings)
        .map(|setting| {
            let mut rng = ChaCha8Rng::seed_from_u64(setting + 20);
            let batch = sample_triplet_batch(&data, &mut rng, 5, 0.0, None).unwrap();
            let beta = rng.gen_range(0.0..1.0);
            let mut net = progress_model(200 + setting);
            let targets = pushback_targets(&net, &data, &batch, beta).unwrap();
            let (loss, analytic) =
                pushback_loss_with_targets(&net, &data, &batch, &targets).unwrap();
            let loss_gap = loss - kl_oracle_loss(&net, &data, &batch, &targets);
            let mut params = net.params().to_vec();
            let numeric = numeric_gradient(&mut params, FD_STEP, |p| {
                net.params_mut().copy_from_slice(p);
                kl_oracle_loss(&net, &data, &batch, &targets)
            });
            GradCheck {
                loss_gap,
                relative_error: relative_error(&analytic, &numeric),
            }
        })
        .collect()
}

/// Reward-weighted cloning gradients on 5 random noisy-demo transitions with
/// a random temperature, against a weighted one-hot L1 oracle.
pub fn rwr_gradient_checks(settings: u64) -> Vec<GradCheck> {
    let env = EnvConfig::reach(2);
    let data = record_demonstrations(&env, &DemoOptions::noisy(6)).unwrap();
    let reward_model = progress_model(7);
    let goal = data.trajectories()[0].frames.last().unwrap().clone();
    (0..settings)
        .map(|setting| {
            let mut rng = ChaCha8Rng::seed_from_u64(setting + 40);
            let transitions: Vec<BcTransition<'_>> = (0..5)
                .map(|_| {
                    let t = &data.trajectories()[rng.gen_range(0..data.len())];
                    let k = rng.gen_range(0..t.len() - 1);
                    BcTransition {
                        initial: &t.frames[0],
                        observation: &t.frames[k],
                        action: t.actions.as_ref().unwrap()[k],
                    }
                })
                .collect();
            let omega = rng.gen_range(0.0..1.0);
            let weights: Vec<f64> = transitions
                .iter()
                .map(|t| {
                    let r = relabel_reward(&reward_model, t.initial, t.observation, &goal, 0.4);
                    rwr_weight(r.unwrap(), omega)
                })
                .collect();
            let oracle = |policy: &BcPolicy<f64>| {
                let total: f64 = transitions
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| {
                        let probs = policy.probabilities(t.observation, &goal);
                        let l1: f64 = probs
                            .iter()
                            .enumerate()
                            .map(|(k, p)| (p - if k == t.action.index() { 1.0 } else { 0.0 }).abs())
                            .sum();
                        w * l1
                    })
                    .sum();
                total / transitions.len() as f64
            };
            let mut policy = BcPolicy::<f64>::new(env.obs_dim(), &[64, 64], 300 + setting);
            let (loss, analytic) =
                rwr_bc_loss(&policy, &reward_model, &transitions, &goal, omega, 0.4).unwrap();
            let loss_gap = loss - oracle(&policy);
            let mut params = policy.params().to_vec();
            let numeric = numeric_gradient(&mut params, FD_STEP, |p| {
                policy.params_mut().copy_from_slice(p);
                oracle(&policy)
            });
            GradCheck {
                loss_gap,
                relative_error: relative_error(&analytic, &numeric),
            }
        })
        .collect()
}

/// Uniform-random-action episodes stored as rollouts.
pub fn random_rollouts(config: &EnvConfig, count: u64, seed: u64) -> ReplayBuffer<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(count as usize);
    for episode in 0..count {
        let (mut state, obs) = env::reset(config, 50_000 + seed * 1000 + episode).unwrap();
        let mut frames = vec![obs];
        loop {
            let out =
                env::step(&state, Action::ALL[rng.gen_range(0..Action::COUNT)], config).unwrap();
            state = out.state;
            frames.push(out.observation);
            if out.done {
                break;
            }
        }
        buffer
            .push_rollout(Trajectory {
                id: episode,
                frames,
                actions: None,
                success: false,
                source: Source::Rollout,
            })
            .unwrap();
    }
    buffer
}

/// Mean predicted progress over fixed rollout triplets.
pub fn rollout_mu(model: &ProgressNet<f64>, rollouts: &ReplayBuffer<Trajectory>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let batch = sample_triplet_batch(rollouts, &mut rng, 512, 0.0, None).unwrap();
    batch
        .iter()
        .map(|t| {
            let (i, j, g) = t.frames(rollouts);
            model.predict(i, j, g).unwrap().mu
        })
        .sum::<f64>()
        / batch.len() as f64
}
