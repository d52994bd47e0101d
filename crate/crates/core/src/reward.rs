//! Progress labels, Gaussian targets, KL objectives and the reward
//! functional built on a [`ProgressNet`].

use serde::{Deserialize, Serialize};

use crate::data::{TrajectorySource, Triplet};
use crate::error::{Error, Result};
use crate::nn::{GaussianParams, KlExample, ProgressNet};
use crate::scalar::Scalar;

/// Progress label assigned to distractor triplets.
pub const NEGATIVE_LABEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Entropy penalty weight.
    pub alpha: f64,
    /// Push-back decay applied to rollout predictions.
    pub beta: f64,
    /// Floor on the target standard deviation.
    pub eps_sigma: f64,
    /// Temperature of the reward-weighted regression weights.
    pub omega: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.9,
            eps_sigma: 0.05,
            omega: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.eps_sigma > 0.0) || !self.eps_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps_sigma must be positive, got {}",
                self.eps_sigma
            )));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "omega must be >= 0, got {}",
                self.omega
            )));
        }
        Ok(())
    }
}

/// `|j - i| / |g - i|`.
pub fn progress_label(i: usize, j: usize, g: usize) -> Result<f64> {
    if i == g {
        return Err(Error::DegenerateTriplet {
            initial: i,
            goal: g,
        });
    }
    Ok(j.abs_diff(i) as f64 / g.abs_diff(i) as f64)
}

fn span_sigma(i: usize, g: usize) -> Result<f64> {
    if i == g {
        return Err(Error::DegenerateTriplet {
            initial: i,
            goal: g,
        });
    }
    Ok(1.0 / g.abs_diff(i) as f64)
}

/// Target `N(progress, max(1/(g-i), eps_sigma)^2)`.
pub fn target_distribution<S: Scalar>(
    i: usize,
    j: usize,
    g: usize,
    eps_sigma: f64,
) -> Result<GaussianParams<S>> {
    let mu = progress_label(i, j, g)?;
    let sigma = span_sigma(i, g)?.max(eps_sigma);
    Ok(GaussianParams::from_sigma(S::lit(mu), S::lit(sigma)))
}

/// Target for a triplet: distractors keep the floored sigma but take the
/// negative label as mean.
pub fn triplet_target<S: Scalar>(triplet: &Triplet, eps_sigma: f64) -> Result<GaussianParams<S>> {
    if triplet.is_negative {
        let sigma = span_sigma(triplet.i, triplet.g)?.max(eps_sigma);
        return Ok(GaussianParams::from_sigma(
            S::lit(NEGATIVE_LABEL),
            S::lit(sigma),
        ));
    }
    target_distribution(triplet.i, triplet.j, triplet.g, eps_sigma)
}

fn ensure_finite<S: Scalar>(g: &GaussianParams<S>, name: &str) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} = {g:?}")))
    }
}

/// Closed-form `KL(p || q)` between univariate Gaussians.
pub fn kl_gaussian<S: Scalar>(p: GaussianParams<S>, q: GaussianParams<S>) -> Result<S> {
    ensure_finite(&p, "p")?;
    ensure_finite(&q, "q")?;
    Ok(kl_with_grad(p, q).0)
}

/// `KL(p || q)` together with its partial derivatives in `q.mu` and
/// `q.log_var`.
#[inline]
pub(crate) fn kl_with_grad<S: Scalar>(p: GaussianParams<S>, q: GaussianParams<S>) -> (S, S, S) {
    let half = S::lit(0.5);
    let inv_var_q = (-q.log_var).exp();
    let diff = q.mu - p.mu;
    // Variance ratio taken in log space so that KL(p || p) is exactly zero.
    let spread = (p.log_var - q.log_var).exp() + diff * diff * inv_var_q;
    let kl = half * (q.log_var - p.log_var) + half * (spread - S::one());
    let d_mu = diff * inv_var_q;
    let d_log_var = half - half * spread;
    (kl, d_mu, d_log_var)
}

/// Differential entropy `0.5 * ln(2 pi e sigma^2)` (natural log).
pub fn gaussian_entropy<S: Scalar>(log_var: S) -> S {
    let two_pi_e = S::lit(2.0) * S::PI() * S::E();
    S::lit(0.5) * (two_pi_e.ln() + log_var)
}

/// `mu - alpha * H(N(mu, sigma^2))`.
pub fn reward_value<S: Scalar>(params: GaussianParams<S>, alpha: S) -> S {
    params.mu - alpha * gaussian_entropy(params.log_var)
}

/// Detached push-back target `N(beta * mu, 1/(g-i)^2)`.
pub fn pushback_target<S: Scalar>(
    predicted_mu: S,
    beta: f64,
    i: usize,
    g: usize,
) -> Result<GaussianParams<S>> {
    let sigma = span_sigma(i, g)?;
    Ok(GaussianParams::from_sigma(
        S::lit(beta) * predicted_mu,
        S::lit(sigma),
    ))
}

/// Batch-mean KL of the network against label targets on `triplets`.
pub fn expert_loss<S: Scalar, D: TrajectorySource + ?Sized>(
    net: &ProgressNet<S>,
    source: &D,
    triplets: &[Triplet],
    eps_sigma: f64,
) -> Result<(S, Vec<S>)> {
    let examples = triplets
        .iter()
        .map(|t| {
            let (initial, current, goal) = t.frames(source);
            Ok(KlExample {
                initial,
                current,
                goal,
                target: triplet_target(t, eps_sigma)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    net.kl_loss_and_grad(&examples)
}

/// Push-back targets from `snapshot`'s current predictions. The returned
/// values are plain numbers: later parameter changes cannot reach them.
pub fn pushback_targets<S: Scalar, D: TrajectorySource + ?Sized>(
    snapshot: &ProgressNet<S>,
    source: &D,
    triplets: &[Triplet],
    beta: f64,
) -> Result<Vec<GaussianParams<S>>> {
    triplets
        .iter()
        .map(|t| {
            let (initial, current, goal) = t.frames(source);
            let predicted = snapshot.predict(initial, current, goal)?;
            pushback_target(predicted.mu, beta, t.i, t.g)
        })
        .collect()
}

/// Batch-mean KL against precomputed (detached) push-back targets.
pub fn pushback_loss_with_targets<S: Scalar, D: TrajectorySource + ?Sized>(
    net: &ProgressNet<S>,
    source: &D,
    triplets: &[Triplet],
    targets: &[GaussianParams<S>],
) -> Result<(S, Vec<S>)> {
    if targets.len() != triplets.len() {
        return Err(Error::ShapeMismatch {
            expected: triplets.len(),
            actual: targets.len(),
        });
    }
    let examples: Vec<_> = triplets
        .iter()
        .zip(targets)
        .map(|(t, target)| {
            let (initial, current, goal) = t.frames(source);
            KlExample {
                initial,
                current,
                goal,
                target: *target,
            }
        })
        .collect();
    net.kl_loss_and_grad(&examples)
}

/// Push-back loss with targets taken from the network's own predictions
/// before any update.
pub fn pushback_loss<S: Scalar, D: TrajectorySource + ?Sized>(
    net: &ProgressNet<S>,
    source: &D,
    triplets: &[Triplet],
    beta: f64,
) -> Result<(S, Vec<S>)> {
    let targets = pushback_targets(net, source, triplets, beta)?;
    pushback_loss_with_targets(net, source, triplets, &targets)
}

/// Learned reward for frame `current` of an episode that started at
/// `initial` and aims for `goal`.
pub fn relabel_reward<S: Scalar>(
    net: &ProgressNet<S>,
    initial: &crate::env::Observation,
    current: &crate::env::Observation,
    goal: &crate::env::Observation,
    alpha: f64,
) -> Result<S> {
    let prediction = net.predict(initial, current, goal)?;
    Ok(reward_value(prediction, S::lit(alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g(mu: f64, sigma: f64) -> GaussianParams<f64> {
        GaussianParams::from_sigma(mu, sigma)
    }

    #[test]
    fn progress_labels() {
        assert_eq!(progress_label(0, 5, 10).unwrap(), 0.5);
        assert_eq!(progress_label(2, 2, 10).unwrap(), 0.0);
        assert_eq!(progress_label(0, 10, 10).unwrap(), 1.0);
        assert!(matches!(
            progress_label(3, 3, 3),
            Err(Error::DegenerateTriplet { .. })
        ));
    }

    #[test]
    fn progress_label_in_unit_interval_exhaustive() {
        for n in 2..=12usize {
            for i in 0..n {
                for g in i + 1..n {
                    for j in i..=g {
                        let d = progress_label(i, j, g).unwrap();
                        assert!((0.0..=1.0).contains(&d));
                    }
                }
            }
        }
    }

    #[test]
    fn target_distribution_floors_sigma() {
        let t: GaussianParams<f64> = target_distribution(0, 50, 100, 0.05).unwrap();
        assert_relative_eq!(t.mu, 0.5);
        assert_relative_eq!(t.sigma(), 0.05, epsilon = 1e-12);
        let t: GaussianParams<f64> = target_distribution(0, 1, 2, 0.05).unwrap();
        assert_relative_eq!(t.mu, 0.5);
        assert_relative_eq!(t.sigma(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn negative_target_keeps_sigma() {
        let t = Triplet {
            trajectory: 0,
            i: 0,
            j: 3,
            g: 4,
            is_negative: true,
            negative_source: Some(1),
        };
        let target: GaussianParams<f64> = triplet_target(&t, 0.05).unwrap();
        assert_eq!(target.mu, -1.0);
        assert_relative_eq!(target.sigma(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn kl_identities() {
        let p = GaussianParams::new(0.5, 0.01f64.ln());
        assert_eq!(kl_gaussian(p, p).unwrap(), 0.0);
        assert_relative_eq!(
            kl_gaussian(g(0.0, 1.0), g(1.0, 1.0)).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            kl_gaussian(g(0.5, 0.1), g(0.6, 0.1)).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert!(kl_gaussian(GaussianParams::new(f64::NAN, 0.0), p).is_err());
    }

    #[test]
    fn kl_gradient_vanishes_at_equality() {
        let p = g(0.3, 0.2);
        let (kl, d_mu, d_lv) = kl_with_grad(p, p);
        assert!(kl.abs() < 1e-15 && d_mu.abs() < 1e-15 && d_lv.abs() < 1e-15);
    }

    #[test]
    fn entropy_properties() {
        assert_relative_eq!(
            gaussian_entropy(0.0f64),
            1.4189385332046727,
            epsilon = 1e-12
        );
        let base = gaussian_entropy((0.3f64 * 0.3).ln());
        let doubled = gaussian_entropy((0.6f64 * 0.6).ln());
        assert_relative_eq!(doubled - base, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn reward_examples() {
        let p = g(0.5, 0.1);
        assert_eq!(reward_value(p, 0.0), 0.5);
        assert_relative_eq!(reward_value(p, 0.4), 0.853_455, epsilon = 1e-5);
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let r = reward_value(g(0.5, 0.05 * k as f64), 0.4);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn pushback_target_examples() {
        let t: GaussianParams<f64> = pushback_target(0.8, 0.9, 0, 10).unwrap();
        assert_relative_eq!(t.mu, 0.72, epsilon = 1e-12);
        assert_relative_eq!(t.sigma(), 0.1, epsilon = 1e-12);
        assert_eq!(pushback_target(0.8f64, 1.0, 0, 10).unwrap().mu, 0.8);
        assert_eq!(pushback_target(0.8f64, 0.0, 0, 10).unwrap().mu, 0.0);
        assert!(pushback_target(0.8f64, 0.9, 4, 4).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        for bad in [
            RewardConfig {
                alpha: -0.1,
                ..Default::default()
            },
            RewardConfig {
                beta: 1.5,
                ..Default::default()
            },
            RewardConfig {
                eps_sigma: 0.0,
                ..Default::default()
            },
            RewardConfig {
                omega: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
