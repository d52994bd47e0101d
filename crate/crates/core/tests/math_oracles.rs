mod common;

use std::time::Instant;

use common::{entropy_by_quadrature, kl_by_quadrature, kl_entropy_worst_errors};
use progress_core::nn::GaussianParams;
use progress_core::reward::{gaussian_entropy, kl_gaussian, reward_value};
use proptest::prelude::*;

fn g(mu: f64, sigma: f64) -> GaussianParams<f64> {
    GaussianParams::from_sigma(mu, sigma)
}

#[test]
fn kl_and_entropy_match_quadrature_on_random_pairs() {
    let started = Instant::now();
    let (worst_kl, worst_entropy) = kl_entropy_worst_errors(1000, 2024);
    assert!(worst_kl < 1e-6, "worst KL error {worst_kl}");
    assert!(worst_entropy < 1e-6, "worst entropy error {worst_entropy}");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn kl_reference_values() {
    let one = kl_by_quadrature(0.0, 1.0, 1.0, 1.0);
    assert!((one - 0.5).abs() < 1e-9);
    assert!((kl_gaussian(g(0.0, 1.0), g(1.0, 1.0)).unwrap() - one).abs() < 1e-9);
    let narrow = kl_by_quadrature(0.5, 0.1, 0.6, 0.1);
    assert!((narrow - 0.5).abs() < 1e-9);
    assert!((kl_gaussian(g(0.5, 0.1), g(0.6, 0.1)).unwrap() - narrow).abs() < 1e-9);
    assert_eq!(kl_gaussian(g(0.5, 0.1), g(0.5, 0.1)).unwrap(), 0.0);
}

#[test]
fn entropy_reference_values() {
    let unit = entropy_by_quadrature(1.0);
    assert!((unit - 1.418_938_533_204_672_7).abs() < 1e-9);
    assert!((gaussian_entropy(0.0f64) - unit).abs() < 1e-9);
    let tenth = entropy_by_quadrature(0.1);
    assert!((gaussian_entropy(2.0 * 0.1f64.ln()) - tenth).abs() < 1e-9);
    // The reward of N(0.5, 0.1^2) with alpha 0.4 uses that entropy.
    let r = reward_value(g(0.5, 0.1), 0.4);
    assert!((r - (0.5 - 0.4 * tenth)).abs() < 1e-9);
    assert!((r - 0.85346).abs() < 1e-5);
}

#[test]
fn kl_rejects_non_finite_parameters() {
    assert!(kl_gaussian(GaussianParams::new(f64::NAN, 0.0), g(0.0, 1.0)).is_err());
    assert!(kl_gaussian(g(0.0, 1.0), GaussianParams::new(0.0, f64::INFINITY)).is_err());
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        mu_p in -3.0f64..3.0, mu_q in -3.0f64..3.0,
        lv_p in -6.0f64..2.0, lv_q in -6.0f64..2.0,
    ) {
        let kl = kl_gaussian(GaussianParams::new(mu_p, lv_p), GaussianParams::new(mu_q, lv_q)).unwrap();
        prop_assert!(kl >= -1e-12);
    }

    #[test]
    fn kl_vanishes_only_at_equality(mu in -3.0f64..3.0, lv in -6.0f64..2.0, dmu in 1e-3f64..1.0) {
        let p = GaussianParams::new(mu, lv);
        prop_assert!(kl_gaussian(p, p).unwrap().abs() <= 1e-9);
        prop_assert!(kl_gaussian(p, GaussianParams::new(mu + dmu, lv)).unwrap() > 1e-9);
        prop_assert!(kl_gaussian(p, GaussianParams::new(mu, lv + dmu)).unwrap() > 1e-9);
    }

    #[test]
    fn reward_increases_in_mu_and_decreases_in_sigma(
        mu in -1.0f64..1.0, sigma in 0.05f64..2.0, bump in 1e-3f64..0.5, alpha in 0.01f64..1.0,
    ) {
        let base = reward_value(g(mu, sigma), alpha);
        prop_assert!(reward_value(g(mu + bump, sigma), alpha) > base);
        prop_assert!(reward_value(g(mu, sigma + bump), alpha) < base);
    }
}
