mod common;

use voxelforge::nn::Architecture;
use voxelforge::ppo::compute_returns;

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for seed in [20, 21, 22, 23] {
        let c = common::check_loss_gradient(seed);
        assert_eq!(c.parameters, Architecture::new(4, 2, 8).parameter_count());
        assert!(c.clip_fraction > 0.0 && c.clip_fraction < 1.0);
        assert!(c.max_relative_error < 1e-4, "seed {seed}: max relative error {}", c.max_relative_error);
    }
}

#[test]
fn sparse_returns_are_discounted_terminal_rewards() {
    // Dyadic γ and r keep every product exact, so equality is exact.
    for gamma in [0.5, 0.75, 0.9375] {
        for t in 1..=5usize {
            let mut rewards = vec![0.0; t];
            rewards[t - 1] = 3.0;
            let r = compute_returns(&rewards, gamma).unwrap();
            for (i, &ri) in r.iter().enumerate() {
                let mut expect = 3.0;
                for _ in 0..(t - 1 - i) {
                    expect *= gamma;
                }
                assert_eq!(ri, expect, "gamma {gamma} T {t} step {i}");
            }
        }
    }
    assert!(compute_returns(&[0.0, 1.0, 2.0], 0.9).is_err());
}
