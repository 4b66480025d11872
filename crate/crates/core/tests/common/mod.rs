//! Finite-difference oracle for the PPO loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxelforge::env::state_tensor;
use voxelforge::grid::{MaterialId, VoxelGrid};
use voxelforge::nn::{forward, forward_cached, log_prob, Architecture, PolicyParams};
use voxelforge::ppo::{loss_and_grad, LossSample, PpoConfig};

pub struct GradCheck {
    pub parameters: usize,
    pub clip_fraction: f64,
    pub max_relative_error: f64,
}

/// Which piece of the piecewise-smooth loss the parameters sit on: every
/// ReLU sign and every sample's clip branch.
fn regime(params: &PolicyParams<f64>, samples: &[LossSample<f64>], clip: f64) -> Vec<bool> {
    let mut bits = Vec::new();
    for s in samples {
        let (out, cache) = forward_cached(params, &s.state);
        bits.extend(cache.first_layer().iter().map(|&v| v > 0.0));
        bits.extend(cache.features().iter().map(|&v| v > 0.0));
        let ratio = (log_prob(&out, &s.action) - s.old_log_prob).exp();
        bits.push(ratio * s.advantage <= ratio.clamp(1.0 - clip, 1.0 + clip) * s.advantage);
        bits.extend(out.log_sigma.iter().map(|&l| l > -10.0 && l < 2.0));
    }
    bits
}

/// Full-loss gradient on a ρ = 4, width-8 network against a five-point
/// stencil. The step is the largest of 1e-4 … 1e-7 whose stencil stays on one
/// smooth piece; relative error uses `max(|analytic|, |numeric|, 1e-6)`.
pub fn check_loss_gradient(seed: u64) -> GradCheck {
    let cfg = PpoConfig { vf_coef: 0.5, entropy_coef: 0.05, ..PpoConfig::volume() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::<f64>::xavier(Architecture::new(4, 2, 8), &mut rng);
    // Larger head weights than the default init so every path carries signal.
    for v in params.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let samples: Vec<LossSample<f64>> = (0..9)
        .map(|i| {
            let mut g = VoxelGrid::new(4, 2);
            for c in 0..g.len() {
                if rng.gen_bool(0.4) {
                    g.set(g.coords(c), MaterialId(1)).unwrap();
                }
            }
            let state = state_tensor(&g);
            let action: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let out = forward(&params, &state);
            // A third of the samples start far outside the clip band.
            let shift = if i % 3 == 0 { rng.gen_range(0.6..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 } } else { rng.gen_range(-0.1..0.1) };
            LossSample {
                old_log_prob: log_prob(&out, &action) + shift,
                advantage: rng.gen_range(-2.0..2.0),
                ret: rng.gen_range(-1.0..3.0),
                action,
                state,
            }
        })
        .collect();

    let (stats, grad) = loss_and_grad(&params, &samples, &cfg);
    let analytic: Vec<f64> = grad.values().copied().collect();
    let base_regime = regime(&params, &samples, cfg.clip);
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let base = *params.values().nth(i).unwrap();
        let mut loss_at = |x: f64| {
            *params.values_mut().nth(i).unwrap() = base + x;
            let l = loss_and_grad(&params, &samples, &cfg).0.total;
            let r = regime(&params, &samples, cfg.clip);
            *params.values_mut().nth(i).unwrap() = base;
            (l, r)
        };
        let mut fd = None;
        for h in [1e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7, 1e-7] {
            let pts: Vec<(f64, Vec<bool>)> = [-2.0, -1.0, 1.0, 2.0].iter().map(|k| loss_at(k * h)).collect();
            if pts.iter().all(|(_, r)| *r == base_regime) {
                fd = Some((pts[0].0 - 8.0 * pts[1].0 + 8.0 * pts[2].0 - pts[3].0) / (12.0 * h));
                break;
            }
        }
        let fd = fd.expect("a ReLU or clip boundary within 2e-7 of the base point");
        worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
    }
    GradCheck { parameters: analytic.len(), clip_fraction: stats.clip_fraction, max_relative_error: worst }
}
