use std::borrow::Borrow;

use crate::env::StateTensor;
use crate::nn::{backward, entropy, forward_cached, log_prob, GradientTape, HeadGrad, PolicyParams, Scalar};
use crate::par;

use super::PpoConfig;

/// One row of a minibatch.
#[derive(Clone, Debug)]
pub struct LossSample<F> {
    pub state: StateTensor<F>,
    pub action: Vec<F>,
    /// `log π_old(a|s)` recorded at collection time.
    pub old_log_prob: F,
    pub advantage: F,
    pub ret: F,
}

/// Minibatch means of the loss terms and diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    /// Fraction of samples whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
    /// Mean of `log π_old − log π_new`.
    pub approx_kl: f64,
}

impl LossStats {
    pub fn is_finite(&self) -> bool {
        [self.policy_loss, self.value_loss, self.entropy, self.total].iter().all(|v| v.is_finite())
    }
}

/// Samples per parallel work unit. Partial gradients are summed in chunk
/// order, so the result does not depend on the number of workers.
const CHUNK: usize = 8;

/// Clipped-surrogate loss
/// `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A)) + c_v·mean((V − R)²) − c_e·mean(H)`
/// and its exact gradient.
pub fn loss_and_grad<F: Scalar, S: Borrow<LossSample<F>> + Sync>(
    params: &PolicyParams<F>,
    batch: &[S],
    cfg: &PpoConfig,
) -> (LossStats, GradientTape<F>) {
    let n = batch.len();
    let inv_n = F::lit(1.0 / n.max(1) as f64);
    let (eps, c_v, c_e) = (F::lit(cfg.clip), F::lit(cfg.vf_coef), F::lit(cfg.entropy_coef));
    let chunks = n.div_ceil(CHUNK);

    let partial = par::map_indexed(chunks, |c| {
        let mut tape = PolicyParams::zeros(params.arch);
        let mut sums = [0.0f64; 6];
        for s in &batch[c * CHUNK..((c + 1) * CHUNK).min(n)] {
            let s = s.borrow();
            let (out, cache) = forward_cached(params, &s.state);
            let lp = log_prob(&out, &s.action);
            let ratio = (lp - s.old_log_prob).exp();
            let a = s.advantage;
            let unclipped = ratio * a;
            let clipped = ratio.max(F::one() - eps).min(F::one() + eps) * a;
            let surr = unclipped.min(clipped);
            let ent = entropy(&out);
            let dv = out.value - s.ret;

            let d_lp = if unclipped <= clipped { -ratio * a * inv_n } else { F::zero() };
            let mut head = HeadGrad { d_mu: Vec::with_capacity(out.mu.len()), d_log_sigma: Vec::new(), d_value: F::zero() };
            for ((&m, &l), &x) in out.mu.iter().zip(&out.log_sigma).zip(&s.action) {
                let sigma = l.exp();
                let z = (x - m) / sigma;
                head.d_mu.push(d_lp * z / sigma);
                head.d_log_sigma.push(d_lp * (z * z - F::one()) - c_e * inv_n);
            }
            head.d_value = (F::one() + F::one()) * c_v * dv * inv_n;
            backward(params, &cache, &head, &mut tape);

            let f = |v: F| v.to_f64().unwrap_or(f64::NAN);
            sums[0] -= f(surr);
            sums[1] += f(dv * dv);
            sums[2] += f(ent);
            sums[3] += if ratio < F::one() - eps || ratio > F::one() + eps { 1.0 } else { 0.0 };
            sums[4] += f(s.old_log_prob - lp);
        }
        (tape, sums)
    });

    let mut tape = PolicyParams::zeros(params.arch);
    let mut sums = [0.0f64; 6];
    for (t, s) in &partial {
        tape.accumulate(t);
        for (a, b) in sums.iter_mut().zip(s) {
            *a += b;
        }
    }
    let nf = n.max(1) as f64;
    let (policy_loss, value_loss, ent) = (sums[0] / nf, sums[1] / nf, sums[2] / nf);
    let stats = LossStats {
        policy_loss,
        value_loss,
        entropy: ent,
        total: policy_loss + cfg.vf_coef * value_loss - cfg.entropy_coef * ent,
        clip_fraction: sums[3] / nf,
        approx_kl: sums[4] / nf,
    };
    (stats, tape)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, cfg: &PpoConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Descends along `grad`.
    pub fn step<F: Scalar>(&mut self, params: &mut PolicyParams<F>, grad: &GradientTape<F>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.values_mut().zip(grad.values()).zip(&mut self.m).zip(&mut self.v) {
            let g = g.to_f64().unwrap_or(f64::NAN);
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = F::lit(p.to_f64().unwrap_or(f64::NAN) - update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::state_tensor;
    use crate::grid::{MaterialId, VoxelGrid};
    use crate::nn::{forward, Architecture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_batch(params: &PolicyParams<f64>, n: usize) -> Vec<LossSample<f64>> {
        (0..n)
            .map(|i| {
                let mut g = VoxelGrid::new(4, 2);
                g.set([(i % 4) as i32, 1, 2], MaterialId(1)).unwrap();
                let state = state_tensor(&g);
                let out = forward(params, &state);
                let action: Vec<f64> = (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect();
                LossSample {
                    old_log_prob: log_prob(&out, &action),
                    state,
                    action,
                    advantage: if i % 2 == 0 { 1.0 } else { -0.5 },
                    ret: i as f64,
                }
            })
            .collect()
    }

    #[test]
    fn fresh_policy_has_unit_ratio() {
        let p = PolicyParams::<f64>::xavier(Architecture::new(4, 2, 8), &mut ChaCha8Rng::seed_from_u64(2));
        let batch = tiny_batch(&p, 6);
        let (stats, _) = loss_and_grad(&p, &batch, &PpoConfig::volume());
        let mean_adv = batch.iter().map(|s| s.advantage).sum::<f64>() / 6.0;
        assert!((stats.policy_loss + mean_adv).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(stats.approx_kl.abs() < 1e-12);
    }

    #[test]
    fn ratio_above_clip_is_capped() {
        let p = PolicyParams::<f64>::xavier(Architecture::new(4, 2, 8), &mut ChaCha8Rng::seed_from_u64(3));
        let mut batch = tiny_batch(&p, 1);
        batch[0].advantage = 2.0;
        batch[0].old_log_prob -= 1.0;
        let (stats, grad) = loss_and_grad(&p, &batch, &PpoConfig { vf_coef: 0.0, ..PpoConfig::volume() });
        assert!((stats.policy_loss + 1.3 * 2.0).abs() < 1e-12);
        assert!(grad.values().all(|&g| g == 0.0));
    }

    #[test]
    fn half_batches_sum_to_full_batch() {
        let p = PolicyParams::<f64>::xavier(Architecture::new(4, 2, 8), &mut ChaCha8Rng::seed_from_u64(4));
        let batch = tiny_batch(&p, 20);
        let cfg = PpoConfig::volume();
        let (_, full) = loss_and_grad(&p, &batch, &cfg);
        let (_, mut a) = loss_and_grad(&p, &batch[..10], &cfg);
        let (_, b) = loss_and_grad(&p, &batch[10..], &cfg);
        a.accumulate(&b);
        a.scale(0.5);
        for (x, y) in full.values().zip(a.values()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut p = PolicyParams::<f32>::xavier(Architecture::new(3, 2, 4), &mut ChaCha8Rng::seed_from_u64(5));
        let before = p.clone();
        let mut adam = Adam::new(p.len(), &PpoConfig::volume());
        let zero = PolicyParams::zeros(p.arch);
        adam.step(&mut p, &zero);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let arch = Architecture::new(2, 2, 2);
        let mut p = PolicyParams::<f64>::zeros(arch);
        let mut g = PolicyParams::<f64>::zeros(arch);
        g.values_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 3.0 } else { -0.5 });
        let mut adam = Adam::new(p.len(), &PpoConfig::volume());
        adam.step(&mut p, &g);
        for (i, v) in p.values().enumerate() {
            let expected = if i % 2 == 0 { -1e-4 } else { 1e-4 };
            assert!((v - expected).abs() < 1e-10);
        }
    }
}
