use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::{dense_backward, dense_forward, Conv};
use super::{idx, Architecture, GradientTape, PolicyParams, Scalar, Tensor, CONV1_KERNELS, CONV1_SIZE, CONV2_SIZE, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::env::{RawAction, StateTensor};

/// Gaussian policy head and value estimate for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<F> {
    pub mu: Vec<F>,
    /// Already clamped to `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub log_sigma: Vec<F>,
    pub value: F,
}

impl<F: Scalar> PolicyOutput<F> {
    pub fn sigma(&self) -> Vec<F> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.mu.iter().chain(&self.log_sigma).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, Default)]
struct MlpCache<F> {
    h1: Vec<F>,
    h2: Vec<F>,
    out: Vec<F>,
}

/// Activations kept from a forward pass for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    input_pad: Vec<F>,
    /// Post-ReLU first conv layer, channel-first.
    a1: Vec<F>,
    a1_pad: Vec<F>,
    h: Vec<F>,
    actor: MlpCache<F>,
    critic: MlpCache<F>,
}

impl<F> ForwardCache<F> {
    /// The flattened CNN features.
    pub fn features(&self) -> &[F] {
        &self.h
    }

    /// Post-ReLU output of the first conv layer, channel-first.
    pub fn first_layer(&self) -> &[F] {
        &self.a1
    }
}

/// Loss gradient with respect to the network outputs of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad<F> {
    pub d_mu: Vec<F>,
    /// With respect to the clamped `log σ`.
    pub d_log_sigma: Vec<F>,
    pub d_value: F,
}

fn convs(arch: &Architecture) -> (Conv, Conv) {
    let rho = arch.resolution;
    (
        Conv { rho, cin: arch.channels, cout: CONV1_KERNELS, size: CONV1_SIZE },
        Conv { rho, cin: CONV1_KERNELS, cout: 1, size: CONV2_SIZE },
    )
}

fn mlp_forward<F: Scalar>(t: &[Tensor<F>], base: usize, x: &[F], width: usize, out_dim: usize) -> MlpCache<F> {
    let mut h1 = vec![F::zero(); width];
    dense_forward(&t[base].data, &t[base + 1].data, x, &mut h1);
    h1.iter_mut().for_each(|v| *v = v.tanh());
    let mut h2 = vec![F::zero(); width];
    dense_forward(&t[base + 2].data, &t[base + 3].data, &h1, &mut h2);
    h2.iter_mut().for_each(|v| *v = v.tanh());
    let mut out = vec![F::zero(); out_dim];
    dense_forward(&t[base + 4].data, &t[base + 5].data, &h2, &mut out);
    MlpCache { h1, h2, out }
}

/// Splits out mutable weight and bias gradients of the layer at `i`.
fn wb<F>(t: &mut [Tensor<F>], i: usize) -> (&mut [F], &mut [F]) {
    let (a, b) = t.split_at_mut(i + 1);
    (&mut a[i].data, &mut b[0].data)
}

fn mlp_backward<F: Scalar>(
    p: &[Tensor<F>],
    g: &mut [Tensor<F>],
    base: usize,
    x: &[F],
    cache: &MlpCache<F>,
    g_out: &[F],
    dx: &mut [F],
) {
    let width = cache.h1.len();
    let mut d2 = vec![F::zero(); width];
    let (dw, db) = wb(g, base + 4);
    dense_backward(&p[base + 4].data, &cache.h2, g_out, dw, db, Some(&mut d2));
    for (d, h) in d2.iter_mut().zip(&cache.h2) {
        *d *= F::one() - *h * *h;
    }
    let mut d1 = vec![F::zero(); width];
    let (dw, db) = wb(g, base + 2);
    dense_backward(&p[base + 2].data, &cache.h1, &d2, dw, db, Some(&mut d1));
    for (d, h) in d1.iter_mut().zip(&cache.h1) {
        *d *= F::one() - *h * *h;
    }
    let (dw, db) = wb(g, base);
    dense_backward(&p[base].data, x, &d1, dw, db, Some(dx));
}

/// Forward pass, keeping the activations needed by [`backward`].
///
/// Panics if the state tensor does not match the architecture.
pub fn forward_cached<F: Scalar>(params: &PolicyParams<F>, s: &StateTensor<F>) -> (PolicyOutput<F>, ForwardCache<F>) {
    let arch = &params.arch;
    assert_eq!(
        (s.resolution, s.channels),
        (arch.resolution, arch.channels),
        "state tensor does not match the network input"
    );
    let t = &params.tensors;
    let (c1, c2) = convs(arch);
    let cells = arch.cells();

    let mut input_pad = vec![F::zero(); c1.padded_len()];
    c1.pad_channel_last(&s.data, &mut input_pad);
    let mut strided = vec![F::zero(); c1.strided_len()];
    c1.forward(&input_pad, &t[idx::CONV1_W].data, &t[idx::CONV1_B].data, &mut strided);
    let mut a1 = vec![F::zero(); cells * CONV1_KERNELS];
    c1.gather(&strided, &mut a1);
    a1.iter_mut().for_each(|v| *v = v.max(F::zero()));
    let mut a1_pad = vec![F::zero(); c2.padded_len()];
    c2.pad_channel_first(&a1, &mut a1_pad);
    let mut strided = vec![F::zero(); c2.strided_len()];
    c2.forward(&a1_pad, &t[idx::CONV2_W].data, &t[idx::CONV2_B].data, &mut strided);
    let mut h = vec![F::zero(); cells];
    c2.gather(&strided, &mut h);
    h.iter_mut().for_each(|v| *v = v.max(F::zero()));

    let a = arch.action_dim;
    let actor = mlp_forward(t, idx::ACTOR, &h, arch.hidden, 2 * a);
    let critic = mlp_forward(t, idx::CRITIC, &h, arch.hidden, 1);
    let (lo, hi) = (F::lit(LOG_SIGMA_MIN), F::lit(LOG_SIGMA_MAX));
    let out = PolicyOutput {
        mu: actor.out[..a].to_vec(),
        log_sigma: actor.out[a..].iter().map(|v| v.max(lo).min(hi)).collect(),
        value: critic.out[0],
    };
    (out, ForwardCache { input_pad, a1, a1_pad, h, actor, critic })
}

pub fn forward<F: Scalar>(params: &PolicyParams<F>, s: &StateTensor<F>) -> PolicyOutput<F> {
    forward_cached(params, s).0
}

/// Accumulates into `tape` the parameter gradient of a loss whose gradient
/// with respect to this sample's outputs is `head`.
pub fn backward<F: Scalar>(params: &PolicyParams<F>, cache: &ForwardCache<F>, head: &HeadGrad<F>, tape: &mut GradientTape<F>) {
    let arch = &params.arch;
    debug_assert_eq!(*arch, tape.arch);
    let p = &params.tensors;
    let g = &mut tape.tensors;
    let a = arch.action_dim;
    let (lo, hi) = (F::lit(LOG_SIGMA_MIN), F::lit(LOG_SIGMA_MAX));

    let mut g_actor = head.d_mu.clone();
    g_actor.extend(head.d_log_sigma.iter().zip(&cache.actor.out[a..]).map(|(&d, &raw)| {
        if raw < lo || raw > hi {
            F::zero()
        } else {
            d
        }
    }));
    let mut dh = vec![F::zero(); cache.h.len()];
    mlp_backward(p, g, idx::ACTOR, &cache.h, &cache.actor, &g_actor, &mut dh);
    mlp_backward(p, g, idx::CRITIC, &cache.h, &cache.critic, &[head.d_value], &mut dh);
    for (d, h) in dh.iter_mut().zip(&cache.h) {
        if *h <= F::zero() {
            *d = F::zero();
        }
    }

    let (c1, c2) = convs(arch);
    let mut g2 = vec![F::zero(); c2.strided_len()];
    c2.scatter(&dh, &mut g2);
    let mut da1_pad = vec![F::zero(); c2.padded_len()];
    let (dw, db) = wb(g, idx::CONV2_W);
    c2.backward(&cache.a1_pad, &p[idx::CONV2_W].data, &g2, dw, db, Some(&mut da1_pad));
    let mut da1 = vec![F::zero(); cache.a1.len()];
    c2.unpad_channel_first(&da1_pad, &mut da1);
    for (d, v) in da1.iter_mut().zip(&cache.a1) {
        if *v <= F::zero() {
            *d = F::zero();
        }
    }
    let mut g1 = vec![F::zero(); c1.strided_len()];
    c1.scatter(&da1, &mut g1);
    let (dw, db) = wb(g, idx::CONV1_W);
    c1.backward(&cache.input_pad, &p[idx::CONV1_W].data, &g1, dw, db, None);
}

/// Draws `a = μ + σ·z` with independent standard-normal `z`.
pub fn sample<F: Scalar, R: Rng + ?Sized>(out: &PolicyOutput<F>, rng: &mut R) -> RawAction {
    RawAction(
        out.mu
            .iter()
            .zip(&out.log_sigma)
            .map(|(m, l)| {
                let z: f64 = rng.sample(StandardNormal);
                (m.to_f64().unwrap() + l.to_f64().unwrap().exp() * z) as f32
            })
            .collect(),
    )
}

/// Log-density of the diagonal Gaussian at `a`.
pub fn log_prob<F: Scalar>(out: &PolicyOutput<F>, a: &[F]) -> F {
    let half_ln_2pi = F::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let half = F::lit(0.5);
    out.mu
        .iter()
        .zip(&out.log_sigma)
        .zip(a)
        .map(|((&m, &l), &x)| {
            let z = (x - m) / l.exp();
            -half_ln_2pi - l - half * z * z
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn entropy<F: Scalar>(out: &PolicyOutput<F>) -> F {
    let c = F::lit(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
    out.log_sigma.iter().map(|&l| c + l).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::state_tensor;
    use crate::grid::{MaterialId, VoxelGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let arch = Architecture::new(4, 2, 8);
        let p = PolicyParams::<f64>::zeros(arch);
        let mut g = VoxelGrid::new(4, 2);
        g.set([1, 1, 1], MaterialId(1)).unwrap();
        let out = forward(&p, &state_tensor(&g));
        assert!(out.mu.iter().chain(&out.log_sigma).all(|&v| v == 0.0));
        assert_eq!(out.value, 0.0);
        assert_eq!((out.mu.len(), out.log_sigma.len()), (5, 5));
    }

    #[test]
    fn standard_normal_log_density() {
        let out = PolicyOutput { mu: vec![0.0f64; 7], log_sigma: vec![0.0; 7], value: 0.0 };
        assert!((log_prob(&out, &[0.0; 7]) - (-6.432569732)).abs() < 1e-8);
        assert!((entropy(&out) - 7.0 * 1.4189385332046727).abs() < 1e-12);
    }

    #[test]
    fn collapsed_sigma_samples_the_mean() {
        let out = PolicyOutput { mu: vec![0.3f32, -1.2, 2.0], log_sigma: vec![-10.0; 3], value: 0.0 };
        let a = sample(&out, &mut ChaCha8Rng::seed_from_u64(4));
        for (x, m) in a.0.iter().zip(&out.mu) {
            assert!((x - m).abs() < 1e-4);
        }
    }

    #[test]
    fn log_sigma_is_clamped() {
        let arch = Architecture::new(2, 2, 2);
        let mut p = PolicyParams::<f64>::zeros(arch);
        let ao_b = &mut p.tensors[idx::ACTOR + 5].data;
        ao_b[5] = 50.0;
        ao_b[6] = -50.0;
        let out = forward(&p, &state_tensor(&VoxelGrid::new(2, 2)));
        assert_eq!(out.log_sigma[0], LOG_SIGMA_MAX);
        assert_eq!(out.log_sigma[1], LOG_SIGMA_MIN);
    }
}
