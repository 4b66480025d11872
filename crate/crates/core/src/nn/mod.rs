//! Actor-critic network.
//!
//! A shared 3D CNN base (`3³×4` then `5³×1`, stride 1, same padding, ReLU)
//! flattens to `h` of length `ρ³`. Two MLPs with tanh hidden layers read `h`:
//! the actor emits `μ` and `log σ` for every action dimension, the critic a
//! scalar value. Everything is generic over [`Scalar`] so gradients can be
//! checked in `f64` while training runs in `f32`.

mod checkpoint;
mod layers;
mod policy;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use policy::{backward, entropy, forward, forward_cached, log_prob, sample, ForwardCache, HeadGrad, PolicyOutput};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use rand::Rng;

pub trait Scalar: Float + AddAssign + MulAssign + Sum + Debug + Default + Send + Sync + 'static {
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Layer sizes. Fixed at construction; every tensor shape derives from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub resolution: usize,
    /// Input channels, one per material.
    pub channels: usize,
    pub action_dim: usize,
    /// Width of both hidden layers of each MLP.
    pub hidden: usize,
}

pub const CONV1_KERNELS: usize = 4;
pub const CONV1_SIZE: usize = 3;
pub const CONV2_SIZE: usize = 5;

/// Tensor names in storage order.
pub const PARAM_NAMES: [&str; 16] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "actor.fc1.weight",
    "actor.fc1.bias",
    "actor.fc2.weight",
    "actor.fc2.bias",
    "actor.out.weight",
    "actor.out.bias",
    "critic.fc1.weight",
    "critic.fc1.bias",
    "critic.fc2.weight",
    "critic.fc2.bias",
    "critic.out.weight",
    "critic.out.bias",
];

pub(crate) mod idx {
    pub const CONV1_W: usize = 0;
    pub const CONV1_B: usize = 1;
    pub const CONV2_W: usize = 2;
    pub const CONV2_B: usize = 3;
    /// Offset of the actor MLP; the critic starts at `CRITIC`.
    pub const ACTOR: usize = 4;
    pub const CRITIC: usize = 10;
}

impl Architecture {
    /// `channels` materials, actions of `3 + channels` dimensions.
    pub fn new(resolution: usize, channels: usize, hidden: usize) -> Self {
        assert!(resolution > 0 && channels > 0 && hidden > 0);
        Self { resolution, channels, action_dim: 3 + channels, hidden }
    }

    pub fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn shapes(&self) -> [Vec<usize>; 16] {
        let (k, w, h, a) = (self.channels, self.hidden, self.cells(), self.action_dim);
        let (s1, s2) = (CONV1_SIZE, CONV2_SIZE);
        [
            vec![CONV1_KERNELS, s1, s1, s1, k],
            vec![CONV1_KERNELS],
            vec![1, s2, s2, s2, CONV1_KERNELS],
            vec![1],
            vec![w, h],
            vec![w],
            vec![w, w],
            vec![w],
            vec![2 * a, w],
            vec![2 * a],
            vec![w, h],
            vec![w],
            vec![w, w],
            vec![w],
            vec![1, w],
            vec![1],
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![F::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Network parameters, one tensor per entry of [`PARAM_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<F> {
    pub arch: Architecture,
    pub tensors: Vec<Tensor<F>>,
}

/// Parameter gradients, shaped exactly like [`PolicyParams`].
pub type GradientTape<F> = PolicyParams<F>;

impl<F: Scalar> PolicyParams<F> {
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, tensors: arch.shapes().into_iter().map(Tensor::zeros).collect() }
    }

    /// Xavier-uniform weights and zero biases. The two output layers are
    /// scaled by 0.01 so the untrained policy starts near `N(0, 1)`.
    pub fn xavier<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if t.shape.len() < 2 {
                continue;
            }
            let (fan_in, fan_out) = if t.shape.len() == 5 {
                let receptive: usize = t.shape[1..4].iter().product();
                (receptive * t.shape[4], receptive * t.shape[0])
            } else {
                (t.shape[1], t.shape[0])
            };
            let gain = if PARAM_NAMES[i].contains(".out.") { 0.01 } else { 1.0 };
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut t.data {
                *v = F::lit(rng.gen_range(-bound..bound));
            }
        }
        p
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    /// `self += other`, element-wise.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.arch, other.arch);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flat iteration over every scalar in storage order.
    pub fn values(&self) -> impl Iterator<Item = &F> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        PolicyParams {
            arch: self.arch,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| G::lit(v.to_f64().expect("float"))).collect(),
                })
                .collect(),
        }
    }
}
