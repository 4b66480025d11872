//! Dense and same-padded 3D convolution kernels, forward and backward.
//!
//! Volumes are channel-last: element `(x, y, z, c)` of an edge-`n` volume
//! with `ch` channels lives at `((x·n + y)·n + z)·ch + c`. Convolution
//! inputs are stored zero-padded so the inner loops need no bounds checks.

use super::Scalar;

/// Runs a kernel body compiled with AVX when the CPU has it. FMA stays off,
/// so both paths perform the same roundings and give identical results.
macro_rules! dispatch {
    ($body:expr) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx")]
            unsafe fn wide<R>(f: impl FnOnce() -> R) -> R {
                f()
            }
            if std::arch::is_x86_feature_detected!("avx") {
                // SAFETY: the feature was detected at runtime.
                return unsafe { wide(|| $body) };
            }
        }
        $body
    }};
}

/// Eight independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results stay deterministic.
#[inline(always)]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `dst[i] += Σ_t w[t] · src[i + t]` for one row of `K` taps.
#[inline(always)]
fn taps_axpy<F: Scalar, const K: usize>(w: &[F], src: &[F], dst: &mut [F]) {
    let w: [F; K] = std::array::from_fn(|t| w[t]);
    let src = &src[..dst.len() + K - 1];
    for (i, d) in dst.iter_mut().enumerate() {
        let mut acc = *d;
        for t in 0..K {
            acc += w[t] * src[i + t];
        }
        *d = acc;
    }
}

/// Geometry of a same-padded convolution over an edge-`rho` volume.
///
/// Inputs are channel-first and zero-padded: `[c][P][P][P]` with
/// `P = rho + 2·pad`. Outputs are written in a strided layout
/// `[o][x][P][P]` whose `(y, z)` planes share the input row pitch, so one
/// weight tap updates a whole plane with a single contiguous `axpy`. Slots
/// with `y` or `z` past `rho` are scratch and must be ignored (forward) or
/// zero (backward).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub rho: usize,
    pub cin: usize,
    pub cout: usize,
    pub size: usize,
}

impl Conv {
    pub fn pad(&self) -> usize {
        self.size / 2
    }

    /// Edge of the zero-padded input volume.
    pub fn padded(&self) -> usize {
        self.rho + 2 * self.pad()
    }

    pub fn padded_len(&self) -> usize {
        self.padded().pow(3) * self.cin
    }

    pub fn strided_len(&self) -> usize {
        self.cout * self.rho * self.padded().pow(2)
    }

    /// Length of the plane range touched per output `x`.
    fn span(&self) -> usize {
        (self.rho - 1) * self.padded() + self.rho
    }

    #[inline]
    fn padded_index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        let p = self.padded();
        ((c * p + x) * p + y) * p + z
    }

    /// Fills the padded input from a channel-last `[cell][c]` volume.
    pub fn pad_channel_last<F: Scalar>(&self, src: &[F], dst: &mut [F]) {
        let (n, ci, o) = (self.rho, self.cin, self.pad());
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let cell = (x * n + y) * n + z;
                    for c in 0..ci {
                        dst[self.padded_index(c, x + o, y + o, z + o)] = src[cell * ci + c];
                    }
                }
            }
        }
    }

    /// Fills the padded input from a channel-first `[c][cell]` volume.
    pub fn pad_channel_first<F: Scalar>(&self, src: &[F], dst: &mut [F]) {
        let (n, o) = (self.rho, self.pad());
        for c in 0..self.cin {
            for x in 0..n {
                for y in 0..n {
                    let s = ((c * n + x) * n + y) * n;
                    let d = self.padded_index(c, x + o, y + o, o);
                    dst[d..d + n].copy_from_slice(&src[s..s + n]);
                }
            }
        }
    }

    /// Inverse of [`Conv::pad_channel_first`].
    pub fn unpad_channel_first<F: Scalar>(&self, src: &[F], dst: &mut [F]) {
        let (n, o) = (self.rho, self.pad());
        for c in 0..self.cin {
            for x in 0..n {
                for y in 0..n {
                    let d = ((c * n + x) * n + y) * n;
                    let s = self.padded_index(c, x + o, y + o, o);
                    dst[d..d + n].copy_from_slice(&src[s..s + n]);
                }
            }
        }
    }

    /// Copies the valid part of a strided output into `[o][cell]` order.
    pub fn gather<F: Scalar>(&self, strided: &[F], dst: &mut [F]) {
        let (n, p) = (self.rho, self.padded());
        for o in 0..self.cout {
            for x in 0..n {
                for y in 0..n {
                    let s = ((o * n + x) * p + y) * p;
                    let d = ((o * n + x) * n + y) * n;
                    dst[d..d + n].copy_from_slice(&strided[s..s + n]);
                }
            }
        }
    }

    /// Inverse of [`Conv::gather`]; scratch slots are left untouched.
    pub fn scatter<F: Scalar>(&self, src: &[F], strided: &mut [F]) {
        let (n, p) = (self.rho, self.padded());
        for o in 0..self.cout {
            for x in 0..n {
                for y in 0..n {
                    let d = ((o * n + x) * p + y) * p;
                    let s = ((o * n + x) * n + y) * n;
                    strided[d..d + n].copy_from_slice(&src[s..s + n]);
                }
            }
        }
    }

    #[inline]
    fn weight_index(&self, o: usize, dx: usize, dy: usize, dz: usize, c: usize) -> usize {
        let k = self.size;
        (((o * k + dx) * k + dy) * k + dz) * self.cin + c
    }

    /// `out[o, x, y, z] = b[o] + Σ w[o, dx, dy, dz, c] · in[c, x + dx, y + dy, z + dz]`
    /// (padded input coordinates), into the strided layout.
    pub fn forward<F: Scalar>(&self, input: &[F], w: &[F], b: &[F], out: &mut [F]) {
        dispatch!(self.forward_impl(input, w, b, out))
    }

    #[inline(always)]
    fn forward_impl<F: Scalar>(&self, input: &[F], w: &[F], b: &[F], out: &mut [F]) {
        let (n, p, k) = (self.rho, self.padded(), self.size);
        let (plane, span) = (p * p, self.span());
        for o in 0..self.cout {
            for x in 0..n {
                let dst = &mut out[(o * n + x) * plane..][..span];
                dst.iter_mut().for_each(|v| *v = b[o]);
                let mut w_row = vec![F::zero(); k];
                for c in 0..self.cin {
                    for dx in 0..k {
                        for dy in 0..k {
                            for (dz, wv) in w_row.iter_mut().enumerate() {
                                *wv = w[self.weight_index(o, dx, dy, dz, c)];
                            }
                            let src = &input[self.padded_index(c, x + dx, dy, 0)..];
                            match k {
                                3 => taps_axpy::<F, 3>(&w_row, src, dst),
                                5 => taps_axpy::<F, 5>(&w_row, src, dst),
                                _ => {
                                    for (dz, &wv) in w_row.iter().enumerate() {
                                        axpy(wv, &src[dz..dz + span], dst);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates weight and bias gradients for the strided output gradient
    /// `g` (scratch slots zero), and the padded input gradient if requested.
    pub fn backward<F: Scalar>(
        &self,
        input: &[F],
        w: &[F],
        g: &[F],
        dw: &mut [F],
        db: &mut [F],
        d_input: Option<&mut [F]>,
    ) {
        dispatch!(self.backward_impl(input, w, g, dw, db, d_input))
    }

    #[inline(always)]
    fn backward_impl<F: Scalar>(
        &self,
        input: &[F],
        w: &[F],
        g: &[F],
        dw: &mut [F],
        db: &mut [F],
        mut d_input: Option<&mut [F]>,
    ) {
        let (n, p, k) = (self.rho, self.padded(), self.size);
        let (plane, span) = (p * p, self.span());
        for o in 0..self.cout {
            for x in 0..n {
                let gp = &g[(o * n + x) * plane..][..span];
                db[o] += gp.iter().copied().sum::<F>();
                // The input gradient of one tap row is a correlation of `gp`
                // with the reversed taps; pad `gp` so every output has k terms.
                let mut g_pad = vec![F::zero(); span + 2 * (k - 1)];
                g_pad[k - 1..k - 1 + span].copy_from_slice(gp);
                let mut w_rev = vec![F::zero(); k];
                let mut dw_row = vec![F::zero(); k];
                for c in 0..self.cin {
                    for dx in 0..k {
                        for dy in 0..k {
                            let at = self.padded_index(c, x + dx, dy, 0);
                            dw_row.iter_mut().for_each(|v| *v = F::zero());
                            for (dz, v) in dw_row.iter_mut().enumerate() {
                                *v += dot(gp, &input[at + dz..at + dz + span]);
                            }
                            for (dz, v) in dw_row.iter().enumerate() {
                                dw[self.weight_index(o, dx, dy, dz, c)] += *v;
                            }
                            if let Some(di) = d_input.as_deref_mut() {
                                for (s, wv) in w_rev.iter_mut().enumerate() {
                                    *wv = w[self.weight_index(o, dx, dy, k - 1 - s, c)];
                                }
                                let dst = &mut di[at..at + span + k - 1];
                                match k {
                                    3 => taps_axpy::<F, 3>(&w_rev, &g_pad, dst),
                                    5 => taps_axpy::<F, 5>(&w_rev, &g_pad, dst),
                                    _ => {
                                        for dz in 0..k {
                                            let wv = w[self.weight_index(o, dx, dy, dz, c)];
                                            axpy(wv, gp, &mut dst[dz..dz + span]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` of shape `[out, in]`.
pub(crate) fn dense_forward<F: Scalar>(w: &[F], b: &[F], x: &[F], y: &mut [F]) {
    dispatch!(dense_forward_impl(w, b, x, y))
}

#[inline(always)]
fn dense_forward_impl<F: Scalar>(w: &[F], b: &[F], x: &[F], y: &mut [F]) {
    let n = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * n..(o + 1) * n], x);
    }
}

/// Accumulates `dW += g xᵀ`, `db += g` and, if requested, `dx += Wᵀ g`.
pub(crate) fn dense_backward<F: Scalar>(
    w: &[F],
    x: &[F],
    g: &[F],
    dw: &mut [F],
    db: &mut [F],
    dx: Option<&mut [F]>,
) {
    dispatch!(dense_backward_impl(w, x, g, dw, db, dx))
}

#[inline(always)]
fn dense_backward_impl<F: Scalar>(
    w: &[F],
    x: &[F],
    g: &[F],
    dw: &mut [F],
    db: &mut [F],
    dx: Option<&mut [F]>,
) {
    let n = x.len();
    for (o, &go) in g.iter().enumerate() {
        db[o] += go;
        axpy(go, x, &mut dw[o * n..(o + 1) * n]);
    }
    if let Some(dx) = dx {
        for (o, &go) in g.iter().enumerate() {
            axpy(go, &w[o * n..(o + 1) * n], dx);
        }
    }
}
