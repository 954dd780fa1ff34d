//! Raw compute kernels shared by the recording engine (f32) and the
//! finite-difference reference path (f64).
//!
//! Layout conventions: images are `[H, W, C]`, Hough maps are `[Nρ, Nθ, C]`,
//! 2D kernels are `[kh, kw, Cin, Cout]`, 1D kernels are `[k, C]` (channelwise)
//! or `[k, Cin, Cout]` (dense). All buffers flat row-major.

use num_traits::Float;

/// Channelwise: one filter per channel, Cin == Cout. Dense: full Cin→Cout mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conv1dMode {
    Channelwise,
    Dense,
}

/// 2D cross-correlation with zero padding, output spatially same-sized.
/// `bias` is one value per output channel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Float + std::ops::AddAssign>(
    input: &[T],
    h: usize,
    w: usize,
    cin: usize,
    kernel: &[T],
    kh: usize,
    kw: usize,
    cout: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    debug_assert_eq!(input.len(), h * w * cin);
    debug_assert_eq!(kernel.len(), kh * kw * cin * cout);
    debug_assert_eq!(out.len(), h * w * cout);
    let (oy, ox) = (kh / 2, kw / 2);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for y in 0..h {
        for ky in 0..kh {
            let iy = y + ky;
            if iy < oy || iy - oy >= h {
                continue;
            }
            let iy = iy - oy;
            for x in 0..w {
                let o_base = (y * w + x) * cout;
                for kx in 0..kw {
                    let ix = x + kx;
                    if ix < ox || ix - ox >= w {
                        continue;
                    }
                    let ix = ix - ox;
                    let i_base = (iy * w + ix) * cin;
                    let k_base = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let iv = input[i_base + ci];
                        let kk = &kernel[k_base + ci * cout..k_base + ci * cout + cout];
                        let oo = &mut out[o_base..o_base + cout];
                        for (o, k) in oo.iter_mut().zip(kk) {
                            *o += iv * *k;
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        debug_assert_eq!(b.len(), cout);
        for px in out.chunks_exact_mut(cout) {
            for (o, bv) in px.iter_mut().zip(b) {
                *o += *bv;
            }
        }
    }
}

/// 1D cross-correlation along the ρ axis of a `[Nρ, Nθ, C]` map, zero
/// padded; `bias` is one value per output channel.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_rho<T: Float + std::ops::AddAssign>(
    input: &[T],
    n_rho: usize,
    n_theta: usize,
    cin: usize,
    kernel: &[T],
    k: usize,
    cout: usize,
    mode: Conv1dMode,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    debug_assert_eq!(input.len(), n_rho * n_theta * cin);
    debug_assert_eq!(out.len(), n_rho * n_theta * cout);
    let off = k / 2;
    for v in out.iter_mut() {
        *v = T::zero();
    }
    match mode {
        Conv1dMode::Channelwise => {
            debug_assert_eq!(cin, cout);
            debug_assert_eq!(kernel.len(), k * cin);
            for r in 0..n_rho {
                for tap in 0..k {
                    let ir = r + tap;
                    if ir < off || ir - off >= n_rho {
                        continue;
                    }
                    let ir = ir - off;
                    let taps = &kernel[tap * cin..(tap + 1) * cin];
                    let src = &input[ir * n_theta * cin..(ir + 1) * n_theta * cin];
                    let dst = &mut out[r * n_theta * cin..(r + 1) * n_theta * cin];
                    for (d_px, s_px) in dst.chunks_exact_mut(cin).zip(src.chunks_exact(cin)) {
                        for ((d, s), t) in d_px.iter_mut().zip(s_px).zip(taps) {
                            *d += *s * *t;
                        }
                    }
                }
            }
        }
        Conv1dMode::Dense => {
            debug_assert_eq!(kernel.len(), k * cin * cout);
            for r in 0..n_rho {
                for tap in 0..k {
                    let ir = r + tap;
                    if ir < off || ir - off >= n_rho {
                        continue;
                    }
                    let ir = ir - off;
                    let k_base = tap * cin * cout;
                    for t in 0..n_theta {
                        let i_base = (ir * n_theta + t) * cin;
                        let o_base = (r * n_theta + t) * cout;
                        for ci in 0..cin {
                            let iv = input[i_base + ci];
                            let kk = &kernel[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let oo = &mut out[o_base..o_base + cout];
                            for (o, kv) in oo.iter_mut().zip(kk) {
                                *o += iv * *kv;
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        debug_assert_eq!(b.len(), cout);
        for px in out.chunks_exact_mut(cout) {
            for (o, bv) in px.iter_mut().zip(b) {
                *o += *bv;
            }
        }
    }
}

pub fn relu<T: Float>(input: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(input) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

pub fn sigmoid<T: Float>(input: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(input) {
        *o = T::one() / (T::one() + (-v).exp());
    }
}

pub fn mul<T: Float>(a: &[T], b: &[T], out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}

/// Concatenates two `[H, W, C]` buffers along the channel axis.
pub fn concat_channels<T: Copy>(a: &[T], ca: usize, b: &[T], cb: usize, out: &mut [T]) {
    let pixels = a.len() / ca;
    debug_assert_eq!(b.len() / cb, pixels);
    debug_assert_eq!(out.len(), pixels * (ca + cb));
    for ((o, ap), bp) in out
        .chunks_exact_mut(ca + cb)
        .zip(a.chunks_exact(ca))
        .zip(b.chunks_exact(cb))
    {
        o[..ca].copy_from_slice(ap);
        o[ca..].copy_from_slice(bp);
    }
}

/// Mean of elementwise squared differences.
pub fn l2_loss<T: Float + std::ops::AddAssign>(pred: &[T], target: &[T]) -> T {
    debug_assert_eq!(pred.len(), target.len());
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        acc += d * d;
    }
    acc / T::from(pred.len()).unwrap()
}

pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross entropy; probabilities clamped to `[BCE_EPS, 1-BCE_EPS]`.
pub fn bce_loss<T: Float + std::ops::AddAssign>(pred: &[T], target: &[T]) -> T {
    debug_assert_eq!(pred.len(), target.len());
    let eps = T::from(BCE_EPS).unwrap();
    let lo = eps;
    let hi = T::one() - eps;
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.max(lo).min(hi);
        acc += -(t * p.ln() + (T::one() - t) * (T::one() - p).ln());
    }
    acc / T::from(pred.len()).unwrap()
}

pub fn sum<T: Float + std::ops::AddAssign>(input: &[T]) -> T {
    let mut acc = T::zero();
    for &v in input {
        acc += v;
    }
    acc
}
