//! Forward and backward kernels on NCHW buffers.
//!
//! Each backward takes the upstream gradient and whatever the forward cached, and
//! returns (or accumulates) gradients for the inputs and parameters.

use super::tensor::Real;

/// NCHW dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }
}

/// Output index range `[lo, hi)` along one axis for kernel offset `off`.
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Per-channel `k × k` correlation with zero padding `k/2` (same output size).
pub fn depthwise_forward<T: Real>(x: &[T], d: Dims, kernel: &[T], k: usize) -> Vec<T> {
    let (h, w) = (d.height, d.width);
    let pad = (k / 2) as isize;
    let mut y = vec![T::zero(); d.len()];
    for bc in 0..d.batch * d.channels {
        let c = bc % d.channels;
        let xp = &x[bc * d.plane()..(bc + 1) * d.plane()];
        let yp = &mut y[bc * d.plane()..(bc + 1) * d.plane()];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (oy0, oy1) = valid_range(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (ox0, ox1) = valid_range(w, dx);
                let wv = kernel[(c * k + ky) * k + kx];
                for oy in oy0..oy1 {
                    let iy = (oy as isize + dy) as usize;
                    let src = &xp[iy * w + (ox0 as isize + dx) as usize..iy * w + (ox1 as isize + dx) as usize];
                    let dst = &mut yp[oy * w + ox0..oy * w + ox1];
                    for (o, &i) in dst.iter_mut().zip(src) {
                        *o += wv * i;
                    }
                }
            }
        }
    }
    y
}

/// Returns `dx` and accumulates into `dkernel`.
pub fn depthwise_backward<T: Real>(x: &[T], d: Dims, kernel: &[T], k: usize, dy: &[T], dkernel: &mut [T]) -> Vec<T> {
    let (h, w) = (d.height, d.width);
    let pad = (k / 2) as isize;
    let mut dx = vec![T::zero(); d.len()];
    for bc in 0..d.batch * d.channels {
        let c = bc % d.channels;
        let xp = &x[bc * d.plane()..(bc + 1) * d.plane()];
        let gp = &dy[bc * d.plane()..(bc + 1) * d.plane()];
        let dxp = &mut dx[bc * d.plane()..(bc + 1) * d.plane()];
        for ky in 0..k {
            let oy_off = ky as isize - pad;
            let (oy0, oy1) = valid_range(h, oy_off);
            for kx in 0..k {
                let ox_off = kx as isize - pad;
                let (ox0, ox1) = valid_range(w, ox_off);
                let widx = (c * k + ky) * k + kx;
                let wv = kernel[widx];
                let mut acc = T::zero();
                for oy in oy0..oy1 {
                    let iy = (oy as isize + oy_off) as usize;
                    let i0 = iy * w + (ox0 as isize + ox_off) as usize;
                    let i1 = iy * w + (ox1 as isize + ox_off) as usize;
                    let g = &gp[oy * w + ox0..oy * w + ox1];
                    for ((dxv, &xv), &gv) in dxp[i0..i1].iter_mut().zip(&xp[i0..i1]).zip(g) {
                        *dxv += wv * gv;
                        acc += gv * xv;
                    }
                }
                dkernel[widx] += acc;
            }
        }
    }
    dx
}

/// `y[b, o] = bias[o] + Σ_i weight[o, i] · x[b, i]` over every spatial position.
pub fn pointwise_forward<T: Real>(x: &[T], d: Dims, weight: &[T], bias: &[T], c_out: usize) -> Vec<T> {
    let s = d.plane();
    let c_in = d.channels;
    let mut y = vec![T::zero(); d.batch * c_out * s];
    for b in 0..d.batch {
        for o in 0..c_out {
            let dst = &mut y[(b * c_out + o) * s..(b * c_out + o + 1) * s];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..c_in {
                let wv = weight[o * c_in + i];
                let src = &x[(b * c_in + i) * s..(b * c_in + i + 1) * s];
                for (v, &xv) in dst.iter_mut().zip(src) {
                    *v += wv * xv;
                }
            }
        }
    }
    y
}

/// Returns `dx`; accumulates into `dweight` and `dbias`.
pub fn pointwise_backward<T: Real>(
    x: &[T],
    d: Dims,
    weight: &[T],
    c_out: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let s = d.plane();
    let c_in = d.channels;
    let mut dx = vec![T::zero(); d.len()];
    for b in 0..d.batch {
        for o in 0..c_out {
            let g = &dy[(b * c_out + o) * s..(b * c_out + o + 1) * s];
            dbias[o] += g.iter().copied().sum();
            for i in 0..c_in {
                let xi = &x[(b * c_in + i) * s..(b * c_in + i + 1) * s];
                let mut acc = T::zero();
                for (&gv, &xv) in g.iter().zip(xi) {
                    acc += gv * xv;
                }
                dweight[o * c_in + i] += acc;
                let wv = weight[o * c_in + i];
                let dxi = &mut dx[(b * c_in + i) * s..(b * c_in + i + 1) * s];
                for (dv, &gv) in dxi.iter_mut().zip(g) {
                    *dv += wv * gv;
                }
            }
        }
    }
    dx
}

/// Saved state of a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased variance per channel.
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normalizes each channel over batch and spatial positions.
pub fn batch_norm_train<T: Real>(x: &[T], d: Dims, gain: &[T], bias: &[T]) -> (Vec<T>, BatchNormCache<T>) {
    let s = d.plane();
    let c = d.channels;
    let count = d.batch * s;
    let n = T::from_usize(count).expect("count");
    let eps = T::lit(BN_EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for b in 0..d.batch {
            sum += x[(b * c + ch) * s..(b * c + ch + 1) * s].iter().copied().sum();
        }
        let m = sum / n;
        let mut sq = T::zero();
        for b in 0..d.batch {
            for &v in &x[(b * c + ch) * s..(b * c + ch + 1) * s] {
                sq += (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / n;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); d.len()];
    let mut y = vec![T::zero(); d.len()];
    for b in 0..d.batch {
        for ch in 0..c {
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            for ((h, o), &v) in xhat[range.clone()].iter_mut().zip(&mut y[range.clone()]).zip(&x[range]) {
                *h = (v - mean[ch]) * inv_std[ch];
                *o = gain[ch] * *h + bias[ch];
            }
        }
    }
    let unbiased = if count > 1 {
        let scale = n / (n - T::one());
        var.iter().map(|&v| v * scale).collect()
    } else {
        var.clone()
    };
    (
        y,
        BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
        },
    )
}

pub fn batch_norm_eval<T: Real>(x: &[T], d: Dims, gain: &[T], bias: &[T], running_mean: &[T], running_var: &[T]) -> Vec<T> {
    let s = d.plane();
    let c = d.channels;
    let eps = T::lit(BN_EPS);
    let mut y = vec![T::zero(); d.len()];
    for b in 0..d.batch {
        for ch in 0..c {
            let inv = T::one() / (running_var[ch] + eps).sqrt();
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            for (o, &v) in y[range.clone()].iter_mut().zip(&x[range]) {
                *o = gain[ch] * (v - running_mean[ch]) * inv + bias[ch];
            }
        }
    }
    y
}

/// Returns `dx`; accumulates into `dgain` and `dbias`.
pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    d: Dims,
    gain: &[T],
    dy: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let s = d.plane();
    let c = d.channels;
    let n = T::from_usize(d.batch * s).expect("count");
    let mut dx = vec![T::zero(); d.len()];
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..d.batch {
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            for (&g, &h) in dy[range.clone()].iter().zip(&cache.xhat[range]) {
                sum_g += g;
                sum_gx += g * h;
            }
        }
        dbias[ch] += sum_g;
        dgain[ch] += sum_gx;
        // dx = gain·inv_std/n · (n·g − Σg − x̂·Σ(g·x̂))
        let k = gain[ch] * cache.inv_std[ch] / n;
        for b in 0..d.batch {
            let range = (b * c + ch) * s..(b * c + ch + 1) * s;
            for ((o, &g), &h) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&cache.xhat[range]) {
                *o = k * (n * g - sum_g - h * sum_gx);
            }
        }
    }
    dx
}

pub fn elu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| if v > T::zero() { v } else { v.exp_m1() })
        .collect()
}

/// Uses the forward output: `d/dx = 1` for `x > 0`, else `y + 1`.
pub fn elu_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    y.iter()
        .zip(dy)
        .map(|(&o, &g)| if o > T::zero() { g } else { g * (o + T::one()) })
        .collect()
}

/// Non-overlapping 2×2 max pooling; odd trailing rows/columns are dropped.
/// Returns the output and, per output element, the flat input index of the maximum.
pub fn max_pool2x2<T: Real>(x: &[T], d: Dims) -> (Vec<T>, Vec<usize>, Dims) {
    let (oh, ow) = (d.height / 2, d.width / 2);
    let od = Dims {
        height: oh,
        width: ow,
        ..d
    };
    let mut y = Vec::with_capacity(od.len());
    let mut idx = Vec::with_capacity(od.len());
    for bc in 0..d.batch * d.channels {
        let base = bc * d.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * d.width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * d.width + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                idx.push(best);
            }
        }
    }
    (y, idx, od)
}

pub fn max_pool2x2_backward<T: Real>(argmax: &[usize], input_len: usize, dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

/// `y[b] = W x[b] + bias`, `W` is `out × in`.
pub fn dense_forward<T: Real>(x: &[T], batch: usize, weight: &[T], bias: &[T], n_in: usize, n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * n_out];
    for b in 0..batch {
        let xb = &x[b * n_in..(b + 1) * n_in];
        for o in 0..n_out {
            let row = &weight[o * n_in..(o + 1) * n_in];
            let mut acc = bias[o];
            for (&wv, &xv) in row.iter().zip(xb) {
                acc += wv * xv;
            }
            y[b * n_out + o] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    batch: usize,
    weight: &[T],
    n_in: usize,
    n_out: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * n_in];
    for b in 0..batch {
        let xb = &x[b * n_in..(b + 1) * n_in];
        for o in 0..n_out {
            let g = dy[b * n_out + o];
            dbias[o] += g;
            let row = &weight[o * n_in..(o + 1) * n_in];
            let drow = &mut dweight[o * n_in..(o + 1) * n_in];
            let dxb = &mut dx[b * n_in..(b + 1) * n_in];
            for i in 0..n_in {
                drow[i] += g * xb[i];
                dxb[i] += g * row[i];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct six-loop depthwise-separable convolution.
    fn naive_separable(x: &[f64], d: Dims, dw: &[f64], k: usize, pw: &[f64], bias: &[f64], c_out: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let (h, w) = (d.height as isize, d.width as isize);
        let mut mid = vec![0.0; d.len()];
        for b in 0..d.batch {
            for c in 0..d.channels {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = 0.0;
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (iy, ix) = (oy + ky - pad, ox + kx - pad);
                                if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                    acc += dw[(c * k + ky as usize) * k + kx as usize]
                                        * x[((b * d.channels + c) * d.height + iy as usize) * d.width + ix as usize];
                                }
                            }
                        }
                        mid[((b * d.channels + c) * d.height + oy as usize) * d.width + ox as usize] = acc;
                    }
                }
            }
        }
        let s = d.plane();
        let mut out = vec![0.0; d.batch * c_out * s];
        for b in 0..d.batch {
            for o in 0..c_out {
                for p in 0..s {
                    let mut acc = bias[o];
                    for c in 0..d.channels {
                        acc += pw[o * d.channels + c] * mid[(b * d.channels + c) * s + p];
                    }
                    out[(b * c_out + o) * s + p] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn separable_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let d = Dims { batch: 1, channels: 2, height: 5, width: 5 };
        for (k, c_out) in [(3, 3), (5, 2), (1, 4)] {
            let x = random(d.len(), &mut rng);
            let dw = random(2 * k * k, &mut rng);
            let pw = random(c_out * 2, &mut rng);
            let bias = random(c_out, &mut rng);
            let got = pointwise_forward(&depthwise_forward(&x, d, &dw, k), d, &pw, &bias, c_out);
            let want = naive_separable(&x, d, &dw, k, &pw, &bias, c_out);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_separable_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = Dims { batch: 2, channels: 3, height: 4, width: 6 };
        let x = random(d.len(), &mut rng);
        let mut dw = vec![0.0; 3 * 9];
        for c in 0..3 {
            dw[c * 9 + 4] = 1.0;
        }
        let mut pw = vec![0.0; 9];
        for c in 0..3 {
            pw[c * 3 + c] = 1.0;
        }
        let y = pointwise_forward(&depthwise_forward(&x, d, &dw, 3), d, &pw, &[0.0; 3], 3);
        assert_eq!(y, x);

        let zeros = vec![0.0; d.len()];
        let bias = [0.5, -1.0, 2.0];
        let y = pointwise_forward(&depthwise_forward(&zeros, d, &dw, 3), d, &pw, &bias, 3);
        for b in 0..2 {
            for c in 0..3 {
                assert!(y[(b * 3 + c) * 24..(b * 3 + c + 1) * 24].iter().all(|&v| v == bias[c]));
            }
        }
    }

    #[test]
    fn batch_norm_train_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let d = Dims { batch: 3, channels: 2, height: 4, width: 5 };
        let x: Vec<f64> = random(d.len(), &mut rng).iter().map(|v| 3.0 * v + 1.0).collect();
        let (y, cache) = batch_norm_train(&x, d, &[1.0, 1.0], &[0.0, 0.0]);
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y[(b * 2 + c) * 20..(b * 2 + c + 1) * 20].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 60.0;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 60.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "{var}"); // eps shrinks it slightly

            let raw: Vec<f64> = (0..3).flat_map(|b| x[(b * 2 + c) * 20..(b * 2 + c + 1) * 20].to_vec()).collect();
            let m = raw.iter().sum::<f64>() / 60.0;
            let v = raw.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 60.0;
            assert!((cache.batch_mean[c] - m).abs() < 1e-10);
            assert!((cache.batch_var_unbiased[c] - v * 60.0 / 59.0).abs() < 1e-10);
            for (yy, r) in vals.iter().zip(&raw) {
                assert!((yy - (r - m) / (v + BN_EPS).sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn batch_norm_eval_constant_input() {
        let d = Dims { batch: 2, channels: 1, height: 2, width: 2 };
        let y = batch_norm_eval(&[0.7; 8], d, &[1.0], &[0.0], &[0.7], &[2.0]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elu_values() {
        let y = elu(&[0.0f64, 1.0, -1.0]);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 1.0);
        assert!((y[2] - (std::f64::consts::E.recip() - 1.0)).abs() < 1e-15);
        assert!((y[2] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn pooling_floor_semantics() {
        let d = Dims { batch: 1, channels: 1, height: 2, width: 2 };
        let (y, idx, od) = max_pool2x2(&[1.0f64, 2.0, 3.0, 4.0], d);
        assert_eq!((y, idx, od.height, od.width), (vec![4.0], vec![3], 1, 1));

        let d = Dims { batch: 1, channels: 1, height: 91, width: 41 };
        let (y, _, od) = max_pool2x2(&vec![0.25f64; d.len()], d);
        assert_eq!((od.height, od.width), (45, 20));
        assert!(y.iter().all(|&v| v == 0.25));
        let (_, _, od) = max_pool2x2(&y, od);
        assert_eq!((od.height, od.width), (22, 10));
    }
}
