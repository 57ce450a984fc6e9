//! Layer kernels on `[channels][time][bands]` activations.
//!
//! Spatial padding replicates edge frames along time and zero-pads along the
//! band axis, so a time-constant input stays time-constant through every
//! layer.

use super::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

#[inline]
fn clamp_row(y: usize, ky: usize, pad: usize, h: usize) -> usize {
    (y + ky).saturating_sub(pad).min(h - 1)
}

/// Valid output column range for kernel column offset `dx = kx - pad`.
#[inline]
fn col_range(kx: usize, pad: usize, w: usize) -> (usize, usize, isize) {
    let dx = kx as isize - pad as isize;
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).min(w as isize).max(0) as usize;
    (lo, hi, dx)
}

/// Stride-1 "same" convolution with a `k x k` kernel.
/// `weight` is `[out_c][in_c][k][k]`.
pub fn conv_forward<T: Scalar>(x: &Act<T>, weight: &[T], bias: &[T], out_c: usize, k: usize) -> Act<T> {
    let (h, w) = (x.h, x.w);
    let pad = k / 2;
    let mut out = Act::zeros(out_c, h, w);
    for o in 0..out_c {
        let dst = out.plane_mut(o);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..x.c {
            let src = x.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let wt = weight[((o * x.c + i) * k + ky) * k + kx];
                    let (lo, hi, dx) = col_range(kx, pad, w);
                    if lo >= hi {
                        continue;
                    }
                    let (s_lo, s_hi) = ((lo as isize + dx) as usize, (hi as isize + dx) as usize);
                    for y in 0..h {
                        let sy = clamp_row(y, ky, pad, h);
                        let s = &src[sy * w + s_lo..sy * w + s_hi];
                        let d = &mut dst[y * w + lo..y * w + hi];
                        for (a, &b) in d.iter_mut().zip(s) {
                            *a = *a + wt * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv_forward`]. Accumulates into `d_weight`/`d_bias` and
/// returns the input gradient.
pub fn conv_backward<T: Scalar>(
    x: &Act<T>,
    weight: &[T],
    d_out: &Act<T>,
    k: usize,
    d_weight: &mut [T],
    d_bias: &mut [T],
) -> Act<T> {
    let (h, w) = (x.h, x.w);
    let pad = k / 2;
    let mut d_x = x.same_shape();
    for o in 0..d_out.c {
        let g = d_out.plane(o);
        d_bias[o] = d_bias[o] + g.iter().fold(T::zero(), |a, &b| a + b);
        for i in 0..x.c {
            let src = x.plane(i);
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * x.c + i) * k + ky) * k + kx;
                    let wt = weight[widx];
                    let (lo, hi, dx) = col_range(kx, pad, w);
                    if lo >= hi {
                        continue;
                    }
                    let (s_lo, s_hi) = ((lo as isize + dx) as usize, (hi as isize + dx) as usize);
                    let mut acc = T::zero();
                    let dst = d_x.plane_mut(i);
                    for y in 0..h {
                        let sy = clamp_row(y, ky, pad, h);
                        let gr = &g[y * w + lo..y * w + hi];
                        let s = &src[sy * w + s_lo..sy * w + s_hi];
                        acc = gr.iter().zip(s).fold(acc, |a, (&u, &v)| a + u * v);
                        let d = &mut dst[sy * w + s_lo..sy * w + s_hi];
                        for (a, &u) in d.iter_mut().zip(gr) {
                            *a = *a + wt * u;
                        }
                    }
                    d_weight[widx] = d_weight[widx] + acc;
                }
            }
        }
    }
    d_x
}

pub fn relu_in_place<T: Scalar>(x: &mut Act<T>) {
    x.data.iter_mut().for_each(|v| {
        if !(*v > T::zero()) {
            *v = T::zero()
        }
    });
}

/// Masks `grad` by `activated > 0` in place.
pub fn relu_backward<T: Scalar>(activated: &Act<T>, grad: &mut Act<T>) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if !(a > T::zero()) {
            *g = T::zero();
        }
    }
}

/// 3x3 stride-1 max pooling over in-range neighbours. Returns the pooled
/// activation and the flat argmax index of each output.
pub fn maxpool3_forward<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<u32>) {
    let (h, w) = (x.h, x.w);
    let mut out = x.same_shape();
    let mut arg = vec![0u32; x.data.len()];
    for c in 0..x.c {
        let base = c * h * w;
        for y in 0..h {
            for xx in 0..w {
                let mut best = base + y * w + xx;
                for ty in y.saturating_sub(1)..(y + 2).min(h) {
                    for tx in xx.saturating_sub(1)..(xx + 2).min(w) {
                        let idx = base + ty * w + tx;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                }
                let o = base + y * w + xx;
                out.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool3_backward<T: Scalar>(input_shape: &Act<T>, arg: &[u32], d_out: &Act<T>) -> Act<T> {
    let mut d_x = input_shape.same_shape();
    for (g, &a) in d_out.data.iter().zip(arg) {
        d_x.data[a as usize] = d_x.data[a as usize] + *g;
    }
    d_x
}

/// 2x2 stride-2 average pooling, ceil mode: partial windows at the edges
/// average only the elements they cover.
pub fn avgpool2_forward<T: Scalar>(x: &Act<T>) -> Act<T> {
    let (h2, w2) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut out = Act::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h2 {
            for xx in 0..w2 {
                let mut acc = T::zero();
                let mut n = 0usize;
                for ty in 2 * y..(2 * y + 2).min(x.h) {
                    for tx in 2 * xx..(2 * xx + 2).min(x.w) {
                        acc = acc + src[ty * x.w + tx];
                        n += 1;
                    }
                }
                dst[y * w2 + xx] = acc / T::from_usize(n).unwrap();
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Scalar>(input_shape: &Act<T>, d_out: &Act<T>) -> Act<T> {
    let (h, w) = (input_shape.h, input_shape.w);
    let mut d_x = input_shape.same_shape();
    for c in 0..input_shape.c {
        let g = d_out.plane(c);
        let dst = d_x.plane_mut(c);
        for y in 0..d_out.h {
            for xx in 0..d_out.w {
                let ys = 2 * y..(2 * y + 2).min(h);
                let xs = 2 * xx..(2 * xx + 2).min(w);
                let n = T::from_usize(ys.len() * xs.len()).unwrap();
                let share = g[y * d_out.w + xx] / n;
                for ty in ys {
                    for tx in xs.clone() {
                        dst[ty * w + tx] = dst[ty * w + tx] + share;
                    }
                }
            }
        }
    }
    d_x
}

pub fn global_avg_pool<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let n = T::from_usize(x.h * x.w).unwrap();
    (0..x.c).map(|c| x.plane(c).iter().fold(T::zero(), |a, &b| a + b) / n).collect()
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &Act<T>, d_out: &[T]) -> Act<T> {
    let n = T::from_usize(input_shape.h * input_shape.w).unwrap();
    let mut d_x = input_shape.same_shape();
    for (c, &g) in d_out.iter().enumerate() {
        d_x.plane_mut(c).iter_mut().for_each(|v| *v = g / n);
    }
    d_x
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn dense_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            weight[o * n_in..(o + 1) * n_in].iter().zip(x).fold(b, |a, (&w, &v)| a + w * v)
        })
        .collect()
}

pub fn dense_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
) -> Vec<T> {
    let n_in = x.len();
    let mut d_x = vec![T::zero(); n_in];
    for (o, &g) in d_out.iter().enumerate() {
        d_bias[o] = d_bias[o] + g;
        for i in 0..n_in {
            d_weight[o * n_in + i] = d_weight[o * n_in + i] + g * x[i];
            d_x[i] = d_x[i] + g * weight[o * n_in + i];
        }
    }
    d_x
}

/// Stack activations of equal spatial size along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Act<T>]) -> Act<T> {
    let (h, w) = (parts[0].h, parts[0].w);
    let c = parts.iter().map(|p| p.c).sum();
    let mut data = Vec::with_capacity(c * h * w);
    for p in parts {
        debug_assert!(p.h == h && p.w == w);
        data.extend_from_slice(&p.data);
    }
    Act { c, h, w, data }
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Scalar>(x: &Act<T>, sizes: &[usize]) -> Vec<Act<T>> {
    let n = x.h * x.w;
    let mut off = 0;
    sizes
        .iter()
        .map(|&c| {
            let a = Act { c, h: x.h, w: x.w, data: x.data[off * n..(off + c) * n].to_vec() };
            off += c;
            a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Act<f64> {
        Act { c, h, w, data: (0..c * h * w).map(f).collect() }
    }

    /// Direct per-output evaluation used as an oracle for the row-sliced
    /// convolution loops.
    fn conv_naive(x: &Act<f64>, weight: &[f64], bias: &[f64], out_c: usize, k: usize) -> Act<f64> {
        let pad = k as isize / 2;
        let mut out = Act::zeros(out_c, x.h, x.w);
        for o in 0..out_c {
            for y in 0..x.h as isize {
                for xx in 0..x.w as isize {
                    let mut acc = bias[o];
                    for i in 0..x.c {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let sy = (y + ky - pad).clamp(0, x.h as isize - 1) as usize;
                                let sx = xx + kx - pad;
                                if sx < 0 || sx >= x.w as isize {
                                    continue;
                                }
                                let wt = weight[((o * x.c + i) * k + ky as usize) * k + kx as usize];
                                acc += wt * x.data[(i * x.h + sy) * x.w + sx as usize];
                            }
                        }
                    }
                    out.data[(o * x.h + y as usize) * x.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        for k in [1, 3, 5] {
            let x = act(3, 4, 7, |i| ((i * 37 % 11) as f64 - 5.0) * 0.3);
            let w: Vec<f64> = (0..2 * 3 * k * k).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
            let b = vec![0.5, -0.25];
            let fast = conv_forward(&x, &w, &b, 2, k);
            let slow = conv_naive(&x, &w, &b, 2, k);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let k = 3;
        let x = act(2, 3, 5, |i| ((i * 29 % 13) as f64 - 6.0) * 0.2);
        let w: Vec<f64> = (0..2 * 2 * 9).map(|i| ((i * 17 % 9) as f64 - 4.0) * 0.15).collect();
        let b = vec![0.1, -0.2];
        let g = act(2, 3, 5, |i| ((i * 7 % 5) as f64 - 2.0) * 0.5);
        let loss = |x: &Act<f64>, w: &[f64]| -> f64 {
            conv_forward(x, w, &b, 2, k).data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        let dx = conv_backward(&x, &w, &g, k, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-7);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        assert!((db[0] - g.plane(0).iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn pooling_shapes_and_values() {
        let x = act(1, 3, 3, |i| i as f64);
        let p = avgpool2_forward(&x);
        assert_eq!((p.h, p.w), (2, 2));
        assert_eq!(p.data, vec![2.0, 3.5, 6.5, 8.0]);
        let (m, arg) = maxpool3_forward(&x);
        assert_eq!(m.data[0], 4.0);
        assert_eq!(arg[0], 4);
        assert_eq!(m.data[8], 8.0);
        let one = act(2, 1, 1, |i| i as f64 + 1.0);
        assert_eq!(avgpool2_forward(&one).data, vec![1.0, 2.0]);
    }

    #[test]
    fn time_constant_input_stays_constant() {
        let row = [0.3, -1.2, 2.0, 0.7];
        let x = Act { c: 1, h: 5, w: 4, data: (0..20).map(|i| row[i % 4]).collect::<Vec<f64>>() };
        let w: Vec<f64> = (0..2 * 9).map(|i| (i as f64 - 8.0) * 0.1).collect();
        let y = conv_forward(&x, &w, &[0.0, 0.1], 2, 3);
        for c in 0..2 {
            let p = y.plane(c);
            for t in 1..5 {
                assert_eq!(&p[t * 4..t * 4 + 4], &p[..4]);
            }
        }
        let (m, _) = maxpool3_forward(&y);
        for t in 1..5 {
            assert_eq!(&m.plane(0)[t * 4..t * 4 + 4], &m.plane(0)[..4]);
        }
    }
}
