//! Differentiable primitives. Every `*_backward` takes the upstream gradient
//! of a scalar loss with respect to the op output, accumulates parameter
//! gradients into the supplied buffers, and returns the input gradient.

use rand::Rng;

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::imgcore::{axis_taps, resize_bilinear_planar};

/// Convolution weights `(c_out, c_in, k, k)` and bias `(c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3, "kernel must be 1 or 3");
        Self {
            c_out,
            c_in,
            k,
            weight: vec![0.0; c_out * c_in * k * k],
            bias: vec![0.0; c_out],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he(c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(c_out, c_in, k);
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        for w in &mut conv.weight {
            *w = std * standard_normal(rng);
        }
        conv
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.c_out, self.c_in, self.k)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    fn w(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.weight[((o * self.c_in + i) * self.k + dy) * self.k + dx]
    }
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; keeps the dependency set to rand alone
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Range of output coordinates whose tap `d` lands inside `0..n`, plus the
/// signed source offset.
#[inline]
fn tap_span(d: usize, pad: usize, n: usize) -> (usize, usize, isize) {
    let off = d as isize - pad as isize;
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).min(n as isize).max(0) as usize;
    (lo, hi, off)
}

/// Zero-padded cross-correlation preserving spatial size.
pub fn conv2d_forward(x: &Tensor4, conv: &Conv2d) -> Result<Tensor4> {
    if x.c != conv.c_in {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {}",
            conv.c_in, x.c
        )));
    }
    let (h, w, k) = (x.h, x.w, conv.k);
    let pad = k / 2;
    let mut out = Tensor4::zeros(x.n, conv.c_out, h, w);
    for n in 0..x.n {
        for o in 0..conv.c_out {
            let mut acc = vec![conv.bias[o]; h * w];
            for i in 0..conv.c_in {
                let src = x.plane(n, i);
                for dy in 0..k {
                    let (y0, y1, oy) = tap_span(dy, pad, h);
                    for dx in 0..k {
                        let wv = conv.w(o, i, dy, dx);
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1, ox) = tap_span(dx, pad, w);
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let s = &src[sy * w + (x0 as isize + ox) as usize..sy * w + (x1 as isize + ox) as usize];
                            for (a, v) in acc[y * w + x0..y * w + x1].iter_mut().zip(s) {
                                *a += wv * v;
                            }
                        }
                    }
                }
            }
            out.plane_mut(n, o).copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Accumulates weight/bias gradients into `grad` and returns the input gradient.
pub fn conv2d_backward(x: &Tensor4, conv: &Conv2d, gout: &Tensor4, grad: &mut Conv2d) -> Tensor4 {
    let (h, w, k) = (x.h, x.w, conv.k);
    let pad = k / 2;
    let mut gin = x.zeros_like();
    for n in 0..x.n {
        for o in 0..conv.c_out {
            let g = gout.plane(n, o);
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..conv.c_in {
                let src = x.plane(n, i);
                let base = ((o * conv.c_in + i) * k) * k;
                for dy in 0..k {
                    let (y0, y1, oy) = tap_span(dy, pad, h);
                    for dx in 0..k {
                        let (x0, x1, ox) = tap_span(dx, pad, w);
                        let wv = conv.weight[base + dy * k + dx];
                        let mut gw = 0.0;
                        let dst = gin.plane_mut(n, i);
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let s0 = sy * w + (x0 as isize + ox) as usize;
                            let grow = &g[y * w + x0..y * w + x1];
                            let srow = &src[s0..s0 + (x1 - x0)];
                            gw += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                            if wv != 0.0 {
                                for (d, gv) in dst[s0..s0 + (x1 - x0)].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        grad.weight[base + dy * k + dx] += gw;
                    }
                }
            }
        }
    }
    gin
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu_forward(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in &mut out.data {
        *v *= sigmoid(*v);
    }
    out
}

/// `x` is the pre-activation input.
pub fn silu_backward(x: &Tensor4, gout: &Tensor4) -> Tensor4 {
    let mut g = gout.clone();
    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
        let s = sigmoid(xv);
        *gv *= s * (1.0 + xv * (1.0 - s));
    }
    g
}

/// Squeeze (`c -> c/2`) and excite (`c/2 -> c`) 1x1 layers on the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl Attention {
    pub fn reduced(c: usize) -> usize {
        (c / 2).max(1)
    }

    pub fn zeros(c: usize) -> Self {
        let r = Self::reduced(c);
        Self {
            squeeze: Conv2d::zeros(r, c, 1),
            excite: Conv2d::zeros(c, r, 1),
        }
    }

    pub fn he(c: usize, rng: &mut impl Rng) -> Self {
        let r = Self::reduced(c);
        Self {
            squeeze: Conv2d::he(r, c, 1, rng),
            excite: Conv2d::he(c, r, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            squeeze: self.squeeze.zeros_like(),
            excite: self.excite.zeros_like(),
        }
    }
}

/// Values saved by [`channel_attention`] for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    scale: Vec<f64>,
}

fn dense(layer: &Conv2d, input: &[f64]) -> Vec<f64> {
    (0..layer.c_out)
        .map(|o| {
            layer.bias[o]
                + (0..layer.c_in)
                    .map(|i| layer.weight[o * layer.c_in + i] * input[i])
                    .sum::<f64>()
        })
        .collect()
}

/// `x * sigmoid(W2 relu(W1 gap(x) + b1) + b2)`, the scale broadcast over space.
pub fn channel_attention(x: &Tensor4, att: &Attention) -> Result<(Tensor4, AttentionCache)> {
    if x.c != att.squeeze.c_in || att.excite.c_out != x.c {
        return Err(Error::Shape(format!(
            "attention built for {} channels, got {}",
            att.squeeze.c_in, x.c
        )));
    }
    let p = x.plane_len() as f64;
    let r = att.squeeze.c_out;
    let mut cache = AttentionCache {
        pooled: Vec::with_capacity(x.n * x.c),
        hidden_pre: Vec::with_capacity(x.n * r),
        hidden: Vec::with_capacity(x.n * r),
        scale: Vec::with_capacity(x.n * x.c),
    };
    let mut out = x.clone();
    for n in 0..x.n {
        let pooled: Vec<f64> = (0..x.c).map(|c| x.plane(n, c).iter().sum::<f64>() / p).collect();
        let pre = dense(&att.squeeze, &pooled);
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let scale: Vec<f64> = dense(&att.excite, &hidden).into_iter().map(sigmoid).collect();
        for (c, &s) in scale.iter().enumerate() {
            for v in out.plane_mut(n, c) {
                *v *= s;
            }
        }
        cache.pooled.extend(pooled);
        cache.hidden_pre.extend(pre);
        cache.hidden.extend(hidden);
        cache.scale.extend(scale);
    }
    Ok((out, cache))
}

pub fn channel_attention_backward(
    x: &Tensor4,
    att: &Attention,
    cache: &AttentionCache,
    gout: &Tensor4,
    grad: &mut Attention,
) -> Tensor4 {
    let (c, r) = (x.c, att.squeeze.c_out);
    let p = x.plane_len() as f64;
    let mut gin = gout.clone();
    for n in 0..x.n {
        let scale = &cache.scale[n * c..(n + 1) * c];
        let hidden = &cache.hidden[n * r..(n + 1) * r];
        let pre = &cache.hidden_pre[n * r..(n + 1) * r];
        let pooled = &cache.pooled[n * c..(n + 1) * c];

        // d loss / d excite pre-activation
        let g_z2: Vec<f64> = (0..c)
            .map(|ch| {
                let gs: f64 = gout
                    .plane(n, ch)
                    .iter()
                    .zip(x.plane(n, ch))
                    .map(|(g, v)| g * v)
                    .sum();
                gs * scale[ch] * (1.0 - scale[ch])
            })
            .collect();
        let mut g_hidden = vec![0.0; r];
        for o in 0..c {
            grad.excite.bias[o] += g_z2[o];
            for j in 0..r {
                grad.excite.weight[o * r + j] += g_z2[o] * hidden[j];
                g_hidden[j] += att.excite.weight[o * r + j] * g_z2[o];
            }
        }
        let g_z1: Vec<f64> = (0..r)
            .map(|j| if pre[j] > 0.0 { g_hidden[j] } else { 0.0 })
            .collect();
        let mut g_pooled = vec![0.0; c];
        for j in 0..r {
            grad.squeeze.bias[j] += g_z1[j];
            for ch in 0..c {
                grad.squeeze.weight[j * c + ch] += g_z1[j] * pooled[ch];
                g_pooled[ch] += att.squeeze.weight[j * c + ch] * g_z1[j];
            }
        }
        for ch in 0..c {
            let (s, extra) = (scale[ch], g_pooled[ch] / p);
            for v in gin.plane_mut(n, ch) {
                *v = *v * s + extra;
            }
        }
    }
    gin
}

/// Align-corners bilinear resize of every plane.
pub fn resize_forward(x: &Tensor4, h: usize, w: usize) -> Tensor4 {
    if (x.h, x.w) == (h, w) {
        return x.clone();
    }
    let data = resize_bilinear_planar(&x.data, x.n * x.c, x.h, x.w, h, w);
    Tensor4 {
        n: x.n,
        c: x.c,
        h,
        w,
        data,
    }
}

/// Adjoint of [`resize_forward`]: maps an `h_out x w_out` gradient back to `h x w`.
pub fn resize_backward(gout: &Tensor4, h: usize, w: usize) -> Tensor4 {
    if (gout.h, gout.w) == (h, w) {
        return gout.clone();
    }
    let ty = axis_taps(h, gout.h);
    let tx = axis_taps(w, gout.w);
    let mut gin = Tensor4::zeros(gout.n, gout.c, h, w);
    for n in 0..gout.n {
        for c in 0..gout.c {
            let g = gout.plane(n, c);
            let dst = gin.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = g[oy * gout.w + ox];
                    dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                    dst[y1 * w + x0] += v * fy * (1.0 - fx);
                    dst[y1 * w + x1] += v * fy * fx;
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor4 {
        let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    fn random_conv(c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Conv2d {
        let mut conv = Conv2d::zeros(c_out, c_in, k);
        conv.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        conv.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        conv
    }

    #[test]
    fn identity_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(1, 1, 5, 7, &mut rng);
        let mut conv = Conv2d::zeros(1, 1, 1);
        conv.weight[0] = 1.0;
        assert_eq!(conv2d_forward(&x, &conv).unwrap(), x);
    }

    #[test]
    fn ones_3x3_on_constant() {
        let x = Tensor4::from_vec(1, 1, 6, 6, vec![0.7; 36]).unwrap();
        let mut conv = Conv2d::zeros(1, 1, 3);
        conv.weight.fill(1.0);
        let out = conv2d_forward(&x, &conv).unwrap();
        assert!((out.plane(0, 0)[2 * 6 + 3] - 9.0 * 0.7).abs() < 1e-12);
        assert!((out.plane(0, 0)[0] - 4.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_six_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(1, 4, 6, 6, &mut rng);
        for k in [1, 3] {
            let conv = random_conv(3, 4, k, &mut rng);
            let out = conv2d_forward(&x, &conv).unwrap();
            let pad = (k / 2) as isize;
            for o in 0..3 {
                for y in 0..6isize {
                    for xx in 0..6isize {
                        let mut s = conv.bias[o];
                        for i in 0..4 {
                            for dy in 0..k as isize {
                                for dx in 0..k as isize {
                                    let (sy, sx) = (y + dy - pad, xx + dx - pad);
                                    if (0..6).contains(&sy) && (0..6).contains(&sx) {
                                        s += conv.weight[((o * 4 + i) * k + dy as usize) * k + dx as usize]
                                            * x.plane(0, i)[(sy * 6 + sx) as usize];
                                    }
                                }
                            }
                        }
                        assert!((out.plane(0, o)[(y * 6 + xx) as usize] - s).abs() <= 1e-10);
                    }
                }
            }
        }
        let wrong = Conv2d::zeros(1, 2, 3);
        assert!(matches!(conv2d_forward(&x, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_zero_weights_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(2, 4, 5, 5, &mut rng);
        let (out, _) = channel_attention(&x, &Attention::zeros(4)).unwrap();
        for (a, b) in out.data.iter().zip(&x.data) {
            assert_eq!(*a, b / 2.0);
        }
    }

    #[test]
    fn attention_matches_loop_oracle_and_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(1, 4, 5, 6, &mut rng);
        let att = Attention {
            squeeze: random_conv(2, 4, 1, &mut rng),
            excite: random_conv(4, 2, 1, &mut rng),
        };
        let (out, _) = channel_attention(&x, &att).unwrap();
        let mut gap = [0.0; 4];
        for (c, g) in gap.iter_mut().enumerate() {
            for v in x.plane(0, c) {
                *g += v / 30.0;
            }
        }
        for c in 0..4 {
            let mut z2 = att.excite.bias[c];
            for j in 0..2 {
                let mut z1 = att.squeeze.bias[j];
                for (i, g) in gap.iter().enumerate() {
                    z1 += att.squeeze.weight[j * 4 + i] * g;
                }
                z2 += att.excite.weight[c * 2 + j] * z1.max(0.0);
            }
            let s = 1.0 / (1.0 + (-z2).exp());
            for (o, v) in out.plane(0, c).iter().zip(x.plane(0, c)) {
                assert!((o - v * s).abs() <= 1e-10);
                assert!(o.abs() <= v.abs());
            }
        }
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(1, 2, 6, 5, &mut rng);
        let u = random_tensor(1, 2, 11, 9, &mut rng);
        let ax = resize_forward(&x, 11, 9);
        let atu = resize_backward(&u, 6, 5);
        let lhs: f64 = ax.data.iter().zip(&u.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&atu.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
