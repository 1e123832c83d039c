//! Dense CHW tensors and the layer primitives of the feature network, each
//! with its exact reverse-mode gradient.

use crate::error::{Error, Result};

/// Channel-major 3D tensor (`c x h x w`) in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{c}x{h}x{w} tensor needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Column range `[lo, hi)` of output pixels whose tap at offset `k - 1`
/// stays inside `0..n`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// 3x3 convolution, stride 1, zero padding. `weight` is `[cout][cin][3][3]`.
pub fn conv3x3_forward(input: &Tensor3, weight: &[f64], bias: &[f64], cout: usize) -> Tensor3 {
    let (cin, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    debug_assert_eq!(bias.len(), cout);
    let mut out = Tensor3::zeros(cout, h, w);
    for co in 0..cout {
        let plane = out.plane_mut(co);
        plane.fill(bias[co]);
        for ci in 0..cin {
            let src = input.plane(ci);
            for ky in 0..3 {
                let (ylo, yhi) = tap_range(ky, h);
                for kx in 0..3 {
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (xlo, xhi) = tap_range(kx, w);
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * w + xlo..y * w + xhi];
                        let s = &src[sy * w + xlo + kx - 1..sy * w + xhi + kx - 1];
                        for (d, v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv3x3_forward`]: `(grad_input, grad_weight, grad_bias)`.
pub fn conv3x3_backward(
    input: &Tensor3,
    weight: &[f64],
    grad_out: &Tensor3,
) -> (Tensor3, Vec<f64>, Vec<f64>) {
    let (cin, h, w) = (input.c, input.h, input.w);
    let cout = grad_out.c;
    let mut gin = Tensor3::zeros(cin, h, w);
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for co in 0..cout {
        let go = grad_out.plane(co);
        gb[co] = go.iter().sum();
        for ci in 0..cin {
            let src = input.plane(ci);
            for ky in 0..3 {
                let (ylo, yhi) = tap_range(ky, h);
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let (xlo, xhi) = tap_range(kx, w);
                    let mut acc = 0.0;
                    let gplane = gin.plane_mut(ci);
                    for y in ylo..yhi {
                        let sy = y + ky - 1;
                        let g = &go[y * w + xlo..y * w + xhi];
                        let soff = sy * w + xlo + kx - 1;
                        let s = &src[soff..soff + (xhi - xlo)];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if wv != 0.0 {
                            let d = &mut gplane[soff..soff + (xhi - xlo)];
                            for (dv, gv) in d.iter_mut().zip(g) {
                                *dv += wv * gv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    (gin, gw, gb)
}

#[inline]
pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_forward(t: &Tensor3, slope: f64) -> Tensor3 {
    Tensor3 {
        data: t.data.iter().map(|&v| leaky(v, slope)).collect(),
        ..*t
    }
}

/// `pre` is the activation input.
pub fn leaky_backward(pre: &Tensor3, grad: &Tensor3, slope: f64) -> Tensor3 {
    Tensor3 {
        data: pre
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&p, &g)| if p > 0.0 { g } else { slope * g })
            .collect(),
        ..*pre
    }
}

fn pooled_size(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2x2 average pooling with ceil sizing; edge blocks average the pixels
/// they actually cover.
pub fn avgpool2_forward(t: &Tensor3) -> Tensor3 {
    let (oh, ow) = (pooled_size(t.h), pooled_size(t.w));
    let mut out = Tensor3::zeros(t.c, oh, ow);
    for c in 0..t.c {
        let src = t.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..t.h {
            for x in 0..t.w {
                dst[(y / 2) * ow + x / 2] += src[y * t.w + x];
            }
        }
        for oy in 0..oh {
            let ny = if 2 * oy + 1 < t.h { 2 } else { 1 };
            for ox in 0..ow {
                let nx = if 2 * ox + 1 < t.w { 2 } else { 1 };
                dst[oy * ow + ox] /= (ny * nx) as f64;
            }
        }
    }
    out
}

pub fn avgpool2_backward(input_shape: (usize, usize, usize), grad: &Tensor3) -> Tensor3 {
    let (c, h, w) = input_shape;
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let g = grad.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            let ny = if (y / 2) * 2 + 1 < h { 2 } else { 1 };
            for x in 0..w {
                let nx = if (x / 2) * 2 + 1 < w { 2 } else { 1 };
                dst[y * w + x] = g[(y / 2) * grad.w + x / 2] / (ny * nx) as f64;
            }
        }
    }
    out
}

/// Nearest-neighbor 2x upsampling to an explicit `(h, w)`.
pub fn upsample2_forward(t: &Tensor3, h: usize, w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(t.c, h, w);
    for c in 0..t.c {
        let src = t.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let sy = (y / 2).min(t.h - 1);
            for x in 0..w {
                dst[y * w + x] = src[sy * t.w + (x / 2).min(t.w - 1)];
            }
        }
    }
    out
}

pub fn upsample2_backward(input_shape: (usize, usize, usize), grad: &Tensor3) -> Tensor3 {
    let (c, h, w) = input_shape;
    let mut out = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let g = grad.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..grad.h {
            let sy = (y / 2).min(h - 1);
            for x in 0..grad.w {
                dst[sy * w + (x / 2).min(w - 1)] += g[y * grad.w + x];
            }
        }
    }
    out
}

/// Channel concatenation `[a; b]`.
pub fn concat(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    debug_assert!(a.h == b.h && a.w == b.w);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor3 {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Splits a concatenated gradient back into its `(a, b)` parts.
pub fn split(grad: &Tensor3, ca: usize) -> (Tensor3, Tensor3) {
    let n = grad.h * grad.w;
    let a = Tensor3 {
        c: ca,
        h: grad.h,
        w: grad.w,
        data: grad.data[..ca * n].to_vec(),
    };
    let b = Tensor3 {
        c: grad.c - ca,
        h: grad.h,
        w: grad.w,
        data: grad.data[ca * n..].to_vec(),
    };
    (a, b)
}

pub const L2_EPS: f64 = 1e-8;

/// Per-pixel channel normalization `x / sqrt(|x|^2 + eps)`.
pub fn l2norm_forward(t: &Tensor3) -> Tensor3 {
    let n = t.h * t.w;
    let mut out = t.clone();
    for p in 0..n {
        let s: f64 = (0..t.c).map(|c| t.data[c * n + p].powi(2)).sum();
        let inv = 1.0 / (s + L2_EPS).sqrt();
        for c in 0..t.c {
            out.data[c * n + p] *= inv;
        }
    }
    out
}

pub fn l2norm_backward(pre: &Tensor3, grad: &Tensor3) -> Tensor3 {
    let n = pre.h * pre.w;
    let mut out = Tensor3::zeros(pre.c, pre.h, pre.w);
    for p in 0..n {
        let s: f64 = (0..pre.c).map(|c| pre.data[c * n + p].powi(2)).sum();
        let norm = (s + L2_EPS).sqrt();
        let xg: f64 = (0..pre.c)
            .map(|c| pre.data[c * n + p] * grad.data[c * n + p])
            .sum();
        for c in 0..pre.c {
            let x = pre.data[c * n + p];
            out.data[c * n + p] = grad.data[c * n + p] / norm - x * xg / (norm * norm * norm);
        }
    }
    out
}

/// Fully connected layer `y = W x + b` with `W` row-major `[out][in]`.
pub fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let nin = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weight[o * nin..(o + 1) * nin].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Accumulates dense-layer gradients into `gw`/`gb`; returns `dL/dx`.
pub fn dense_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let nin = x.len();
    let mut gx = vec![0.0; nin];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[o] += g;
        let row = &weight[o * nin..(o + 1) * nin];
        let grow = &mut gw[o * nin..(o + 1) * nin];
        for i in 0..nin {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    gx
}
