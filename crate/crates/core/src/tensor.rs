//! Dense little tensor type plus the raw kernels (convolution, activation)
//! that the tape in [`crate::nn`] dispatches to. Layout is row-major with
//! the channel axis outermost: `[C, H, W]` for activations and
//! `[Cout, Cin, kh, kw]` for convolution weights.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dimension(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Channel/height/width split for `[C, H, W]` tensors.
    pub fn chw(&self) -> (usize, usize, usize) {
        debug_assert_eq!(self.shape.len(), 3, "expected [C,H,W], got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw();
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Zero-padded 2-D convolution in the neural-network (cross-correlation)
/// convention: `out[co, oy, ox] = b[co] + sum w[co, ci, u, v] *
/// in[ci, oy*stride + u - pad, ox*stride + v - pad]`.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (cin, h, w) = input.chw();
    let (cout, wcin, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    debug_assert_eq!(cin, wcin);
    debug_assert_eq!(bias.numel(), cout);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[cout, oh, ow]);

    for co in 0..cout {
        let b = bias.data[co];
        for v in out.data[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
            *v = b;
        }
    }
    for co in 0..cout {
        let out_plane = co * oh * ow;
        for ci in 0..cin {
            let in_plane = ci * h * w;
            for u in 0..kh {
                for v in 0..kw {
                    let wt = weight.data[((co * cin + ci) * kh + u) * kw + v];
                    if wt == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + u) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = in_plane + iy as usize * w;
                        let out_row = out_plane + oy * ow;
                        // Valid ox range so that ix stays inside [0, w).
                        let lo_num = pad as isize - v as isize;
                        let ox_lo = if lo_num > 0 {
                            ((lo_num as usize) + stride - 1) / stride
                        } else {
                            0
                        };
                        let hi_num = w as isize - 1 + pad as isize - v as isize;
                        if hi_num < 0 {
                            continue;
                        }
                        let ox_hi = ((hi_num as usize) / stride).min(ow - 1);
                        if stride == 1 {
                            let ix0 = (ox_lo as isize + v as isize - pad as isize) as usize;
                            let n = ox_hi + 1 - ox_lo;
                            let src = &input.data[in_row + ix0..in_row + ix0 + n];
                            let dst = &mut out.data[out_row + ox_lo..out_row + ox_lo + n];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wt * s;
                            }
                        } else {
                            for ox in ox_lo..=ox_hi {
                                let ix = (ox * stride + v) as isize - pad as isize;
                                out.data[out_row + ox] +=
                                    wt * input.data[in_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let (cin, h, w) = input.chw();
    let (cout, _, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    let (_, oh, ow) = grad_out.chw();
    let mut gin = Tensor::zeros(&[cin, h, w]);
    let mut gw = Tensor::zeros(&weight.shape);
    let mut gb = Tensor::zeros(&[cout]);

    for co in 0..cout {
        let go_plane = co * oh * ow;
        gb.data[co] = grad_out.data[go_plane..go_plane + oh * ow].iter().sum();
        for ci in 0..cin {
            let in_plane = ci * h * w;
            for u in 0..kh {
                for v in 0..kw {
                    let widx = ((co * cin + ci) * kh + u) * kw + v;
                    let wt = weight.data[widx];
                    let mut wacc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + u) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = in_plane + iy as usize * w;
                        let go_row = go_plane + oy * ow;
                        let lo_num = pad as isize - v as isize;
                        let ox_lo = if lo_num > 0 {
                            ((lo_num as usize) + stride - 1) / stride
                        } else {
                            0
                        };
                        let hi_num = w as isize - 1 + pad as isize - v as isize;
                        if hi_num < 0 {
                            continue;
                        }
                        let ox_hi = ((hi_num as usize) / stride).min(ow - 1);
                        if stride == 1 {
                            let ix0 = (ox_lo as isize + v as isize - pad as isize) as usize;
                            let n = ox_hi + 1 - ox_lo;
                            let go_seg = &grad_out.data[go_row + ox_lo..go_row + ox_lo + n];
                            let in_seg = &input.data[in_row + ix0..in_row + ix0 + n];
                            let gin_seg = &mut gin.data[in_row + ix0..in_row + ix0 + n];
                            for ((gi, g), x) in gin_seg.iter_mut().zip(go_seg).zip(in_seg) {
                                *gi += wt * g;
                                wacc += g * x;
                            }
                        } else {
                            for ox in ox_lo..=ox_hi {
                                let ix = ((ox * stride + v) as isize - pad as isize) as usize;
                                let g = grad_out.data[go_row + ox];
                                gin.data[in_row + ix] += wt * g;
                                wacc += g * input.data[in_row + ix];
                            }
                        }
                    }
                    gw.data[widx] += wacc;
                }
            }
        }
    }
    (gin, gw, gb)
}

/// Leaky rectifier; slope 1.0 degenerates to the identity.
pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
    }
}

pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f64) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
            .collect(),
    }
}

/// Concatenate `[C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (_, h, w) = parts[0].chw();
    let channels: usize = parts.iter().map(|t| t.chw().0).sum();
    let mut data = Vec::with_capacity(channels * h * w);
    for t in parts {
        debug_assert_eq!((t.chw().1, t.chw().2), (h, w));
        data.extend_from_slice(&t.data);
    }
    Tensor {
        shape: vec![channels, h, w],
        data,
    }
}
