//! Per-layer forward and backward kernels.
//!
//! Convolutions are "valid" (stride 1, no padding). Rows are channel-major;
//! weights are laid out `[out][in][kernel..]` followed by the bias vector.

use super::{LayerSpec, Shape};
use crate::matrix::Matrix;

/// Applies one parameterized or pointwise layer to a single row.
pub(super) fn forward_row(layer: &LayerSpec, in_shape: &Shape, params: &[f64], x: &[f64], out: &mut [f64]) {
    match *layer {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let len = match *in_shape {
                Shape::OneD { len, .. } => len,
                _ => unreachable!("shape validated"),
            };
            let out_len = len - kernel + 1;
            let bias = &params[out_channels * in_channels * kernel..];
            for o in 0..out_channels {
                for s in 0..out_len {
                    let mut acc = bias[o];
                    for ci in 0..in_channels {
                        let w = &params[(o * in_channels + ci) * kernel..][..kernel];
                        let xs = &x[ci * len + s..][..kernel];
                        for (wv, xv) in w.iter().zip(xs.iter()) {
                            acc += wv * xv;
                        }
                    }
                    out[o * out_len + s] = acc;
                }
            }
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let (h, w) = match *in_shape {
                Shape::TwoD { height, width, .. } => (height, width),
                _ => unreachable!("shape validated"),
            };
            let (oh, ow) = (h - kernel + 1, w - kernel + 1);
            let bias = &params[out_channels * in_channels * kernel * kernel..];
            for o in 0..out_channels {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = bias[o];
                        for ci in 0..in_channels {
                            let wbase = ((o * in_channels) + ci) * kernel * kernel;
                            let xbase = ci * h * w;
                            for kr in 0..kernel {
                                let wrow = &params[wbase + kr * kernel..][..kernel];
                                let xrow = &x[xbase + (r + kr) * w + c..][..kernel];
                                for (wv, xv) in wrow.iter().zip(xrow.iter()) {
                                    acc += wv * xv;
                                }
                            }
                        }
                        out[(o * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        LayerSpec::Fc { inputs, outputs } => {
            let bias = &params[inputs * outputs..];
            out.copy_from_slice(bias);
            for (i, &xi) in x.iter().enumerate().take(inputs) {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &params[i * outputs..][..outputs];
                for (ov, wv) in out.iter_mut().zip(wrow.iter()) {
                    *ov += xi * wv;
                }
            }
        }
        LayerSpec::Relu => {
            for (ov, &xv) in out.iter_mut().zip(x.iter()) {
                *ov = if xv > 0.0 { xv } else { 0.0 };
            }
        }
        LayerSpec::Flatten => out.copy_from_slice(x),
        LayerSpec::Whitening => unreachable!("whitening handled at batch level"),
    }
}

/// Backward pass over a whole batch for one layer. Accumulates parameter
/// gradients into `grad_params` and returns the gradient w.r.t. the layer
/// input.
pub(super) fn backward_batch(
    layer: &LayerSpec,
    in_shape: &Shape,
    params: &[f64],
    input: &Matrix,
    upstream: &Matrix,
    grad_params: &mut [f64],
) -> Matrix {
    let mut grad_in = Matrix::zeros(input.rows(), input.cols());
    match *layer {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let len = match *in_shape {
                Shape::OneD { len, .. } => len,
                _ => unreachable!(),
            };
            let out_len = len - kernel + 1;
            let wcount = out_channels * in_channels * kernel;
            for row in 0..input.rows() {
                let x = input.row(row);
                let up = upstream.row(row);
                let gx = grad_in.row_mut(row);
                for o in 0..out_channels {
                    let upo = &up[o * out_len..][..out_len];
                    grad_params[wcount + o] += upo.iter().sum::<f64>();
                    for ci in 0..in_channels {
                        let wbase = (o * in_channels + ci) * kernel;
                        for j in 0..kernel {
                            let wv = params[wbase + j];
                            let gw = &mut grad_params[wbase + j];
                            for (s, &u) in upo.iter().enumerate() {
                                *gw += u * x[ci * len + s + j];
                                gx[ci * len + s + j] += u * wv;
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let (h, w) = match *in_shape {
                Shape::TwoD { height, width, .. } => (height, width),
                _ => unreachable!(),
            };
            let (oh, ow) = (h - kernel + 1, w - kernel + 1);
            let wcount = out_channels * in_channels * kernel * kernel;
            for row in 0..input.rows() {
                let x = input.row(row);
                let up = upstream.row(row);
                let gx = grad_in.row_mut(row);
                for o in 0..out_channels {
                    for r in 0..oh {
                        for c in 0..ow {
                            let u = up[(o * oh + r) * ow + c];
                            if u == 0.0 {
                                continue;
                            }
                            grad_params[wcount + o] += u;
                            for ci in 0..in_channels {
                                let wbase = (o * in_channels + ci) * kernel * kernel;
                                let xbase = ci * h * w;
                                for kr in 0..kernel {
                                    for kc in 0..kernel {
                                        let xi = xbase + (r + kr) * w + (c + kc);
                                        grad_params[wbase + kr * kernel + kc] += u * x[xi];
                                        gx[xi] += u * params[wbase + kr * kernel + kc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::Fc { inputs, outputs } => {
            for row in 0..input.rows() {
                let x = input.row(row);
                let up = upstream.row(row);
                let gx = grad_in.row_mut(row);
                for i in 0..inputs {
                    let wrow = &params[i * outputs..][..outputs];
                    let gwrow = &mut grad_params[i * outputs..i * outputs + outputs];
                    let xi = x[i];
                    let mut acc = 0.0;
                    for j in 0..outputs {
                        gwrow[j] += xi * up[j];
                        acc += up[j] * wrow[j];
                    }
                    gx[i] = acc;
                }
                let gb = &mut grad_params[inputs * outputs..];
                for (g, &u) in gb.iter_mut().zip(up.iter()) {
                    *g += u;
                }
            }
        }
        LayerSpec::Relu => {
            for row in 0..input.rows() {
                let x = input.row(row);
                let up = upstream.row(row);
                let gx = grad_in.row_mut(row);
                for i in 0..x.len() {
                    gx[i] = if x[i] > 0.0 { up[i] } else { 0.0 };
                }
            }
        }
        LayerSpec::Flatten => {
            grad_in.data_mut().copy_from_slice(upstream.data());
        }
        LayerSpec::Whitening => unreachable!("whitening handled at batch level"),
    }
    grad_in
}
