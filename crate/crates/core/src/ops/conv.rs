use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[inline]
fn out_extent(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// Valid output-column range `[lo, hi)` such that the input column
/// `ow * stride + kw - pad` stays inside `[0, w)`.
#[inline]
fn col_range(w: usize, ow_max: usize, stride: usize, pad: usize, kw: usize) -> (usize, usize) {
    let lo = if kw >= pad {
        0
    } else {
        (pad - kw + stride - 1) / stride
    };
    let hi_in = w + pad;
    if hi_in <= kw {
        return (0, 0);
    }
    let hi = ((hi_in - kw - 1) / stride + 1).min(ow_max);
    (lo.min(hi), hi)
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<()> {
    if input.shape().len() != 4 {
        return Err(FotsError::Invalid(format!(
            "conv2d input must be rank 4 (NCHW), got rank {}",
            input.shape().len()
        )));
    }
    if weight.shape().len() != 4 {
        return Err(FotsError::Invalid(format!(
            "conv2d weight must be rank 4, got rank {}",
            weight.shape().len()
        )));
    }
    if input.shape()[1] != weight.shape()[1] {
        return Err(FotsError::Invalid(format!(
            "conv2d channel axis mismatch: input C={} vs weight Cin={}",
            input.shape()[1],
            weight.shape()[1]
        )));
    }
    if bias.len() != weight.shape()[0] {
        return Err(FotsError::Invalid(format!(
            "conv2d bias axis mismatch: bias len {} vs Cout {}",
            bias.len(),
            weight.shape()[0]
        )));
    }
    Ok(())
}

/// 2-D convolution. `input` is [N, Cin, H, W], `weight` [Cout, Cin, KH, KW],
/// `bias` [Cout]; zero padding. Output spatial extent per axis is
/// floor((in + 2 pad - kernel)/stride) + 1.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    check_conv_shapes(input, weight, bias)?;
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    if h + 2 * padding.0 < kh || w + 2 * padding.1 < kw {
        return Err(FotsError::Invalid(format!(
            "conv2d spatial axes smaller than kernel: input {h}x{w}, kernel {kh}x{kw}"
        )));
    }
    let oh = out_extent(h, kh, stride.0, padding.0);
    let ow = out_extent(w, kw, stride.1, padding.1);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let od = out.data_mut();
    let id = input.data();
    let wd = weight.data();
    let bd = bias.data();

    for ni in 0..n {
        let in_base = ni * cin * h * w;
        let out_base = ni * cout * oh * ow;
        for co in 0..cout {
            let ob = out_base + co * oh * ow;
            od[ob..ob + oh * ow].iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..cin {
                for r in 0..kh {
                    for c in 0..kw {
                        let wv = wd[((co * cin + ci) * kh + r) * kw + c];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = col_range(w, ow, stride.1, padding.1, c);
                        for orow in 0..oh {
                            let ir = orow * stride.0 + r;
                            if ir < padding.0 || ir >= h + padding.0 {
                                continue;
                            }
                            let ir = ir - padding.0;
                            let ibase = in_base + (ci * h + ir) * w + c;
                            let obase = ob + orow * ow;
                            if stride.1 == 1 {
                                let irow = &id[ibase + lo - padding.1..ibase + hi - padding.1];
                                let orow = &mut od[obase + lo..obase + hi];
                                for (o, &i) in orow.iter_mut().zip(irow) {
                                    *o += wv * i;
                                }
                            } else {
                                for oc in lo..hi {
                                    od[obase + oc] += wv * id[ibase + oc * stride.1 - padding.1];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` w.r.t. input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, cin, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(FotsError::Invalid(
            "conv2d_backward grad_out shape mismatch".into(),
        ));
    }
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let id = input.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let gid = gi.data_mut();
    let gwd = gw.data_mut();
    let gbd = gb.data_mut();

    for ni in 0..n {
        let in_base = ni * cin * h * w;
        let out_base = ni * cout * oh * ow;
        for co in 0..cout {
            let ob = out_base + co * oh * ow;
            gbd[co] += gd[ob..ob + oh * ow].iter().copied().sum();
            for ci in 0..cin {
                for r in 0..kh {
                    for c in 0..kw {
                        let widx = ((co * cin + ci) * kh + r) * kw + c;
                        let wv = wd[widx];
                        let (lo, hi) = col_range(w, ow, stride.1, padding.1, c);
                        let mut wacc = T::zero();
                        for orow in 0..oh {
                            let ir = orow * stride.0 + r;
                            if ir < padding.0 || ir >= h + padding.0 {
                                continue;
                            }
                            let ir = ir - padding.0;
                            let ibase = in_base + (ci * h + ir) * w + c;
                            let obase = ob + orow * ow;
                            if stride.1 == 1 {
                                let irow = &id[ibase + lo - padding.1..ibase + hi - padding.1];
                                let grow = &gd[obase + lo..obase + hi];
                                let girow =
                                    &mut gid[ibase + lo - padding.1..ibase + hi - padding.1];
                                for ((gi, &g), &i) in girow.iter_mut().zip(grow).zip(irow) {
                                    *gi += wv * g;
                                    wacc += g * i;
                                }
                            } else {
                                for oc in lo..hi {
                                    let g = gd[obase + oc];
                                    let ii = ibase + oc * stride.1 - padding.1;
                                    gid[ii] += wv * g;
                                    wacc += g * id[ii];
                                }
                            }
                        }
                        gwd[widx] += wacc;
                    }
                }
            }
        }
    }
    Ok((gi, gw, gb))
}
