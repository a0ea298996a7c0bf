use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling with kernel (2, 1) and stride (2, 1): halves the height of an
/// [N, C, H, W] map, width untouched. H must be even.
pub fn height_max_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape().len() != 4 {
        return Err(FotsError::Invalid(format!(
            "height_max_pool input must be rank 4, got {}",
            input.shape().len()
        )));
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if h % 2 != 0 {
        return Err(FotsError::Invalid(format!(
            "height_max_pool needs even height axis, got H={h}"
        )));
    }
    let oh = h / 2;
    let mut out = Tensor::zeros(&[n, c, oh, w]);
    let id = input.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        for r in 0..oh {
            let a = (plane * h + 2 * r) * w;
            let b = a + w;
            let o = (plane * oh + r) * w;
            for j in 0..w {
                od[o + j] = id[a + j].max(id[b + j]);
            }
        }
    }
    Ok(out)
}

/// Routes gradient to the max element of each 2x1 window; on ties the top
/// element wins.
pub fn height_max_pool_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let oh = h / 2;
    if grad_out.shape() != [n, c, oh, w] {
        return Err(FotsError::Invalid(
            "height_max_pool_backward grad shape mismatch".into(),
        ));
    }
    let mut gi = Tensor::zeros(input.shape());
    let id = input.data();
    let gd = grad_out.data();
    let gid = gi.data_mut();
    for plane in 0..n * c {
        for r in 0..oh {
            let a = (plane * h + 2 * r) * w;
            let b = a + w;
            let o = (plane * oh + r) * w;
            for j in 0..w {
                if id[a + j] >= id[b + j] {
                    gid[a + j] += gd[o + j];
                } else {
                    gid[b + j] += gd[o + j];
                }
            }
        }
    }
    Ok(gi)
}
