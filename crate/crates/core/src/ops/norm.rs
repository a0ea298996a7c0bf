use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[inline]
fn plane_bounds(shape: &[usize]) -> (usize, usize, usize) {
    // (N, C, spatial) for an NCHW tensor
    (shape[0], shape[1], shape[2] * shape[3])
}

/// Per-channel batch norm over the (N, H, W) extent of an [N, C, H, W] map
/// using batch statistics (biased variance). Updates running stats in place:
/// running = momentum * running + (1 - momentum) * batch.
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
) -> (Tensor<T>, BnCache<T>) {
    let (n, c, sp) = plane_bounds(input.shape());
    let m = T::from_usize(n * sp);
    let eps = T::from_f64(BN_EPS);
    let mom = T::from_f64(BN_MOMENTUM);
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = Tensor::zeros(input.shape());
    let mut inv_std = Vec::with_capacity(c);
    let id = input.data();
    for ch in 0..c {
        let mut sum = T::zero();
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            sum += id[lo..lo + sp].iter().copied().sum::<T>();
        }
        let mean = sum / m;
        let mut sq = T::zero();
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            sq += id[lo..lo + sp].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
        }
        let var = sq / m;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            let src = &id[lo..lo + sp];
            // split borrows: xhat and out are distinct tensors
            let xh = &mut xhat.data_mut()[lo..lo + sp];
            for (x, &v) in xh.iter_mut().zip(src) {
                *x = (v - mean) * istd;
            }
            let od = &mut out.data_mut()[lo..lo + sp];
            let xh = &xhat.data()[lo..lo + sp];
            for (o, &x) in od.iter_mut().zip(xh) {
                *o = g * x + b;
            }
        }
        running_mean.data_mut()[ch] = mom * running_mean.data()[ch] + (T::one() - mom) * mean;
        running_var.data_mut()[ch] = mom * running_var.data()[ch] + (T::one() - mom) * var;
    }
    (out, BnCache { xhat, inv_std })
}

/// Normalization with frozen running statistics (inference).
pub fn batch_norm_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, sp) = plane_bounds(input.shape());
    let eps = T::from_f64(BN_EPS);
    let mut out = Tensor::zeros(input.shape());
    let id = input.data();
    for ch in 0..c {
        let istd = T::one() / (running_var.data()[ch] + eps).sqrt();
        let scale = gamma.data()[ch] * istd;
        let shift = beta.data()[ch] - running_mean.data()[ch] * scale;
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            for (o, &v) in out.data_mut()[lo..lo + sp].iter_mut().zip(&id[lo..lo + sp]) {
                *o = scale * v + shift;
            }
        }
    }
    out
}

/// Gradients in training mode (batch statistics participate in the graph).
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, sp) = plane_bounds(cache.xhat.shape());
    let m = T::from_usize(n * sp);
    let mut gx = Tensor::zeros(cache.xhat.shape());
    let mut ggamma = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    let xh = cache.xhat.data();
    let gd = grad_out.data();
    for ch in 0..c {
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            for i in lo..lo + sp {
                sg += gd[i];
                sgx += gd[i] * xh[i];
            }
        }
        ggamma.data_mut()[ch] = sgx;
        gbeta.data_mut()[ch] = sg;
        let k = gamma.data()[ch] * cache.inv_std[ch];
        let mg = sg / m;
        let mgx = sgx / m;
        for ni in 0..n {
            let lo = (ni * c + ch) * sp;
            for i in lo..lo + sp {
                gx.data_mut()[i] = k * (gd[i] - mg - xh[i] * mgx);
            }
        }
    }
    (gx, ggamma, gbeta)
}
