use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map of row vectors: x [N, Cin] * w [Cout, Cin]^T + b -> [N, Cout].
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let (cout, wcin) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cin, wcin, "linear dim mismatch");
    assert_eq!(b.len(), cout);
    let mut out = Tensor::zeros(&[n, cout]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.data();
    for i in 0..n {
        let xrow = &xd[i * cin..(i + 1) * cin];
        let orow = &mut od[i * cout..(i + 1) * cout];
        for (o, (wrow, &bv)) in orow.iter_mut().zip(wd.chunks_exact(cin).zip(b.data())) {
            let mut acc = bv;
            for (&xv, &wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            *o = acc;
        }
    }
    out
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let cout = w.shape()[0];
    assert_eq!(grad_out.shape(), &[n, cout]);
    let mut gx = Tensor::zeros(&[n, cin]);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    let gwd = gw.data_mut();
    let gbd = gb.data_mut();
    for i in 0..n {
        let xrow = &xd[i * cin..(i + 1) * cin];
        let grow = &gd[i * cout..(i + 1) * cout];
        let gxrow = &mut gxd[i * cin..(i + 1) * cin];
        for (co, &g) in grow.iter().enumerate() {
            gbd[co] += g;
            let wrow = &wd[co * cin..(co + 1) * cin];
            let gwrow = &mut gwd[co * cin..(co + 1) * cin];
            for j in 0..cin {
                gxrow[j] += g * wrow[j];
                gwrow[j] += g * xrow[j];
            }
        }
    }
    (gx, gw, gb)
}

/// Row-wise log softmax of [N, K].
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let mut out = Tensor::zeros(&[n, k]);
    let xd = x.data();
    let od = out.data_mut();
    for i in 0..n {
        let row = &xd[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for (o, &v) in od[i * k..(i + 1) * k].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

/// Backward from the forward *output* y = log_softmax(x):
/// dx = g - exp(y) * sum(g) per row.
pub fn log_softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (output.shape()[0], output.shape()[1]);
    assert_eq!(grad_out.shape(), &[n, k]);
    let mut gx = Tensor::zeros(&[n, k]);
    let yd = output.data();
    let gd = grad_out.data();
    let gxd = gx.data_mut();
    for i in 0..n {
        let ys = &yd[i * k..(i + 1) * k];
        let gs = &gd[i * k..(i + 1) * k];
        let gsum: T = gs.iter().copied().sum();
        for j in 0..k {
            gxd[i * k + j] = gs[j] - ys[j].exp() * gsum;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_product() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0f64, 2.0, 3.0]);
        let w = Tensor::from_vec(&[2, 3], vec![1.0f64, 0.0, -1.0, 0.5, 0.5, 0.5]);
        let b = Tensor::from_vec(&[2], vec![10.0f64, -10.0]);
        let y = linear(&x, &w, &b);
        assert_eq!(y.data(), &[8.0, -7.0]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, -50.0, 0.0, 50.0]);
        let y = log_softmax(&x);
        for i in 0..2 {
            let total: f64 = (0..3).map(|j| y.at2(i, j).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // shift invariance
        let x2 = x.map(|v| v + 100.0);
        let y2 = log_softmax(&x2);
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
