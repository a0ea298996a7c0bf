use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// d/dx relu at exactly 0 is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(input.shape(), grad_out.shape());
    let mut gi = Tensor::zeros(input.shape());
    for ((g, &x), &go) in gi
        .data_mut()
        .iter_mut()
        .zip(input.data())
        .zip(grad_out.data())
    {
        *g = if x > T::zero() { go } else { T::zero() };
    }
    gi
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let a = T::from_f64(slope);
    input.map(|v| if v > T::zero() { v } else { a * v })
}

/// d/dx at exactly 0 is taken as the negative-side slope.
pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    slope: f64,
) -> Tensor<T> {
    assert_eq!(input.shape(), grad_out.shape());
    let a = T::from_f64(slope);
    let mut gi = Tensor::zeros(input.shape());
    for ((g, &x), &go) in gi
        .data_mut()
        .iter_mut()
        .zip(input.data())
        .zip(grad_out.data())
    {
        *g = if x > T::zero() { go } else { a * go };
    }
    gi
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Takes the forward *output* y; dy/dx = y (1 - y).
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(output.shape(), grad_out.shape());
    let mut gi = Tensor::zeros(output.shape());
    for ((g, &y), &go) in gi
        .data_mut()
        .iter_mut()
        .zip(output.data())
        .zip(grad_out.data())
    {
        *g = go * y * (T::one() - y);
    }
    gi
}

/// Inverted dropout: kept elements are scaled by 1/(1-rate) so the expected
/// activation is unchanged; eval mode is simply "don't call this". Returns
/// the output and the mask (0 or 1/(1-rate)) needed by the backward pass.
pub fn dropout<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Tensor<T>) {
    assert!((0.0..1.0).contains(&rate));
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(input.shape());
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= rate {
            *m = keep;
        }
    }
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *o *= m;
    }
    (out, mask)
}

pub fn dropout_backward<T: Scalar>(mask: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gi = grad_out.clone();
    for (g, &m) in gi.data_mut().iter_mut().zip(mask.data()) {
        *g *= m;
    }
    gi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        // +/-30 sits near the edge of f64 resolution around 0 and 1 but the
        // true values are still strictly inside (0, 1)
        let x = Tensor::from_vec(&[5], vec![-30.0f64, -2.0, 0.0, 2.0, 30.0]);
        let y = sigmoid(&x);
        assert!((y.data()[2] - 0.5).abs() < 1e-15);
        assert!((y.data()[1] + y.data()[3] - 1.0).abs() < 1e-12);
        assert!(y.data()[0] > 0.0 && y.data()[4] < 1.0);
    }

    #[test]
    fn leaky_relu_scales_negative_side() {
        let x = Tensor::from_vec(&[4], vec![-2.0f64, -0.5, 0.5, 2.0]);
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.data(), &[-0.2, -0.05, 0.5, 2.0]);
        let g = leaky_relu_backward(&x, &Tensor::full(&[4], 1.0), 0.1);
        assert_eq!(g.data(), &[0.1, 0.1, 1.0, 1.0]);
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut rng = stream(11, "test-dropout", 0);
        let x = Tensor::full(&[10_000], 1.0f64);
        let (y, mask) = dropout(&x, 0.2, &mut rng);
        let mean: f64 = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "inverted scaling off: {mean}");
        let kept = mask.data().iter().filter(|&&m| m > 0.0).count();
        let frac = kept as f64 / mask.len() as f64;
        assert!((frac - 0.8).abs() < 0.02, "keep rate off: {frac}");
    }
}
