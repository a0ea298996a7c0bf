use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Parameter;

/// SGD with classical momentum: v <- m v + g ; p <- p - lr v.
/// Velocity slots are keyed by position in the parameter list, which is a
/// fixed registration order for every model here.
pub struct SgdMomentum<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Aborts on the first non-finite gradient rather than poisoning the
    /// weights; the error names the offending parameter.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "parameter list changed");
        for p in params.iter() {
            if p.trainable && p.grad.data().iter().any(|&g| !g.to_f64().is_finite()) {
                return Err(FotsError::Numeric(format!(
                    "non-finite gradient in parameter {:?}",
                    p.name
                )));
            }
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if !p.trainable {
                continue;
            }
            for ((vv, &g), pv) in v
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(p.value.data_mut().iter_mut())
            {
                *vv = self.momentum * *vv + g;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

/// Rescales all trainable gradients so their joint l2 norm is at most
/// `max_norm`; returns the norm before clipping. Guards the exp-parameterised
/// geometry against early momentum overshoot.
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Parameter<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params.iter() {
        if p.trainable {
            sq += p.grad.data().iter().map(|&g| g.to_f64() * g.to_f64()).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for p in params.iter_mut() {
            if p.trainable {
                for g in p.grad.data_mut() {
                    *g *= scale;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates_velocity() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![1.0f64]));
        p.grad.data_mut()[0] = 1.0;
        let mut opt = SgdMomentum::new(0.1, 0.9);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.9).abs() < 1e-12);
        // same gradient again: v = 0.9*1 + 1 = 1.9
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - (0.9 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn buffers_are_not_stepped() {
        let mut p = Parameter::buffer("rm", Tensor::from_vec(&[1], vec![5.0f64]));
        p.grad.data_mut()[0] = 100.0;
        let mut opt = SgdMomentum::new(0.1, 0.9);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 5.0);
    }

    #[test]
    fn clip_rescales_to_the_cap() {
        let mut a = Parameter::new("a", Tensor::from_vec(&[1], vec![0.0f64]));
        let mut b = Parameter::new("b", Tensor::from_vec(&[1], vec![0.0f64]));
        a.grad.data_mut()[0] = 3.0;
        b.grad.data_mut()[0] = 4.0;
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((a.grad.data()[0] - 0.6).abs() < 1e-12);
        assert!((b.grad.data()[0] - 0.8).abs() < 1e-12);
        // under the cap: untouched
        let norm2 = clip_grad_norm(&mut [&mut a, &mut b], 10.0);
        assert!((norm2 - 1.0).abs() < 1e-12);
        assert!((a.grad.data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_a_named_error() {
        let mut p = Parameter::new("bb.s0.w", Tensor::from_vec(&[1], vec![1.0f64]));
        p.grad.data_mut()[0] = f64::NAN;
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let err = opt.step(&mut [&mut p]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bb.s0.w"), "{msg}");
        // value untouched on failure
        assert_eq!(p.value.data()[0], 1.0);
    }
}
