use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// Integer-factor bilinear upsampling with half-pixel (align_corners = false)
// sampling; border samples clamp to the edge. For output index o the source
// coordinate is (o + 0.5) / factor - 0.5.

#[inline]
fn src_taps(o: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let s = (o as f64 + 0.5) / factor as f64 - 0.5;
    let f = s.floor();
    let i0 = (f.max(0.0) as usize).min(len - 1);
    let i1 = ((f + 1.0).max(0.0) as usize).min(len - 1);
    (i0, i1, s - f)
}

/// [N, C, H, W] -> [N, C, factor*H, factor*W].
pub fn bilinear_upsample<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(FotsError::Invalid("bilinear_upsample factor must be >= 1".into()));
    }
    if input.shape().len() != 4 {
        return Err(FotsError::Invalid(format!(
            "bilinear_upsample input must be rank 4, got {}",
            input.shape().len()
        )));
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (factor * h, factor * w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let id = input.data();
    let od = out.data_mut();
    let taps_w: Vec<(usize, usize, f64)> = (0..ow).map(|o| src_taps(o, factor, w)).collect();
    let taps_h: Vec<(usize, usize, f64)> = (0..oh).map(|o| src_taps(o, factor, h)).collect();
    for plane in 0..n * c {
        for (r, &(r0, r1, fy)) in taps_h.iter().enumerate() {
            let row0 = (plane * h + r0) * w;
            let row1 = (plane * h + r1) * w;
            let ob = (plane * oh + r) * ow;
            let wy1 = T::from_f64(fy);
            let wy0 = T::one() - wy1;
            for (oc, &(c0, c1, fx)) in taps_w.iter().enumerate() {
                let wx1 = T::from_f64(fx);
                let wx0 = T::one() - wx1;
                let top = wx0 * id[row0 + c0] + wx1 * id[row0 + c1];
                let bot = wx0 * id[row1 + c0] + wx1 * id[row1 + c1];
                od[ob + oc] = wy0 * top + wy1 * bot;
            }
        }
    }
    Ok(out)
}

pub fn bilinear_upsample_backward<T: Scalar>(
    in_shape: &[usize],
    factor: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (factor * h, factor * w);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(FotsError::Invalid(
            "bilinear_upsample_backward grad shape mismatch".into(),
        ));
    }
    let mut gi = Tensor::zeros(in_shape);
    let gd = grad_out.data();
    let gid = gi.data_mut();
    let taps_w: Vec<(usize, usize, f64)> = (0..ow).map(|o| src_taps(o, factor, w)).collect();
    let taps_h: Vec<(usize, usize, f64)> = (0..oh).map(|o| src_taps(o, factor, h)).collect();
    for plane in 0..n * c {
        for (r, &(r0, r1, fy)) in taps_h.iter().enumerate() {
            let row0 = (plane * h + r0) * w;
            let row1 = (plane * h + r1) * w;
            let ob = (plane * oh + r) * ow;
            let wy1 = T::from_f64(fy);
            let wy0 = T::one() - wy1;
            for (oc, &(c0, c1, fx)) in taps_w.iter().enumerate() {
                let g = gd[ob + oc];
                let wx1 = T::from_f64(fx);
                let wx0 = T::one() - wx1;
                gid[row0 + c0] += g * wy0 * wx0;
                gid[row0 + c1] += g * wy0 * wx1;
                gid[row1 + c0] += g * wy1 * wx0;
                gid[row1 + c1] += g * wy1 * wx1;
            }
        }
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplies_extents_by_factor() {
        let x: Tensor<f32> = Tensor::zeros(&[1, 3, 5, 7]);
        assert_eq!(bilinear_upsample(&x, 2).unwrap().shape(), &[1, 3, 10, 14]);
        assert_eq!(bilinear_upsample(&x, 3).unwrap().shape(), &[1, 3, 15, 21]);
        assert_eq!(bilinear_upsample(&x, 1).unwrap().shape(), x.shape());
    }

    #[test]
    fn factor_zero_is_rejected() {
        let x: Tensor<f32> = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(bilinear_upsample(&x, 0).is_err());
    }

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor::full(&[1, 1, 3, 3], 2.5f64);
        let y = bilinear_upsample(&x, 4).unwrap();
        for &v in y.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_ramp_stays_monotone() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0f64, 1.0]);
        let y = bilinear_upsample(&x, 2).unwrap();
        // source x coords -0.25, 0.25, 0.75, 1.25 -> 0, 0.25, 0.75, 1;
        // the single row doubles into two identical rows
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&y.data()[4..], &[0.0, 0.25, 0.75, 1.0]);
    }
}
