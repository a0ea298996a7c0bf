//! Rotated region extraction: build the affine transform that maps an
//! oriented box onto a fixed-height horizontal strip, sample it bilinearly
//! from a feature map, and scatter gradients back through the sampling.
//!
//! All coordinates here live in feature-map pixels. The transform sends the
//! box's top-left corner to (0, 0) and its bottom-right corner to
//! (scale * (l + r), out_height), preserving aspect ratio.

use crate::error::{FotsError, Result};
use crate::geometry::{rot, Point, RBoxGeo};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AffineParams {
    /// Row-major 3x3 matrix mapping feature coords to strip coords.
    pub matrix: [[f64; 3]; 3],
    pub out_height: usize,
    pub out_width: usize,
    /// Height scale out_height / (t + b); widths scale by the same factor.
    pub scale: f64,
    /// True when the rounded width exceeded the cap and was clipped.
    pub clamped: bool,
}

/// Compute the strip transform for one oriented box. Width is
/// round-half-up(scale * (l + r)), at least 1 and at most `max_width`.
pub fn affine_params(
    anchor: Point,
    geo: &RBoxGeo,
    out_height: usize,
    max_width: usize,
) -> Result<AffineParams> {
    let height = geo.height();
    let width = geo.width();
    if !(height > 0.0 && width > 0.0) || out_height == 0 || max_width == 0 {
        return Err(FotsError::Invalid(format!(
            "degenerate region: extents {width}x{height}, strip {out_height} capped {max_width}"
        )));
    }
    let s = out_height as f64 / height;
    let (c, s_) = (geo.theta.cos(), geo.theta.sin());
    let (x, y) = (anchor[0], anchor[1]);
    // translate so the top-left corner lands at the origin, rotate level,
    // then scale the height to out_height
    let tx = geo.l * c - geo.t * s_ - x;
    let ty = geo.t * c + geo.l * s_ - y;
    let matrix = [
        [s * c, s * s_, s * (c * tx + s_ * ty)],
        [-s * s_, s * c, s * (c * ty - s_ * tx)],
        [0.0, 0.0, 1.0],
    ];
    let ideal = s * width;
    let rounded = ((ideal + 0.5).floor() as usize).max(1);
    let clamped = rounded > max_width;
    Ok(AffineParams {
        matrix,
        out_height,
        out_width: rounded.min(max_width),
        scale: s,
        clamped,
    })
}

impl AffineParams {
    /// Map a feature-map point into strip coordinates.
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    /// Map a strip point back into feature-map coordinates.
    pub fn invert(&self, p: Point) -> Point {
        let m = &self.matrix;
        // linear part is scale * rotation, so the inverse is its transpose
        // over scale^2, applied after removing the translation
        let (dx, dy) = (p[0] - m[0][2], p[1] - m[1][2]);
        let inv = 1.0 / (self.scale * self.scale);
        [
            (m[0][0] * dx + m[1][0] * dy) * inv,
            (m[0][1] * dx + m[1][1] * dy) * inv,
        ]
    }
}

#[inline]
fn bilinear_taps(v: f64, limit: usize) -> [(usize, f64); 2] {
    // hat-kernel weights over the two integer neighbours; out-of-range taps
    // get weight zero (border fill)
    let f = v.floor();
    let frac = v - f;
    let mut taps = [(0usize, 0.0f64); 2];
    for (k, (off, wgt)) in [(0.0, 1.0 - frac), (1.0, frac)].iter().enumerate() {
        let q = f + off;
        if q >= 0.0 && (q as usize) < limit && *wgt > 0.0 {
            taps[k] = (q as usize, *wgt);
        }
    }
    taps
}

/// Sample one region into a [C, out_height, out_width] strip.
pub fn roi_rotate_forward<T: Scalar>(features: &Tensor<T>, params: &AffineParams) -> Tensor<T> {
    let (ch, fh, fw) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    );
    let (oh, ow) = (params.out_height, params.out_width);
    let mut out = Tensor::zeros(&[ch, oh, ow]);
    for i in 0..oh {
        for j in 0..ow {
            let src = params.invert([j as f64, i as f64]);
            let tx = bilinear_taps(src[0], fw);
            let ty = bilinear_taps(src[1], fh);
            let mut wsum = [0.0f64; 4];
            let mut k = 0;
            for &(_, wy) in &ty {
                for &(_, wx) in &tx {
                    wsum[k] = wy * wx;
                    k += 1;
                }
            }
            for c in 0..ch {
                let base = c * fh * fw;
                let mut v = 0.0f64;
                let mut k = 0;
                for &(yy, _) in &ty {
                    for &(xx, _) in &tx {
                        if wsum[k] > 0.0 {
                            v += wsum[k] * features.data()[base + yy * fw + xx].to_f64();
                        }
                        k += 1;
                    }
                }
                out.data_mut()[c * oh * ow + i * ow + j] = T::from_f64(v);
            }
        }
    }
    out
}

/// Scatter strip gradients back to the feature map (sampling is linear, so
/// the backward uses the same four taps per output pixel).
pub fn roi_rotate_backward<T: Scalar>(
    feat_shape: &[usize],
    params: &AffineParams,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (ch, fh, fw) = (feat_shape[0], feat_shape[1], feat_shape[2]);
    let (oh, ow) = (params.out_height, params.out_width);
    let mut grad = Tensor::zeros(feat_shape);
    for i in 0..oh {
        for j in 0..ow {
            let src = params.invert([j as f64, i as f64]);
            let tx = bilinear_taps(src[0], fw);
            let ty = bilinear_taps(src[1], fh);
            for c in 0..ch {
                let g = grad_out.data()[c * oh * ow + i * ow + j].to_f64();
                if g == 0.0 {
                    continue;
                }
                let base = c * fh * fw;
                for &(yy, wy) in &ty {
                    for &(xx, wx) in &tx {
                        let wgt = wy * wx;
                        if wgt > 0.0 {
                            let cell = &mut grad.data_mut()[base + yy * fw + xx];
                            *cell = *cell + T::from_f64(wgt * g);
                        }
                    }
                }
            }
        }
    }
    grad
}

/// One region request: anchor point plus box geometry, in feature coords.
#[derive(Clone, Debug)]
pub struct RoiSpec {
    pub anchor: Point,
    pub geo: RBoxGeo,
}

/// Fixed-height strips for a batch of regions, right-padded with zeros to
/// the widest region.
#[derive(Clone, Debug)]
pub struct RoiBatch<T> {
    /// [N, C, out_height, max_width]
    pub features: Tensor<T>,
    pub widths: Vec<usize>,
    /// [N, max_width]: 1 inside a region's true width, 0 in padding.
    pub mask: Tensor<T>,
}

/// Extract every region into one padded batch. Returns the batch plus the
/// per-region transforms (needed for the backward pass).
pub fn batch_extract<T: Scalar>(
    features: &Tensor<T>,
    specs: &[RoiSpec],
    out_height: usize,
) -> Result<(RoiBatch<T>, Vec<AffineParams>)> {
    if specs.is_empty() {
        return Err(FotsError::Invalid("no regions to extract".into()));
    }
    let (ch, fw) = (features.shape()[0], features.shape()[2]);
    let mut params = Vec::with_capacity(specs.len());
    for spec in specs {
        params.push(affine_params(spec.anchor, &spec.geo, out_height, fw)?);
    }
    let max_w = params.iter().map(|p| p.out_width).max().unwrap();
    let n = specs.len();
    let mut batch = Tensor::zeros(&[n, ch, out_height, max_w]);
    let mut mask = Tensor::zeros(&[n, max_w]);
    let mut widths = Vec::with_capacity(n);
    for (r, p) in params.iter().enumerate() {
        let strip = roi_rotate_forward(features, p);
        let w = p.out_width;
        widths.push(w);
        for c in 0..ch {
            for i in 0..out_height {
                let src = &strip.data()[(c * out_height + i) * w..(c * out_height + i + 1) * w];
                let dst_off = ((r * ch + c) * out_height + i) * max_w;
                batch.data_mut()[dst_off..dst_off + w].copy_from_slice(src);
            }
        }
        for j in 0..w {
            mask.data_mut()[r * max_w + j] = T::one();
        }
    }
    Ok((
        RoiBatch {
            features: batch,
            widths,
            mask,
        },
        params,
    ))
}

/// Accumulate strip gradients from all regions back onto the feature map.
pub fn batch_extract_backward<T: Scalar>(
    feat_shape: &[usize],
    params: &[AffineParams],
    grad_batch: &Tensor<T>,
) -> Tensor<T> {
    let ch = feat_shape[0];
    let (oh, max_w) = (grad_batch.shape()[2], grad_batch.shape()[3]);
    let mut grad = Tensor::zeros(feat_shape);
    for (r, p) in params.iter().enumerate() {
        let w = p.out_width;
        let mut strip_grad = Tensor::zeros(&[ch, oh, w]);
        for c in 0..ch {
            for i in 0..oh {
                let src_off = ((r * ch + c) * oh + i) * max_w;
                let dst = &mut strip_grad.data_mut()[(c * oh + i) * w..(c * oh + i + 1) * w];
                dst.copy_from_slice(&grad_batch.data()[src_off..src_off + w]);
            }
        }
        let g = roi_rotate_backward(feat_shape, p, &strip_grad);
        grad.add_assign(&g);
    }
    grad
}

/// Convenience for tests: the four box corners in feature coords, ordered
/// top-left, top-right, bottom-right, bottom-left.
pub fn box_corners(anchor: Point, geo: &RBoxGeo) -> [Point; 4] {
    let offsets = [
        [-geo.l, -geo.t],
        [geo.r, -geo.t],
        [geo.r, geo.b],
        [-geo.l, geo.b],
    ];
    let mut out = [[0.0; 2]; 4];
    for (k, off) in offsets.iter().enumerate() {
        let r = rot(geo.theta, *off);
        out[k] = [anchor[0] + r[0], anchor[1] + r[1]];
    }
    out
}
