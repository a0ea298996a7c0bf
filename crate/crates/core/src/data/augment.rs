//! Training-time augmentation: rescale, small rotation, height-only
//! rescale, then a square crop — applied as one composed affine so the
//! image is resampled exactly once. Regions losing too much area to the
//! crop are relabeled DO-NOT-CARE; nothing is ever dropped.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Sample, TextProposal, DO_NOT_CARE};
use crate::error::{FotsError, Result};
use crate::geometry::{clip_convex, polygon_area, rot, Quad};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AugmentConfig {
    /// Target range for the longer image side, pixels.
    pub long_side: (f64, f64),
    /// Rotation drawn uniformly from [-max_rotate, max_rotate], radians.
    pub max_rotate: f64,
    pub height_scale: (f64, f64),
    /// Square crop side; output is always crop x crop.
    pub crop: usize,
    /// Fraction of area a region may lose to the crop before it becomes
    /// DO-NOT-CARE.
    pub dnc_cut_ratio: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            long_side: (320.0, 384.0),
            max_rotate: 10f64.to_radians(),
            height_scale: (0.8, 1.2),
            crop: 320,
            dnc_cut_ratio: 0.3,
        }
    }
}

/// Concrete draw of the augmentation chain.
#[derive(Clone, Copy, Debug)]
pub struct AugmentParams {
    pub scale: f64,
    pub theta: f64,
    pub height_scale: f64,
    pub crop_offset: (f64, f64),
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            theta: 0.0,
            height_scale: 1.0,
            crop_offset: (0.0, 0.0),
        }
    }

    fn is_identity(&self) -> bool {
        self.scale == 1.0
            && self.theta == 0.0
            && self.height_scale == 1.0
            && self.crop_offset == (0.0, 0.0)
    }

    /// Source-image point to output point.
    fn forward(&self, p: [f64; 2], src_hw: (usize, usize)) -> [f64; 2] {
        let cx = src_hw.1 as f64 * self.scale / 2.0;
        let cy = src_hw.0 as f64 * self.scale / 2.0;
        let scaled = [p[0] * self.scale, p[1] * self.scale];
        let r = rot(self.theta, [scaled[0] - cx, scaled[1] - cy]);
        [
            r[0] + cx - self.crop_offset.0,
            (r[1] + cy) * self.height_scale - self.crop_offset.1,
        ]
    }

    /// Output point back to source-image coordinates.
    fn inverse(&self, p: [f64; 2], src_hw: (usize, usize)) -> [f64; 2] {
        let cx = src_hw.1 as f64 * self.scale / 2.0;
        let cy = src_hw.0 as f64 * self.scale / 2.0;
        let x = p[0] + self.crop_offset.0;
        let y = (p[1] + self.crop_offset.1) / self.height_scale;
        let r = rot(-self.theta, [x - cx, y - cy]);
        [(r[0] + cx) / self.scale, (r[1] + cy) / self.scale]
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Draw parameters from the config and apply them.
pub fn augment(sample: &Sample, config: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Sample> {
    if config.crop == 0 || config.crop % 4 != 0 {
        return Err(FotsError::Invalid(format!(
            "crop size {} must be a positive multiple of 4",
            config.crop
        )));
    }
    let (h0, w0) = (sample.height(), sample.width());
    let long0 = h0.max(w0) as f64;
    let scale = uniform(rng, config.long_side) / long0;
    let theta = if config.max_rotate > 0.0 {
        rng.gen_range(-config.max_rotate..=config.max_rotate)
    } else {
        0.0
    };
    let height_scale = uniform(rng, config.height_scale);
    let w2 = w0 as f64 * scale;
    let h2 = h0 as f64 * scale * height_scale;
    let max_ox = (w2 - config.crop as f64).floor().max(0.0) as u64;
    let max_oy = (h2 - config.crop as f64).floor().max(0.0) as u64;
    let ox = if max_ox > 0 {
        rng.gen_range(0..=max_ox) as f64
    } else {
        0.0
    };
    let oy = if max_oy > 0 {
        rng.gen_range(0..=max_oy) as f64
    } else {
        0.0
    };
    let params = AugmentParams {
        scale,
        theta,
        height_scale,
        crop_offset: (ox, oy),
    };
    Ok(apply_augment(sample, &params, config.crop, config.dnc_cut_ratio))
}

/// Apply a fixed parameter draw. Identity parameters with a crop matching
/// the input size return the sample unchanged, bit for bit.
pub fn apply_augment(
    sample: &Sample,
    params: &AugmentParams,
    crop: usize,
    dnc_cut_ratio: f64,
) -> Sample {
    let (h0, w0) = (sample.height(), sample.width());
    if params.is_identity() && crop == h0 && crop == w0 {
        return sample.clone();
    }
    let ch = sample.channels();
    let mut image = Tensor::<f32>::zeros(&[ch, crop, crop]);
    let src = (h0, w0);
    for i in 0..crop {
        for j in 0..crop {
            let p = params.inverse([j as f64, i as f64], src);
            let (x, y) = (p[0], p[1]);
            if x < 0.0 || y < 0.0 || x > (w0 - 1) as f64 || y > (h0 - 1) as f64 {
                continue;
            }
            let x0 = x.floor();
            let y0 = y.floor();
            let (fx, fy) = (x - x0, y - y0);
            let (x0, y0) = (x0 as usize, y0 as usize);
            let x1 = (x0 + 1).min(w0 - 1);
            let y1 = (y0 + 1).min(h0 - 1);
            for c in 0..ch {
                let at = |yy: usize, xx: usize| sample.image.data()[(c * h0 + yy) * w0 + xx] as f64;
                let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + at(y0, x1) * fx * (1.0 - fy)
                    + at(y1, x0) * (1.0 - fx) * fy
                    + at(y1, x1) * fx * fy;
                image.data_mut()[(c * crop + i) * crop + j] = v as f32;
            }
        }
    }
    let crop_rect = Quad::from_rect(0.0, 0.0, crop as f64, crop as f64);
    let proposals = sample
        .proposals
        .iter()
        .map(|p| {
            let mut quad = Quad {
                pts: [[0.0; 2]; 4],
            };
            for (k, v) in p.quad.pts.iter().enumerate() {
                quad.pts[k] = params.forward(*v, src);
            }
            let full = polygon_area(&quad.pts).abs();
            let visible = polygon_area(&clip_convex(&quad.pts, &crop_rect)).abs();
            let cut = if full > 0.0 { 1.0 - visible / full } else { 1.0 };
            let transcription = if p.is_dont_care() || cut > dnc_cut_ratio {
                DO_NOT_CARE.to_string()
            } else {
                p.transcription.clone()
            };
            TextProposal::new(quad, transcription)
        })
        .collect();
    Sample {
        image,
        proposals,
        seed: sample.seed,
    }
}
