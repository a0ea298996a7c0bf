//! Dense per-pixel detection: ground-truth map construction, online hard
//! example mining, the classification/regression loss pair, and decoding of
//! score/geometry maps into scored rotated boxes.
//!
//! Maps live at 1/4 input resolution; map pixel (row i, col j) corresponds to
//! image point (4j, 4i). Geometry channels hold (t, b, l, r) distances in
//! input-image pixels; the angle map holds radians.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::TextProposal;
use crate::error::{FotsError, Result};
use crate::geometry::{
    point_in_convex, polygon_area, quad_to_rbox, rbox_to_quad, rotated_nms, RBoxGeo, ScoredBox,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAP_STRIDE: usize = 4;
/// Probability clamp for the cross-entropy terms.
pub const PROB_CLAMP: f64 = 1e-7;
/// Floor applied to IoU before taking its log.
pub const IOU_CLAMP: f64 = 1e-7;

pub const OHEM_HARD_NEG: usize = 512;
pub const OHEM_RAND_NEG: usize = 512;
pub const OHEM_HARD_POS: usize = 128;
pub const OHEM_RAND_POS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskState {
    Negative,
    NotCare,
    Positive,
}

/// Dense per-pixel maps; serves both ground truth (mask meaningful) and
/// predictions (mask all NEGATIVE).
#[derive(Clone, Debug)]
pub struct ScoreGeoMaps<T> {
    pub score: Tensor<T>,  // [1, h, w]
    pub geo: Tensor<T>,    // [4, h, w]: t, b, l, r
    pub angle: Tensor<T>,  // [1, h, w]
    pub mask: Vec<MaskState>,
}

impl<T: Scalar> ScoreGeoMaps<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        ScoreGeoMaps {
            score: Tensor::zeros(&[1, h, w]),
            geo: Tensor::zeros(&[4, h, w]),
            angle: Tensor::zeros(&[1, h, w]),
            mask: vec![MaskState::Negative; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.score.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.score.shape()[2]
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GtStats {
    /// Pixels claimed positive by more than one annotation (later wins).
    pub overlapping_positives: usize,
    /// Annotations whose shrunk quad collapsed (kept as NOT_CARE only).
    pub degenerate_shrink: usize,
}

/// Rasterize annotations into training targets. Pixels inside the shrunk
/// quad are POSITIVE with geometry of the full quad; the band between full
/// and shrunk quad is NOT_CARE; DO-NOT-CARE annotations mark their full quad
/// NOT_CARE. Later annotations overwrite earlier ones.
pub fn build_ground_truth<T: Scalar>(
    annotations: &[TextProposal],
    image_hw: (usize, usize),
    shrink_ratio: f64,
) -> Result<(ScoreGeoMaps<T>, GtStats)> {
    let (ih, iw) = image_hw;
    if ih % MAP_STRIDE != 0 || iw % MAP_STRIDE != 0 {
        return Err(FotsError::Invalid(format!(
            "image size {ih}x{iw} not divisible by {MAP_STRIDE}"
        )));
    }
    let (h, w) = (ih / MAP_STRIDE, iw / MAP_STRIDE);
    let mut maps = ScoreGeoMaps::zeros(h, w);
    let mut stats = GtStats::default();
    for ann in annotations {
        let full = &ann.quad;
        if polygon_area(&full.pts) <= 0.0 {
            continue;
        }
        let shrunk = if ann.is_dont_care() {
            None
        } else {
            match crate::geometry::shrink_quad(full, shrink_ratio) {
                Ok(s) => Some(s),
                Err(_) => {
                    stats.degenerate_shrink += 1;
                    None
                }
            }
        };
        // feature-space bounding box of the full quad
        let bounds = crate::geometry::min_horizontal_rect(full);
        let j0 = (bounds[0] / MAP_STRIDE as f64).floor().max(0.0) as usize;
        let i0 = (bounds[1] / MAP_STRIDE as f64).floor().max(0.0) as usize;
        let j1 = ((bounds[2] / MAP_STRIDE as f64).ceil() as usize).min(w.saturating_sub(1));
        let i1 = ((bounds[3] / MAP_STRIDE as f64).ceil() as usize).min(h.saturating_sub(1));
        if j0 > j1 || i0 > i1 {
            continue;
        }
        for i in i0..=i1 {
            for j in j0..=j1 {
                let p = [(j * MAP_STRIDE) as f64, (i * MAP_STRIDE) as f64];
                if !point_in_convex(&full.pts, p) {
                    continue;
                }
                let idx = i * w + j;
                let inside_shrunk = shrunk
                    .as_ref()
                    .map(|s| point_in_convex(&s.pts, p))
                    .unwrap_or(false);
                if inside_shrunk {
                    if maps.mask[idx] == MaskState::Positive {
                        stats.overlapping_positives += 1;
                    }
                    maps.mask[idx] = MaskState::Positive;
                    maps.score.data_mut()[idx] = T::one();
                    let g = quad_to_rbox(p, full);
                    let hw = h * w;
                    maps.geo.data_mut()[idx] = T::from_f64(g.t);
                    maps.geo.data_mut()[hw + idx] = T::from_f64(g.b);
                    maps.geo.data_mut()[2 * hw + idx] = T::from_f64(g.l);
                    maps.geo.data_mut()[3 * hw + idx] = T::from_f64(g.r);
                    maps.angle.data_mut()[idx] = T::from_f64(g.theta);
                } else {
                    maps.mask[idx] = MaskState::NotCare;
                    maps.score.data_mut()[idx] = T::zero();
                }
            }
        }
    }
    Ok((maps, stats))
}

#[derive(Clone, Debug, Default)]
pub struct OhemSelection {
    /// Pixel indices entering the classification loss (all positives plus
    /// hard/random negatives).
    pub cls_indices: Vec<usize>,
    /// Pixel indices entering the regression loss (positives only).
    pub reg_indices: Vec<usize>,
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[inline]
fn pixel_cls_loss(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[inline]
fn geo_at<T: Scalar>(geo: &Tensor<T>, angle: &Tensor<T>, idx: usize) -> RBoxGeo {
    let hw = geo.shape()[1] * geo.shape()[2];
    RBoxGeo::new(
        geo.data()[idx].to_f64(),
        geo.data()[hw + idx].to_f64(),
        geo.data()[2 * hw + idx].to_f64(),
        geo.data()[3 * hw + idx].to_f64(),
        angle.data()[idx].to_f64(),
    )
}

/// -ln(IoU) + lambda_theta (1 - cos dtheta) for one pixel, IoU in the
/// box-local axis-aligned form.
fn pixel_reg_loss(p: &RBoxGeo, g: &RBoxGeo, lambda_theta: f64) -> f64 {
    let wi = p.l.min(g.l) + p.r.min(g.r);
    let hi = p.t.min(g.t) + p.b.min(g.b);
    let inter = wi * hi;
    let union = p.height() * p.width() + g.height() * g.width() - inter;
    let iou = (inter / union).max(IOU_CLAMP);
    -iou.ln() + lambda_theta * (1.0 - (p.theta - g.theta).cos())
}

/// Same, plus the gradient w.r.t. the five predicted values.
fn pixel_reg_loss_grad(p: &RBoxGeo, g: &RBoxGeo, lambda_theta: f64) -> (f64, [f64; 5]) {
    let wi = p.l.min(g.l) + p.r.min(g.r);
    let hi = p.t.min(g.t) + p.b.min(g.b);
    let inter = wi * hi;
    let area_p = p.height() * p.width();
    let union = area_p + g.height() * g.width() - inter;
    let iou = inter / union;
    let loss = -iou.max(IOU_CLAMP).ln() + lambda_theta * (1.0 - (p.theta - g.theta).cos());
    if iou <= IOU_CLAMP {
        // clamped: only the angle term carries gradient
        return (loss, [0.0, 0.0, 0.0, 0.0, lambda_theta * (p.theta - g.theta).sin()]);
    }
    // d(-ln iou)/dv = -(I'/I - U'/U) with U' = A_p' - I'
    let mut grad = [0.0; 5];
    let dims = [
        (p.t, g.t, hi, wi, p.width()), // dI/dt = [t<t*] * wi ; dA/dt = width
        (p.b, g.b, hi, wi, p.width()),
        (p.l, g.l, wi, hi, p.height()),
        (p.r, g.r, wi, hi, p.height()),
    ];
    for (k, &(pv, gv, _side, other, darea)) in dims.iter().enumerate() {
        let di = if pv < gv { other } else { 0.0 };
        let du = darea - di;
        grad[k] = -(di / inter - du / union);
    }
    grad[4] = lambda_theta * (p.theta - g.theta).sin();
    (loss, grad)
}

/// Pick classification and regression pixels: all positives for cls plus up
/// to 512 hard + 512 random negatives; up to 128 hard + 128 random positives
/// for regression. Hardness is ranked by current per-pixel loss.
pub fn select_ohem<T: Scalar>(
    pred: &ScoreGeoMaps<T>,
    gt: &ScoreGeoMaps<T>,
    lambda_theta: f64,
    rng: &mut ChaCha8Rng,
) -> OhemSelection {
    let n = gt.mask.len();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for idx in 0..n {
        match gt.mask[idx] {
            MaskState::Positive => positives.push(idx),
            MaskState::Negative => negatives.push(idx),
            MaskState::NotCare => {}
        }
    }

    // negatives ranked by classification loss against target 0
    let mut neg_ranked: Vec<(f64, usize)> = negatives
        .iter()
        .map(|&idx| (pixel_cls_loss(pred.score.data()[idx].to_f64(), 0.0), idx))
        .collect();
    neg_ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let hard_n = neg_ranked.len().min(OHEM_HARD_NEG);
    let mut cls_indices = positives.clone();
    cls_indices.extend(neg_ranked[..hard_n].iter().map(|&(_, i)| i));
    let mut rest: Vec<usize> = neg_ranked[hard_n..].iter().map(|&(_, i)| i).collect();
    let take = rest.len().min(OHEM_RAND_NEG);
    rest.partial_shuffle(rng, take);
    cls_indices.extend(&rest[..take]);

    // positives ranked by regression loss
    let reg_indices = if positives.len() <= OHEM_HARD_POS + OHEM_RAND_POS {
        positives
    } else {
        let mut pos_ranked: Vec<(f64, usize)> = positives
            .iter()
            .map(|&idx| {
                let pg = geo_at(&pred.geo, &pred.angle, idx);
                let gg = geo_at(&gt.geo, &gt.angle, idx);
                (pixel_reg_loss(&pg, &gg, lambda_theta), idx)
            })
            .collect();
        pos_ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut reg: Vec<usize> = pos_ranked[..OHEM_HARD_POS].iter().map(|&(_, i)| i).collect();
        let mut rest: Vec<usize> = pos_ranked[OHEM_HARD_POS..].iter().map(|&(_, i)| i).collect();
        let take = rest.len().min(OHEM_RAND_POS);
        rest.partial_shuffle(rng, take);
        reg.extend(&rest[..take]);
        reg
    };

    OhemSelection {
        cls_indices,
        reg_indices,
    }
}

/// Mean cross entropy over the selected pixels; returns the loss and its
/// gradient w.r.t. the predicted score map.
pub fn classification_loss<T: Scalar>(
    pred_score: &Tensor<T>,
    gt: &ScoreGeoMaps<T>,
    sel: &OhemSelection,
) -> (T, Tensor<T>) {
    let mut grad = Tensor::zeros(pred_score.shape());
    if sel.cls_indices.is_empty() {
        return (T::zero(), grad);
    }
    let inv = 1.0 / sel.cls_indices.len() as f64;
    let mut total = 0.0;
    for &idx in &sel.cls_indices {
        let p = pred_score.data()[idx].to_f64();
        let y = gt.score.data()[idx].to_f64();
        total += pixel_cls_loss(p, y);
        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            grad.data_mut()[idx] = T::from_f64((p - y) / (p * (1.0 - p)) * inv);
        }
    }
    (T::from_f64(total * inv), grad)
}

/// Mean box-IoU + angle loss over the selected positive pixels; returns the
/// loss and gradients w.r.t. the predicted geometry and angle maps.
pub fn regression_loss<T: Scalar>(
    pred_geo: &Tensor<T>,
    pred_angle: &Tensor<T>,
    gt: &ScoreGeoMaps<T>,
    sel: &OhemSelection,
    lambda_theta: f64,
) -> (T, Tensor<T>, Tensor<T>) {
    let mut dgeo = Tensor::zeros(pred_geo.shape());
    let mut dangle = Tensor::zeros(pred_angle.shape());
    if sel.reg_indices.is_empty() {
        return (T::zero(), dgeo, dangle);
    }
    let hw = pred_geo.shape()[1] * pred_geo.shape()[2];
    let inv = 1.0 / sel.reg_indices.len() as f64;
    let mut total = 0.0;
    for &idx in &sel.reg_indices {
        let pg = geo_at(pred_geo, pred_angle, idx);
        let gg = geo_at(&gt.geo, &gt.angle, idx);
        let (loss, g) = pixel_reg_loss_grad(&pg, &gg, lambda_theta);
        total += loss;
        for k in 0..4 {
            dgeo.data_mut()[k * hw + idx] = T::from_f64(g[k] * inv);
        }
        dangle.data_mut()[idx] = T::from_f64(g[4] * inv);
    }
    (T::from_f64(total * inv), dgeo, dangle)
}

/// L_detect = L_cls + lambda_reg * L_reg.
pub fn detection_loss<T: Scalar>(cls: T, reg: T, lambda_reg: T) -> T {
    cls + lambda_reg * reg
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DecodeStats {
    pub candidates: usize,
    pub dropped_degenerate: usize,
}

/// Threshold the score map, convert each surviving pixel's geometry into a
/// quad anchored at its image position, then apply rotated NMS.
pub fn decode_predictions<T: Scalar>(
    maps: &ScoreGeoMaps<T>,
    score_thresh: f64,
    nms_thresh: f64,
) -> (Vec<ScoredBox>, DecodeStats) {
    let (h, w) = (maps.height(), maps.width());
    let mut boxes = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            let score = maps.score.data()[idx].to_f64();
            if score < score_thresh {
                continue;
            }
            let g = geo_at(&maps.geo, &maps.angle, idx);
            let anchor = [(j * MAP_STRIDE) as f64, (i * MAP_STRIDE) as f64];
            if let Ok(quad) = rbox_to_quad(anchor, &g) {
                boxes.push(ScoredBox {
                    quad,
                    theta: g.theta,
                    score,
                });
            }
        }
    }
    let candidates = boxes.len();
    let (kept, dropped) = rotated_nms(&boxes, nms_thresh);
    (
        kept,
        DecodeStats {
            candidates,
            dropped_degenerate: dropped,
        },
    )
}
