//! End-to-end wiring: dataset assembly, the joint and two-stage training
//! loops, inference, evaluation, and benchmarking.
//!
//! Random streams are keyed by purpose (sample order, augmentation, hard
//! example sampling, dropout), so disabling one consumer never shifts the
//! draws seen by another — ablated runs stay step-comparable.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint;
use crate::config::{Mode, ModelConfig};
use crate::ctc::{ctc_greedy_decode, ctc_loss, is_feasible};
use crate::data::{
    augment, load_icdar, parse_manifest, render_synthetic, AugmentConfig, RenderConfig, Sample,
    TextProposal,
};
use crate::detect::{
    build_ground_truth, classification_loss, decode_predictions, regression_loss, select_ohem,
    MAP_STRIDE,
};
use crate::error::{FotsError, Result};
use crate::geometry::{polygon_iou, quad_to_rbox, RBoxGeo};
use crate::model::{CropRecognizer, SpottingModel, CROP_HEIGHT};
use crate::optim::{clip_grad_norm, SgdMomentum};
use crate::recognize::{lexicon_match, CharSet, RecognitionNet};
use crate::rng::stream;
use crate::roirotate::{batch_extract, batch_extract_backward, roi_rotate_forward, RoiSpec};
use crate::tensor::Tensor;

/// Built-in symbol table matching the synthetic glyph renderer.
pub fn builtin_charset() -> CharSet {
    let text: String = crate::data::GLYPH_SYMBOLS
        .chars()
        .map(|c| format!("{c}\n"))
        .collect();
    CharSet::from_text(&text).expect("builtin symbols are valid")
}

pub fn resolve_charset(config: &ModelConfig) -> Result<CharSet> {
    match &config.charset_path {
        Some(p) => CharSet::from_file(p),
        None => Ok(builtin_charset()),
    }
}

/// Deterministic synthetic dataset: sample k gets seed base_seed + k.
pub fn synthetic_dataset(render: &RenderConfig, count: usize, base_seed: u64) -> Result<Vec<Sample>> {
    (0..count)
        .map(|k| render_synthetic(render, base_seed + k as u64).map(|(s, _)| s))
        .collect()
}

pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    parse_manifest(manifest)?
        .iter()
        .map(|(img, gt)| load_icdar(img, gt))
        .collect()
}

/// The literal `--data` value that switches the CLI to generated data.
pub const SYNTHETIC_DATA: &str = "synthetic";

/// Global l2 cap on gradients per step; early regression errors are huge
/// (-ln of a near-zero overlap) and would otherwise launch momentum spirals.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Step-wise schedule: full rate for the first 80% of the run, a tenth for
/// the final stretch so boxes settle instead of orbiting their targets.
fn lr_decay(step: usize, total_steps: usize) -> f64 {
    if total_steps > 0 && step * 10 >= total_steps * 8 {
        0.1
    } else {
        1.0
    }
}

pub fn dataset_from_arg(arg: &str, config: &ModelConfig) -> Result<Vec<Sample>> {
    if arg == SYNTHETIC_DATA {
        let render = RenderConfig {
            size: (config.crop, config.crop),
            ..RenderConfig::default()
        };
        synthetic_dataset(&render, config.synth_count, config.seed.wrapping_mul(1000) + 1)
    } else {
        load_dataset(Path::new(arg))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub step: usize,
    pub cls: f64,
    pub reg: f64,
    pub recog: f64,
    pub total: f64,
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut body = String::from("step,cls,reg,recog,total\n");
    for row in trace {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.cls, row.reg, row.recog, row.total
        ));
    }
    std::fs::write(path, body).map_err(|e| FotsError::io(path, e))
}

/// Feature-space region spec for a ground-truth or predicted quad.
fn roi_spec_for_quad(quad: &crate::geometry::Quad) -> RoiSpec {
    let c = quad.centroid();
    let geo = quad_to_rbox(c, quad);
    RoiSpec {
        anchor: [c[0] / MAP_STRIDE as f64, c[1] / MAP_STRIDE as f64],
        geo: RBoxGeo::new(
            geo.t / MAP_STRIDE as f64,
            geo.b / MAP_STRIDE as f64,
            geo.l / MAP_STRIDE as f64,
            geo.r / MAP_STRIDE as f64,
            geo.theta,
        ),
    }
}

fn image_batch(sample: &Sample) -> Tensor<f32> {
    let sh = sample.image.shape();
    Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], sample.image.data().to_vec())
}

fn feature_map_3d(features: &Tensor<f32>) -> Tensor<f32> {
    let sh = features.shape();
    Tensor::from_vec(&[sh[1], sh[2], sh[3]], features.data().to_vec())
}

fn slice_strip(batch: &Tensor<f32>, region: usize, width: usize) -> Tensor<f32> {
    let (c, h, max_w) = (batch.shape()[1], batch.shape()[2], batch.shape()[3]);
    let mut out = Tensor::zeros(&[c, h, width]);
    for ch in 0..c {
        for i in 0..h {
            let src = ((region * c + ch) * h + i) * max_w;
            let dst = (ch * h + i) * width;
            out.data_mut()[dst..dst + width]
                .copy_from_slice(&batch.data()[src..src + width]);
        }
    }
    out
}

fn shuffled_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream(seed, "sample-order", epoch as u64));
    order
}

pub struct TrainedJoint {
    pub model: SpottingModel<f32>,
    pub charset: CharSet,
    pub trace: Vec<TraceRow>,
    /// Regions skipped because their label cannot fit the strip width.
    pub infeasible_labels: usize,
}

/// Joint training: detection losses over mined pixels plus the sequence
/// loss over ground-truth regions, one backward pass through the shared
/// features. Recognition supervision starts at the halfway epoch so the
/// shared features stabilise on detection first. `lambda_recog = 0` (or
/// DETECT_ONLY mode) skips the recognition branch entirely, so ablated runs
/// match detection-only runs step for step.
pub fn train_joint(
    dataset: &[Sample],
    config: &ModelConfig,
    epochs: usize,
) -> Result<TrainedJoint> {
    if dataset.is_empty() {
        return Err(FotsError::Invalid("empty training dataset".into()));
    }
    let charset = resolve_charset(config)?;
    let with_recog = config.mode == Mode::Joint && config.lambda_recog > 0.0;
    let recog_arch = with_recog.then(|| config.recog_arch(charset.num_classes()));
    let mut model = SpottingModel::<f32>::new(config.backbone_arch(), recog_arch, config.seed);
    let mut opt = SgdMomentum::new(config.lr as f32, config.momentum as f32);
    let mut trace = Vec::new();
    let mut infeasible = 0usize;
    let aug_cfg = AugmentConfig {
        crop: config.crop,
        ..AugmentConfig::default()
    };
    let mut step = 0usize;
    let total_steps = epochs * dataset.len();
    for epoch in 0..epochs {
        // let detection settle before recognition gradients start flowing
        // through the shared features; single-epoch runs skip the warmup
        let recog_on = epoch >= epochs / 2;
        for &idx in &shuffled_order(dataset.len(), config.seed, epoch) {
            opt.lr = (config.lr * lr_decay(step, total_steps)) as f32;
            let sample = if config.augment {
                augment(
                    &dataset[idx],
                    &aug_cfg,
                    &mut stream(config.seed, "augment", step as u64),
                )?
            } else {
                dataset[idx].clone()
            };
            let row = train_joint_step(
                &mut model,
                &mut opt,
                &charset,
                &sample,
                config,
                step,
                recog_on,
                &mut infeasible,
            )?;
            trace.push(row);
            step += 1;
        }
    }
    Ok(TrainedJoint {
        model,
        charset,
        trace,
        infeasible_labels: infeasible,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_joint_step(
    model: &mut SpottingModel<f32>,
    opt: &mut SgdMomentum<f32>,
    charset: &CharSet,
    sample: &Sample,
    config: &ModelConfig,
    step: usize,
    recog_on: bool,
    infeasible: &mut usize,
) -> Result<TraceRow> {
    let image = image_batch(sample);
    let (features, bb_cache) = model.backbone.forward_train(&image)?;
    let (pred_maps, head_cache) = model.head.forward_train(&features)?;
    let (gt, _) = build_ground_truth::<f32>(
        &sample.proposals,
        (sample.height(), sample.width()),
        config.shrink_ratio,
    )?;
    let sel = select_ohem(
        &pred_maps,
        &gt,
        config.lambda_theta,
        &mut stream(config.seed, "ohem", step as u64),
    );
    let (l_cls, d_score) = classification_loss(&pred_maps.score, &gt, &sel);
    let (l_reg, mut d_geo, mut d_angle) =
        regression_loss(&pred_maps.geo, &pred_maps.angle, &gt, &sel, config.lambda_theta);
    d_geo.scale(config.lambda_reg as f32);
    d_angle.scale(config.lambda_reg as f32);

    // recognition over ground-truth regions (shared features)
    let mut l_recog = 0.0f64;
    let mut grad_from_recog: Option<Tensor<f32>> = None;
    let run_recog = recog_on && model.recog.is_some() && config.lambda_recog > 0.0;
    if run_recog {
        let feats3 = feature_map_3d(&features);
        let mut specs = Vec::new();
        let mut labels = Vec::new();
        for p in &sample.proposals {
            if p.is_dont_care() {
                continue;
            }
            let ids = match charset.encode(&p.transcription) {
                Ok(ids) => ids,
                Err(_) => {
                    *infeasible += 1;
                    continue;
                }
            };
            specs.push(roi_spec_for_quad(&p.quad));
            labels.push(ids);
        }
        if !specs.is_empty() {
            let (batch, params) = batch_extract(&feats3, &specs, config.strip_height)?;
            let branch = model.recog.as_mut().expect("checked above");
            let mut per_region: Vec<(usize, Tensor<f32>, crate::recognize::RecogCache<f32>)> =
                Vec::new();
            let mut losses = Vec::new();
            for (r, ids) in labels.iter().enumerate() {
                let w = batch.widths[r];
                if !is_feasible(ids, w) {
                    *infeasible += 1;
                    continue;
                }
                let strip = slice_strip(&batch.features, r, w);
                let mut drop_rng =
                    stream(config.seed, "dropout", (step as u64) << 10 | r as u64);
                let (log_probs, cache) = branch.forward_train(&strip, &mut drop_rng)?;
                let (loss, grad) = ctc_loss(&log_probs, ids)?;
                losses.push(loss as f64);
                per_region.push((r, grad, cache));
            }
            if !per_region.is_empty() {
                let n = per_region.len() as f64;
                l_recog = losses.iter().sum::<f64>() / n;
                let scale = (config.lambda_recog / n) as f32;
                let mut grad_batch = Tensor::<f32>::zeros(batch.features.shape());
                for (r, mut grad, cache) in per_region {
                    grad.scale(scale);
                    let g_strip = branch.backward(&cache, &grad)?;
                    let w = batch.widths[r];
                    let (c, h, max_w) =
                        (batch.features.shape()[1], batch.features.shape()[2], batch.features.shape()[3]);
                    for ch in 0..c {
                        for i in 0..h {
                            let dst = ((r * c + ch) * h + i) * max_w;
                            let src = (ch * h + i) * w;
                            grad_batch.data_mut()[dst..dst + w]
                                .copy_from_slice(&g_strip.data()[src..src + w]);
                        }
                    }
                }
                let g3 = batch_extract_backward(feats3.shape(), &params, &grad_batch);
                let sh = features.shape().to_vec();
                grad_from_recog = Some(Tensor::from_vec(&sh, g3.into_data()));
            }
        }
    }

    let l_det = l_cls as f64 + config.lambda_reg * l_reg as f64;
    let total = l_det + config.lambda_recog * l_recog;
    if !total.is_finite() {
        return Err(FotsError::Numeric(format!(
            "step {step}: non-finite loss (cls {l_cls}, reg {l_reg}, recog {l_recog})"
        )));
    }

    let mut grad_features = model.head.backward(&head_cache, &d_score, &d_geo, &d_angle)?;
    if let Some(g) = grad_from_recog {
        grad_features.add_assign(&g);
    }
    model.backbone.backward(&bb_cache, &grad_features)?;
    clip_grad_norm(&mut model.params_mut(), GRAD_CLIP_NORM);
    opt.step(&mut model.params_mut())?;
    model.zero_grads();
    Ok(TraceRow {
        step,
        cls: l_cls as f64,
        reg: l_reg as f64,
        recog: l_recog,
        total,
    })
}

pub struct TrainedRecognizer {
    pub model: CropRecognizer<f32>,
    pub charset: CharSet,
    pub trace: Vec<TraceRow>,
    pub infeasible_labels: usize,
}

/// Train the standalone recognizer on ground-truth crops rectified straight
/// from the image at crop height.
pub fn train_recognizer(
    dataset: &[Sample],
    config: &ModelConfig,
    epochs: usize,
) -> Result<TrainedRecognizer> {
    if dataset.is_empty() {
        return Err(FotsError::Invalid("empty training dataset".into()));
    }
    let charset = resolve_charset(config)?;
    let mut model = CropRecognizer::<f32>::new(
        config.in_channels,
        config.crop_enc_channels,
        config.recog_arch(charset.num_classes()),
        config.seed,
    );
    let mut opt = SgdMomentum::new(config.lr as f32, config.momentum as f32);
    let mut trace = Vec::new();
    let mut infeasible = 0usize;
    let mut step = 0usize;
    let total_steps = epochs * dataset.len();
    for epoch in 0..epochs {
        for &idx in &shuffled_order(dataset.len(), config.seed, epoch) {
            opt.lr = (config.lr * lr_decay(step, total_steps)) as f32;
            let sample = &dataset[idx];
            let mut losses = Vec::new();
            let mut region = 0u64;
            for p in &sample.proposals {
                if p.is_dont_care() {
                    continue;
                }
                let ids = match charset.encode(&p.transcription) {
                    Ok(ids) => ids,
                    Err(_) => {
                        infeasible += 1;
                        continue;
                    }
                };
                let crop = match crop_from_image(&sample.image, &p.quad) {
                    Ok(c) => c,
                    Err(_) => {
                        infeasible += 1;
                        continue;
                    }
                };
                let mut drop_rng =
                    stream(config.seed, "dropout", (step as u64) << 10 | region);
                region += 1;
                let (log_probs, cache) = model.forward_train(&crop, &mut drop_rng)?;
                if !is_feasible(&ids, log_probs.shape()[0]) {
                    infeasible += 1;
                    continue;
                }
                let (loss, grad) = ctc_loss(&log_probs, &ids)?;
                losses.push(loss as f64);
                model.backward(&cache, &grad)?;
            }
            if !losses.is_empty() {
                // rescale accumulated gradients to the mean over regions
                let inv = 1.0 / losses.len() as f32;
                for p in model.params_mut() {
                    p.grad.scale(inv);
                }
                let mean: f64 = losses.iter().sum::<f64>() / losses.len() as f64;
                if !mean.is_finite() {
                    return Err(FotsError::Numeric(format!(
                        "step {step}: non-finite recognition loss"
                    )));
                }
                clip_grad_norm(&mut model.params_mut(), GRAD_CLIP_NORM);
                opt.step(&mut model.params_mut())?;
                model.zero_grads();
                trace.push(TraceRow {
                    step,
                    cls: 0.0,
                    reg: 0.0,
                    recog: mean,
                    total: mean,
                });
            }
            step += 1;
        }
    }
    Ok(TrainedRecognizer {
        model,
        charset,
        trace,
        infeasible_labels: infeasible,
    })
}

/// Rectify one ground-truth quad from the image into a crop-height strip.
pub fn crop_from_image(image: &Tensor<f32>, quad: &crate::geometry::Quad) -> Result<Tensor<f32>> {
    let c = quad.centroid();
    let geo = quad_to_rbox(c, quad);
    let params = crate::roirotate::affine_params(c, &geo, CROP_HEIGHT, image.shape()[2])?;
    if params.out_width < MAP_STRIDE {
        return Err(FotsError::Invalid(format!(
            "crop width {} too narrow to encode",
            params.out_width
        )));
    }
    Ok(roi_rotate_forward(image, &params))
}

pub struct TwoStage {
    pub detector: TrainedJoint,
    pub recognizer: TrainedRecognizer,
}

/// The separate-models baseline: a detection-only model plus a crop
/// recognizer, trained with the same seed and budget.
pub fn train_two_stage(
    dataset: &[Sample],
    config: &ModelConfig,
    epochs: usize,
) -> Result<TwoStage> {
    let mut det_cfg = config.clone();
    det_cfg.mode = Mode::DetectOnly;
    let detector = train_joint(dataset, &det_cfg, epochs)?;
    let recognizer = train_recognizer(dataset, config, epochs)?;
    Ok(TwoStage {
        detector,
        recognizer,
    })
}

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub detections: Vec<TextProposal>,
    pub det_ms: f64,
    pub e2e_ms: f64,
}

/// Detection plus (when the model has the branch) recognition of every
/// surviving region. Deterministic: no dropout, running batch-norm stats.
pub fn infer(
    model: &SpottingModel<f32>,
    charset: &CharSet,
    image: &Tensor<f32>,
    score_thresh: f64,
    nms_thresh: f64,
    lexicon: Option<&[String]>,
) -> Result<InferOutput> {
    let sh = image.shape();
    let batch = Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], image.data().to_vec());
    let t0 = Instant::now();
    let features = model.backbone.forward_eval(&batch)?;
    let maps = model.head.forward_eval(&features)?;
    let (boxes, _) = decode_predictions(&maps, score_thresh, nms_thresh);
    let det_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut detections = Vec::with_capacity(boxes.len());
    if let Some(branch) = &model.recog {
        if !boxes.is_empty() {
            let feats3 = feature_map_3d(&features);
            let specs: Vec<RoiSpec> =
                boxes.iter().map(|b| roi_spec_for_quad(&b.quad)).collect();
            let (roi_batch, _) = batch_extract(&feats3, &specs, crate::recognize::STRIP_HEIGHT)?;
            for (r, b) in boxes.iter().enumerate() {
                let strip = slice_strip(&roi_batch.features, r, roi_batch.widths[r]);
                let text = decode_strip(branch, &strip, charset, lexicon)?;
                detections.push(TextProposal::new(b.quad.clone(), text).with_score(b.score));
            }
        }
    } else {
        for b in &boxes {
            detections.push(TextProposal::new(b.quad.clone(), String::new()).with_score(b.score));
        }
    }
    let e2e_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(InferOutput {
        detections,
        det_ms,
        e2e_ms,
    })
}

fn decode_strip(
    branch: &RecognitionNet<f32>,
    strip: &Tensor<f32>,
    charset: &CharSet,
    lexicon: Option<&[String]>,
) -> Result<String> {
    let log_probs = branch.forward_eval(strip)?;
    let ids = ctc_greedy_decode(&log_probs);
    let raw = charset.decode(&ids);
    Ok(match lexicon {
        Some(lex) => lexicon_match(&raw, lex).map(str::to_string).unwrap_or(raw),
        None => raw,
    })
}

/// Two-stage inference: detect with one model, then re-encode each region
/// from the image through the standalone recognizer.
pub fn infer_two_stage(
    detector: &SpottingModel<f32>,
    recognizer: &CropRecognizer<f32>,
    charset: &CharSet,
    image: &Tensor<f32>,
    score_thresh: f64,
    nms_thresh: f64,
    lexicon: Option<&[String]>,
) -> Result<InferOutput> {
    let sh = image.shape();
    let batch = Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], image.data().to_vec());
    let t0 = Instant::now();
    let features = detector.backbone.forward_eval(&batch)?;
    let maps = detector.head.forward_eval(&features)?;
    let (boxes, _) = decode_predictions(&maps, score_thresh, nms_thresh);
    let det_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut detections = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let text = match crop_from_image(image, &b.quad) {
            Ok(crop) => {
                let log_probs = recognizer.forward_eval(&crop)?;
                let raw = charset.decode(&ctc_greedy_decode(&log_probs));
                match lexicon {
                    Some(lex) => lexicon_match(&raw, lex).map(str::to_string).unwrap_or(raw),
                    None => raw,
                }
            }
            Err(_) => String::new(),
        };
        detections.push(TextProposal::new(b.quad.clone(), text).with_score(b.score));
    }
    let e2e_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(InferOutput {
        detections,
        det_ms,
        e2e_ms,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PrF {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn prf(tp: usize, fp: usize, n_gt: usize) -> PrF {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrF {
        precision,
        recall,
        f,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalResult {
    pub detection: PrF,
    pub end_to_end: PrF,
    pub matched: usize,
    pub missed: usize,
    pub false_positives: usize,
    pub det_ms_mean: f64,
    pub e2e_ms_mean: f64,
}

/// Greedy score-ordered one-to-one matching at the IoU threshold.
/// DO-NOT-CARE ground truths absorb overlapping predictions without
/// counting anywhere. End-to-end additionally requires case-insensitive
/// transcription equality.
pub fn evaluate(
    predictions: &[Vec<TextProposal>],
    ground_truth: &[Vec<TextProposal>],
    iou_thresh: f64,
) -> EvalResult {
    assert_eq!(
        predictions.len(),
        ground_truth.len(),
        "prediction/ground-truth image counts differ"
    );
    let mut tp_det = 0usize;
    let mut fp_det = 0usize;
    let mut tp_e2e = 0usize;
    let mut fp_e2e = 0usize;
    let mut n_gt = 0usize;
    for (preds, gts) in predictions.iter().zip(ground_truth) {
        let care: Vec<&TextProposal> = gts.iter().filter(|g| !g.is_dont_care()).collect();
        let ignore: Vec<&TextProposal> = gts.iter().filter(|g| g.is_dont_care()).collect();
        n_gt += care.len();
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| {
            let sa = preds[a].score.unwrap_or(0.0);
            let sb = preds[b].score.unwrap_or(0.0);
            sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
        });
        let mut taken = vec![false; care.len()];
        let mut taken_e2e = vec![false; care.len()];
        for &pi in &order {
            let p = &preds[pi];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in care.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = polygon_iou(&p.quad, &g.quad);
                if iou >= iou_thresh && best.map(|(_, b)| iou > b).unwrap_or(true) {
                    best = Some((gi, iou));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    tp_det += 1;
                    let text_ok = p.transcription.to_lowercase()
                        == care[gi].transcription.to_lowercase();
                    if text_ok {
                        taken_e2e[gi] = true;
                        tp_e2e += 1;
                    } else {
                        fp_e2e += 1;
                    }
                }
                None => {
                    // swallowed by a DO-NOT-CARE region?
                    let absorbed = ignore
                        .iter()
                        .any(|g| polygon_iou(&p.quad, &g.quad) >= iou_thresh);
                    if !absorbed {
                        fp_det += 1;
                        fp_e2e += 1;
                    }
                }
            }
        }
    }
    EvalResult {
        detection: prf(tp_det, fp_det, n_gt),
        end_to_end: prf(tp_e2e, fp_e2e, n_gt),
        matched: tp_det,
        missed: n_gt - tp_det,
        false_positives: fp_det,
        det_ms_mean: 0.0,
        e2e_ms_mean: 0.0,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BenchReport {
    pub images: usize,
    pub reps: usize,
    pub det_ms_median: f64,
    pub e2e_ms_median: f64,
    pub two_stage_ms_median: f64,
    pub joint_params: usize,
    pub det_params: usize,
    pub recog_params: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if xs.is_empty() {
        0.0
    } else {
        xs[xs.len() / 2]
    }
}

/// Time detection-only, end-to-end, and two-stage inference over an image
/// set; mean per-image ms, median across repetitions. Parameter counts use
/// the same architecture as the joint model.
/// Times three inference paths over the same images: detection alone, the
/// joint model end to end, and the two-stage pipeline. The two-stage arm
/// reuses the joint model's detection forward so both arms process the same
/// regions; its recognition goes through image crops and the separate
/// recognizer. Parameter columns count a standalone detector (backbone +
/// head) against the joint model and the crop recognizer.
pub fn bench(
    joint: &SpottingModel<f32>,
    recognizer: &CropRecognizer<f32>,
    charset: &CharSet,
    images: &[Tensor<f32>],
    reps: usize,
    score_thresh: f64,
    nms_thresh: f64,
) -> Result<BenchReport> {
    let det_params = joint
        .backbone
        .named()
        .iter()
        .chain(joint.head.named().iter())
        .map(|(_, t)| t.len())
        .sum();
    let mut det_ms = Vec::new();
    let mut e2e_ms = Vec::new();
    let mut two_ms = Vec::new();
    for _ in 0..reps {
        let mut det_total = 0.0;
        let mut e2e_total = 0.0;
        let mut two_total = 0.0;
        for img in images {
            let out = infer(joint, charset, img, score_thresh, nms_thresh, None)?;
            det_total += out.det_ms;
            e2e_total += out.e2e_ms;
            let t0 = Instant::now();
            let _ = infer_two_stage(
                joint, recognizer, charset, img, score_thresh, nms_thresh, None,
            )?;
            two_total += t0.elapsed().as_secs_f64() * 1e3;
        }
        let n = images.len().max(1) as f64;
        det_ms.push(det_total / n);
        e2e_ms.push(e2e_total / n);
        two_ms.push(two_total / n);
    }
    Ok(BenchReport {
        images: images.len(),
        reps,
        det_ms_median: median(&mut det_ms),
        e2e_ms_median: median(&mut e2e_ms),
        two_stage_ms_median: median(&mut two_ms),
        joint_params: joint.num_params(),
        det_params,
        recog_params: recognizer.num_params(),
    })
}

// ---- checkpoint serialization with self-describing metadata ----

const META_KIND: &str = "__meta__.kind";
const META_CHARSET: &str = "__meta__.charset";
const META_ARCH: &str = "__meta__.arch";

fn string_tensor(s: &str) -> Tensor<f32> {
    let bytes: Vec<f32> = s.bytes().map(|b| b as f32).collect();
    let data = if bytes.is_empty() { vec![0.0] } else { bytes };
    Tensor::from_vec(&[data.len()], data)
}

fn tensor_string(t: &Tensor<f32>) -> Result<String> {
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            let b = v.round();
            if (0.0..=255.0).contains(&b) {
                Ok(b as u8)
            } else {
                Err(FotsError::Invalid("metadata record is not byte text".into()))
            }
        })
        .collect::<Result<_>>()?;
    String::from_utf8(bytes)
        .map(|s| s.trim_end_matches('\0').to_string())
        .map_err(|_| FotsError::Invalid("metadata record is not UTF-8".into()))
}

/// Serialized architecture description; enough to rebuild the exact model
/// without the original config file.
fn arch_text(config: &ModelConfig, num_classes: usize) -> String {
    format!(
        "in_channels = {}\nstage_channels = {},{},{},{}\nshared_channels = {}\nrecog_channels = {},{},{}\nrecog_hidden = {}\ncrop_enc_channels = {},{}\ndropout = {}\nnum_classes = {}\nscore_thresh = {}\nnms_thresh = {}\n",
        config.in_channels,
        config.stage_channels[0],
        config.stage_channels[1],
        config.stage_channels[2],
        config.stage_channels[3],
        config.shared_channels,
        config.recog_channels[0],
        config.recog_channels[1],
        config.recog_channels[2],
        config.recog_hidden,
        config.crop_enc_channels[0],
        config.crop_enc_channels[1],
        config.dropout,
        num_classes,
        config.score_thresh,
        config.nms_thresh,
    )
}

fn parse_arch_text(text: &str) -> Result<(ModelConfig, usize)> {
    let mut cfg = ModelConfig::default();
    let mut num_classes = 0usize;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| FotsError::Invalid(format!("bad arch record line {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let ints = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| FotsError::Invalid(format!("bad arch value {v:?}")))
                })
                .collect()
        };
        match key {
            "in_channels" => cfg.in_channels = ints(value)?[0],
            "stage_channels" => {
                let v = ints(value)?;
                cfg.stage_channels = [v[0], v[1], v[2], v[3]];
            }
            "shared_channels" => cfg.shared_channels = ints(value)?[0],
            "recog_channels" => {
                let v = ints(value)?;
                cfg.recog_channels = [v[0], v[1], v[2]];
            }
            "recog_hidden" => cfg.recog_hidden = ints(value)?[0],
            "crop_enc_channels" => {
                let v = ints(value)?;
                cfg.crop_enc_channels = [v[0], v[1]];
            }
            "dropout" => {
                cfg.dropout = value
                    .parse()
                    .map_err(|_| FotsError::Invalid(format!("bad arch value {value:?}")))?
            }
            "num_classes" => num_classes = ints(value)?[0],
            "score_thresh" => {
                cfg.score_thresh = value
                    .parse()
                    .map_err(|_| FotsError::Invalid(format!("bad arch value {value:?}")))?
            }
            "nms_thresh" => {
                cfg.nms_thresh = value
                    .parse()
                    .map_err(|_| FotsError::Invalid(format!("bad arch value {value:?}")))?
            }
            other => {
                return Err(FotsError::Invalid(format!("unknown arch record key {other:?}")))
            }
        }
    }
    if num_classes == 0 {
        return Err(FotsError::Invalid("arch record missing num_classes".into()));
    }
    Ok((cfg, num_classes))
}

pub fn save_spotting_model(
    path: &Path,
    model: &SpottingModel<f32>,
    charset: &CharSet,
    config: &ModelConfig,
) -> Result<()> {
    let kind = if model.recog.is_some() { "joint" } else { "detect" };
    let kind_t = string_tensor(kind);
    let charset_t = string_tensor(&charset.to_text());
    let arch_t = string_tensor(&arch_text(config, charset.num_classes()));
    let mut records: Vec<(&str, &Tensor<f32>)> = vec![
        (META_KIND, &kind_t),
        (META_CHARSET, &charset_t),
        (META_ARCH, &arch_t),
    ];
    let named = model.named();
    records.extend(named.iter().map(|(n, t)| (n.as_str(), *t)));
    checkpoint::save(path, &records)
}

pub fn save_crop_recognizer(
    path: &Path,
    model: &CropRecognizer<f32>,
    charset: &CharSet,
    config: &ModelConfig,
) -> Result<()> {
    let kind_t = string_tensor("crop_recognizer");
    let charset_t = string_tensor(&charset.to_text());
    let arch_t = string_tensor(&arch_text(config, charset.num_classes()));
    let mut records: Vec<(&str, &Tensor<f32>)> = vec![
        (META_KIND, &kind_t),
        (META_CHARSET, &charset_t),
        (META_ARCH, &arch_t),
    ];
    let named = model.named();
    records.extend(named.iter().map(|(n, t)| (n.as_str(), *t)));
    checkpoint::save(path, &records)
}

pub enum LoadedModel {
    Spotting(SpottingModel<f32>),
    CropRecognizer(CropRecognizer<f32>),
}

pub struct LoadedCheckpoint {
    pub model: LoadedModel,
    pub charset: CharSet,
    pub config: ModelConfig,
}

/// Rebuild a model purely from its checkpoint (architecture and symbol
/// table travel inside the file).
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let records = checkpoint::load(path)?;
    let map: BTreeMap<String, Tensor<f32>> = records.into_iter().collect();
    let meta = |key: &str| -> Result<String> {
        tensor_string(
            map.get(key)
                .ok_or_else(|| FotsError::data(path, format!("missing {key} record")))?,
        )
    };
    let kind = meta(META_KIND)?;
    let charset = CharSet::from_text(&meta(META_CHARSET)?)?;
    let (config, num_classes) = parse_arch_text(&meta(META_ARCH)?)?;
    if num_classes != charset.num_classes() {
        return Err(FotsError::data(
            path,
            format!(
                "checkpoint class count {num_classes} does not match its symbol table ({})",
                charset.num_classes()
            ),
        ));
    }
    let model = match kind.as_str() {
        "joint" => {
            let mut m = SpottingModel::<f32>::new(
                config.backbone_arch(),
                Some(config.recog_arch(num_classes)),
                0,
            );
            m.load(&map)?;
            LoadedModel::Spotting(m)
        }
        "detect" => {
            let mut m = SpottingModel::<f32>::new(config.backbone_arch(), None, 0);
            m.load(&map)?;
            LoadedModel::Spotting(m)
        }
        "crop_recognizer" => {
            let mut m = CropRecognizer::<f32>::new(
                config.in_channels,
                config.crop_enc_channels,
                config.recog_arch(num_classes),
                0,
            );
            m.load(&map)?;
            LoadedModel::CropRecognizer(m)
        }
        other => {
            return Err(FotsError::data(path, format!("unknown checkpoint kind {other:?}")))
        }
    };
    Ok(LoadedCheckpoint {
        model,
        charset,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quad;

    fn boxed(x: f64, y: f64, w: f64, h: f64, text: &str, score: f64) -> TextProposal {
        TextProposal::new(Quad::from_rect(x, y, x + w, y + h), text.into()).with_score(score)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gt = vec![vec![
            boxed(0.0, 0.0, 10.0, 5.0, "12", 0.0),
            boxed(20.0, 0.0, 10.0, 5.0, "34", 0.0),
        ]];
        let preds = vec![vec![
            boxed(0.0, 0.0, 10.0, 5.0, "12", 0.9),
            boxed(20.0, 0.0, 10.0, 5.0, "34", 0.8),
        ]];
        let r = evaluate(&preds, &gt, 0.5);
        assert_eq!(r.detection.precision, 1.0);
        assert_eq!(r.detection.recall, 1.0);
        assert_eq!(r.detection.f, 1.0);
        assert_eq!(r.end_to_end.f, 1.0);
        assert_eq!((r.matched, r.missed, r.false_positives), (2, 0, 0));
    }

    #[test]
    fn no_predictions_gives_zero_convention() {
        let gt = vec![vec![boxed(0.0, 0.0, 10.0, 5.0, "1", 0.0)]];
        let preds = vec![vec![]];
        let r = evaluate(&preds, &gt, 0.5);
        assert_eq!(r.detection.precision, 0.0);
        assert_eq!(r.detection.recall, 0.0);
        assert_eq!(r.detection.f, 0.0);
        assert_eq!(r.missed, 1);
    }

    #[test]
    fn wrong_transcription_hits_detection_not_e2e() {
        let gt = vec![vec![boxed(0.0, 0.0, 10.0, 5.0, "12", 0.0)]];
        let preds = vec![vec![boxed(0.0, 0.0, 10.0, 5.0, "21", 0.9)]];
        let r = evaluate(&preds, &gt, 0.5);
        assert_eq!(r.detection.f, 1.0);
        assert_eq!(r.end_to_end.recall, 0.0);
        assert!(r.end_to_end.f == 0.0);
    }

    #[test]
    fn case_insensitive_transcriptions() {
        let gt = vec![vec![boxed(0.0, 0.0, 10.0, 5.0, "AbC", 0.0)]];
        let preds = vec![vec![boxed(0.0, 0.0, 10.0, 5.0, "aBc", 0.9)]];
        let r = evaluate(&preds, &gt, 0.5);
        assert_eq!(r.end_to_end.f, 1.0);
    }

    #[test]
    fn dont_care_absorbs_without_penalty() {
        let gt = vec![vec![
            boxed(0.0, 0.0, 10.0, 5.0, "1", 0.0),
            boxed(30.0, 0.0, 10.0, 5.0, crate::data::DO_NOT_CARE, 0.0),
        ]];
        // one matching the DNC region, one matching the real region
        let preds = vec![vec![
            boxed(30.0, 0.0, 10.0, 5.0, "x", 0.95),
            boxed(0.0, 0.0, 10.0, 5.0, "1", 0.9),
        ]];
        let r = evaluate(&preds, &gt, 0.5);
        assert_eq!(r.detection.precision, 1.0);
        assert_eq!(r.detection.recall, 1.0);
        assert_eq!(r.false_positives, 0);
        // removing the DNC-absorbed prediction changes nothing
        let r2 = evaluate(&[vec![preds[0][1].clone()]], &gt, 0.5);
        assert_eq!(r2.detection.f, r.detection.f);
    }

    #[test]
    fn greedy_matches_brute_force_on_separated_boxes() {
        use rand::Rng;
        let mut rng = crate::rng::stream(61, "eval-brute", 0);
        for case in 0..20 {
            // up to 5 GT on a grid, predictions jittered near some of them
            let n = rng.gen_range(1..=5);
            let mut gts = Vec::new();
            for k in 0..n {
                gts.push(boxed(k as f64 * 40.0, 0.0, 20.0, 10.0, "t", 0.0));
            }
            let mut preds = Vec::new();
            for k in 0..n {
                if rng.gen_bool(0.7) {
                    let dx = rng.gen_range(-2.0..2.0);
                    preds.push(boxed(
                        k as f64 * 40.0 + dx,
                        rng.gen_range(-1.0..1.0),
                        20.0,
                        10.0,
                        "t",
                        rng.gen_range(0.1..1.0),
                    ));
                }
            }
            if rng.gen_bool(0.5) {
                preds.push(boxed(1000.0, 0.0, 20.0, 10.0, "t", 0.5));
            }
            let r = evaluate(&[preds.clone()], &[gts.clone()], 0.5);
            // brute force: max one-to-one matching count
            let best = brute_force_tp(&preds, &gts, 0.5);
            assert_eq!(r.matched, best, "case {case}");
        }
    }

    fn brute_force_tp(preds: &[TextProposal], gts: &[TextProposal], thresh: f64) -> usize {
        fn go(
            pi: usize,
            preds: &[TextProposal],
            gts: &[TextProposal],
            used: &mut Vec<bool>,
            thresh: f64,
        ) -> usize {
            if pi == preds.len() {
                return 0;
            }
            let mut best = go(pi + 1, preds, gts, used, thresh);
            for gi in 0..gts.len() {
                if !used[gi] && polygon_iou(&preds[pi].quad, &gts[gi].quad) >= thresh {
                    used[gi] = true;
                    best = best.max(1 + go(pi + 1, preds, gts, used, thresh));
                    used[gi] = false;
                }
            }
            best
        }
        let mut used = vec![false; gts.len()];
        go(0, preds, gts, &mut used, thresh)
    }

    #[test]
    fn reordering_predictions_does_not_change_results() {
        let gt = vec![vec![
            boxed(0.0, 0.0, 10.0, 5.0, "1", 0.0),
            boxed(20.0, 0.0, 10.0, 5.0, "2", 0.0),
        ]];
        let a = vec![vec![
            boxed(0.0, 0.0, 10.0, 5.0, "1", 0.9),
            boxed(20.0, 0.0, 10.0, 5.0, "2", 0.7),
        ]];
        let b = vec![vec![a[0][1].clone(), a[0][0].clone()]];
        let ra = evaluate(&a, &gt, 0.5);
        let rb = evaluate(&b, &gt, 0.5);
        assert_eq!(ra.matched, rb.matched);
        assert_eq!(ra.detection.f, rb.detection.f);
    }

    #[test]
    fn arch_text_round_trips() {
        let mut cfg = ModelConfig::default();
        cfg.stage_channels = [3, 5, 7, 9];
        cfg.recog_hidden = 13;
        cfg.score_thresh = 0.55;
        let text = arch_text(&cfg, 11);
        let (back, classes) = parse_arch_text(&text).unwrap();
        assert_eq!(back.stage_channels, [3, 5, 7, 9]);
        assert_eq!(back.recog_hidden, 13);
        assert_eq!(back.score_thresh, 0.55);
        assert_eq!(classes, 11);
        assert!(parse_arch_text("bogus = 3\n").is_err());
    }

    #[test]
    fn string_tensors_round_trip() {
        for s in ["", "abc", "0\n1\n2\n", "multi\nline = text"] {
            let t = string_tensor(s);
            let back = tensor_string(&t).unwrap();
            assert_eq!(back, s.trim_end_matches('\0'));
        }
        let bad = Tensor::from_vec(&[2], vec![300.0, -5.0]);
        assert!(tensor_string(&bad).is_err());
    }
}
