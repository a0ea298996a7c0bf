//! Scratch harness for schedule tuning; not part of the suite.

use std::time::Instant;

use fots_core::config::ModelConfig;
use fots_core::data::{RenderConfig, TextProposal};
use fots_core::pipeline::{evaluate, infer, synthetic_dataset, train_joint};

#[test]
#[ignore]
fn tune_joint_schedule() {
    let n_train: usize = std::env::var("TUNE_TRAIN").map(|v| v.parse().unwrap()).unwrap_or(120);
    let n_test: usize = std::env::var("TUNE_TEST").map(|v| v.parse().unwrap()).unwrap_or(30);
    let epochs: usize = std::env::var("TUNE_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(3);
    let lr: f64 = std::env::var("TUNE_LR").map(|v| v.parse().unwrap()).unwrap_or(0.02);
    let seed: u64 = std::env::var("TUNE_SEED").map(|v| v.parse().unwrap()).unwrap_or(1);

    let mut cfg = ModelConfig::default();
    cfg.seed = seed;
    cfg.lr = lr;
    cfg.augment = std::env::var("TUNE_AUG").map(|v| v == "true").unwrap_or(true);
    if std::env::var("TUNE_MODE").as_deref() == Ok("detect") {
        cfg.mode = fots_core::config::Mode::DetectOnly;
    }
    if let Ok(v) = std::env::var("TUNE_LREC") {
        cfg.lambda_recog = v.parse().unwrap();
    }
    let render = RenderConfig::default();
    let train = synthetic_dataset(&render, n_train, 1000).unwrap();
    let test = synthetic_dataset(&render, n_test, 500_000).unwrap();

    let t0 = Instant::now();
    let out = train_joint(&train, &cfg, epochs).unwrap();
    let train_s = t0.elapsed().as_secs_f64();

    // loss trajectory, windows of 20
    for chunk in out.trace.chunks(50) {
        let m = chunk.iter().map(|r| r.total).sum::<f64>() / chunk.len() as f64;
        let mc = chunk.iter().map(|r| r.cls).sum::<f64>() / chunk.len() as f64;
        let mr = chunk.iter().map(|r| r.reg).sum::<f64>() / chunk.len() as f64;
        let mg = chunk.iter().map(|r| r.recog).sum::<f64>() / chunk.len() as f64;
        println!(
            "steps {:4}..{:4}: total {m:8.4} cls {mc:7.4} reg {mr:7.4} recog {mg:8.4}",
            chunk[0].step,
            chunk.last().unwrap().step
        );
    }

    // Train-mode vs eval-mode maps on one held-out image.
    {
        use fots_core::detect::decode_predictions;
        let s0 = &test[0];
        let sh = s0.image.shape().to_vec();
        let batch =
            fots_core::Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], s0.image.data().to_vec());
        let feats_e = out.model.backbone.forward_eval(&batch).unwrap();
        let maps_e = out.model.head.forward_eval(&feats_e).unwrap();
        let mut clone = out.model.clone();
        let (feats_t, _) = clone.backbone.forward_train(&batch).unwrap();
        let maps_t = clone.head.forward_eval(&feats_t).unwrap();
        for (tag, maps) in [("eval", &maps_e), ("train", &maps_t)] {
            let smax = maps.score.data().iter().cloned().fold(f32::MIN, f32::max);
            let hi = maps.score.data().iter().filter(|&&s| s > 0.8).count();
            let mid = maps.score.data().iter().filter(|&&s| s > 0.5).count();
            let (kept, st) = decode_predictions(maps, cfg.score_thresh, cfg.nms_thresh);
            println!(
                "{tag}: score max {smax:.3} >0.8 {hi} >0.5 {mid} cand {} kept {}",
                st.candidates,
                kept.len()
            );
        }
        println!("gt on that image: {}", s0.proposals.len());
    }

    for thresh in [0.4, 0.5, 0.6, 0.7, 0.8] {
        let t1 = Instant::now();
        let mut preds: Vec<Vec<TextProposal>> = Vec::new();
        let mut gts = Vec::new();
        for s in &test {
            let r = infer(&out.model, &out.charset, &s.image, thresh, cfg.nms_thresh, None)
                .unwrap();
            preds.push(r.detections);
            gts.push(s.proposals.clone());
        }
        let infer_s = t1.elapsed().as_secs_f64();
        let res = evaluate(&preds, &gts, 0.5);
        println!(
            "thresh {thresh:.1}: train {train_s:.1}s  infer {:.0} ms/img  det P {:.3} R {:.3} F {:.3}  e2e P {:.3} R {:.3} F {:.3}",
            infer_s / n_test as f64 * 1e3,
            res.detection.precision,
            res.detection.recall,
            res.detection.f,
            res.end_to_end.precision,
            res.end_to_end.recall,
            res.end_to_end.f
        );
    }
}

#[test]
#[ignore]
fn overfit_single_image() {
    use fots_core::detect::decode_predictions;
    use fots_core::geometry::polygon_iou;

    let steps: usize = std::env::var("TUNE_STEPS").map(|v| v.parse().unwrap()).unwrap_or(200);
    let lr: f64 = std::env::var("TUNE_LR").map(|v| v.parse().unwrap()).unwrap_or(0.02);

    let mut cfg = ModelConfig::default();
    cfg.seed = 3;
    cfg.lr = lr;
    cfg.augment = false;
    let render = RenderConfig::default();
    let data = synthetic_dataset(&render, 1, 1000).unwrap();
    println!("gt boxes: {}", data[0].proposals.len());
    for p in &data[0].proposals {
        println!("  gt {:?} '{}'", p.quad.pts, p.transcription);
    }

    let out = train_joint(&data, &cfg, steps).unwrap();
    for chunk in out.trace.chunks(20) {
        let mc = chunk.iter().map(|r| r.cls).sum::<f64>() / chunk.len() as f64;
        let mr = chunk.iter().map(|r| r.reg).sum::<f64>() / chunk.len() as f64;
        let mg = chunk.iter().map(|r| r.recog).sum::<f64>() / chunk.len() as f64;
        println!(
            "steps {:4}..{:4}: cls {mc:7.4} reg {mr:7.4} recog {mg:8.4}",
            chunk[0].step,
            chunk.last().unwrap().step
        );
    }

    // Raw maps on the training image itself.
    let sh = data[0].image.shape().to_vec();
    let batch = fots_core::Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], data[0].image.data().to_vec());
    let feats = out.model.backbone.forward_eval(&batch).unwrap();
    let maps = out.model.head.forward_eval(&feats).unwrap();
    let smax = maps.score.data().iter().cloned().fold(f32::MIN, f32::max);
    let n_hi = maps.score.data().iter().filter(|&&s| s > 0.8).count();
    let n_mid = maps.score.data().iter().filter(|&&s| s > 0.5).count();
    println!("score max {smax:.3}  >0.8: {n_hi}  >0.5: {n_mid}");

    let (kept, stats) = decode_predictions(&maps, 0.8, 0.2);
    println!("candidates {} kept {}", stats.candidates, kept.len());
    for b in kept.iter().take(8) {
        let best = data[0]
            .proposals
            .iter()
            .map(|p| polygon_iou(&b.quad, &p.quad))
            .fold(0.0f64, f64::max);
        println!("  pred score {:.3} theta {:+.3} iou {best:.3} {:?}", b.score, b.theta, b.quad.pts);
    }
}

#[test]
#[ignore]
fn feature_probe() {
    use fots_core::detect::{build_ground_truth, MaskState};

    let n_train: usize = std::env::var("TUNE_TRAIN").map(|v| v.parse().unwrap()).unwrap_or(60);
    let epochs: usize = std::env::var("TUNE_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(6);
    let lr: f64 = std::env::var("TUNE_LR").map(|v| v.parse().unwrap()).unwrap_or(0.02);

    let mut cfg = ModelConfig::default();
    cfg.seed = 7;
    cfg.lr = lr;
    cfg.augment = false;
    cfg.mode = fots_core::config::Mode::DetectOnly;
    let render = RenderConfig::default();
    let train = synthetic_dataset(&render, n_train, 1000).unwrap();
    let out = train_joint(&train, &cfg, epochs).unwrap();

    // Per-channel separation between positive and negative map pixels on a
    // handful of held-out images: d' = |mean_pos - mean_neg| / pooled std.
    let test = synthetic_dataset(&render, 4, 900_000).unwrap();
    let mut dbest = vec![0.0f64; 0];
    for s in &test {
        let sh = s.image.shape().to_vec();
        let batch = fots_core::Tensor::from_vec(&[1, sh[0], sh[1], sh[2]], s.image.data().to_vec());
        let feats = out.model.backbone.forward_eval(&batch).unwrap();
        let c = feats.shape()[1];
        let hw = feats.shape()[2] * feats.shape()[3];
        if dbest.is_empty() {
            dbest = vec![0.0; c];
        }
        let (gt, _) = build_ground_truth::<f32>(&s.proposals, (sh[1], sh[2]), 0.3).unwrap();
        let pos: Vec<usize> = (0..hw).filter(|&i| gt.mask[i] == MaskState::Positive).collect();
        let neg: Vec<usize> = (0..hw).filter(|&i| gt.mask[i] == MaskState::Negative).collect();
        if pos.is_empty() {
            continue;
        }
        for ch in 0..c {
            let d = feats.data();
            let mp = pos.iter().map(|&i| d[ch * hw + i] as f64).sum::<f64>() / pos.len() as f64;
            let mn = neg.iter().map(|&i| d[ch * hw + i] as f64).sum::<f64>() / neg.len() as f64;
            let vp = pos.iter().map(|&i| (d[ch * hw + i] as f64 - mp).powi(2)).sum::<f64>()
                / pos.len() as f64;
            let vn = neg.iter().map(|&i| (d[ch * hw + i] as f64 - mn).powi(2)).sum::<f64>()
                / neg.len() as f64;
            let dp = (mp - mn).abs() / ((0.5 * (vp + vn)).sqrt() + 1e-9);
            if dp > dbest[ch] {
                dbest[ch] = dp;
            }
        }
    }
    let mut sorted = dbest.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("channels {}  top d': {:?}", sorted.len(), &sorted[..sorted.len().min(8)]);
    let dead = dbest.iter().filter(|&&d| d < 0.05).count();
    println!("channels with d' < 0.05: {dead}");

    // Score head weight scale: bias-only collapse shows up as tiny weights.
    for (name, t) in out.model.head.named() {
        let norm = t.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        println!("{name}: l2 {norm:.4}  numel {}", t.data().len());
    }
}
