//! Command-line front end: training, inference, evaluation, benchmarking,
//! and a quick numeric self-check. All subcommands print flat
//! `key = value` report lines so scripts can scrape them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fots_core::config::{load_config, Mode};
use fots_core::data::{
    load_gt_file, load_pred_file, pad_to_multiple_of_4, read_pnm, write_predictions,
};
use fots_core::error::{FotsError, Result};
use fots_core::pipeline::{
    self, bench, dataset_from_arg, evaluate, infer, load_checkpoint,
    save_crop_recognizer, save_spotting_model, train_joint, train_recognizer, train_two_stage,
    write_trace, LoadedModel,
};

#[derive(Parser)]
#[command(name = "fots", about = "Oriented text spotting: detect and read text in one model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (joint, detection-only, or crop-recognition per config)
    Train(TrainArgs),
    /// Train the separate-models baseline: a detector plus a crop recognizer
    Train2stage(TrainArgs),
    /// Run one image through a checkpoint and print the detected regions
    Infer(InferArgs),
    /// Score prediction files against ground-truth files
    Eval(EvalArgs),
    /// Measure inference timing and parameter counts
    Bench(BenchArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; unknown keys are rejected
    #[arg(long)]
    config: PathBuf,
    /// manifest of image/annotation pairs, or the literal `synthetic`
    #[arg(long)]
    data: String,
    /// checkpoint output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// input image (P5 or P6)
    #[arg(long)]
    image: PathBuf,
    /// optional word list; transcriptions snap to the closest entry
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// write predictions here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// directory of prediction files (one per image)
    #[arg(long)]
    pred: PathBuf,
    /// directory of ground-truth files (`gt_<stem>.txt` or `<stem>.txt`)
    #[arg(long)]
    gt: PathBuf,
    /// additionally require matching transcriptions
    #[arg(long)]
    e2e: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// manifest of images, or the literal `synthetic`
    #[arg(long)]
    data: String,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// benchmark at most this many images
    #[arg(long)]
    limit: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version exit cleanly; anything else is a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fots: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Train2stage(a) => cmd_train2stage(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dataset = dataset_from_arg(&args.data, &config)?;
    println!("samples = {}", dataset.len());
    match config.mode {
        Mode::RecogOnly => {
            let trained = train_recognizer(&dataset, &config, config.epochs)?;
            save_crop_recognizer(&args.out, &trained.model, &trained.charset, &config)?;
            write_trace(&trace_path(&args.out), &trained.trace)?;
            print_trace_summary(&trained.trace, trained.infeasible_labels);
        }
        Mode::Joint | Mode::DetectOnly => {
            let trained = train_joint(&dataset, &config, config.epochs)?;
            save_spotting_model(&args.out, &trained.model, &trained.charset, &config)?;
            write_trace(&trace_path(&args.out), &trained.trace)?;
            print_trace_summary(&trained.trace, trained.infeasible_labels);
        }
    }
    println!("checkpoint = {}", args.out.display());
    Ok(())
}

fn cmd_train2stage(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let dataset = dataset_from_arg(&args.data, &config)?;
    println!("samples = {}", dataset.len());
    let two = train_two_stage(&dataset, &config, config.epochs)?;
    save_spotting_model(&args.out, &two.detector.model, &two.detector.charset, &config)?;
    let recog_path = args.out.with_extension(extended_ext(&args.out, "recog"));
    save_crop_recognizer(&recog_path, &two.recognizer.model, &two.recognizer.charset, &config)?;
    write_trace(&trace_path(&args.out), &two.detector.trace)?;
    write_trace(&trace_path(&recog_path), &two.recognizer.trace)?;
    print_trace_summary(&two.detector.trace, two.detector.infeasible_labels);
    println!("checkpoint = {}", args.out.display());
    println!("recognizer_checkpoint = {}", recog_path.display());
    Ok(())
}

fn trace_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension(extended_ext(ckpt, "trace.csv"))
}

/// foo.ckpt + "recog" -> foo.ckpt.recog (keeps the original extension).
fn extended_ext(path: &Path, suffix: &str) -> String {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) => format!("{e}.{suffix}"),
        None => suffix.to_string(),
    }
}

fn print_trace_summary(trace: &[pipeline::TraceRow], infeasible: usize) {
    println!("steps = {}", trace.len());
    if let Some(last) = trace.last() {
        let tail = &trace[trace.len().saturating_sub(20)..];
        let mean = tail.iter().map(|r| r.total).sum::<f64>() / tail.len() as f64;
        println!("final_loss = {}", last.total);
        println!("final_window_mean = {mean}");
    }
    if infeasible > 0 {
        println!("skipped_infeasible_labels = {infeasible}");
    }
}

fn load_lexicon(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| FotsError::io(path, e))?;
    let words: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if words.is_empty() {
        return Err(FotsError::data(path, "lexicon has no entries"));
    }
    Ok(words)
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let model = match &loaded.model {
        LoadedModel::Spotting(m) => m,
        LoadedModel::CropRecognizer(_) => {
            return Err(FotsError::data(
                &args.ckpt,
                "this checkpoint is a crop recognizer; inference needs a detection model",
            ))
        }
    };
    let image = pad_to_multiple_of_4(&read_pnm(&args.image)?);
    if image.shape()[0] != loaded.config.in_channels {
        return Err(FotsError::data(
            &args.image,
            format!(
                "image has {} channels but the model expects {}",
                image.shape()[0],
                loaded.config.in_channels
            ),
        ));
    }
    let lexicon = args.lexicon.as_deref().map(load_lexicon).transpose()?;
    let out = infer(
        model,
        &loaded.charset,
        &image,
        loaded.config.score_thresh,
        loaded.config.nms_thresh,
        lexicon.as_deref(),
    )?;
    match &args.out {
        Some(path) => write_predictions(path, &out.detections)?,
        None => {
            let mut text = String::new();
            for p in &out.detections {
                text.push_str(&fots_core::data::prediction_line(p));
                text.push('\n');
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn stem_of(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    Some(stem.strip_prefix("gt_").unwrap_or(stem).to_string())
}

fn txt_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| FotsError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| FotsError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        if let Some(stem) = stem_of(&path) {
            if let Some(prev) = out.insert(stem.clone(), path.clone()) {
                return Err(FotsError::data(
                    dir,
                    format!(
                        "files {:?} and {:?} map to the same image stem {stem:?}",
                        prev.file_name().unwrap_or_default(),
                        path.file_name().unwrap_or_default()
                    ),
                ));
            }
        }
    }
    if out.is_empty() {
        return Err(FotsError::data(dir, "no .txt files found"));
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gt_files = txt_files(&args.gt)?;
    let pred_files = txt_files(&args.pred)?;
    for stem in pred_files.keys() {
        if !gt_files.contains_key(stem) {
            return Err(FotsError::data(
                &args.pred,
                format!("prediction {stem:?} has no ground-truth file"),
            ));
        }
    }
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (stem, gt_path) in &gt_files {
        gts.push(load_gt_file(gt_path)?);
        // a missing prediction file means "nothing detected"
        preds.push(match pred_files.get(stem) {
            Some(p) => load_pred_file(p)?,
            None => Vec::new(),
        });
    }
    let result = evaluate(&preds, &gts, 0.5);
    println!("images = {}", gts.len());
    println!("detection.precision = {:.4}", result.detection.precision);
    println!("detection.recall = {:.4}", result.detection.recall);
    println!("detection.f = {:.4}", result.detection.f);
    if args.e2e {
        println!("e2e.precision = {:.4}", result.end_to_end.precision);
        println!("e2e.recall = {:.4}", result.end_to_end.recall);
        println!("e2e.f = {:.4}", result.end_to_end.f);
    }
    println!("matched = {}", result.matched);
    println!("missed = {}", result.missed);
    println!("false_positives = {}", result.false_positives);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.ckpt)?;
    let joint = match loaded.model {
        LoadedModel::Spotting(m) => m,
        LoadedModel::CropRecognizer(_) => {
            return Err(FotsError::data(
                &args.ckpt,
                "bench needs a detection or joint checkpoint",
            ))
        }
    };
    let config = loaded.config;
    let mut dataset = dataset_from_arg(&args.data, &config)?;
    if let Some(limit) = args.limit {
        dataset.truncate(limit);
    }
    let images: Vec<_> = dataset.into_iter().map(|s| s.image).collect();
    // architecture-matched crop recognizer for the two-stage arm; timing
    // depends on shapes, not on trained weights
    let recognizer = fots_core::model::CropRecognizer::<f32>::new(
        config.in_channels,
        config.crop_enc_channels,
        config.recog_arch(loaded.charset.num_classes()),
        0,
    );
    let report = bench(
        &joint,
        &recognizer,
        &loaded.charset,
        &images,
        args.reps,
        config.score_thresh,
        config.nms_thresh,
    )?;
    println!("images = {}", report.images);
    println!("reps = {}", report.reps);
    println!("ms.detect.median = {:.2}", report.det_ms_median);
    println!("ms.e2e.median = {:.2}", report.e2e_ms_median);
    println!("ms.two_stage.median = {:.2}", report.two_stage_ms_median);
    println!("params.joint = {}", report.joint_params);
    println!("params.detection = {}", report.det_params);
    println!("params.recognition = {}", report.recog_params);
    let separate = report.det_params + report.recog_params;
    println!("params.separate_total = {separate}");
    println!("sharing_saves_params = {}", report.joint_params < separate);
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    let reports = pipeline_gradcheck()?;
    let mut worst: (f64, &str) = (0.0, "");
    for (name, err) in &reports {
        println!("gradcheck.{name} = {err:.3e}");
        if *err > worst.0 {
            worst = (*err, name);
        }
    }
    if worst.0 > fots_core::gradcheck::FD_TOL {
        return Err(FotsError::Numeric(format!(
            "gradient mismatch in {} (rel err {:.3e})",
            worst.1, worst.0
        )));
    }
    println!("gradcheck.ok = true");
    Ok(())
}

/// A quick double-precision sweep over the main differentiable pieces.
fn pipeline_gradcheck() -> Result<Vec<(String, f64)>> {
    use fots_core::gradcheck::{check, finite_diff, compare_grads, FD_EPS};
    use fots_core::ops;
    use fots_core::rng::stream;
    use fots_core::Tensor;
    use rand::Rng;

    let mut out = Vec::new();
    let mut rng = stream(17, "cli-gradcheck", 0);
    let randn = |shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng| {
        let mut t = Tensor::<f64>::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    };

    // conv2d: weighted-sum loss, gradient w.r.t. the input
    {
        let x = randn(&[1, 2, 5, 6], &mut rng);
        let w = randn(&[3, 2, 3, 3], &mut rng);
        let b = randn(&[3], &mut rng);
        let gout = randn(&[1, 3, 3, 3], &mut rng);
        let y = ops::conv2d(&x, &w, &b, (2, 2), (1, 1))?;
        assert_eq!(y.shape(), gout.shape());
        let (gx, _, _) = ops::conv2d_backward(&x, &w, &gout, (2, 2), (1, 1))?;
        let rep = check(
            &mut |t: &Tensor<f64>| {
                let y = ops::conv2d(t, &w, &b, (2, 2), (1, 1)).unwrap();
                y.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
            },
            &x,
            &gx,
        );
        out.push(("conv2d".to_string(), rep.max_rel_err));
    }

    // linear
    {
        let x = randn(&[4, 5], &mut rng);
        let w = randn(&[3, 5], &mut rng);
        let b = randn(&[3], &mut rng);
        let gout = randn(&[4, 3], &mut rng);
        let (gx, _, _) = ops::linear_backward(&x, &w, &gout);
        let rep = check(
            &mut |t: &Tensor<f64>| {
                ops::linear(t, &w, &b)
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &gx,
        );
        out.push(("linear".to_string(), rep.max_rel_err));
    }

    // log_softmax
    {
        let x = randn(&[3, 6], &mut rng);
        let gout = randn(&[3, 6], &mut rng);
        let y = ops::log_softmax(&x);
        let gx = ops::log_softmax_backward(&y, &gout);
        let rep = check(
            &mut |t: &Tensor<f64>| {
                ops::log_softmax(t)
                    .data()
                    .iter()
                    .zip(gout.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &gx,
        );
        out.push(("log_softmax".to_string(), rep.max_rel_err));
    }

    // batch norm (training statistics)
    {
        let x = randn(&[2, 3, 4, 4], &mut rng);
        let gamma = randn(&[3], &mut rng);
        let beta = randn(&[3], &mut rng);
        let gout = randn(&[2, 3, 4, 4], &mut rng);
        let mut fwd = |t: &Tensor<f64>| {
            let mut rm = Tensor::zeros(&[3]);
            let mut rv = Tensor::full(&[3], 1.0);
            let (y, _) = ops::batch_norm_train(t, &gamma, &beta, &mut rm, &mut rv);
            y.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
        };
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::full(&[3], 1.0);
        let (_, cache) = ops::batch_norm_train(&x, &gamma, &beta, &mut rm, &mut rv);
        let (gx, _, _) = ops::batch_norm_train_backward(&cache, &gamma, &gout);
        let numeric = finite_diff(&mut fwd, &x, FD_EPS);
        let rep = compare_grads(&gx, &numeric);
        out.push(("batch_norm".to_string(), rep.max_rel_err));
    }

    // sequence model
    {
        let x = randn(&[5, 1, 4], &mut rng);
        let wf = (
            randn(&[12, 4], &mut rng),
            randn(&[12, 3], &mut rng),
            randn(&[12], &mut rng),
        );
        let wb = (
            randn(&[12, 4], &mut rng),
            randn(&[12, 3], &mut rng),
            randn(&[12], &mut rng),
        );
        let gout = randn(&[5, 1, 3], &mut rng);
        let (_, cache) = ops::bilstm_forward(&x, (&wf.0, &wf.1, &wf.2), (&wb.0, &wb.1, &wb.2))?;
        let (gx, _, _) = ops::bilstm_backward(
            &x,
            (&wf.0, &wf.1, &wf.2),
            (&wb.0, &wb.1, &wb.2),
            &cache,
            &gout,
        )?;
        let rep = check(
            &mut |t: &Tensor<f64>| {
                let (y, _) =
                    ops::bilstm_forward(t, (&wf.0, &wf.1, &wf.2), (&wb.0, &wb.1, &wb.2)).unwrap();
                y.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
            },
            &x,
            &gx,
        );
        out.push(("bilstm".to_string(), rep.max_rel_err));
    }

    // sequence loss
    {
        let labels = [0usize, 1, 0];
        let x = randn(&[6, 4], &mut rng);
        let lp = ops::log_softmax(&x);
        let (_, glp) = fots_core::ctc::ctc_loss(&lp, &labels)?;
        let gx = ops::log_softmax_backward(&lp, &glp);
        let rep = check(
            &mut |t: &Tensor<f64>| {
                let lp = ops::log_softmax(t);
                fots_core::ctc::ctc_loss(&lp, &labels).unwrap().0
            },
            &x,
            &gx,
        );
        out.push(("ctc".to_string(), rep.max_rel_err));
    }

    // rotated region extraction
    {
        let feat = randn(&[2, 12, 16], &mut rng);
        let geo = fots_core::geometry::RBoxGeo::new(2.0, 2.5, 3.0, 4.0, 0.3);
        let params = fots_core::roirotate::affine_params([7.0, 6.0], &geo, 4, 16)?;
        let gout = randn(&[2, 4, params.out_width], &mut rng);
        let gx = fots_core::roirotate::roi_rotate_backward(feat.shape(), &params, &gout);
        let rep = check(
            &mut |t: &Tensor<f64>| {
                let y = fots_core::roirotate::roi_rotate_forward(t, &params);
                y.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
            },
            &feat,
            &gx,
        );
        out.push(("roi_rotate".to_string(), rep.max_rel_err));
    }

    Ok(out)
}
