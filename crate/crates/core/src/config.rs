//! Run configuration: plain `key = value` text files over hard-coded
//! defaults. Unknown keys are errors so typos never silently fall back.

use std::path::{Path, PathBuf};

use crate::error::{FotsError, Result};
use crate::model::BackboneArch;
use crate::recognize::RecogArch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Joint,
    DetectOnly,
    RecogOnly,
}

impl Mode {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "JOINT" => Ok(Mode::Joint),
            "DETECT_ONLY" => Ok(Mode::DetectOnly),
            "RECOG_ONLY" => Ok(Mode::RecogOnly),
            other => Err(FotsError::Invalid(format!(
                "mode must be JOINT, DETECT_ONLY, or RECOG_ONLY, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Joint => "JOINT",
            Mode::DetectOnly => "DETECT_ONLY",
            Mode::RecogOnly => "RECOG_ONLY",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    // architecture
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    pub shared_channels: usize,
    pub recog_channels: [usize; 3],
    pub recog_hidden: usize,
    pub crop_enc_channels: [usize; 2],
    pub strip_height: usize,
    pub dropout: f64,
    // losses
    pub lambda_theta: f64,
    pub lambda_reg: f64,
    pub lambda_recog: f64,
    // targets & decoding
    pub shrink_ratio: f64,
    pub score_thresh: f64,
    pub nms_thresh: f64,
    // data
    pub charset_path: Option<PathBuf>,
    pub crop: usize,
    pub augment: bool,
    pub synth_count: usize,
    // optimizer
    pub lr: f64,
    pub momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::Joint,
            seed: 1,
            epochs: 4,
            in_channels: 1,
            stage_channels: [12, 24, 48, 64],
            shared_channels: 32,
            recog_channels: [12, 16, 24],
            recog_hidden: 24,
            crop_enc_channels: [10, 16],
            strip_height: 8,
            dropout: 0.2,
            lambda_theta: 10.0,
            lambda_reg: 1.0,
            lambda_recog: 1.0,
            shrink_ratio: 0.3,
            score_thresh: 0.7,
            nms_thresh: 0.2,
            charset_path: None,
            crop: 320,
            augment: true,
            synth_count: 500,
            lr: 0.02,
            momentum: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn backbone_arch(&self) -> BackboneArch {
        BackboneArch {
            in_channels: self.in_channels,
            stage_channels: self.stage_channels,
            out_channels: self.shared_channels,
        }
    }

    /// Branch shape for a symbol table of the given size (in_channels is
    /// filled in by the model that owns the branch).
    pub fn recog_arch(&self, num_classes: usize) -> RecogArch {
        RecogArch {
            in_channels: 0,
            conv_channels: self.recog_channels,
            hidden: self.recog_hidden,
            num_classes,
            dropout: self.dropout,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.strip_height != crate::recognize::STRIP_HEIGHT {
            return Err(FotsError::Invalid(format!(
                "strip_height {} unsupported; the recognition stack pools down from {}",
                self.strip_height,
                crate::recognize::STRIP_HEIGHT
            )));
        }
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(FotsError::Invalid(format!(
                "crop {} must be a positive multiple of 4",
                self.crop
            )));
        }
        if !(0.0..1.0).contains(&self.shrink_ratio) {
            return Err(FotsError::Invalid(format!(
                "shrink_ratio {} outside [0, 1)",
                self.shrink_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout) || self.dropout >= 1.0 {
            return Err(FotsError::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum)] {
            if !v.is_finite() || v < 0.0 {
                return Err(FotsError::Invalid(format!("{name} {v} must be finite and >= 0")));
            }
        }
        let channels_ok = self.stage_channels.iter().all(|&c| c > 0)
            && self.recog_channels.iter().all(|&c| c > 0)
            && self.crop_enc_channels.iter().all(|&c| c > 0)
            && self.shared_channels > 0
            && self.recog_hidden > 0
            && self.in_channels > 0;
        if !channels_ok {
            return Err(FotsError::Invalid("all channel widths must be positive".into()));
        }
        Ok(())
    }
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(FotsError::Invalid(format!(
            "{key} wants {N} comma-separated integers, got {value:?}"
        )));
    }
    let mut out = [0usize; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| FotsError::Invalid(format!("{key}: bad integer {part:?}")))?;
    }
    Ok(out)
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| FotsError::Invalid(format!("{key}: cannot parse {value:?}")))
}

/// Apply `key = value` lines to the defaults. Unknown keys are hard errors.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            FotsError::Invalid(format!("line {}: expected key = value, got {line:?}", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let located = |e: FotsError| FotsError::Invalid(format!("line {}: {e}", idx + 1));
        match key {
            "mode" => cfg.mode = Mode::parse(value).map_err(located)?,
            "seed" => cfg.seed = parse_scalar(key, value).map_err(located)?,
            "epochs" => cfg.epochs = parse_scalar(key, value).map_err(located)?,
            "in_channels" => cfg.in_channels = parse_scalar(key, value).map_err(located)?,
            "stage_channels" => cfg.stage_channels = parse_list(key, value).map_err(located)?,
            "shared_channels" => {
                cfg.shared_channels = parse_scalar(key, value).map_err(located)?
            }
            "recog_channels" => cfg.recog_channels = parse_list(key, value).map_err(located)?,
            "recog_hidden" => cfg.recog_hidden = parse_scalar(key, value).map_err(located)?,
            "crop_enc_channels" => {
                cfg.crop_enc_channels = parse_list(key, value).map_err(located)?
            }
            "strip_height" => cfg.strip_height = parse_scalar(key, value).map_err(located)?,
            "dropout" => cfg.dropout = parse_scalar(key, value).map_err(located)?,
            "lambda_theta" => cfg.lambda_theta = parse_scalar(key, value).map_err(located)?,
            "lambda_reg" => cfg.lambda_reg = parse_scalar(key, value).map_err(located)?,
            "lambda_recog" => cfg.lambda_recog = parse_scalar(key, value).map_err(located)?,
            "shrink_ratio" => cfg.shrink_ratio = parse_scalar(key, value).map_err(located)?,
            "score_thresh" => cfg.score_thresh = parse_scalar(key, value).map_err(located)?,
            "nms_thresh" => cfg.nms_thresh = parse_scalar(key, value).map_err(located)?,
            "charset" => cfg.charset_path = Some(PathBuf::from(value)),
            "crop" => cfg.crop = parse_scalar(key, value).map_err(located)?,
            "augment" => {
                cfg.augment = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(FotsError::Invalid(format!(
                            "line {}: augment must be true or false, got {value:?}",
                            idx + 1
                        )))
                    }
                }
            }
            "synth_count" => cfg.synth_count = parse_scalar(key, value).map_err(located)?,
            "lr" => cfg.lr = parse_scalar(key, value).map_err(located)?,
            "momentum" => cfg.momentum = parse_scalar(key, value).map_err(located)?,
            other => {
                return Err(FotsError::Invalid(format!(
                    "line {}: unknown configuration key {other:?}",
                    idx + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| FotsError::io(path, e))?;
    parse_config(&text).map_err(|e| FotsError::data(path, e.to_string()))
}
