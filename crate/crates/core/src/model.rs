//! Network assembly: a four-stage strided encoder with two top-down merge
//! steps producing shared features at exactly 1/4 input resolution, the
//! dense detection head over those features, the joint spotting model, and
//! the standalone crop recognizer used by the two-stage baseline.

use std::collections::BTreeMap;

use crate::detect::{ScoreGeoMaps, MAP_STRIDE};
use crate::error::{FotsError, Result};
use crate::layers::{CbrCache, Conv2dLayer, ConvBnRelu, ConvCache};
use crate::ops::{bilinear_upsample, bilinear_upsample_backward, sigmoid_scalar};
use crate::recognize::{RecogArch, RecognitionNet, STRIP_HEIGHT};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

/// Input height for standalone crop recognition; the crop encoder reduces
/// it to the strip height by two stride-2 stages.
pub const CROP_HEIGHT: usize = 4 * STRIP_HEIGHT;

/// Raw geometry activations are clamped to keep exp() in a sane range.
const GEO_RAW_MIN: f64 = -8.0;
const GEO_RAW_MAX: f64 = 7.0;

#[derive(Clone, Debug)]
pub struct BackboneArch {
    pub in_channels: usize,
    pub stage_channels: [usize; 4],
    pub out_channels: usize,
}

impl Default for BackboneArch {
    fn default() -> Self {
        BackboneArch {
            in_channels: 1,
            stage_channels: [8, 16, 32, 48],
            out_channels: 16,
        }
    }
}

/// Four stride-2 stages, then two top-down merges (1x1 conv, x2 bilinear
/// upsample, concat with the lateral stage, 3x3 fuse).
#[derive(Clone, Debug)]
pub struct Backbone<T> {
    stages: Vec<ConvBnRelu<T>>, // 2 layers per stage: stride-2 then stride-1
    lat_a: Conv2dLayer<T>,      // stage4 -> stage3 channel width
    fuse_a: ConvBnRelu<T>,
    lat_b: Conv2dLayer<T>,      // merged -> stage2 channel width
    fuse_b: ConvBnRelu<T>,
    pub arch: BackboneArch,
}

pub struct BackboneCache<T> {
    stage_caches: Vec<CbrCache<T>>,
    lat_a: ConvCache<T>,
    lat_a_out_shape: Vec<usize>,
    cat_a_split: usize,
    fuse_a: CbrCache<T>,
    lat_b: ConvCache<T>,
    lat_b_out_shape: Vec<usize>,
    cat_b_split: usize,
    fuse_b: CbrCache<T>,
}

/// x2 upsample then crop to the lateral map's size (stride arithmetic can
/// leave the upsampled map one pixel larger on ragged inputs).
fn up2_to<T: Scalar>(x: &Tensor<T>, th: usize, tw: usize) -> Result<Tensor<T>> {
    let up = bilinear_upsample(x, 2)?;
    let (n, c, h, w) = (up.shape()[0], up.shape()[1], up.shape()[2], up.shape()[3]);
    if h == th && w == tw {
        return Ok(up);
    }
    if h < th || w < tw {
        return Err(FotsError::Invalid(format!(
            "upsampled map {h}x{w} smaller than lateral {th}x{tw}"
        )));
    }
    let mut out = Tensor::zeros(&[n, c, th, tw]);
    for nc in 0..n * c {
        for i in 0..th {
            let src = &up.data()[(nc * h + i) * w..(nc * h + i) * w + tw];
            out.data_mut()[(nc * th + i) * tw..(nc * th + i + 1) * tw].copy_from_slice(src);
        }
    }
    Ok(out)
}

fn up2_to_backward<T: Scalar>(
    in_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (uh, uw) = (in_shape[2] * 2, in_shape[3] * 2);
    let (n, c, th, tw) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
        grad_out.shape()[3],
    );
    let g_full = if th == uh && tw == uw {
        grad_out.clone()
    } else {
        let mut g = Tensor::zeros(&[n, c, uh, uw]);
        for nc in 0..n * c {
            for i in 0..th {
                let src = &grad_out.data()[(nc * th + i) * tw..(nc * th + i + 1) * tw];
                g.data_mut()[(nc * uh + i) * uw..(nc * uh + i) * uw + tw].copy_from_slice(src);
            }
        }
        g
    };
    bilinear_upsample_backward(in_shape, 2, &g_full)
}

fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (ca, cb) = (a.shape()[1], b.shape()[1]);
    let (h, w) = (a.shape()[2], a.shape()[3]);
    assert_eq!(&a.shape()[2..], &b.shape()[2..], "spatial mismatch in concat");
    let mut out = Tensor::zeros(&[1, ca + cb, h, w]);
    out.data_mut()[..ca * h * w].copy_from_slice(a.data());
    out.data_mut()[ca * h * w..].copy_from_slice(b.data());
    out
}

fn split_channels<T: Scalar>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let (c, h, w) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let a = Tensor::from_vec(vec![1, ca, h, w], g.data()[..ca * h * w].to_vec());
    let b = Tensor::from_vec(vec![1, c - ca, h, w], g.data()[ca * h * w..].to_vec());
    (a, b)
}

impl<T: Scalar> Backbone<T> {
    pub fn new(arch: BackboneArch, seed: u64) -> Self {
        let [c1, c2, c3, c4] = arch.stage_channels;
        let plan = [
            (arch.in_channels, c1),
            (c1, c1),
            (c1, c2),
            (c2, c2),
            (c2, c3),
            (c3, c3),
            (c3, c4),
            (c4, c4),
        ];
        let stages = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let stride = if i % 2 == 0 { (2, 2) } else { (1, 1) };
                ConvBnRelu::new(&format!("bb.s{i}"), cin, cout, 3, stride, (1, 1), seed)
            })
            .collect();
        Backbone {
            stages,
            lat_a: Conv2dLayer::new("bb.lat_a", c4, c3, 1, (1, 1), (0, 0), seed),
            fuse_a: ConvBnRelu::new("bb.fuse_a", 2 * c3, c3, 3, (1, 1), (1, 1), seed),
            lat_b: Conv2dLayer::new("bb.lat_b", c3, c2, 1, (1, 1), (0, 0), seed),
            fuse_b: ConvBnRelu::new("bb.fuse_b", 2 * c2, arch.out_channels, 3, (1, 1), (1, 1), seed),
            arch,
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let sh = image.shape();
        if sh.len() != 4 || sh[0] != 1 || sh[1] != self.arch.in_channels {
            return Err(FotsError::Invalid(format!(
                "expected [1, {}, H, W] image, got {sh:?}",
                self.arch.in_channels
            )));
        }
        if sh[2] % MAP_STRIDE != 0 || sh[3] % MAP_STRIDE != 0 || sh[2] == 0 || sh[3] == 0 {
            return Err(FotsError::Invalid(format!(
                "image {}x{} not divisible by {MAP_STRIDE} on the height or width axis",
                sh[2], sh[3]
            )));
        }
        Ok(())
    }

    /// Shared features [1, out_channels, H/4, W/4].
    pub fn forward_train(&mut self, image: &Tensor<T>) -> Result<(Tensor<T>, BackboneCache<T>)> {
        self.check_input(image)?;
        let mut x = image.clone();
        let mut stage_caches = Vec::with_capacity(8);
        let mut stage_outs = Vec::with_capacity(4);
        for (i, layer) in self.stages.iter_mut().enumerate() {
            let (y, cache) = layer.forward_train(&x)?;
            stage_caches.push(cache);
            x = y;
            if i % 2 == 1 {
                stage_outs.push(x.clone());
            }
        }
        let x4 = &stage_outs[3];
        let x3 = &stage_outs[2];
        let x2 = &stage_outs[1];
        let (lat_a_out, lat_a) = self.lat_a.forward(x4)?;
        let up_a = up2_to(&lat_a_out, x3.shape()[2], x3.shape()[3])?;
        let cat_a = concat_channels(&up_a, x3);
        let (merged_a, fuse_a) = self.fuse_a.forward_train(&cat_a)?;
        let (lat_b_out, lat_b) = self.lat_b.forward(&merged_a)?;
        let up_b = up2_to(&lat_b_out, x2.shape()[2], x2.shape()[3])?;
        let cat_b = concat_channels(&up_b, x2);
        let (out, fuse_b) = self.fuse_b.forward_train(&cat_b)?;
        let cache = BackboneCache {
            stage_caches,
            lat_a,
            lat_a_out_shape: lat_a_out.shape().to_vec(),
            cat_a_split: up_a.shape()[1],
            fuse_a,
            lat_b,
            lat_b_out_shape: lat_b_out.shape().to_vec(),
            cat_b_split: up_b.shape()[1],
            fuse_b,
        };
        Ok((out, cache))
    }

    pub fn forward_eval(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(image)?;
        let mut x = image.clone();
        let mut stage_outs = Vec::with_capacity(4);
        for (i, layer) in self.stages.iter().enumerate() {
            x = layer.forward_eval(&x)?;
            if i % 2 == 1 {
                stage_outs.push(x.clone());
            }
        }
        let (lat_a_out, _) = self.lat_a.forward(&stage_outs[3])?;
        let up_a = up2_to(&lat_a_out, stage_outs[2].shape()[2], stage_outs[2].shape()[3])?;
        let cat_a = concat_channels(&up_a, &stage_outs[2]);
        let merged_a = self.fuse_a.forward_eval(&cat_a)?;
        let (lat_b_out, _) = self.lat_b.forward(&merged_a)?;
        let up_b = up2_to(&lat_b_out, stage_outs[1].shape()[2], stage_outs[1].shape()[3])?;
        let cat_b = concat_channels(&up_b, &stage_outs[1]);
        self.fuse_b.forward_eval(&cat_b)
    }

    pub fn backward(&mut self, cache: &BackboneCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_cat_b = self.fuse_b.backward(&cache.fuse_b, grad_out)?;
        let (g_up_b, g_x2) = split_channels(&g_cat_b, cache.cat_b_split);
        let g_lat_b_out = up2_to_backward(&cache.lat_b_out_shape, &g_up_b)?;
        let g_merged_a = self.lat_b.backward(&cache.lat_b, &g_lat_b_out)?;
        let g_cat_a = self.fuse_a.backward(&cache.fuse_a, &g_merged_a)?;
        let (g_up_a, g_x3) = split_channels(&g_cat_a, cache.cat_a_split);
        let g_lat_a_out = up2_to_backward(&cache.lat_a_out_shape, &g_up_a)?;
        let g_x4 = self.lat_a.backward(&cache.lat_a, &g_lat_a_out)?;

        // stages 3 and 2 feed both the next stage and a lateral branch
        let mut g = g_x4;
        for i in (0..8).rev() {
            if i == 5 {
                g.add_assign(&g_x3);
            } else if i == 3 {
                g.add_assign(&g_x2);
            }
            g = self.stages[i].backward(&cache.stage_caches[i], &g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend(s.params_mut());
        }
        out.extend(self.lat_a.params_mut());
        out.extend(self.fuse_a.params_mut());
        out.extend(self.lat_b.params_mut());
        out.extend(self.fuse_b.params_mut());
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend(s.named());
        }
        out.extend(self.lat_a.named());
        out.extend(self.fuse_a.named());
        out.extend(self.lat_b.named());
        out.extend(self.fuse_b.named());
        out
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for s in &mut self.stages {
            s.load(map)?;
        }
        self.lat_a.load(map)?;
        self.fuse_a.load(map)?;
        self.lat_b.load(map)?;
        self.fuse_b.load(map)
    }
}

/// 1x1 conv producing six channels: text score, four side distances, angle.
#[derive(Clone, Debug)]
pub struct DetectionHead<T> {
    conv: Conv2dLayer<T>,
}

pub struct DetHeadCache<T> {
    conv: ConvCache<T>,
    score: Tensor<T>, // activated
    geo: Tensor<T>,   // activated
}

impl<T: Scalar> DetectionHead<T> {
    pub fn new(cin: usize, seed: u64) -> Self {
        let mut conv = Conv2dLayer::new("det.head", cin, 6, 1, (1, 1), (0, 0), seed);
        {
            // start from a low text prior and ~12 px edge distances instead
            // of degenerate 4 px boxes
            let b = conv.b.value.data_mut();
            b[0] = T::from_f64(-2.0);
            for v in &mut b[1..5] {
                *v = T::from_f64(3.0f64.ln());
            }
        }
        DetectionHead { conv }
    }

    fn activate(&self, raw: &Tensor<T>) -> ScoreGeoMaps<T> {
        let (h, w) = (raw.shape()[2], raw.shape()[3]);
        let hw = h * w;
        let mut maps = ScoreGeoMaps::zeros(h, w);
        for idx in 0..hw {
            maps.score.data_mut()[idx] = T::from_f64(sigmoid_scalar(raw.data()[idx].to_f64()));
        }
        for k in 0..4 {
            for idx in 0..hw {
                let r = raw.data()[(1 + k) * hw + idx].to_f64();
                let c = r.clamp(GEO_RAW_MIN, GEO_RAW_MAX);
                maps.geo.data_mut()[k * hw + idx] =
                    T::from_f64(c.exp() * MAP_STRIDE as f64);
            }
        }
        for idx in 0..hw {
            maps.angle.data_mut()[idx] = raw.data()[5 * hw + idx];
        }
        maps
    }

    pub fn forward_train(
        &self,
        features: &Tensor<T>,
    ) -> Result<(ScoreGeoMaps<T>, DetHeadCache<T>)> {
        let (raw, conv) = self.conv.forward(features)?;
        let maps = self.activate(&raw);
        let cache = DetHeadCache {
            conv,
            score: maps.score.clone(),
            geo: maps.geo.clone(),
        };
        Ok((maps, cache))
    }

    pub fn forward_eval(&self, features: &Tensor<T>) -> Result<ScoreGeoMaps<T>> {
        let (raw, _) = self.conv.forward(features)?;
        Ok(self.activate(&raw))
    }

    /// Chain loss gradients on the activated maps back to the features.
    pub fn backward(
        &mut self,
        cache: &DetHeadCache<T>,
        d_score: &Tensor<T>,
        d_geo: &Tensor<T>,
        d_angle: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (h, w) = (cache.score.shape()[1], cache.score.shape()[2]);
        let hw = h * w;
        let mut d_raw = Tensor::zeros(&[1, 6, h, w]);
        for idx in 0..hw {
            let s = cache.score.data()[idx];
            d_raw.data_mut()[idx] = d_score.data()[idx] * s * (T::one() - s);
        }
        for k in 0..4 {
            for idx in 0..hw {
                // geo = stride * exp(clamp(raw)); chain through the clamped
                // slope even where raw saturates so boxes can shrink back.
                d_raw.data_mut()[(1 + k) * hw + idx] =
                    d_geo.data()[k * hw + idx] * cache.geo.data()[k * hw + idx];
            }
        }
        for idx in 0..hw {
            d_raw.data_mut()[5 * hw + idx] = d_angle.data()[idx];
        }
        self.conv.backward(&cache.conv, &d_raw)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.conv.params_mut()
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.conv.named()
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.conv.load(map)
    }
}

/// Backbone + detection head, plus (in joint configurations) the shared
/// recognition branch operating on RoI strips of the backbone features.
#[derive(Clone, Debug)]
pub struct SpottingModel<T> {
    pub backbone: Backbone<T>,
    pub head: DetectionHead<T>,
    pub recog: Option<RecognitionNet<T>>,
}

impl<T: Scalar> SpottingModel<T> {
    pub fn new(
        backbone_arch: BackboneArch,
        recog_arch: Option<RecogArch>,
        seed: u64,
    ) -> Self {
        let out_c = backbone_arch.out_channels;
        let backbone = Backbone::new(backbone_arch, seed);
        let head = DetectionHead::new(out_c, seed);
        let recog = recog_arch.map(|mut arch| {
            arch.in_channels = out_c;
            RecognitionNet::new("recog", arch, seed)
        });
        SpottingModel {
            backbone,
            head,
            recog,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = self.backbone.params_mut();
        out.extend(self.head.params_mut());
        if let Some(r) = &mut self.recog {
            out.extend(r.params_mut());
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.backbone.named();
        out.extend(self.head.named());
        if let Some(r) = &self.recog {
            out.extend(r.named());
        }
        out
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.backbone.load(map)?;
        self.head.load(map)?;
        if let Some(r) = &mut self.recog {
            r.load(map)?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Standalone recognizer for the two-stage baseline: encodes image-space
/// crops (height 32) down to strip height, then runs the same branch
/// architecture. Contains no detection parameters at all.
#[derive(Clone, Debug)]
pub struct CropRecognizer<T> {
    pub encoder: Vec<ConvBnRelu<T>>,
    pub branch: RecognitionNet<T>,
}

pub struct CropRecogCache<T> {
    enc: Vec<CbrCache<T>>,
    branch: crate::recognize::RecogCache<T>,
}

impl<T: Scalar> CropRecognizer<T> {
    /// `enc_channels` = widths of the two encoder stages; the second one is
    /// the strip depth fed to the branch.
    pub fn new(
        in_channels: usize,
        enc_channels: [usize; 2],
        mut branch_arch: RecogArch,
        seed: u64,
    ) -> Self {
        let [e1, e2] = enc_channels;
        let plan = [
            (in_channels, e1, (2, 2)),
            (e1, e1, (1, 1)),
            (e1, e2, (2, 2)),
            (e2, e2, (1, 1)),
        ];
        let encoder = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                ConvBnRelu::new(&format!("crop.enc{i}"), cin, cout, 3, stride, (1, 1), seed)
            })
            .collect();
        branch_arch.in_channels = e2;
        CropRecognizer {
            encoder,
            branch: RecognitionNet::new("crop.branch", branch_arch, seed),
        }
    }

    fn check_crop(&self, crop: &Tensor<T>) -> Result<usize> {
        let sh = crop.shape();
        let cin = self.encoder[0].w.value.shape()[1];
        if sh.len() != 3 || sh[0] != cin || sh[1] != CROP_HEIGHT || sh[2] < MAP_STRIDE {
            return Err(FotsError::Invalid(format!(
                "crop shape {sh:?}, expected [{cin}, {CROP_HEIGHT}, width>={MAP_STRIDE}]"
            )));
        }
        Ok(sh[2])
    }

    pub fn forward_train(
        &mut self,
        crop: &Tensor<T>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(Tensor<T>, CropRecogCache<T>)> {
        let w = self.check_crop(crop)?;
        let cin = crop.shape()[0];
        let mut x = Tensor::from_vec(vec![1, cin, CROP_HEIGHT, w], crop.data().to_vec());
        let mut enc = Vec::with_capacity(4);
        for layer in &mut self.encoder {
            let (y, cache) = layer.forward_train(&x)?;
            enc.push(cache);
            x = y;
        }
        let sh = x.shape().to_vec();
        let strip = Tensor::from_vec(vec![sh[1], sh[2], sh[3]], x.into_data());
        let (log_probs, branch) = self.branch.forward_train(&strip, rng)?;
        Ok((log_probs, CropRecogCache { enc, branch }))
    }

    pub fn forward_eval(&self, crop: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.check_crop(crop)?;
        let cin = crop.shape()[0];
        let mut x = Tensor::from_vec(vec![1, cin, CROP_HEIGHT, w], crop.data().to_vec());
        for layer in &self.encoder {
            x = layer.forward_eval(&x)?;
        }
        let sh = x.shape().to_vec();
        let strip = Tensor::from_vec(vec![sh[1], sh[2], sh[3]], x.into_data());
        self.branch.forward_eval(&strip)
    }

    pub fn backward(&mut self, cache: &CropRecogCache<T>, grad_logp: &Tensor<T>) -> Result<()> {
        let g_strip = self.branch.backward(&cache.branch, grad_logp)?;
        let sh = g_strip.shape().to_vec();
        let mut g = Tensor::from_vec(vec![1, sh[0], sh[1], sh[2]], g_strip.into_data());
        for i in (0..self.encoder.len()).rev() {
            g = self.encoder[i].backward(&cache.enc[i], &g)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            out.extend(layer.params_mut());
        }
        out.extend(self.branch.params_mut());
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.encoder {
            out.extend(layer.named());
        }
        out.extend(self.branch.named());
        out
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for layer in &mut self.encoder {
            layer.load(map)?;
        }
        self.branch.load(map)
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn tiny_backbone(in_c: usize) -> BackboneArch {
        BackboneArch {
            in_channels: in_c,
            stage_channels: [2, 3, 4, 5],
            out_channels: 4,
        }
    }

    #[test]
    fn backbone_output_is_quarter_resolution() {
        let mut bb = Backbone::<f32>::new(
            BackboneArch {
                in_channels: 3,
                ..BackboneArch::default()
            },
            1,
        );
        let img = Tensor::<f32>::full(&[1, 3, 64, 64], 0.5);
        let (out, _) = bb.forward_train(&img).unwrap();
        assert_eq!(out.shape(), &[1, 16, 16, 16]);
        let img2 = Tensor::<f32>::full(&[1, 3, 128, 128], 0.5);
        let (out2, _) = bb.forward_train(&img2).unwrap();
        assert_eq!(out2.shape(), &[1, 16, 32, 32]);
    }

    #[test]
    fn ragged_deep_stages_still_give_quarter_output() {
        // 12 and 20 are divisible by 4 but odd at 1/8 and 1/16
        let mut bb = Backbone::<f32>::new(tiny_backbone(1), 2);
        let img = Tensor::<f32>::full(&[1, 1, 12, 20], 0.1);
        let (out, _) = bb.forward_train(&img).unwrap();
        assert_eq!(out.shape(), &[1, 4, 3, 5]);
    }

    #[test]
    fn rejects_bad_input_shapes() {
        let mut bb = Backbone::<f32>::new(tiny_backbone(1), 3);
        assert!(bb.forward_train(&Tensor::full(&[1, 2, 16, 16], 0.1)).is_err());
        assert!(bb.forward_train(&Tensor::full(&[1, 1, 15, 16], 0.1)).is_err());
    }

    #[test]
    fn backbone_gradient_matches_finite_difference() {
        let mut bb = Backbone::<f64>::new(tiny_backbone(1), 4);
        let mut rng = stream(4, "bb-grad", 0);
        let mut img = Tensor::<f64>::zeros(&[1, 1, 16, 16]);
        for v in img.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (out, cache) = bb.forward_train(&img).unwrap();
        let weights: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gout = Tensor::from_vec(out.shape().to_vec(), weights.clone());
        let analytic = bb.backward(&cache, &gout).unwrap();
        let mut f = |x: &Tensor<f64>| -> f64 {
            let (o, _) = bb.forward_train(x).unwrap();
            o.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let numeric = crate::gradcheck::finite_diff(&mut f, &img, 1e-5);
        let report = crate::gradcheck::compare_grads(&analytic, &numeric);
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_index
        );
    }

    #[test]
    fn eval_matches_train_stats_free_path_shapewise() {
        let mut bb = Backbone::<f32>::new(tiny_backbone(1), 5);
        let img = Tensor::<f32>::full(&[1, 1, 32, 32], 0.3);
        let (train_out, _) = bb.forward_train(&img).unwrap();
        let eval_out = bb.forward_eval(&img).unwrap();
        assert_eq!(train_out.shape(), eval_out.shape());
    }

    #[test]
    fn head_activations_have_correct_ranges() {
        let head = DetectionHead::<f32>::new(4, 6);
        let mut rng = stream(6, "head-act", 0);
        let mut feats = Tensor::<f32>::zeros(&[1, 4, 5, 7]);
        for v in feats.data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let (maps, _) = head.forward_train(&feats).unwrap();
        assert_eq!(maps.score.shape(), &[1, 5, 7]);
        assert_eq!(maps.geo.shape(), &[4, 5, 7]);
        for &s in maps.score.data() {
            assert!(s > 0.0 && s < 1.0);
        }
        for &g in maps.geo.data() {
            assert!(g > 0.0);
        }
    }

    #[test]
    fn head_gradient_matches_finite_difference() {
        let mut head = DetectionHead::<f64>::new(3, 7);
        let mut rng = stream(7, "head-grad", 0);
        let mut feats = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        for v in feats.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let ws: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wg: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let wa: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = head.forward_train(&feats).unwrap();
        let analytic = head
            .backward(
                &cache,
                &Tensor::from_vec(vec![1, 4, 4], ws.clone()),
                &Tensor::from_vec(vec![4, 4, 4], wg.clone()),
                &Tensor::from_vec(vec![1, 4, 4], wa.clone()),
            )
            .unwrap();
        let mut f = |x: &Tensor<f64>| -> f64 {
            let (m, _) = head.forward_train(x).unwrap();
            let a: f64 = m.score.data().iter().zip(&ws).map(|(v, w)| v * w).sum();
            let b: f64 = m.geo.data().iter().zip(&wg).map(|(v, w)| v * w).sum();
            let c: f64 = m.angle.data().iter().zip(&wa).map(|(v, w)| v * w).sum();
            a + b + c
        };
        let numeric = crate::gradcheck::finite_diff(&mut f, &feats, 1e-6);
        let report = crate::gradcheck::compare_grads(&analytic, &numeric);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_index
        );
    }

    #[test]
    fn param_names_are_unique() {
        let model = SpottingModel::<f32>::new(
            tiny_backbone(1),
            Some(RecogArch {
                in_channels: 0,
                conv_channels: [3, 4, 5],
                hidden: 6,
                num_classes: 11,
                dropout: 0.2,
            }),
            8,
        );
        let names: Vec<String> = model.named().iter().map(|(n, _)| n.clone()).collect();
        let unique: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(names.len(), unique.len());
    }

    #[test]
    fn detection_only_model_has_no_recognition_tensors() {
        let det = SpottingModel::<f32>::new(tiny_backbone(1), None, 9);
        assert!(det.named().iter().all(|(n, _)| !n.starts_with("recog.")));
        let crop = CropRecognizer::<f32>::new(
            1,
            [4, 5],
            RecogArch {
                in_channels: 0,
                conv_channels: [3, 4, 5],
                hidden: 6,
                num_classes: 11,
                dropout: 0.2,
            },
            9,
        );
        assert!(crop
            .named()
            .iter()
            .all(|(n, _)| !n.starts_with("bb.") && !n.starts_with("det.")));
    }

    #[test]
    fn save_load_round_trip_via_named_maps() {
        let arch = tiny_backbone(1);
        let a = SpottingModel::<f32>::new(arch.clone(), None, 10);
        let mut b = SpottingModel::<f32>::new(arch, None, 999);
        let map: BTreeMap<String, Tensor<f32>> = a
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        b.load(&map).unwrap();
        for ((_, ta), (_, tb)) in a.named().iter().zip(b.named().iter()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn crop_recognizer_reduces_to_strip_and_preserves_width_quarter() {
        let mut rec = CropRecognizer::<f32>::new(
            1,
            [4, 6],
            RecogArch {
                in_channels: 0,
                conv_channels: [4, 5, 6],
                hidden: 7,
                num_classes: 11,
                dropout: 0.0,
            },
            11,
        );
        let crop = Tensor::<f32>::full(&[1, CROP_HEIGHT, 40], 0.4);
        let mut rng = stream(11, "crop-fwd", 0);
        let (lp, _) = rec.forward_train(&crop, &mut rng).unwrap();
        assert_eq!(lp.shape(), &[10, 11]); // width 40 -> 10 frames
        let bad = Tensor::<f32>::full(&[1, 16, 40], 0.4);
        assert!(rec.forward_train(&bad, &mut rng).is_err());
    }
}
