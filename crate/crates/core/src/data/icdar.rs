//! Comma-separated quad annotations ("x1,y1,...,x4,y4,transcription"),
//! prediction files with score columns, and dataset manifests.

use std::path::{Path, PathBuf};

use super::pnm::read_pnm;
use super::{orient_quad, Sample, TextProposal};
use crate::error::{FotsError, Result};
use crate::geometry::Quad;
use crate::tensor::Tensor;

fn parse_line(line: &str, lineno: usize, with_score: bool) -> Result<TextProposal> {
    let fields = 8 + usize::from(with_score);
    let mut parts = line.splitn(fields + 1, ',');
    let mut nums = [0.0f64; 9];
    for (k, slot) in nums.iter_mut().enumerate().take(fields) {
        let tok = parts.next().ok_or_else(|| {
            FotsError::Invalid(format!(
                "line {lineno}: expected {fields} numbers + transcription, ran out at field {}",
                k + 1
            ))
        })?;
        *slot = tok.trim().parse::<f64>().map_err(|_| {
            FotsError::Invalid(format!("line {lineno}: bad number {:?}", tok.trim()))
        })?;
    }
    let transcription = parts
        .next()
        .ok_or_else(|| FotsError::Invalid(format!("line {lineno}: missing transcription")))?
        .to_string();
    let quad = orient_quad(Quad {
        pts: [
            [nums[0], nums[1]],
            [nums[2], nums[3]],
            [nums[4], nums[5]],
            [nums[6], nums[7]],
        ],
    });
    let mut p = TextProposal::new(quad, transcription);
    if with_score {
        p.score = Some(nums[8]);
    }
    Ok(p)
}

fn parse_lines(text: &str, with_score: bool) -> Result<Vec<TextProposal>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line, idx + 1, with_score)?);
    }
    Ok(out)
}

/// Ground-truth file body -> proposals. Errors carry 1-based line numbers.
pub fn parse_gt_text(text: &str) -> Result<Vec<TextProposal>> {
    parse_lines(text, false)
}

/// Prediction file body (adds a score column before the transcription).
pub fn parse_pred_text(text: &str) -> Result<Vec<TextProposal>> {
    parse_lines(text, true)
}

fn format_quad(quad: &Quad) -> String {
    let p = &quad.pts;
    format!(
        "{},{},{},{},{},{},{},{}",
        p[0][0], p[0][1], p[1][0], p[1][1], p[2][0], p[2][1], p[3][0], p[3][1]
    )
}

pub fn write_gt(path: &Path, proposals: &[TextProposal]) -> Result<()> {
    let mut body = String::new();
    for p in proposals {
        body.push_str(&format_quad(&p.quad));
        body.push(',');
        body.push_str(&p.transcription);
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| FotsError::io(path, e))
}

/// One prediction record: quad corners, score, transcription.
pub fn prediction_line(p: &TextProposal) -> String {
    format!(
        "{},{},{}",
        format_quad(&p.quad),
        p.score.unwrap_or(0.0),
        p.transcription
    )
}

pub fn write_predictions(path: &Path, proposals: &[TextProposal]) -> Result<()> {
    let mut body = String::new();
    for p in proposals {
        body.push_str(&prediction_line(p));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| FotsError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| FotsError::io(path, e))
}

pub fn load_gt_file(path: &Path) -> Result<Vec<TextProposal>> {
    parse_gt_text(&read_text(path)?).map_err(|e| FotsError::data(path, e.to_string()))
}

pub fn load_pred_file(path: &Path) -> Result<Vec<TextProposal>> {
    parse_pred_text(&read_text(path)?).map_err(|e| FotsError::data(path, e.to_string()))
}

/// Zero-pad an image on the bottom/right so both sides divide by 4.
pub fn pad_to_multiple_of_4(image: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (hp, wp) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
    if hp == h && wp == w {
        return image.clone();
    }
    let mut out = Tensor::zeros(&[c, hp, wp]);
    for ch in 0..c {
        for i in 0..h {
            let src = &image.data()[(ch * h + i) * w..(ch * h + i + 1) * w];
            let dst = &mut out.data_mut()[(ch * hp + i) * wp..(ch * hp + i) * wp + w];
            dst.copy_from_slice(src);
        }
    }
    out
}

/// Image + annotation file -> sample, padded to the divisible-by-4 contract
/// with quads left in original pixel coordinates.
pub fn load_icdar(image_path: &Path, gt_path: &Path) -> Result<Sample> {
    let image = pad_to_multiple_of_4(&read_pnm(image_path)?);
    let proposals = load_gt_file(gt_path)?;
    Ok(Sample {
        image,
        proposals,
        seed: 0,
    })
}

/// Manifest: one image/annotation path pair per line, whitespace-separated,
/// '#' comments allowed. Relative paths resolve against the manifest's
/// directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (img, gt) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(FotsError::data(
                    path,
                    format!("line {}: expected two paths", idx + 1),
                ))
            }
        };
        let resolve = |s: &str| {
            let p = Path::new(s);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        out.push((resolve(img), resolve(gt)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DO_NOT_CARE;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("fots-icdar-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn parses_axis_aligned_line() {
        let ps = parse_gt_text("0,0,10,0,10,5,0,5,hello\n").unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].transcription, "hello");
        assert_eq!(ps[0].quad.pts[0], [0.0, 0.0]);
        assert_eq!(ps[0].quad.pts[2], [10.0, 5.0]);
        assert_eq!(ps[0].theta, 0.0);
    }

    #[test]
    fn dont_care_and_comma_transcriptions() {
        let ps = parse_gt_text("0,0,10,0,10,5,0,5,###\n0,10,8,10,8,14,0,14,a,b\n").unwrap();
        assert!(ps[0].is_dont_care());
        assert_eq!(ps[1].transcription, "a,b");
    }

    #[test]
    fn tolerates_bom_and_crlf() {
        let ps = parse_gt_text("\u{feff}0,0,10,0,10,5,0,5,x\r\n\r\n").unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].transcription, "x");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_gt_text("0,0,10,0,10,5,0,5,ok\n1,2,three\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_gt_text("1,2,nope,4,5,6,7,8,t\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn reversed_vertex_order_is_fixed() {
        let ps = parse_gt_text("0,0,0,5,10,5,10,0,flip\n").unwrap();
        assert!(crate::geometry::polygon_area(&ps[0].quad.pts) > 0.0);
    }

    #[test]
    fn gt_round_trip_is_exact() {
        let quads = [
            Quad::from_rect(1.25, 2.5, 20.75, 8.125),
            Quad {
                pts: [
                    [3.1, 4.2],
                    [15.7, 6.9],
                    [14.3, 12.8],
                    [1.7, 10.1],
                ],
            },
        ];
        let ps: Vec<TextProposal> = vec![
            TextProposal::new(quads[0].clone(), "42".into()),
            TextProposal::new(quads[1].clone(), DO_NOT_CARE.into()),
        ];
        let path = tmp("round.txt");
        write_gt(&path, &ps).unwrap();
        let back = load_gt_file(&path).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn prediction_round_trip_keeps_scores() {
        let p = TextProposal::new(Quad::from_rect(0.0, 0.0, 9.5, 4.5), "77".into())
            .with_score(0.875);
        let path = tmp("pred.txt");
        write_predictions(&path, &[p.clone()]).unwrap();
        let back = load_pred_file(&path).unwrap();
        assert_eq!(back, vec![p]);
    }

    #[test]
    fn padding_rounds_up_without_shifting() {
        let mut img = Tensor::<f32>::zeros(&[1, 10, 13]);
        img.data_mut()[9 * 13 + 12] = 0.5;
        let padded = pad_to_multiple_of_4(&img);
        assert_eq!(padded.shape(), &[1, 12, 16]);
        assert_eq!(padded.data()[9 * 16 + 12], 0.5);
        assert_eq!(padded.data()[11 * 16 + 15], 0.0);
        let exact = Tensor::<f32>::zeros(&[1, 8, 8]);
        assert_eq!(pad_to_multiple_of_4(&exact).shape(), &[1, 8, 8]);
    }

    #[test]
    fn load_icdar_pairs_image_and_annotations() {
        let img_path = tmp("scene.pgm");
        let gt_path = tmp("scene.txt");
        let mut img = Tensor::<f32>::zeros(&[1, 6, 9]);
        img.fill(0.25);
        crate::data::pnm::write_pnm(&img_path, &img).unwrap();
        std::fs::write(&gt_path, "1,1,5,1,5,4,1,4,31\n").unwrap();
        let sample = load_icdar(&img_path, &gt_path).unwrap();
        assert_eq!(sample.image.shape(), &[1, 8, 12]);
        assert_eq!(sample.proposals.len(), 1);
        assert_eq!(sample.proposals[0].quad.pts[0], [1.0, 1.0]);
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = std::env::temp_dir().join("fots-icdar-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("list.txt");
        std::fs::write(&path, "# header\na.pgm gt_a.txt\n/abs/b.pgm /abs/gt_b.txt\n").unwrap();
        let pairs = parse_manifest(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, dir.join("a.pgm"));
        assert_eq!(pairs[0].1, dir.join("gt_a.txt"));
        assert_eq!(pairs[1].0, PathBuf::from("/abs/b.pgm"));
        std::fs::write(&path, "only_one_path\n").unwrap();
        assert!(parse_manifest(&path).is_err());
    }
}
