//! Binary PGM (P5) and PPM (P6) image files, 8-bit, values mapped to [0,1].

use std::io::Write;
use std::path::Path;

use crate::error::{FotsError, Result};
use crate::tensor::Tensor;

fn bad<P: AsRef<Path>>(path: P, msg: impl Into<String>) -> FotsError {
    FotsError::data(path.as_ref(), msg.into())
}

/// Read a P5 or P6 file into [1, H, W] or [3, H, W].
pub fn read_pnm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| FotsError::io(path, e))?;
    let mut pos = 0usize;

    // header tokens separated by whitespace, with '#' comments
    let next_token = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(bad(path, format!("unsupported magic {other:?}"))),
    };
    let parse_dim = |tok: String| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| bad(path, format!("bad header value {tok:?}")))
    };
    let w = parse_dim(next_token(&bytes, &mut pos)?)?;
    let h = parse_dim(next_token(&bytes, &mut pos)?)?;
    let maxval = parse_dim(next_token(&bytes, &mut pos)?)?;
    if w == 0 || h == 0 {
        return Err(bad(path, format!("empty image {w}x{h}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(bad(path, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header from pixel data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing pixel data separator"));
    }
    pos += 1;
    let need = w * h * channels;
    if bytes.len() - pos < need {
        return Err(bad(
            path,
            format!("pixel data truncated: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let raw = &bytes[pos..pos + need];
    let scale = 1.0f32 / maxval as f32;
    let mut out = Tensor::zeros(&[channels, h, w]);
    // interleaved rows -> planar channels
    for i in 0..h {
        for j in 0..w {
            for c in 0..channels {
                out.data_mut()[c * h * w + i * w + j] =
                    raw[(i * w + j) * channels + c] as f32 * scale;
            }
        }
    }
    Ok(out)
}

/// Write [1, H, W] as P5 or [3, H, W] as P6, clamping values into [0,1].
pub fn write_pnm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    if image.shape().len() != 3 {
        return Err(FotsError::Invalid(format!(
            "expected [C, H, W] image, got {:?}",
            image.shape()
        )));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        other => {
            return Err(FotsError::Invalid(format!(
                "can only write 1 or 3 channels, got {other}"
            )))
        }
    };
    let mut buf = Vec::with_capacity(32 + c * h * w);
    write!(&mut buf, "{magic}\n{w} {h}\n255\n").expect("in-memory write");
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v = image.data()[ch * h * w + i * w + j].clamp(0.0, 1.0);
                buf.push((v * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| FotsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("fots-pnm-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn gray_round_trip_is_exact() {
        let mut img = Tensor::<f32>::zeros(&[1, 3, 5]);
        for (k, v) in img.data_mut().iter_mut().enumerate() {
            *v = (k * 17 % 256) as f32 / 255.0;
        }
        let path = tmp("gray.pgm");
        write_pnm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(back.shape(), &[1, 3, 5]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn color_round_trip_is_exact() {
        let mut img = Tensor::<f32>::zeros(&[3, 2, 4]);
        for (k, v) in img.data_mut().iter_mut().enumerate() {
            *v = (k * 31 % 256) as f32 / 255.0;
        }
        let path = tmp("color.ppm");
        write_pnm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(back.shape(), &[3, 2, 4]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let path = tmp("comment.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        let img = read_pnm(&path).unwrap();
        assert_eq!(img.shape(), &[1, 2, 2]);
        assert!((img.data()[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let path = tmp("trunc.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nab").unwrap();
        assert!(read_pnm(&path).is_err());
        let path = tmp("foreign.bin");
        std::fs::write(&path, b"GIF89a nonsense").unwrap();
        assert!(read_pnm(&path).is_err());
        assert!(read_pnm(&tmp("missing.pgm")).is_err());
    }
}
