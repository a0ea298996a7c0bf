//! Procedural digit glyphs built from seven axis-aligned strokes on a unit
//! box, so rendered transcriptions have exact, font-free ground truth.

use crate::error::{FotsError, Result};
use crate::tensor::Tensor;

pub const GLYPH_SYMBOLS: &str = "0123456789";

/// Width/height ratio of every glyph cell.
pub const GLYPH_ASPECT: f64 = 0.62;
const STROKE: f64 = 0.18;

// segment bit order: top, top-right, bottom-right, bottom, bottom-left,
// top-left, middle
const SEGMENTS: [[f64; 4]; 7] = [
    [0.0, 0.0, 1.0, STROKE],
    [1.0 - STROKE, 0.0, 1.0, 0.5],
    [1.0 - STROKE, 0.5, 1.0, 1.0],
    [0.0, 1.0 - STROKE, 1.0, 1.0],
    [0.0, 0.5, STROKE, 1.0],
    [0.0, 0.0, STROKE, 0.5],
    [0.0, 0.5 - STROKE / 2.0, 1.0, 0.5 + STROKE / 2.0],
];

const DIGIT_MASKS: [u8; 10] = [
    0b0111111, // 0
    0b0000110, // 1
    0b1011011, // 2
    0b1001111, // 3
    0b1100110, // 4
    0b1101101, // 5
    0b1111101, // 6
    0b0000111, // 7
    0b1111111, // 8
    0b1101111, // 9
];

fn digit_mask(c: char) -> Result<u8> {
    let d = c
        .to_digit(10)
        .ok_or_else(|| FotsError::Invalid(format!("no glyph for character {c:?}")))?;
    Ok(DIGIT_MASKS[d as usize])
}

pub fn glyph_width(height: usize) -> usize {
    ((height as f64 * GLYPH_ASPECT).round() as usize).max(3)
}

/// Binary ink bitmap [height, width] for one symbol.
pub fn glyph_bitmap(c: char, height: usize) -> Result<Tensor<f32>> {
    if height < 5 {
        return Err(FotsError::Invalid(format!(
            "glyph height {height} too small to resolve strokes"
        )));
    }
    let mask = digit_mask(c)?;
    let width = glyph_width(height);
    let mut out = Tensor::zeros(&[height, width]);
    for i in 0..height {
        for j in 0..width {
            // pixel center in unit glyph coords
            let u = (j as f64 + 0.5) / width as f64;
            let v = (i as f64 + 0.5) / height as f64;
            let mut ink = false;
            for (s, rect) in SEGMENTS.iter().enumerate() {
                if mask >> s & 1 == 1
                    && u >= rect[0]
                    && u <= rect[2]
                    && v >= rect[1]
                    && v <= rect[3]
                {
                    ink = true;
                    break;
                }
            }
            if ink {
                out.data_mut()[i * width + j] = 1.0;
            }
        }
    }
    Ok(out)
}
