//! Sample plumbing: annotated images, synthetic rendering, augmentation,
//! and the comma-separated ground-truth format.

pub mod augment;
pub mod glyphs;
pub mod icdar;
pub mod pnm;
pub mod render;

pub use augment::{augment, AugmentConfig};
pub use glyphs::{glyph_bitmap, glyph_width, GLYPH_SYMBOLS};
pub use icdar::{
    load_gt_file, load_icdar, load_pred_file, pad_to_multiple_of_4, parse_gt_text, parse_manifest,
    parse_pred_text, prediction_line, write_gt, write_predictions,
};
pub use pnm::{read_pnm, write_pnm};
pub use render::{render_synthetic, RenderConfig, RenderStats};

use crate::geometry::{polygon_area, Quad};
use crate::tensor::Tensor;

/// Transcription marker for annotated-but-unreadable regions.
pub const DO_NOT_CARE: &str = "###";

/// One annotated text region in input-image pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TextProposal {
    pub quad: Quad,
    pub theta: f64,
    pub transcription: String,
    pub score: Option<f64>,
}

impl TextProposal {
    /// Orientation is derived from the quad's top edge.
    pub fn new(quad: Quad, transcription: String) -> Self {
        let theta = quad_theta(&quad);
        TextProposal {
            quad,
            theta,
            transcription,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn is_dont_care(&self) -> bool {
        self.transcription == DO_NOT_CARE
    }
}

/// Angle of the p0 -> p1 edge, wrapped into (-pi/2, pi/2].
pub fn quad_theta(quad: &Quad) -> f64 {
    let dx = quad.pts[1][0] - quad.pts[0][0];
    let dy = quad.pts[1][1] - quad.pts[0][1];
    let mut theta = dy.atan2(dx);
    if theta > std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
    } else if theta <= -std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
    }
    theta
}

/// Reorder vertices so the shoelace area is positive (y-down clockwise on
/// screen), preserving the starting vertex.
pub fn orient_quad(mut quad: Quad) -> Quad {
    if polygon_area(&quad.pts) < 0.0 {
        quad.pts.swap(1, 3);
    }
    quad
}

/// One training/inference item: image in [0,1], annotations, and the seed
/// that produced it (0 for loaded data).
#[derive(Clone, Debug)]
pub struct Sample {
    /// [C, H, W], C = 1 (grayscale) or 3.
    pub image: Tensor<f32>,
    pub proposals: Vec<TextProposal>,
    pub seed: u64,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dont_care_marker() {
        let q = Quad::from_rect(0.0, 0.0, 10.0, 5.0);
        assert!(TextProposal::new(q.clone(), DO_NOT_CARE.into()).is_dont_care());
        assert!(!TextProposal::new(q, "abc".into()).is_dont_care());
    }

    #[test]
    fn theta_from_top_edge() {
        let q = Quad::from_rect(0.0, 0.0, 10.0, 5.0);
        assert_eq!(TextProposal::new(q, "x".into()).theta, 0.0);
        let rot = crate::geometry::rbox_to_quad(
            [10.0, 10.0],
            &crate::geometry::RBoxGeo::new(2.0, 2.0, 5.0, 5.0, 0.4),
        )
        .unwrap();
        assert!((quad_theta(&rot) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn orient_fixes_reversed_order() {
        let ccw = Quad {
            pts: [[0.0, 0.0], [0.0, 5.0], [10.0, 5.0], [10.0, 0.0]],
        };
        assert!(polygon_area(&ccw.pts) < 0.0);
        let fixed = orient_quad(ccw);
        assert!(polygon_area(&fixed.pts) > 0.0);
        assert_eq!(fixed.pts[0], [0.0, 0.0]);
    }
}
