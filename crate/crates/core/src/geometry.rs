//! Rotated-rectangle and convex-quad arithmetic in f64.
//!
//! Coordinates are image-style: x right, y down. A positive angle rotates
//! +x toward +y (the mathematically positive direction of this frame), with
//! range (-pi/2, pi/2]. Quad vertices run top-left, top-right, bottom-right,
//! bottom-left of the un-rotated box; under the y-down frame that order has
//! positive shoelace area.

use crate::error::{FotsError, Result};

/// Polygons with area below this (px^2) are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-6;

/// Distances from an anchor point to the four sides of a rotated box, plus
/// its orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RBoxGeo {
    pub t: f64,
    pub b: f64,
    pub l: f64,
    pub r: f64,
    pub theta: f64,
}

impl RBoxGeo {
    pub fn new(t: f64, b: f64, l: f64, r: f64, theta: f64) -> Self {
        RBoxGeo { t, b, l, r, theta }
    }

    pub fn height(&self) -> f64 {
        self.t + self.b
    }

    pub fn width(&self) -> f64 {
        self.l + self.r
    }
}

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quad {
    pub pts: [Point; 4],
}

impl Quad {
    pub fn new(pts: [Point; 4]) -> Self {
        Quad { pts }
    }

    pub fn from_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Quad {
            pts: [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.pts)
    }

    pub fn centroid(&self) -> Point {
        let mut c = [0.0, 0.0];
        for p in &self.pts {
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / 4.0, c[1] / 4.0]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Quad {
        let mut q = *self;
        for p in &mut q.pts {
            p[0] += dx;
            p[1] += dy;
        }
        q
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() < DEGENERATE_AREA
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBox {
    pub quad: Quad,
    pub theta: f64,
    pub score: f64,
}

/// Shoelace area; positive for our vertex orientation.
pub fn polygon_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        acc += pts[i][0] * pts[j][1] - pts[j][0] * pts[i][1];
    }
    acc * 0.5
}

#[inline]
pub fn rot(theta: f64, p: Point) -> Point {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Corner positions of the box described by `geo` around `anchor`. Rotating
/// the result by -theta about the anchor gives the axis-aligned rectangle
/// [x-l, x+r] x [y-t, y+b].
pub fn rbox_to_quad(anchor: Point, geo: &RBoxGeo) -> Result<Quad> {
    if geo.height() <= 0.0 || geo.width() <= 0.0 {
        return Err(FotsError::Invalid(format!(
            "degenerate box: height {} width {}",
            geo.height(),
            geo.width()
        )));
    }
    let offsets = [
        [-geo.l, -geo.t],
        [geo.r, -geo.t],
        [geo.r, geo.b],
        [-geo.l, geo.b],
    ];
    let mut pts = [[0.0; 2]; 4];
    for (dst, off) in pts.iter_mut().zip(offsets) {
        let r = rot(geo.theta, off);
        *dst = [anchor[0] + r[0], anchor[1] + r[1]];
    }
    Ok(Quad { pts })
}

/// Inverse of `rbox_to_quad` for any anchor strictly inside the box:
/// orientation from the top edge, side distances as perpendicular distances
/// from the anchor to the four side lines.
pub fn quad_to_rbox(anchor: Point, quad: &Quad) -> RBoxGeo {
    let p = &quad.pts;
    let mut theta = (p[1][1] - p[0][1]).atan2(p[1][0] - p[0][0]);
    // normalize into (-pi/2, pi/2]; a flip by pi swaps side roles
    let mut flipped = false;
    if theta > std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
        flipped = true;
    } else if theta <= -std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
        flipped = true;
    }
    // distance from anchor to the line through a->b (positive on the
    // interior side for our orientation)
    let side = |a: Point, b: Point| -> f64 {
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let len = (ex * ex + ey * ey).sqrt().max(1e-12);
        ((anchor[0] - a[0]) * ey - (anchor[1] - a[1]) * ex).abs() / len
    };
    let dt = side(p[0], p[1]);
    let dr = side(p[1], p[2]);
    let db = side(p[2], p[3]);
    let dl = side(p[3], p[0]);
    if flipped {
        RBoxGeo::new(db, dt, dr, dl, theta)
    } else {
        RBoxGeo::new(dt, db, dl, dr, theta)
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Point-in-convex-polygon for our (positive shoelace) orientation; boundary
/// counts as inside.
pub fn point_in_convex(pts: &[Point], p: Point) -> bool {
    let n = pts.len();
    for i in 0..n {
        if cross(pts[i], pts[(i + 1) % n], p) < 0.0 {
            return false;
        }
    }
    true
}

/// Sutherland-Hodgman clip of a convex subject polygon by a convex clip quad.
pub fn clip_convex(subject: &[Point], clip: &Quad) -> Vec<Point> {
    let mut poly: Vec<Point> = subject.to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        let a = clip.pts[i];
        let b = clip.pts[(i + 1) % 4];
        let mut next = Vec::with_capacity(poly.len() + 2);
        for j in 0..poly.len() {
            let p = poly[j];
            let q = poly[(j + 1) % poly.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            if dp >= 0.0 {
                next.push(p);
            }
            if (dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0) {
                let t = dp / (dp - dq);
                next.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        poly = next;
    }
    poly
}

/// Intersection-over-union of two convex quads via exact polygon clipping.
/// Degenerate inputs yield (0, true).
pub fn polygon_iou_checked(a: &Quad, b: &Quad) -> (f64, bool) {
    let area_a = a.area();
    let area_b = b.area();
    if area_a < DEGENERATE_AREA || area_b < DEGENERATE_AREA {
        return (0.0, true);
    }
    let inter = polygon_area(&clip_convex(&a.pts, b)).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return (0.0, true);
    }
    ((inter / union).clamp(0.0, 1.0), false)
}

pub fn polygon_iou(a: &Quad, b: &Quad) -> f64 {
    polygon_iou_checked(a, b).0
}

/// Move each vertex inward along its two adjacent edges by
/// ratio x (shorter adjacent edge length).
pub fn shrink_quad(q: &Quad, ratio: f64) -> Result<Quad> {
    assert!((0.0..0.5).contains(&ratio), "shrink ratio must be in [0, 0.5)");
    if ratio == 0.0 {
        return Ok(*q);
    }
    let p = &q.pts;
    let mut out = [[0.0; 2]; 4];
    for i in 0..4 {
        let prev = p[(i + 3) % 4];
        let next = p[(i + 1) % 4];
        let en = [next[0] - p[i][0], next[1] - p[i][1]];
        let ep = [prev[0] - p[i][0], prev[1] - p[i][1]];
        let ln = (en[0] * en[0] + en[1] * en[1]).sqrt();
        let lp = (ep[0] * ep[0] + ep[1] * ep[1]).sqrt();
        if ln <= 0.0 || lp <= 0.0 {
            return Err(FotsError::Invalid("degenerate box: zero-length edge".into()));
        }
        let d = ratio * ln.min(lp);
        out[i] = [
            p[i][0] + d * (en[0] / ln + ep[0] / lp),
            p[i][1] + d * (en[1] / ln + ep[1] / lp),
        ];
    }
    let shrunk = Quad { pts: out };
    if shrunk.area() < DEGENERATE_AREA {
        return Err(FotsError::Invalid("degenerate box: shrink collapsed quad".into()));
    }
    Ok(shrunk)
}

/// Greedy score-descending suppression. Returns surviving boxes and the
/// number of degenerate inputs dropped beforehand.
pub fn rotated_nms(boxes: &[ScoredBox], iou_thresh: f64) -> (Vec<ScoredBox>, usize) {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| !boxes[i].quad.is_degenerate())
        .collect();
    let dropped = boxes.len() - order.len();
    // stable: equal scores keep input order
    order.sort_by(|&i, &j| boxes[j].score.partial_cmp(&boxes[i].score).unwrap());
    let mut kept: Vec<ScoredBox> = Vec::new();
    'cand: for &i in &order {
        for k in &kept {
            if polygon_iou(&boxes[i].quad, &k.quad) > iou_thresh {
                continue 'cand;
            }
        }
        kept.push(boxes[i].clone());
    }
    (kept, dropped)
}

/// Tight axis-aligned bounds of the four vertices: (x_min, y_min, x_max, y_max).
pub fn min_horizontal_rect(q: &Quad) -> [f64; 4] {
    let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in &q.pts {
        r[0] = r[0].min(p[0]);
        r[1] = r[1].min(p[1]);
        r[2] = r[2].max(p[0]);
        r[3] = r[3].max(p[1]);
    }
    r
}
