//! Planar geometry shared by the mapping, gaze and metric stages.
//!
//! Points and vectors are `nalgebra` 2-D types; polygons are plain slices of
//! vertices in either winding order unless a function says otherwise.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

pub type Point = Point2<f64>;
pub type Vector = Vector2<f64>;

/// z-component of the 3-D cross product of two planar vectors.
#[inline]
pub fn cross(a: &Vector, b: &Vector) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Axis-aligned box in image pixels, `(x1, y1)` top-left and `(x2, y2)` bottom-right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Box from center, area and aspect ratio (width / height).
    pub fn from_center_area_aspect(cx: f64, cy: f64, area: f64, aspect: f64) -> Self {
        let w = (area * aspect).max(0.0).sqrt();
        let h = if w > 0.0 { area / w } else { 0.0 };
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point {
        Point::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        if inter <= 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn translated(&self, d: &Vector) -> BBox {
        BBox::new(self.x1 + d.x, self.y1 + d.y, self.x2 + d.x, self.y2 + d.y)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x1, self.y1),
            Point::new(self.x2, self.y1),
            Point::new(self.x2, self.y2),
            Point::new(self.x1, self.y2),
        ]
    }

    /// Tight axis-aligned box around a set of points.
    pub fn enclosing(points: &[Point]) -> Option<BBox> {
        let first = points.first()?;
        let mut b = BBox::new(first.x, first.y, first.x, first.y);
        for p in &points[1..] {
            b.x1 = b.x1.min(p.x);
            b.y1 = b.y1.min(p.y);
            b.x2 = b.x2.max(p.x);
            b.y2 = b.y2.max(p.y);
        }
        Some(b)
    }
}

/// Signed shoelace area; positive for counter-clockwise winding.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

pub fn centroid(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector::zeros(), |acc, p| acc + p.coords);
    Some(Point::from(sum / points.len() as f64))
}

/// Even-odd ray casting. Points exactly on an edge may land on either side.
pub fn point_in_polygon(p: &Point, poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let ap = p - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return ap.norm();
    }
    let t = (ap.dot(&ab) / len2).clamp(0.0, 1.0);
    (ap - ab * t).norm()
}

fn orientation(a: &Point, b: &Point, c: &Point) -> f64 {
    cross(&(b - a), &(c - a))
}

fn on_segment(a: &Point, b: &Point, p: &Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: &Point, b: &Point, c: &Point, d: &Point) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Distance along `dir` (unit or not; result is in units of `dir`) from `origin`
/// to the closed segment `a`–`b`, if the ray hits it.
pub fn ray_segment_hit(origin: &Point, dir: &Vector, a: &Point, b: &Point) -> Option<f64> {
    let seg = b - a;
    let denom = cross(dir, &seg);
    if denom.abs() < 1e-15 {
        return None;
    }
    let ao = a - origin;
    let t = cross(&ao, &seg) / denom;
    let u = cross(&ao, dir) / denom;
    if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// True when no two non-adjacent edges touch and the polygon has positive area.
pub fn is_simple_polygon(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 || polygon_area(poly) <= 1e-12 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(&a, &b, &c, &d) {
                return false;
            }
        }
    }
    true
}

/// Edges of a closed polygon as segment pairs.
pub fn polygon_edges(poly: &[Point]) -> Vec<(Point, Point)> {
    (0..poly.len()).map(|i| (poly[i], poly[(i + 1) % poly.len()])).collect()
}

/// True when the two polygons share any area or boundary point.
pub fn polygons_intersect(a: &[Point], b: &[Point]) -> bool {
    if a.iter().any(|p| point_in_polygon(p, b)) || b.iter().any(|p| point_in_polygon(p, a)) {
        return true;
    }
    let ea = polygon_edges(a);
    let eb = polygon_edges(b);
    ea.iter().any(|(p, q)| eb.iter().any(|(r, s)| segments_intersect(p, q, r, s)))
}

/// Sutherland–Hodgman clipping of `subject` by the convex polygon `clip`.
///
/// `subject` may be concave; the result covers `subject ∩ clip`. Returns an
/// empty vector when the intersection has no area.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let ccw = signed_area(clip) > 0.0;
    let inside = |p: &Point, a: &Point, b: &Point| {
        let o = orientation(a, b, p);
        if ccw {
            o >= 0.0
        } else {
            o <= 0.0
        }
    };
    let mut output: Vec<Point> = subject.to_vec();
    for (a, b) in polygon_edges(clip) {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for cur in input {
            let cur_in = inside(&cur, &a, &b);
            let prev_in = inside(&prev, &a, &b);
            if cur_in {
                if !prev_in {
                    if let Some(x) = line_intersection(&prev, &cur, &a, &b) {
                        output.push(x);
                    }
                }
                output.push(cur);
            } else if prev_in {
                if let Some(x) = line_intersection(&prev, &cur, &a, &b) {
                    output.push(x);
                }
            }
            prev = cur;
        }
    }
    if polygon_area(&output) <= 1e-15 {
        Vec::new()
    } else {
        output
    }
}

fn line_intersection(p: &Point, q: &Point, a: &Point, b: &Point) -> Option<Point> {
    let r = q - p;
    let s = b - a;
    let denom = cross(&r, &s);
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = cross(&(a - p), &s) / denom;
    Some(p + r * t)
}

/// Axis-aligned bounds `(min, max)` of a point set.
pub fn bounds(points: &[Point]) -> Option<(Point, Point)> {
    let b = BBox::enclosing(points)?;
    Some((Point::new(b.x1, b.y1), Point::new(b.x2, b.y2)))
}

/// Largest pairwise vertex distance, an upper bound on any chord of the polygon.
pub fn diameter(poly: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in poly.iter().enumerate() {
        for b in &poly[i + 1..] {
            d = d.max((b - a).norm());
        }
    }
    d
}

pub fn rotate(v: &Vector, radians: f64) -> Vector {
    let (s, c) = radians.sin_cos();
    Vector::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(s: f64) -> Vec<Point> {
        vec![Point::new(0.0, 0.0), Point::new(s, 0.0), Point::new(s, s), Point::new(0.0, s)]
    }

    #[test]
    fn iou_of_identical_and_disjoint_boxes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        let half = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((a.iou(&half) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn center_area_aspect_round_trip() {
        let b = BBox::new(10.0, 20.0, 30.0, 60.0);
        let c = b.center();
        let r = BBox::from_center_area_aspect(c.x, c.y, b.area(), b.width() / b.height());
        assert!((r.x1 - b.x1).abs() < 1e-12 && (r.y2 - b.y2).abs() < 1e-12);
    }

    #[test]
    fn point_in_square() {
        let sq = square(4.0);
        assert!(point_in_polygon(&Point::new(1.0, 1.0), &sq));
        assert!(!point_in_polygon(&Point::new(5.0, 1.0), &sq));
    }

    #[test]
    fn simple_polygon_detection() {
        assert!(is_simple_polygon(&square(1.0)));
        let bowtie = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        assert!(!is_simple_polygon(&bowtie));
        assert!(!is_simple_polygon(&[Point::new(0.0, 0.0), Point::new(1.0, 0.0)]));
    }

    #[test]
    fn clipping_half_plane_overlap() {
        let a = square(2.0);
        let b: Vec<Point> = square(2.0).iter().map(|p| p + Vector::new(1.0, 0.0)).collect();
        let c = clip_polygon(&a, &b);
        assert!((polygon_area(&c) - 2.0).abs() < 1e-12);
        let far: Vec<Point> = square(1.0).iter().map(|p| p + Vector::new(5.0, 5.0)).collect();
        assert!(clip_polygon(&a, &far).is_empty());
    }

    #[test]
    fn ray_hits_segment() {
        let t = ray_segment_hit(
            &Point::new(1.0, 1.0),
            &Vector::new(1.0, 0.0),
            &Point::new(4.0, 0.0),
            &Point::new(4.0, 4.0),
        );
        assert_eq!(t, Some(3.0));
        let miss = ray_segment_hit(
            &Point::new(1.0, 1.0),
            &Vector::new(-1.0, 0.0),
            &Point::new(4.0, 0.0),
            &Point::new(4.0, 4.0),
        );
        assert_eq!(miss, None);
    }

    #[test]
    fn segment_distance_regions() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(4.0, 0.0);
        assert_eq!(point_segment_distance(&Point::new(2.0, 3.0), &a, &b), 3.0);
        assert_eq!(point_segment_distance(&Point::new(-3.0, 4.0), &a, &b), 5.0);
    }
}
