//! Gaze focus triangles from head keypoints, in image and map space.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BBox, Point, Vector};
use crate::ingest::{halpe, validate_keypoint, Detection, Keypoint, RoomConfig};
use crate::mapping::{Homography, HomographyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GazeError {
    #[error("gaze origin and ear midpoint coincide")]
    CoincidentPoints,
    #[error("no valid ear keypoint")]
    NoEars,
    #[error("gaze origin lies outside the room")]
    OriginOutsideRoom,
    #[error(transparent)]
    Homography(#[from] HomographyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeParams {
    /// Half of the visual angle spanned by the triangle, degrees.
    pub half_angle_deg: f64,
}

impl Default for GazeParams {
    fn default() -> Self {
        Self { half_angle_deg: 10.0 }
    }
}

impl GazeParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.half_angle_deg > 0.0 && self.half_angle_deg < 90.0) {
            return Err("gaze.half_angle_deg must be in (0, 90)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GazeSource {
    EyesMidpoint,
    SingleEye,
    NoseFallback,
}

fn valid_points(keypoints: &[Keypoint], indices: &[usize], conf: f64) -> Vec<Point> {
    indices
        .iter()
        .filter_map(|&i| keypoints.get(i))
        .filter(|k| validate_keypoint(k, conf))
        .map(Keypoint::point)
        .collect()
}

fn midpoint_or_single(points: &[Point]) -> Option<Point> {
    match points {
        [a, b] => Some(Point::from((a.coords + b.coords) / 2.0)),
        [a] => Some(*a),
        _ => None,
    }
}

/// Eye midpoint, else the single valid eye, else the nose.
pub fn gaze_origin(keypoints: &[Keypoint], conf_threshold: f64) -> Option<(Point, GazeSource)> {
    let eyes = valid_points(keypoints, &halpe::EYES, conf_threshold);
    match eyes.len() {
        2 => midpoint_or_single(&eyes).map(|p| (p, GazeSource::EyesMidpoint)),
        1 => Some((eyes[0], GazeSource::SingleEye)),
        _ => keypoints
            .get(halpe::NOSE)
            .filter(|k| validate_keypoint(k, conf_threshold))
            .map(|k| (k.point(), GazeSource::NoseFallback)),
    }
}

/// Ear midpoint, or the single valid ear.
pub fn ear_midpoint(keypoints: &[Keypoint], conf_threshold: f64) -> Option<Point> {
    midpoint_or_single(&valid_points(keypoints, &halpe::EARS, conf_threshold))
}

/// `g = (o − e) / ‖o − e‖`.
pub fn gaze_direction(origin: &Point, ear_midpoint: Option<&Point>) -> Result<Vector, GazeError> {
    let e = ear_midpoint.ok_or(GazeError::NoEars)?;
    let d = origin - e;
    let n = d.norm();
    if n < 1e-6 {
        return Err(GazeError::CoincidentPoints);
    }
    Ok(d / n)
}

/// Isosceles triangle with apex `origin`, legs of length `length` at ±`half_angle_deg`.
pub fn gaze_triangle(origin: &Point, g: &Vector, half_angle_deg: f64, length: f64) -> [Point; 3] {
    let theta = half_angle_deg.to_radians();
    [*origin, origin + geometry::rotate(g, theta) * length, origin + geometry::rotate(g, -theta) * length]
}

/// Distance from `origin` along `g` to the nearest wall or room edge.
pub fn clip_length_to_walls(origin: &Point, g: &Vector, config: &RoomConfig) -> Result<f64, GazeError> {
    if !config.in_room(origin) {
        return Err(GazeError::OriginOutsideRoom);
    }
    let edges = geometry::polygon_edges(&config.room);
    let hit = config
        .wall_segments()
        .chain(edges)
        .filter_map(|(a, b)| geometry::ray_segment_hit(origin, g, &a, &b))
        .filter(|t| *t > 1e-12)
        .fold(f64::INFINITY, f64::min);
    let diameter = geometry::diameter(&config.room);
    Ok(if hit.is_finite() { hit.min(diameter) } else { diameter })
}

fn project_onto(axis: &Vector, points: &[Point]) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = axis.dot(&p.coords);
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis overlap test; touching boundaries count as overlap.
pub fn triangle_intersects_box(tri: &[Point; 3], bbox: &BBox) -> bool {
    let corners = bbox.corners();
    let mut axes = vec![Vector::new(1.0, 0.0), Vector::new(0.0, 1.0)];
    for i in 0..3 {
        let e = tri[(i + 1) % 3] - tri[i];
        if e.norm() > 0.0 {
            axes.push(Vector::new(-e.y, e.x));
        }
    }
    axes.iter().all(|axis| {
        let (a_lo, a_hi) = project_onto(axis, tri);
        let (b_lo, b_hi) = project_onto(axis, &corners);
        a_hi >= b_lo && b_hi >= a_lo
    })
}

/// Project the image triangle to the floor and clip it to the room.
pub fn project_triangle_to_floor(h: &Homography, tri: &[Point; 3], room: &[Point]) -> Result<Vec<Point>, GazeError> {
    let projected = tri.iter().map(|p| h.project(p)).collect::<Result<Vec<_>, _>>()?;
    if geometry::signed_area(&projected).abs() < 1e-15 {
        return Ok(Vec::new());
    }
    Ok(geometry::clip_polygon(room, &projected))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub track: u64,
    pub frame: u64,
    /// Image-space origin `o`, pixels.
    pub origin: Point,
    /// Image-space unit direction `g`.
    pub direction: Vector,
    pub source: GazeSource,
    pub image_triangle: [Point; 3],
    /// Wall-clipped floor polygon, meters; absent when the origin is outside the room.
    pub map_triangle: Option<Vec<Point>>,
}

/// Gaze record from an image origin and direction. The triangle length is the
/// wall-clipped map distance carried back into the image.
#[allow(clippy::too_many_arguments)]
pub fn build_gaze_record(
    track: u64,
    frame: u64,
    origin: Point,
    direction: Vector,
    source: GazeSource,
    h: &Homography,
    h_inv: &Homography,
    config: &RoomConfig,
) -> Result<GazeRecord, GazeError> {
    let half = config.gaze.half_angle_deg;
    let origin_map = h.project(&origin)?;
    let ahead = h.project(&(origin + direction))?;
    let d = ahead - origin_map;
    if d.norm() < 1e-15 {
        return Err(GazeError::CoincidentPoints);
    }
    let g_map = d / d.norm();
    let (length_map, inside) = match clip_length_to_walls(&origin_map, &g_map, config) {
        Ok(l) => (l, true),
        Err(GazeError::OriginOutsideRoom) => (geometry::diameter(&config.room), false),
        Err(e) => return Err(e),
    };
    let end_img = h_inv.project(&(origin_map + g_map * length_map))?;
    let length_img = (end_img - origin).norm().max(1e-9);
    let image_triangle = gaze_triangle(&origin, &direction, half, length_img);
    let map_triangle = if inside { Some(project_triangle_to_floor(h, &image_triangle, &config.room)?) } else { None };
    Ok(GazeRecord { track, frame, origin, direction, source, image_triangle, map_triangle })
}

/// Gaze record for one detection, or `None` when head keypoints do not support one.
pub fn gaze_for_detection(
    track: u64,
    frame: u64,
    detection: &Detection,
    h: &Homography,
    h_inv: &Homography,
    config: &RoomConfig,
) -> Option<GazeRecord> {
    let conf = config.metric_params.keypoint_conf;
    let (origin, source) = gaze_origin(&detection.keypoints, conf)?;
    let ear = ear_midpoint(&detection.keypoints, conf);
    let direction = gaze_direction(&origin, ear.as_ref()).ok()?;
    build_gaze_record(track, frame, origin, direction, source, h, h_inv, config).ok()
}

/// Gaze records for every observation of every track, ordered by frame then track.
pub fn build_gaze_records(
    observations: &BTreeMap<u64, BTreeMap<u64, Detection>>,
    h: &Homography,
    config: &RoomConfig,
) -> Result<Vec<GazeRecord>, GazeError> {
    let h_inv = h.inverse()?;
    let mut out: Vec<GazeRecord> = observations
        .iter()
        .flat_map(|(track, frames)| {
            let h_inv = &h_inv;
            frames.iter().filter_map(move |(frame, det)| gaze_for_detection(*track, *frame, det, h, h_inv, config))
        })
        .collect();
    out.sort_by_key(|g| (g.frame, g.track));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeDumpRecord {
    pub frame: u64,
    pub track: u64,
    pub origin: Point,
    pub direction: Vector,
    pub triangle: [Point; 3],
    pub map_triangle: Option<Vec<Point>>,
    pub source: GazeSource,
}

impl From<GazeDumpRecord> for GazeRecord {
    fn from(r: GazeDumpRecord) -> Self {
        GazeRecord {
            track: r.track,
            frame: r.frame,
            origin: r.origin,
            direction: r.direction,
            source: r.source,
            image_triangle: r.triangle,
            map_triangle: r.map_triangle,
        }
    }
}

pub fn write_gaze_dump<W: Write>(records: &[GazeRecord], mut out: W) -> std::io::Result<()> {
    for g in records {
        let row = GazeDumpRecord {
            frame: g.frame,
            track: g.track,
            origin: g.origin,
            direction: g.direction,
            triangle: g.image_triangle,
            map_triangle: g.map_triangle.clone(),
            source: g.source,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
