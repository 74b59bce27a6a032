//! Foot-point estimation and the velocity fallback used when feet are not visible.

use thiserror::Error;

use crate::geometry::{Point, Vector};
use crate::ingest::{halpe, validate_keypoint, Detection, Keypoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("no reference positions available for velocity fallback")]
    NoHistory,
}

fn mean(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    Some(Point::new(sx / n, sy / n))
}

/// Mean of the valid ankle, heel and toe keypoints.
pub fn foot_position(keypoints: &[Keypoint], conf_threshold: f64) -> Option<Point> {
    let valid: Vec<Point> = halpe::FOOT
        .iter()
        .filter_map(|&i| keypoints.get(i))
        .filter(|k| validate_keypoint(k, conf_threshold))
        .map(Keypoint::point)
        .collect();
    mean(&valid)
}

/// `v = (s_t − s_{t−k}) / k`.
pub fn fallback_velocity(current: Option<Point>, reference: Option<Point>, k: u64) -> Result<Vector, MappingError> {
    match (current, reference) {
        (Some(s_t), Some(s_tk)) if k >= 1 => Ok((s_t - s_tk) / k as f64),
        _ => Err(MappingError::NoHistory),
    }
}

pub fn predict_missing_position(p: &Point, v: &Vector) -> Point {
    p + v
}

/// Matching reference points for two detections of the same person: the
/// centroid of non-foot keypoints valid in both, else the two bbox centers.
pub fn reference_point(now: &Detection, before: &Detection, conf_threshold: f64) -> (Point, Point) {
    let shared: Vec<usize> = (0..now.keypoints.len().min(before.keypoints.len()))
        .filter(|&i| !halpe::is_foot(i))
        .filter(|&i| {
            validate_keypoint(&now.keypoints[i], conf_threshold)
                && validate_keypoint(&before.keypoints[i], conf_threshold)
        })
        .collect();
    let a: Vec<Point> = shared.iter().map(|&i| now.keypoints[i].point()).collect();
    let b: Vec<Point> = shared.iter().map(|&i| before.keypoints[i].point()).collect();
    match (mean(&a), mean(&b)) {
        (Some(a), Some(b)) => (a, b),
        _ => (now.bbox.center(), before.bbox.center()),
    }
}
