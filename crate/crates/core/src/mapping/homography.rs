//! Planar homography from image pixels to floor-map meters.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cross, Point};
use crate::ingest::CalibrationPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomographyError {
    #[error("degenerate calibration: {0}")]
    DegenerateConfiguration(String),
    #[error("calibration system is rank deficient")]
    RankDeficient,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("calibration tolerance exceeded: max reprojection error {max_error:.4} m > {tolerance} m")]
    ToleranceExceeded { max_error: f64, tolerance: f64 },
}

/// 3×3 projective map normalized so that `h33 = 1`. Serialized as row arrays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography {
    pub matrix: Matrix3<f64>,
}

impl From<[[f64; 3]; 3]> for Homography {
    fn from(r: [[f64; 3]; 3]) -> Self {
        Homography {
            matrix: Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
        }
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        let m = h.matrix;
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
    }
}

const AT_INFINITY: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    /// Wrap a raw matrix, rescaling so `h33 = 1` and checking invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        let s = m[(2, 2)];
        if s.abs() < 1e-300 || !m.iter().all(|v| v.is_finite()) {
            return Err(HomographyError::RankDeficient);
        }
        let matrix = m / s;
        if matrix.determinant().abs() <= 1e-12 {
            return Err(HomographyError::RankDeficient);
        }
        Ok(Self { matrix })
    }

    pub fn project(&self, p: &Point) -> Result<Point, HomographyError> {
        let v = self.matrix * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < AT_INFINITY {
            return Err(HomographyError::PointAtInfinity);
        }
        Ok(Point::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Result<Homography, HomographyError> {
        let inv = self.matrix.try_inverse().ok_or(HomographyError::RankDeficient)?;
        Homography::from_matrix(inv)
    }

    /// Euclidean error of `project(pixel)` against `map` for each pair.
    pub fn reprojection_errors(&self, pairs: &[CalibrationPair]) -> Vec<f64> {
        pairs
            .iter()
            .map(|pair| match self.project(&pair.pixel) {
                Ok(m) => (m - pair.map).norm(),
                Err(_) => f64::INFINITY,
            })
            .collect()
    }
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: &[Point]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points.iter().map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: &Point) -> Point {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point::new(v.x / v.z, v.y / v.z)
}

fn check_point_set(points: &[Point], label: &str) -> Result<(), HomographyError> {
    let t = normalizing_transform(points);
    let norm: Vec<Point> = points.iter().map(|p| apply(&t, p)).collect();
    const EPS: f64 = 1e-9;
    for i in 0..norm.len() {
        for j in (i + 1)..norm.len() {
            if (norm[i] - norm[j]).norm() < EPS {
                return Err(HomographyError::DegenerateConfiguration(format!("duplicate {label} points {i} and {j}")));
            }
        }
    }
    let collinear = |a: usize, b: usize, c: usize| cross(&(norm[b] - norm[a]), &(norm[c] - norm[a])).abs() < EPS;
    // With exactly four pairs any collinear triple leaves the map underdetermined.
    if norm.len() == 4 {
        for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(a, b, c) {
                return Err(HomographyError::DegenerateConfiguration(format!(
                    "{label} points {a}, {b}, {c} are collinear"
                )));
            }
        }
    }
    let all_collinear = (2..norm.len()).all(|c| collinear(0, 1, c));
    if all_collinear {
        return Err(HomographyError::DegenerateConfiguration(format!("all {label} points are collinear")));
    }
    Ok(())
}

/// Least-squares DLT estimate with Hartley normalization of both point sets.
pub fn estimate_homography(pairs: &[CalibrationPair]) -> Result<Homography, HomographyError> {
    if pairs.len() < 4 {
        return Err(HomographyError::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    let src: Vec<Point> = pairs.iter().map(|p| p.pixel).collect();
    let dst: Vec<Point> = pairs.iter().map(|p| p.map).collect();
    if src.iter().chain(&dst).any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(HomographyError::DegenerateConfiguration("non-finite coordinate".into()));
    }
    check_point_set(&src, "pixel")?;
    check_point_set(&dst, "map")?;

    let t_src = normalizing_transform(&src);
    let t_dst = normalizing_transform(&dst);
    // Pad to at least 9 rows so the SVD exposes the full right singular basis.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = apply(&t_src, s);
        let d = apply(&t_dst, d);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(HomographyError::RankDeficient)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if largest <= 0.0 || second_smallest / largest < 1e-10 {
        return Err(HomographyError::RankDeficient);
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(HomographyError::RankDeficient)?;
    Homography::from_matrix(t_dst_inv * h_norm * t_src)
}

/// Estimated homography together with its per-pair reprojection errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub homography: Homography,
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub tolerance: f64,
}

/// Estimate and check reprojection error against `tolerance` (meters).
pub fn calibrate(pairs: &[CalibrationPair], tolerance: f64) -> Result<CalibrationReport, HomographyError> {
    let report = calibration_report(pairs, tolerance)?;
    if report.max_error > tolerance {
        return Err(HomographyError::ToleranceExceeded { max_error: report.max_error, tolerance });
    }
    Ok(report)
}

/// Like [`calibrate`] but never fails on tolerance; callers inspect `max_error`.
pub fn calibration_report(pairs: &[CalibrationPair], tolerance: f64) -> Result<CalibrationReport, HomographyError> {
    let homography = estimate_homography(pairs)?;
    let errors = homography.reprojection_errors(pairs);
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(CalibrationReport { homography, errors, max_error, tolerance })
}
