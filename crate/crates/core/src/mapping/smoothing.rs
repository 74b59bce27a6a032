//! Pixel-space foot smoothing and map-space dynamic blending.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::MappingParams;
use crate::geometry::{Point, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    Measured,
    VelocityFallback,
    EstimatorOnly,
}

/// Per-frame input to [`smooth_pixel_track`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PixelObservation {
    /// A valid foot position.
    Measured(Point),
    /// Feet missing; velocity from other keypoints or the bbox.
    Fallback(Vector),
    /// Nothing usable this frame.
    Missing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelSample {
    pub frame: u64,
    pub position: Point,
    pub source: SampleSource,
}

/// One axis of a constant-velocity filter: state `(p, v)`.
#[derive(Clone, Copy, Debug)]
struct Axis {
    x: Vector2<f64>,
    p: Matrix2<f64>,
}

impl Axis {
    fn predict(&mut self, q: f64) {
        let f = Matrix2::new(1.0, 1.0, 0.0, 1.0);
        // Discrete white-noise acceleration.
        let g = Vector2::new(0.5, 1.0);
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + g * g.transpose() * q;
    }

    fn update(&mut self, z: f64, r: f64) {
        let s = self.p[(0, 0)] + r;
        let k = Vector2::new(self.p[(0, 0)], self.p[(1, 0)]) / s;
        let innovation = z - self.x[0];
        self.x += k * innovation;
        let i_kh = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
        self.p = i_kh * self.p * i_kh.transpose() + k * k.transpose() * r;
    }
}

struct PixelFilter {
    axes: [Axis; 2],
    velocity_known: bool,
    anchor: (u64, Point),
}

impl PixelFilter {
    fn new(frame: u64, p: Point, r: f64) -> Self {
        let axis = |v: f64| Axis { x: Vector2::new(v, 0.0), p: Matrix2::new(r, 0.0, 0.0, 1e4) };
        Self { axes: [axis(p.x), axis(p.y)], velocity_known: false, anchor: (frame, p) }
    }

    fn position(&self) -> Point {
        Point::new(self.axes[0].x[0], self.axes[1].x[0])
    }

    fn predict(&mut self, q: f64) {
        for a in &mut self.axes {
            a.predict(q);
        }
    }

    fn measure(&mut self, frame: u64, z: Point, r: f64) {
        if self.velocity_known {
            self.axes[0].update(z.x, r);
            self.axes[1].update(z.y, r);
            return;
        }
        // Two-point initialization from the first measurement.
        let dt = (frame - self.anchor.0).max(1) as f64;
        for (axis, (now, then)) in self.axes.iter_mut().zip([(z.x, self.anchor.1.x), (z.y, self.anchor.1.y)]) {
            axis.x = Vector2::new(now, (now - then) / dt);
            axis.p = Matrix2::new(r, r / dt, r / dt, 2.0 * r / (dt * dt));
        }
        self.velocity_known = true;
    }

    fn set_prior(&mut self, p: Point, v: Vector) {
        self.axes[0].x = Vector2::new(p.x, v.x);
        self.axes[1].x = Vector2::new(p.y, v.y);
        self.velocity_known = true;
    }
}

/// Smooth one track's foot positions with a 2-D constant-velocity filter.
///
/// Frames before the first measurement are dropped. Fallback frames advance
/// the previous output by the supplied velocity and feed that point back as
/// the filter prior; missing frames output the filter prediction.
pub fn smooth_pixel_track(observations: &[(u64, PixelObservation)], params: &MappingParams) -> Vec<PixelSample> {
    let (q, r) = (params.process_noise, params.measurement_noise);
    let mut out: Vec<PixelSample> = Vec::with_capacity(observations.len());
    let mut filter: Option<PixelFilter> = None;
    let mut last_frame = 0u64;
    for &(frame, obs) in observations {
        let Some(f) = filter.as_mut() else {
            if let PixelObservation::Measured(p) = obs {
                filter = Some(PixelFilter::new(frame, p, r));
                out.push(PixelSample { frame, position: p, source: SampleSource::Measured });
                last_frame = frame;
            }
            continue;
        };
        let steps = frame.saturating_sub(last_frame).max(1);
        for _ in 0..steps {
            f.predict(q);
        }
        let sample = match obs {
            PixelObservation::Measured(z) => {
                f.measure(frame, z, r);
                PixelSample { frame, position: f.position(), source: SampleSource::Measured }
            }
            PixelObservation::Fallback(v) => {
                let prev = out.last().expect("filter exists only after a sample").position;
                let p = prev + v * steps as f64;
                f.set_prior(p, v);
                PixelSample { frame, position: p, source: SampleSource::VelocityFallback }
            }
            PixelObservation::Missing => {
                PixelSample { frame, position: f.position(), source: SampleSource::EstimatorOnly }
            }
        };
        out.push(sample);
        last_frame = frame;
    }
    out
}

/// Blend weight for a map-space step of length `displacement` meters.
pub fn alpha_map(displacement: f64, params: &MappingParams) -> f64 {
    (displacement / params.alpha_d_ref).clamp(params.alpha_min, params.alpha_max)
}

/// `α·M_t + (1 − α)·M_prev`.
pub fn smooth_map_position(m_t: &Point, m_prev: &Point, alpha: f64) -> Point {
    Point::from(m_t.coords * alpha + m_prev.coords * (1.0 - alpha))
}
