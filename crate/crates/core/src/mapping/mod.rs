//! Image detections to smoothed floor-map trajectories, plus role classification.

pub mod foot;
pub mod homography;
pub mod roles;
pub mod smoothing;
pub mod trajectory;

use serde::{Deserialize, Serialize};

pub use foot::{fallback_velocity, foot_position, predict_missing_position, reference_point, MappingError};
pub use homography::{
    calibrate, calibration_report, estimate_homography, CalibrationReport, Homography, HomographyError,
};
pub use roles::{classify_roles, AgentRole, Role};
pub use smoothing::{alpha_map, smooth_map_position, smooth_pixel_track, PixelObservation, PixelSample};
pub use trajectory::{
    build_trajectories, trajectories_from_dump, trajectory_dump, write_trajectory_dump, SampleSource, Trajectory,
    TrajectoryDumpRecord, TrajectorySample,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingParams {
    /// Pixel estimator process noise, px²/frame².
    pub process_noise: f64,
    /// Pixel estimator measurement noise, px².
    pub measurement_noise: f64,
    /// Map displacement at which smoothing reaches full trust, meters.
    pub alpha_d_ref: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Frames of history used by the velocity fallback.
    pub fallback_lag: u64,
    /// Upper bound on agent speed, m/s; caps every smoothed map step.
    pub v_max: f64,
    /// Seconds a track must stay in the interior for an entry to count.
    pub entry_hysteresis: f64,
}

impl Default for MappingParams {
    fn default() -> Self {
        Self {
            process_noise: 1.0,
            measurement_noise: 4.0,
            alpha_d_ref: 0.15,
            alpha_min: 0.2,
            alpha_max: 0.9,
            fallback_lag: 3,
            v_max: 6.0,
            entry_hysteresis: 0.25,
        }
    }
}

impl MappingParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("mapping.process_noise", self.process_noise),
            ("mapping.measurement_noise", self.measurement_noise),
            ("mapping.alpha_d_ref", self.alpha_d_ref),
            ("mapping.v_max", self.v_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(0.0 <= self.alpha_min && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return Err("mapping.alpha_min/alpha_max must satisfy 0 <= min <= max <= 1".into());
        }
        if self.fallback_lag == 0 {
            return Err("mapping.fallback_lag must be >= 1".into());
        }
        if !(self.entry_hysteresis >= 0.0 && self.entry_hysteresis.is_finite()) {
            return Err("mapping.entry_hysteresis must be >= 0".into());
        }
        Ok(())
    }
}
