//! One trial end to end: track, map, gaze, metrics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gaze::{build_gaze_records, GazeError, GazeRecord};
use crate::ingest::{Detection, FrameSequence, RoomConfig};
use crate::mapping::{
    build_trajectories, calibrate, classify_roles, AgentRole, CalibrationReport, HomographyError, Trajectory,
};
use crate::metrics::{compute_metrics, MetricContext, MetricInput, MetricResult};
use crate::tracking::{run_tracker, Track};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("calibration failed: {0}")]
    Calibration(#[from] HomographyError),
    #[error("gaze construction failed: {0}")]
    Gaze(#[from] GazeError),
}

/// Everything produced for one trial.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub calibration: CalibrationReport,
    pub tracks: Vec<Track>,
    pub input: MetricInput,
    pub metrics: Vec<MetricResult>,
}

impl Analysis {
    pub fn trajectories(&self) -> &[Trajectory] {
        &self.input.trajectories
    }

    pub fn roles(&self) -> &[AgentRole] {
        &self.input.roles
    }

    pub fn gaze(&self) -> &[GazeRecord] {
        &self.input.gaze
    }
}

/// Detections of every track keyed by frame.
pub fn track_detections(tracks: &[Track]) -> BTreeMap<u64, BTreeMap<u64, Detection>> {
    tracks.iter().map(|t| (t.id, t.observations.iter().map(|(f, o)| (*f, o.detection.clone())).collect())).collect()
}

/// Run the full pipeline on one detection stream. Calibration beyond the
/// configured tolerance is an error.
pub fn analyze(frames: &FrameSequence, config: &RoomConfig) -> Result<Analysis, PipelineError> {
    let calibration = calibrate(&config.calibration.pairs, config.calibration.tolerance_m)?;
    let h = &calibration.homography;
    let tracks = run_tracker(frames, &config.tracker);
    let trajectories = build_trajectories(&tracks, h, config, frames.fps);
    let roles = classify_roles(&trajectories, config, frames.fps);
    let detections = track_detections(&tracks);
    let gaze = build_gaze_records(&detections, h, config)?;
    let input = MetricInput { fps: frames.fps, trajectories, roles, detections, gaze };
    let metrics = compute_metrics(&MetricContext::new(&input, config));
    Ok(Analysis { calibration, tracks, input, metrics })
}
