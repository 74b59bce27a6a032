//! Ground truth of a rendered scenario and its direct metric input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::render::skeleton_detection;
use super::script::ScriptRole;
use super::ScenarioError;
use crate::gaze::{build_gaze_record, GazeSource};
use crate::geometry::{BBox, Point, Vector};
use crate::ingest::RoomConfig;
use crate::mapping::{classify_roles, Homography, SampleSource, Trajectory, TrajectorySample};
use crate::metrics::MetricInput;

/// State of one agent in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub frame: u64,
    /// Floor position, meters.
    pub position: Point,
    pub heading_deg: f64,
    /// False while the agent is occluded.
    pub detected: bool,
    /// Noise-free bounding box, pixels.
    pub bbox: BBox,
    pub gaze_origin_map: Point,
    pub gaze_origin_px: Point,
    pub gaze_direction_px: Vector,
    pub wrists_px: [Point; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub id: u64,
    pub role: ScriptRole,
    pub scale: f64,
    pub head_visible: bool,
    /// One sample per frame the agent exists in, consecutive frames.
    pub samples: Vec<TruthSample>,
}

impl AgentTruth {
    pub fn sample(&self, frame: u64) -> Option<&TruthSample> {
        let first = self.samples.first()?.frame;
        self.samples.get(frame.checked_sub(first)? as usize)
    }
}

/// Entry of a team member as established from true positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub agent: u64,
    pub order: u32,
    pub frame: u64,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: String,
    pub fps: f64,
    pub last_frame: u64,
    /// Confidence of every visible keypoint in the noise-free skeletons.
    pub confidence: f64,
    /// Image to map.
    pub homography: Homography,
    /// Map to image.
    pub camera: Homography,
    pub agents: Vec<AgentTruth>,
    /// Agent id of each emitted detection, per frame, in stream order.
    pub detection_agents: BTreeMap<u64, Vec<u64>>,
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn agent(&self, id: u64) -> Option<&AgentTruth> {
        self.agents.iter().find(|a| a.id == id)
    }
}

/// Metric input built straight from ground truth, with agent ids as track ids.
///
/// Trajectories hold the true floor positions for every frame an agent exists;
/// detections are the noise-free skeletons of unoccluded frames; gaze records
/// are built from the true head origin and direction.
pub fn truth_metric_input(gt: &GroundTruth, config: &RoomConfig) -> Result<MetricInput, ScenarioError> {
    let mut trajectories = Vec::new();
    let mut detections = BTreeMap::new();
    let mut gaze = Vec::new();
    for a in &gt.agents {
        let mut samples = Vec::with_capacity(a.samples.len());
        let mut dets = BTreeMap::new();
        for s in &a.samples {
            samples.push(TrajectorySample {
                track: a.id,
                frame: s.frame,
                pixel_position: gt.camera.project(&s.position)?,
                map_position: s.position,
                source: SampleSource::Measured,
                in_room: config.in_room(&s.position),
            });
            if !s.detected {
                continue;
            }
            let det = skeleton_detection(
                s.frame,
                &s.position,
                s.heading_deg,
                a.scale,
                a.head_visible,
                gt.confidence,
                &gt.camera,
            )?;
            dets.insert(s.frame, det);
            if a.head_visible && gt.confidence >= config.metric_params.keypoint_conf {
                gaze.push(build_gaze_record(
                    a.id,
                    s.frame,
                    s.gaze_origin_px,
                    s.gaze_direction_px,
                    GazeSource::EyesMidpoint,
                    &gt.homography,
                    &gt.camera,
                    config,
                )?);
            }
        }
        trajectories.push(Trajectory { track: a.id, samples });
        detections.insert(a.id, dets);
    }
    gaze.sort_by_key(|g| (g.frame, g.track));
    let roles = classify_roles(&trajectories, config, gt.fps);
    Ok(MetricInput { fps: gt.fps, trajectories, roles, detections, gaze })
}
