//! The ten ECR performance metrics, each scored in `[0, 1]`.

mod entry;
mod floor;
mod pod;
mod teammate;
mod threat;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::GazeRecord;
use crate::geometry::{BBox, Point};
use crate::ingest::{Detection, RoomConfig};
use crate::mapping::{AgentRole, Role, Trajectory};

pub use entry::{entrance_hesitation, entrance_vectors, entry_direction, EntryDirection};
pub use floor::{coverage_grid, floor_coverage, total_floor_coverage_time, CoverageGrid};
pub use pod::{identify_capture_pod, move_along_wall, pod_assignments, pod_capture_time, PodAssignment};
pub use teammate::teammate_coverage;
pub use threat::{clearance_frames, threat_clearance, threat_coverage};

/// Metric names in canonical order.
pub const METRIC_NAMES: [&str; 10] = [
    "entrance_vectors",
    "entrance_hesitation",
    "identify_capture_pod",
    "pod_capture_time",
    "move_along_wall",
    "threat_clearance",
    "threat_coverage",
    "teammate_coverage",
    "floor_coverage",
    "total_floor_coverage_time",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    /// Allowed gap between consecutive entrants, seconds.
    pub entry_gap_general: f64,
    /// Allowed gap between the second and third entrants, seconds.
    pub entry_gap_second_third: f64,
    /// Exponential penalty rate, 1/s.
    pub penalty_rate: f64,
    /// First-entry direction (`left`, `right` or `straight`) to POD names in entry order.
    pub pod_assignment_table: BTreeMap<String, Vec<String>>,
    pub pod_hold_min: f64,
    pub pod_time_limit: f64,
    /// Meters from a wall that still count as moving along it.
    pub wall_buffer: f64,
    pub threat_overlap_min: f64,
    pub gaze_required: bool,
    /// Floor raster cell size, meters.
    pub floor_grid_cell: f64,
    pub floor_time_limit: f64,
    pub keypoint_conf: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            entry_gap_general: 1.0,
            entry_gap_second_third: 2.0,
            penalty_rate: 0.5,
            pod_assignment_table: BTreeMap::new(),
            pod_hold_min: 1.0,
            pod_time_limit: 5.0,
            wall_buffer: 0.75,
            threat_overlap_min: 2.0,
            gaze_required: true,
            floor_grid_cell: 0.25,
            floor_time_limit: 30.0,
            keypoint_conf: 0.3,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<(), String> {
        let durations = [
            ("entry_gap_general", self.entry_gap_general),
            ("entry_gap_second_third", self.entry_gap_second_third),
            ("pod_hold_min", self.pod_hold_min),
            ("pod_time_limit", self.pod_time_limit),
            ("threat_overlap_min", self.threat_overlap_min),
            ("floor_time_limit", self.floor_time_limit),
            ("penalty_rate", self.penalty_rate),
        ];
        for (name, v) in durations {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite value >= 0"));
            }
        }
        if !(self.wall_buffer > 0.0 && self.wall_buffer.is_finite()) {
            return Err("wall_buffer must be > 0".into());
        }
        if !(self.floor_grid_cell > 0.0 && self.floor_grid_cell.is_finite()) {
            return Err("floor_grid_cell must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.keypoint_conf) {
            return Err("keypoint_conf must be in [0, 1]".into());
        }
        if let Some(k) = self.pod_assignment_table.keys().find(|k| EntryDirection::from_key(k).is_none()) {
            return Err(format!("pod_assignment_table key `{k}` must be left, right or straight"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("pod_assignment_table has no entry for first-entry direction `{0}`")]
    MissingAssignment(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub start_frame: u64,
    pub end_frame: u64,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: String,
    /// `None` when the metric does not apply to this trial.
    pub score: Option<f64>,
    pub per_agent: BTreeMap<u64, f64>,
    pub evidence: Vec<Evidence>,
}

impl MetricResult {
    pub fn not_applicable(metric: &str, reason: impl Into<String>) -> Self {
        Self {
            metric: metric.into(),
            score: None,
            per_agent: BTreeMap::new(),
            evidence: vec![Evidence { start_frame: 0, end_frame: 0, description: reason.into() }],
        }
    }

    fn scored(metric: &str, score: f64, per_agent: BTreeMap<u64, f64>, evidence: Vec<Evidence>) -> Self {
        Self { metric: metric.into(), score: Some(score.clamp(0.0, 1.0)), per_agent, evidence }
    }
}

/// `pen(d) = exp(−λ·max(0, d))`.
pub fn pen(delay: f64, rate: f64) -> f64 {
    if delay <= 0.0 {
        1.0
    } else {
        (-rate * delay).exp()
    }
}

/// Everything a trial's metrics are computed from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricInput {
    pub fps: f64,
    pub trajectories: Vec<Trajectory>,
    pub roles: Vec<AgentRole>,
    /// Detections per track id, then per frame.
    pub detections: BTreeMap<u64, BTreeMap<u64, Detection>>,
    pub gaze: Vec<GazeRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Member {
    pub track: u64,
    pub entry_order: u32,
    pub entry_frame: u64,
    pub entry_time: f64,
}

/// Read-only indices over a [`MetricInput`].
pub struct MetricContext<'a> {
    pub input: &'a MetricInput,
    pub config: &'a RoomConfig,
    pub fps: f64,
    /// Team members by entry order.
    pub members: Vec<Member>,
    pub enemies: Vec<u64>,
    pub positions: BTreeMap<u64, BTreeMap<u64, Point>>,
    pub gaze: BTreeMap<(u64, u64), &'a GazeRecord>,
}

impl<'a> MetricContext<'a> {
    pub fn new(input: &'a MetricInput, config: &'a RoomConfig) -> Self {
        let mut members: Vec<Member> = input
            .roles
            .iter()
            .filter_map(|r| match r.role {
                Role::TeamMember { entry_order, entry_time, entry_frame } => {
                    Some(Member { track: r.track, entry_order, entry_frame, entry_time })
                }
                _ => None,
            })
            .collect();
        members.sort_by_key(|m| m.entry_order);
        let enemies = input.roles.iter().filter(|r| r.role == Role::Enemy).map(|r| r.track).collect();
        let positions = input
            .trajectories
            .iter()
            .map(|t| (t.track, t.samples.iter().map(|s| (s.frame, s.map_position)).collect()))
            .collect();
        let gaze = input.gaze.iter().map(|g| ((g.track, g.frame), g)).collect();
        Self { input, config, fps: input.fps, members, enemies, positions, gaze }
    }

    pub fn params(&self) -> &MetricParams {
        &self.config.metric_params
    }

    pub fn bbox(&self, track: u64, frame: u64) -> Option<&BBox> {
        self.input.detections.get(&track)?.get(&frame).map(|d| &d.bbox)
    }

    pub fn detection(&self, track: u64, frame: u64) -> Option<&Detection> {
        self.input.detections.get(&track)?.get(&frame)
    }

    pub fn position(&self, track: u64, frame: u64) -> Option<Point> {
        self.positions.get(&track)?.get(&frame).copied()
    }

    pub fn gaze_at(&self, track: u64, frame: u64) -> Option<&'a GazeRecord> {
        self.gaze.get(&(track, frame)).copied()
    }

    /// Frames spanned by any detection, trajectory sample or gaze record.
    pub fn frame_range(&self) -> Option<(u64, u64)> {
        let det = self.input.detections.values().flat_map(|m| m.keys().copied());
        let pos = self.positions.values().flat_map(|m| m.keys().copied());
        let gz = self.input.gaze.iter().map(|g| g.frame);
        let all: Vec<u64> = det.chain(pos).chain(gz).collect();
        Some((*all.iter().min()?, *all.iter().max()?))
    }

    /// Smallest frame count `m` with `m / fps >= seconds` (at least one frame).
    pub fn frames_for(&self, seconds: f64) -> u64 {
        let mut m = ((seconds * self.fps).floor() as u64).max(1);
        while (m as f64) / self.fps < seconds {
            m += 1;
        }
        while m > 1 && ((m - 1) as f64) / self.fps >= seconds {
            m -= 1;
        }
        m
    }
}

/// All ten metrics in canonical order. Metrics that cannot be evaluated are
/// reported as not applicable with the reason as evidence.
pub fn compute_metrics(ctx: &MetricContext) -> Vec<MetricResult> {
    let or_na = |name: &str, r: Result<MetricResult, MetricError>| {
        r.unwrap_or_else(|e| MetricResult::not_applicable(name, e.to_string()))
    };
    let grid = coverage_grid(ctx);
    vec![
        entrance_vectors(ctx),
        entrance_hesitation(ctx),
        or_na("identify_capture_pod", identify_capture_pod(ctx)),
        or_na("pod_capture_time", pod_capture_time(ctx)),
        move_along_wall(ctx),
        threat_clearance(ctx),
        threat_coverage(ctx),
        teammate_coverage(ctx),
        floor_coverage(ctx, &grid),
        total_floor_coverage_time(ctx, &grid),
    ]
}

/// Leaf values for roll-up keyed by metric name.
pub fn leaf_values(results: &[MetricResult]) -> BTreeMap<String, Option<f64>> {
    results.iter().map(|r| (r.metric.clone(), r.score)).collect()
}
