//! Scenario scripts: scripted agents moving through a room.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::geometry::{point_in_polygon, Point};
use crate::ingest::{parse_room_config, RoomConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptRole {
    Member,
    Enemy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds from the start of the scenario.
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Head heading keyframe; degrees counterclockwise from map +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeKey {
    pub t: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub id: u64,
    pub role: ScriptRole,
    /// Piecewise-linear path; the agent exists from the first to the last timestamp.
    pub waypoints: Vec<Waypoint>,
    /// Heading keyframes, linearly interpolated in degrees. When empty the
    /// agent faces its direction of travel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaze: Vec<GazeKey>,
    /// Body size multiplier for the skeleton template.
    #[serde(default = "unit")]
    pub scale: f64,
    /// When false, head keypoints are emitted with zero confidence.
    #[serde(default = "yes")]
    pub head_visible: bool,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Seconds during which an agent produces no detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub agent: u64,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Gaussian noise on keypoint coordinates, pixels.
    pub keypoint_sigma: f64,
    /// Gaussian noise on box corners, pixels.
    pub bbox_sigma: f64,
    /// Probability that any single keypoint is dropped.
    pub dropout: f64,
    /// Probability that all foot keypoints are dropped in a frame.
    pub foot_dropout: f64,
    /// Confidence reported for visible keypoints.
    pub confidence: f64,
    pub occlusions: Vec<Occlusion>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            keypoint_sigma: 0.3,
            bbox_sigma: 0.5,
            dropout: 0.01,
            foot_dropout: 0.0,
            confidence: 0.9,
            occlusions: Vec::new(),
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { keypoint_sigma: 0.0, bbox_sigma: 0.0, dropout: 0.0, foot_dropout: 0.0, ..Self::default() }
    }
}

/// Where the scenario's room comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoomRef {
    /// Path relative to the script file.
    Path(String),
    Inline(Box<RoomConfig>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    pub room: RoomRef,
    pub fps: f64,
    pub seed: u64,
    /// Seconds; defaults to the latest waypoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub agents: Vec<AgentScript>,
}

impl ScenarioScript {
    pub fn room(&self) -> Result<&RoomConfig, ScenarioError> {
        match &self.room {
            RoomRef::Inline(r) => Ok(r),
            RoomRef::Path(p) => Err(ScenarioError::UnresolvedRoom(p.clone())),
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
            .unwrap_or_else(|| self.agents.iter().filter_map(|a| a.waypoints.last()).map(|w| w.t).fold(0.0, f64::max))
    }

    /// Index of the last rendered frame.
    pub fn last_frame(&self) -> u64 {
        (self.duration() * self.fps + 1e-9).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let room = self.room()?;
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(ScenarioError::Invalid("fps must be positive".into()));
        }
        let n = &self.noise;
        let probs = [n.dropout, n.foot_dropout, n.confidence];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || n.keypoint_sigma < 0.0 || n.bbox_sigma < 0.0 {
            return Err(ScenarioError::Invalid("noise parameters out of range".into()));
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if a.id == 0 || !ids.insert(a.id) {
                return Err(ScenarioError::Invalid(format!("agent id {} is zero or duplicated", a.id)));
            }
            if a.waypoints.is_empty() || !(a.scale > 0.0) {
                return Err(ScenarioError::Invalid(format!("agent {} needs waypoints and a positive scale", a.id)));
            }
            for w in a.waypoints.windows(2) {
                if !(w[1].t > w[0].t) {
                    return Err(ScenarioError::NonIncreasingTimestamps(a.id));
                }
            }
            for g in a.gaze.windows(2) {
                if !(g[1].t > g[0].t) {
                    return Err(ScenarioError::NonIncreasingTimestamps(a.id));
                }
            }
            for w in &a.waypoints {
                let p = Point::new(w.x, w.y);
                if !(point_in_polygon(&p, &room.room) || point_in_polygon(&p, &room.entry_zone.polygon)) {
                    return Err(ScenarioError::WaypointOutsideRoom { agent: a.id, t: w.t });
                }
            }
        }
        Ok(())
    }
}

impl AgentScript {
    pub fn start(&self) -> f64 {
        self.waypoints[0].t
    }

    pub fn end(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].t
    }

    pub fn present_at(&self, t: f64) -> bool {
        t >= self.start() - 1e-9 && t <= self.end() + 1e-9
    }

    fn segment(&self, t: f64) -> (usize, f64) {
        let w = &self.waypoints;
        let i = w.partition_point(|p| p.t <= t).clamp(1, w.len().max(2) - 1);
        if w.len() == 1 {
            return (0, 0.0);
        }
        let (a, b) = (&w[i - 1], &w[i]);
        (i - 1, ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0))
    }

    pub fn position_at(&self, t: f64) -> Point {
        let (i, u) = self.segment(t);
        let a = &self.waypoints[i];
        let Some(b) = self.waypoints.get(i + 1) else { return Point::new(a.x, a.y) };
        Point::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u)
    }

    /// Heading in degrees at time `t`.
    pub fn heading_at(&self, t: f64) -> f64 {
        if !self.gaze.is_empty() {
            let g = &self.gaze;
            let i = g.partition_point(|k| k.t <= t);
            if i == 0 {
                return g[0].heading;
            }
            if i == g.len() {
                return g[g.len() - 1].heading;
            }
            let (a, b) = (&g[i - 1], &g[i]);
            return a.heading + (b.heading - a.heading) * (t - a.t) / (b.t - a.t);
        }
        // Direction of the current segment, or the most recent moving one.
        let (i, _) = self.segment(t);
        for j in (0..=i).rev() {
            if let Some(b) = self.waypoints.get(j + 1) {
                let a = &self.waypoints[j];
                let (dx, dy) = (b.x - a.x, b.y - a.y);
                if dx.hypot(dy) > 1e-9 {
                    return dy.atan2(dx).to_degrees();
                }
            }
        }
        90.0
    }

    pub fn occluded_at(&self, t: f64, noise: &NoiseSpec) -> bool {
        noise.occlusions.iter().any(|o| o.agent == self.id && t >= o.start - 1e-9 && t <= o.end + 1e-9)
    }
}

pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<ScenarioScript, ScenarioError> {
    let mut script: ScenarioScript = serde_json::from_str(text)?;
    if let RoomRef::Path(p) = &script.room {
        let path = base_dir.map(|d| d.join(p)).unwrap_or_else(|| p.into());
        let text = std::fs::read_to_string(&path)?;
        script.room = RoomRef::Inline(Box::new(parse_room_config(&text)?));
    } else if let RoomRef::Inline(r) = script.room {
        script.room = RoomRef::Inline(Box::new(r.finalize()?));
    }
    script.validate()?;
    Ok(script)
}

/// Load a script; a room given as a path is resolved against the script's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioScript, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, path.parent())
}
