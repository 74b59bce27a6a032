//! Synthetic drills with known ground truth, and oracles that score them
//! independently of the engine.

mod oracle;
mod random;
mod render;
mod script;
mod truth;

use thiserror::Error;

use crate::gaze::GazeError;
use crate::ingest::ConfigError;
use crate::mapping::HomographyError;

pub use oracle::{
    audit_tracks, oracle_entries, oracle_metric, oracle_metrics, oracle_rollup, oracle_track_assignment, OracleNode,
    TrackAudit,
};
pub use random::random_scenario;
pub use render::{render_scenario, skeleton_detection, BODY_HALF_WIDTH};
pub use script::{
    load_scenario, parse_scenario, AgentScript, GazeKey, NoiseSpec, Occlusion, RoomRef, ScenarioScript, ScriptRole,
    Waypoint,
};
pub use truth::{truth_metric_input, AgentTruth, GroundTruth, TruthEntry, TruthSample};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("agent {agent}: waypoint at t={t} s lies outside the room and entry zone")]
    WaypointOutsideRoom { agent: u64, t: f64 },
    #[error("agent {0}: timestamps must strictly increase")]
    NonIncreasingTimestamps(u64),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("room `{0}` has not been loaded")]
    UnresolvedRoom(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Gaze(#[from] GazeError),
    #[error("scenario parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
