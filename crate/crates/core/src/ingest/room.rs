use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::GazeParams;
use crate::geometry::{self, Point, Vector};
use crate::mapping::MappingParams;
use crate::metrics::MetricParams;
use crate::rollup::{CtaHierarchy, HierarchyError};
use crate::tracking::TrackerParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub pixel: Point,
    pub map: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub pairs: Vec<CalibrationPair>,
    /// Maximum accepted reprojection error in meters.
    #[serde(default = "default_calibration_tolerance")]
    pub tolerance_m: f64,
}

fn default_calibration_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub map: String,
    pub image: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { map: "m".into(), image: "px".into() }
    }
}

/// Doorway region and the unit normal pointing from the door into the room.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryZone {
    pub polygon: Vec<Point>,
    pub inward_normal: Vector,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntryZone {
    Polygon(Vec<Point>),
    Full { polygon: Vec<Point>, inward_normal: Option<Vector> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    #[serde(default)]
    pub units: Units,
    pub room: Vec<Point>,
    #[serde(default)]
    pub walls: Vec<[Point; 2]>,
    #[serde(deserialize_with = "deserialize_entry_zone_raw")]
    pub entry_zone: EntryZone,
    #[serde(default)]
    pub pods: BTreeMap<String, Vec<Point>>,
    pub calibration: Calibration,
    #[serde(default)]
    pub metric_params: MetricParams,
    #[serde(default)]
    pub tracker: TrackerParams,
    #[serde(default)]
    pub mapping: MappingParams,
    #[serde(default)]
    pub gaze: GazeParams,
    #[serde(default = "CtaHierarchy::default_ecr")]
    pub hierarchy: CtaHierarchy,
}

fn deserialize_entry_zone_raw<'de, D>(d: D) -> Result<EntryZone, D::Error>
where
    D: serde::Deserializer<'de>,
{
    // The normal is resolved against the room later; NaN marks "derive it".
    Ok(match RawEntryZone::deserialize(d)? {
        RawEntryZone::Polygon(polygon) => EntryZone { polygon, inward_normal: Vector::new(f64::NAN, f64::NAN) },
        RawEntryZone::Full { polygon, inward_normal } => {
            EntryZone { polygon, inward_normal: inward_normal.unwrap_or_else(|| Vector::new(f64::NAN, f64::NAN)) }
        }
    })
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("need at least 4 calibration pairs, found {0}")]
    MissingCalibration(usize),
    #[error("room polygon is degenerate or self-intersecting")]
    DegenerateRoomPolygon,
    #[error("entry zone does not intersect the room polygon")]
    EntryZoneOutsideRoom,
    #[error("hierarchy references unknown node or metric `{0}`")]
    UnknownHierarchyNodeReference(String),
    #[error("invalid hierarchy: {0}")]
    Hierarchy(HierarchyError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported units: map `{map}`, image `{image}` (expected m / px)")]
    UnsupportedUnits { map: String, image: String },
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<HierarchyError> for ConfigError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::UnknownMetricBinding { metric, .. } => ConfigError::UnknownHierarchyNodeReference(metric),
            HierarchyError::UnknownChild { child, .. } => ConfigError::UnknownHierarchyNodeReference(child),
            other => ConfigError::Hierarchy(other),
        }
    }
}

pub fn load_room_config(path: &Path) -> Result<RoomConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_room_config(&text)
}

pub fn parse_room_config(text: &str) -> Result<RoomConfig, ConfigError> {
    let config: RoomConfig = serde_json::from_str(text)?;
    config.finalize()
}

impl RoomConfig {
    /// Apply derived defaults and check every invariant.
    pub fn finalize(mut self) -> Result<Self, ConfigError> {
        if self.units.map != "m" || self.units.image != "px" {
            return Err(ConfigError::UnsupportedUnits { map: self.units.map.clone(), image: self.units.image.clone() });
        }
        if !geometry::is_simple_polygon(&self.room) || self.room.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ConfigError::DegenerateRoomPolygon);
        }
        if self.calibration.pairs.len() < 4 {
            return Err(ConfigError::MissingCalibration(self.calibration.pairs.len()));
        }
        if !(self.calibration.tolerance_m > 0.0) {
            return Err(ConfigError::InvalidParameter("calibration.tolerance_m must be > 0".into()));
        }
        if self.entry_zone.polygon.len() < 3 || !geometry::polygons_intersect(&self.entry_zone.polygon, &self.room) {
            return Err(ConfigError::EntryZoneOutsideRoom);
        }
        let n = self.entry_zone.inward_normal;
        if !(n.x.is_finite() && n.y.is_finite()) || n.norm() < 1e-12 {
            let room_c = geometry::centroid(&self.room).expect("room has vertices");
            let zone_c = geometry::centroid(&self.entry_zone.polygon).expect("zone has vertices");
            let d = room_c - zone_c;
            if d.norm() < 1e-12 {
                return Err(ConfigError::InvalidParameter(
                    "entry_zone.inward_normal cannot be derived; entry zone centered on room".into(),
                ));
            }
            self.entry_zone.inward_normal = d.normalize();
        } else {
            self.entry_zone.inward_normal = n.normalize();
        }
        if self.walls.is_empty() {
            self.walls = geometry::polygon_edges(&self.room).into_iter().map(|(a, b)| [a, b]).collect();
        }
        for (name, poly) in &self.pods {
            if !geometry::is_simple_polygon(poly) {
                return Err(ConfigError::InvalidParameter(format!("pod `{name}` is not a simple polygon")));
            }
        }
        self.metric_params.validate().map_err(ConfigError::InvalidParameter)?;
        for names in self.metric_params.pod_assignment_table.values() {
            if let Some(unknown) = names.iter().find(|n| !self.pods.contains_key(*n)) {
                return Err(ConfigError::InvalidParameter(format!(
                    "pod_assignment_table names unknown pod `{unknown}`"
                )));
            }
        }
        self.tracker.validate().map_err(ConfigError::InvalidParameter)?;
        self.mapping.validate().map_err(ConfigError::InvalidParameter)?;
        self.gaze.validate().map_err(ConfigError::InvalidParameter)?;
        self.hierarchy.validate()?;
        Ok(self)
    }

    /// Override one parameter by dotted path, e.g. `wall_buffer=0.5` or
    /// `tracker.max_age=20`. Bare keys address `metric_params`. Values are parsed
    /// as JSON, falling back to a plain string.
    pub fn with_override(self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(&self)?;
        let path: Vec<&str> = if key.contains('.') { key.split('.').collect() } else { vec!["metric_params", key] };
        let parsed: serde_json::Value =
            serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut slot = &mut doc;
        for (depth, part) in path.iter().enumerate() {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| ConfigError::InvalidParameter(format!("`{key}` does not address an object field")))?;
            if !obj.contains_key(*part) {
                return Err(ConfigError::InvalidParameter(format!("unknown parameter `{key}`")));
            }
            slot = obj.get_mut(*part).expect("checked above");
            if depth == path.len() - 1 {
                *slot = parsed.clone();
            }
        }
        let config: RoomConfig = serde_json::from_value(doc)?;
        config.finalize()
    }

    pub fn wall_segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.walls.iter().map(|w| (w[0], w[1]))
    }

    /// Inside the room polygon and outside the entry zone.
    pub fn is_interior(&self, p: &Point) -> bool {
        geometry::point_in_polygon(p, &self.room) && !geometry::point_in_polygon(p, &self.entry_zone.polygon)
    }

    pub fn in_room(&self, p: &Point) -> bool {
        geometry::point_in_polygon(p, &self.room)
    }

    pub fn in_entry_zone(&self, p: &Point) -> bool {
        geometry::point_in_polygon(p, &self.entry_zone.polygon)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn minimal_config_json() -> serde_json::Value {
        serde_json::json!({
            "room": [[0, 0], [4, 0], [4, 4], [0, 4]],
            "entry_zone": [[1.5, -0.5], [2.5, -0.5], [2.5, 0.5], [1.5, 0.5]],
            "calibration": { "pairs": [
                { "pixel": [0, 0], "map": [0, 0] },
                { "pixel": [1, 0], "map": [2, 0] },
                { "pixel": [1, 1], "map": [2, 2] },
                { "pixel": [0, 1], "map": [0, 2] }
            ]}
        })
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let cfg = parse_room_config(&minimal_config_json().to_string()).unwrap();
        assert_eq!(cfg.calibration.pairs.len(), 4);
        assert_eq!(cfg.walls.len(), 4);
        assert!((cfg.entry_zone.inward_normal - Vector::new(0.0, 1.0)).norm() < 1e-12);
        assert_eq!(cfg.metric_params, MetricParams::default());
    }

    #[test]
    fn three_pairs_is_missing_calibration() {
        let mut v = minimal_config_json();
        v["calibration"]["pairs"].as_array_mut().unwrap().pop();
        assert!(matches!(parse_room_config(&v.to_string()), Err(ConfigError::MissingCalibration(3))));
    }

    #[test]
    fn bowtie_room_is_degenerate() {
        let mut v = minimal_config_json();
        v["room"] = serde_json::json!([[0, 0], [4, 4], [4, 0], [0, 4]]);
        assert!(matches!(parse_room_config(&v.to_string()), Err(ConfigError::DegenerateRoomPolygon)));
    }

    #[test]
    fn leaf_with_unknown_metric_is_rejected() {
        let mut v = minimal_config_json();
        v["hierarchy"] = serde_json::json!({
            "nodes": [
                { "id": "root", "name": "Root", "level": 0, "children": [{ "id": "leaf" }] },
                { "id": "leaf", "name": "Leaf", "level": 4, "metric": "no_such_metric" }
            ]
        });
        match parse_room_config(&v.to_string()) {
            Err(ConfigError::UnknownHierarchyNodeReference(name)) => assert_eq!(name, "no_such_metric"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entry_zone_far_away_is_rejected() {
        let mut v = minimal_config_json();
        v["entry_zone"] = serde_json::json!([[10, 10], [11, 10], [11, 11]]);
        assert!(matches!(parse_room_config(&v.to_string()), Err(ConfigError::EntryZoneOutsideRoom)));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = parse_room_config(&minimal_config_json().to_string()).unwrap();
        let cfg = cfg.with_override("wall_buffer", "0.5").unwrap();
        assert_eq!(cfg.metric_params.wall_buffer, 0.5);
        let cfg = cfg.with_override("tracker.max_age", "12").unwrap();
        assert_eq!(cfg.tracker.max_age, 12);
        assert!(cfg.clone().with_override("no_such_key", "1").is_err());
        assert!(cfg.with_override("wall_buffer", "-1").is_err());
    }

    #[test]
    fn echo_reloads_identically() {
        let cfg = parse_room_config(&minimal_config_json().to_string()).unwrap();
        let echoed = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_room_config(&echoed).unwrap(), cfg);
    }
}
