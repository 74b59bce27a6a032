//! Team-member / enemy classification from entry-zone crossings.

use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::ingest::RoomConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Role {
    TeamMember {
        /// 1-based order of entry.
        entry_order: u32,
        /// Seconds from stream start.
        entry_time: f64,
        entry_frame: u64,
    },
    Enemy,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRole {
    pub track: u64,
    pub role: Role,
}

impl AgentRole {
    pub fn is_member(&self) -> bool {
        matches!(self.role, Role::TeamMember { .. })
    }

    pub fn entry_frame(&self) -> Option<u64> {
        match self.role {
            Role::TeamMember { entry_frame, .. } => Some(entry_frame),
            _ => None,
        }
    }
}

enum Kind {
    Member(u64),
    Enemy,
    Unknown,
}

/// First frame at which the trajectory, having passed through the entry zone,
/// starts an interior run lasting at least `hold` seconds (or until it ends).
fn entry_frame(t: &Trajectory, config: &RoomConfig, fps: f64) -> Option<u64> {
    let hold = config.mapping.entry_hysteresis;
    let interior: Vec<bool> = t.samples.iter().map(|s| config.is_interior(&s.map_position)).collect();
    let mut seen_zone = false;
    let mut i = 0;
    while i < t.samples.len() {
        if config.in_entry_zone(&t.samples[i].map_position) {
            seen_zone = true;
        }
        if seen_zone && interior[i] {
            let start = t.samples[i].frame;
            let mut j = i;
            while j + 1 < t.samples.len() && interior[j + 1] && t.samples[j + 1].frame == t.samples[j].frame + 1 {
                j += 1;
            }
            let run = (t.samples[j].frame - start + 1) as f64 / fps;
            if run >= hold || j + 1 == t.samples.len() {
                return Some(start);
            }
            i = j + 1;
            continue;
        }
        i += 1;
    }
    None
}

fn classify(t: &Trajectory, config: &RoomConfig, fps: f64) -> Kind {
    let Some(first) = t.samples.first() else { return Kind::Unknown };
    if config.is_interior(&first.map_position) {
        let ever_in_zone = t.samples.iter().any(|s| config.in_entry_zone(&s.map_position));
        return if ever_in_zone { Kind::Unknown } else { Kind::Enemy };
    }
    match entry_frame(t, config, fps) {
        Some(f) => Kind::Member(f),
        None => Kind::Unknown,
    }
}

/// Assign roles; team members are numbered by entry frame, ties broken by track id.
pub fn classify_roles(trajectories: &[Trajectory], config: &RoomConfig, fps: f64) -> Vec<AgentRole> {
    let kinds: Vec<(u64, Kind)> = trajectories.iter().map(|t| (t.track, classify(t, config, fps))).collect();
    let mut entrants: Vec<(u64, u64)> = kinds
        .iter()
        .filter_map(|(track, k)| match k {
            Kind::Member(f) => Some((*f, *track)),
            _ => None,
        })
        .collect();
    entrants.sort();
    let mut roles: Vec<AgentRole> = kinds
        .iter()
        .map(|(track, k)| {
            let role = match k {
                Kind::Member(f) => {
                    let order = entrants.iter().position(|e| e.1 == *track).expect("listed above") as u32 + 1;
                    Role::TeamMember { entry_order: order, entry_time: *f as f64 / fps, entry_frame: *f }
                }
                Kind::Enemy => Role::Enemy,
                Kind::Unknown => Role::Unknown,
            };
            AgentRole { track: *track, role }
        })
        .collect();
    roles.sort_by_key(|r| r.track);
    roles
}
