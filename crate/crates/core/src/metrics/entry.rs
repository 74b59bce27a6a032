//! Entrance vectors and entrance hesitation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{pen, Evidence, Member, MetricContext, MetricResult};
use crate::geometry::cross;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryDirection {
    Left,
    Right,
    Straight,
}

impl EntryDirection {
    pub fn key(&self) -> &'static str {
        match self {
            EntryDirection::Left => "left",
            EntryDirection::Right => "right",
            EntryDirection::Straight => "straight",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "left" => Some(EntryDirection::Left),
            "right" => Some(EntryDirection::Right),
            "straight" => Some(EntryDirection::Straight),
            _ => None,
        }
    }
}

/// Side taken after entering, from the movement over the first half second.
/// Positive `cross(door_normal, movement)` is left.
pub fn entry_direction(ctx: &MetricContext, member: &Member) -> EntryDirection {
    let n = ((0.5 * ctx.fps).round() as u64).max(1);
    let Some(track) = ctx.positions.get(&member.track) else { return EntryDirection::Straight };
    let Some(start) = track.get(&member.entry_frame) else { return EntryDirection::Straight };
    let Some((_, end)) = track.range(member.entry_frame + 1..=member.entry_frame + n).next_back() else {
        return EntryDirection::Straight;
    };
    let c = cross(&ctx.config.entry_zone.inward_normal, &(end - start));
    if c > 0.0 {
        EntryDirection::Left
    } else if c < 0.0 {
        EntryDirection::Right
    } else {
        EntryDirection::Straight
    }
}

const EV: &str = "entrance_vectors";
const EH: &str = "entrance_hesitation";

/// Fraction of consecutive entrant pairs that go to opposite sides.
pub fn entrance_vectors(ctx: &MetricContext) -> MetricResult {
    if ctx.members.len() < 2 {
        return MetricResult::not_applicable(EV, "fewer than two entrants");
    }
    let dirs: Vec<EntryDirection> = ctx.members.iter().map(|m| entry_direction(ctx, m)).collect();
    let mut per_agent = BTreeMap::new();
    let mut evidence = Vec::new();
    let mut alternating = 0usize;
    for (i, w) in dirs.windows(2).enumerate() {
        let ok = w[0] != w[1] && w[0] != EntryDirection::Straight && w[1] != EntryDirection::Straight;
        alternating += ok as usize;
        let m = &ctx.members[i + 1];
        per_agent.insert(m.track, if ok { 1.0 } else { 0.0 });
        evidence.push(Evidence {
            start_frame: ctx.members[i].entry_frame,
            end_frame: m.entry_frame,
            description: format!(
                "entrant {} {} then entrant {} {}",
                ctx.members[i].entry_order,
                w[0].key(),
                m.entry_order,
                w[1].key()
            ),
        });
    }
    MetricResult::scored(EV, alternating as f64 / (dirs.len() - 1) as f64, per_agent, evidence)
}

/// Mean exponential penalty over inter-entry gaps beyond their allowance.
pub fn entrance_hesitation(ctx: &MetricContext) -> MetricResult {
    if ctx.members.len() < 2 {
        return MetricResult::not_applicable(EH, "fewer than two entrants");
    }
    let p = ctx.params();
    let mut per_agent = BTreeMap::new();
    let mut evidence = Vec::new();
    let mut total = 0.0;
    for w in ctx.members.windows(2) {
        let gap = w[1].entry_time - w[0].entry_time;
        let allowed = if w[1].entry_order == 3 { p.entry_gap_second_third } else { p.entry_gap_general };
        let v = pen(gap - allowed, p.penalty_rate);
        total += v;
        per_agent.insert(w[1].track, v);
        evidence.push(Evidence {
            start_frame: w[0].entry_frame,
            end_frame: w[1].entry_frame,
            description: format!("gap {gap:.3} s, allowed {allowed:.3} s"),
        });
    }
    MetricResult::scored(EH, total / (ctx.members.len() - 1) as f64, per_agent, evidence)
}
