//! Teammate coverage.

use std::collections::{BTreeMap, BTreeSet};

use super::threat::gaze_hits;
use super::{Evidence, MetricContext, MetricResult};

const TMC: &str = "teammate_coverage";

/// `1 − unseen / in-room`, summed over members. A member is in the room at a
/// frame when it is detected, its map position is inside the room and it has
/// entered; it is unseen when at least one other member is in the room and
/// none of them has a gaze triangle touching its box.
pub fn teammate_coverage(ctx: &MetricContext) -> MetricResult {
    if ctx.members.len() < 2 {
        return MetricResult::not_applicable(TMC, "fewer than two team members");
    }
    let mut in_room: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for m in &ctx.members {
        let Some(dets) = ctx.input.detections.get(&m.track) else { continue };
        for &f in dets.range(m.entry_frame..).map(|(f, _)| f) {
            if ctx.position(m.track, f).is_some_and(|p| ctx.config.in_room(&p)) {
                in_room.entry(f).or_default().insert(m.track);
            }
        }
    }
    let mut totals: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (&f, present) in &in_room {
        for &m in present {
            let t = totals.entry(m).or_insert((0, 0));
            t.1 += 1;
            let others: Vec<u64> = present.iter().copied().filter(|o| *o != m).collect();
            if others.is_empty() {
                continue;
            }
            let b = ctx.bbox(m, f).expect("in-room members are detected");
            if !others.iter().any(|&o| gaze_hits(ctx, o, f, b)) {
                t.0 += 1;
            }
        }
    }
    let total: usize = totals.values().map(|t| t.1).sum();
    if total == 0 {
        return MetricResult::not_applicable(TMC, "no member time in room");
    }
    let unseen: usize = totals.values().map(|t| t.0).sum();
    let per_agent = totals.iter().map(|(m, (u, n))| (*m, 1.0 - *u as f64 / *n as f64)).collect();
    let evidence = totals
        .iter()
        .map(|(m, (u, n))| Evidence {
            start_frame: 0,
            end_frame: 0,
            description: format!("track {m} unseen {u}/{n} in-room frames"),
        })
        .collect();
    MetricResult::scored(TMC, 1.0 - unseen as f64 / total as f64, per_agent, evidence)
}
