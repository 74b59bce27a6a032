//! Threat clearance and threat coverage.

use std::collections::BTreeMap;

use super::{Evidence, MetricContext, MetricResult};
use crate::gaze::triangle_intersects_box;
use crate::geometry::BBox;
use crate::ingest::{halpe, validate_keypoint};

const TCL: &str = "threat_clearance";
const TCV: &str = "threat_coverage";

#[derive(Clone, Debug, PartialEq)]
pub struct Clearance {
    pub member: u64,
    /// Frame at which every clearance condition has been met.
    pub frame: u64,
    /// Overlap window the clearance was found in.
    pub window: (u64, u64),
}

fn wrist_in_box(ctx: &MetricContext, member: u64, frame: u64, b: &BBox) -> bool {
    let conf = ctx.params().keypoint_conf;
    ctx.detection(member, frame).is_some_and(|d| {
        halpe::WRISTS
            .iter()
            .any(|&i| d.keypoints.get(i).is_some_and(|k| validate_keypoint(k, conf) && b.contains(&k.point())))
    })
}

pub(crate) fn gaze_hits(ctx: &MetricContext, member: u64, frame: u64, b: &BBox) -> bool {
    ctx.gaze_at(member, frame).is_some_and(|g| triangle_intersects_box(&g.image_triangle, b))
}

/// Maximal runs of consecutive frames where both tracks are detected and their boxes overlap.
fn overlap_runs(ctx: &MetricContext, enemy: u64, member: u64) -> Vec<(u64, u64)> {
    let (Some(e), Some(m)) = (ctx.input.detections.get(&enemy), ctx.input.detections.get(&member)) else {
        return Vec::new();
    };
    let mut runs: Vec<(u64, u64)> = Vec::new();
    for (&f, ed) in e {
        let overlapping = m.get(&f).is_some_and(|md| md.bbox.intersection_area(&ed.bbox) > 0.0);
        if !overlapping {
            continue;
        }
        match runs.last_mut() {
            Some(r) if r.1 + 1 == f => r.1 = f,
            _ => runs.push((f, f)),
        }
    }
    runs
}

/// Earliest clearance of each enemy, if any.
pub fn clearance_frames(ctx: &MetricContext) -> BTreeMap<u64, Option<Clearance>> {
    let p = ctx.params();
    let min_frames = ctx.frames_for(p.threat_overlap_min);
    ctx.enemies
        .iter()
        .map(|&enemy| {
            let mut best: Option<Clearance> = None;
            for m in &ctx.members {
                for (s, e) in overlap_runs(ctx, enemy, m.track) {
                    if e - s + 1 < min_frames {
                        continue;
                    }
                    let enemy_box = |f: u64| ctx.bbox(enemy, f).copied().expect("overlap frames have enemy boxes");
                    let Some(wrist) = (s..=e).find(|&f| wrist_in_box(ctx, m.track, f, &enemy_box(f))) else {
                        continue;
                    };
                    let gaze = if p.gaze_required {
                        match (s..=e).find(|&f| gaze_hits(ctx, m.track, f, &enemy_box(f))) {
                            Some(g) => g,
                            None => continue,
                        }
                    } else {
                        s
                    };
                    let frame = (s + min_frames - 1).max(wrist).max(gaze);
                    if best.as_ref().is_none_or(|b| frame < b.frame) {
                        best = Some(Clearance { member: m.track, frame, window: (s, e) });
                    }
                }
            }
            (enemy, best)
        })
        .collect()
}

/// Fraction of detected enemies cleared.
pub fn threat_clearance(ctx: &MetricContext) -> MetricResult {
    if ctx.enemies.is_empty() {
        return MetricResult::not_applicable(TCL, "no enemies");
    }
    let cleared = clearance_frames(ctx);
    let mut per_agent = BTreeMap::new();
    let mut evidence = Vec::new();
    for (enemy, c) in &cleared {
        per_agent.insert(*enemy, if c.is_some() { 1.0 } else { 0.0 });
        evidence.push(match c {
            Some(c) => Evidence {
                start_frame: c.window.0,
                end_frame: c.window.1,
                description: format!("enemy {enemy} cleared by track {} at frame {}", c.member, c.frame),
            },
            None => Evidence { start_frame: 0, end_frame: 0, description: format!("enemy {enemy} not cleared") },
        });
    }
    let score = per_agent.values().sum::<f64>() / ctx.enemies.len() as f64;
    MetricResult::scored(TCL, score, per_agent, evidence)
}

/// Fraction of (frame, uncleared enemy) pairs, while an entered member is
/// present, in which some member's gaze covers the enemy.
pub fn threat_coverage(ctx: &MetricContext) -> MetricResult {
    if ctx.enemies.is_empty() {
        return MetricResult::not_applicable(TCV, "no enemies");
    }
    let cleared = clearance_frames(ctx);
    let mut pairs: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for &enemy in &ctx.enemies {
        let Some(frames) = ctx.input.detections.get(&enemy) else { continue };
        let until = cleared.get(&enemy).and_then(|c| c.as_ref().map(|c| c.frame)).unwrap_or(u64::MAX);
        for (&f, det) in frames.range(..until) {
            let present = ctx.members.iter().any(|m| f >= m.entry_frame && ctx.bbox(m.track, f).is_some());
            if !present {
                continue;
            }
            let watched = ctx.members.iter().any(|m| gaze_hits(ctx, m.track, f, &det.bbox));
            let e = pairs.entry(enemy).or_insert((0, 0));
            e.0 += watched as usize;
            e.1 += 1;
        }
    }
    let total: usize = pairs.values().map(|p| p.1).sum();
    if total == 0 {
        return MetricResult::not_applicable(TCV, "no frames with an uncleared enemy and a member present");
    }
    let watched: usize = pairs.values().map(|p| p.0).sum();
    let per_agent = pairs.iter().map(|(e, (w, n))| (*e, *w as f64 / *n as f64)).collect();
    let evidence = pairs
        .iter()
        .map(|(e, (w, n))| Evidence {
            start_frame: 0,
            end_frame: 0,
            description: format!("enemy {e} watched in {w}/{n} qualifying frames"),
        })
        .collect();
    MetricResult::scored(TCV, watched as f64 / total as f64, per_agent, evidence)
}
