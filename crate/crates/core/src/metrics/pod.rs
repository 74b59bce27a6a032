//! Point-of-dominance capture, capture time and movement along the walls.

use std::collections::BTreeMap;

use super::entry::entry_direction;
use super::{pen, Evidence, Member, MetricContext, MetricError, MetricResult};
use crate::geometry::{point_in_polygon, point_segment_distance, Point};

#[derive(Clone, Debug, PartialEq)]
pub struct PodAssignment {
    pub track: u64,
    pub pod: String,
    /// First frame of the first qualifying hold.
    pub capture_frame: Option<u64>,
    /// Seconds from the agent's entry to `capture_frame`.
    pub capture_time: Option<f64>,
}

/// First run of consecutive frames at or after `from` inside `poly` lasting `hold` frames.
fn first_hold(track: &BTreeMap<u64, Point>, from: u64, poly: &[Point], hold: u64) -> Option<u64> {
    let mut run: Option<(u64, u64)> = None;
    for (&f, p) in track.range(from..) {
        if !point_in_polygon(p, poly) {
            run = None;
            continue;
        }
        run = match run {
            Some((start, last)) if last + 1 == f => Some((start, f)),
            _ => Some((f, f)),
        };
        let (start, last) = run.expect("set above");
        if last - start + 1 >= hold {
            return Some(start);
        }
    }
    None
}

/// PODs assigned to entrants in entry order from the first entrant's direction.
pub fn pod_assignments(ctx: &MetricContext) -> Result<Vec<PodAssignment>, MetricError> {
    let Some(first) = ctx.members.first() else { return Ok(Vec::new()) };
    let dir = entry_direction(ctx, first);
    let names = ctx
        .params()
        .pod_assignment_table
        .get(dir.key())
        .ok_or_else(|| MetricError::MissingAssignment(dir.key().to_string()))?;
    let hold = ctx.frames_for(ctx.params().pod_hold_min);
    let empty = BTreeMap::new();
    Ok(ctx
        .members
        .iter()
        .zip(names)
        .map(|(m, pod)| {
            let track = ctx.positions.get(&m.track).unwrap_or(&empty);
            let poly = ctx.config.pods.get(pod).map(Vec::as_slice).unwrap_or(&[]);
            let capture_frame = first_hold(track, m.entry_frame, poly, hold);
            PodAssignment {
                track: m.track,
                pod: pod.clone(),
                capture_frame,
                capture_time: capture_frame.map(|f| f as f64 / ctx.fps - m.entry_time),
            }
        })
        .collect())
}

const ICP: &str = "identify_capture_pod";
const PCT: &str = "pod_capture_time";
const MAW: &str = "move_along_wall";

fn capture_evidence(a: &PodAssignment) -> Evidence {
    match a.capture_frame {
        Some(f) => Evidence {
            start_frame: f,
            end_frame: f,
            description: format!("track {} captured {} after {:.3} s", a.track, a.pod, a.capture_time.unwrap_or(0.0)),
        },
        None => {
            Evidence { start_frame: 0, end_frame: 0, description: format!("track {} never held {}", a.track, a.pod) }
        }
    }
}

/// Fraction of assigned PODs held for at least `pod_hold_min`.
pub fn identify_capture_pod(ctx: &MetricContext) -> Result<MetricResult, MetricError> {
    let assigned = pod_assignments(ctx)?;
    if assigned.is_empty() {
        return Ok(MetricResult::not_applicable(ICP, "no PODs assigned"));
    }
    let per_agent: BTreeMap<u64, f64> =
        assigned.iter().map(|a| (a.track, if a.capture_frame.is_some() { 1.0 } else { 0.0 })).collect();
    let captured = per_agent.values().sum::<f64>();
    let evidence = assigned.iter().map(capture_evidence).collect();
    Ok(MetricResult::scored(ICP, captured / assigned.len() as f64, per_agent, evidence))
}

/// Mean penalty on capture delay past `pod_time_limit`; a missed POD scores 0.
pub fn pod_capture_time(ctx: &MetricContext) -> Result<MetricResult, MetricError> {
    let assigned = pod_assignments(ctx)?;
    if assigned.is_empty() {
        return Ok(MetricResult::not_applicable(PCT, "no PODs assigned"));
    }
    let p = ctx.params();
    let per_agent: BTreeMap<u64, f64> = assigned
        .iter()
        .map(|a| (a.track, a.capture_time.map_or(0.0, |t| pen(t - p.pod_time_limit, p.penalty_rate))))
        .collect();
    let score = per_agent.values().sum::<f64>() / assigned.len() as f64;
    let evidence = assigned.iter().map(capture_evidence).collect();
    Ok(MetricResult::scored(PCT, score, per_agent, evidence))
}

fn arrival_frame(ctx: &MetricContext, m: &Member, pods: &[&[Point]]) -> Option<u64> {
    let track = ctx.positions.get(&m.track)?;
    track.range(m.entry_frame..).find(|(_, p)| pods.iter().any(|poly| point_in_polygon(p, poly))).map(|(f, _)| *f)
}

/// Mean fraction of pre-POD frames spent within `wall_buffer` of a wall.
///
/// The window runs from entry to the first frame inside the agent's assigned
/// POD, or inside any POD when no assignment is available, or to the end of
/// the trajectory if neither is reached.
pub fn move_along_wall(ctx: &MetricContext) -> MetricResult {
    if ctx.members.is_empty() {
        return MetricResult::not_applicable(MAW, "no team members");
    }
    let assigned: BTreeMap<u64, String> =
        pod_assignments(ctx).unwrap_or_default().into_iter().map(|a| (a.track, a.pod)).collect();
    let all_pods: Vec<&[Point]> = ctx.config.pods.values().map(Vec::as_slice).collect();
    let walls: Vec<(Point, Point)> = ctx.config.wall_segments().collect();
    let buffer = ctx.params().wall_buffer;
    let mut per_agent = BTreeMap::new();
    let mut evidence = Vec::new();
    for m in &ctx.members {
        let pods: Vec<&[Point]> = match assigned.get(&m.track).and_then(|p| ctx.config.pods.get(p)) {
            Some(poly) => vec![poly.as_slice()],
            None => all_pods.clone(),
        };
        let end = arrival_frame(ctx, m, &pods).unwrap_or(u64::MAX);
        let Some(track) = ctx.positions.get(&m.track) else { continue };
        let window: Vec<(u64, bool)> = track
            .range(m.entry_frame..end)
            .map(|(f, p)| (*f, walls.iter().any(|(a, b)| point_segment_distance(p, a, b) <= buffer)))
            .collect();
        let (Some(first), Some(last)) = (window.first(), window.last()) else { continue };
        let inside = window.iter().filter(|(_, b)| *b).count();
        let frac = inside as f64 / window.len() as f64;
        per_agent.insert(m.track, frac);
        evidence.push(Evidence {
            start_frame: first.0,
            end_frame: last.0,
            description: format!("track {} {inside}/{} frames within wall buffer", m.track, window.len()),
        });
    }
    if per_agent.is_empty() {
        return MetricResult::not_applicable(MAW, "no pre-POD frames for any member");
    }
    let score = per_agent.values().sum::<f64>() / per_agent.len() as f64;
    MetricResult::scored(MAW, score, per_agent, evidence)
}
