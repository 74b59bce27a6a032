//! Reference scoring of synthetic drills from ground truth.
//!
//! Everything here is computed by brute force with its own small geometry
//! kit, so it can be used to check the engine rather than restate it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::truth::{GroundTruth, TruthEntry, TruthSample};
use crate::geometry::{BBox, Point};
use crate::ingest::{FrameSequence, RoomConfig};
use crate::metrics::METRIC_NAMES;
use crate::rollup::{Band, CtaHierarchy, Node};
use crate::tracking::{run_tracker, Track, TrackerParams};

// ---- geometry ----

fn orient(a: &Point, b: &Point, p: &Point) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)
}

/// Nonzero winding rule.
fn inside(p: &Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut w = 0i32;
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[(i + 1) % n]);
        if a.y <= p.y {
            if b.y > p.y && orient(a, b, p) > 0.0 {
                w += 1;
            }
        } else if b.y <= p.y && orient(a, b, p) < 0.0 {
            w -= 1;
        }
    }
    w != 0
}

fn seg_dist(p: &Point, a: &Point, b: &Point) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    let u = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0) };
    ((a.x + u * ex - p.x).powi(2) + (a.y + u * ey - p.y).powi(2)).sqrt()
}

/// Ray parameter where `o + t·d` meets segment `ab`, by Cramer's rule.
fn ray_hit(o: &Point, d: (f64, f64), a: &Point, b: &Point) -> Option<f64> {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let (rx, ry) = (a.x - o.x, a.y - o.y);
    let det = -d.0 * ey + ex * d.1;
    if det.abs() < 1e-15 {
        return None;
    }
    let t = (-rx * ey + ex * ry) / det;
    let u = (d.0 * ry - d.1 * rx) / det;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

fn apply(m: &[[f64; 3]; 3], p: &Point) -> Point {
    let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
    let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
    let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    Point::new(x / w, y / w)
}

fn in_triangle(p: &Point, t: &[Point; 3]) -> bool {
    let d = [orient(&t[0], &t[1], p), orient(&t[1], &t[2], p), orient(&t[2], &t[0], p)];
    !(d.iter().any(|v| *v < 0.0) && d.iter().any(|v| *v > 0.0))
}

fn in_box(p: &Point, b: &BBox) -> bool {
    p.x >= b.x1 && p.x <= b.x2 && p.y >= b.y1 && p.y <= b.y2
}

fn on_segment(a: &Point, b: &Point, p: &Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_cross(a: &Point, b: &Point, c: &Point, d: &Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Closed triangle against closed box.
fn tri_box(t: &[Point; 3], b: &BBox) -> bool {
    let corners = [Point::new(b.x1, b.y1), Point::new(b.x2, b.y1), Point::new(b.x2, b.y2), Point::new(b.x1, b.y2)];
    if t.iter().any(|p| in_box(p, b)) || corners.iter().any(|c| in_triangle(c, t)) {
        return true;
    }
    (0..3).any(|i| (0..4).any(|j| segments_cross(&t[i], &t[(i + 1) % 3], &corners[j], &corners[(j + 1) % 4])))
}

fn boxes_overlap(a: &BBox, b: &BBox) -> bool {
    a.x2.min(b.x2) - a.x1.max(b.x1) > 0.0 && a.y2.min(b.y2) - a.y1.max(b.y1) > 0.0
}

fn frames_for(seconds: f64, fps: f64) -> u64 {
    let mut m = 1u64;
    while (m as f64) / fps < seconds {
        m += 1;
    }
    m
}

fn pen(delay: f64, rate: f64) -> f64 {
    if delay > 0.0 {
        (-rate * delay).exp()
    } else {
        1.0
    }
}

// ---- roles ----

/// Team-member entries from true positions, ordered by (frame, agent).
pub fn oracle_entries(gt: &GroundTruth, room: &RoomConfig) -> Vec<TruthEntry> {
    let hold = frames_for(room.mapping.entry_hysteresis, gt.fps);
    let interior = |p: &Point| inside(p, &room.room) && !inside(p, &room.entry_zone.polygon);
    let mut found: Vec<(u64, u64)> = Vec::new();
    for a in &gt.agents {
        let s = &a.samples;
        if s.is_empty() || interior(&s[0].position) {
            continue;
        }
        let mut seen_zone = false;
        let mut k = 0;
        while k < s.len() {
            seen_zone |= inside(&s[k].position, &room.entry_zone.polygon);
            if seen_zone && interior(&s[k].position) {
                let run = s[k..].iter().take_while(|x| interior(&x.position)).count();
                if run as u64 >= hold || k + run == s.len() {
                    found.push((s[k].frame, a.id));
                    break;
                }
                k += run;
                continue;
            }
            k += 1;
        }
    }
    found.sort();
    found
        .iter()
        .enumerate()
        .map(|(i, &(frame, agent))| TruthEntry { agent, order: i as u32 + 1, frame, time: frame as f64 / gt.fps })
        .collect()
}

fn oracle_enemies(gt: &GroundTruth, room: &RoomConfig) -> Vec<u64> {
    gt.agents
        .iter()
        .filter(|a| {
            a.samples
                .first()
                .is_some_and(|f| inside(&f.position, &room.room) && !inside(&f.position, &room.entry_zone.polygon))
                && !a.samples.iter().any(|s| inside(&s.position, &room.entry_zone.polygon))
        })
        .map(|a| a.id)
        .collect()
}

// ---- metrics ----

/// Image triangle and, with the origin in the room, floor triangle.
type GazeTriangles = ([Point; 3], Option<[Point; 3]>);

struct World<'a> {
    gt: &'a GroundTruth,
    room: &'a RoomConfig,
    fps: f64,
    members: Vec<TruthEntry>,
    enemies: Vec<u64>,
    /// Keyed by (agent, frame).
    gaze: BTreeMap<(u64, u64), GazeTriangles>,
}

impl<'a> World<'a> {
    fn new(gt: &'a GroundTruth, room: &'a RoomConfig) -> Self {
        let cam: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| gt.camera.matrix[(r, c)]));
        let mut segs: Vec<(Point, Point)> = room.walls.iter().map(|w| (w[0], w[1])).collect();
        let n = room.room.len();
        segs.extend((0..n).map(|i| (room.room[i], room.room[(i + 1) % n])));
        let mut diam: f64 = 0.0;
        for a in &room.room {
            for b in &room.room {
                diam = diam.max(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt());
            }
        }
        let half = room.gaze.half_angle_deg;
        let mut gaze = BTreeMap::new();
        let visible = gt.confidence >= room.metric_params.keypoint_conf;
        for a in gt.agents.iter().filter(|a| a.head_visible && visible) {
            for s in a.samples.iter().filter(|s| s.detected) {
                let o = s.gaze_origin_map;
                let in_room = inside(&o, &room.room);
                let len = if in_room {
                    let d = (s.heading_deg.to_radians().cos(), s.heading_deg.to_radians().sin());
                    segs.iter().filter_map(|(p, q)| ray_hit(&o, d, p, q)).filter(|t| *t > 1e-12).fold(diam, f64::min)
                } else {
                    diam
                };
                let leg = |deg: f64| {
                    let r = (s.heading_deg + deg).to_radians();
                    Point::new(o.x + len * r.cos(), o.y + len * r.sin())
                };
                let map = [o, leg(half), leg(-half)];
                let img = [apply(&cam, &map[0]), apply(&cam, &map[1]), apply(&cam, &map[2])];
                gaze.insert((a.id, s.frame), (img, in_room.then_some(map)));
            }
        }
        Self { gt, room, fps: gt.fps, members: oracle_entries(gt, room), enemies: oracle_enemies(gt, room), gaze }
    }

    fn sample(&self, agent: u64, frame: u64) -> Option<&TruthSample> {
        self.gt.agent(agent)?.sample(frame)
    }

    fn seen(&self, agent: u64, frame: u64) -> Option<&TruthSample> {
        self.sample(agent, frame).filter(|s| s.detected)
    }

    fn looks_at(&self, agent: u64, frame: u64, b: &BBox) -> bool {
        self.gaze.get(&(agent, frame)).is_some_and(|(img, _)| tri_box(img, b))
    }

    fn direction(&self, m: &TruthEntry) -> i8 {
        let n = ((self.fps * 0.5).round() as u64).max(1);
        let a = self.gt.agent(m.agent).expect("entrant exists");
        let last = a.samples.last().expect("entrant has samples").frame;
        let end_frame = (m.frame + n).min(last);
        if end_frame <= m.frame {
            return 0;
        }
        let p0 = self.sample(m.agent, m.frame).expect("entry sample").position;
        let p1 = self.sample(m.agent, end_frame).expect("window sample").position;
        let nrm = self.room.entry_zone.inward_normal;
        let c = nrm.x * (p1.y - p0.y) - nrm.y * (p1.x - p0.x);
        if c > 0.0 {
            1
        } else if c < 0.0 {
            -1
        } else {
            0
        }
    }

    fn p(&self) -> &crate::metrics::MetricParams {
        &self.room.metric_params
    }

    fn entrance_vectors(&self) -> Option<f64> {
        if self.members.len() < 2 {
            return None;
        }
        let d: Vec<i8> = self.members.iter().map(|m| self.direction(m)).collect();
        let ok = d.windows(2).filter(|w| w[0] != 0 && w[1] != 0 && w[0] != w[1]).count();
        Some(ok as f64 / (d.len() - 1) as f64)
    }

    fn entrance_hesitation(&self) -> Option<f64> {
        if self.members.len() < 2 {
            return None;
        }
        let p = self.p();
        let mut sum = 0.0;
        for i in 1..self.members.len() {
            let gap = self.members[i].time - self.members[i - 1].time;
            let allow = if i + 1 == 3 { p.entry_gap_second_third } else { p.entry_gap_general };
            sum += pen(gap - allow, p.penalty_rate);
        }
        Some(sum / (self.members.len() - 1) as f64)
    }

    /// (agent, pod name, first frame of the first qualifying hold).
    fn captures(&self) -> Option<Vec<(u64, String, Option<u64>)>> {
        let first = self.members.first()?;
        let key = match self.direction(first) {
            1 => "left",
            -1 => "right",
            _ => "straight",
        };
        let names = self.p().pod_assignment_table.get(key)?;
        let hold = frames_for(self.p().pod_hold_min, self.fps);
        let mut out = Vec::new();
        for (m, pod) in self.members.iter().zip(names) {
            let poly = self.room.pods.get(pod).cloned().unwrap_or_default();
            let a = self.gt.agent(m.agent).expect("entrant exists");
            let mut run = 0u64;
            let mut found = None;
            for s in a.samples.iter().filter(|s| s.frame >= m.frame) {
                run = if poly.len() >= 3 && inside(&s.position, &poly) { run + 1 } else { 0 };
                if run >= hold {
                    found = Some(s.frame + 1 - run);
                    break;
                }
            }
            out.push((m.agent, pod.clone(), found));
        }
        (!out.is_empty()).then_some(out)
    }

    fn identify_capture_pod(&self) -> Option<f64> {
        let c = self.captures()?;
        Some(c.iter().filter(|x| x.2.is_some()).count() as f64 / c.len() as f64)
    }

    fn pod_capture_time(&self) -> Option<f64> {
        let c = self.captures()?;
        let p = self.p();
        let mut sum = 0.0;
        for (agent, _, frame) in &c {
            let entry = self.members.iter().find(|m| m.agent == *agent).expect("member");
            if let Some(f) = frame {
                sum += pen(*f as f64 / self.fps - entry.time - p.pod_time_limit, p.penalty_rate);
            }
        }
        Some(sum / c.len() as f64)
    }

    fn move_along_wall(&self) -> Option<f64> {
        if self.members.is_empty() {
            return None;
        }
        let assigned: BTreeMap<u64, String> =
            self.captures().unwrap_or_default().into_iter().map(|(a, pod, _)| (a, pod)).collect();
        let mut fracs = Vec::new();
        for m in &self.members {
            let pods: Vec<&Vec<Point>> = match assigned.get(&m.agent).and_then(|p| self.room.pods.get(p)) {
                Some(p) => vec![p],
                None => self.room.pods.values().collect(),
            };
            let a = self.gt.agent(m.agent).expect("member");
            let (mut near, mut total) = (0usize, 0usize);
            for s in a.samples.iter().filter(|s| s.frame >= m.frame) {
                if pods.iter().any(|poly| poly.len() >= 3 && inside(&s.position, poly)) {
                    break;
                }
                total += 1;
                if self.room.walls.iter().any(|w| seg_dist(&s.position, &w[0], &w[1]) <= self.p().wall_buffer) {
                    near += 1;
                }
            }
            if total > 0 {
                fracs.push(near as f64 / total as f64);
            }
        }
        (!fracs.is_empty()).then(|| fracs.iter().sum::<f64>() / fracs.len() as f64)
    }

    /// Clearance frame per enemy.
    fn clearances(&self) -> BTreeMap<u64, Option<u64>> {
        let p = self.p();
        let need = frames_for(p.threat_overlap_min, self.fps);
        let mut out = BTreeMap::new();
        for &e in &self.enemies {
            let ea = self.gt.agent(e).expect("enemy");
            let mut best: Option<u64> = None;
            for m in &self.members {
                let mut f = 0usize;
                let frames: Vec<&TruthSample> = ea.samples.iter().filter(|s| s.detected).collect();
                while f < frames.len() {
                    let overlapping = |s: &TruthSample| {
                        self.seen(m.agent, s.frame).is_some_and(|ms| boxes_overlap(&ms.bbox, &s.bbox))
                    };
                    if !overlapping(frames[f]) {
                        f += 1;
                        continue;
                    }
                    let mut g = f;
                    while g + 1 < frames.len()
                        && frames[g + 1].frame == frames[g].frame + 1
                        && overlapping(frames[g + 1])
                    {
                        g += 1;
                    }
                    let run = &frames[f..=g];
                    if run.len() as u64 >= need {
                        let wrist_ok = self.gt.confidence >= p.keypoint_conf;
                        let wrist = run.iter().find(|es| {
                            wrist_ok
                                && self
                                    .seen(m.agent, es.frame)
                                    .is_some_and(|ms| ms.wrists_px.iter().any(|w| in_box(w, &es.bbox)))
                        });
                        let gaze = if p.gaze_required {
                            run.iter().find(|es| self.looks_at(m.agent, es.frame, &es.bbox)).map(|s| s.frame)
                        } else {
                            Some(run[0].frame)
                        };
                        if let (Some(w), Some(gz)) = (wrist, gaze) {
                            let at = (run[0].frame + need - 1).max(w.frame).max(gz);
                            best = Some(best.map_or(at, |b| b.min(at)));
                        }
                    }
                    f = g + 1;
                }
            }
            out.insert(e, best);
        }
        out
    }

    fn threat_clearance(&self) -> Option<f64> {
        if self.enemies.is_empty() {
            return None;
        }
        let c = self.clearances();
        Some(c.values().filter(|v| v.is_some()).count() as f64 / self.enemies.len() as f64)
    }

    fn threat_coverage(&self) -> Option<f64> {
        if self.enemies.is_empty() {
            return None;
        }
        let c = self.clearances();
        let (mut watched, mut total) = (0usize, 0usize);
        for &e in &self.enemies {
            let until = c[&e].unwrap_or(u64::MAX);
            for s in self.gt.agent(e).expect("enemy").samples.iter().filter(|s| s.detected && s.frame < until) {
                if !self.members.iter().any(|m| s.frame >= m.frame && self.seen(m.agent, s.frame).is_some()) {
                    continue;
                }
                total += 1;
                if self.members.iter().any(|m| self.looks_at(m.agent, s.frame, &s.bbox)) {
                    watched += 1;
                }
            }
        }
        (total > 0).then(|| watched as f64 / total as f64)
    }

    fn teammate_coverage(&self) -> Option<f64> {
        if self.members.len() < 2 {
            return None;
        }
        let (mut unseen, mut total) = (0usize, 0usize);
        for f in 0..=self.gt.last_frame {
            let present: Vec<&TruthEntry> = self
                .members
                .iter()
                .filter(|m| f >= m.frame && self.seen(m.agent, f).is_some_and(|s| inside(&s.position, &self.room.room)))
                .collect();
            for m in &present {
                total += 1;
                let others: Vec<&&TruthEntry> = present.iter().filter(|o| o.agent != m.agent).collect();
                if others.is_empty() {
                    continue;
                }
                let b = self.seen(m.agent, f).expect("present").bbox;
                if !others.iter().any(|o| self.looks_at(o.agent, f, &b)) {
                    unseen += 1;
                }
            }
        }
        (total > 0).then(|| 1.0 - unseen as f64 / total as f64)
    }

    /// (covered cells, interior cells, first frame of full coverage).
    fn floor(&self) -> (usize, usize, Option<u64>) {
        let cell = self.p().floor_grid_cell;
        let xs = self.room.room.iter().map(|p| p.x);
        let ys = self.room.room.iter().map(|p| p.y);
        let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
        let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
        let nx = ((x1 - x0) / cell).ceil() as usize;
        let ny = ((y1 - y0) / cell).ceil() as usize;
        let mut cells: Vec<Point> = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let c = Point::new(x0 + (i as f64 + 0.5) * cell, y0 + (j as f64 + 0.5) * cell);
                if inside(&c, &self.room.room) {
                    cells.push(c);
                }
            }
        }
        let members: BTreeSet<u64> = self.members.iter().map(|m| m.agent).collect();
        let mut covered = vec![false; cells.len()];
        let mut count = 0;
        let mut full = None;
        let mut by_frame: BTreeMap<u64, Vec<[Point; 3]>> = BTreeMap::new();
        for ((a, f), (_, map)) in &self.gaze {
            if let (true, Some(t)) = (members.contains(a), map) {
                by_frame.entry(*f).or_default().push(*t);
            }
        }
        for (f, tris) in by_frame {
            for t in &tris {
                for (k, c) in cells.iter().enumerate() {
                    if !covered[k] && in_triangle(c, t) {
                        covered[k] = true;
                        count += 1;
                    }
                }
            }
            if full.is_none() && !cells.is_empty() && count == cells.len() {
                full = Some(f);
            }
        }
        (count, cells.len(), full)
    }
}

/// All ten metrics from ground truth; `None` marks not applicable.
pub fn oracle_metrics(gt: &GroundTruth, room: &RoomConfig) -> BTreeMap<String, Option<f64>> {
    let w = World::new(gt, room);
    let (covered, cells, full) = w.floor();
    let first_entry = w.members.iter().map(|m| m.frame).min();
    let scored = cells > 0 && first_entry.is_some();
    let fc = scored.then(|| covered as f64 / cells as f64);
    let tfct = scored.then(|| match (full, first_entry) {
        (Some(f), Some(start)) => {
            let p = w.p();
            pen((f as f64 - start as f64) / w.fps - p.floor_time_limit, p.penalty_rate)
        }
        _ => 0.0,
    });
    let values = [
        w.entrance_vectors(),
        w.entrance_hesitation(),
        w.identify_capture_pod(),
        w.pod_capture_time(),
        w.move_along_wall(),
        w.threat_clearance(),
        w.threat_coverage(),
        w.teammate_coverage(),
        fc,
        tfct,
    ];
    METRIC_NAMES.iter().zip(values).map(|(n, v)| (n.to_string(), v)).collect()
}

pub fn oracle_metric(name: &str, gt: &GroundTruth, room: &RoomConfig) -> Option<f64> {
    oracle_metrics(gt, room).get(name).copied().flatten()
}

// ---- tracking ----

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackAudit {
    pub track_count: usize,
    /// Changes of the track covering an agent between its consecutive detections.
    pub identity_switches: usize,
    /// Detections of each agent not covered by any confirmed track.
    pub unassigned: BTreeMap<u64, usize>,
    /// Agent each track covers in most of its frames.
    pub majority: BTreeMap<u64, u64>,
}

/// Run the tracker on a rendered stream and audit it against ground truth.
pub fn oracle_track_assignment(frames: &FrameSequence, gt: &GroundTruth, params: &TrackerParams) -> TrackAudit {
    audit_tracks(&run_tracker(frames, params), gt)
}

/// Compare confirmed tracks with the agents that produced each detection.
pub fn audit_tracks(tracks: &[Track], gt: &GroundTruth) -> TrackAudit {
    let mut covering: BTreeMap<u64, BTreeMap<u64, u64>> = BTreeMap::new();
    let mut votes: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    for t in tracks {
        for (f, o) in &t.observations {
            let Some(agent) = gt.detection_agents.get(f).and_then(|ids| ids.get(o.detection_index)) else {
                continue;
            };
            covering.entry(*agent).or_default().insert(*f, t.id);
            *votes.entry(t.id).or_default().entry(*agent).or_default() += 1;
        }
    }
    let mut audit = TrackAudit { track_count: tracks.len(), ..TrackAudit::default() };
    for (f, ids) in &gt.detection_agents {
        for a in ids {
            if !covering.get(a).is_some_and(|c| c.contains_key(f)) {
                *audit.unassigned.entry(*a).or_default() += 1;
            }
        }
    }
    for frames in covering.values() {
        let ids: Vec<u64> = frames.values().copied().collect();
        audit.identity_switches += ids.windows(2).filter(|w| w[0] != w[1]).count();
    }
    for (t, v) in votes {
        let best = v.iter().max_by_key(|(a, n)| (**n, std::cmp::Reverse(**a))).map(|(a, _)| *a);
        if let Some(a) = best {
            audit.majority.insert(t, a);
        }
    }
    audit
}

// ---- roll-up ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleNode {
    pub raw: Option<f64>,
    pub smoothed: Option<f64>,
    pub band: Band,
}

fn node_value(h: &CtaHierarchy, n: &Node, leaves: &BTreeMap<String, Option<f64>>) -> Option<f64> {
    if let Some(m) = &n.metric {
        return leaves.get(m).copied().flatten();
    }
    let mut parts = Vec::new();
    for c in &n.children {
        let child = h.nodes.iter().find(|x| x.id == c.id).expect("validated hierarchy");
        if let Some(v) = node_value(h, child, leaves) {
            parts.push((c.weight, v));
        }
    }
    let den: f64 = parts.iter().map(|p| p.0).sum();
    (den > 0.0).then(|| (parts.iter().map(|p| p.0 * p.1).sum::<f64>() / den).clamp(0.0, 1.0))
}

/// Recursive roll-up and smoothing over a sequence of trials.
pub fn oracle_rollup(h: &CtaHierarchy, trials: &[BTreeMap<String, Option<f64>>]) -> Vec<BTreeMap<String, OracleNode>> {
    let mut prev: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, leaves) in trials.iter().enumerate() {
        let alpha = h.smoothing.alpha_ceil * (1.0 - (-(2f64.ln()) * i as f64 / h.smoothing.half_life).exp());
        let mut row = BTreeMap::new();
        for n in &h.nodes {
            let raw = node_value(h, n, leaves);
            let last = prev.get(&n.id).copied().flatten();
            let smoothed = if n.metric.is_some() && !h.smoothing.smooth_leaves {
                raw
            } else {
                match (last, raw) {
                    (Some(p), Some(r)) => Some(alpha * p + (1.0 - alpha) * r),
                    (Some(p), None) => Some(p),
                    (None, r) => r,
                }
            };
            prev.insert(n.id.clone(), smoothed);
            let b = n.bands.unwrap_or(h.bands);
            let band = match smoothed {
                None => Band::NotApplicable,
                Some(s) if s >= b.above_min => Band::Above,
                Some(s) if s >= b.at_min => Band::At,
                Some(_) => Band::Below,
            };
            row.insert(n.id.clone(), OracleNode { raw, smoothed, band });
        }
        out.push(row);
    }
    out
}
