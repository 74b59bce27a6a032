//! Motion-only multi-person tracking.
//!
//! Each track carries a constant-velocity box filter. Per frame the tracker
//! predicts every live track, associates detections by IoU plus a motion-direction
//! consistency term, recovers still-unmatched tracks against their last real
//! observation, and, when a lost track is found again, replays the filter over
//! interpolated virtual observations so drift accumulated while coasting is
//! discarded.

mod assignment;
mod kalman;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Vector};
use crate::ingest::{Detection, FrameSequence};

pub use assignment::solve as solve_assignment;
pub use kalman::{BoxFilter, MIN_AREA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    /// Pairs below this IoU are never matched.
    pub iou_floor: f64,
    /// Weight of the direction-inconsistency term in the association cost.
    pub direction_weight: f64,
    /// Lag, in frames, used to estimate a track's motion direction.
    pub direction_lag: u64,
    /// Frames a track may go unmatched before it is retired.
    pub max_age: u64,
    /// Consecutive matches needed before a new track is confirmed.
    pub min_hits: u32,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { iou_floor: 0.1, direction_weight: 0.2, direction_lag: 3, max_age: 30, min_hits: 3 }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.iou_floor) {
            return Err("tracker.iou_floor must be in [0,1]".into());
        }
        if !(self.direction_weight >= 0.0) {
            return Err("tracker.direction_weight must be >= 0".into());
        }
        if self.direction_lag == 0 || self.min_hits == 0 {
            return Err("tracker.direction_lag and tracker.min_hits must be >= 1".into());
        }
        Ok(())
    }
}

/// Filter state plus track bookkeeping counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub filter: BoxFilter,
    /// Frames since creation.
    pub age: u64,
    /// Frames since the last matched observation.
    pub time_since_update: u64,
    /// Consecutive matched frames.
    pub hit_streak: u32,
}

impl TrackState {
    pub fn new(b: &BBox) -> Self {
        Self { filter: BoxFilter::new(b), age: 0, time_since_update: 0, hit_streak: 1 }
    }

    /// Advance one frame and return the predicted box.
    pub fn predict(&mut self) -> BBox {
        self.filter.predict();
        self.age += 1;
        if self.time_since_update > 0 {
            self.hit_streak = 0;
        }
        self.time_since_update += 1;
        self.filter.bbox()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Position of the detection within its frame in the input stream.
    pub detection_index: usize,
    pub detection: Detection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    /// Zero until the track is confirmed.
    pub id: u64,
    pub state: TrackState,
    pub observations: BTreeMap<u64, Observation>,
    /// Filter snapshot right after the last real update, used for re-updates.
    saved_filter: BoxFilter,
    pub track_hint: Option<u64>,
}

impl Track {
    pub fn new(frame: u64, detection_index: usize, detection: Detection) -> Self {
        let state = TrackState::new(&detection.bbox);
        let saved_filter = state.filter.clone();
        let track_hint = detection.track_hint;
        let mut observations = BTreeMap::new();
        observations.insert(frame, Observation { detection_index, detection });
        Self { id: 0, state, observations, saved_filter, track_hint }
    }

    pub fn last_observation(&self) -> (u64, &BBox) {
        let (f, o) = self.observations.iter().next_back().expect("tracks always hold an observation");
        (*f, &o.detection.bbox)
    }

    pub fn first_frame(&self) -> u64 {
        *self.observations.keys().next().expect("tracks always hold an observation")
    }

    /// Unit direction from the observation about `lag` frames before the latest
    /// one to the latest one.
    pub fn direction_estimate(&self, lag: u64) -> Option<Vector> {
        let (last_frame, last_box) = self.last_observation();
        let earlier =
            (1..=lag).rev().filter_map(|k| last_frame.checked_sub(k)).find_map(|f| self.observations.get(&f))?;
        let d = last_box.center() - earlier.detection.bbox.center();
        let n = d.norm();
        (n > 1e-9).then(|| d / n)
    }

    pub fn is_confirmed(&self) -> bool {
        self.id != 0
    }
}

/// Measurement update at `frame` for a track matched in the previous frame.
pub fn update(track: &mut Track, frame: u64, detection_index: usize, detection: Detection) {
    track.state.filter.update(&detection.bbox);
    track.saved_filter = track.state.filter.clone();
    track.state.hit_streak += 1;
    track.state.time_since_update = 0;
    track.observations.insert(frame, Observation { detection_index, detection });
}

/// Measurement update for a track found again after unmatched frames.
///
/// The filter is rolled back to its state at the last real observation, fed
/// virtual observations interpolated between that box and the new one, and then
/// updated with the real detection. With no missed frames this is [`update`].
pub fn reupdate_after_gap(track: &mut Track, frame: u64, detection_index: usize, detection: Detection) {
    let (last_frame, last_box) = track.last_observation();
    let last_box = *last_box;
    let gap = frame.saturating_sub(last_frame).saturating_sub(1);
    if gap == 0 {
        update(track, frame, detection_index, detection);
        return;
    }
    let mut filter = track.saved_filter.clone();
    let steps = (gap + 1) as f64;
    for k in 1..=gap {
        let w = k as f64 / steps;
        let lerp = |a: f64, b: f64| a + (b - a) * w;
        let virtual_box = BBox::new(
            lerp(last_box.x1, detection.bbox.x1),
            lerp(last_box.y1, detection.bbox.y1),
            lerp(last_box.x2, detection.bbox.x2),
            lerp(last_box.y2, detection.bbox.y2),
        );
        filter.predict();
        filter.update(&virtual_box);
    }
    filter.predict();
    track.state.filter = filter;
    update(track, frame, detection_index, detection);
}

/// Prediction summary handed to [`associate`].
#[derive(Clone, Debug)]
pub struct Prediction {
    pub bbox: BBox,
    pub last_observation: BBox,
    pub direction: Option<Vector>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// `(prediction index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Angle between the track direction and the last-observation→detection
/// direction, scaled to `[0, 1]`.
fn direction_inconsistency(p: &Prediction, det: &BBox) -> f64 {
    let Some(dir) = p.direction else { return 0.0 };
    let to_det = det.center() - p.last_observation.center();
    let n = to_det.norm();
    if n < 1e-9 {
        return 0.0;
    }
    (dir.dot(&(to_det / n))).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
}

const FORBIDDEN: f64 = 1e6;

fn solve_with_floor(
    rows: &[usize],
    cols: &[usize],
    iou: impl Fn(usize, usize) -> f64,
    extra: impl Fn(usize, usize) -> f64,
    floor: f64,
) -> Vec<(usize, usize)> {
    if rows.is_empty() || cols.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| {
            cols.iter()
                .map(|&c| {
                    let v = iou(r, c);
                    if v < floor || v <= 0.0 {
                        FORBIDDEN
                    } else {
                        (1.0 - v) + extra(r, c)
                    }
                })
                .collect()
        })
        .collect();
    solve_assignment(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(ri, ci)| ci.map(|ci| (ri, ci)))
        .filter(|&(ri, ci)| cost[ri][ci] < FORBIDDEN)
        .map(|(ri, ci)| (rows[ri], cols[ci]))
        .collect()
}

/// One-to-one association minimizing `(1 − IoU) + w_dir · inconsistency`,
/// followed by a recovery round that matches leftovers against each track's
/// last real observation.
pub fn associate(predictions: &[Prediction], detections: &[Detection], params: &TrackerParams) -> Association {
    let all_rows: Vec<usize> = (0..predictions.len()).collect();
    let all_cols: Vec<usize> = (0..detections.len()).collect();
    let mut matches = solve_with_floor(
        &all_rows,
        &all_cols,
        |r, c| predictions[r].bbox.iou(&detections[c].bbox),
        |r, c| params.direction_weight * direction_inconsistency(&predictions[r], &detections[c].bbox),
        params.iou_floor,
    );
    let matched_rows: BTreeSet<usize> = matches.iter().map(|m| m.0).collect();
    let matched_cols: BTreeSet<usize> = matches.iter().map(|m| m.1).collect();
    let rows: Vec<usize> = all_rows.into_iter().filter(|r| !matched_rows.contains(r)).collect();
    let cols: Vec<usize> = all_cols.into_iter().filter(|c| !matched_cols.contains(c)).collect();
    let recovered = solve_with_floor(
        &rows,
        &cols,
        |r, c| predictions[r].last_observation.iou(&detections[c].bbox),
        |_, _| 0.0,
        params.iou_floor,
    );
    matches.extend(recovered);
    matches.sort_unstable();
    let matched_rows: BTreeSet<usize> = matches.iter().map(|m| m.0).collect();
    let matched_cols: BTreeSet<usize> = matches.iter().map(|m| m.1).collect();
    Association {
        unmatched_predictions: (0..predictions.len()).filter(|r| !matched_rows.contains(r)).collect(),
        unmatched_detections: (0..detections.len()).filter(|c| !matched_cols.contains(c)).collect(),
        matches,
    }
}

struct IdAllocator {
    used: BTreeSet<u64>,
    next: u64,
}

impl IdAllocator {
    fn allocate(&mut self, preferred: Option<u64>) -> u64 {
        if let Some(h) = preferred.filter(|h| *h > 0 && !self.used.contains(h)) {
            self.used.insert(h);
            return h;
        }
        while self.used.contains(&self.next) {
            self.next += 1;
        }
        let id = self.next;
        self.used.insert(id);
        id
    }
}

/// Run the tracker over a whole sequence and return every confirmed track,
/// ordered by id. Frames absent from the sequence count as empty frames.
pub fn run_tracker(frames: &FrameSequence, params: &TrackerParams) -> Vec<Track> {
    let (Some(first), Some(last)) = (frames.frames.first(), frames.frames.last()) else {
        return Vec::new();
    };
    let mut ids = IdAllocator { used: BTreeSet::new(), next: 1 };
    let mut live: Vec<Track> = Vec::new();
    let mut done: Vec<Track> = Vec::new();
    let mut frame_iter = frames.frames.iter().peekable();
    let empty: Vec<Detection> = Vec::new();

    for f in first.index..=last.index {
        let detections = match frame_iter.peek() {
            Some(fr) if fr.index == f => &frame_iter.next().expect("peeked").detections,
            _ => &empty,
        };
        let predictions: Vec<Prediction> = live
            .iter_mut()
            .map(|t| {
                let bbox = t.state.predict();
                Prediction {
                    bbox,
                    last_observation: *t.last_observation().1,
                    direction: t.direction_estimate(params.direction_lag),
                }
            })
            .collect();
        let assoc = associate(&predictions, detections, params);
        for &(ti, di) in &assoc.matches {
            let det = detections[di].clone();
            if live[ti].state.time_since_update > 1 {
                reupdate_after_gap(&mut live[ti], f, di, det);
            } else {
                update(&mut live[ti], f, di, det);
            }
        }
        // Tentative tracks do not survive a miss.
        let unmatched: BTreeSet<usize> = assoc.unmatched_predictions.iter().copied().collect();
        let mut kept = Vec::with_capacity(live.len());
        for (i, t) in live.drain(..).enumerate() {
            if unmatched.contains(&i) && !t.is_confirmed() {
                continue;
            }
            if t.state.time_since_update > params.max_age {
                done.push(t);
                continue;
            }
            kept.push(t);
        }
        live = kept;
        for &di in &assoc.unmatched_detections {
            live.push(Track::new(f, di, detections[di].clone()));
        }
        for t in live.iter_mut().filter(|t| !t.is_confirmed()) {
            if t.state.hit_streak >= params.min_hits || t.track_hint.is_some() {
                t.id = ids.allocate(t.track_hint);
            }
        }
    }
    done.extend(live.into_iter().filter(Track::is_confirmed));
    done.sort_by_key(|t| t.id);
    done
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackDumpRecord {
    pub frame: u64,
    pub track: u64,
    pub bbox: BBox,
}

/// Observed boxes of every track, ordered by frame then track id.
pub fn track_dump(tracks: &[Track]) -> Vec<TrackDumpRecord> {
    let mut rows: Vec<TrackDumpRecord> = tracks
        .iter()
        .flat_map(|t| {
            t.observations.iter().map(move |(f, o)| TrackDumpRecord { frame: *f, track: t.id, bbox: o.detection.bbox })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track));
    rows
}

pub fn write_track_dump<W: Write>(tracks: &[Track], mut out: W) -> std::io::Result<()> {
    for r in track_dump(tracks) {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
