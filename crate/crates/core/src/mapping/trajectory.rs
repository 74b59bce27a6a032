//! Per-track map trajectories built from tracked detections.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::foot::{fallback_velocity, foot_position, reference_point};
use super::homography::{Homography, HomographyError};
use super::smoothing::{alpha_map, smooth_map_position, smooth_pixel_track, PixelObservation};
use crate::geometry::Point;
use crate::ingest::{Detection, RoomConfig};
use crate::tracking::Track;

pub use super::smoothing::SampleSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub track: u64,
    pub frame: u64,
    pub pixel_position: Point,
    pub map_position: Point,
    pub source: SampleSource,
    /// Whether `map_position` lies inside the room polygon.
    pub in_room: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track: u64,
    /// Samples in increasing frame order.
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn sample_at(&self, frame: u64) -> Option<&TrajectorySample> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok().map(|i| &self.samples[i])
    }
}

fn pixel_observations(observations: &BTreeMap<u64, &Detection>, conf: f64, lag: u64) -> Vec<(u64, PixelObservation)> {
    let (Some(&first), Some(&last)) = (observations.keys().next(), observations.keys().next_back()) else {
        return Vec::new();
    };
    (first..=last)
        .map(|frame| {
            let Some(det) = observations.get(&frame) else {
                return (frame, PixelObservation::Missing);
            };
            if let Some(p) = foot_position(&det.keypoints, conf) {
                return (frame, PixelObservation::Measured(p));
            }
            let earlier = (1..=lag).rev().find_map(|k| {
                let f = frame.checked_sub(k)?;
                observations.get(&f).map(|d| (k, *d))
            });
            let obs = match earlier {
                Some((k, before)) => {
                    let (now, then) = reference_point(det, before, conf);
                    match fallback_velocity(Some(now), Some(then), k) {
                        Ok(v) => PixelObservation::Fallback(v),
                        Err(_) => PixelObservation::Missing,
                    }
                }
                None => PixelObservation::Missing,
            };
            (frame, obs)
        })
        .collect()
}

/// Smoothed map trajectory for every track with at least one foot measurement.
pub fn build_trajectories(tracks: &[Track], h: &Homography, config: &RoomConfig, fps: f64) -> Vec<Trajectory> {
    let params = &config.mapping;
    let conf = config.metric_params.keypoint_conf;
    let max_step = params.v_max / fps;
    let mut out = Vec::new();
    for track in tracks {
        let observations: BTreeMap<u64, &Detection> =
            track.observations.iter().map(|(f, o)| (*f, &o.detection)).collect();
        let pixel = smooth_pixel_track(&pixel_observations(&observations, conf, params.fallback_lag), params);
        let mut samples: Vec<TrajectorySample> = Vec::with_capacity(pixel.len());
        for ps in pixel {
            let Ok(m_t) = h.project(&ps.position) else { continue };
            let map_position = match samples.last() {
                None => m_t,
                Some(prev) => {
                    let m_prev = prev.map_position;
                    let alpha = alpha_map((m_t - m_prev).norm(), params);
                    let blended = smooth_map_position(&m_t, &m_prev, alpha);
                    let step = blended - m_prev;
                    let limit = max_step * (ps.frame - prev.frame) as f64;
                    if step.norm() > limit {
                        m_prev + step * (limit / step.norm())
                    } else {
                        blended
                    }
                }
            };
            samples.push(TrajectorySample {
                track: track.id,
                frame: ps.frame,
                pixel_position: ps.position,
                map_position,
                source: ps.source,
                in_room: config.in_room(&map_position),
            });
        }
        if !samples.is_empty() {
            out.push(Trajectory { track: track.id, samples });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDumpRecord {
    pub frame: u64,
    pub track: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub source: SampleSource,
}

/// Samples of every trajectory ordered by frame then track.
pub fn trajectory_dump(trajectories: &[Trajectory]) -> Vec<TrajectoryDumpRecord> {
    let mut rows: Vec<TrajectoryDumpRecord> = trajectories
        .iter()
        .flat_map(|t| &t.samples)
        .map(|s| TrajectoryDumpRecord {
            frame: s.frame,
            track: s.track,
            x_m: s.map_position.x,
            y_m: s.map_position.y,
            source: s.source,
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.track));
    rows
}

pub fn write_trajectory_dump<W: Write>(trajectories: &[Trajectory], mut out: W) -> std::io::Result<()> {
    for r in trajectory_dump(trajectories) {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Trajectories rebuilt from dump rows. Pixel positions are recovered through
/// `camera`, the map-to-image homography.
pub fn trajectories_from_dump(
    rows: &[TrajectoryDumpRecord],
    camera: &Homography,
    config: &RoomConfig,
) -> Result<Vec<Trajectory>, HomographyError> {
    let mut by_track: BTreeMap<u64, BTreeMap<u64, &TrajectoryDumpRecord>> = BTreeMap::new();
    for r in rows {
        by_track.entry(r.track).or_default().insert(r.frame, r);
    }
    by_track
        .into_iter()
        .map(|(track, rows)| {
            let samples = rows
                .into_values()
                .map(|r| {
                    let map_position = Point::new(r.x_m, r.y_m);
                    Ok(TrajectorySample {
                        track,
                        frame: r.frame,
                        pixel_position: camera.project(&map_position)?,
                        map_position,
                        source: r.source,
                        in_room: config.in_room(&map_position),
                    })
                })
                .collect::<Result<Vec<_>, HomographyError>>()?;
            Ok(Trajectory { track, samples })
        })
        .collect()
}
