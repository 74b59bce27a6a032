//! Rendering scripted agents into a noisy detection stream.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::script::{NoiseSpec, ScenarioScript};
use super::truth::{AgentTruth, GroundTruth, TruthSample};
use super::{oracle, ScenarioError};
use crate::geometry::{BBox, Point, Vector};
use crate::ingest::{halpe, Detection, Frame, FrameSequence, Keypoint, KEYPOINT_COUNT};
use crate::mapping::{estimate_homography, Homography, HomographyError};

/// Half the side of the square floor footprint behind each bounding box, meters.
pub const BODY_HALF_WIDTH: f64 = 0.3;

/// Keypoint offsets (forward, left) in meters from the floor position, seen from above.
const TEMPLATE: [(f64, f64); KEYPOINT_COUNT] = [
    (0.12, 0.0),    // nose
    (0.09, 0.035),  // left eye
    (0.09, -0.035), // right eye
    (0.0, 0.08),    // left ear
    (0.0, -0.08),   // right ear
    (0.0, 0.2),     // left shoulder
    (0.0, -0.2),    // right shoulder
    (0.15, 0.2),    // left elbow
    (0.15, -0.2),   // right elbow
    (0.38, 0.12),   // left wrist
    (0.38, -0.12),  // right wrist
    (-0.02, 0.12),  // left hip
    (-0.02, -0.12), // right hip
    (0.05, 0.11),   // left knee
    (0.05, -0.11),  // right knee
    (-0.02, 0.12),  // left ankle
    (-0.02, -0.12), // right ankle
    (0.02, 0.0),    // head
    (0.0, 0.0),     // neck
    (-0.02, 0.0),   // hip
    (0.06, 0.10),   // left big toe
    (0.06, -0.10),  // right big toe
    (0.02, 0.14),   // left small toe
    (0.02, -0.14),  // right small toe
    (-0.06, 0.12),  // left heel
    (-0.06, -0.12), // right heel
];

const HEAD: [usize; 5] = [halpe::NOSE, halpe::LEFT_EYE, halpe::RIGHT_EYE, halpe::LEFT_EAR, halpe::RIGHT_EAR];

fn body_point(pos: &Point, heading_deg: f64, scale: f64, offset: (f64, f64)) -> Point {
    let (s, c) = heading_deg.to_radians().sin_cos();
    let fwd = Vector::new(c, s);
    let left = Vector::new(-s, c);
    pos + fwd * (offset.0 * scale) + left * (offset.1 * scale)
}

/// Noise-free detection of an agent standing at `pos` facing `heading_deg`,
/// drawn through the map-to-image transform `camera`.
pub fn skeleton_detection(
    frame: u64,
    pos: &Point,
    heading_deg: f64,
    scale: f64,
    head_visible: bool,
    confidence: f64,
    camera: &Homography,
) -> Result<Detection, HomographyError> {
    let mut keypoints = Vec::with_capacity(KEYPOINT_COUNT);
    for (i, off) in TEMPLATE.iter().enumerate() {
        let p = camera.project(&body_point(pos, heading_deg, scale, *off))?;
        let conf = if !head_visible && HEAD.contains(&i) { 0.0 } else { confidence };
        keypoints.push(Keypoint::new(p.x, p.y, conf));
    }
    let r = BODY_HALF_WIDTH * scale;
    let corners = [(-r, -r), (r, -r), (r, r), (-r, r)]
        .iter()
        .map(|(dx, dy)| camera.project(&Point::new(pos.x + dx, pos.y + dy)))
        .collect::<Result<Vec<_>, _>>()?;
    let bbox = BBox::enclosing(&corners).expect("four corners");
    Ok(Detection { frame_index: frame, bbox, keypoints, track_hint: None })
}

fn perturb(det: &Detection, noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Detection {
    let mut out = det.clone();
    let kp = Normal::new(0.0, noise.keypoint_sigma).expect("finite sigma");
    let bb = Normal::new(0.0, noise.bbox_sigma).expect("finite sigma");
    for k in &mut out.keypoints {
        k.x += kp.sample(rng);
        k.y += kp.sample(rng);
        if rng.random::<f64>() < noise.dropout {
            k.confidence = 0.0;
        }
    }
    if rng.random::<f64>() < noise.foot_dropout {
        for i in halpe::FOOT {
            out.keypoints[i].confidence = 0.0;
        }
    }
    let b = &det.bbox;
    let (x1, y1, x2, y2) = (b.x1 + bb.sample(rng), b.y1 + bb.sample(rng), b.x2 + bb.sample(rng), b.y2 + bb.sample(rng));
    out.bbox = BBox::new(x1.min(x2 - 1.0), y1.min(y2 - 1.0), x2, y2);
    out
}

/// Render a script into a detection stream and its ground truth.
///
/// Image positions come from the inverse of the room's calibration homography.
/// The same seed always yields the same stream.
pub fn render_scenario(script: &ScenarioScript) -> Result<(FrameSequence, GroundTruth), ScenarioError> {
    script.validate()?;
    let room = script.room()?;
    let homography = estimate_homography(&room.calibration.pairs)?;
    let camera = homography.inverse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let fps = script.fps;
    let last_frame = script.last_frame();
    let noise = &script.noise;

    let mut agents: Vec<AgentTruth> = script
        .agents
        .iter()
        .map(|a| AgentTruth {
            id: a.id,
            role: a.role,
            scale: a.scale,
            head_visible: a.head_visible,
            samples: Vec::new(),
        })
        .collect();
    let mut seq = FrameSequence::empty(fps);
    let mut detection_agents = BTreeMap::new();
    for f in 0..=last_frame {
        let t = f as f64 / fps;
        let mut detections = Vec::new();
        let mut ids = Vec::new();
        for (a, truth) in script.agents.iter().zip(agents.iter_mut()) {
            if !a.present_at(t) {
                continue;
            }
            let position = a.position_at(t);
            let heading = a.heading_at(t);
            let clean = skeleton_detection(f, &position, heading, a.scale, a.head_visible, noise.confidence, &camera)?;
            let detected = !a.occluded_at(t, noise);
            let origin_map = body_point(&position, heading, a.scale, (0.09, 0.0));
            let eye = clean.keypoints[halpe::LEFT_EYE].point();
            let eye_r = clean.keypoints[halpe::RIGHT_EYE].point();
            let origin_px = Point::from((eye.coords + eye_r.coords) / 2.0);
            let ahead = camera.project(&body_point(&position, heading, a.scale, (1.09, 0.0)))?;
            truth.samples.push(TruthSample {
                frame: f,
                position,
                heading_deg: heading,
                detected,
                bbox: clean.bbox,
                gaze_origin_map: origin_map,
                gaze_origin_px: origin_px,
                gaze_direction_px: (ahead - origin_px).normalize(),
                wrists_px: [clean.keypoints[halpe::LEFT_WRIST].point(), clean.keypoints[halpe::RIGHT_WRIST].point()],
            });
            if detected {
                detections.push(perturb(&clean, noise, &mut rng));
                ids.push(a.id);
            }
        }
        if !detections.is_empty() {
            seq.frames.push(Frame { index: f, detections });
            detection_agents.insert(f, ids);
        }
    }
    let mut gt = GroundTruth {
        name: script.name.clone(),
        fps,
        last_frame,
        confidence: noise.confidence,
        homography,
        camera,
        agents,
        detection_agents,
        entries: Vec::new(),
    };
    gt.entries = oracle::oracle_entries(&gt, room);
    Ok((seq, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::foot_position;

    fn similarity() -> Homography {
        Homography::from([[150.0, 0.0, 100.0], [0.0, -150.0, 850.0], [0.0, 0.0, 1.0]])
    }

    #[test]
    fn foot_keypoints_average_to_the_floor_position() {
        let cam = similarity();
        for heading in [0.0, 37.0, 90.0, 211.0] {
            let pos = Point::new(2.3, 1.7);
            let det = skeleton_detection(0, &pos, heading, 1.0, true, 0.9, &cam).unwrap();
            let foot = foot_position(&det.keypoints, 0.3).unwrap();
            let expect = cam.project(&pos).unwrap();
            assert!((foot - expect).norm() < 1e-9, "heading {heading}");
            assert!((det.bbox.center() - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn hidden_head_zeroes_head_confidence() {
        let det = skeleton_detection(0, &Point::new(1.0, 1.0), 0.0, 1.0, false, 0.9, &similarity()).unwrap();
        assert!(HEAD.iter().all(|&i| det.keypoints[i].confidence == 0.0));
        assert_eq!(det.keypoints[halpe::LEFT_WRIST].confidence, 0.9);
    }
}
