use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Point};

/// Number of keypoints in the Halpe26 skeleton.
pub const KEYPOINT_COUNT: usize = 26;

/// Halpe26 keypoint indices (AlphaPose ordering).
pub mod halpe {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
    pub const HEAD: usize = 17;
    pub const NECK: usize = 18;
    pub const HIP: usize = 19;
    pub const LEFT_BIG_TOE: usize = 20;
    pub const RIGHT_BIG_TOE: usize = 21;
    pub const LEFT_SMALL_TOE: usize = 22;
    pub const RIGHT_SMALL_TOE: usize = 23;
    pub const LEFT_HEEL: usize = 24;
    pub const RIGHT_HEEL: usize = 25;

    /// Ankles, big toes, small toes and heels.
    pub const FOOT: [usize; 8] =
        [LEFT_ANKLE, RIGHT_ANKLE, LEFT_BIG_TOE, RIGHT_BIG_TOE, LEFT_SMALL_TOE, RIGHT_SMALL_TOE, LEFT_HEEL, RIGHT_HEEL];
    pub const EYES: [usize; 2] = [LEFT_EYE, RIGHT_EYE];
    pub const EARS: [usize; 2] = [LEFT_EAR, RIGHT_EAR];
    pub const WRISTS: [usize; 2] = [LEFT_WRIST, RIGHT_WRIST];

    pub fn is_foot(i: usize) -> bool {
        FOOT.contains(&i)
    }
}

/// One skeletal keypoint, serialized as `[x, y, confidence]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl From<[f64; 3]> for Keypoint {
    fn from(v: [f64; 3]) -> Self {
        Keypoint { x: v[0], y: v[1], confidence: v[2] }
    }
}

impl From<Keypoint> for [f64; 3] {
    fn from(k: Keypoint) -> Self {
        [k.x, k.y, k.confidence]
    }
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn is_well_formed(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && (0.0..=1.0).contains(&self.confidence)
    }
}

/// True iff the keypoint is finite and its confidence reaches `threshold` (inclusive).
pub fn validate_keypoint(k: &Keypoint, threshold: f64) -> bool {
    k.x.is_finite() && k.y.is_finite() && k.confidence >= threshold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub bbox: BBox,
    pub keypoints: Vec<Keypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_hint: Option<u64>,
}

impl Detection {
    pub fn keypoint(&self, index: usize) -> &Keypoint {
        &self.keypoints[index]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    pub detections: Vec<Detection>,
}

/// Detections grouped by frame, frame indices strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub fps: f64,
}

impl FrameSequence {
    pub fn empty(fps: f64) -> Self {
        Self { frames: Vec::new(), fps }
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.detections.len()).sum()
    }

    pub fn frame(&self, index: u64) -> Option<&Frame> {
        self.frames.binary_search_by_key(&index, |f| f.index).ok().map(|i| &self.frames[i])
    }

    pub fn last_frame_index(&self) -> Option<u64> {
        self.frames.last().map(|f| f.index)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: frame index {frame} follows frame {previous}")]
    NonMonotonicFrameIndex { line: usize, frame: u64, previous: u64 },
    #[error("line {line}: expected {KEYPOINT_COUNT} keypoints, found {found}")]
    WrongKeypointCount { line: usize, found: usize },
    #[error("frame rate must be positive, got {0}")]
    InvalidFrameRate(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse a line-delimited JSON detection stream.
///
/// Blank lines are skipped. Detections keep their stream order inside each frame.
pub fn parse_frames<R: BufRead>(reader: R, fps: f64) -> Result<FrameSequence, IngestError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(IngestError::InvalidFrameRate(fps));
    }
    let mut seq = FrameSequence::empty(fps);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let det = parse_record(&line, line_no)?;
        match seq.frames.last_mut() {
            Some(last) if last.index == det.frame_index => last.detections.push(det),
            Some(last) if last.index > det.frame_index => {
                return Err(IngestError::NonMonotonicFrameIndex {
                    line: line_no,
                    frame: det.frame_index,
                    previous: last.index,
                })
            }
            _ => seq.frames.push(Frame { index: det.frame_index, detections: vec![det] }),
        }
    }
    Ok(seq)
}

fn parse_record(line: &str, line_no: usize) -> Result<Detection, IngestError> {
    let malformed = |message: String| IngestError::MalformedRecord { line: line_no, message };
    // Check the keypoint count on the raw value first so a short skeleton is
    // reported as such rather than as a generic decode failure.
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if let Some(kps) = value.get("keypoints").and_then(|k| k.as_array()) {
        if kps.len() != KEYPOINT_COUNT {
            return Err(IngestError::WrongKeypointCount { line: line_no, found: kps.len() });
        }
    }
    let det: Detection = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if !det.bbox.is_valid() {
        return Err(malformed(format!("invalid bbox {:?}", <[f64; 4]>::from(det.bbox))));
    }
    if let Some((k, _)) = det.keypoints.iter().enumerate().find(|(_, k)| !k.is_well_formed()) {
        return Err(malformed(format!("keypoint {k} is not finite or confidence outside [0,1]")));
    }
    Ok(det)
}

/// Write a sequence back out in the stream format, one detection per line.
pub fn write_frames<W: Write>(seq: &FrameSequence, mut out: W) -> std::io::Result<()> {
    for frame in &seq.frames {
        for det in &frame.detections {
            serde_json::to_writer(&mut out, det)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
