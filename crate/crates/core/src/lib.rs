//! Analytics engine for room-clearing drills: detections in, tracked
//! identities, floor trajectories, gaze regions, metrics and roll-up scores out.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gaze;
pub mod geometry;
pub mod ingest;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rollup;
pub mod synthetic;
pub mod tracking;
