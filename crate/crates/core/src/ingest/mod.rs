//! Detection-stream and room-configuration input.

mod room;
mod stream;

pub use room::{
    load_room_config, parse_room_config, Calibration, CalibrationPair, ConfigError, EntryZone, RoomConfig, Units,
};
pub use stream::{
    halpe, parse_frames, validate_keypoint, write_frames, Detection, Frame, FrameSequence, IngestError, Keypoint,
    KEYPOINT_COUNT,
};

#[cfg(test)]
pub(crate) use room::tests::minimal_config_json;
