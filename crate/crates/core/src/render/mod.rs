//! Host-side engine: contact detection, visuotactile pairing, calibration
//! and study protocols.

pub mod calibration;
pub mod engine;
pub mod pose;
pub mod record;
pub mod study;

pub use calibration::{run_calibration, CalibrationMode, CalibrationResult, Calibrator, Response};
pub use engine::{DevicePolicy, EmittedPair, RenderConfig, Renderer, TactileAction};
pub use pose::{detect_events, ContactEvent, ContactFinger, ContactKind, EventDetector, HandPose, UIElement};
pub use record::{read_log, write_log, StudyKind, TrialCondition, TrialRecord};
pub use study::{run_study_protocol, simulate_participant, ProtocolConfig, StudyRun};
