//! Console protocol: one JSON object per line in each direction.
//!
//! Requests carry a `type` and may carry an `id`. A request whose `id` was
//! seen recently is not executed again; the earlier replies are resent.
//! Every reply to a request echoes its `id`. Unsolicited STATUS messages
//! (pushed on safety state changes) carry no `id`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tactwrist_core::effects::TargetFinger;
use tactwrist_core::protocol::{NakReason, StatusReport};
use tactwrist_core::render::calibration::{CalibrationMode, CalibrationResult};
use tactwrist_core::render::record::{StudyKind, TrialCondition, TrialRecord};
use tactwrist_core::sim::SensationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalAction {
    /// Present the next 0.1 mA step.
    Up,
    SwitchChannel,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Request {
    SetChannel { channel: u8 },
    SetIntensity { intensity_ua: u16 },
    StimOnce,
    StimTrain { count: u16, gap_ms: u16 },
    Stop,
    QueryStatus,
    ResetLockout,
    Arm,
    Disarm,
    Snapshot,
    CalStart {
        finger: TargetFinger,
        #[serde(default)]
        channel: Option<u8>,
        #[serde(default)]
        mode: Option<CalibrationMode>,
    },
    CalStep {
        action: CalAction,
        #[serde(default)]
        channel: Option<u8>,
    },
    CalConfirm,
    StartTrial,
    SubmitReport {
        #[serde(default)]
        report: Option<SensationReport>,
        #[serde(default)]
        nothing_felt: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Unparseable or unknown request.
    BadRequest,
    /// Another console already holds the session.
    Busy,
    /// Device is in Fault or Lockout.
    Interlock,
    NotArmed,
    /// The device refused a command (the NAK reason is in the message).
    Refused,
    NoCalibration,
    Calibration,
    NoTrial,
    TrialPending,
    PlanFinished,
    InvalidReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    /// `disarmed`, `armed`, `stimulating`, `fault(open_circuit)`,
    /// `fault(short)` or `lockout`.
    pub state: String,
    pub resistance_kohm: Option<f64>,
    pub intensity_ua: u16,
    pub channel: Option<u8>,
    /// Simulated device clock.
    pub t_ms: f64,
    /// True when stepping controls must be disabled.
    pub stepping_blocked: bool,
}

impl StatusView {
    pub fn new(s: StatusReport, channel: Option<u8>, t_ms: f64) -> Self {
        use tactwrist_core::safety::SafetyState;
        StatusView {
            state: s.state.to_string(),
            resistance_kohm: s.resistance_kohm(),
            intensity_ua: s.intensity_ua,
            channel,
            t_ms,
            stepping_blocked: matches!(s.state, SafetyState::Fault(_) | SafetyState::Lockout),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationView {
    pub finger: TargetFinger,
    pub mode: CalibrationMode,
    pub channel: u8,
    /// Last presented intensity; 0 before the first press.
    pub intensity_ua: u16,
    pub presses: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial: u32,
    pub of: u32,
    pub condition: TrialCondition,
    pub intensity_ua: u16,
    pub stim_start_ms: f64,
    pub stim_end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Reply {
    Status(StatusView),
    Ack { opcode: u8 },
    Nak { opcode: u8, reason: NakReason },
    Calibration(CalibrationView),
    Calibrated { result: CalibrationResult },
    Trial(TrialView),
    Record { record: TrialRecord },
    Snapshot(Box<SnapshotView>),
    Error { code: ErrorCode, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotView {
    pub study: StudyKind,
    pub participant: u32,
    pub status: StatusView,
    pub calibration: Option<CalibrationView>,
    pub calibrated: Vec<CalibrationResult>,
    /// Trial awaiting a report.
    pub trial: Option<TrialView>,
    pub next_trial: u32,
    pub planned_trials: u32,
    pub records: Vec<TrialRecord>,
}

impl Reply {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Reply::Error {
            code,
            message: message.into(),
        }
    }

    /// One protocol line (without the newline), echoing `id` when given.
    pub fn to_line(&self, id: Option<&Value>) -> String {
        let mut v = serde_json::to_value(self).expect("replies serialize");
        if let (Some(id), Value::Object(m)) = (id, &mut v) {
            m.insert("id".into(), id.clone());
        }
        v.to_string()
    }
}

/// Parses one request line into its optional `id` and the request.
pub fn parse_request(line: &str) -> (Option<Value>, Result<Request, String>) {
    let mut v: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return (None, Err(format!("not JSON: {e}"))),
    };
    let id = match &mut v {
        Value::Object(m) => m.remove("id"),
        _ => return (None, Err("request must be a JSON object".into())),
    };
    let id = id.filter(|i| !i.is_null());
    (id, serde_json::from_value(v).map_err(|e| e.to_string()))
}
