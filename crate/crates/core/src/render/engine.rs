//! Pairs each contact event with a stimulus and a visual highlight.
//!
//! Commands are released on a fixed scheduler tick. Both halves of a pair get
//! the same scheduled start: the first tick at or after the triggering pose.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use super::calibration::CalibrationResult;
use super::pose::{ContactEvent, ContactFinger};
use crate::effects::{TargetFinger, VisualCondition, VisualEffect};
use crate::protocol::Command;
use crate::sim::perceiver::{VIBRO_DURATION_MS, VIBRO_FREQUENCY_HZ};

pub const SCHEDULER_TICK_MS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevicePolicy {
    #[default]
    Electro,
    Vibro,
}

impl fmt::Display for DevicePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DevicePolicy::Electro => "electro",
            DevicePolicy::Vibro => "vibro",
        })
    }
}

impl FromStr for DevicePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "electro" => Ok(DevicePolicy::Electro),
            "vibro" => Ok(DevicePolicy::Vibro),
            _ => Err(format!("unknown policy {s:?} (electro|vibro)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TactileAction {
    /// Wire commands for one 45 ms stimulus.
    Electro { commands: Vec<Command> },
    Vibro { frequency_hz: f64, duration_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedPair {
    pub trigger: ContactEvent,
    pub finger: TargetFinger,
    pub stim_start_ms: f64,
    pub tactile: TactileAction,
    pub visual_start_ms: f64,
    pub visual: Option<VisualEffect>,
}

impl EmittedPair {
    pub fn lag_ms(&self) -> f64 {
        self.stim_start_ms - self.trigger.timestamp_ms
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("{0} is not calibrated; run calibration for it first")]
    Uncalibrated(TargetFinger),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub policy: DevicePolicy,
    /// `None` renders touch feedback without a highlight.
    pub visual: Option<VisualCondition>,
    /// Finger whose channel answers pinch gestures.
    pub pinch_finger: TargetFinger,
    pub tick_ms: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            policy: DevicePolicy::Electro,
            visual: None,
            pinch_finger: TargetFinger::Thumb,
            tick_ms: SCHEDULER_TICK_MS,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Renderer {
    config: RenderConfig,
    calibration: BTreeMap<TargetFinger, CalibrationResult>,
}

impl Renderer {
    pub fn new(config: RenderConfig) -> Self {
        Renderer {
            config,
            calibration: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    pub fn set_calibration(&mut self, result: CalibrationResult) {
        self.calibration.insert(result.finger, result);
    }

    pub fn calibration(&self, finger: TargetFinger) -> Option<&CalibrationResult> {
        self.calibration.get(&finger)
    }

    pub fn finger_for(&self, f: ContactFinger) -> TargetFinger {
        match f {
            ContactFinger::Thumb => TargetFinger::Thumb,
            ContactFinger::Index => TargetFinger::Index,
            ContactFinger::Pinch => self.config.pinch_finger,
        }
    }

    /// First scheduler tick at or after `t_ms`.
    pub fn schedule_time(&self, t_ms: f64) -> f64 {
        (t_ms / self.config.tick_ms).ceil() * self.config.tick_ms
    }

    pub fn on_event(&self, e: &ContactEvent) -> Result<EmittedPair, RenderError> {
        let finger = self.finger_for(e.finger);
        let tactile = match self.config.policy {
            DevicePolicy::Electro => {
                let cal = self.calibration.get(&finger).ok_or(RenderError::Uncalibrated(finger))?;
                TactileAction::Electro {
                    commands: vec![
                        Command::SetChannel { channel: cal.channel },
                        Command::SetIntensity {
                            intensity_ua: cal.intensity_ua,
                        },
                        Command::StimOnce,
                    ],
                }
            }
            DevicePolicy::Vibro => TactileAction::Vibro {
                frequency_hz: VIBRO_FREQUENCY_HZ,
                duration_ms: VIBRO_DURATION_MS,
            },
        };
        let start = self.schedule_time(e.timestamp_ms);
        Ok(EmittedPair {
            trigger: e.clone(),
            finger,
            stim_start_ms: start,
            tactile,
            visual_start_ms: start,
            visual: self.config.visual.map(|c| VisualEffect::from_condition(c, finger)),
        })
    }

    pub fn render_all(&self, events: &[ContactEvent]) -> Result<Vec<EmittedPair>, RenderError> {
        events.iter().map(|e| self.on_event(e)).collect()
    }
}
