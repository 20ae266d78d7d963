//! Threshold calibration: 0.1 mA staircase, ascending only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::TargetFinger;
use crate::protocol::MAX_INTENSITY_UA;

pub const CAL_START_UA: u16 = 100;
pub const CAL_STEP_UA: u16 = 100;
pub const MAX_CAL_STEPS: u32 = (MAX_INTENSITY_UA / CAL_STEP_UA) as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Result is the first intensity reported as clear.
    Threshold,
    /// One step above the first clear intensity.
    ThresholdPlusStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub finger: TargetFinger,
    pub channel: u8,
    pub intensity_ua: u16,
    /// Stimuli presented on the final channel.
    pub steps: u32,
}

impl CalibrationResult {
    pub fn intensity_ma(&self) -> f64 {
        self.intensity_ua as f64 / 1000.0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalibrationError {
    #[error("no clear sensation on channel {channel} up to {MAX_INTENSITY_UA} uA")]
    Failed { channel: u8 },
    #[error("calibration aborted")]
    Aborted,
    #[error("calibration already finished")]
    Finished,
    #[error("channel {0} is not a stimulation channel")]
    BadChannel(u8),
}

/// Operator answer after each presented stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "response", rename_all = "snake_case")]
pub enum Response {
    Felt,
    NotFelt,
    SwitchChannel { channel: u8 },
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CalibrationStatus {
    /// Present a stimulus at this intensity, then answer.
    Present { channel: u8, intensity_ua: u16 },
    Done(CalibrationResult),
    Failed { channel: u8 },
    Aborted,
}

#[derive(Debug, Clone)]
pub struct Calibrator {
    finger: TargetFinger,
    mode: CalibrationMode,
    channel: u8,
    intensity_ua: u16,
    steps: u32,
    status: CalibrationStatus,
}

impl Calibrator {
    pub fn new(finger: TargetFinger, channel: u8, mode: CalibrationMode) -> Result<Self, CalibrationError> {
        if !(1..=15).contains(&channel) {
            return Err(CalibrationError::BadChannel(channel));
        }
        Ok(Calibrator {
            finger,
            mode,
            channel,
            intensity_ua: CAL_START_UA,
            steps: 1,
            status: CalibrationStatus::Present {
                channel,
                intensity_ua: CAL_START_UA,
            },
        })
    }

    pub fn status(&self) -> CalibrationStatus {
        self.status
    }

    pub fn channel(&self) -> u8 {
        self.channel
    }

    pub fn intensity_ua(&self) -> u16 {
        self.intensity_ua
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn respond(&mut self, r: Response) -> Result<CalibrationStatus, CalibrationError> {
        if !matches!(self.status, CalibrationStatus::Present { .. }) {
            return Err(CalibrationError::Finished);
        }
        self.status = match r {
            Response::Felt => {
                let bonus = match self.mode {
                    CalibrationMode::Threshold => 0,
                    CalibrationMode::ThresholdPlusStep => CAL_STEP_UA,
                };
                CalibrationStatus::Done(CalibrationResult {
                    finger: self.finger,
                    channel: self.channel,
                    intensity_ua: (self.intensity_ua + bonus).min(MAX_INTENSITY_UA),
                    steps: self.steps,
                })
            }
            Response::NotFelt => {
                let next = self.intensity_ua + CAL_STEP_UA;
                if next > MAX_INTENSITY_UA {
                    CalibrationStatus::Failed { channel: self.channel }
                } else {
                    self.intensity_ua = next;
                    self.steps += 1;
                    CalibrationStatus::Present {
                        channel: self.channel,
                        intensity_ua: next,
                    }
                }
            }
            Response::SwitchChannel { channel } => {
                if !(1..=15).contains(&channel) {
                    return Err(CalibrationError::BadChannel(channel));
                }
                self.channel = channel;
                self.intensity_ua = CAL_START_UA;
                self.steps = 1;
                CalibrationStatus::Present {
                    channel,
                    intensity_ua: CAL_START_UA,
                }
            }
            Response::Abort => CalibrationStatus::Aborted,
        };
        Ok(self.status)
    }
}

/// Drives a calibrator to completion. `present` is called once per stimulus
/// and returns the operator's answer.
pub fn run_calibration(
    finger: TargetFinger,
    channel: u8,
    mode: CalibrationMode,
    mut present: impl FnMut(u8, u16) -> Response,
) -> Result<CalibrationResult, CalibrationError> {
    let mut cal = Calibrator::new(finger, channel, mode)?;
    loop {
        match cal.status() {
            CalibrationStatus::Present { channel, intensity_ua } => {
                cal.respond(present(channel, intensity_ua))?;
            }
            CalibrationStatus::Done(r) => return Ok(r),
            CalibrationStatus::Failed { channel } => return Err(CalibrationError::Failed { channel }),
            CalibrationStatus::Aborted => return Err(CalibrationError::Aborted),
        }
    }
}

/// Responder that reports a clear sensation at or above `threshold_ma`.
pub fn threshold_responder(threshold_ma: f64) -> impl FnMut(u8, u16) -> Response {
    move |_, ua| {
        if ua as f64 / 1000.0 >= threshold_ma {
            Response::Felt
        } else {
            Response::NotFelt
        }
    }
}
