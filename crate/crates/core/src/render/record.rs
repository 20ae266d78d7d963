//! Trial records and the line-delimited session log.
//!
//! Each line of a log is one JSON object:
//!
//! ```text
//! {"schema":1,"participant":0,"study":"study1","trial":0,
//!  "condition":{"policy":"electro","channel":5,"visual_size":null,
//!               "opacity":null,"target_finger":null},
//!  "intensity_ua":700,"report":{"area_mask":{"width":60,"height":90,"runs":[...]},
//!  "strongest_point":{"x":12,"y":55},"quality":"tapping"},
//!  "wait_ms":1834.2,"stim_start_ms":..., "stim_end_ms":..., "seed":..., "aborted":false}
//! ```
//!
//! `report` is `null` when nothing was felt.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use super::engine::DevicePolicy;
use crate::effects::{EffectSize, Opacity, TargetFinger, VisualCondition, VisualEffect};
use crate::sim::perceiver::SensationReport;

pub const RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Study1,
    Study2,
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyKind::Study1 => "study1",
            StudyKind::Study2 => "study2",
        })
    }
}

impl FromStr for StudyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "study1" => Ok(StudyKind::Study1),
            "study2" => Ok(StudyKind::Study2),
            _ => Err(format!("unknown study {s:?} (study1|study2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialCondition {
    pub policy: DevicePolicy,
    pub channel: Option<u8>,
    pub visual_size: Option<EffectSize>,
    pub opacity: Option<Opacity>,
    pub target_finger: Option<TargetFinger>,
}

impl TrialCondition {
    pub fn visual(&self) -> Option<VisualCondition> {
        Some(VisualCondition {
            size: self.visual_size?,
            opacity: self.opacity?,
        })
    }

    pub fn visual_effect(&self) -> Option<VisualEffect> {
        Some(VisualEffect::from_condition(self.visual()?, self.target_finger?))
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(c) = self.channel {
            if !(1..=15).contains(&c) {
                return Err(format!("channel {c} outside 1..=15"));
            }
        }
        if self.visual_size.is_some() != self.opacity.is_some() {
            return Err("visual size and opacity must be given together".into());
        }
        if self.visual_size.is_some() && self.target_finger.is_none() {
            return Err("a visual condition needs a target finger".into());
        }
        if self.policy == DevicePolicy::Electro && self.channel.is_none() {
            return Err("electro trials need a channel".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: u32,
    pub participant: u32,
    pub study: StudyKind,
    pub trial: u32,
    pub condition: TrialCondition,
    pub intensity_ua: u16,
    pub report: Option<SensationReport>,
    pub wait_ms: f64,
    pub stim_start_ms: f64,
    pub stim_end_ms: f64,
    pub seed: u64,
    pub aborted: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("log is empty")]
    Empty,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

impl TrialRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema != RECORD_SCHEMA {
            return Err(format!("unsupported schema {}", self.schema));
        }
        self.condition.validate()?;
        if let Some(r) = &self.report {
            r.validate().map_err(|e| e.to_string())?;
        }
        if self.intensity_ua > crate::protocol::MAX_INTENSITY_UA {
            return Err(format!("intensity {} uA over limit", self.intensity_ua));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trial records serialize")
    }
}

pub fn write_log(records: &[TrialRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses and validates a log; blank lines are skipped.
pub fn read_log(text: &str) -> Result<Vec<TrialRecord>, LogError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| LogError::Line { line: n + 1, reason };
        let rec: TrialRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        rec.validate().map_err(bad)?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(out)
}
