//! `run`: simulated study sessions written as TrialRecord logs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use tactwrist_core::protocol::Command;
use tactwrist_core::render::record::{write_log, StudyKind, TrialRecord};
use tactwrist_core::render::study::{participant_device_config, run_study_protocol, ProtocolConfig, SimulatedParticipant};
use tactwrist_core::render::CalibrationResult;
use tactwrist_core::safety::SafetyState;
use tactwrist_core::sim::{Device, PerceiverModel, ScheduledFault};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Studies {
    Study1,
    Study2,
    Both,
}

impl Studies {
    fn includes(self, k: StudyKind) -> bool {
        matches!(
            (self, k),
            (Studies::Both, _) | (Studies::Study1, StudyKind::Study1) | (Studies::Study2, StudyKind::Study2)
        )
    }
}

impl std::str::FromStr for Studies {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "study1" => Ok(Studies::Study1),
            "study2" => Ok(Studies::Study2),
            "both" => Ok(Studies::Both),
            _ => Err(format!("unknown study {s:?} (study1|study2|both)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub studies: Studies,
    pub seed: u64,
    pub participants: Vec<u32>,
    pub perceiver: PerceiverModel,
    pub protocol: ProtocolConfig,
    /// Study1 records used for study2 channel selection when study1 is not
    /// part of this run.
    pub prior: Vec<TrialRecord>,
    /// Scripted overcurrent reading, in simulated ms from session start.
    pub inject_overcurrent_ms: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub study1: Vec<TrialRecord>,
    pub study2: Vec<TrialRecord>,
    pub calibrations: Vec<CalibrationResult>,
    /// `(participant, reason)` of the session that stopped the run.
    pub abort: Option<(u32, String)>,
    /// Device state of every participant after teardown.
    pub final_states: Vec<SafetyState>,
}

impl RunOutcome {
    pub fn records(&self, k: StudyKind) -> &[TrialRecord] {
        match k {
            StudyKind::Study1 => &self.study1,
            StudyKind::Study2 => &self.study2,
        }
    }
}

/// Returns the device to Disarmed whatever happened. A latched lockout is
/// released here because the process is about to exit and the simulated
/// device goes with it; the log still records the lockout.
pub fn teardown(device: &mut Device) -> SafetyState {
    device.handle(Command::Stop);
    if device.state() == SafetyState::Lockout {
        device.handle(Command::ResetLockout);
    }
    device.handle(Command::Disarm);
    device.state()
}

pub fn run_studies(opts: &RunOptions) -> RunOutcome {
    let mut out = RunOutcome::default();
    for &p in &opts.participants {
        let mut cfg = participant_device_config(p, opts.seed);
        if let Some(at) = opts.inject_overcurrent_ms {
            cfg.faults.push(ScheduledFault::overcurrent(at));
        }
        let mut device = Device::new(cfg);
        let mut who = SimulatedParticipant {
            model: opts.perceiver.participant(p, opts.seed),
        };
        let mut prior: Vec<TrialRecord> = opts.prior.iter().filter(|r| r.participant == p).cloned().collect();
        for kind in [StudyKind::Study1, StudyKind::Study2] {
            if !opts.studies.includes(kind) {
                continue;
            }
            let run = run_study_protocol(kind, p, opts.seed, &opts.protocol, &mut device, &mut who, &prior);
            if kind == StudyKind::Study1 {
                prior = run.records.clone();
                out.study1.extend(run.records);
            } else {
                out.study2.extend(run.records);
            }
            out.calibrations.extend(run.calibrations);
            if let Some(reason) = run.abort_reason {
                out.abort = Some((p, reason));
                break;
            }
        }
        out.final_states.push(teardown(&mut device));
        if out.abort.is_some() {
            break;
        }
    }
    out
}

/// Writes one log per study that ran, plus calibrations. Returns the paths.
pub fn write_outputs(opts: &RunOptions, outcome: &RunOutcome, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::new();
    for kind in [StudyKind::Study1, StudyKind::Study2] {
        if !opts.studies.includes(kind) {
            continue;
        }
        let path = dir.join(format!("{kind}.jsonl"));
        std::fs::write(&path, write_log(outcome.records(kind))).with_context(|| format!("writing {}", path.display()))?;
        paths.push(path);
    }
    let mut cal = String::new();
    for c in &outcome.calibrations {
        cal.push_str(&serde_json::to_string(c)?);
        cal.push('\n');
    }
    let path = dir.join("calibrations.jsonl");
    std::fs::write(&path, cal)?;
    paths.push(path);
    Ok(paths)
}
