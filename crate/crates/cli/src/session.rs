//! The console backend's state: one simulated device, the calibration
//! stepper, the trial plan and the records collected so far.
//!
//! Everything here is synchronous; the server owns a `Session` behind a
//! mutex and feeds it request lines and clock ticks.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tactwrist_core::handmap::HandMap;
use tactwrist_core::protocol::{self, Command, StreamDecoder};
use tactwrist_core::render::calibration::{CalibrationResult, CalibrationStatus, Calibrator, Response};
use tactwrist_core::render::record::{StudyKind, TrialCondition, TrialRecord, RECORD_SCHEMA};
use tactwrist_core::render::study::{participant_device_config, trial_order, FingerChannels, ProtocolConfig};
use tactwrist_core::render::DevicePolicy;
use tactwrist_core::safety::SafetyState;
use tactwrist_core::sim::perceiver::VIBRO_DURATION_MS;
use tactwrist_core::sim::{Device, DeviceConfig, SensationReport};

use crate::messages::{parse_request, CalAction, CalibrationView, ErrorCode, Reply, Request, SnapshotView, StatusView, TrialView};

/// Request ids remembered for replay.
pub const REPLAY_CACHE: usize = 64;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub study: StudyKind,
    pub participant: u32,
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub channels: FingerChannels,
    pub device: DeviceConfig,
    /// Where `console_log.jsonl`, `calibrations.jsonl` and
    /// `device_log.jsonl` go; nothing is written when `None`.
    pub out: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(study: StudyKind, participant: u32, seed: u64) -> Self {
        SessionConfig {
            study,
            participant,
            seed,
            protocol: ProtocolConfig::default(),
            channels: FingerChannels::default(),
            device: participant_device_config(participant, seed),
            out: None,
        }
    }
}

#[derive(Debug, Clone)]
struct ActiveCal {
    cal: Calibrator,
    view: CalibrationView,
    presented: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShutdownReport {
    pub state: SafetyState,
    pub frame_idle: bool,
    pub device_log: Option<PathBuf>,
}

pub struct Session {
    cfg: SessionConfig,
    device: Device,
    plan: Vec<TrialCondition>,
    next: usize,
    rng: ChaCha8Rng,
    cal: Option<ActiveCal>,
    calibrated: BTreeMap<u8, CalibrationResult>,
    pending: Option<TrialRecord>,
    records: Vec<TrialRecord>,
    replay: VecDeque<(String, Vec<String>)>,
    last_state: SafetyState,
}

fn trial_rng(cfg: &SessionConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ (cfg.participant as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F) ^ 0x5E55_1011)
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Self {
        let device = Device::new(cfg.device.clone());
        let plan = trial_order(cfg.study, cfg.protocol.policy, cfg.channels, cfg.participant, cfg.seed);
        Session {
            rng: trial_rng(&cfg),
            last_state: device.state(),
            device,
            plan,
            next: 0,
            cal: None,
            calibrated: BTreeMap::new(),
            pending: None,
            records: Vec::new(),
            replay: VecDeque::new(),
            cfg,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.device
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn plan(&self) -> &[TrialCondition] {
        &self.plan
    }

    pub fn status(&self) -> StatusView {
        StatusView::new(self.device.status(), self.device.channel(), self.device.now_ms())
    }

    /// STATUS to push if the safety state moved since the last push.
    pub fn state_change(&mut self) -> Option<Reply> {
        let s = self.device.state();
        (s != self.last_state).then(|| {
            self.last_state = s;
            Reply::Status(self.status())
        })
    }

    /// Advances the device clock; returns a STATUS push on state change.
    pub fn tick(&mut self, dt_ms: f64) -> Option<Reply> {
        if dt_ms > 0.0 {
            self.device.step(dt_ms);
        }
        self.state_change()
    }

    /// Handles one request line and returns the lines to send back.
    pub fn handle_line(&mut self, line: &str) -> Vec<String> {
        let (id, req) = parse_request(line);
        let key = id.as_ref().map(Value::to_string);
        if let Some(k) = &key {
            if let Some((_, lines)) = self.replay.iter().find(|(seen, _)| seen == k) {
                return lines.clone();
            }
        }
        let replies = match req {
            Ok(r) => self.handle(r),
            Err(e) => vec![Reply::error(ErrorCode::BadRequest, e)],
        };
        let lines: Vec<String> = replies.iter().map(|r| r.to_line(id.as_ref())).collect();
        if let Some(k) = key {
            if self.replay.len() == REPLAY_CACHE {
                self.replay.pop_front();
            }
            self.replay.push_back((k, lines.clone()));
        }
        let mut out = lines;
        out.extend(self.state_change().map(|s| s.to_line(None)));
        out
    }

    pub fn handle(&mut self, req: Request) -> Vec<Reply> {
        let wire = match req {
            Request::SetChannel { channel } => Some(Command::SetChannel { channel }),
            Request::SetIntensity { intensity_ua } => Some(Command::SetIntensity { intensity_ua }),
            Request::StimOnce => Some(Command::StimOnce),
            Request::StimTrain { count, gap_ms } => Some(Command::StimTrain { count, gap_ms }),
            Request::Stop => Some(Command::Stop),
            Request::QueryStatus => Some(Command::QueryStatus),
            Request::ResetLockout => Some(Command::ResetLockout),
            Request::Arm => Some(Command::Arm),
            Request::Disarm => Some(Command::Disarm),
            _ => None,
        };
        if let Some(cmd) = wire {
            return self.wire(cmd);
        }
        let r = match req {
            Request::Snapshot => Ok(Reply::Snapshot(Box::new(self.snapshot()))),
            Request::CalStart { finger, channel, mode } => {
                let channel = channel.unwrap_or(self.cfg.channels.get(finger));
                let mode = mode.unwrap_or(self.cfg.protocol.calibration_mode);
                match Calibrator::new(finger, channel, mode) {
                    Ok(cal) => {
                        let view = CalibrationView {
                            finger,
                            mode,
                            channel,
                            intensity_ua: 0,
                            presses: 0,
                        };
                        self.cal = Some(ActiveCal {
                            cal,
                            view: view.clone(),
                            presented: false,
                        });
                        Ok(Reply::Calibration(view))
                    }
                    Err(e) => Err(Reply::error(ErrorCode::Calibration, e.to_string())),
                }
            }
            Request::CalStep { action, channel } => self.cal_step(action, channel),
            Request::CalConfirm => self.cal_confirm(),
            Request::StartTrial => return self.start_trial(),
            Request::SubmitReport { report, nothing_felt } => self.submit(report, nothing_felt),
            _ => unreachable!("wire verbs handled above"),
        };
        vec![r.unwrap_or_else(|e| e)]
    }

    /// Sends a wire command over the byte link and decodes the reply.
    fn wire(&mut self, cmd: Command) -> Vec<Reply> {
        let bytes = match protocol::encode(&cmd) {
            Ok(b) => b,
            Err(e) => return vec![Reply::error(ErrorCode::BadRequest, e.to_string())],
        };
        let reply = self.device.receive_bytes(&bytes);
        let mut dec = StreamDecoder::new();
        dec.push(&reply)
            .into_iter()
            .map(|r| match r {
                Ok(Command::Ack { opcode }) => Reply::Ack { opcode },
                Ok(Command::Nak { opcode, reason }) => Reply::Nak { opcode, reason },
                Ok(Command::Status(s)) => Reply::Status(StatusView::new(s, self.device.channel(), self.device.now_ms())),
                Ok(other) => Reply::error(ErrorCode::BadRequest, format!("unexpected device reply {other:?}")),
                Err(e) => Reply::error(ErrorCode::BadRequest, format!("bad device reply: {e}")),
            })
            .collect()
    }

    /// Sends a command that must be acknowledged.
    fn send(&mut self, cmd: Command) -> Result<(), Reply> {
        match self.wire(cmd).pop() {
            Some(Reply::Ack { .. }) => Ok(()),
            Some(Reply::Nak { reason, .. }) => Err(Reply::error(ErrorCode::Refused, format!("device refused {cmd:?}: {reason:?}"))),
            Some(other) => Err(other),
            None => Err(Reply::error(ErrorCode::Refused, "no device reply")),
        }
    }

    /// Stimulation needs a quiet, armed device.
    fn ready_to_stimulate(&self) -> Result<(), Reply> {
        match self.device.state() {
            SafetyState::Armed if !self.device.is_busy() => Ok(()),
            s @ (SafetyState::Fault(_) | SafetyState::Lockout) => Err(Reply::error(ErrorCode::Interlock, format!("device is in {s}"))),
            SafetyState::Disarmed => Err(Reply::error(ErrorCode::NotArmed, "arm the device first")),
            _ => Err(Reply::error(ErrorCode::Refused, "device is still stimulating")),
        }
    }

    fn blocked(&self) -> Option<Reply> {
        match self.device.state() {
            s @ (SafetyState::Fault(_) | SafetyState::Lockout) => Some(Reply::error(ErrorCode::Interlock, format!("device is in {s}"))),
            _ => None,
        }
    }

    fn cal_step(&mut self, action: CalAction, channel: Option<u8>) -> Result<Reply, Reply> {
        if self.cal.is_none() {
            return Err(Reply::error(ErrorCode::Calibration, "no calibration in progress"));
        }
        if action != CalAction::Abort {
            if let Some(e) = self.blocked() {
                return Err(e);
            }
        }
        match action {
            CalAction::Up => {
                self.ready_to_stimulate()?;
                let active = self.cal.as_mut().expect("checked above");
                if active.presented {
                    active
                        .cal
                        .respond(Response::NotFelt)
                        .map_err(|e| Reply::error(ErrorCode::Calibration, e.to_string()))?;
                }
                let (channel, intensity_ua) = match active.cal.status() {
                    CalibrationStatus::Present { channel, intensity_ua } => (channel, intensity_ua),
                    CalibrationStatus::Failed { channel } => {
                        self.cal = None;
                        return Err(Reply::error(
                            ErrorCode::Calibration,
                            format!("no clear sensation on channel {channel} up to the 4 mA limit"),
                        ));
                    }
                    _ => return Err(Reply::error(ErrorCode::Calibration, "calibration already finished")),
                };
                active.presented = true;
                active.view.intensity_ua = intensity_ua;
                active.view.presses += 1;
                self.send(Command::SetChannel { channel })?;
                self.send(Command::SetIntensity { intensity_ua })?;
                self.send(Command::StimOnce)?;
                self.device.run_until_idle();
            }
            CalAction::SwitchChannel => {
                let ch = channel.ok_or_else(|| Reply::error(ErrorCode::BadRequest, "switch_channel needs a channel"))?;
                let active = self.cal.as_mut().expect("checked above");
                active
                    .cal
                    .respond(Response::SwitchChannel { channel: ch })
                    .map_err(|e| Reply::error(ErrorCode::Calibration, e.to_string()))?;
                active.presented = false;
                active.view.channel = ch;
                active.view.intensity_ua = 0;
                active.view.presses = 0;
            }
            CalAction::Abort => {
                let active = self.cal.take().expect("checked above");
                return Ok(Reply::Calibration(CalibrationView {
                    intensity_ua: 0,
                    presses: 0,
                    ..active.view
                }));
            }
        }
        Ok(Reply::Calibration(self.cal.as_ref().expect("still active").view.clone()))
    }

    fn cal_confirm(&mut self) -> Result<Reply, Reply> {
        let active = self
            .cal
            .as_mut()
            .ok_or_else(|| Reply::error(ErrorCode::Calibration, "no calibration in progress"))?;
        if !active.presented {
            return Err(Reply::error(ErrorCode::Calibration, "no stimulus presented yet"));
        }
        let status = active
            .cal
            .respond(Response::Felt)
            .map_err(|e| Reply::error(ErrorCode::Calibration, e.to_string()))?;
        let CalibrationStatus::Done(result) = status else {
            return Err(Reply::error(ErrorCode::Calibration, "calibration did not finish"));
        };
        self.cal = None;
        self.calibrated.insert(result.channel, result);
        self.append("calibrations.jsonl", &serde_json::to_string(&result).expect("serializes"));
        Ok(Reply::Calibrated { result })
    }

    fn trial_view(&self, rec: &TrialRecord) -> TrialView {
        TrialView {
            trial: rec.trial,
            of: self.plan.len() as u32,
            condition: rec.condition,
            intensity_ua: rec.intensity_ua,
            stim_start_ms: rec.stim_start_ms,
            stim_end_ms: rec.stim_end_ms,
        }
    }

    /// Runs the next planned trial in simulated time and waits for a report.
    fn start_trial(&mut self) -> Vec<Reply> {
        if self.pending.is_some() {
            return vec![Reply::error(ErrorCode::TrialPending, "submit a report for the current trial first")];
        }
        let Some(&condition) = self.plan.get(self.next) else {
            return vec![Reply::error(ErrorCode::PlanFinished, "all planned trials are done")];
        };
        let electro = condition.policy == DevicePolicy::Electro;
        let mut intensity_ua = 0;
        if let (true, Some(ch)) = (electro, condition.channel) {
            match self.calibrated.get(&ch) {
                Some(c) => intensity_ua = c.intensity_ua,
                None => return vec![Reply::error(ErrorCode::NoCalibration, format!("calibrate channel {ch} first"))],
            }
            if let Err(e) = self.ready_to_stimulate() {
                return vec![e];
            }
        }
        let seed: u64 = self.rng.random();
        let p = &self.cfg.protocol;
        let wait_ms = p.wait_min_ms + self.rng.random::<f64>() * (p.wait_max_ms - p.wait_min_ms);
        let (count, gap) = (p.train_count, p.train_gap_ms);
        let mut rec = TrialRecord {
            schema: RECORD_SCHEMA,
            participant: self.cfg.participant,
            study: self.cfg.study,
            trial: self.next as u32,
            condition,
            intensity_ua,
            report: None,
            wait_ms,
            stim_start_ms: 0.0,
            stim_end_ms: 0.0,
            seed,
            aborted: false,
        };
        self.next += 1;
        if wait_ms > 0.0 {
            self.device.step(wait_ms);
        }
        rec.stim_start_ms = self.device.now_ms();
        let played = match (electro, condition.channel) {
            (true, Some(channel)) => self
                .ready_to_stimulate()
                .and_then(|_| self.send(Command::SetChannel { channel }))
                .and_then(|_| self.send(Command::SetIntensity { intensity_ua }))
                .and_then(|_| self.send(Command::StimTrain { count, gap_ms: gap }))
                .map(|_| {
                    self.device.run_until_idle();
                })
                .and_then(|_| self.blocked().map_or(Ok(()), Err)),
            _ => {
                for n in 0..count {
                    self.device.vibrate(VIBRO_DURATION_MS);
                    self.device.step(VIBRO_DURATION_MS);
                    if n + 1 < count && gap > 0 {
                        self.device.step(gap as f64);
                    }
                }
                Ok(())
            }
        };
        rec.stim_end_ms = self.device.now_ms();
        match played {
            Ok(()) => {
                let view = self.trial_view(&rec);
                self.pending = Some(rec);
                vec![Reply::Trial(view)]
            }
            Err(e) => {
                rec.aborted = true;
                self.commit(rec.clone());
                vec![Reply::Record { record: rec }, e]
            }
        }
    }

    fn submit(&mut self, report: Option<SensationReport>, nothing_felt: bool) -> Result<Reply, Reply> {
        if self.pending.is_none() {
            return Err(Reply::error(ErrorCode::NoTrial, "no trial is waiting for a report"));
        }
        let invalid = |m: String| Reply::error(ErrorCode::InvalidReport, m);
        let report = match (report, nothing_felt) {
            (Some(_), true) => return Err(invalid("send either a report or nothing_felt, not both".into())),
            (None, false) => return Err(invalid("a report (or nothing_felt) is required".into())),
            (None, true) => None,
            (Some(r), false) => {
                HandMap::bundled().check_dims(&r.area_mask).map_err(|e| invalid(e.to_string()))?;
                r.validate().map_err(|e| invalid(e.to_string()))?;
                Some(r)
            }
        };
        let mut rec = self.pending.take().expect("checked above");
        rec.report = report;
        self.commit(rec.clone());
        Ok(Reply::Record { record: rec })
    }

    fn commit(&mut self, rec: TrialRecord) {
        self.append("console_log.jsonl", &rec.to_line());
        self.records.push(rec);
    }

    fn append(&self, file: &str, line: &str) {
        let Some(dir) = &self.cfg.out else { return };
        let path = dir.join(file);
        let r = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| writeln!(f, "{}", line.trim_end()));
        if let Err(e) = r {
            eprintln!("warning: could not append to {}: {e}", path.display());
        }
    }

    pub fn snapshot(&self) -> SnapshotView {
        SnapshotView {
            study: self.cfg.study,
            participant: self.cfg.participant,
            status: self.status(),
            calibration: self.cal.as_ref().map(|c| c.view.clone()),
            calibrated: self.calibrated.values().copied().collect(),
            trial: self.pending.as_ref().map(|r| self.trial_view(r)),
            next_trial: self.next as u32,
            planned_trials: self.plan.len() as u32,
            records: self.records.clone(),
        }
    }

    /// STOP, then back to Disarmed with every relay open; writes the device
    /// log when an output directory is set.
    pub fn shutdown(&mut self) -> ShutdownReport {
        let state = crate::run::teardown(&mut self.device);
        let device_log = self.cfg.out.as_ref().map(|d| d.join("device_log.jsonl"));
        if let Some(p) = &device_log {
            if let Err(e) = std::fs::write(p, self.device.log_lines()) {
                eprintln!("warning: could not write {}: {e}", p.display());
            }
        }
        ShutdownReport {
            state,
            frame_idle: self.device.current_frame().is_idle(),
            device_log,
        }
    }
}
