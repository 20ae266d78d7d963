//! Study protocols.
//!
//! * study1: every channel 5..=15 twice, no visual feedback; each channel is
//!   calibrated before its first trial.
//! * study2: the six visual conditions x thumb/index x 2 repetitions, each
//!   finger on its best study1 channel at its calibrated intensity.
//!
//! A trial is a random wait, a train of ten stimuli one second apart, and one
//! sensation report. Everything runs against a [`Device`] through the wire
//! protocol and on the device's simulated clock, so logs are reproducible
//! from the seed alone.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::calibration::{CalibrationMode, CalibrationResult, Calibrator, CalibrationStatus, Response};
use super::engine::DevicePolicy;
use super::record::{StudyKind, TrialCondition, TrialRecord, RECORD_SCHEMA};
use crate::effects::{TargetFinger, VisualCondition, VisualEffect};
use crate::handmap::HandMap;
use crate::protocol::{self, Command, MAX_INTENSITY_UA};
use crate::safety::SafetyState;
use crate::sim::device::{Device, DeviceConfig};
use crate::sim::perceiver::{vibrotactile_baseline, PerceiverModel, SensationReport, VIBRO_DURATION_MS};

pub const STUDY1_CHANNELS: std::ops::RangeInclusive<u8> = 5..=15;
pub const REPETITIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub wait_min_ms: f64,
    pub wait_max_ms: f64,
    pub train_count: u16,
    pub train_gap_ms: u16,
    pub policy: DevicePolicy,
    pub calibration_mode: CalibrationMode,
    /// Simulated time between a calibration stimulus and the next one.
    pub calibration_gap_ms: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            wait_min_ms: 1000.0,
            wait_max_ms: 3000.0,
            train_count: 10,
            train_gap_ms: 1000,
            policy: DevicePolicy::Electro,
            calibration_mode: CalibrationMode::Threshold,
            calibration_gap_ms: 500.0,
        }
    }
}

/// Whoever answers calibration prompts and paints reports.
pub trait Participant {
    fn calibration_response(&mut self, channel: u8, intensity_ua: u16) -> Response;
    fn report(&mut self, condition: &TrialCondition, intensity_ua: u16, seed: u64) -> Option<SensationReport>;
}

/// Participant backed by the synthetic perceiver.
#[derive(Debug, Clone)]
pub struct SimulatedParticipant {
    pub model: PerceiverModel,
}

impl Participant for SimulatedParticipant {
    fn calibration_response(&mut self, channel: u8, intensity_ua: u16) -> Response {
        match self.model.threshold_ma(channel) {
            Ok(t) if intensity_ua as f64 / 1000.0 >= t => Response::Felt,
            _ => Response::NotFelt,
        }
    }

    fn report(&mut self, condition: &TrialCondition, intensity_ua: u16, seed: u64) -> Option<SensationReport> {
        let visual = condition.visual_effect();
        match condition.policy {
            DevicePolicy::Electro => self
                .model
                .perceive(condition.channel?, intensity_ua as f64 / 1000.0, visual.as_ref(), seed)
                .ok()
                .flatten(),
            DevicePolicy::Vibro => {
                let e = vibrotactile_baseline(VIBRO_DURATION_MS)?;
                self.model
                    .perceive_vibrotactile(&e, visual.as_ref(), seed)
                    .map(|p| p.report)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerChannels {
    pub thumb: u8,
    pub index: u8,
}

impl Default for FingerChannels {
    fn default() -> Self {
        FingerChannels { thumb: 5, index: 8 }
    }
}

impl FingerChannels {
    pub fn get(&self, f: TargetFinger) -> u8 {
        match f {
            TargetFinger::Thumb => self.thumb,
            TargetFinger::Index => self.index,
        }
    }

    /// Channel with the highest mean in-finger rate among a participant's
    /// study1 trials (unfelt trials count as 0 %). Ties go to the lower
    /// channel; fingers with no data keep the default.
    pub fn from_study1(records: &[TrialRecord], map: &HandMap) -> Self {
        let mut best = FingerChannels::default();
        for finger in TargetFinger::BOTH {
            let mut per: BTreeMap<u8, (f64, u32)> = BTreeMap::new();
            for r in records.iter().filter(|r| r.study == StudyKind::Study1 && !r.aborted) {
                let Some(ch) = r.condition.channel else { continue };
                let rate = r
                    .report
                    .as_ref()
                    .and_then(|rep| map.in_region_rate(&rep.area_mask, finger.region()).ok())
                    .unwrap_or(0.0);
                let e = per.entry(ch).or_default();
                e.0 += rate;
                e.1 += 1;
            }
            let mut pick: Option<(u8, f64)> = None;
            for (ch, (sum, n)) in per {
                let mean = sum / n as f64;
                if pick.is_none_or(|(_, m)| mean > m) {
                    pick = Some((ch, mean));
                }
            }
            if let Some((ch, _)) = pick {
                match finger {
                    TargetFinger::Thumb => best.thumb = ch,
                    TargetFinger::Index => best.index = ch,
                }
            }
        }
        best
    }
}

/// Declared condition grid, unshuffled, `REPETITIONS` times over.
pub fn condition_grid(kind: StudyKind, policy: DevicePolicy, channels: FingerChannels) -> Vec<TrialCondition> {
    let once: Vec<TrialCondition> = match kind {
        StudyKind::Study1 => STUDY1_CHANNELS
            .map(|ch| TrialCondition {
                policy: DevicePolicy::Electro,
                channel: Some(ch),
                visual_size: None,
                opacity: None,
                target_finger: None,
            })
            .collect(),
        StudyKind::Study2 => VisualCondition::grid()
            .into_iter()
            .flat_map(|vc| {
                TargetFinger::BOTH.into_iter().map(move |f| TrialCondition {
                    policy,
                    channel: (policy == DevicePolicy::Electro).then(|| channels.get(f)),
                    visual_size: Some(vc.size),
                    opacity: Some(vc.opacity),
                    target_finger: Some(f),
                })
            })
            .collect(),
    };
    let mut all = Vec::with_capacity(once.len() * REPETITIONS);
    for _ in 0..REPETITIONS {
        all.extend(once.iter().copied());
    }
    all
}

fn session_rng(kind: StudyKind, participant: u32, seed: u64) -> ChaCha8Rng {
    let k = match kind {
        StudyKind::Study1 => 1u64,
        StudyKind::Study2 => 2,
    };
    ChaCha8Rng::seed_from_u64(
        seed ^ (participant as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03),
    )
}

/// Seeded trial order.
pub fn trial_order(kind: StudyKind, policy: DevicePolicy, channels: FingerChannels, participant: u32, seed: u64) -> Vec<TrialCondition> {
    let mut grid = condition_grid(kind, policy, channels);
    grid.shuffle(&mut session_rng(kind, participant, seed));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub records: Vec<TrialRecord>,
    pub calibrations: Vec<CalibrationResult>,
    /// Why the session stopped early, if it did.
    pub abort_reason: Option<String>,
}

impl StudyRun {
    pub fn is_complete(&self) -> bool {
        self.abort_reason.is_none()
    }
}

/// Sends one command over the byte link and returns the reply.
pub fn send(device: &mut Device, cmd: Command) -> Result<Command, String> {
    let bytes = protocol::encode(&cmd).map_err(|e| e.to_string())?;
    let reply = device.receive_bytes(&bytes);
    match protocol::decode(&reply) {
        Ok(Command::Nak { opcode, reason }) => Err(format!("device refused opcode {opcode:#04x}: {reason:?}")),
        Ok(r) => Ok(r),
        Err(e) => Err(format!("bad device reply: {e}")),
    }
}

fn check_state(device: &Device) -> Result<(), String> {
    match device.state() {
        s @ (SafetyState::Fault(_) | SafetyState::Lockout) => Err(format!("device entered {s}")),
        _ => Ok(()),
    }
}

fn stimulate_once(device: &mut Device, channel: u8, intensity_ua: u16) -> Result<(), String> {
    send(device, Command::SetChannel { channel })?;
    send(device, Command::SetIntensity { intensity_ua })?;
    send(device, Command::StimOnce)?;
    device.run_until_idle();
    check_state(device)
}

/// Calibrates one finger on the device; a failed staircase yields the
/// maximum intensity so the trial can still be run and scored.
pub fn calibrate_on_device(
    device: &mut Device,
    who: &mut dyn Participant,
    finger: TargetFinger,
    channel: u8,
    mode: CalibrationMode,
    gap_ms: f64,
) -> Result<CalibrationResult, String> {
    let mut cal = Calibrator::new(finger, channel, mode).map_err(|e| e.to_string())?;
    loop {
        match cal.status() {
            CalibrationStatus::Present { channel, intensity_ua } => {
                stimulate_once(device, channel, intensity_ua)?;
                if gap_ms > 0.0 {
                    device.step(gap_ms);
                    check_state(device)?;
                }
                cal.respond(who.calibration_response(channel, intensity_ua))
                    .map_err(|e| e.to_string())?;
            }
            CalibrationStatus::Done(r) => return Ok(r),
            CalibrationStatus::Failed { channel } => {
                return Ok(CalibrationResult {
                    finger,
                    channel,
                    intensity_ua: MAX_INTENSITY_UA,
                    steps: cal.steps(),
                })
            }
            CalibrationStatus::Aborted => return Err("calibration aborted".into()),
        }
    }
}

/// Runs one participant's session. `prior` supplies that participant's
/// study1 records for study2 channel selection.
pub fn run_study_protocol(
    kind: StudyKind,
    participant: u32,
    seed: u64,
    config: &ProtocolConfig,
    device: &mut Device,
    who: &mut dyn Participant,
    prior: &[TrialRecord],
) -> StudyRun {
    let map = HandMap::bundled();
    let channels = FingerChannels::from_study1(prior, map);
    let mut rng = session_rng(kind, participant, seed);
    let mut order = condition_grid(kind, config.policy, channels);
    order.shuffle(&mut rng);

    let mut run = StudyRun {
        records: Vec::new(),
        calibrations: Vec::new(),
        abort_reason: None,
    };
    let electro = kind == StudyKind::Study1 || config.policy == DevicePolicy::Electro;
    if electro {
        if let Err(e) = send(device, Command::Arm) {
            run.abort_reason = Some(e);
            return run;
        }
    }

    let mut intensity: BTreeMap<u8, u16> = BTreeMap::new();
    if kind == StudyKind::Study2 && electro {
        for finger in TargetFinger::BOTH {
            match calibrate_on_device(device, who, finger, channels.get(finger), config.calibration_mode, config.calibration_gap_ms) {
                Ok(c) => {
                    intensity.insert(c.channel, c.intensity_ua);
                    run.calibrations.push(c);
                }
                Err(e) => {
                    run.abort_reason = Some(e);
                    let _ = send(device, Command::Disarm);
                    return run;
                }
            }
        }
    }

    for (k, condition) in order.into_iter().enumerate() {
        let trial_seed: u64 = rng.random();
        let wait_ms = config.wait_min_ms + rng.random::<f64>() * (config.wait_max_ms - config.wait_min_ms);
        let mut rec = TrialRecord {
            schema: RECORD_SCHEMA,
            participant,
            study: kind,
            trial: k as u32,
            condition,
            intensity_ua: 0,
            report: None,
            wait_ms,
            stim_start_ms: 0.0,
            stim_end_ms: 0.0,
            seed: trial_seed,
            aborted: false,
        };
        let outcome = (|| -> Result<(), String> {
            if let (true, Some(ch)) = (electro, condition.channel) {
                if !intensity.contains_key(&ch) {
                    let finger = condition.target_finger.unwrap_or(TargetFinger::Thumb);
                    let c = calibrate_on_device(device, who, finger, ch, config.calibration_mode, config.calibration_gap_ms)?;
                    intensity.insert(ch, c.intensity_ua);
                    run.calibrations.push(c);
                }
                rec.intensity_ua = intensity[&ch];
            }
            if wait_ms > 0.0 {
                device.step(wait_ms);
                check_state(device)?;
            }
            rec.stim_start_ms = device.now_ms();
            match (electro, condition.channel) {
                (true, Some(ch)) => {
                    send(device, Command::SetChannel { channel: ch })?;
                    send(device, Command::SetIntensity { intensity_ua: rec.intensity_ua })?;
                    send(
                        device,
                        Command::StimTrain {
                            count: config.train_count,
                            gap_ms: config.train_gap_ms,
                        },
                    )?;
                    device.run_until_idle();
                    check_state(device)?;
                }
                _ => {
                    for n in 0..config.train_count {
                        device.vibrate(VIBRO_DURATION_MS);
                        device.step(VIBRO_DURATION_MS);
                        if n + 1 < config.train_count && config.train_gap_ms > 0 {
                            device.step(config.train_gap_ms as f64);
                        }
                    }
                }
            }
            rec.stim_end_ms = device.now_ms();
            Ok(())
        })();
        match outcome {
            Ok(()) => {
                rec.report = who.report(&condition, rec.intensity_ua, trial_seed);
                run.records.push(rec);
            }
            Err(e) => {
                rec.aborted = true;
                rec.stim_end_ms = device.now_ms();
                run.records.push(rec);
                run.abort_reason = Some(e);
                let _ = send(device, Command::Stop);
                return run;
            }
        }
    }
    if electro {
        let _ = send(device, Command::Disarm);
    }
    run
}

/// Device settings used for a simulated participant's session.
pub fn participant_device_config(participant: u32, seed: u64) -> DeviceConfig {
    DeviceConfig {
        seed: seed ^ participant as u64,
        ..DeviceConfig::default()
    }
}

/// Both studies for one simulated participant on a fresh device.
pub fn simulate_participant(
    participant: u32,
    seed: u64,
    base_model: &PerceiverModel,
    config: &ProtocolConfig,
) -> (StudyRun, StudyRun) {
    let model = base_model.participant(participant, seed);
    let mut who = SimulatedParticipant { model };
    let mut device = Device::new(participant_device_config(participant, seed));
    let s1 = run_study_protocol(StudyKind::Study1, participant, seed, config, &mut device, &mut who, &[]);
    let s2 = run_study_protocol(
        StudyKind::Study2,
        participant,
        seed,
        config,
        &mut device,
        &mut who,
        &s1.records,
    );
    (s1, s2)
}

/// Effect rendered for a study2 condition, for display or logging.
pub fn condition_effect(c: &TrialCondition) -> Option<VisualEffect> {
    c.visual_effect()
}
