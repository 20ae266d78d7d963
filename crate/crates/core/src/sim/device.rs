//! Deterministic simulated wristband.
//!
//! The device owns the interlock, the relay chain and a playback queue. Time
//! advances only through [`Device::step`], in whole samples of the output
//! DAC. Every `measurement_period_ms` the output divider is read and fed to
//! the interlock; a fault or lockout aborts playback and opens all relays.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::load::{SkinLoadModel, SkinLoadParams};
use super::perceiver::{vibrotactile_baseline, VibrotactileEvent};
use crate::protocol::{self, kohm_to_dohm, Command, DecodeError, NakReason, StatusReport, StreamDecoder};
use crate::safety::{Interlock, LoadMeasurement, Rejection, SafetyLimits, SafetyState};
use crate::stim::{
    synth_stimulus, Polarity, PulseSpec, StimulusTrain, WaveformSamples, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::switching::{transition, ElectrodeId, Phase, RelayFrame, RoutingState};

/// Sense current used to read the load while no stimulus is playing.
pub const PROBE_CURRENT_MA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub sample_rate_hz: u32,
    pub measurement_period_ms: f64,
    pub limits: SafetyLimits,
    pub load: SkinLoadParams,
    pub seed: u64,
    /// Scripted divider readings, for exercising the interlock.
    #[serde(default)]
    pub faults: Vec<ScheduledFault>,
}

/// Replaces the first divider reading at or after `at_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledFault {
    pub at_ms: f64,
    pub voltage_v: f64,
    pub current_ma: f64,
}

impl ScheduledFault {
    /// A reading above the lockout current.
    pub fn overcurrent(at_ms: f64) -> Self {
        ScheduledFault {
            at_ms,
            voltage_v: 5.0,
            current_ma: 5.0,
        }
    }
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            measurement_period_ms: 1.0,
            limits: SafetyLimits::default(),
            load: SkinLoadParams::default(),
            seed: 0,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DeviceEvent {
    Received { t_ms: f64, command: Command },
    Sent { t_ms: f64, command: Command },
    DecodeError { t_ms: f64, error: String },
    State { t_ms: f64, from: SafetyState, to: SafetyState },
    Frame { t_ms: f64, bits: String },
    StimulusStart { t_ms: f64, channel: u8, amplitude_ma: f64 },
    StimulusEnd { t_ms: f64, channel: u8 },
    Aborted { t_ms: f64, state: SafetyState },
    Vibrotactile { t_ms: f64, frequency_hz: f64, duration_ms: f64 },
}

#[derive(Debug, Clone)]
enum Segment {
    Play {
        channel: u8,
        amplitude_ma: f64,
        stim_sign: f64,
        samples: std::sync::Arc<WaveformSamples>,
        pos: usize,
    },
    Gap {
        remaining: u64,
    },
}

/// What happened during one [`Device::step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub measurements: Vec<LoadMeasurement>,
    pub frames: Vec<RelayFrame>,
    pub state_changes: Vec<(SafetyState, SafetyState)>,
}

#[derive(Debug, Clone)]
pub struct Device {
    config: DeviceConfig,
    interlock: Interlock,
    load: SkinLoadModel,
    rng: ChaCha8Rng,
    channel: Option<u8>,
    intensity_ua: u16,
    tick: u64,
    samples_per_measurement: u64,
    queue: VecDeque<Segment>,
    routing: RoutingState,
    frame: RelayFrame,
    decoder: StreamDecoder,
    log: Vec<DeviceEvent>,
    pending_injection: Option<LoadMeasurement>,
    next_fault: usize,
}

impl Device {
    pub fn new(config: DeviceConfig) -> Self {
        let samples_per_measurement =
            ((config.measurement_period_ms * config.sample_rate_hz as f64 / 1000.0).round() as u64).max(1);
        Device {
            interlock: Interlock::new(config.limits),
            load: SkinLoadModel::new(config.load.clone(), config.sample_rate_hz),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            channel: None,
            intensity_ua: 0,
            tick: 0,
            samples_per_measurement,
            queue: VecDeque::new(),
            routing: RoutingState::Idle,
            frame: crate::switching::idle(),
            decoder: StreamDecoder::new(),
            log: Vec::new(),
            pending_injection: None,
            next_fault: 0,
            config,
        }
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn state(&self) -> SafetyState {
        self.interlock.state()
    }

    pub fn channel(&self) -> Option<u8> {
        self.channel
    }

    pub fn intensity_ua(&self) -> u16 {
        self.intensity_ua
    }

    pub fn now_ms(&self) -> f64 {
        self.tick as f64 * 1000.0 / self.config.sample_rate_hz as f64
    }

    pub fn current_frame(&self) -> RelayFrame {
        self.frame
    }

    pub fn routing(&self) -> RoutingState {
        self.routing
    }

    pub fn is_busy(&self) -> bool {
        !self.queue.is_empty()
    }

    pub fn load(&self) -> &SkinLoadModel {
        &self.load
    }

    pub fn accumulated_charge_uc(&self, channel: u8) -> f64 {
        self.load.accumulated_charge_uc(channel)
    }

    pub fn set_channel_resistance(&mut self, channel: u8, kohm: f64) {
        self.load.set_resistance_kohm(channel, kohm);
    }

    /// Replaces the next scheduled divider reading, e.g. with an overcurrent.
    pub fn inject_measurement(&mut self, voltage_v: f64, current_ma: f64) {
        self.pending_injection = Some(LoadMeasurement {
            voltage_v,
            current_ma,
            timestamp_ms: 0.0,
        });
    }

    pub fn log(&self) -> &[DeviceEvent] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<DeviceEvent> {
        std::mem::take(&mut self.log)
    }

    /// Session log as one JSON record per line.
    pub fn log_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("device events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn status(&self) -> StatusReport {
        let s = self.interlock.status();
        StatusReport {
            state: s.state,
            resistance_dohm: s.last_resistance_kohm.map(kohm_to_dohm),
            intensity_ua: self.intensity_ua,
        }
    }

    /// Feeds raw link bytes; returns encoded response frames.
    pub fn receive_bytes(&mut self, bytes: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for item in self.decoder.push(bytes) {
            let responses = match item {
                Ok(cmd) => self.handle(cmd),
                Err(e) => {
                    let t_ms = self.now_ms();
                    self.log.push(DeviceEvent::DecodeError {
                        t_ms,
                        error: e.to_string(),
                    });
                    let opcode = match e {
                        DecodeError::UnknownOpcode(op) | DecodeError::InvalidPayload { opcode: op, .. } => op,
                        _ => 0,
                    };
                    let nak = Command::Nak {
                        opcode,
                        reason: NakReason::Malformed,
                    };
                    self.log.push(DeviceEvent::Sent { t_ms, command: nak });
                    vec![nak]
                }
            };
            for r in responses {
                out.extend(protocol::encode(&r).expect("device responses encode"));
            }
        }
        out
    }

    /// Executes one decoded command and returns the device's reply.
    pub fn handle(&mut self, cmd: Command) -> Vec<Command> {
        let t_ms = self.now_ms();
        self.log.push(DeviceEvent::Received { t_ms, command: cmd });
        let op = cmd.opcode();
        let ack = Command::Ack { opcode: op };
        let nak = |reason| Command::Nak { opcode: op, reason };
        let reply = match cmd {
            Command::SetChannel { channel } => {
                if self.is_busy() {
                    nak(NakReason::Busy)
                } else if ElectrodeId::channel(channel).is_err() {
                    nak(NakReason::InvalidArgument)
                } else {
                    self.channel = Some(channel);
                    ack
                }
            }
            Command::SetIntensity { intensity_ua } => {
                if self.is_busy() {
                    nak(NakReason::Busy)
                } else if intensity_ua > protocol::MAX_INTENSITY_UA {
                    nak(NakReason::OverLimit)
                } else {
                    self.intensity_ua = intensity_ua;
                    ack
                }
            }
            Command::StimOnce => match self.start_train(1, 0) {
                Ok(()) => ack,
                Err(r) => nak(r),
            },
            Command::StimTrain { count, gap_ms } => match self.start_train(count, gap_ms) {
                Ok(()) => ack,
                Err(r) => nak(r),
            },
            Command::Stop => {
                self.stop_playback();
                ack
            }
            Command::QueryStatus => Command::Status(self.status()),
            Command::ResetLockout => {
                self.stop_playback();
                self.change_state(|il| il.reset());
                ack
            }
            Command::Arm => match self.state() {
                SafetyState::Lockout => nak(NakReason::Lockout),
                SafetyState::Stimulating => nak(NakReason::Busy),
                // Faults clear on their own once the load is back in range.
                SafetyState::Fault(_) => nak(NakReason::NotArmed),
                _ => {
                    self.change_state(|il| {
                        il.arm();
                    });
                    ack
                }
            },
            Command::Disarm => {
                self.stop_playback();
                self.change_state(|il| il.disarm());
                ack
            }
            Command::Status(_) | Command::Ack { .. } | Command::Nak { .. } => nak(NakReason::Malformed),
        };
        self.log.push(DeviceEvent::Sent { t_ms, command: reply });
        vec![reply]
    }

    fn start_train(&mut self, count: u16, gap_ms: u16) -> Result<(), NakReason> {
        match self.state() {
            SafetyState::Lockout => return Err(NakReason::Lockout),
            SafetyState::Stimulating => return Err(NakReason::Busy),
            SafetyState::Armed => {}
            _ => return Err(NakReason::NotArmed),
        }
        let channel = self.channel.ok_or(NakReason::NoChannel)?;
        let amplitude_ma = self.intensity_ua as f64 / 1000.0;
        let permit = self.interlock.authorize(amplitude_ma).map_err(|r| match r {
            Rejection::NonPositive { .. } => NakReason::NonPositive,
            Rejection::OverSoftwareLimit { .. } => NakReason::OverLimit,
            Rejection::NotArmed(_) => NakReason::NotArmed,
        })?;
        let spec = PulseSpec::balanced(amplitude_ma).map_err(|_| NakReason::OverLimit)?;
        let train = StimulusTrain::new(spec, count as u32, gap_ms as f64).map_err(|_| NakReason::InvalidArgument)?;
        let waveform = synth_stimulus(train.spec(), self.config.sample_rate_hz).map_err(|_| NakReason::InvalidArgument)?;
        let gap_samples = (gap_ms as u64 * self.config.sample_rate_hz as u64) / 1000;
        self.enqueue_train(channel, amplitude_ma, Polarity::Cathodic.sign(), waveform, count as u32, gap_samples);
        self.change_state(|il| {
            il.begin_stimulation(permit).expect("armed interlock accepts permit");
        });
        Ok(())
    }

    fn enqueue_train(
        &mut self,
        channel: u8,
        amplitude_ma: f64,
        stim_sign: f64,
        waveform: WaveformSamples,
        count: u32,
        gap_samples: u64,
    ) {
        let samples = std::sync::Arc::new(waveform);
        for k in 0..count {
            if k > 0 && gap_samples > 0 {
                self.queue.push_back(Segment::Gap { remaining: gap_samples });
            }
            self.queue.push_back(Segment::Play {
                channel,
                amplitude_ma,
                stim_sign,
                samples: samples.clone(),
                pos: 0,
            });
        }
    }

    /// Plays an arbitrary cathodic-stim waveform on the selected channel,
    /// bypassing the wire protocol but not the interlock.
    pub fn drive_waveform(&mut self, waveform: WaveformSamples) -> Result<(), Rejection> {
        let channel = self.channel.ok_or(Rejection::NotArmed(self.state()))?;
        let peak = waveform.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let permit = self.interlock.authorize(peak)?;
        assert_eq!(
            waveform.sample_rate_hz(),
            self.config.sample_rate_hz,
            "waveform must match the device sample rate"
        );
        self.enqueue_train(channel, peak, Polarity::Cathodic.sign(), waveform, 1, 0);
        self.change_state(|il| {
            il.begin_stimulation(permit).expect("armed interlock accepts permit");
        });
        Ok(())
    }

    /// Logs a wrist actuator burst (baseline condition). No electrical output.
    pub fn vibrate(&mut self, duration_ms: f64) -> Option<VibrotactileEvent> {
        let e = vibrotactile_baseline(duration_ms)?;
        self.log.push(DeviceEvent::Vibrotactile {
            t_ms: self.now_ms(),
            frequency_hz: e.frequency_hz,
            duration_ms: e.duration_ms,
        });
        Some(e)
    }

    fn change_state(&mut self, f: impl FnOnce(&mut Interlock)) -> Option<(SafetyState, SafetyState)> {
        let from = self.interlock.state();
        f(&mut self.interlock);
        let to = self.interlock.state();
        (from != to).then(|| {
            self.log.push(DeviceEvent::State {
                t_ms: self.now_ms(),
                from,
                to,
            });
            (from, to)
        })
    }

    fn apply_routing(&mut self, to: RoutingState, out: Option<&mut StepOutput>) {
        if to == self.routing {
            return;
        }
        let frames = transition(self.routing, to).expect("channel routes are valid");
        let t_ms = self.now_ms();
        for f in &frames {
            self.log.push(DeviceEvent::Frame {
                t_ms,
                bits: format!("{:016X}", f.bits()),
            });
        }
        if let Some(out) = out {
            out.frames.extend(frames.iter().copied());
        }
        self.frame = *frames.last().unwrap_or(&self.frame);
        self.routing = to;
    }

    fn stop_playback(&mut self) {
        let t_ms = self.now_ms();
        if let Some(Segment::Play { channel, .. }) = self.queue.front() {
            self.log.push(DeviceEvent::StimulusEnd { t_ms, channel: *channel });
        }
        self.queue.clear();
        self.apply_routing(RoutingState::Idle, None);
        self.change_state(|il| il.end_stimulation());
    }

    /// Advances the simulated clock by `dt_ms` (rounded to whole samples).
    pub fn step(&mut self, dt_ms: f64) -> StepOutput {
        assert!(dt_ms > 0.0, "step must advance time");
        let n = (dt_ms * self.config.sample_rate_hz as f64 / 1000.0).round().max(1.0) as u64;
        let mut out = StepOutput::default();
        for _ in 0..n {
            self.step_sample(&mut out);
        }
        out
    }

    /// Steps until playback finishes, returning everything observed.
    pub fn run_until_idle(&mut self) -> StepOutput {
        let mut out = StepOutput::default();
        while self.is_busy() {
            self.step_sample(&mut out);
        }
        out
    }

    fn step_sample(&mut self, out: &mut StepOutput) {
        let cap = self.config.limits.hardware_cap_ma;
        let mut current = None;
        let mut finished = None;
        let mut target = RoutingState::Idle;
        match self.queue.front_mut() {
            Some(Segment::Play {
                channel,
                amplitude_ma,
                stim_sign,
                samples,
                pos,
            }) => {
                if *pos == 0 {
                    self.log.push(DeviceEvent::StimulusStart {
                        t_ms: self.tick as f64 * 1000.0 / self.config.sample_rate_hz as f64,
                        channel: *channel,
                        amplitude_ma: *amplitude_ma,
                    });
                }
                let i = samples.samples()[*pos].clamp(-cap, cap);
                *pos += 1;
                let ch = *channel;
                if i != 0.0 {
                    let phase = if i.signum() == *stim_sign { Phase::Stim } else { Phase::Priming };
                    target = RoutingState::Active {
                        channel: ElectrodeId::channel(ch).expect("validated channel"),
                        phase,
                    };
                }
                current = Some((ch, i));
                if *pos == samples.len() {
                    finished = Some(ch);
                }
            }
            Some(Segment::Gap { remaining }) => {
                *remaining -= 1;
                if *remaining == 0 {
                    self.queue.pop_front();
                }
            }
            None => {}
        }
        self.apply_routing(target, Some(out));
        if let Some((ch, i)) = current {
            self.load.record_sample(ch, i);
        }
        self.tick += 1;
        if let Some(ch) = finished {
            self.queue.pop_front();
            self.log.push(DeviceEvent::StimulusEnd {
                t_ms: self.now_ms(),
                channel: ch,
            });
            if self.queue.is_empty() {
                self.apply_routing(RoutingState::Idle, Some(out));
                if let Some(c) = self.change_state(|il| il.end_stimulation()) {
                    out.state_changes.push(c);
                }
            }
        }
        if self.tick % self.samples_per_measurement == 0 {
            self.measure(current.map(|(_, i)| i), out);
        }
    }

    fn measure(&mut self, current: Option<f64>, out: &mut StepOutput) {
        let t_ms = self.now_ms();
        if let Some(f) = self.config.faults.get(self.next_fault) {
            if t_ms >= f.at_ms {
                self.next_fault += 1;
                self.inject_measurement(f.voltage_v, f.current_ma);
            }
        }
        let m = if let Some(mut m) = self.pending_injection.take() {
            m.timestamp_ms = t_ms;
            m
        } else {
            let Some(ch) = self.channel else {
                return;
            };
            let i = match current {
                Some(i) if i != 0.0 => i.abs(),
                _ => PROBE_CURRENT_MA,
            };
            let r = self.load.sample_resistance(ch, &mut self.rng);
            LoadMeasurement {
                voltage_v: i * r,
                current_ma: i,
                timestamp_ms: t_ms,
            }
        };
        out.measurements.push(m);
        let change = self.change_state(|il| {
            il.observe(&m);
        });
        if let Some(c) = change {
            out.state_changes.push(c);
            if matches!(c.1, SafetyState::Fault(_) | SafetyState::Lockout) && self.is_busy() {
                self.log.push(DeviceEvent::Aborted { t_ms, state: c.1 });
                self.queue.clear();
                self.apply_routing(RoutingState::Idle, Some(out));
            }
        }
    }
}
