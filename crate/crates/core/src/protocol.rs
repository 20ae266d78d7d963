//! Host <-> device command framing.
//!
//! ```text
//! +------+--------+--------+-----------------+-----+
//! | 0xAA | opcode | length | payload (0..64) | crc |
//! +------+--------+--------+-----------------+-----+
//! ```
//!
//! `crc` is CRC-8/SMBUS (poly 0x07, init 0x00, no reflection, no xor-out)
//! over opcode, length and payload. Multi-byte integers are little-endian.
//! Intensities travel as unsigned µA.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety::SafetyState;

pub const SOF: u8 = 0xAA;
pub const MAX_PAYLOAD: usize = 64;
pub const MAX_INTENSITY_UA: u16 = 4000;
const RESISTANCE_UNKNOWN: u32 = u32::MAX;

pub mod opcode {
    pub const SET_CHANNEL: u8 = 0x01;
    pub const SET_INTENSITY: u8 = 0x02;
    pub const STIM_ONCE: u8 = 0x03;
    pub const STIM_TRAIN: u8 = 0x04;
    pub const STOP: u8 = 0x05;
    pub const QUERY_STATUS: u8 = 0x06;
    pub const RESET_LOCKOUT: u8 = 0x07;
    pub const ARM: u8 = 0x08;
    pub const DISARM: u8 = 0x09;
    pub const STATUS: u8 = 0x81;
    pub const ACK: u8 = 0x82;
    pub const NAK: u8 = 0x83;
}

pub fn crc8(data: &[u8]) -> u8 {
    data.iter().fold(0u8, |mut crc, &byte| {
        crc ^= byte;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ 0x07
            } else {
                crc << 1
            };
        }
        crc
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum NakReason {
    Malformed = 1,
    NotArmed = 2,
    OverLimit = 3,
    NonPositive = 4,
    NoChannel = 5,
    Busy = 6,
    Lockout = 7,
    InvalidArgument = 8,
}

impl NakReason {
    pub fn from_code(code: u8) -> Option<Self> {
        use NakReason::*;
        Some(match code {
            1 => Malformed,
            2 => NotArmed,
            3 => OverLimit,
            4 => NonPositive,
            5 => NoChannel,
            6 => Busy,
            7 => Lockout,
            8 => InvalidArgument,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatusReport {
    pub state: SafetyState,
    /// Last measured load in deci-ohms, `None` before any reading.
    pub resistance_dohm: Option<u32>,
    pub intensity_ua: u16,
}

impl StatusReport {
    pub fn resistance_kohm(&self) -> Option<f64> {
        self.resistance_dohm.map(|d| d as f64 / 10_000.0)
    }
}

/// Converts kΩ to the deci-ohm wire unit, saturating below the sentinel.
pub fn kohm_to_dohm(kohm: f64) -> u32 {
    (kohm * 10_000.0)
        .round()
        .clamp(0.0, (RESISTANCE_UNKNOWN - 1) as f64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    SetChannel { channel: u8 },
    SetIntensity { intensity_ua: u16 },
    StimOnce,
    StimTrain { count: u16, gap_ms: u16 },
    Stop,
    QueryStatus,
    ResetLockout,
    Arm,
    Disarm,
    Status(StatusReport),
    Ack { opcode: u8 },
    Nak { opcode: u8, reason: NakReason },
}

impl Command {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            Command::SetChannel { .. } => SET_CHANNEL,
            Command::SetIntensity { .. } => SET_INTENSITY,
            Command::StimOnce => STIM_ONCE,
            Command::StimTrain { .. } => STIM_TRAIN,
            Command::Stop => STOP,
            Command::QueryStatus => QUERY_STATUS,
            Command::ResetLockout => RESET_LOCKOUT,
            Command::Arm => ARM,
            Command::Disarm => DISARM,
            Command::Status(_) => STATUS,
            Command::Ack { .. } => ACK,
            Command::Nak { .. } => NAK,
        }
    }

    pub fn is_device_to_host(&self) -> bool {
        self.opcode() & 0x80 != 0
    }

    fn payload(&self) -> Result<Vec<u8>, EncodeError> {
        Ok(match *self {
            Command::SetChannel { channel } => {
                if !(1..=15).contains(&channel) {
                    return Err(EncodeError::InvalidField("channel must be 1..=15"));
                }
                vec![channel]
            }
            Command::SetIntensity { intensity_ua } => {
                if intensity_ua > MAX_INTENSITY_UA {
                    return Err(EncodeError::InvalidField("intensity must be <= 4000 uA"));
                }
                intensity_ua.to_le_bytes().to_vec()
            }
            Command::StimTrain { count, gap_ms } => {
                if count == 0 {
                    return Err(EncodeError::InvalidField("train count must be >= 1"));
                }
                let mut p = count.to_le_bytes().to_vec();
                p.extend_from_slice(&gap_ms.to_le_bytes());
                p
            }
            Command::Status(s) => {
                let mut p = vec![s.state.code()];
                p.extend_from_slice(&s.resistance_dohm.unwrap_or(RESISTANCE_UNKNOWN).to_le_bytes());
                p.extend_from_slice(&s.intensity_ua.to_le_bytes());
                p
            }
            Command::Ack { opcode } => vec![opcode],
            Command::Nak { opcode, reason } => vec![opcode, reason as u8],
            Command::StimOnce
            | Command::Stop
            | Command::QueryStatus
            | Command::ResetLockout
            | Command::Arm
            | Command::Disarm => Vec::new(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadOverflow(usize),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("checksum mismatch: frame carries {found:#04x}, computed {expected:#04x}")]
    ChecksumMismatch { expected: u8, found: u8 },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("declared length {0} exceeds {MAX_PAYLOAD}")]
    LengthOverrun(u8),
    #[error("bad payload for opcode {opcode:#04x}: {reason}")]
    InvalidPayload { opcode: u8, reason: &'static str },
    #[error("incomplete frame")]
    Incomplete,
}

/// Frames a raw opcode and payload.
pub fn encode_raw(opcode: u8, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::PayloadOverflow(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.push(SOF);
    out.push(opcode);
    out.push(payload.len() as u8);
    out.extend_from_slice(payload);
    out.push(crc8(&out[1..]));
    Ok(out)
}

pub fn encode(cmd: &Command) -> Result<Vec<u8>, EncodeError> {
    encode_raw(cmd.opcode(), &cmd.payload()?)
}

fn parse(op: u8, p: &[u8]) -> Result<Command, DecodeError> {
    use opcode::*;
    let bad = |reason| DecodeError::InvalidPayload { opcode: op, reason };
    let expect_len = |n: usize| {
        if p.len() == n {
            Ok(())
        } else {
            Err(bad("wrong payload length"))
        }
    };
    let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
    match op {
        SET_CHANNEL => {
            expect_len(1)?;
            if !(1..=15).contains(&p[0]) {
                return Err(bad("channel must be 1..=15"));
            }
            Ok(Command::SetChannel { channel: p[0] })
        }
        SET_INTENSITY => {
            expect_len(2)?;
            let intensity_ua = u16_at(0);
            if intensity_ua > MAX_INTENSITY_UA {
                return Err(bad("intensity must be <= 4000 uA"));
            }
            Ok(Command::SetIntensity { intensity_ua })
        }
        STIM_TRAIN => {
            expect_len(4)?;
            let count = u16_at(0);
            if count == 0 {
                return Err(bad("train count must be >= 1"));
            }
            Ok(Command::StimTrain {
                count,
                gap_ms: u16_at(2),
            })
        }
        STIM_ONCE | STOP | QUERY_STATUS | RESET_LOCKOUT | ARM | DISARM => {
            expect_len(0)?;
            Ok(match op {
                STIM_ONCE => Command::StimOnce,
                STOP => Command::Stop,
                QUERY_STATUS => Command::QueryStatus,
                RESET_LOCKOUT => Command::ResetLockout,
                ARM => Command::Arm,
                _ => Command::Disarm,
            })
        }
        STATUS => {
            expect_len(7)?;
            let state = SafetyState::from_code(p[0]).ok_or(bad("unknown state code"))?;
            let r = u32::from_le_bytes([p[1], p[2], p[3], p[4]]);
            Ok(Command::Status(StatusReport {
                state,
                resistance_dohm: (r != RESISTANCE_UNKNOWN).then_some(r),
                intensity_ua: u16_at(5),
            }))
        }
        ACK => {
            expect_len(1)?;
            Ok(Command::Ack { opcode: p[0] })
        }
        NAK => {
            expect_len(2)?;
            let reason = NakReason::from_code(p[1]).ok_or(bad("unknown NAK reason"))?;
            Ok(Command::Nak { opcode: p[0], reason })
        }
        other => Err(DecodeError::UnknownOpcode(other)),
    }
}

/// Decodes the first frame found in `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Command, DecodeError> {
    let mut dec = StreamDecoder::new();
    dec.push(bytes)
        .into_iter()
        .next()
        .unwrap_or(Err(DecodeError::Incomplete))
}

/// Incremental decoder. Bytes before a start-of-frame marker are skipped;
/// partial frames are kept until the rest arrives.
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes held waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<Command, DecodeError>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        loop {
            match self.buf.iter().position(|&b| b == SOF) {
                Some(0) => {}
                Some(n) => {
                    self.buf.drain(..n);
                }
                None => {
                    self.buf.clear();
                    break;
                }
            }
            if self.buf.len() < 3 {
                break;
            }
            let len = self.buf[2];
            if len as usize > MAX_PAYLOAD {
                out.push(Err(DecodeError::LengthOverrun(len)));
                self.buf.remove(0);
                continue;
            }
            let total = 4 + len as usize;
            if self.buf.len() < total {
                break;
            }
            let expected = crc8(&self.buf[1..total - 1]);
            let found = self.buf[total - 1];
            if expected != found {
                out.push(Err(DecodeError::ChecksumMismatch { expected, found }));
                self.buf.remove(0);
                continue;
            }
            out.push(parse(self.buf[1], &self.buf[3..total - 1]));
            self.buf.drain(..total);
        }
        out
    }
}

/// One frame per line as space-separated hex bytes.
pub fn to_hex_line(frame: &[u8]) -> String {
    frame
        .iter()
        .map(|b| format!("{b:02X}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct ReplayError {
    pub line: usize,
    pub reason: String,
}

/// Parses a replay file: one frame per line, `#` starts a comment.
pub fn parse_hex_replay(text: &str) -> Result<Vec<Vec<u8>>, ReplayError> {
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bytes = line
            .split_whitespace()
            .map(|tok| u8::from_str_radix(tok, 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|e| ReplayError {
                line: i + 1,
                reason: e.to_string(),
            })?;
        frames.push(bytes);
    }
    Ok(frames)
}
