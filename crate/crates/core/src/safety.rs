//! Safety interlock gating stimulation.
//!
//! Three layers are modelled: a software limit on commanded amplitude, the
//! hardware current cap (an overcurrent reading locks the device out until an
//! operator reset) and continuous skin-resistance monitoring through the
//! output voltage divider (out-of-range resistance faults the device until a
//! reading is back in range).

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::stim::{HARDWARE_CAP_MA, MAX_AMPLITUDE_MA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub software_max_current_ma: f64,
    pub hardware_cap_ma: f64,
    pub resistance_fault_floor_kohm: f64,
    pub resistance_fault_ceiling_kohm: f64,
    pub supply_rail_v: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        SafetyLimits {
            software_max_current_ma: MAX_AMPLITUDE_MA,
            hardware_cap_ma: HARDWARE_CAP_MA,
            resistance_fault_floor_kohm: 5.0,
            resistance_fault_ceiling_kohm: 500.0,
            supply_rail_v: 72.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("software limit {software} mA must be below hardware cap {cap} mA")]
    LimitsOrder { software: f64, cap: f64 },
    #[error("resistance floor {floor} kOhm must be below ceiling {ceiling} kOhm")]
    ResistanceBounds { floor: f64, ceiling: f64 },
    #[error("no current flowing, load resistance undefined")]
    UndefinedLoad,
}

impl SafetyLimits {
    pub fn new(
        software_max_current_ma: f64,
        hardware_cap_ma: f64,
        resistance_fault_floor_kohm: f64,
        resistance_fault_ceiling_kohm: f64,
        supply_rail_v: f64,
    ) -> Result<Self, SafetyError> {
        if !(software_max_current_ma < hardware_cap_ma) {
            return Err(SafetyError::LimitsOrder {
                software: software_max_current_ma,
                cap: hardware_cap_ma,
            });
        }
        if !(resistance_fault_floor_kohm < resistance_fault_ceiling_kohm) {
            return Err(SafetyError::ResistanceBounds {
                floor: resistance_fault_floor_kohm,
                ceiling: resistance_fault_ceiling_kohm,
            });
        }
        Ok(SafetyLimits {
            software_max_current_ma,
            hardware_cap_ma,
            resistance_fault_floor_kohm,
            resistance_fault_ceiling_kohm,
            supply_rail_v,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Resistance above the ceiling: electrode lifted off the skin.
    OpenCircuit,
    /// Resistance below the floor.
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum SafetyState {
    Disarmed,
    Armed,
    Stimulating,
    Fault(FaultKind),
    Lockout,
}

impl SafetyState {
    pub fn accepts_stimulation(self) -> bool {
        self == SafetyState::Armed
    }

    /// Wire code used in STATUS frames.
    pub fn code(self) -> u8 {
        match self {
            SafetyState::Disarmed => 0,
            SafetyState::Armed => 1,
            SafetyState::Stimulating => 2,
            SafetyState::Fault(FaultKind::OpenCircuit) => 3,
            SafetyState::Fault(FaultKind::Short) => 4,
            SafetyState::Lockout => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SafetyState::Disarmed,
            1 => SafetyState::Armed,
            2 => SafetyState::Stimulating,
            3 => SafetyState::Fault(FaultKind::OpenCircuit),
            4 => SafetyState::Fault(FaultKind::Short),
            5 => SafetyState::Lockout,
            _ => return None,
        })
    }
}

impl fmt::Display for SafetyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyState::Disarmed => f.write_str("disarmed"),
            SafetyState::Armed => f.write_str("armed"),
            SafetyState::Stimulating => f.write_str("stimulating"),
            SafetyState::Fault(FaultKind::OpenCircuit) => f.write_str("fault(open_circuit)"),
            SafetyState::Fault(FaultKind::Short) => f.write_str("fault(short)"),
            SafetyState::Lockout => f.write_str("lockout"),
        }
    }
}

/// Reading from the output voltage divider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadMeasurement {
    pub voltage_v: f64,
    pub current_ma: f64,
    pub timestamp_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Rejection {
    NonPositive { requested_ma: f64 },
    OverSoftwareLimit { requested_ma: f64, limit_ma: f64 },
    NotArmed(SafetyState),
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::NonPositive { requested_ma } => {
                write!(f, "non-positive amplitude {requested_ma} mA")
            }
            Rejection::OverSoftwareLimit { requested_ma, limit_ma } => {
                write!(f, "{requested_ma} mA over software limit {limit_ma} mA")
            }
            Rejection::NotArmed(s) => write!(f, "device {s}, not armed"),
        }
    }
}

pub fn check_command(amplitude_ma: f64, limits: &SafetyLimits) -> Result<(), Rejection> {
    if !(amplitude_ma > 0.0) {
        return Err(Rejection::NonPositive {
            requested_ma: amplitude_ma,
        });
    }
    if amplitude_ma > limits.software_max_current_ma {
        return Err(Rejection::OverSoftwareLimit {
            requested_ma: amplitude_ma,
            limit_ma: limits.software_max_current_ma,
        });
    }
    Ok(())
}

/// V / mA gives kΩ directly.
pub fn estimate_resistance(m: &LoadMeasurement) -> Result<f64, SafetyError> {
    if !(m.current_ma.abs() > 0.0) {
        return Err(SafetyError::UndefinedLoad);
    }
    Ok(m.voltage_v.abs() / m.current_ma.abs())
}

/// Next interlock state after one measurement.
pub fn monitor(state: SafetyState, m: &LoadMeasurement, limits: &SafetyLimits) -> SafetyState {
    if state == SafetyState::Lockout {
        return SafetyState::Lockout;
    }
    if m.current_ma.abs() > limits.hardware_cap_ma {
        return SafetyState::Lockout;
    }
    // Resistance faults only matter once the device has been armed.
    if state == SafetyState::Disarmed {
        return state;
    }
    let Ok(r) = estimate_resistance(m) else {
        return state;
    };
    if r > limits.resistance_fault_ceiling_kohm {
        SafetyState::Fault(FaultKind::OpenCircuit)
    } else if r < limits.resistance_fault_floor_kohm {
        SafetyState::Fault(FaultKind::Short)
    } else if let SafetyState::Fault(_) = state {
        SafetyState::Armed
    } else {
        state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyStatus {
    pub state: SafetyState,
    pub last_resistance_kohm: Option<f64>,
    pub last_current_ma: Option<f64>,
}

/// Proof that a stimulation was authorized by an armed interlock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimPermit {
    amplitude_ma: f64,
}

impl StimPermit {
    pub fn amplitude_ma(&self) -> f64 {
        self.amplitude_ma
    }
}

/// Stateful interlock owned by the device control loop.
#[derive(Debug, Clone)]
pub struct Interlock {
    limits: SafetyLimits,
    state: SafetyState,
    last_resistance_kohm: Option<f64>,
    last_current_ma: Option<f64>,
}

impl Interlock {
    pub fn new(limits: SafetyLimits) -> Self {
        Interlock {
            limits,
            state: SafetyState::Disarmed,
            last_resistance_kohm: None,
            last_current_ma: None,
        }
    }

    pub fn limits(&self) -> &SafetyLimits {
        &self.limits
    }

    pub fn state(&self) -> SafetyState {
        self.state
    }

    pub fn status(&self) -> SafetyStatus {
        SafetyStatus {
            state: self.state,
            last_resistance_kohm: self.last_resistance_kohm,
            last_current_ma: self.last_current_ma,
        }
    }

    /// Disarmed -> Armed. Returns false when arming is not possible.
    pub fn arm(&mut self) -> bool {
        match self.state {
            SafetyState::Disarmed | SafetyState::Armed => {
                self.state = SafetyState::Armed;
                true
            }
            _ => false,
        }
    }

    pub fn disarm(&mut self) {
        if self.state != SafetyState::Lockout {
            self.state = SafetyState::Disarmed;
        }
    }

    /// Operator reset: the only way out of Lockout.
    pub fn reset(&mut self) {
        self.state = SafetyState::Disarmed;
    }

    pub fn authorize(&self, amplitude_ma: f64) -> Result<StimPermit, Rejection> {
        if !self.state.accepts_stimulation() {
            return Err(Rejection::NotArmed(self.state));
        }
        check_command(amplitude_ma, &self.limits)?;
        Ok(StimPermit { amplitude_ma })
    }

    /// Armed -> Stimulating, consuming a permit.
    pub fn begin_stimulation(&mut self, _permit: StimPermit) -> Result<(), Rejection> {
        if !self.state.accepts_stimulation() {
            return Err(Rejection::NotArmed(self.state));
        }
        self.state = SafetyState::Stimulating;
        Ok(())
    }

    pub fn end_stimulation(&mut self) {
        if self.state == SafetyState::Stimulating {
            self.state = SafetyState::Armed;
        }
    }

    pub fn observe(&mut self, m: &LoadMeasurement) -> SafetyState {
        self.last_current_ma = Some(m.current_ma.abs());
        if let Ok(r) = estimate_resistance(m) {
            self.last_resistance_kohm = Some(r);
        }
        self.state = monitor(self.state, m, &self.limits);
        self.state
    }
}
