//! Simulated wristband hardware and the synthetic participant.

pub mod device;
pub mod load;
pub mod perceiver;

pub use device::{Device, DeviceConfig, DeviceEvent, ScheduledFault, StepOutput};
pub use load::{SkinLoadModel, SkinLoadParams};
pub use perceiver::{PerceiverModel, Quality, SensationReport, VibrotactileEvent};
