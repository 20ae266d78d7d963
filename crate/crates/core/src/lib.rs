//! Wrist-worn electro-tactile haptics: stimulus synthesis, relay switching,
//! safety interlock, device wire protocol, a simulated wristband with a
//! synthetic perceiver, and the host-side rendering and study engine.

pub mod effects;
pub mod exact;
pub mod handmap;
pub mod protocol;
pub mod render;
pub mod safety;
pub mod sim;
pub mod stim;
pub mod switching;
