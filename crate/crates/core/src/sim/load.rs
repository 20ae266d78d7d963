//! Electrode-skin load: a resistance per channel plus a charge ledger.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exact::ExactSum;

/// Skin impedance measured for the fabricated electrodes.
pub const DEFAULT_SKIN_RESISTANCE_KOHM: f64 = 72.3;
pub const CHANNELS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinLoadParams {
    pub resistance_kohm: [f64; CHANNELS],
    pub noise_sd_kohm: f64,
}

impl Default for SkinLoadParams {
    fn default() -> Self {
        SkinLoadParams {
            resistance_kohm: [DEFAULT_SKIN_RESISTANCE_KOHM; CHANNELS],
            noise_sd_kohm: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkinLoadModel {
    params: SkinLoadParams,
    /// Sum of played samples (mA) per channel; scaled to µC on read.
    ledger: Vec<ExactSum>,
    sample_rate_hz: u32,
}

impl SkinLoadModel {
    pub fn new(params: SkinLoadParams, sample_rate_hz: u32) -> Self {
        assert!(
            params.resistance_kohm.iter().all(|&r| r > 0.0) && params.noise_sd_kohm >= 0.0,
            "load resistances must be positive and noise non-negative"
        );
        SkinLoadModel {
            params,
            ledger: vec![ExactSum::new(); CHANNELS],
            sample_rate_hz,
        }
    }

    pub fn params(&self) -> &SkinLoadParams {
        &self.params
    }

    pub fn resistance_kohm(&self, channel: u8) -> f64 {
        self.params.resistance_kohm[idx(channel)]
    }

    /// Fault injection: e.g. a huge value models electrode lift-off.
    pub fn set_resistance_kohm(&mut self, channel: u8, kohm: f64) {
        assert!(kohm > 0.0, "resistance must be positive");
        self.params.resistance_kohm[idx(channel)] = kohm;
    }

    /// One noisy resistance draw, never below 1 Ω.
    pub fn sample_resistance<R: Rng>(&self, channel: u8, rng: &mut R) -> f64 {
        let r = self.resistance_kohm(channel);
        if self.params.noise_sd_kohm == 0.0 {
            return r;
        }
        let n = Normal::new(0.0, self.params.noise_sd_kohm).expect("finite sd");
        (r + n.sample(rng)).max(1e-3)
    }

    pub fn record_sample(&mut self, channel: u8, current_ma: f64) {
        self.ledger[idx(channel)].add(current_ma);
    }

    /// Net charge delivered through `channel`, µC.
    pub fn accumulated_charge_uc(&self, channel: u8) -> f64 {
        self.ledger[idx(channel)].value() * 1000.0 / self.sample_rate_hz as f64
    }
}

fn idx(channel: u8) -> usize {
    assert!((1..=CHANNELS as u8).contains(&channel), "channel {channel} out of range");
    channel as usize - 1
}
