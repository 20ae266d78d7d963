//! Synthetic perceiver standing in for a study participant.
//!
//! This is a parametric toy, not a model of human perception. Each channel
//! has a detection threshold and one or more Gaussian "sensation blobs" on the
//! hand map. A stimulus at or above threshold draws one blob, jitters its
//! centre, pulls the centre toward a concurrent visual highlight and paints
//! the connected level set of the blob as the reported area.
//!
//! The visual pull moves the centre by `gain * exp(-d^2 / (2 sigma^2)) * d`,
//! where `d` is the vector from the tactile centre to the highlight centre,
//! so a distant highlight (wrist-only vibration against a finger highlight)
//! barely moves the sensation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::effects::{EffectSize, Opacity, VisualEffect};
use crate::handmap::{Cell, HandMap, Mask, PointMm, Region};

pub const PERCEIVER_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceiveError {
    #[error("channel {0} has no perceiver profile")]
    UnknownChannel(u8),
    #[error("unsupported perceiver config version {0}")]
    Version(u32),
    #[error("invalid perceiver config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Tapping,
    Vibrating,
    Tingling,
    Pressing,
    SkinStretching,
}

impl Quality {
    pub const ALL: [Quality; 5] = [
        Quality::Tapping,
        Quality::Vibrating,
        Quality::Tingling,
        Quality::Pressing,
        Quality::SkinStretching,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Quality::Tapping => "tapping",
            Quality::Vibrating => "vibrating",
            Quality::Tingling => "tingling",
            Quality::Pressing => "pressing",
            Quality::SkinStretching => "skin-stretching",
        }
    }
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for Quality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quality::ALL
            .into_iter()
            .find(|q| q.keyword() == s)
            .ok_or_else(|| format!("unknown quality keyword {s:?}"))
    }
}

/// What a participant paints after a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensationReport {
    pub area_mask: Mask,
    pub strongest_point: Cell,
    pub quality: Quality,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("painted area is empty")]
    EmptyMask,
    #[error("strongest point lies outside the painted area")]
    StrongestOutsideMask,
}

impl SensationReport {
    pub fn new(area_mask: Mask, strongest_point: Cell, quality: Quality) -> Result<Self, ReportError> {
        let r = SensationReport {
            area_mask,
            strongest_point,
            quality,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.area_mask.is_empty() {
            return Err(ReportError::EmptyMask);
        }
        if !self.area_mask.get(self.strongest_point) {
            return Err(ReportError::StrongestOutsideMask);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Centre in hand-map millimetres.
    pub centroid: [f64; 2],
    /// `[sxx, sxy, syy]` in mm².
    pub covariance: [f64; 3],
    pub weight: f64,
}

impl Blob {
    fn centre(&self) -> PointMm {
        PointMm::new(self.centroid[0], self.centroid[1])
    }

    fn validate(&self) -> Result<(), String> {
        let [sxx, sxy, syy] = self.covariance;
        if !(sxx > 0.0 && syy > 0.0 && sxx * syy - sxy * sxy > 0.0) {
            return Err(format!("covariance {:?} is not positive definite", self.covariance));
        }
        if !(self.weight > 0.0) {
            return Err("blob weight must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub channel: u8,
    pub threshold_ma: f64,
    #[serde(rename = "blob")]
    pub blobs: Vec<Blob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityWeights {
    pub tapping: f64,
    pub vibrating: f64,
    pub tingling: f64,
    pub pressing: f64,
    pub skin_stretching: f64,
}

impl QualityWeights {
    fn as_array(&self) -> [f64; 5] {
        [
            self.tapping,
            self.vibrating,
            self.tingling,
            self.pressing,
            self.skin_stretching,
        ]
    }

    pub fn mode(&self) -> Quality {
        let w = self.as_array();
        let mut best = 0;
        for i in 1..5 {
            if w[i] > w[best] {
                best = i;
            }
        }
        Quality::ALL[best]
    }
}

impl Default for QualityWeights {
    fn default() -> Self {
        QualityWeights {
            tapping: 0.45,
            vibrating: 0.08,
            tingling: 0.25,
            pressing: 0.17,
            skin_stretching: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeGains {
    pub fingertip: f64,
    pub finger: f64,
    pub fingertip_to_wrist: f64,
}

impl Default for SizeGains {
    fn default() -> Self {
        SizeGains {
            fingertip: 0.45,
            finger: 1.0,
            fingertip_to_wrist: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceiverModel {
    pub version: u32,
    /// Maximum fraction of the tactile-to-visual distance the sensation moves.
    pub ventriloquism_gain: f64,
    /// Distance scale of the visual pull, mm.
    pub ventriloquism_falloff_mm: f64,
    /// Pull multiplier for half-opacity highlights.
    pub half_opacity_gain: f64,
    /// Pull multiplier per highlight size.
    pub size_gain: SizeGains,
    /// Painted area is the blob's Mahalanobis disc of this radius.
    pub mask_radius: f64,
    /// Trial-to-trial wander of the blob centre, mm (1 sd per axis).
    pub centroid_jitter_mm: f64,
    pub quality: QualityWeights,
    /// Where a wrist-worn vibration actuator is felt.
    pub wrist: Blob,
    #[serde(rename = "channel")]
    pub channels: Vec<ChannelProfile>,
}

/// Shifted centre after the visual pull.
pub fn ventriloquism_shift(tactile: PointMm, visual: PointMm, gain: f64, falloff_mm: f64) -> PointMm {
    let (dx, dy) = (visual.x - tactile.x, visual.y - tactile.y);
    let d2 = dx * dx + dy * dy;
    let falloff = if falloff_mm.is_infinite() {
        1.0
    } else {
        (-d2 / (2.0 * falloff_mm * falloff_mm)).exp()
    };
    let k = gain.clamp(0.0, 1.0) * falloff;
    PointMm::new(tactile.x + k * dx, tactile.y + k * dy)
}

/// Wrist vibration (80 Hz LRA burst).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrotactileEvent {
    pub frequency_hz: f64,
    pub duration_ms: f64,
    pub locus: Region,
}

pub const VIBRO_FREQUENCY_HZ: f64 = 80.0;
pub const VIBRO_DURATION_MS: f64 = 25.0;

/// Baseline wristband actuator event; zero duration means no event.
pub fn vibrotactile_baseline(duration_ms: f64) -> Option<VibrotactileEvent> {
    (duration_ms > 0.0).then_some(VibrotactileEvent {
        frequency_hz: VIBRO_FREQUENCY_HZ,
        duration_ms,
        locus: Region::Wrist,
    })
}

/// Perception result with the internal centre used to draw it.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub report: SensationReport,
    pub centroid: PointMm,
}

impl PerceiverModel {
    pub fn from_toml(text: &str) -> Result<Self, PerceiveError> {
        let model: PerceiverModel =
            toml::from_str(text).map_err(|e| PerceiveError::Invalid(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("perceiver model serializes")
    }

    pub fn validate(&self) -> Result<(), PerceiveError> {
        if self.version != PERCEIVER_CONFIG_VERSION {
            return Err(PerceiveError::Version(self.version));
        }
        let bad = |m: String| Err(PerceiveError::Invalid(m));
        if !(0.0..=1.0).contains(&self.ventriloquism_gain) {
            return bad("ventriloquism_gain must be in [0, 1]".into());
        }
        if !(self.ventriloquism_falloff_mm > 0.0) {
            return bad("ventriloquism_falloff_mm must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.half_opacity_gain) {
            return bad("half_opacity_gain must be in [0, 1]".into());
        }
        let sg = &self.size_gain;
        if [sg.fingertip, sg.finger, sg.fingertip_to_wrist]
            .iter()
            .any(|g| !(0.0..=1.0).contains(g))
        {
            return bad("size gains must be in [0, 1]".into());
        }
        if !(self.mask_radius > 0.0) || !(self.centroid_jitter_mm >= 0.0) {
            return bad("mask_radius must be positive and centroid_jitter_mm non-negative".into());
        }
        if self.quality.as_array().iter().any(|&w| w < 0.0)
            || self.quality.as_array().iter().sum::<f64>() <= 0.0
        {
            return bad("quality weights must be non-negative and not all zero".into());
        }
        self.wrist.validate().map_err(PerceiveError::Invalid)?;
        let map = HandMap::bundled();
        let (w, h) = (map.width() as f64 * map.scale_mm(), map.height() as f64 * map.scale_mm());
        for p in &self.channels {
            if !(p.threshold_ma > 0.0) || p.blobs.is_empty() {
                return bad(format!("channel {} needs a positive threshold and a blob", p.channel));
            }
            for b in &p.blobs {
                b.validate().map_err(PerceiveError::Invalid)?;
                if !(0.0..=w).contains(&b.centroid[0]) || !(0.0..=h).contains(&b.centroid[1]) {
                    return bad(format!("channel {} blob centre outside the hand map", p.channel));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, channel: u8) -> Result<&ChannelProfile, PerceiveError> {
        self.channels
            .iter()
            .find(|p| p.channel == channel)
            .ok_or(PerceiveError::UnknownChannel(channel))
    }

    pub fn threshold_ma(&self, channel: u8) -> Result<f64, PerceiveError> {
        Ok(self.profile(channel)?.threshold_ma)
    }

    /// Effective w0 for a highlight.
    pub fn pull_gain(&self, visual: &VisualEffect) -> f64 {
        let opacity = match visual.opacity {
            Opacity::Full => 1.0,
            Opacity::Half => self.half_opacity_gain,
        };
        let size = match visual.size {
            EffectSize::Fingertip => self.size_gain.fingertip,
            EffectSize::Finger => self.size_gain.finger,
            EffectSize::FingertipToWrist => self.size_gain.fingertip_to_wrist,
        };
        self.ventriloquism_gain * opacity * size
    }

    pub fn perceive(
        &self,
        channel: u8,
        intensity_ma: f64,
        visual: Option<&VisualEffect>,
        seed: u64,
    ) -> Result<Option<SensationReport>, PerceiveError> {
        Ok(self
            .perceive_detailed(channel, intensity_ma, visual, seed)?
            .map(|p| p.report))
    }

    pub fn perceive_detailed(
        &self,
        channel: u8,
        intensity_ma: f64,
        visual: Option<&VisualEffect>,
        seed: u64,
    ) -> Result<Option<Perception>, PerceiveError> {
        let profile = self.profile(channel)?;
        if !(intensity_ma >= profile.threshold_ma) {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = profile.blobs.iter().map(|b| b.weight).collect();
        let pick = WeightedIndex::new(&weights).expect("validated blob weights");
        let blob = profile.blobs[pick.sample(&mut rng)];
        let spread = (intensity_ma / profile.threshold_ma).clamp(1.0, 2.0);
        Ok(Some(self.render(&blob, spread, visual, &mut rng)))
    }

    /// Sensation from the wrist actuator.
    pub fn perceive_vibrotactile(
        &self,
        event: &VibrotactileEvent,
        visual: Option<&VisualEffect>,
        seed: u64,
    ) -> Option<Perception> {
        if event.duration_ms <= 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(self.render(&self.wrist, 1.0, visual, &mut rng))
    }

    fn render(
        &self,
        blob: &Blob,
        spread: f64,
        visual: Option<&VisualEffect>,
        rng: &mut ChaCha8Rng,
    ) -> Perception {
        let map = HandMap::bundled();
        let mut centre = blob.centre();
        if self.centroid_jitter_mm > 0.0 {
            let n = Normal::new(0.0, self.centroid_jitter_mm).expect("positive sd");
            centre.x += n.sample(rng);
            centre.y += n.sample(rng);
        }
        if let Some(v) = visual {
            centre = ventriloquism_shift(
                centre,
                v.centroid_mm(map),
                self.pull_gain(v),
                self.ventriloquism_falloff_mm,
            );
        }
        let quality_pick = WeightedIndex::new(self.quality.as_array()).expect("validated weights");
        let quality = Quality::ALL[quality_pick.sample(rng)];

        let [sxx, sxy, syy] = blob.covariance.map(|c| c * spread);
        let det = sxx * syy - sxy * sxy;
        let mahalanobis2 = |p: PointMm| {
            let (dx, dy) = (p.x - centre.x, p.y - centre.y);
            (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det
        };
        let mut level = Mask::empty(map.width(), map.height());
        let mut strongest = None;
        let mut best = f64::INFINITY;
        let r2 = self.mask_radius * self.mask_radius;
        for (cell, region) in map.cells() {
            if region == Region::Background {
                continue;
            }
            let m2 = mahalanobis2(map.cell_center_mm(cell));
            if m2 <= r2 {
                level.set(cell, true);
            }
            if m2 < best {
                best = m2;
                strongest = Some(cell);
            }
        }
        let strongest = strongest.expect("hand map has foreground cells");
        level.set(strongest, true);
        let area = level.component(strongest);
        Perception {
            report: SensationReport {
                area_mask: area,
                strongest_point: strongest,
                quality,
            },
            centroid: centre,
        }
    }

    /// Per-participant variant: thresholds and blob centres perturbed
    /// deterministically from `seed`.
    pub fn participant(&self, participant: u32, seed: u64) -> PerceiverModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(participant as u64 + 1)));
        let log_sd = Normal::<f64>::new(0.0, 0.3).expect("positive sd");
        let offset = Normal::<f64>::new(0.0, 3.0).expect("positive sd");
        let mut m = self.clone();
        for p in &mut m.channels {
            p.threshold_ma = (p.threshold_ma * log_sd.sample(&mut rng).exp()).clamp(0.2, 4.5);
            // Thresholds land on the 0.01 mA grid.
            p.threshold_ma = (p.threshold_ma * 100.0).round() / 100.0;
            for b in &mut p.blobs {
                b.centroid[0] += offset.sample(&mut rng);
                b.centroid[1] += offset.sample(&mut rng);
            }
        }
        m
    }
}

fn blob(x: f64, y: f64, sxx: f64, sxy: f64, syy: f64, weight: f64) -> Blob {
    Blob {
        centroid: [x, y],
        covariance: [sxx, sxy, syy],
        weight,
    }
}

impl Default for PerceiverModel {
    /// Reference fixture geometry. Channel 5 refers mostly to the thumb and
    /// channel 8 toward the index finger; 12-15 stay on the ulnar palm and
    /// wrist; 1-4 (radial, dorsal) only reach the wrist.
    fn default() -> Self {
        let ch = |channel: u8, threshold_ma: f64, blobs: Vec<Blob>| ChannelProfile {
            channel,
            threshold_ma,
            blobs,
        };
        let dorsal = |c| ch(c, 2.5, vec![blob(62.0, 164.0, 60.0, 0.0, 40.0, 1.0)]);
        PerceiverModel {
            version: PERCEIVER_CONFIG_VERSION,
            ventriloquism_gain: 0.95,
            ventriloquism_falloff_mm: 28.0,
            half_opacity_gain: 0.85,
            size_gain: SizeGains::default(),
            mask_radius: 1.5,
            centroid_jitter_mm: 3.0,
            quality: QualityWeights::default(),
            wrist: blob(62.0, 166.0, 80.0, 0.0, 40.0, 1.0),
            channels: vec![
                dorsal(1),
                dorsal(2),
                dorsal(3),
                dorsal(4),
                ch(
                    5,
                    0.65,
                    vec![
                        blob(30.0, 114.0, 110.0, 30.0, 160.0, 0.55),
                        blob(40.0, 126.0, 120.0, 0.0, 120.0, 0.3),
                        blob(18.0, 98.0, 60.0, 20.0, 90.0, 0.15),
                    ],
                ),
                ch(
                    6,
                    0.7,
                    vec![
                        blob(32.0, 104.0, 110.0, 0.0, 140.0, 0.6),
                        blob(44.0, 120.0, 140.0, 0.0, 140.0, 0.4),
                    ],
                ),
                ch(7, 0.72, vec![blob(42.0, 108.0, 130.0, 0.0, 150.0, 1.0)]),
                ch(
                    8,
                    0.76,
                    vec![
                        blob(40.0, 94.0, 80.0, 0.0, 140.0, 0.5),
                        blob(46.0, 112.0, 150.0, 0.0, 150.0, 0.35),
                        blob(38.0, 80.0, 40.0, 0.0, 90.0, 0.15),
                    ],
                ),
                ch(9, 0.8, vec![blob(54.0, 98.0, 110.0, 0.0, 160.0, 1.0)]),
                ch(10, 0.85, vec![blob(62.0, 104.0, 130.0, 0.0, 150.0, 1.0)]),
                ch(11, 0.9, vec![blob(72.0, 104.0, 120.0, 0.0, 150.0, 1.0)]),
                ch(12, 1.2, vec![blob(82.0, 118.0, 130.0, 0.0, 180.0, 1.0)]),
                ch(13, 1.4, vec![blob(84.0, 132.0, 120.0, 0.0, 150.0, 1.0)]),
                ch(14, 1.6, vec![blob(76.0, 146.0, 120.0, 0.0, 110.0, 1.0)]),
                ch(15, 1.8, vec![blob(66.0, 156.0, 110.0, 0.0, 80.0, 1.0)]),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::TargetFinger;

    fn quiet() -> PerceiverModel {
        PerceiverModel {
            centroid_jitter_mm: 0.0,
            ..PerceiverModel::default()
        }
    }

    #[test]
    fn default_model_validates() {
        PerceiverModel::default().validate().unwrap();
    }

    #[test]
    fn sub_threshold_is_silent() {
        let m = PerceiverModel::default();
        assert_eq!(m.perceive(5, 0.5, None, 1).unwrap(), None);
        assert!(m.perceive(5, 0.65, None, 1).unwrap().is_some());
    }

    #[test]
    fn unknown_channel() {
        assert_eq!(
            PerceiverModel::default().perceive(16, 1.0, None, 1),
            Err(PerceiveError::UnknownChannel(16))
        );
    }

    #[test]
    fn no_visual_means_no_shift() {
        let m = PerceiverModel {
            channels: vec![ChannelProfile {
                channel: 5,
                threshold_ma: 0.65,
                blobs: vec![blob(24.0, 112.0, 90.0, 30.0, 160.0, 1.0)],
            }],
            ..quiet()
        };
        let p = m.perceive_detailed(5, 1.0, None, 3).unwrap().unwrap();
        assert_eq!(p.centroid, PointMm::new(24.0, 112.0));
    }

    #[test]
    fn full_pull_lands_on_visual_centroid() {
        let t = PointMm::new(24.0, 112.0);
        let v = PointMm::new(15.0, 95.0);
        assert_eq!(ventriloquism_shift(t, v, 1.0, f64::INFINITY), v);
        let far = ventriloquism_shift(t, v, 1.0, 1e12);
        assert!(far.distance(v) < 1e-9);
        assert_eq!(ventriloquism_shift(t, v, 0.0, 35.0), t);
    }

    #[test]
    fn reports_are_valid_and_connected() {
        let m = PerceiverModel::default();
        for ch in 5..=15u8 {
            for seed in 0..20 {
                let v = VisualEffect::new(EffectSize::Finger, Opacity::Full, TargetFinger::Index);
                if let Some(r) = m.perceive(ch, 4.0, Some(&v), seed).unwrap() {
                    r.validate().unwrap();
                    assert_eq!(r.area_mask.component_count(), 1);
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let m = PerceiverModel::default();
        let a = m.perceive(8, 1.0, None, 42).unwrap();
        let b = m.perceive(8, 1.0, None, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vibro_baseline_event() {
        let e = vibrotactile_baseline(VIBRO_DURATION_MS).unwrap();
        assert_eq!((e.frequency_hz, e.duration_ms), (80.0, 25.0));
        assert_eq!(vibrotactile_baseline(0.0), None);
    }

    #[test]
    fn wrist_sensation_barely_follows_finger_highlight() {
        let m = PerceiverModel::default();
        let map = HandMap::bundled();
        let wrist = PointMm::new(m.wrist.centroid[0], m.wrist.centroid[1]);
        for t in TargetFinger::BOTH {
            let v = VisualEffect::new(EffectSize::Finger, Opacity::Full, t).centroid_mm(map);
            let shifted = ventriloquism_shift(wrist, v, m.ventriloquism_gain, m.ventriloquism_falloff_mm);
            // oracle: gain * exp(-d^2 / (2 s^2)) evaluated by hand below
            let d = wrist.distance(v);
            let frac = m.ventriloquism_gain * (-(d * d) / (2.0 * m.ventriloquism_falloff_mm * m.ventriloquism_falloff_mm)).exp();
            assert!(frac < 0.02, "{t}: d={d} frac={frac}");
            assert!(shifted.distance(wrist) < 0.02 * d);
        }
    }

    #[test]
    fn quality_mode_is_tapping() {
        assert_eq!(QualityWeights::default().mode(), Quality::Tapping);
    }

    #[test]
    fn toml_round_trip() {
        let m = PerceiverModel::default();
        let back = PerceiverModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.clone();
        bad.version = 2;
        assert!(matches!(
            PerceiverModel::from_toml(&bad.to_toml()),
            Err(PerceiveError::Version(2))
        ));
    }

    #[test]
    fn report_validation() {
        let map = HandMap::bundled();
        let mask = map.region_mask(Region::Thumb);
        let inside = mask.iter_set().next().unwrap();
        assert!(SensationReport::new(mask.clone(), inside, Quality::Tapping).is_ok());
        assert_eq!(
            SensationReport::new(mask, Cell::new(0, 0), Quality::Tapping),
            Err(ReportError::StrongestOutsideMask)
        );
        assert_eq!(
            SensationReport::new(Mask::empty(60, 90), Cell::new(0, 0), Quality::Tapping),
            Err(ReportError::EmptyMask)
        );
    }
}
