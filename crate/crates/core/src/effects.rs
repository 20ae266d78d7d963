//! Visual highlight commands paired with stimulation.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::handmap::{HandMap, PointMm, Region};

/// Highlight duration for the moving fingertip-to-wrist effect, aligned to
/// one 45 ms stimulus.
pub const SWEEP_DURATION_MS: f64 = 45.0;

/// Fraction of the finger length, from the tip, covered by the fingertip
/// highlight.
pub const FINGERTIP_FRACTION: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

pub const LIGHT_BLUE: Rgb = Rgb(0x7F, 0xC8, 0xFF);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFinger {
    Thumb,
    Index,
}

impl TargetFinger {
    pub const BOTH: [TargetFinger; 2] = [TargetFinger::Thumb, TargetFinger::Index];

    pub fn region(self) -> Region {
        match self {
            TargetFinger::Thumb => Region::Thumb,
            TargetFinger::Index => Region::Index,
        }
    }
}

impl fmt::Display for TargetFinger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetFinger::Thumb => "thumb",
            TargetFinger::Index => "index",
        })
    }
}

impl FromStr for TargetFinger {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thumb" => Ok(TargetFinger::Thumb),
            "index" => Ok(TargetFinger::Index),
            _ => Err(format!("unknown finger {s:?} (thumb|index)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Fingertip,
    Finger,
    FingertipToWrist,
}

impl EffectSize {
    pub const ALL: [EffectSize; 3] = [
        EffectSize::Fingertip,
        EffectSize::Finger,
        EffectSize::FingertipToWrist,
    ];
}

impl fmt::Display for EffectSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectSize::Fingertip => "fingertip",
            EffectSize::Finger => "finger",
            EffectSize::FingertipToWrist => "fingertip-to-wrist",
        })
    }
}

impl FromStr for EffectSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fingertip" => Ok(EffectSize::Fingertip),
            "finger" => Ok(EffectSize::Finger),
            "fingertip-to-wrist" | "fingertip_to_wrist" => Ok(EffectSize::FingertipToWrist),
            _ => Err(format!(
                "unknown visual size {s:?} (fingertip|finger|fingertip-to-wrist)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opacity {
    Full,
    Half,
}

impl Opacity {
    pub const ALL: [Opacity; 2] = [Opacity::Full, Opacity::Half];

    pub fn alpha(self) -> f64 {
        match self {
            Opacity::Full => 1.0,
            Opacity::Half => 0.5,
        }
    }
}

impl fmt::Display for Opacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Opacity::Full => "full",
            Opacity::Half => "half",
        })
    }
}

impl FromStr for Opacity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Opacity::Full),
            "half" => Ok(Opacity::Half),
            _ => Err(format!("unknown opacity {s:?} (full|half)")),
        }
    }
}

/// Visual condition without a target finger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VisualCondition {
    pub size: EffectSize,
    pub opacity: Opacity,
}

impl VisualCondition {
    /// The 3 sizes x 2 opacities grid.
    pub fn grid() -> Vec<VisualCondition> {
        EffectSize::ALL
            .into_iter()
            .flat_map(|size| Opacity::ALL.into_iter().map(move |opacity| VisualCondition { size, opacity }))
            .collect()
    }
}

impl fmt::Display for VisualCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.size, self.opacity)
    }
}

/// Renderer-side animation of a moving highlight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub from: Region,
    pub to: Region,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualEffect {
    pub size: EffectSize,
    pub opacity: Opacity,
    pub target: TargetFinger,
    pub color: Rgb,
    pub sweep: Option<Sweep>,
}

impl VisualEffect {
    pub fn new(size: EffectSize, opacity: Opacity, target: TargetFinger) -> Self {
        let sweep = (size == EffectSize::FingertipToWrist).then_some(Sweep {
            from: target.region(),
            to: Region::Wrist,
            duration_ms: SWEEP_DURATION_MS,
        });
        VisualEffect {
            size,
            opacity,
            target,
            color: LIGHT_BLUE,
            sweep,
        }
    }

    pub fn from_condition(c: VisualCondition, target: TargetFinger) -> Self {
        Self::new(c.size, c.opacity, target)
    }

    pub fn condition(&self) -> VisualCondition {
        VisualCondition {
            size: self.size,
            opacity: self.opacity,
        }
    }

    /// Time-averaged centre of the highlighted area on the hand map.
    pub fn centroid_mm(&self, map: &HandMap) -> PointMm {
        let region = self.target.region();
        let axis = map
            .finger_axis(region)
            .expect("hand map declares thumb and index axes");
        let fingertip = axis.tip.lerp(axis.base, FINGERTIP_FRACTION / 2.0);
        match self.size {
            EffectSize::Fingertip => fingertip,
            EffectSize::Finger => map
                .region_centroid_mm(region)
                .unwrap_or_else(|| axis.tip.lerp(axis.base, 0.5)),
            EffectSize::FingertipToWrist => {
                let wrist = map
                    .region_centroid_mm(Region::Wrist)
                    .unwrap_or(axis.base);
                fingertip.lerp(wrist, 0.5)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_condition_grid() {
        let g = VisualCondition::grid();
        assert_eq!(g.len(), 6);
        let unique: std::collections::BTreeSet<_> = g.iter().collect();
        assert_eq!(unique.len(), 6);
    }

    #[test]
    fn sweep_only_for_moving_effect() {
        assert!(VisualEffect::new(EffectSize::Finger, Opacity::Full, TargetFinger::Index)
            .sweep
            .is_none());
        let s = VisualEffect::new(EffectSize::FingertipToWrist, Opacity::Half, TargetFinger::Thumb)
            .sweep
            .unwrap();
        assert_eq!(s.duration_ms, 45.0);
        assert_eq!(s.to, Region::Wrist);
    }

    #[test]
    fn centroids_lie_in_expected_regions() {
        let map = HandMap::bundled();
        for t in TargetFinger::BOTH {
            let tip = VisualEffect::new(EffectSize::Fingertip, Opacity::Full, t).centroid_mm(map);
            let finger = VisualEffect::new(EffectSize::Finger, Opacity::Full, t).centroid_mm(map);
            assert_eq!(map.region_at(map.cell_at_mm(tip)), t.region());
            assert_eq!(map.region_at(map.cell_at_mm(finger)), t.region());
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("fingertip-to-wrist".parse::<EffectSize>().unwrap(), EffectSize::FingertipToWrist);
        assert_eq!("half".parse::<Opacity>().unwrap(), Opacity::Half);
        assert!("quarter".parse::<Opacity>().is_err());
    }
}
