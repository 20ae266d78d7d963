//! Hand-pose ingestion and UI contact detection.
//!
//! Buttons are pressed with the index fingertip. Grabbables and sliders are
//! pinched: the pinch point (midpoint of thumb and index tips) must be inside
//! the element while the pinch distance is below [`PINCH_THRESHOLD_MM`].
//! Leaving requires moving [`HYSTERESIS_MM`] beyond the entry condition, so
//! tracking jitter at a boundary does not chatter.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const HYSTERESIS_MM: f64 = 2.0;
pub const PINCH_THRESHOLD_MM: f64 = 15.0;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub timestamp_ms: f64,
    pub thumb_tip: Vec3,
    pub index_tip: Vec3,
    pub pinch_distance_mm: f64,
}

impl HandPose {
    /// Pose with pinch distance taken from the tip positions.
    pub fn from_tips(timestamp_ms: f64, thumb_tip: Vec3, index_tip: Vec3) -> Self {
        HandPose {
            timestamp_ms,
            thumb_tip,
            index_tip,
            pinch_distance_mm: dist(thumb_tip, index_tip),
        }
    }

    pub fn pinch_point(&self) -> Vec3 {
        [
            (self.thumb_tip[0] + self.index_tip[0]) / 2.0,
            (self.thumb_tip[1] + self.index_tip[1]) / 2.0,
            (self.thumb_tip[2] + self.index_tip[2]) / 2.0,
        ]
    }
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    Button,
    Slider {
        detents: u32,
        travel_mm: f64,
        /// Direction of travel; normalised on construction.
        axis: Vec3,
    },
    Grabbable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementState {
    Idle,
    Contacted,
    Grabbed,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("element {0}: extents must be positive")]
    BadExtent(String),
    #[error("element {0}: slider needs at least 2 detents, positive travel and a non-zero axis")]
    BadSlider(String),
    #[error("pose at {got} ms is earlier than previous pose at {previous} ms")]
    NonMonotone { previous: f64, got: f64 },
    #[error("pose stream line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Axis-aligned box element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UIElement {
    pub id: String,
    pub kind: ElementKind,
    pub center: Vec3,
    pub half_extent: Vec3,
}

impl UIElement {
    pub fn new(id: impl Into<String>, kind: ElementKind, center: Vec3, half_extent: Vec3) -> Result<Self, PoseError> {
        let id = id.into();
        if half_extent.iter().any(|&e| !(e > 0.0)) {
            return Err(PoseError::BadExtent(id));
        }
        let kind = match kind {
            ElementKind::Slider { detents, travel_mm, axis } => {
                let n = dot(axis, axis).sqrt();
                if detents < 2 || !(travel_mm > 0.0) || !(n > 0.0) {
                    return Err(PoseError::BadSlider(id));
                }
                ElementKind::Slider {
                    detents,
                    travel_mm,
                    axis: [axis[0] / n, axis[1] / n, axis[2] / n],
                }
            }
            k => k,
        };
        Ok(UIElement { id, kind, center, half_extent })
    }

    pub fn button(id: impl Into<String>, center: Vec3, half_extent: Vec3) -> Result<Self, PoseError> {
        Self::new(id, ElementKind::Button, center, half_extent)
    }

    pub fn grabbable(id: impl Into<String>, center: Vec3, half_extent: Vec3) -> Result<Self, PoseError> {
        Self::new(id, ElementKind::Grabbable, center, half_extent)
    }

    pub fn slider(
        id: impl Into<String>,
        center: Vec3,
        half_extent: Vec3,
        detents: u32,
        travel_mm: f64,
        axis: Vec3,
    ) -> Result<Self, PoseError> {
        Self::new(id, ElementKind::Slider { detents, travel_mm, axis }, center, half_extent)
    }

    fn contains(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|k| (p[k] - self.center[k]).abs() <= self.half_extent[k] + margin)
    }

    fn uses_pinch(&self) -> bool {
        !matches!(self.kind, ElementKind::Button)
    }

    /// Detent positions along the travel, including both ends.
    pub fn detent_positions(&self) -> Vec<f64> {
        match self.kind {
            ElementKind::Slider { detents, travel_mm, .. } => (0..detents)
                .map(|k| k as f64 * travel_mm / (detents - 1) as f64)
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactFinger {
    Thumb,
    Index,
    Pinch,
}

impl fmt::Display for ContactFinger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContactFinger::Thumb => "thumb",
            ContactFinger::Index => "index",
            ContactFinger::Pinch => "pinch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Contact,
    Release,
    DetentCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: ContactKind,
    pub element: String,
    pub finger: ContactFinger,
    pub timestamp_ms: f64,
    /// Detent index for crossings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detent: Option<u32>,
}

#[derive(Debug, Clone)]
struct Active {
    element: usize,
    /// Slider: knob position and the pinch projection at the last pose.
    knob_mm: f64,
    last_proj: f64,
}

/// Stateful detector; feed poses in time order.
#[derive(Debug, Clone)]
pub struct EventDetector {
    elements: Vec<UIElement>,
    states: Vec<ElementState>,
    knobs: Vec<f64>,
    index_contact: Option<Active>,
    pinch_contact: Option<Active>,
    last_ts: Option<f64>,
}

impl EventDetector {
    pub fn new(elements: Vec<UIElement>) -> Self {
        let n = elements.len();
        EventDetector {
            elements,
            states: vec![ElementState::Idle; n],
            knobs: vec![0.0; n],
            index_contact: None,
            pinch_contact: None,
            last_ts: None,
        }
    }

    pub fn elements(&self) -> &[UIElement] {
        &self.elements
    }

    pub fn state(&self, id: &str) -> Option<ElementState> {
        self.elements.iter().position(|e| e.id == id).map(|i| self.states[i])
    }

    /// Current slider knob position, mm from the start of travel.
    pub fn knob_mm(&self, id: &str) -> Option<f64> {
        self.elements.iter().position(|e| e.id == id).map(|i| self.knobs[i])
    }

    fn nearest(&self, p: Vec3, pinch: bool) -> Option<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter(|(_, e)| e.uses_pinch() == pinch && e.contains(p, 0.0))
            .min_by(|(_, a), (_, b)| dist(a.center, p).total_cmp(&dist(b.center, p)))
            .map(|(i, _)| i)
    }

    fn event(&self, kind: ContactKind, i: usize, finger: ContactFinger, ts: f64, detent: Option<u32>) -> ContactEvent {
        ContactEvent {
            kind,
            element: self.elements[i].id.clone(),
            finger,
            timestamp_ms: ts,
            detent,
        }
    }

    pub fn feed(&mut self, pose: &HandPose) -> Result<Vec<ContactEvent>, PoseError> {
        let ts = pose.timestamp_ms;
        if let Some(prev) = self.last_ts {
            if ts < prev {
                return Err(PoseError::NonMonotone { previous: prev, got: ts });
            }
        }
        self.last_ts = Some(ts);
        let mut out = Vec::new();

        // Index fingertip against buttons.
        let tip = pose.index_tip;
        match self.index_contact.take() {
            Some(a) => {
                if self.elements[a.element].contains(tip, HYSTERESIS_MM) {
                    self.index_contact = Some(a);
                } else {
                    self.states[a.element] = ElementState::Idle;
                    out.push(self.event(ContactKind::Release, a.element, ContactFinger::Index, ts, None));
                }
            }
            None => {
                if let Some(i) = self.nearest(tip, false) {
                    self.states[i] = ElementState::Contacted;
                    self.index_contact = Some(Active {
                        element: i,
                        knob_mm: 0.0,
                        last_proj: 0.0,
                    });
                    out.push(self.event(ContactKind::Contact, i, ContactFinger::Index, ts, None));
                }
            }
        }

        // Pinch against grabbables and sliders.
        let p = pose.pinch_point();
        match self.pinch_contact.take() {
            Some(mut a) => {
                let e = &self.elements[a.element];
                let held = pose.pinch_distance_mm <= PINCH_THRESHOLD_MM + HYSTERESIS_MM;
                let slider = matches!(e.kind, ElementKind::Slider { .. });
                // A grabbed slider knob follows the hand; only un-pinching lets go.
                if held && (slider || e.contains(p, HYSTERESIS_MM)) {
                    if let ElementKind::Slider { travel_mm, axis, .. } = e.kind {
                        let proj = dot(p, axis);
                        let new = (a.knob_mm + proj - a.last_proj).clamp(0.0, travel_mm);
                        for (k, d) in e.detent_positions().into_iter().enumerate() {
                            let crossed = if new > a.knob_mm {
                                a.knob_mm < d && d <= new
                            } else {
                                new <= d && d < a.knob_mm
                            };
                            if crossed {
                                out.push(self.event(
                                    ContactKind::DetentCrossing,
                                    a.element,
                                    ContactFinger::Pinch,
                                    ts,
                                    Some(k as u32),
                                ));
                            }
                        }
                        a.knob_mm = new;
                        a.last_proj = proj;
                        self.knobs[a.element] = new;
                    }
                    self.pinch_contact = Some(a);
                } else {
                    self.states[a.element] = ElementState::Idle;
                    out.push(self.event(ContactKind::Release, a.element, ContactFinger::Pinch, ts, None));
                }
            }
            None => {
                if pose.pinch_distance_mm < PINCH_THRESHOLD_MM {
                    if let Some(i) = self.nearest(p, true) {
                        let e = &self.elements[i];
                        let last_proj = match e.kind {
                            ElementKind::Slider { axis, .. } => dot(p, axis),
                            _ => 0.0,
                        };
                        self.states[i] = ElementState::Grabbed;
                        self.pinch_contact = Some(Active {
                            element: i,
                            knob_mm: self.knobs[i],
                            last_proj,
                        });
                        out.push(self.event(ContactKind::Contact, i, ContactFinger::Pinch, ts, None));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs a whole pose stream through a fresh detector.
pub fn detect_events(poses: &[HandPose], elements: &[UIElement]) -> Result<Vec<ContactEvent>, PoseError> {
    let mut d = EventDetector::new(elements.to_vec());
    let mut out = Vec::new();
    for p in poses {
        out.extend(d.feed(p)?);
    }
    Ok(out)
}

/// Parses a pose replay file: one JSON [`HandPose`] per line, `#` comments.
pub fn parse_pose_stream(text: &str) -> Result<Vec<HandPose>, PoseError> {
    let mut out: Vec<HandPose> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pose: HandPose = serde_json::from_str(line).map_err(|e| PoseError::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if pose.timestamp_ms < prev.timestamp_ms {
                return Err(PoseError::NonMonotone {
                    previous: prev.timestamp_ms,
                    got: pose.timestamp_ms,
                });
            }
        }
        out.push(pose);
    }
    Ok(out)
}
