//! `render`: replay a pose stream through the event detector and renderer.

use anyhow::Context;
use tactwrist_core::effects::{TargetFinger, VisualCondition};
use tactwrist_core::render::calibration::{run_calibration, threshold_responder};
use tactwrist_core::render::engine::{EmittedPair, RenderConfig, Renderer};
use tactwrist_core::render::pose::{detect_events, parse_pose_stream, UIElement};
use tactwrist_core::render::study::{FingerChannels, ProtocolConfig};
use tactwrist_core::render::DevicePolicy;
use tactwrist_core::sim::PerceiverModel;

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub policy: DevicePolicy,
    pub visual: Option<VisualCondition>,
    pub participant: u32,
    pub seed: u64,
    pub perceiver: PerceiverModel,
}

/// One 30 mm button at the origin, used when no scene file is given.
pub fn default_scene() -> Vec<UIElement> {
    vec![UIElement::button("button", [0.0; 3], [15.0; 3]).expect("valid default button")]
}

/// Scene file: a JSON array of UI elements.
pub fn parse_scene(text: &str) -> anyhow::Result<Vec<UIElement>> {
    serde_json::from_str(text).context("scene must be a JSON array of UI elements")
}

/// Calibrates both fingers against the simulated participant, then pairs
/// every contact event with a stimulus and a highlight.
pub fn render_stream(poses_text: &str, scene: &[UIElement], opts: &RenderOptions) -> anyhow::Result<Vec<EmittedPair>> {
    let poses = parse_pose_stream(poses_text)?;
    let events = detect_events(&poses, scene)?;
    let mut renderer = Renderer::new(RenderConfig {
        policy: opts.policy,
        visual: opts.visual,
        ..RenderConfig::default()
    });
    if opts.policy == DevicePolicy::Electro {
        let model = opts.perceiver.participant(opts.participant, opts.seed);
        let channels = FingerChannels::default();
        let mode = ProtocolConfig::default().calibration_mode;
        for finger in TargetFinger::BOTH {
            let ch = channels.get(finger);
            let threshold = model.threshold_ma(ch)?;
            renderer.set_calibration(run_calibration(finger, ch, mode, threshold_responder(threshold))?);
        }
    }
    Ok(renderer.render_all(&events)?)
}

pub fn pairs_to_lines(pairs: &[EmittedPair]) -> anyhow::Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}
