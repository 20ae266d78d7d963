//! Library side of the `tactwrist` binary, so the subcommands and the
//! console backend can be driven from tests.

pub mod analyze;
pub mod messages;
pub mod render;
pub mod run;
pub mod serve;
pub mod session;
pub mod waveform;

use std::path::Path;

use anyhow::Context;
use tactwrist_core::sim::PerceiverModel;

/// Default perceiver, or one loaded from a TOML file that must exist.
pub fn load_perceiver(path: Option<&Path>) -> anyhow::Result<PerceiverModel> {
    match path {
        None => Ok(PerceiverModel::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading perceiver config {}", p.display()))?;
            PerceiverModel::from_toml(&text).with_context(|| format!("parsing perceiver config {}", p.display()))
        }
    }
}
