//! `analyze`: TrialRecord logs → report text, JSON, CSV tables and heatmaps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use tactwrist_analysis::report::{analyze, heatmaps, AnalysisConfig, AnalysisReport};
use tactwrist_core::handmap::HandMap;
use tactwrist_core::render::record::{read_log, LogError, TrialRecord};

/// Reads and concatenates logs. Schema problems name the file and line.
pub fn load_logs(paths: &[PathBuf]) -> anyhow::Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match read_log(&text) {
            Ok(rs) => records.extend(rs),
            Err(LogError::Line { line, reason }) => bail!("{}:{line}: {reason}", path.display()),
            Err(LogError::Empty) => bail!("{}: no trial records", path.display()),
        }
    }
    if records.is_empty() {
        bail!("no logs given");
    }
    Ok(records)
}

pub fn run_analysis(records: &[TrialRecord], cfg: AnalysisConfig) -> anyhow::Result<AnalysisReport> {
    Ok(analyze(records, HandMap::bundled(), cfg)?)
}

/// Writes every report artifact under `out`; returns the paths written.
pub fn write_report(report: &AnalysisReport, records: &[TrialRecord], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let map = HandMap::bundled();
    let hm_dir = out.join("heatmaps");
    std::fs::create_dir_all(&hm_dir).with_context(|| format!("creating {}", hm_dir.display()))?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (out.join("report.txt"), report.to_text()),
        (out.join("report.json"), serde_json::to_string_pretty(report)? + "\n"),
        (out.join("study1_channels.csv"), report.study1_csv()),
        (out.join("study2_conditions.csv"), report.study2_csv()),
        (out.join("stats.csv"), report.stats_csv()),
    ];
    for (name, h) in heatmaps(records, map) {
        files.push((hm_dir.join(format!("{name}.csv")), h.to_csv()));
        files.push((hm_dir.join(format!("{name}.svg")), h.to_svg(map, &name)));
    }
    let mut written = Vec::with_capacity(files.len());
    for (path, body) in files {
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
