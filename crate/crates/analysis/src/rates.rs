//! Hand-map scoring of individual reports.

use tactwrist_core::handmap::{HandMap, HandMapError, Mask, Region};
use tactwrist_core::sim::SensationReport;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("no reports to score")]
    NoReports,
    #[error(transparent)]
    Map(#[from] HandMapError),
}

/// Percent of the painted hand area inside `region`.
pub fn in_region_rate(mask: &Mask, region: Region, map: &HandMap) -> Result<f64, HandMapError> {
    map.in_region_rate(mask, region)
}

/// Fraction (0..=1) of reports whose strongest point lies in `region`.
pub fn strongest_point_rate<'a>(
    reports: impl IntoIterator<Item = &'a SensationReport>,
    region: Region,
    map: &HandMap,
) -> Result<f64, RateError> {
    let (mut n, mut hit) = (0usize, 0usize);
    for r in reports {
        map.check_dims(&r.area_mask)?;
        n += 1;
        hit += (map.region_at(r.strongest_point) == region) as usize;
    }
    if n == 0 {
        return Err(RateError::NoReports);
    }
    Ok(hit as f64 / n as f64)
}

/// Trial-level rate where "nothing felt" scores 0 %.
pub fn trial_rate(report: Option<&SensationReport>, region: Region, map: &HandMap) -> f64 {
    report
        .and_then(|r| map.in_region_rate(&r.area_mask, region).ok())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample SD (n-1); 0 for a single value.
    pub sd: f64,
}

pub fn summarize(v: &[f64]) -> Option<Summary> {
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { n, mean, sd })
}
