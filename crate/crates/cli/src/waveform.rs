//! `waveform`: plot one stimulus to CSV and SVG.

use std::path::{Path, PathBuf};

use anyhow::Context;
use tactwrist_core::stim::{net_charge, synth_monophasic, synth_stimulus, Polarity, PulseSpec, WaveformSamples, DEFAULT_SAMPLE_RATE_HZ, DEFAULT_STIM_WIDTH_MS};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformArgs {
    pub amplitude_ma: f64,
    pub monophasic: bool,
    pub width_ms: f64,
    pub polarity: Polarity,
    pub sample_rate_hz: u32,
}

impl Default for WaveformArgs {
    fn default() -> Self {
        WaveformArgs {
            amplitude_ma: 1.6,
            monophasic: false,
            width_ms: DEFAULT_STIM_WIDTH_MS,
            polarity: Polarity::Cathodic,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub name: &'static str,
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub net_charge_uc: f64,
}

pub fn synthesize(args: &WaveformArgs) -> anyhow::Result<WaveformSamples> {
    if args.monophasic {
        return Ok(synth_monophasic(args.amplitude_ma, args.width_ms, args.sample_rate_hz)?);
    }
    let spec = PulseSpec::builder(args.amplitude_ma)
        .polarity(args.polarity)
        .stim_width_ms(args.width_ms)
        .build()?;
    Ok(synth_stimulus(&spec, args.sample_rate_hz)?)
}

fn write_pair(out: &Path, stem: &'static str, w: &WaveformSamples, polarity: Polarity) -> anyhow::Result<Rendered> {
    let csv = out.join(format!("{stem}.csv"));
    let svg = out.join(format!("{stem}.svg"));
    std::fs::write(&csv, w.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    std::fs::write(&svg, w.to_svg(polarity)).with_context(|| format!("writing {}", svg.display()))?;
    Ok(Rendered {
        name: stem,
        csv,
        svg,
        net_charge_uc: net_charge(w),
    })
}

/// Writes `waveform.{csv,svg}` for the requested stimulus. A balanced
/// request also writes the monophasic pulse of the same amplitude and
/// width as `monophasic.{csv,svg}` for comparison.
pub fn write_waveforms(args: &WaveformArgs, out: &Path) -> anyhow::Result<Vec<Rendered>> {
    let main = synthesize(args)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let polarity = if args.monophasic { Polarity::Cathodic } else { args.polarity };
    let mut files = vec![write_pair(out, "waveform", &main, polarity)?];
    if !args.monophasic {
        let mono = synth_monophasic(args.amplitude_ma, args.width_ms, args.sample_rate_hz)?;
        files.push(write_pair(out, "monophasic", &mono, Polarity::Cathodic)?);
    }
    Ok(files)
}

/// Charge of a `time_ms,current_mA` CSV, by the rectangle rule.
pub fn csv_charge_uc(csv: &str) -> anyhow::Result<f64> {
    let mut rows = Vec::new();
    for (n, line) in csv.lines().enumerate().skip(1) {
        let (t, i) = line.split_once(',').with_context(|| format!("line {}: expected two columns", n + 1))?;
        rows.push((t.parse::<f64>()?, i.parse::<f64>()?));
    }
    if rows.len() < 2 {
        anyhow::bail!("need at least two samples");
    }
    // sample times are printed rounded; recover the integer rate
    let rate = (1000.0 / (rows[1].0 - rows[0].0)).round();
    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(tactwrist_core::exact::exact_sum(&values) * 1000.0 / rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monophasic_charge() {
        let args = WaveformArgs {
            amplitude_ma: 1.0,
            monophasic: true,
            ..WaveformArgs::default()
        };
        assert_eq!(net_charge(&synthesize(&args).unwrap()), -5.0);
    }

    #[test]
    fn over_limit_is_rejected() {
        let args = WaveformArgs {
            amplitude_ma: 9.0,
            ..WaveformArgs::default()
        };
        assert!(synthesize(&args).is_err());
    }
}
