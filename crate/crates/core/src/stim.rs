//! Stimulus waveform synthesis and charge accounting.
//!
//! Sign convention: samples are the current through the selected stimulation
//! electrode in mA, cathodic current is negative and anodic current positive.
//!
//! A charge-balanced stimulus is a long, low priming phase of the opposite
//! polarity followed immediately by the short stimulation phase. With the
//! defaults (5 ms stimulation, 40 ms priming at 1/8 amplitude) both phases
//! carry the same charge and the stimulus lasts 45 ms.
//!
//! Sample rates must place both phase boundaries on whole samples (for the
//! defaults: any multiple of 200 Hz, at least 1 kHz). Charge is integrated
//! with exact summation so balanced stimuli integrate to exactly zero.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::exact::ExactSum;

/// Software limit on requested stimulation amplitude.
pub const MAX_AMPLITUDE_MA: f64 = 4.0;
/// Current limiting diode: nothing above this ever leaves the stimulator.
pub const HARDWARE_CAP_MA: f64 = 4.5;
pub const MIN_SAMPLE_RATE_HZ: u32 = 1000;
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 10_000;

pub const DEFAULT_STIM_WIDTH_MS: f64 = 5.0;
pub const DEFAULT_PRIMING_WIDTH_MS: f64 = 40.0;
pub const DEFAULT_PRIMING_RATIO: f64 = 0.125;
pub const DEFAULT_GAP_MS: f64 = 1000.0;

/// Resolution of the DAC driving the voltage-controlled current source.
pub const CONTROL_BITS: u32 = 12;
const CONTROL_MAX_CODE: u16 = (1 << CONTROL_BITS) - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StimError {
    #[error("amplitude {amplitude} mA outside (0, {max}] mA")]
    AmplitudeOutOfRange { amplitude: f64, max: f64 },
    #[error("sample rate {rate} Hz below minimum {min} Hz")]
    SampleRateTooLow { rate: u32, min: u32 },
    #[error("{width_ms} ms is not a whole number of samples at {rate} Hz")]
    NonIntegralSamples { width_ms: f64, rate: u32 },
    #[error("priming charge {priming} differs from stimulation charge {stim} (use an unbalanced spec to allow this)")]
    Unbalanced { priming: f64, stim: f64 },
    #[error("invalid pulse width {0} ms")]
    InvalidWidth(f64),
    #[error("invalid priming ratio {0}")]
    InvalidRatio(f64),
    #[error("stimulus train needs count >= 1 and gap >= 0 (count {count}, gap {gap_ms} ms)")]
    InvalidTrain { count: u32, gap_ms: f64 },
    #[error("sample {value} mA exceeds hardware cap {cap} mA")]
    OverCap { value: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Cathodic,
    Anodic,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Cathodic => -1.0,
            Polarity::Anodic => 1.0,
        }
    }

    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::Cathodic => Polarity::Anodic,
            Polarity::Anodic => Polarity::Cathodic,
        }
    }
}

/// Parameters of one asymmetric stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    stim_amplitude_ma: f64,
    stim_width_ms: f64,
    priming_width_ms: f64,
    priming_ratio: f64,
    stim_polarity: Polarity,
    inter_phase_gap_ms: f64,
    balanced: bool,
}

impl PulseSpec {
    /// Charge-balanced stimulus with default timing.
    pub fn balanced(amplitude_ma: f64) -> Result<Self, StimError> {
        PulseSpecBuilder::new(amplitude_ma).build()
    }

    pub fn builder(amplitude_ma: f64) -> PulseSpecBuilder {
        PulseSpecBuilder::new(amplitude_ma)
    }

    pub fn stim_amplitude_ma(&self) -> f64 {
        self.stim_amplitude_ma
    }
    pub fn stim_width_ms(&self) -> f64 {
        self.stim_width_ms
    }
    pub fn priming_width_ms(&self) -> f64 {
        self.priming_width_ms
    }
    pub fn priming_ratio(&self) -> f64 {
        self.priming_ratio
    }
    pub fn stim_polarity(&self) -> Polarity {
        self.stim_polarity
    }
    pub fn priming_polarity(&self) -> Polarity {
        self.stim_polarity.opposite()
    }
    pub fn inter_phase_gap_ms(&self) -> f64 {
        self.inter_phase_gap_ms
    }
    pub fn is_balanced(&self) -> bool {
        self.balanced
    }

    pub fn priming_amplitude_ma(&self) -> f64 {
        self.stim_amplitude_ma * self.priming_ratio
    }

    /// Priming + gap + stimulation.
    pub fn duration_ms(&self) -> f64 {
        self.priming_width_ms + self.inter_phase_gap_ms + self.stim_width_ms
    }

    /// Same spec at a different amplitude.
    pub fn with_amplitude(&self, amplitude_ma: f64) -> Result<Self, StimError> {
        check_amplitude(amplitude_ma)?;
        Ok(PulseSpec {
            stim_amplitude_ma: amplitude_ma,
            ..*self
        })
    }
}

#[derive(Debug, Clone)]
pub struct PulseSpecBuilder {
    amplitude_ma: f64,
    stim_width_ms: f64,
    priming_width_ms: f64,
    priming_ratio: f64,
    polarity: Polarity,
    gap_ms: f64,
}

impl PulseSpecBuilder {
    pub fn new(amplitude_ma: f64) -> Self {
        PulseSpecBuilder {
            amplitude_ma,
            stim_width_ms: DEFAULT_STIM_WIDTH_MS,
            priming_width_ms: DEFAULT_PRIMING_WIDTH_MS,
            priming_ratio: DEFAULT_PRIMING_RATIO,
            polarity: Polarity::Cathodic,
            gap_ms: 0.0,
        }
    }

    pub fn stim_width_ms(mut self, ms: f64) -> Self {
        self.stim_width_ms = ms;
        self
    }
    pub fn priming_width_ms(mut self, ms: f64) -> Self {
        self.priming_width_ms = ms;
        self
    }
    pub fn priming_ratio(mut self, ratio: f64) -> Self {
        self.priming_ratio = ratio;
        self
    }
    pub fn polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }
    pub fn inter_phase_gap_ms(mut self, ms: f64) -> Self {
        self.gap_ms = ms;
        self
    }

    /// Builds a charge-balanced spec; fails if priming and stimulation
    /// charges differ.
    pub fn build(self) -> Result<PulseSpec, StimError> {
        let spec = self.assemble(true)?;
        let priming = spec.priming_ratio * spec.priming_width_ms;
        let stim = spec.stim_width_ms;
        if (priming - stim).abs() > 1e-12 * stim {
            return Err(StimError::Unbalanced { priming, stim });
        }
        Ok(spec)
    }

    /// Builds a spec without the balance requirement. A zero priming ratio
    /// or zero priming width gives a monophasic pulse.
    pub fn build_unbalanced(self) -> Result<PulseSpec, StimError> {
        self.assemble(false)
    }

    fn assemble(self, balanced: bool) -> Result<PulseSpec, StimError> {
        check_amplitude(self.amplitude_ma)?;
        if !(self.stim_width_ms > 0.0 && self.stim_width_ms.is_finite()) {
            return Err(StimError::InvalidWidth(self.stim_width_ms));
        }
        for w in [self.priming_width_ms, self.gap_ms] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(StimError::InvalidWidth(w));
            }
        }
        if !(0.0..=1.0).contains(&self.priming_ratio) {
            return Err(StimError::InvalidRatio(self.priming_ratio));
        }
        Ok(PulseSpec {
            stim_amplitude_ma: self.amplitude_ma,
            stim_width_ms: self.stim_width_ms,
            priming_width_ms: self.priming_width_ms,
            priming_ratio: self.priming_ratio,
            stim_polarity: self.polarity,
            inter_phase_gap_ms: self.gap_ms,
            balanced,
        })
    }
}

fn check_amplitude(amplitude_ma: f64) -> Result<(), StimError> {
    if amplitude_ma > 0.0 && amplitude_ma <= MAX_AMPLITUDE_MA {
        Ok(())
    } else {
        Err(StimError::AmplitudeOutOfRange {
            amplitude: amplitude_ma,
            max: MAX_AMPLITUDE_MA,
        })
    }
}

/// Sampled current trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSamples {
    sample_rate_hz: u32,
    samples: Vec<f64>,
}

impl WaveformSamples {
    pub fn new(sample_rate_hz: u32, samples: Vec<f64>) -> Result<Self, StimError> {
        if sample_rate_hz < MIN_SAMPLE_RATE_HZ {
            return Err(StimError::SampleRateTooLow {
                rate: sample_rate_hz,
                min: MIN_SAMPLE_RATE_HZ,
            });
        }
        if let Some(&bad) = samples.iter().find(|s| !(s.abs() <= HARDWARE_CAP_MA)) {
            return Err(StimError::OverCap {
                value: bad,
                cap: HARDWARE_CAP_MA,
            });
        }
        Ok(WaveformSamples {
            sample_rate_hz,
            samples,
        })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_period_ms(&self) -> f64 {
        1000.0 / self.sample_rate_hz as f64
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate_hz as f64
    }

    /// `time_ms,current_mA` rows, one per sample, with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ms,current_mA\n");
        for (i, s) in self.samples.iter().enumerate() {
            let t = i as f64 * 1000.0 / self.sample_rate_hz as f64;
            let _ = writeln!(out, "{t},{s}");
        }
        out
    }

    /// Step plot of the trace. Stimulation-polarity runs are drawn red and
    /// priming runs blue.
    pub fn to_svg(&self, stim_polarity: Polarity) -> String {
        let (w, h, pad) = (900.0, 320.0, 40.0);
        let dur = self.duration_ms().max(f64::MIN_POSITIVE);
        let peak = self
            .samples
            .iter()
            .fold(0.0_f64, |m, s| m.max(s.abs()))
            .max(0.1);
        let x = |t: f64| pad + t / dur * (w - 2.0 * pad);
        let y = |i: f64| h / 2.0 - i / peak * (h / 2.0 - pad);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <line x1=\"{pad}\" y1=\"{mid}\" x2=\"{x2}\" y2=\"{mid}\" stroke=\"#888\" stroke-width=\"1\"/>\n",
            mid = h / 2.0,
            x2 = w - pad
        );
        let period = self.sample_period_ms();
        let mut start = 0;
        while start < self.samples.len() {
            let v = self.samples[start];
            let mut end = start;
            while end < self.samples.len() && self.samples[end] == v {
                end += 1;
            }
            let colour = if v == 0.0 {
                "#444"
            } else if v.signum() == stim_polarity.sign() {
                "#d62728"
            } else {
                "#1f77b4"
            };
            let (t0, t1) = (start as f64 * period, end as f64 * period);
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}\"/>",
                x(t0), y(0.0), x(t0), y(v), x(t1), y(v), x(t1), y(0.0)
            );
            start = end;
        }
        let _ = writeln!(
            svg,
            "<text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">peak {peak} mA, {dur} ms</text>\n</svg>"
        );
        svg
    }
}

fn whole_samples(width_ms: f64, rate: u32) -> Result<usize, StimError> {
    let exact = width_ms * rate as f64 / 1000.0;
    let n = exact.round();
    if (exact - n).abs() > 1e-9 {
        return Err(StimError::NonIntegralSamples {
            width_ms,
            rate,
        });
    }
    Ok(n as usize)
}

fn check_rate(rate: u32) -> Result<(), StimError> {
    if rate < MIN_SAMPLE_RATE_HZ {
        return Err(StimError::SampleRateTooLow {
            rate,
            min: MIN_SAMPLE_RATE_HZ,
        });
    }
    Ok(())
}

/// Priming phase, optional gap, then stimulation phase.
pub fn synth_stimulus(spec: &PulseSpec, sample_rate_hz: u32) -> Result<WaveformSamples, StimError> {
    check_amplitude(spec.stim_amplitude_ma)?;
    check_rate(sample_rate_hz)?;
    let n_priming = whole_samples(spec.priming_width_ms, sample_rate_hz)?;
    let n_gap = whole_samples(spec.inter_phase_gap_ms, sample_rate_hz)?;
    let n_stim = whole_samples(spec.stim_width_ms, sample_rate_hz)?;
    let priming = spec.priming_polarity().sign() * spec.priming_amplitude_ma();
    let stim = spec.stim_polarity.sign() * spec.stim_amplitude_ma;

    let mut samples = Vec::with_capacity(n_priming + n_gap + n_stim);
    samples.extend(std::iter::repeat_n(priming, n_priming));
    samples.extend(std::iter::repeat_n(0.0, n_gap));
    samples.extend(std::iter::repeat_n(stim, n_stim));
    WaveformSamples::new(sample_rate_hz, samples)
}

/// Single cathodic rectangle without priming. Zero amplitude is allowed and
/// yields an all-zero trace.
pub fn synth_monophasic(
    amplitude_ma: f64,
    width_ms: f64,
    sample_rate_hz: u32,
) -> Result<WaveformSamples, StimError> {
    if !(0.0..=MAX_AMPLITUDE_MA).contains(&amplitude_ma) {
        return Err(StimError::AmplitudeOutOfRange {
            amplitude: amplitude_ma,
            max: MAX_AMPLITUDE_MA,
        });
    }
    if !(width_ms > 0.0 && width_ms.is_finite()) {
        return Err(StimError::InvalidWidth(width_ms));
    }
    check_rate(sample_rate_hz)?;
    let n = whole_samples(width_ms, sample_rate_hz)?;
    let value = Polarity::Cathodic.sign() * amplitude_ma;
    WaveformSamples::new(sample_rate_hz, vec![value; n])
}

/// Integrated charge in µC (mA·ms).
pub fn net_charge(w: &WaveformSamples) -> f64 {
    let sum: ExactSum = w.samples.iter().copied().collect();
    sum.value() * 1000.0 / w.sample_rate_hz as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusTrain {
    spec: PulseSpec,
    count: u32,
    inter_stimulus_gap_ms: f64,
}

impl StimulusTrain {
    pub fn new(spec: PulseSpec, count: u32, inter_stimulus_gap_ms: f64) -> Result<Self, StimError> {
        if count == 0 || !(inter_stimulus_gap_ms >= 0.0 && inter_stimulus_gap_ms.is_finite()) {
            return Err(StimError::InvalidTrain {
                count,
                gap_ms: inter_stimulus_gap_ms,
            });
        }
        Ok(StimulusTrain {
            spec,
            count,
            inter_stimulus_gap_ms,
        })
    }

    /// Ten stimuli separated by one second.
    pub fn study_default(spec: PulseSpec) -> Self {
        StimulusTrain {
            spec,
            count: 10,
            inter_stimulus_gap_ms: DEFAULT_GAP_MS,
        }
    }

    pub fn spec(&self) -> &PulseSpec {
        &self.spec
    }
    pub fn count(&self) -> u32 {
        self.count
    }
    pub fn inter_stimulus_gap_ms(&self) -> f64 {
        self.inter_stimulus_gap_ms
    }

    /// Period between successive stimulus onsets.
    pub fn period_ms(&self) -> f64 {
        self.spec.duration_ms() + self.inter_stimulus_gap_ms
    }

    /// From the first onset to the end of the last stimulus.
    pub fn span_ms(&self) -> f64 {
        self.count as f64 * self.spec.duration_ms()
            + (self.count - 1) as f64 * self.inter_stimulus_gap_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledStimulus {
    pub start_ms: f64,
    pub waveform: WaveformSamples,
}

impl ScheduledStimulus {
    pub fn end_ms(&self) -> f64 {
        self.start_ms + self.waveform.duration_ms()
    }
}

pub fn build_train(train: &StimulusTrain, sample_rate_hz: u32) -> Result<Vec<ScheduledStimulus>, StimError> {
    let waveform = synth_stimulus(&train.spec, sample_rate_hz)?;
    let period = train.period_ms();
    Ok((0..train.count)
        .map(|k| ScheduledStimulus {
            start_ms: k as f64 * period,
            waveform: waveform.clone(),
        })
        .collect())
}

#[derive(Serialize)]
struct ScheduleLine {
    index: usize,
    start_ms: f64,
    end_ms: f64,
    samples: usize,
    sample_rate_hz: u32,
    net_charge_uc: f64,
}

/// One JSON record per scheduled stimulus.
pub fn schedule_to_lines(schedule: &[ScheduledStimulus]) -> String {
    let mut out = String::new();
    for (index, s) in schedule.iter().enumerate() {
        let line = ScheduleLine {
            index,
            start_ms: s.start_ms,
            end_ms: s.end_ms(),
            samples: s.waveform.len(),
            sample_rate_hz: s.waveform.sample_rate_hz(),
            net_charge_uc: net_charge(&s.waveform),
        };
        out.push_str(&serde_json::to_string(&line).expect("schedule line serializes"));
        out.push('\n');
    }
    out
}

/// Fraction of full-scale drive for the current source (linear, 4 mA full
/// scale).
pub fn amplitude_to_control(amplitude_ma: f64) -> Result<f64, StimError> {
    if !(0.0..=MAX_AMPLITUDE_MA).contains(&amplitude_ma) {
        return Err(StimError::AmplitudeOutOfRange {
            amplitude: amplitude_ma,
            max: MAX_AMPLITUDE_MA,
        });
    }
    Ok(amplitude_ma / MAX_AMPLITUDE_MA)
}

pub fn control_to_amplitude(control: f64) -> f64 {
    control.clamp(0.0, 1.0) * MAX_AMPLITUDE_MA
}

/// 12-bit DAC code for a control fraction.
pub fn quantize_control(control: f64) -> u16 {
    (control.clamp(0.0, 1.0) * CONTROL_MAX_CODE as f64).round() as u16
}

pub fn dequantize_control(code: u16) -> f64 {
    code.min(CONTROL_MAX_CODE) as f64 / CONTROL_MAX_CODE as f64
}

/// Amplitude represented by one DAC step.
pub fn control_step_ma() -> f64 {
    MAX_AMPLITUDE_MA / CONTROL_MAX_CODE as f64
}
