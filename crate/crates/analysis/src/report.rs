//! Log → tables, statistics and heatmaps.
//!
//! Rates are per trial (unfelt trials score 0 %), averaged over a
//! participant's repetitions before any between-participant statistic.
//! The no-visual baseline of a finger is the participant's study1 trials on
//! the channel that was selected for that finger in study2.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tactwrist_core::effects::{EffectSize, Opacity, TargetFinger, VisualCondition};
use tactwrist_core::handmap::HandMap;
use tactwrist_core::render::record::{StudyKind, TrialRecord};
use tactwrist_core::render::study::{FingerChannels, STUDY1_CHANNELS};
use thiserror::Error;

use crate::anova::{rm_anova_2way, AnovaOptions, RmAnova, RmDesign};
use crate::heatmap::{aggregate_heatmap, Heatmap};
use crate::rates::{strongest_point_rate, summarize, trial_rate, Summary};
use crate::ttest::{unpaired_t, TTest, Variance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyzeError {
    #[error("no trial records to analyze")]
    Empty,
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub variance: Variance,
    pub greenhouse_geisser: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub channel: u8,
    pub trials: usize,
    pub felt: usize,
    /// Trial-level in-finger rates, percent.
    pub thumb: Summary,
    pub index: Summary,
    /// Fraction of felt trials whose strongest point is on the finger.
    pub strongest_thumb: Option<f64>,
    pub strongest_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub finger: TargetFinger,
    /// (participant, selected channel, mean rate)
    pub participants: Vec<(u32, u8, f64)>,
    pub summary: Option<Summary>,
    pub strongest_point_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: VisualCondition,
    pub trials: usize,
    /// Participant-level in-target rates, percent.
    pub thumb: Option<Summary>,
    pub index: Option<Summary>,
    pub strongest_thumb: Option<f64>,
    pub strongest_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerAnova {
    pub finger: TargetFinger,
    pub result: Result<RmAnova, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub finger: TargetFinger,
    pub condition: VisualCondition,
    pub baseline_mean: f64,
    pub condition_mean: f64,
    pub result: Result<TTest, String>,
}

/// The numbers behind the expected direction of the visual effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directional {
    pub thumb_none: f64,
    pub thumb_full_finger: f64,
    pub index_none: f64,
    pub index_full_finger: f64,
    /// Participant-mean in-target rate per size, over both fingers and opacities.
    pub size_means: Vec<(EffectSize, f64)>,
}

impl Directional {
    pub fn size_mean(&self, s: EffectSize) -> f64 {
        self.size_means.iter().find(|(k, _)| *k == s).map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn visual_beats_none(&self) -> bool {
        self.thumb_full_finger > self.thumb_none && self.index_full_finger > self.index_none
    }

    pub fn finger_size_best(&self) -> bool {
        let f = self.size_mean(EffectSize::Finger);
        f > self.size_mean(EffectSize::Fingertip) && f > self.size_mean(EffectSize::FingertipToWrist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub aborted: usize,
    pub participants: Vec<u32>,
    pub study1: Vec<ChannelRow>,
    pub baseline: Vec<Baseline>,
    pub study2: Vec<ConditionRow>,
    pub anova: Vec<FingerAnova>,
    pub comparisons: Vec<Comparison>,
    pub directional: Option<Directional>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn by_participant(records: &[TrialRecord]) -> BTreeMap<u32, Vec<&TrialRecord>> {
    let mut m: BTreeMap<u32, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.participant).or_default().push(r);
    }
    m
}

/// Participant → mean in-target rate for one study2 cell.
fn study2_cell(groups: &BTreeMap<u32, Vec<&TrialRecord>>, vc: VisualCondition, finger: TargetFinger, map: &HandMap) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for (&p, rs) in groups {
        let rates: Vec<f64> = rs
            .iter()
            .filter(|r| r.study == StudyKind::Study2 && r.condition.visual() == Some(vc) && r.condition.target_finger == Some(finger))
            .map(|r| trial_rate(r.report.as_ref(), finger.region(), map))
            .collect();
        if !rates.is_empty() {
            out.insert(p, mean(&rates));
        }
    }
    out
}

pub fn analyze(records: &[TrialRecord], map: &HandMap, cfg: AnalysisConfig) -> Result<AnalysisReport, AnalyzeError> {
    if records.is_empty() {
        return Err(AnalyzeError::Empty);
    }
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|reason| AnalyzeError::Record { index: i, reason })?;
        if let Some(rep) = &r.report {
            map.check_dims(&rep.area_mask).map_err(|e| AnalyzeError::Record {
                index: i,
                reason: e.to_string(),
            })?;
        }
    }
    let used: Vec<TrialRecord> = records.iter().filter(|r| !r.aborted).cloned().collect();
    let groups = by_participant(&used);

    let mut study1 = Vec::new();
    for ch in STUDY1_CHANNELS {
        let rs: Vec<&TrialRecord> = used
            .iter()
            .filter(|r| r.study == StudyKind::Study1 && r.condition.channel == Some(ch))
            .collect();
        if rs.is_empty() {
            continue;
        }
        let felt: Vec<_> = rs.iter().filter_map(|r| r.report.as_ref()).collect();
        let rates = |f: TargetFinger| -> Vec<f64> { rs.iter().map(|r| trial_rate(r.report.as_ref(), f.region(), map)).collect() };
        study1.push(ChannelRow {
            channel: ch,
            trials: rs.len(),
            felt: felt.len(),
            thumb: summarize(&rates(TargetFinger::Thumb)).expect("non-empty"),
            index: summarize(&rates(TargetFinger::Index)).expect("non-empty"),
            strongest_thumb: strongest_point_rate(felt.iter().copied(), TargetFinger::Thumb.region(), map).ok(),
            strongest_index: strongest_point_rate(felt.iter().copied(), TargetFinger::Index.region(), map).ok(),
        });
    }

    let mut baseline = Vec::new();
    for finger in TargetFinger::BOTH {
        let mut per = Vec::new();
        let mut reports = Vec::new();
        for (&p, rs) in &groups {
            let s1: Vec<TrialRecord> = rs.iter().filter(|r| r.study == StudyKind::Study1).map(|r| (*r).clone()).collect();
            if s1.is_empty() {
                continue;
            }
            let ch = FingerChannels::from_study1(&s1, map).get(finger);
            let on: Vec<&TrialRecord> = s1.iter().filter(|r| r.condition.channel == Some(ch)).collect();
            if on.is_empty() {
                continue;
            }
            let rates: Vec<f64> = on.iter().map(|r| trial_rate(r.report.as_ref(), finger.region(), map)).collect();
            per.push((p, ch, mean(&rates)));
            reports.extend(on.iter().filter_map(|r| r.report.clone()));
        }
        let vals: Vec<f64> = per.iter().map(|x| x.2).collect();
        baseline.push(Baseline {
            finger,
            summary: summarize(&vals),
            strongest_point_rate: strongest_point_rate(&reports, finger.region(), map).ok(),
            participants: per,
        });
    }

    let has_study2 = used.iter().any(|r| r.study == StudyKind::Study2);
    let mut study2 = Vec::new();
    let mut comparisons = Vec::new();
    let mut anova = Vec::new();
    if has_study2 {
        for vc in VisualCondition::grid() {
            let rs: Vec<&TrialRecord> = used
                .iter()
                .filter(|r| r.study == StudyKind::Study2 && r.condition.visual() == Some(vc))
                .collect();
            let strongest = |f: TargetFinger| {
                strongest_point_rate(
                    rs.iter().filter(|r| r.condition.target_finger == Some(f)).filter_map(|r| r.report.as_ref()),
                    f.region(),
                    map,
                )
                .ok()
            };
            let cell = |f: TargetFinger| summarize(&study2_cell(&groups, vc, f, map).into_values().collect::<Vec<_>>());
            study2.push(ConditionRow {
                condition: vc,
                trials: rs.len(),
                thumb: cell(TargetFinger::Thumb),
                index: cell(TargetFinger::Index),
                strongest_thumb: strongest(TargetFinger::Thumb),
                strongest_index: strongest(TargetFinger::Index),
            });
        }
        for finger in TargetFinger::BOTH {
            let base: Vec<f64> = baseline.iter().find(|b| b.finger == finger).map(|b| b.participants.iter().map(|x| x.2).collect()).unwrap_or_default();
            for vc in VisualCondition::grid() {
                let vals: Vec<f64> = study2_cell(&groups, vc, finger, map).into_values().collect();
                if vals.is_empty() {
                    continue;
                }
                comparisons.push(Comparison {
                    finger,
                    condition: vc,
                    baseline_mean: if base.is_empty() { f64::NAN } else { mean(&base) },
                    condition_mean: mean(&vals),
                    result: unpaired_t(&vals, &base, cfg.variance).map_err(|e| e.to_string()),
                });
            }
            anova.push(FingerAnova {
                finger,
                result: finger_anova(&groups, finger, map, cfg),
            });
        }
    }

    let directional = directional(&baseline, &groups, map);
    Ok(AnalysisReport {
        records: records.len(),
        aborted: records.len() - used.len(),
        participants: groups.keys().copied().collect(),
        study1,
        baseline,
        study2,
        anova,
        comparisons,
        directional,
    })
}

/// Size (3) × opacity (2) on participants with all six cells.
fn finger_anova(groups: &BTreeMap<u32, Vec<&TrialRecord>>, finger: TargetFinger, map: &HandMap, cfg: AnalysisConfig) -> Result<RmAnova, String> {
    let cells: Vec<Vec<BTreeMap<u32, f64>>> = EffectSize::ALL
        .iter()
        .map(|&size| {
            Opacity::ALL
                .iter()
                .map(|&opacity| study2_cell(groups, VisualCondition { size, opacity }, finger, map))
                .collect()
        })
        .collect();
    let complete: BTreeSet<u32> = groups
        .keys()
        .copied()
        .filter(|p| cells.iter().flatten().all(|c| c.contains_key(p)))
        .collect();
    let values: Vec<Vec<Vec<f64>>> = complete
        .iter()
        .map(|p| cells.iter().map(|row| row.iter().map(|c| c[p]).collect()).collect())
        .collect();
    let design = RmDesign::new(&values).map_err(|e| e.to_string())?;
    Ok(rm_anova_2way(
        &design,
        AnovaOptions {
            greenhouse_geisser: cfg.greenhouse_geisser,
        },
    ))
}

fn directional(baseline: &[Baseline], groups: &BTreeMap<u32, Vec<&TrialRecord>>, map: &HandMap) -> Option<Directional> {
    let none = |f: TargetFinger| baseline.iter().find(|b| b.finger == f)?.summary.map(|s| s.mean);
    let full_finger = |f: TargetFinger| {
        let v: Vec<f64> = study2_cell(
            groups,
            VisualCondition {
                size: EffectSize::Finger,
                opacity: Opacity::Full,
            },
            f,
            map,
        )
        .into_values()
        .collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let mut size_means = Vec::new();
    for size in EffectSize::ALL {
        let mut v = Vec::new();
        for finger in TargetFinger::BOTH {
            for opacity in Opacity::ALL {
                v.extend(study2_cell(groups, VisualCondition { size, opacity }, finger, map).into_values());
            }
        }
        if v.is_empty() {
            return None;
        }
        size_means.push((size, mean(&v)));
    }
    Some(Directional {
        thumb_none: none(TargetFinger::Thumb)?,
        thumb_full_finger: full_finger(TargetFinger::Thumb)?,
        index_none: none(TargetFinger::Index)?,
        index_full_finger: full_finger(TargetFinger::Index)?,
        size_means,
    })
}

/// Named heatmaps: one per study1 channel and one per study2 condition and finger.
pub fn heatmaps(records: &[TrialRecord], map: &HandMap) -> Vec<(String, Heatmap)> {
    let mut out = Vec::new();
    let used = || records.iter().filter(|r| !r.aborted);
    for ch in STUDY1_CHANNELS {
        let rs: Vec<_> = used()
            .filter(|r| r.study == StudyKind::Study1 && r.condition.channel == Some(ch))
            .filter_map(|r| r.report.as_ref())
            .collect();
        if !rs.is_empty() {
            out.push((format!("study1_ch{ch:02}"), aggregate_heatmap(rs, map).expect("validated masks")));
        }
    }
    for vc in VisualCondition::grid() {
        for finger in TargetFinger::BOTH {
            let rs: Vec<_> = used()
                .filter(|r| r.study == StudyKind::Study2 && r.condition.visual() == Some(vc) && r.condition.target_finger == Some(finger))
                .filter_map(|r| r.report.as_ref())
                .collect();
            if !rs.is_empty() {
                out.push((
                    format!("study2_{}_{}_{}", vc.size, vc.opacity, finger),
                    aggregate_heatmap(rs, map).expect("validated masks"),
                ));
            }
        }
    }
    out
}

fn opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.1}", x * scale))
}

fn summ(s: &Option<Summary>) -> String {
    s.map_or_else(|| "-".into(), |s| format!("{:.1} ({:.1})", s.mean, s.sd))
}

fn p_fmt(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

impl AnalysisReport {
    pub fn study1_csv(&self) -> String {
        let mut s = String::from("channel,trials,felt,thumb_mean,thumb_sd,index_mean,index_sd,strongest_thumb,strongest_index\n");
        for r in &self.study1 {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
                r.channel,
                r.trials,
                r.felt,
                r.thumb.mean,
                r.thumb.sd,
                r.index.mean,
                r.index.sd,
                r.strongest_thumb.map_or(String::new(), |v| format!("{v:.4}")),
                r.strongest_index.map_or(String::new(), |v| format!("{v:.4}")),
            );
        }
        s
    }

    /// One row per visual condition.
    pub fn study2_csv(&self) -> String {
        let mut s = String::from("size,opacity,trials,thumb_mean,thumb_sd,index_mean,index_sd,strongest_thumb,strongest_index\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        for r in &self.study2 {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.condition.size,
                r.condition.opacity,
                r.trials,
                f(r.thumb.map(|x| x.mean)),
                f(r.thumb.map(|x| x.sd)),
                f(r.index.map(|x| x.mean)),
                f(r.index.map(|x| x.sd)),
                f(r.strongest_thumb),
                f(r.strongest_index),
            );
        }
        s
    }

    pub fn stats_csv(&self) -> String {
        let mut s = String::from("finger,test,effect,statistic,df1,df2,p,effect_size\n");
        for a in &self.anova {
            if let Ok(r) = &a.result {
                for (name, e) in [("size", &r.a), ("opacity", &r.b), ("size:opacity", &r.ab)] {
                    let _ = writeln!(
                        s,
                        "{},rm_anova,{name},{:.6},{},{},{:.6},{:.6}",
                        a.finger, e.f, e.df, e.df_error, e.p, e.partial_eta_sq
                    );
                }
                if let Some(m) = r.mauchly_a {
                    let _ = writeln!(s, "{},mauchly,size,{:.6},{},,{:.6},{:.6}", a.finger, m.w, m.df, m.p, m.gg_epsilon);
                }
                for pw in &r.posthoc_a {
                    let _ = writeln!(
                        s,
                        "{},paired_t_bonferroni,{}-{},{:.6},{},,{:.6},",
                        a.finger,
                        EffectSize::ALL[pw.i],
                        EffectSize::ALL[pw.j],
                        pw.t,
                        r.subjects - 1,
                        pw.p_bonferroni
                    );
                }
            }
        }
        for c in &self.comparisons {
            if let Ok(t) = &c.result {
                let _ = writeln!(
                    s,
                    "{},unpaired_t,{}-vs-none,{:.6},{:.4},,{:.6},",
                    c.finger, c.condition, t.t, t.df, t.p
                );
            }
        }
        s
    }

    /// Human-readable summary; the golden-report format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "records: {} ({} aborted), participants: {}",
            self.records,
            self.aborted,
            self.participants.len()
        );
        if !self.study1.is_empty() {
            let _ = writeln!(s, "\nstudy1: in-finger rate per channel, % mean (SD)");
            let _ = writeln!(s, "  ch  trials felt  thumb          index          sp-thumb sp-index");
            for r in &self.study1 {
                let _ = writeln!(
                    s,
                    "  {:>2}  {:>6} {:>4}  {:<14} {:<14} {:>8} {:>8}",
                    r.channel,
                    r.trials,
                    r.felt,
                    summ(&Some(r.thumb)),
                    summ(&Some(r.index)),
                    opt(r.strongest_thumb, 100.0),
                    opt(r.strongest_index, 100.0)
                );
            }
        }
        let _ = writeln!(s, "\nno-visual baseline (selected channel per participant)");
        for b in &self.baseline {
            let _ = writeln!(
                s,
                "  {:<5} {}  strongest point on finger: {}%",
                b.finger.to_string(),
                summ(&b.summary),
                opt(b.strongest_point_rate, 100.0)
            );
        }
        if !self.study2.is_empty() {
            let _ = writeln!(s, "\nstudy2: in-target rate per visual condition, % mean (SD) over participants");
            let _ = writeln!(s, "  condition                trials  thumb          index");
            for r in &self.study2 {
                let _ = writeln!(
                    s,
                    "  {:<24} {:>6}  {:<14} {:<14}",
                    r.condition.to_string(),
                    r.trials,
                    summ(&r.thumb),
                    summ(&r.index)
                );
            }
        }
        for a in &self.anova {
            let _ = writeln!(s, "\nRM-ANOVA size x opacity, {}", a.finger);
            match &a.result {
                Ok(r) => {
                    for (name, e) in [("size", &r.a), ("opacity", &r.b), ("size:opacity", &r.ab)] {
                        let _ = write!(
                            s,
                            "  {:<13} F({}, {}) = {:.3}, p = {}, np2 = {:.3}",
                            name,
                            e.df,
                            e.df_error,
                            e.f,
                            p_fmt(e.p),
                            e.partial_eta_sq
                        );
                        if let Some((eps, p)) = e.gg {
                            let _ = write!(s, ", GG eps = {eps:.3}, p = {}", p_fmt(p));
                        }
                        s.push('\n');
                    }
                    match r.mauchly_a {
                        Some(m) => {
                            let _ = writeln!(s, "  Mauchly (size): W = {:.3}, chi2({}) = {:.3}, p = {}", m.w, m.df, m.chi_sq, p_fmt(m.p));
                        }
                        None => {
                            let _ = writeln!(s, "  Mauchly (size): not estimable");
                        }
                    }
                    for pw in &r.posthoc_a {
                        let _ = writeln!(
                            s,
                            "  {} vs {}: t = {:.3}, p(bonf) = {}",
                            EffectSize::ALL[pw.i],
                            EffectSize::ALL[pw.j],
                            pw.t,
                            p_fmt(pw.p_bonferroni)
                        );
                    }
                }
                Err(e) => {
                    let _ = writeln!(s, "  not run: {e}");
                }
            }
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(s, "\nunpaired t, condition vs no visual");
            for c in &self.comparisons {
                let _ = match &c.result {
                    Ok(t) => writeln!(
                        s,
                        "  {:<5} {:<24} {:.1} vs {:.1}: t({:.2}) = {:.3}, p = {}",
                        c.finger.to_string(),
                        c.condition.to_string(),
                        c.condition_mean,
                        c.baseline_mean,
                        t.df,
                        t.t,
                        p_fmt(t.p)
                    ),
                    Err(e) => writeln!(s, "  {:<5} {:<24} not run: {e}", c.finger.to_string(), c.condition.to_string()),
                };
            }
        }
        if let Some(d) = &self.directional {
            let _ = writeln!(s, "\ndirection");
            let _ = writeln!(s, "  thumb: none {:.1} -> finger/full {:.1}", d.thumb_none, d.thumb_full_finger);
            let _ = writeln!(s, "  index: none {:.1} -> finger/full {:.1}", d.index_none, d.index_full_finger);
            for (size, m) in &d.size_means {
                let _ = writeln!(s, "  size {:<20} {:.1}", size.to_string(), m);
            }
        }
        s.lines().map(|l| format!("{}\n", l.trim_end())).collect()
    }
}
