//! One PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.
//! Run with `cargo test -p tactwrist-cli --test acceptance`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use tactwrist_analysis::anova::{rm_anova_2way, AnovaOptions, RmDesign};
use tactwrist_analysis::report::{analyze, AnalysisConfig};
use tactwrist_analysis::ttest::{unpaired_t, Variance};
use tactwrist_analysis::wilcoxon::wilcoxon_signed_rank;
use tactwrist_cli::render::{render_stream, RenderOptions};
use tactwrist_cli::run::{run_studies, RunOptions, Studies};
use tactwrist_cli::session::{Session, SessionConfig};
use tactwrist_core::effects::{EffectSize, Opacity, TargetFinger, VisualCondition};
use tactwrist_core::handmap::HandMap;
use tactwrist_core::protocol::{self, Command, NakReason, StatusReport, StreamDecoder};
use tactwrist_core::render::calibration::{run_calibration, threshold_responder, CalibrationMode, Response};
use tactwrist_core::render::pose::{HandPose, UIElement};
use tactwrist_core::render::record::{write_log, StudyKind, TrialCondition, TrialRecord};
use tactwrist_core::render::study::{calibrate_on_device, Participant, ProtocolConfig};
use tactwrist_core::render::DevicePolicy;
use tactwrist_core::safety::{check_command, monitor, LoadMeasurement, SafetyLimits, SafetyState};
use tactwrist_core::sim::{Device, DeviceConfig, PerceiverModel, SensationReport};
use tactwrist_core::stim::{net_charge, synth_monophasic, synth_stimulus, Polarity, PulseSpec};
use tactwrist_core::switching::{is_break_before_make, transition, validate, ElectrodeId, FrameFault, Node, Phase, Rail, RelayFrame, RoutingState};

const STATS_TOL: f64 = 1e-6;
const SS_CLOSURE_TOL: f64 = 1e-9;
const SYNC_LAG_MS: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Sample rates at which every default phase width is a whole number of samples.
fn admissible_rate(rng: &mut ChaCha8Rng) -> u32 {
    200 * rng.random_range(5..=500)
}

fn polarity(rng: &mut ChaCha8Rng) -> Polarity {
    if rng.random() {
        Polarity::Anodic
    } else {
        Polarity::Cathodic
    }
}

fn charge_balance() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let amp = rng.random_range(0.1..=4.0);
        let spec = PulseSpec::builder(amp).polarity(polarity(&mut rng)).build().unwrap();
        let w = synth_stimulus(&spec, admissible_rate(&mut rng)).unwrap();
        if net_charge(&w) != 0.0 {
            bad += 1;
        }
    }
    let mono = net_charge(&synth_monophasic(1.0, 5.0, 10_000).unwrap());
    let dt = t.elapsed();
    check(
        bad == 0 && mono == -5.0 && dt < Duration::from_secs(1),
        format!("1000 balanced specs, {bad} non-zero; monophasic 1 mA/5 ms = {mono} uC; {dt:.0?} (limit 1 s)"),
    )
}

fn waveform_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    for k in 0..100 {
        let amp = rng.random_range(0.1..=4.0);
        let pol = polarity(&mut rng);
        let rate = admissible_rate(&mut rng);
        let spec = PulseSpec::builder(amp).polarity(pol).build().unwrap();
        let w = synth_stimulus(&spec, rate).unwrap();
        let s = w.samples();
        let priming = s[0];
        let ok = w.duration_ms() == 45.0
            && spec.duration_ms() == 45.0
            && priming.abs() == amp / 8.0
            && priming.signum() == pol.opposite().sign()
            && s.last().unwrap().signum() == pol.sign()
            && s.last().unwrap().abs() == amp
            && s.iter().position(|&v| v.signum() == pol.sign()).unwrap() == s.len() * 40 / 45;
        if !ok {
            bad.push(k);
        }
    }
    check(bad.is_empty(), format!("100 specs: 45 ms total, priming = amplitude/8, priming first; failures {bad:?}"))
}

fn switching_safety() -> Outcome {
    let t = Instant::now();
    let mut states = vec![RoutingState::Idle];
    let mut routes_ok = 0;
    for ch in 1..=15u8 {
        for phase in [Phase::Stim, Phase::Priming] {
            let s = RoutingState::Active {
                channel: ElectrodeId::channel(ch).unwrap(),
                phase,
            };
            if s.frame().map(validate) == Ok(Ok(())) {
                routes_ok += 1;
            }
            states.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut missed = 0;
    for _ in 0..10_000 {
        // random closures, whole relays only, so pairing is never the fault
        let mut f = RelayFrame::from_bits(0);
        for n in 0..16 {
            for rail in [Rail::High, Rail::Low] {
                if rng.random_bool(0.3) {
                    f = f.with_relay(Node(n), rail);
                }
            }
        }
        let node = Node(rng.random_range(0..16));
        f = f.with_relay(node, Rail::High).with_relay(node, Rail::Low);
        if !matches!(validate(f), Err(FrameFault::ShortCircuit(_))) {
            missed += 1;
        }
    }
    let mut bbm_bad = 0;
    for &a in &states {
        for &b in &states {
            let mut frames = vec![a.frame().unwrap()];
            frames.extend(transition(a, b).unwrap());
            if !is_break_before_make(&frames) || *frames.last().unwrap() != b.frame().unwrap() {
                bbm_bad += 1;
            }
        }
    }
    let dt = t.elapsed();
    check(
        routes_ok == 30 && missed == 0 && bbm_bad == 0 && dt < Duration::from_secs(1),
        format!(
            "{routes_ok}/30 routes valid; {missed}/10000 double-rail frames missed; {bbm_bad}/{} transitions not break-before-make; {dt:.0?} (limit 1 s)",
            states.len() * states.len()
        ),
    )
}

fn safety_interlock() -> Outcome {
    let rejected = check_command(4.1, &SafetyLimits::default()).is_err();
    let mut d = Device::new(DeviceConfig::default());
    d.handle(Command::Arm);
    let nak = d.handle(Command::SetIntensity { intensity_ua: 4100 });
    let nak_ok = nak == vec![Command::Nak {
        opcode: protocol::opcode::SET_INTENSITY,
        reason: NakReason::OverLimit,
    }];
    d.inject_measurement(5.0, 5.0);
    d.step(1.0);
    let locked = d.state() == SafetyState::Lockout;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let limits = SafetyLimits::default();
    let mut escaped = 0;
    for _ in 0..10_000 {
        let (v, i) = (rng.random_range(0.0..200.0), rng.random_range(0.0..10.0));
        d.inject_measurement(v, i);
        d.step(1.0);
        let m = LoadMeasurement {
            voltage_v: v,
            current_ma: i,
            timestamp_ms: 0.0,
        };
        if d.state() != SafetyState::Lockout || monitor(SafetyState::Lockout, &m, &limits) != SafetyState::Lockout {
            escaped += 1;
        }
    }
    check(
        rejected && nak_ok && locked && escaped == 0,
        format!("4.1 mA rejected: {rejected} (wire NAK over_limit: {nak_ok}); 5 mA reading -> lockout: {locked}; left lockout on {escaped}/10000 readings"),
    )
}

struct Thresholds(f64);

impl Participant for Thresholds {
    fn calibration_response(&mut self, _channel: u8, intensity_ua: u16) -> Response {
        threshold_responder(self.0)(0, intensity_ua)
    }
    fn report(&mut self, _: &TrialCondition, _: u16, _: u64) -> Option<SensationReport> {
        None
    }
}

/// First 0.1 mA step at or above the threshold, plus one step in the
/// threshold-plus-step mode; computed in whole microamps.
fn staircase_oracle(threshold_ma: f64, plus_step: bool) -> (u16, u32) {
    let t_ua = (threshold_ma * 1000.0).round() as u32;
    let steps = t_ua.div_ceil(100);
    let ua = steps * 100 + if plus_step { 100 } else { 0 };
    (ua as u16, steps)
}

fn console_calibration(threshold_ma: f64, mode: CalibrationMode) -> u16 {
    let mut s = Session::new(SessionConfig::new(StudyKind::Study1, 0, 0));
    let mut call = |v: Value| -> Value { serde_json::from_str(&s.handle_line(&v.to_string())[0]).unwrap() };
    call(json!({"type": "ARM"}));
    call(json!({"type": "CAL_START", "finger": "thumb", "channel": 5, "mode": mode}));
    loop {
        let r = call(json!({"type": "CAL_STEP", "action": "up"}));
        let ua = r["intensity_ua"].as_u64().unwrap_or(u64::MAX);
        if ua == u64::MAX || ua as f64 / 1000.0 >= threshold_ma {
            break;
        }
    }
    call(json!({"type": "CAL_CONFIRM"}))["result"]["intensity_ua"].as_u64().unwrap_or(0) as u16
}

fn calibration() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (mode, plus) in [(CalibrationMode::Threshold, false), (CalibrationMode::ThresholdPlusStep, true)] {
        for (finger, ch, t) in [(TargetFinger::Thumb, 5u8, 0.65), (TargetFinger::Index, 8, 0.76)] {
            let (want, want_steps) = staircase_oracle(t, plus);
            let pure = run_calibration(finger, ch, mode, threshold_responder(t)).unwrap();
            let mut d = Device::new(DeviceConfig::default());
            d.handle(Command::Arm);
            let dev = calibrate_on_device(&mut d, &mut Thresholds(t), finger, ch, mode, 0.0).unwrap();
            let console = console_calibration(t, mode);
            let ok = pure.intensity_ua == want
                && dev.intensity_ua == want
                && console == want
                && pure.steps == want_steps
                && pure.steps <= 40;
            pass &= ok;
            lines.push(format!("{t} mA {:?} -> {} mA in {} steps", mode, pure.intensity_ma(), pure.steps));
        }
    }
    check(pass, lines.join("; "))
}

fn run_opts(studies: Studies, seed: u64, participants: u32) -> RunOptions {
    RunOptions {
        studies,
        seed,
        participants: (0..participants).collect(),
        perceiver: PerceiverModel::default(),
        protocol: ProtocolConfig::default(),
        prior: Vec::new(),
        inject_overcurrent_ms: None,
    }
}

fn protocol_counts() -> Outcome {
    let a = run_studies(&run_opts(Studies::Both, 17, 1));
    let b = run_studies(&run_opts(Studies::Both, 17, 1));
    let s1_cover = (5..=15u8).all(|ch| a.study1.iter().filter(|r| r.condition.channel == Some(ch)).count() == 2);
    let mut s2_cover = true;
    for size in EffectSize::ALL {
        for opacity in Opacity::ALL {
            for finger in TargetFinger::BOTH {
                let n = a
                    .study2
                    .iter()
                    .filter(|r| r.condition.visual_size == Some(size) && r.condition.opacity == Some(opacity) && r.condition.target_finger == Some(finger))
                    .count();
                s2_cover &= n == 2;
            }
        }
    }
    let same = write_log(&a.study1) == write_log(&b.study1) && write_log(&a.study2) == write_log(&b.study2);
    check(
        a.study1.len() == 22 && a.study2.len() == 24 && s1_cover && s2_cover && same && a.abort.is_none(),
        format!(
            "study1 {} trials (ch5-15 x2: {s1_cover}); study2 {} trials (6 visual x 2 fingers x 2: {s2_cover}); same seed byte-identical: {same}",
            a.study1.len(),
            a.study2.len()
        ),
    )
}

fn random_stream(rng: &mut ChaCha8Rng) -> String {
    let mut t = rng.random_range(0.0..50.0);
    let mut index = [rng.random_range(-80.0..80.0), rng.random_range(-20.0..80.0), 0.0];
    let mut out = String::new();
    for _ in 0..400 {
        for v in index.iter_mut().take(2) {
            *v = (*v + rng.random_range(-6.0f64..6.0)).clamp(-90.0, 90.0);
        }
        let gap = if rng.random_bool(0.5) { rng.random_range(0.0..6.0) } else { rng.random_range(15.0..40.0) };
        let thumb = [index[0] + gap, index[1], index[2]];
        let p = HandPose::from_tips(t, thumb, index);
        out.push_str(&serde_json::to_string(&p).unwrap());
        out.push('\n');
        t += rng.random_range(0.5..20.0);
    }
    out
}

fn synchrony() -> Outcome {
    let scene = vec![
        UIElement::button("button", [0.0, 0.0, 0.0], [15.0; 3]).unwrap(),
        UIElement::grabbable("cube", [-50.0, 40.0, 0.0], [20.0; 3]).unwrap(),
        UIElement::slider("slider", [50.0, 40.0, 0.0], [30.0, 10.0, 10.0], 5, 50.0, [1.0, 0.0, 0.0]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut pairs, mut unequal, mut worst) = (0, 0, 0.0f64);
    let mut late = 0;
    for k in 0..60 {
        let opts = RenderOptions {
            policy: if k % 3 == 0 { DevicePolicy::Vibro } else { DevicePolicy::Electro },
            visual: (k % 4 != 0).then_some(VisualCondition {
                size: EffectSize::ALL[k % 3],
                opacity: Opacity::ALL[k % 2],
            }),
            participant: k as u32,
            seed: 7,
            perceiver: PerceiverModel::default(),
        };
        for p in render_stream(&random_stream(&mut rng), &scene, &opts).unwrap() {
            pairs += 1;
            unequal += usize::from(p.stim_start_ms != p.visual_start_ms);
            late += usize::from(!(0.0..=SYNC_LAG_MS).contains(&p.lag_ms()));
            worst = worst.max(p.lag_ms());
        }
    }
    check(
        pairs > 100 && unequal == 0 && late == 0,
        format!("{pairs} pairs from 60 random pose streams; {unequal} with unequal start times; worst lag {worst:.3} ms (limit {SYNC_LAG_MS} ms)"),
    )
}

fn statistics_oracles() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../analysis/tests/fixtures/reference.json")).unwrap();
    let r: Value = serde_json::from_str(&text).unwrap();
    let f = |v: &Value| v.as_f64().unwrap();
    let vf = |v: &Value| v.as_array().unwrap().iter().map(f).collect::<Vec<f64>>();
    let mut worst = 0.0f64;
    let mut worst_ss = 0.0f64;
    let mut fail = Vec::new();
    let mut cmp = |what: String, got: f64, want: f64| {
        let d = (got - want).abs();
        worst = worst.max(d);
        if !(d <= STATS_TOL) {
            fail.push(what);
        }
    };
    let mut counts = [0usize; 5];
    for case in r["rm_anova"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        let data: Vec<Vec<Vec<f64>>> = case["data"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_array().unwrap().iter().map(&vf).collect())
            .collect();
        let got = rm_anova_2way(&RmDesign::new(&data).unwrap(), AnovaOptions { greenhouse_geisser: true });
        for (key, e) in [("A", &got.a), ("B", &got.b), ("AB", &got.ab)] {
            let w = &case["effects"][key];
            cmp(format!("{name} {key} F"), e.f, f(&w["F"]));
            cmp(format!("{name} {key} p"), e.p, f(&w["p"]));
            cmp(format!("{name} {key} np2"), e.partial_eta_sq, f(&w["np2"]));
        }
        worst_ss = worst_ss.max((got.ss_components() - got.ss_total).abs() / got.ss_total);
        counts[0] += 1;
        for (key, m) in [("mauchly_A", got.mauchly_a), ("mauchly_AB", got.mauchly_ab)] {
            if let (Some(w), Some(m)) = (case.get(key), m) {
                cmp(format!("{name} {key} W"), m.w, f(&w["W"]));
                cmp(format!("{name} {key} p"), m.p, f(&w["p"]));
                counts[1] += 1;
            }
        }
        for (g, w) in got.posthoc_a.iter().zip(case["bonferroni_A"].as_array().unwrap()) {
            cmp(format!("{name} bonferroni t"), g.t, f(&w["t"]));
            cmp(format!("{name} bonferroni p"), g.p_bonferroni, f(&w["p_bonf"]));
        }
        counts[2] += 1;
    }
    for case in r["unpaired_t"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        for (v, key) in [(Variance::Pooled, "pooled"), (Variance::Welch, "welch")] {
            let got = unpaired_t(&vf(&case["x"]), &vf(&case["y"]), v).unwrap();
            cmp(format!("{name} {key} t"), got.t, f(&case[key]["t"]));
            cmp(format!("{name} {key} p"), got.p, f(&case[key]["p"]));
        }
        counts[3] += 1;
    }
    for case in r["wilcoxon"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        let got = wilcoxon_signed_rank(&vf(&case["x"]), &vf(&case["y"])).unwrap();
        cmp(format!("{name} z"), got.z, f(&case["z"]));
        cmp(format!("{name} p"), got.p, f(&case["p"]));
        counts[4] += 1;
    }
    let enough = counts.iter().all(|&n| n >= 3);
    check(
        fail.is_empty() && enough && worst_ss <= SS_CLOSURE_TOL,
        format!(
            "datasets anova/mauchly/bonferroni/t/wilcoxon = {counts:?}; worst |diff| {worst:.1e} (tol {STATS_TOL:e}); SS closure {worst_ss:.1e} (tol {SS_CLOSURE_TOL:e}); mismatches {fail:?}"
        ),
    )
}

fn directional() -> Outcome {
    let t = Instant::now();
    let out = run_studies(&run_opts(Studies::Both, 2024, 12));
    let records: Vec<TrialRecord> = out.study1.iter().chain(&out.study2).cloned().collect();
    let report = analyze(&records, HandMap::bundled(), AnalysisConfig::default());
    let dt = t.elapsed();
    let Ok(report) = report else {
        return check(false, format!("analysis failed: {report:?}"));
    };
    let Some(d) = report.directional else {
        return check(false, "no study2 results");
    };
    let size = |s| d.size_mean(s);
    check(
        out.abort.is_none() && d.visual_beats_none() && d.finger_size_best() && dt < Duration::from_secs(30),
        format!(
            "12 participants, seed 2024: thumb {:.1}% -> {:.1}%, index {:.1}% -> {:.1}% (none -> finger/full); size means finger {:.1}%, fingertip {:.1}%, fingertip-to-wrist {:.1}%; {dt:.1?} (limit 30 s)",
            d.thumb_none,
            d.thumb_full_finger,
            d.index_none,
            d.index_full_finger,
            size(EffectSize::Finger),
            size(EffectSize::Fingertip),
            size(EffectSize::FingertipToWrist),
        ),
    )
}

fn random_command(rng: &mut ChaCha8Rng) -> Command {
    let state = SafetyState::from_code(rng.random_range(0..6)).unwrap();
    match rng.random_range(0..12) {
        0 => Command::SetChannel {
            channel: rng.random_range(1..=15),
        },
        1 => Command::SetIntensity {
            intensity_ua: rng.random_range(0..=4000),
        },
        2 => Command::StimOnce,
        3 => Command::StimTrain {
            count: rng.random_range(1..=u16::MAX),
            gap_ms: rng.random(),
        },
        4 => Command::Stop,
        5 => Command::QueryStatus,
        6 => Command::ResetLockout,
        7 => Command::Arm,
        8 => Command::Disarm,
        9 => Command::Status(StatusReport {
            state,
            resistance_dohm: rng.random_bool(0.8).then(|| rng.random_range(0..u32::MAX)),
            intensity_ua: rng.random(),
        }),
        10 => Command::Ack { opcode: rng.random() },
        _ => Command::Nak {
            opcode: rng.random(),
            reason: NakReason::from_code(rng.random_range(1..=8)).unwrap(),
        },
    }
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bad = 0;
    for _ in 0..10_000 {
        let c = random_command(&mut rng);
        if protocol::decode(&protocol::encode(&c).unwrap()) != Ok(c) {
            bad += 1;
        }
    }
    let cmds: Vec<Command> = (0..100).map(|_| random_command(&mut rng)).collect();
    let stream: Vec<u8> = cmds.iter().flat_map(|c| protocol::encode(c).unwrap()).collect();
    let mut split_bad = 0;
    for at in 0..=stream.len() {
        let mut d = StreamDecoder::new();
        let mut got: Vec<Command> = d.push(&stream[..at]).into_iter().map(Result::unwrap).collect();
        got.extend(d.push(&stream[at..]).into_iter().map(Result::unwrap));
        if got != cmds || d.pending() != 0 {
            split_bad += 1;
        }
    }
    check(
        bad == 0 && split_bad == 0,
        format!("10000 round trips, {bad} failed; {} split points of a 100-command stream, {split_bad} differ", stream.len() + 1),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("charge balance", charge_balance),
        ("waveform geometry", waveform_geometry),
        ("switching safety", switching_safety),
        ("safety interlock", safety_interlock),
        ("calibration", calibration),
        ("protocol counts", protocol_counts),
        ("visuotactile synchrony", synchrony),
        ("statistics oracles", statistics_oracles),
        ("directional reproduction", directional),
        ("protocol codec", codec),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
