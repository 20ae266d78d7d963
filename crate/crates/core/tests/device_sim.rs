use tactwrist_core::exact::ExactSum;
use tactwrist_core::protocol::{self, Command, NakReason, StreamDecoder};
use tactwrist_core::safety::SafetyState;
use tactwrist_core::sim::{Device, DeviceConfig, SkinLoadParams};
use tactwrist_core::stim::{net_charge, synth_monophasic, synth_stimulus, PulseSpec};
use tactwrist_core::switching::{parse_hex_frame, route, ElectrodeId, Phase};

const SESSION: &str = include_str!("fixtures/session_v1.hex");

fn feed(d: &mut Device, cmds: &[Command]) -> Vec<Command> {
    let mut bytes = Vec::new();
    for c in cmds {
        bytes.extend(protocol::encode(c).unwrap());
    }
    let reply = d.receive_bytes(&bytes);
    StreamDecoder::new().push(&reply).into_iter().map(Result::unwrap).collect()
}

#[test]
fn replayed_session_frames_decode_to_expected_commands() {
    let frames = protocol::parse_hex_replay(SESSION).unwrap();
    let cmds: Vec<Command> = frames.iter().map(|f| protocol::decode(f).unwrap()).collect();
    assert_eq!(
        &cmds[..7],
        &[
            Command::Arm,
            Command::SetChannel { channel: 5 },
            Command::SetIntensity { intensity_ua: 650 },
            Command::StimTrain { count: 10, gap_ms: 1000 },
            Command::QueryStatus,
            Command::Stop,
            Command::Disarm,
        ]
    );
    assert_eq!(cmds[7].opcode(), 0x81);
    assert_eq!(cmds[9], Command::Nak { opcode: 3, reason: NakReason::NotArmed });
    for (f, c) in frames.iter().zip(&cmds) {
        assert_eq!(&protocol::encode(c).unwrap(), f);
    }
}

#[test]
fn replayed_session_drives_the_device() {
    let frames = protocol::parse_hex_replay(SESSION).unwrap();
    let mut d = Device::new(DeviceConfig::default());
    let mut replies = Vec::new();
    for f in &frames[..4] {
        replies.extend(d.receive_bytes(f));
    }
    assert_eq!(d.state(), SafetyState::Stimulating);
    d.step(100.0);
    let status = protocol::decode(&d.receive_bytes(&frames[4])).unwrap();
    match status {
        Command::Status(s) => {
            assert_eq!(s.state, SafetyState::Stimulating);
            assert_eq!(s.intensity_ua, 650);
            assert_eq!(s.resistance_kohm(), Some(72.3));
        }
        other => panic!("{other:?}"),
    }
    d.receive_bytes(&frames[5]);
    assert_eq!(d.state(), SafetyState::Armed);
    assert!(d.current_frame().is_idle());
    d.receive_bytes(&frames[6]);
    assert_eq!(d.state(), SafetyState::Disarmed);
    let acks: Vec<Command> = StreamDecoder::new().push(&replies).into_iter().map(Result::unwrap).collect();
    assert!(acks.iter().all(|c| matches!(c, Command::Ack { .. })));
}

#[test]
fn identical_seed_and_commands_give_identical_logs() {
    let run = || {
        let mut d = Device::new(DeviceConfig {
            seed: 11,
            load: SkinLoadParams {
                noise_sd_kohm: 3.0,
                ..SkinLoadParams::default()
            },
            ..DeviceConfig::default()
        });
        feed(
            &mut d,
            &[
                Command::Arm,
                Command::SetChannel { channel: 9 },
                Command::SetIntensity { intensity_ua: 1200 },
                Command::StimTrain { count: 3, gap_ms: 50 },
            ],
        );
        let out = d.run_until_idle();
        (d.log_lines(), out.measurements)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    // noise is on: readings differ from the nominal value
    assert!(ma.iter().any(|m| (m.voltage_v / m.current_ma - 72.3).abs() > 1e-6));
}

#[test]
fn charge_ledger_equals_exact_sum_of_everything_played() {
    let mut d = Device::new(DeviceConfig::default());
    feed(&mut d, &[Command::Arm, Command::SetChannel { channel: 7 }]);
    let mut played = ExactSum::new();
    for (ua, count) in [(650u16, 2u16), (1370, 1), (3999, 3)] {
        feed(
            &mut d,
            &[
                Command::SetIntensity { intensity_ua: ua },
                Command::StimTrain { count, gap_ms: 10 },
            ],
        );
        d.run_until_idle();
        let w = synth_stimulus(&PulseSpec::balanced(ua as f64 / 1000.0).unwrap(), 10_000).unwrap();
        for _ in 0..count {
            played.add(net_charge(&w));
        }
    }
    let mono = synth_monophasic(2.0, 5.0, 10_000).unwrap();
    d.drive_waveform(mono.clone()).unwrap();
    d.run_until_idle();
    played.add(net_charge(&mono));
    assert_eq!(d.accumulated_charge_uc(7), played.value());
    assert_eq!(d.accumulated_charge_uc(7), -10.0);
    assert_eq!(d.accumulated_charge_uc(5), 0.0);
}

#[test]
fn routing_follows_phase_during_playback() {
    let mut d = Device::new(DeviceConfig::default());
    feed(
        &mut d,
        &[
            Command::Arm,
            Command::SetChannel { channel: 5 },
            Command::SetIntensity { intensity_ua: 1000 },
            Command::StimOnce,
        ],
    );
    let ch5 = ElectrodeId::channel(5).unwrap();
    d.step(20.0);
    assert_eq!(d.current_frame(), route(ch5, Phase::Priming).unwrap());
    d.step(22.0);
    assert_eq!(d.current_frame(), route(ch5, Phase::Stim).unwrap());
    assert_eq!(parse_hex_frame("0000000000C00003"), Some(d.current_frame()));
    d.step(10.0);
    assert!(d.current_frame().is_idle());
}

#[test]
fn samples_never_exceed_cap_and_stim_refused_over_limit() {
    let mut d = Device::new(DeviceConfig::default());
    let r = feed(
        &mut d,
        &[
            Command::Arm,
            Command::SetChannel { channel: 5 },
            Command::SetIntensity { intensity_ua: 4000 },
            Command::StimOnce,
        ],
    );
    assert!(r.iter().all(|c| matches!(c, Command::Ack { .. })));
    let out = d.run_until_idle();
    assert!(out.measurements.iter().all(|m| m.current_ma <= 4.5));
    assert_eq!(d.state(), SafetyState::Armed);
}

#[test]
fn short_circuit_fault() {
    let mut d = Device::new(DeviceConfig::default());
    feed(&mut d, &[Command::Arm, Command::SetChannel { channel: 12 }]);
    d.set_channel_resistance(12, 1.0);
    d.step(2.0);
    assert_eq!(d.state(), SafetyState::Fault(tactwrist_core::safety::FaultKind::Short));
    let r = feed(&mut d, &[Command::SetIntensity { intensity_ua: 500 }, Command::StimOnce]);
    assert_eq!(r[1], Command::Nak { opcode: 3, reason: NakReason::NotArmed });
}

#[test]
fn garbage_on_the_link_is_naked_and_skipped() {
    let mut d = Device::new(DeviceConfig::default());
    let mut bytes = protocol::encode(&Command::Arm).unwrap();
    *bytes.last_mut().unwrap() ^= 0xFF;
    bytes.extend(protocol::encode(&Command::QueryStatus).unwrap());
    let replies: Vec<Command> = StreamDecoder::new()
        .push(&d.receive_bytes(&bytes))
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert_eq!(replies.len(), 2);
    assert!(matches!(replies[0], Command::Nak { reason: NakReason::Malformed, .. }));
    assert!(matches!(replies[1], Command::Status(s) if s.state == SafetyState::Disarmed));
}
