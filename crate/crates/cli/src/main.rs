use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tactwrist_analysis::report::AnalysisConfig;
use tactwrist_analysis::ttest::Variance;
use tactwrist_core::effects::{EffectSize, Opacity, VisualCondition};
use tactwrist_core::render::record::{read_log, StudyKind};
use tactwrist_core::render::study::ProtocolConfig;
use tactwrist_core::render::DevicePolicy;
use tactwrist_core::stim::Polarity;

use tactwrist_cli::analyze::{load_logs, run_analysis, write_report};
use tactwrist_cli::render::{default_scene, pairs_to_lines, parse_scene, render_stream, RenderOptions};
use tactwrist_cli::run::{run_studies, write_outputs, RunOptions, Studies};
use tactwrist_cli::serve::Server;
use tactwrist_cli::session::{Session, SessionConfig};
use tactwrist_cli::waveform::{write_waveforms, WaveformArgs};
use tactwrist_cli::load_perceiver;

/// Exit status when a session stopped on a safety event.
const EXIT_ABORTED: i32 = 2;

#[derive(Parser)]
#[command(name = "tactwrist", version, about = "Wrist-worn electro-tactile haptics: simulate, analyze, serve")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Cathodic,
    Anodic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plot a stimulus waveform to CSV and SVG.
    Waveform {
        /// Stimulation amplitude in mA.
        #[arg(long, default_value_t = 1.6)]
        amp: f64,
        /// Plain rectangular pulse instead of the charge-balanced stimulus.
        #[arg(long)]
        monophasic: bool,
        /// Stimulation phase width in ms.
        #[arg(long, default_value_t = 5.0)]
        width: f64,
        #[arg(long, value_enum, default_value_t = PolarityArg::Cathodic)]
        polarity: PolarityArg,
        /// Sample rate in Hz.
        #[arg(long, default_value_t = 10_000)]
        rate: u32,
        #[arg(long, env = "TACTWRIST_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run simulated study sessions and write TrialRecord logs.
    Run {
        /// study1, study2 or both.
        study: Studies,
        #[arg(long, env = "TACTWRIST_SEED")]
        seed: u64,
        /// Number of simulated participants.
        #[arg(long, default_value_t = 1)]
        participants: u32,
        /// Id of the first participant.
        #[arg(long, default_value_t = 0)]
        first_participant: u32,
        #[arg(long, env = "TACTWRIST_POLICY", default_value = "electro")]
        policy: DevicePolicy,
        /// Perceiver model (TOML); the built-in model when absent.
        #[arg(long, env = "TACTWRIST_PERCEIVER")]
        perceiver: Option<PathBuf>,
        /// Study1 log used to pick study2 channels when running study2 alone.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, env = "TACTWRIST_OUT", default_value = "out")]
        out: PathBuf,
        /// Script an overcurrent reading at this simulated time (ms).
        #[arg(long, hide = true)]
        inject_overcurrent_ms: Option<f64>,
    },
    /// Analyze TrialRecord logs into tables, statistics and heatmaps.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, env = "TACTWRIST_OUT", default_value = "out")]
        out: PathBuf,
        /// Welch's t-test instead of the pooled-variance test.
        #[arg(long)]
        welch: bool,
        /// Add Greenhouse-Geisser corrected p-values.
        #[arg(long)]
        gg: bool,
    },
    /// Replay a pose stream and emit synchronized stimulus/visual pairs.
    Render {
        /// Pose stream: one JSON hand pose per line.
        poses: PathBuf,
        /// JSON array of UI elements; a single button when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, env = "TACTWRIST_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        participant: u32,
        #[arg(long, env = "TACTWRIST_POLICY", default_value = "electro")]
        policy: DevicePolicy,
        #[arg(long, env = "TACTWRIST_VISUAL_SIZE")]
        visual_size: Option<EffectSize>,
        #[arg(long, env = "TACTWRIST_OPACITY", default_value = "full")]
        opacity: Opacity,
        #[arg(long, env = "TACTWRIST_PERCEIVER")]
        perceiver: Option<PathBuf>,
        #[arg(long, env = "TACTWRIST_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Console backend: line-delimited JSON over TCP, one operator at a time.
    Serve {
        #[arg(long, env = "TACTWRIST_PORT", default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Study whose trial plan START_TRIAL walks through.
        #[arg(long, default_value = "study1")]
        study: StudyKind,
        #[arg(long, default_value_t = 0)]
        participant: u32,
        #[arg(long, env = "TACTWRIST_SEED")]
        seed: u64,
        #[arg(long, env = "TACTWRIST_POLICY", default_value = "electro")]
        policy: DevicePolicy,
        /// Study1 log used to pick study2 channels.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, env = "TACTWRIST_OUT", default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    match real_main() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn real_main() -> anyhow::Result<i32> {
    match Cli::parse().command {
        Cmd::Waveform {
            amp,
            monophasic,
            width,
            polarity,
            rate,
            out,
        } => {
            let args = WaveformArgs {
                amplitude_ma: amp,
                monophasic,
                width_ms: width,
                polarity: match polarity {
                    PolarityArg::Cathodic => Polarity::Cathodic,
                    PolarityArg::Anodic => Polarity::Anodic,
                },
                sample_rate_hz: rate,
            };
            for r in write_waveforms(&args, &out)? {
                println!("{}: {} ({} uC net)", r.name, r.csv.display(), r.net_charge_uc);
            }
            Ok(0)
        }
        Cmd::Run {
            study,
            seed,
            participants,
            first_participant,
            policy,
            perceiver,
            prior,
            out,
            inject_overcurrent_ms,
        } => {
            let prior = match prior {
                Some(p) => load_logs(&[p])?,
                None => Vec::new(),
            };
            let opts = RunOptions {
                studies: study,
                seed,
                participants: (first_participant..first_participant + participants).collect(),
                perceiver: load_perceiver(perceiver.as_deref())?,
                protocol: ProtocolConfig {
                    policy,
                    ..ProtocolConfig::default()
                },
                prior,
                inject_overcurrent_ms,
            };
            let outcome = run_studies(&opts);
            for p in write_outputs(&opts, &outcome, &out)? {
                println!("wrote {}", p.display());
            }
            println!(
                "{} study1 and {} study2 records; device left {}",
                outcome.study1.len(),
                outcome.study2.len(),
                outcome.final_states.last().map(|s| s.to_string()).unwrap_or_else(|| "untouched".into())
            );
            if let Some((p, reason)) = &outcome.abort {
                eprintln!("participant {p}: session aborted: {reason}; log is partial");
                return Ok(EXIT_ABORTED);
            }
            Ok(0)
        }
        Cmd::Analyze { logs, out, welch, gg } => {
            let records = load_logs(&logs)?;
            let cfg = AnalysisConfig {
                variance: if welch { Variance::Welch } else { Variance::Pooled },
                greenhouse_geisser: gg,
            };
            let report = run_analysis(&records, cfg)?;
            let written = write_report(&report, &records, &out)?;
            print!("{}", report.to_text());
            println!("wrote {} files under {}", written.len(), out.display());
            Ok(0)
        }
        Cmd::Render {
            poses,
            scene,
            seed,
            participant,
            policy,
            visual_size,
            opacity,
            perceiver,
            out,
        } => {
            let text = std::fs::read_to_string(&poses).with_context(|| format!("reading {}", poses.display()))?;
            let scene = match scene {
                Some(p) => parse_scene(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => default_scene(),
            };
            let opts = RenderOptions {
                policy,
                visual: visual_size.map(|size| VisualCondition { size, opacity }),
                participant,
                seed,
                perceiver: load_perceiver(perceiver.as_deref())?,
            };
            let pairs = render_stream(&text, &scene, &opts)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("pairs.jsonl");
            std::fs::write(&path, pairs_to_lines(&pairs)?)?;
            let worst = pairs.iter().map(|p| p.lag_ms()).fold(0.0, f64::max);
            println!("{} pairs, worst lag {worst} ms; wrote {}", pairs.len(), path.display());
            Ok(0)
        }
        Cmd::Serve {
            port,
            host,
            study,
            participant,
            seed,
            policy,
            prior,
            out,
        } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut cfg = SessionConfig::new(study, participant, seed);
            cfg.protocol.policy = policy;
            cfg.out = Some(out);
            if let Some(p) = prior {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                let records: Vec<_> = read_log(&text)?.into_iter().filter(|r| r.participant == participant).collect();
                cfg.channels = tactwrist_core::render::study::FingerChannels::from_study1(&records, tactwrist_core::handmap::HandMap::bundled());
            }
            let server = Server::bind(&format!("{host}:{port}"), Session::new(cfg)).with_context(|| format!("binding {host}:{port}"))?;
            let stop = Arc::new(AtomicBool::new(false));
            {
                let stop = stop.clone();
                ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))?;
            }
            println!("listening on {}", server.local_addr()?);
            std::io::stdout().flush()?;
            let report = server.run(stop)?;
            println!(
                "shutdown: device {}, relays {}",
                report.state,
                if report.frame_idle { "idle" } else { "NOT idle" }
            );
            if let Some(p) = report.device_log {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}
