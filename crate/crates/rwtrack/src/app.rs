//! The `rwtrack` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rwtrack_core::eval::{evaluate, EvalOptions, EvalReport};
use rwtrack_core::pipeline::{Pipeline, PipelineConfig, SearchSpaces};
use rwtrack_core::simulator::{synthesize, SceneSpec};

use crate::config::{load_scene, AppConfig, Format, SampleFormat};
use crate::error::{CliError, Result};
use crate::records::{
    create, read_trajectory, read_truth, write_jsonl, LocalizeRecord, StreamWriter, TrackRecord,
    TruthRecord,
};
use crate::runner::{run_channels, run_scene, BuiltinScene};
use crate::scan::scan_for;
use crate::wav::{read_wav, write_wav, FrameReader};

#[derive(Debug, Parser)]
#[command(
    name = "rwtrack",
    version,
    about = "Localize and track sound sources with an 8-microphone array"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file: a WAV recording, a scene (`simulate`) or a trajectory
    /// (`eval`).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output file; `-` or omitted writes to standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the tracker seed and, for built-in scenes, the scene seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for the grid scan.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render a scene to a multichannel WAV plus ground truth JSONL.
    Simulate {
        /// Built-in scene, used instead of `--input`.
        #[arg(long, value_enum)]
        scene: Option<BuiltinScene>,
        /// Ground truth path; defaults to the output with `.truth.jsonl`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum)]
        sample_format: Option<SampleFormat>,
    },
    /// Write the beamformer candidates of every update.
    Localize,
    /// Write the tracked sources of every update.
    Track,
    /// Score a trajectory against ground truth, or run and score a
    /// built-in scene.
    Eval {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum)]
        scene: Option<BuiltinScene>,
        /// Number of consecutive scene seeds, starting at `--seed` (or 1).
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Leading seconds excluded from the metrics.
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
    },
    /// Report top-candidate energies on noise-only and speech scenes.
    Calibrate {
        #[arg(long, default_value_t = 3)]
        runs: u64,
    },
    /// Measure the real-time factor on a recording or a built-in scene.
    Bench {
        #[arg(long, value_enum, default_value = "static")]
        scene: BuiltinScene,
    },
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rwtrack: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    if c.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let mut app = match &c.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = c.seed {
        app.seed = seed;
    }
    if let Some(format) = c.format {
        app.output.format = format;
    }
    let cfg = app.pipeline();
    cfg.validate()?;
    match &cli.command {
        Command::Simulate {
            scene,
            truth,
            sample_format,
        } => simulate(
            c,
            &cfg,
            *scene,
            truth.as_deref(),
            sample_format.unwrap_or(app.output.sample_format),
        ),
        Command::Localize => stream(c, &cfg, app.output.format, false),
        Command::Track => stream(c, &cfg, app.output.format, true),
        Command::Eval {
            truth,
            scene,
            runs,
            warmup,
        } => eval(c, &cfg, truth.as_deref(), *scene, *runs, *warmup),
        Command::Calibrate { runs } => calibrate(c, &cfg, *runs),
        Command::Bench { scene } => bench(c, &cfg, *scene),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("{what} requires --input")))
}

fn out_path(c: &Common) -> &Path {
    c.out.as_deref().unwrap_or(Path::new("-"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Internal(e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

fn simulate(
    c: &Common,
    cfg: &PipelineConfig,
    builtin: Option<BuiltinScene>,
    truth: Option<&Path>,
    sample_format: SampleFormat,
) -> Result<()> {
    let mut scene: SceneSpec = match (builtin, &c.input) {
        (Some(b), None) => b.spec(c.seed.unwrap_or(1)),
        (None, Some(path)) => load_scene(path)?,
        _ => {
            return Err(CliError::Config(
                "simulate needs exactly one of --scene and --input".into(),
            ))
        }
    };
    if let (Some(seed), None) = (c.seed, builtin) {
        scene.seed = seed;
    }
    let out = c
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("simulate requires --out".into()))?;
    let rendered = synthesize(&scene, &cfg.timing())?;
    if let Some(scale) = rendered.clip_scale {
        log::warn!("mixture clipped; scaled by {scale:.3}");
    }
    let rate = rendered.sample_rate;
    if rate.fract() != 0.0 || rate <= 0.0 || rate > u32::MAX as f64 {
        return Err(CliError::Config(format!(
            "sample rate {rate} is not a WAV rate"
        )));
    }
    write_wav(out, &rendered.channels, rate as u32, sample_format)?;
    let truth_path = truth
        .map(Path::to_owned)
        .unwrap_or_else(|| out.with_extension("truth.jsonl"));
    write_jsonl(
        &truth_path,
        rendered.truth.frames.iter().map(TruthRecord::new),
    )
}

/// `localize` and `track`: one record per update, streamed from the WAV.
fn stream(c: &Common, cfg: &PipelineConfig, format: Format, track: bool) -> Result<()> {
    let input = require(&c.input, if track { "track" } else { "localize" })?;
    let geom = &cfg.geometry;
    let mut frames = FrameReader::open(
        input,
        geom.mic_count(),
        geom.sample_rate(),
        cfg.spectral.frame_len,
        cfg.spectral.hop,
    )?;
    let spaces = SearchSpaces::build(cfg)?;
    let mut pipeline = Pipeline::with_spaces(cfg, &spaces, scan_for(c.threads)?)?;
    let out = out_path(c);
    let mut writer = StreamWriter::new(create(out)?, format);
    let center = geom.centroid();
    while let Some(frame) = frames.next_frame()? {
        if let Some(step) = pipeline.push_frame(frame)? {
            let written = if track {
                writer.track(&TrackRecord::new(step.t_seconds, &step.estimates, center))
            } else {
                writer.localize(&LocalizeRecord::new(&step.beamformer, step.t_seconds))
            };
            written.map_err(|e| CliError::io(out, e))?;
        }
    }
    writer.finish().map_err(|e| CliError::io(out, e))
}

#[derive(Serialize)]
struct SceneReport {
    scene: String,
    seed: u64,
    #[serde(flatten)]
    report: EvalReport,
}

fn eval(
    c: &Common,
    cfg: &PipelineConfig,
    truth: Option<&Path>,
    scene: Option<BuiltinScene>,
    runs: u64,
    warmup: f64,
) -> Result<()> {
    let opts = EvalOptions {
        warmup_s: warmup,
        ..EvalOptions::default()
    };
    match (scene, &c.input, truth) {
        (None, Some(input), Some(truth)) => {
            let report = evaluate(
                &read_trajectory(input)?,
                &read_truth(truth)?,
                cfg.geometry.centroid(),
                &opts,
            )?;
            write_json(out_path(c), &report)
        }
        (Some(scene), None, None) => {
            let spaces = SearchSpaces::build(cfg)?;
            let first = c.seed.unwrap_or(1);
            let mut reports = Vec::new();
            for seed in first..first + runs {
                let run = run_scene(cfg, &spaces, &scene.spec(seed), c.threads)?;
                reports.push(SceneReport {
                    scene: format!("{scene:?}").to_lowercase(),
                    seed,
                    report: run.report(cfg, &opts)?,
                });
            }
            write_jsonl(out_path(c), reports)
        }
        _ => Err(CliError::Config(
            "eval needs either --input with --truth, or --scene".into(),
        )),
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Percentiles {
    pub count: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles; all zero for an empty sample.
    pub fn of(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            if v.is_empty() {
                0.0
            } else {
                v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1]
            }
        };
        Self {
            count: v.len(),
            p10: at(0.10),
            p50: at(0.50),
            p90: at(0.90),
            p99: at(0.99),
            max: v.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Serialize)]
struct CalibrationReport {
    energy_threshold: f64,
    noise_only: Percentiles,
    speech: Percentiles,
}

/// Strongest-candidate energy per update: every update of the noise-only
/// scene, and updates of one-talker scenes while the talker is active.
fn calibrate(c: &Common, cfg: &PipelineConfig, runs: u64) -> Result<()> {
    let spaces = SearchSpaces::build(cfg)?;
    let first = c.seed.unwrap_or(1);
    let (mut noise, mut speech) = (Vec::new(), Vec::new());
    for seed in first..first + runs {
        for scene in [
            BuiltinScene::Silence,
            BuiltinScene::Static,
            BuiltinScene::Movers1,
        ] {
            let run = run_scene(cfg, &spaces, &scene.spec(seed), c.threads)?;
            for (step, truth) in run.steps.iter().zip(&run.rendered.truth.frames) {
                let Some(top) = step.beamformer.observations.first() else {
                    continue;
                };
                if truth.sources.is_empty() {
                    noise.push(top.energy);
                } else if truth.sources.iter().any(|s| s.active) {
                    speech.push(top.energy);
                }
            }
        }
    }
    write_json(
        out_path(c),
        &CalibrationReport {
            energy_threshold: cfg.tracker.energy_threshold,
            noise_only: Percentiles::of(noise),
            speech: Percentiles::of(speech),
        },
    )
}

#[derive(Serialize)]
struct BenchReport {
    input: String,
    threads: usize,
    audio_s: f64,
    setup_s: f64,
    wall_s: f64,
    /// Wall time over audio duration; below 1 is faster than real time.
    real_time_factor: f64,
    updates: usize,
}

fn bench(c: &Common, cfg: &PipelineConfig, scene: BuiltinScene) -> Result<()> {
    let (channels, rate, input) = match &c.input {
        Some(path) => {
            let (channels, spec) = read_wav(path)?;
            crate::wav::check_spec(
                path,
                &spec,
                cfg.geometry.mic_count(),
                cfg.geometry.sample_rate(),
            )?;
            (
                channels,
                spec.sample_rate as f64,
                path.display().to_string(),
            )
        }
        None => {
            let mut spec = scene.spec(c.seed.unwrap_or(1));
            spec.geometry = cfg.geometry.clone();
            let r = synthesize(&spec, &cfg.timing())?;
            (
                r.channels,
                r.sample_rate,
                format!("{scene:?}").to_lowercase(),
            )
        }
    };
    let start = Instant::now();
    let spaces = SearchSpaces::build(cfg)?;
    let setup_s = start.elapsed().as_secs_f64();
    let (steps, wall_s) = run_channels(cfg, &spaces, &channels, c.threads)?;
    let audio_s = channels.first().map_or(0.0, |ch| ch.len() as f64 / rate);
    write_json(
        out_path(c),
        &BenchReport {
            input,
            threads: c.threads,
            audio_s,
            setup_s,
            wall_s,
            real_time_factor: if audio_s > 0.0 { wall_s / audio_s } else { 0.0 },
            updates: steps.len(),
        },
    )
}
