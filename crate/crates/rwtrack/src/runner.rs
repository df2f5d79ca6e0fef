//! Whole-scene runs shared by `eval`, `bench` and `calibrate`.

use std::time::Instant;

use rwtrack_core::eval::{evaluate, EvalOptions, EvalReport, TrajectoryFrame};
use rwtrack_core::pipeline::{Pipeline, PipelineConfig, SearchSpaces, StepOutput};
use rwtrack_core::scenes;
use rwtrack_core::simulator::{synthesize, Rendered, SceneSpec};

use crate::error::Result;
use crate::scan::scan_for;

/// Built-in reference scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BuiltinScene {
    Static,
    Movers1,
    Movers2,
    Movers3,
    Crossing,
    Silence,
}

impl BuiltinScene {
    pub fn spec(self, seed: u64) -> SceneSpec {
        match self {
            BuiltinScene::Static => scenes::static_talker(seed),
            BuiltinScene::Movers1 => scenes::movers(1, seed),
            BuiltinScene::Movers2 => scenes::movers(2, seed),
            BuiltinScene::Movers3 => scenes::movers(3, seed),
            BuiltinScene::Crossing => scenes::crossing(seed),
            BuiltinScene::Silence => scenes::silence(seed),
        }
    }
}

pub struct SceneRun {
    pub rendered: Rendered,
    pub steps: Vec<StepOutput>,
    /// Wall time of the pipeline alone, seconds.
    pub wall_s: f64,
    pub audio_s: f64,
}

impl SceneRun {
    pub fn trajectory(&self) -> Vec<TrajectoryFrame> {
        trajectory(&self.steps)
    }

    /// Scores the run; runtime and real-time factor come from the timing.
    pub fn report(&self, cfg: &PipelineConfig, opts: &EvalOptions) -> Result<EvalReport> {
        let mut r = evaluate(
            &self.trajectory(),
            &self.rendered.truth,
            cfg.geometry.centroid(),
            opts,
        )?;
        r.runtime_s = Some(self.wall_s);
        r.real_time_factor = Some(self.wall_s / self.audio_s);
        Ok(r)
    }
}

pub fn trajectory(steps: &[StepOutput]) -> Vec<TrajectoryFrame> {
    steps
        .iter()
        .map(|s| TrajectoryFrame {
            t_seconds: s.t_seconds,
            sources: s.estimates.clone(),
        })
        .collect()
}

/// Runs the pipeline over channels already in memory.
pub fn run_channels(
    cfg: &PipelineConfig,
    spaces: &SearchSpaces,
    channels: &[Vec<f64>],
    threads: usize,
) -> Result<(Vec<StepOutput>, f64)> {
    let mut pipeline = Pipeline::with_spaces(cfg, spaces, scan_for(threads)?)?;
    let mut steps = Vec::new();
    let start = Instant::now();
    pipeline.run(channels, |s| {
        steps.push(s);
        Ok(())
    })?;
    Ok((steps, start.elapsed().as_secs_f64()))
}

/// Renders `scene` with the pipeline's array and runs the pipeline on it.
pub fn run_scene(
    cfg: &PipelineConfig,
    spaces: &SearchSpaces,
    scene: &SceneSpec,
    threads: usize,
) -> Result<SceneRun> {
    let mut scene = scene.clone();
    scene.geometry = cfg.geometry.clone();
    let rendered = synthesize(&scene, &cfg.timing())?;
    if let Some(scale) = rendered.clip_scale {
        log::warn!("scene clipped; scaled by {scale:.3}");
    }
    let (steps, wall_s) = run_channels(cfg, spaces, &rendered.channels, threads)?;
    Ok(SceneRun {
        audio_s: rendered.channels[0].len() as f64 / rendered.sample_rate,
        rendered,
        steps,
        wall_s,
    })
}
