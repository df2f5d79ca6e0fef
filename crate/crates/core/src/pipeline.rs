//! Streaming composition of the spectral front end, correlation,
//! localization and tracking stages.
//!
//! Frame `n` covers samples `[n·hop, n·hop + L)`. Every `frames_per_update`
//! frames the averaged correlations are searched once and the tracker is
//! stepped; the update is stamped with the center of the samples it used.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::correlation::CrossSpectrumAccumulator;
use crate::error::{bail, Result};
use crate::geometry::{
    log_distances, MicArrayGeometry, SearchGrid, COARSE_SIDE, FINE_SIDE, MAX_DISTANCE, MIN_DISTANCE,
};
use crate::localization::{
    BeamformerOutput, CoarseScan, FineSearch, Localizer, SearchSpace, SearchStats, SerialScan,
};
use crate::spectral::{SpectralConfig, SpectralFrontend, Stft};
use crate::tracker::{SourceEstimate, Tracker, TrackerConfig};

/// Sample clock of the frame and update sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTiming {
    pub sample_rate: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub frames_per_update: usize,
}

impl Default for FrameTiming {
    fn default() -> Self {
        Self {
            sample_rate: 48_000.0,
            frame_len: 1024,
            hop: 512,
            frames_per_update: 4,
        }
    }
}

impl FrameTiming {
    /// Complete frames in `samples` samples.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_len {
            0
        } else {
            (samples - self.frame_len) / self.hop + 1
        }
    }

    /// Complete updates in `samples` samples.
    pub fn update_count(&self, samples: usize) -> usize {
        self.frame_count(samples) / self.frames_per_update
    }

    /// Seconds between updates.
    pub fn update_period(&self) -> f64 {
        (self.hop * self.frames_per_update) as f64 / self.sample_rate
    }

    /// Center, in seconds, of the samples covered by update `u`.
    pub fn update_time(&self, u: u64) -> f64 {
        let f = self.frames_per_update as f64;
        let first = u as f64 * f * self.hop as f64;
        let span = (f - 1.0) * self.hop as f64 + self.frame_len as f64;
        (first + span / 2.0) / self.sample_rate
    }
}

/// Grid sizes and distance lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub coarse_side: usize,
    pub coarse_distances: Vec<f64>,
    pub fine_side: usize,
    pub fine_distances: Vec<f64>,
    pub fine_search: FineSearch,
    /// Lags zeroed on each side of a winner's lags before the next search.
    pub removal_radius: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            coarse_side: COARSE_SIDE,
            coarse_distances: log_distances(5, MIN_DISTANCE, MAX_DISTANCE),
            fine_side: FINE_SIDE,
            fine_distances: log_distances(25, MIN_DISTANCE, MAX_DISTANCE),
            fine_search: FineSearch::default(),
            removal_radius: 2,
        }
    }
}

/// Everything needed to run the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub geometry: MicArrayGeometry,
    pub spectral: SpectralConfig,
    pub grid: GridConfig,
    pub frames_per_update: usize,
    pub sources_per_frame: usize,
    pub tracker: TrackerConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: MicArrayGeometry::default(),
            spectral: SpectralConfig::default(),
            grid: GridConfig::default(),
            frames_per_update: 4,
            sources_per_frame: 2,
            tracker: TrackerConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn timing(&self) -> FrameTiming {
        FrameTiming {
            sample_rate: self.geometry.sample_rate(),
            frame_len: self.spectral.frame_len,
            hop: self.spectral.hop,
            frames_per_update: self.frames_per_update,
        }
    }

    /// Checks every stage's preconditions, including that the array fits
    /// the correlation window and the tracker period matches the updates.
    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        self.tracker.validate()?;
        if self.frames_per_update == 0 {
            bail!(Config, "frames_per_update must be positive");
        }
        if !(1..=crate::localization::MAX_SOURCES_PER_FRAME).contains(&self.sources_per_frame) {
            bail!(
                Config,
                "sources_per_frame must be in 1..=4, got {}",
                self.sources_per_frame
            );
        }
        let g = &self.grid;
        for (name, side, d) in [
            ("coarse", g.coarse_side, &g.coarse_distances),
            ("fine", g.fine_side, &g.fine_distances),
        ] {
            if side < 2 {
                bail!(Config, "{name} grid side must be at least 2, got {side}");
            }
            if d.is_empty() {
                bail!(Config, "{name} distance list is empty");
            }
            if d.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
                bail!(Config, "{name} distances must be positive");
            }
        }
        if 2 * self.geometry.max_delay_samples() as usize >= self.spectral.frame_len {
            bail!(Config, "array aperture exceeds half the frame length");
        }
        let period = self.timing().update_period();
        if libm::fabs(period - self.tracker.delta_t) > 1e-9 * period {
            bail!(
                Config,
                "tracker.delta_t is {} s but updates are {} s apart",
                self.tracker.delta_t,
                period
            );
        }
        Ok(())
    }

    /// Builds (or reuses) the coarse and fine search spaces.
    pub fn search_spaces(&self) -> Result<SearchSpaces> {
        SearchSpaces::build(self)
    }
}

/// Immutable grids and lookup tables; cheap to share between pipelines.
#[derive(Debug, Clone)]
pub struct SearchSpaces {
    pub coarse: Arc<SearchSpace>,
    pub fine: Option<Arc<SearchSpace>>,
}

impl SearchSpaces {
    pub fn build(cfg: &PipelineConfig) -> Result<Self> {
        let g = &cfg.grid;
        let len = cfg.spectral.frame_len;
        let coarse = SearchSpace::build(
            SearchGrid::build(g.coarse_side, &g.coarse_distances)?,
            &cfg.geometry,
            len,
        )?;
        let fine = match g.fine_search {
            FineSearch::Off => None,
            _ => Some(Arc::new(SearchSpace::build(
                SearchGrid::build(g.fine_side, &g.fine_distances)?,
                &cfg.geometry,
                len,
            )?)),
        };
        Ok(Self {
            coarse: Arc::new(coarse),
            fine,
        })
    }
}

/// Output of one tracker update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub update_index: u64,
    pub t_seconds: f64,
    pub beamformer: BeamformerOutput,
    pub search: SearchStats,
    pub estimates: Vec<SourceEstimate>,
}

/// Stateful frame-by-frame pipeline.
pub struct Pipeline {
    timing: FrameTiming,
    channels: usize,
    stft: Stft,
    frontend: SpectralFrontend,
    accumulator: CrossSpectrumAccumulator,
    localizer: Localizer,
    tracker: Tracker,
    scan: Box<dyn CoarseScan + Send + Sync>,
    frames: u64,
    updates: u64,
}

impl core::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Pipeline")
            .field("timing", &self.timing)
            .field("frames", &self.frames)
            .field("updates", &self.updates)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let spaces = SearchSpaces::build(cfg)?;
        Self::with_spaces(cfg, &spaces, Box::new(SerialScan))
    }

    /// Builds a pipeline on prebuilt search spaces with a custom coarse scan.
    pub fn with_spaces(
        cfg: &PipelineConfig,
        spaces: &SearchSpaces,
        scan: Box<dyn CoarseScan + Send + Sync>,
    ) -> Result<Self> {
        cfg.validate()?;
        let geom = &cfg.geometry;
        let channels = geom.mic_count();
        let center = geom.centroid();
        let localizer = Localizer::new(
            spaces.coarse.clone(),
            spaces.fine.clone(),
            center,
            cfg.sources_per_frame,
            cfg.grid.fine_search,
        )?
        .with_removal_radius(cfg.grid.removal_radius);
        if localizer.coarse().table.correlation_len() != cfg.spectral.frame_len {
            bail!(
                Config,
                "search spaces were built for a different frame length"
            );
        }
        Ok(Self {
            timing: cfg.timing(),
            channels,
            stft: Stft::new(cfg.spectral.frame_len, channels)?,
            frontend: SpectralFrontend::new(&cfg.spectral, channels, geom.sample_rate())?,
            accumulator: CrossSpectrumAccumulator::new(
                geom.pairs(),
                cfg.spectral.bins(),
                cfg.frames_per_update,
            )?,
            localizer,
            tracker: Tracker::new(cfg.tracker.clone(), center, cfg.seed)?,
            scan,
            frames: 0,
            updates: 0,
        })
    }

    pub fn timing(&self) -> FrameTiming {
        self.timing
    }

    pub fn frontend(&self) -> &SpectralFrontend {
        &self.frontend
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Consumes one analysis frame per channel (`frame_len` samples each).
    /// Returns an update after every `frames_per_update` frames.
    pub fn push_frame<S: AsRef<[f64]>>(&mut self, frame: &[S]) -> Result<Option<StepOutput>> {
        if frame.len() != self.channels {
            bail!(
                Input,
                "got {} channels, geometry has {}",
                frame.len(),
                self.channels
            );
        }
        let spectra = self.stft.stft_frame(self.frames, frame)?;
        let weights = self.frontend.process(spectra);
        let spectra = self
            .frontend
            .last_frame()
            .expect("frame was just processed");
        self.accumulator.accumulate(spectra, &weights)?;
        self.frames += 1;
        if self.frames % self.timing.frames_per_update as u64 != 0 {
            return Ok(None);
        }
        let u = self.updates;
        self.updates += 1;
        let mut corr = self.accumulator.correlations()?;
        let (beamformer, search) = self.localizer.search(&mut corr, &*self.scan, u)?;
        let t = self.timing.update_time(u);
        let estimates = self.tracker.step(&beamformer, t);
        Ok(Some(StepOutput {
            update_index: u,
            t_seconds: t,
            beamformer,
            search,
            estimates,
        }))
    }

    /// Runs over whole multichannel recordings, calling `sink` per update.
    pub fn run<S, F>(&mut self, channels: &[S], mut sink: F) -> Result<()>
    where
        S: AsRef<[f64]>,
        F: FnMut(StepOutput) -> Result<()>,
    {
        if channels.len() != self.channels {
            bail!(
                Input,
                "got {} channels, geometry has {}",
                channels.len(),
                self.channels
            );
        }
        let len = channels[0].as_ref().len();
        if channels.iter().any(|c| c.as_ref().len() != len) {
            bail!(Input, "channels have different lengths");
        }
        let (l, hop) = (self.timing.frame_len, self.timing.hop);
        for n in 0..self.timing.frame_count(len) {
            let start = n * hop;
            let frame: Vec<&[f64]> = channels
                .iter()
                .map(|c| &c.as_ref()[start..start + l])
                .collect();
            if let Some(out) = self.push_frame(&frame)? {
                sink(out)?;
            }
        }
        Ok(())
    }
}

/// Convenience wrapper collecting every update of `channels`.
pub fn run_offline<S: AsRef<[f64]>>(
    cfg: &PipelineConfig,
    channels: &[S],
) -> Result<Vec<StepOutput>> {
    let mut pipeline = Pipeline::new(cfg)?;
    let mut out = Vec::new();
    pipeline.run(channels, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}
