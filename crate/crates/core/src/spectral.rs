//! Per-channel STFT frontend and reliability weights.
//!
//! Each frame runs, per channel and bin:
//!
//! 1. background noise `σ²` by minima-gated recursive averaging,
//! 2. reverberation `λⁿ = γλⁿ⁻¹ + (1−γ)δ⁻¹|ζⁿ⁻¹Xⁿ⁻¹|²`,
//! 3. decision-directed a-priori SNR `ξ` against `σ² + λ`,
//! 4. Wiener gain `ζ = ξ / (ξ + 1)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fft::Fft;

/// Floor for the noise-plus-reverberation denominator.
const POWER_FLOOR: f64 = 1e-30;

/// Tunables for the frontend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Analysis window length `L` in samples.
    pub frame_len: usize,
    /// Hop between consecutive frames in samples.
    pub hop: usize,
    /// Decision-directed smoothing.
    pub alpha_dd: f64,
    pub noise: NoiseConfig,
    /// Reverberation time in seconds used to derive the per-frame decay.
    pub rt60: f64,
    /// Signal-to-reverberant ratio `δ`.
    pub srr: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 512,
            alpha_dd: 0.97,
            noise: NoiseConfig::default(),
            rt60: 0.3,
            srr: 10.0,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 4 || !self.frame_len.is_power_of_two() {
            bail!(
                Config,
                "spectral.frame_len must be a power of two >= 4, got {}",
                self.frame_len
            );
        }
        if self.hop == 0 || self.hop > self.frame_len {
            bail!(
                Config,
                "spectral.hop must be in 1..=frame_len, got {}",
                self.hop
            );
        }
        if !(0.0..1.0).contains(&self.alpha_dd) {
            bail!(
                Config,
                "spectral.alpha_dd must be in [0, 1), got {}",
                self.alpha_dd
            );
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            bail!(Config, "spectral.rt60 must be positive, got {}", self.rt60);
        }
        if !(self.srr > 0.0 && self.srr.is_finite()) {
            bail!(Config, "spectral.srr must be positive, got {}", self.srr);
        }
        self.noise.validate()
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Per-frame reverberation decay `γ = 10^(−6·hop / (RT60·fs))`, i.e. a
    /// 60 dB energy drop over one RT60.
    pub fn reverb_decay(&self, sample_rate: f64) -> f64 {
        libm::pow(10.0, -6.0 * self.hop as f64 / (self.rt60 * sample_rate))
    }
}

/// Minima-controlled noise tracker tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Recursive averaging rate `α_n`.
    pub alpha: f64,
    /// Minimum-tracker reset window in frames.
    pub window: usize,
    /// Gate factor `κ`: adapt only while the smoothed power stays within
    /// this factor of the tracked minimum.
    pub gate: f64,
    /// Time smoothing of the power used for minimum tracking.
    pub smoothing: f64,
    /// While `σ²` exceeds this factor of the tracked minimum it decays
    /// towards it at rate `α_n`, which drains a floor that started out on
    /// speech.
    pub ceiling: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            window: 150,
            gate: 5.0,
            smoothing: 0.8,
            ceiling: 3.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bail!(
                Config,
                "spectral.noise.alpha must be in (0, 1], got {}",
                self.alpha
            );
        }
        if self.window == 0 {
            bail!(Config, "spectral.noise.window must be positive");
        }
        if !(self.gate >= 1.0 && self.gate.is_finite()) {
            bail!(
                Config,
                "spectral.noise.gate must be >= 1, got {}",
                self.gate
            );
        }
        if !(self.ceiling >= 1.0) {
            bail!(
                Config,
                "spectral.noise.ceiling must be >= 1, got {}",
                self.ceiling
            );
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            bail!(
                Config,
                "spectral.noise.smoothing must be in [0, 1), got {}",
                self.smoothing
            );
        }
        Ok(())
    }
}

/// One-sided spectra of every channel for one analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub frame_index: u64,
    /// `spectra[channel][bin]`, `L/2 + 1` bins each.
    pub spectra: Vec<Vec<Complex64>>,
}

impl SpectralFrame {
    pub fn channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn bins(&self) -> usize {
        self.spectra.first().map_or(0, Vec::len)
    }

    fn power(&self, ch: usize, k: usize) -> f64 {
        self.spectra[ch][k].norm_sqr()
    }
}

/// Windowed real-input STFT with a periodic Hann window.
#[derive(Debug, Clone)]
pub struct Stft {
    channels: usize,
    window: Vec<f64>,
    fft: Fft,
    scratch: Vec<Complex64>,
}

impl Stft {
    pub fn new(frame_len: usize, channels: usize) -> Result<Self> {
        let fft = Fft::new(frame_len)?;
        let window = hann(frame_len);
        Ok(Self {
            channels,
            window,
            fft,
            scratch: alloc::vec![Complex64::new(0.0, 0.0); frame_len],
        })
    }

    pub fn frame_len(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Transforms one window of `L` samples per channel.
    pub fn stft_frame<S: AsRef<[f64]>>(
        &mut self,
        frame_index: u64,
        samples: &[S],
    ) -> Result<SpectralFrame> {
        if samples.len() != self.channels {
            bail!(
                Input,
                "expected {} channels, got {}",
                self.channels,
                samples.len()
            );
        }
        let len = self.window.len();
        let mut spectra = Vec::with_capacity(self.channels);
        for (ch, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != len {
                bail!(
                    Input,
                    "channel {ch} has {} samples, expected {len}",
                    s.len()
                );
            }
            for ((dst, &x), &w) in self.scratch.iter_mut().zip(s).zip(&self.window) {
                *dst = Complex64::new(x * w, 0.0);
            }
            self.fft.forward(&mut self.scratch);
            spectra.push(self.scratch[..len / 2 + 1].to_vec());
        }
        Ok(SpectralFrame {
            frame_index,
            spectra,
        })
    }
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64))
        .collect()
}

/// Background noise power `σ²` per channel and bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseState {
    cfg: NoiseConfig,
    pub sigma2: Vec<Vec<f64>>,
    smoothed: Vec<Vec<f64>>,
    minimum: Vec<Vec<f64>>,
    candidate: Vec<Vec<f64>>,
    frames: u64,
}

impl NoiseState {
    pub fn new(cfg: NoiseConfig, channels: usize, bins: usize) -> Self {
        let zeros = alloc::vec![alloc::vec![0.0; bins]; channels];
        Self {
            cfg,
            sigma2: zeros.clone(),
            smoothed: zeros.clone(),
            minimum: zeros.clone(),
            candidate: zeros,
            frames: 0,
        }
    }

    /// Starts from a given noise floor instead of the first frame.
    pub fn with_initial(cfg: NoiseConfig, sigma2: Vec<Vec<f64>>) -> Self {
        let channels = sigma2.len();
        let bins = sigma2.first().map_or(0, Vec::len);
        let mut s = Self::new(cfg, channels, bins);
        s.smoothed = sigma2.clone();
        s.minimum = sigma2.clone();
        s.candidate = sigma2.clone();
        s.sigma2 = sigma2;
        s.frames = 1;
        s
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Frames after the first during which `σ²` is the plain running mean
    /// and the minimum follows the smoothed power, so a low first periodogram
    /// cannot lock the gate shut.
    fn warmup_frames(&self) -> u64 {
        libm::ceil(2.0 / (1.0 - self.cfg.smoothing)) as u64
    }

    /// Minima-gated recursive average. The minimum is tracked on a time and
    /// frequency smoothed periodogram and restarts every `window` frames.
    pub fn update(&mut self, frame: &SpectralFrame) {
        let bins = frame.bins();
        let NoiseConfig {
            alpha,
            window,
            gate,
            smoothing,
            ceiling,
        } = self.cfg;
        for ch in 0..frame.channels() {
            let spec = &frame.spectra[ch];
            if self.frames == 0 {
                for k in 0..bins {
                    let p = spec[k].norm_sqr();
                    self.sigma2[ch][k] = p;
                    self.smoothed[ch][k] = p;
                    self.minimum[ch][k] = p;
                    self.candidate[ch][k] = p;
                }
                continue;
            }
            let warming = self.frames < self.warmup_frames();
            let restart = self.frames % window as u64 == 0;
            for k in 0..bins {
                let p = spec[k].norm_sqr();
                let lo = spec[k.saturating_sub(1)].norm_sqr();
                let hi = spec[(k + 1).min(bins - 1)].norm_sqr();
                let band = 0.25 * lo + 0.5 * p + 0.25 * hi;
                let s = smoothing * self.smoothed[ch][k] + (1.0 - smoothing) * band;
                self.smoothed[ch][k] = s;
                if warming {
                    self.minimum[ch][k] = s;
                    self.candidate[ch][k] = s;
                } else if restart {
                    self.minimum[ch][k] = self.candidate[ch][k].min(s);
                    self.candidate[ch][k] = s;
                } else {
                    self.minimum[ch][k] = self.minimum[ch][k].min(s);
                    self.candidate[ch][k] = self.candidate[ch][k].min(s);
                }
                let n = &mut self.sigma2[ch][k];
                if s <= gate * self.minimum[ch][k] {
                    *n = (1.0 - alpha) * *n + alpha * p;
                }
                let cap = ceiling * self.minimum[ch][k];
                if *n > cap {
                    *n = (1.0 - alpha) * *n + alpha * cap;
                }
            }
        }
        self.frames += 1;
    }
}

/// Reverberation power `λ` and its decay model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverbState {
    pub lambda: Vec<Vec<f64>>,
    gamma: f64,
    delta_srr: f64,
}

impl ReverbState {
    pub fn new(channels: usize, bins: usize, gamma: f64, delta_srr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            bail!(Config, "reverberation decay must be in [0, 1), got {gamma}");
        }
        if !(delta_srr > 0.0) {
            bail!(
                Config,
                "signal-to-reverberant ratio must be positive, got {delta_srr}"
            );
        }
        Ok(Self {
            lambda: alloc::vec![alloc::vec![0.0; bins]; channels],
            gamma,
            delta_srr,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta_srr(&self) -> f64 {
        self.delta_srr
    }

    /// Advances `λ` one frame from the previous frame's weighted spectrum.
    pub fn update(&mut self, prev_weights: &ReliabilityWeights, prev_frame: &SpectralFrame) {
        let g = self.gamma;
        let scale = (1.0 - g) / self.delta_srr;
        for (ch, lam) in self.lambda.iter_mut().enumerate() {
            for (k, l) in lam.iter_mut().enumerate() {
                let clean =
                    prev_weights.zeta[ch][k] * prev_weights.zeta[ch][k] * prev_frame.power(ch, k);
                *l = g * *l + scale * clean;
            }
        }
    }
}

/// Decision-directed SNR memory: `|ζX|²` of the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrState {
    pub prev_clean_power: Vec<Vec<f64>>,
    pub alpha_dd: f64,
}

impl SnrState {
    pub fn new(channels: usize, bins: usize, alpha_dd: f64) -> Self {
        Self {
            prev_clean_power: alloc::vec![alloc::vec![0.0; bins]; channels],
            alpha_dd,
        }
    }

    /// Stores `|ζX|²` of the frame just processed.
    pub fn remember(&mut self, weights: &ReliabilityWeights, frame: &SpectralFrame) {
        for (ch, prev) in self.prev_clean_power.iter_mut().enumerate() {
            for (k, p) in prev.iter_mut().enumerate() {
                let z = weights.zeta[ch][k];
                *p = z * z * frame.power(ch, k);
            }
        }
    }
}

/// Decision-directed a-priori SNR against noise plus reverberation.
pub fn a_priori_snr(
    snr: &SnrState,
    noise: &NoiseState,
    reverb: &ReverbState,
    frame: &SpectralFrame,
) -> Vec<Vec<f64>> {
    let a = snr.alpha_dd;
    (0..frame.channels())
        .map(|ch| {
            (0..frame.bins())
                .map(|k| {
                    let floor = (noise.sigma2[ch][k] + reverb.lambda[ch][k]).max(POWER_FLOOR);
                    let posterior = frame.power(ch, k) / floor;
                    let xi = a * snr.prev_clean_power[ch][k] / floor
                        + (1.0 - a) * (posterior - 1.0).max(0.0);
                    if xi.is_finite() {
                        xi
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Per channel and bin reliability `ζ ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityWeights {
    pub zeta: Vec<Vec<f64>>,
}

impl ReliabilityWeights {
    pub fn uniform(channels: usize, bins: usize, value: f64) -> Self {
        Self {
            zeta: alloc::vec![alloc::vec![value; bins]; channels],
        }
    }
}

/// Wiener gain `ξ / (ξ + 1)`.
pub fn reliability_weights(xi: &[Vec<f64>]) -> ReliabilityWeights {
    ReliabilityWeights {
        zeta: xi
            .iter()
            .map(|ch| ch.iter().map(|&x| x / (x + 1.0)).collect())
            .collect(),
    }
}

/// Frame-by-frame composition of the noise, reverberation and SNR recursions.
#[derive(Debug, Clone)]
pub struct SpectralFrontend {
    noise: NoiseState,
    reverb: ReverbState,
    snr: SnrState,
    previous: Option<(SpectralFrame, ReliabilityWeights)>,
}

impl SpectralFrontend {
    pub fn new(cfg: &SpectralConfig, channels: usize, sample_rate: f64) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.bins();
        Ok(Self {
            noise: NoiseState::new(cfg.noise.clone(), channels, bins),
            reverb: ReverbState::new(channels, bins, cfg.reverb_decay(sample_rate), cfg.srr)?,
            snr: SnrState::new(channels, bins, cfg.alpha_dd),
            previous: None,
        })
    }

    pub fn noise(&self) -> &NoiseState {
        &self.noise
    }

    pub fn reverb(&self) -> &ReverbState {
        &self.reverb
    }

    /// Consumes frame `n` and returns `ζⁿ`.
    pub fn process(&mut self, frame: SpectralFrame) -> ReliabilityWeights {
        self.noise.update(&frame);
        if let Some((prev_frame, prev_weights)) = &self.previous {
            self.reverb.update(prev_weights, prev_frame);
        }
        let xi = a_priori_snr(&self.snr, &self.noise, &self.reverb, &frame);
        let weights = reliability_weights(&xi);
        self.snr.remember(&weights, &frame);
        self.previous = Some((frame, weights.clone()));
        weights
    }

    /// The frame most recently passed to [`SpectralFrontend::process`].
    pub fn last_frame(&self) -> Option<&SpectralFrame> {
        self.previous.as_ref().map(|(f, _)| f)
    }
}
