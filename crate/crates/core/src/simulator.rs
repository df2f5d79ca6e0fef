//! Synthetic multichannel scenes with ground truth.
//!
//! Point sources follow piecewise-linear trajectories. Each microphone gets
//! every source delayed by its propagation time (windowed-sinc fractional
//! delay, updated once per hop) with `1/r` attenuation, an optional diffuse
//! exponentially decaying tail and independent white noise at a target SNR.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::geometry::{MicArrayGeometry, Vec3, MAX_DISTANCE, MIN_DISTANCE};
use crate::pipeline::FrameTiming;

/// Half-width of the fractional-delay kernel; the kernel has `2·15 + 1` taps.
pub const FRACTIONAL_DELAY_HALF_TAPS: usize = 15;

/// Mean power of the speech-like source at 1.5 m with unit gain, used as
/// the noise reference for scenes without sources.
pub const NOMINAL_SIGNAL_POWER: f64 = 0.1 * 0.1 / (1.5 * 1.5);

/// Velvet-noise pulses per second in the diffuse tail.
const VELVET_DENSITY: f64 = 1000.0;
/// Gap between the direct sound and the start of the tail.
const TAIL_PREDELAY_S: f64 = 0.004;

/// Blackman-windowed sinc taps for a delay of `frac ∈ [0, 1)` samples,
/// indexed from `-HALF` to `HALF`.
fn delay_taps(frac: f64) -> [f64; 2 * FRACTIONAL_DELAY_HALF_TAPS + 1] {
    let half = FRACTIONAL_DELAY_HALF_TAPS as f64;
    let span = 2.0 * (half + 1.0);
    let mut taps = [0.0; 2 * FRACTIONAL_DELAY_HALF_TAPS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half - frac;
        let sinc = if x == 0.0 {
            1.0
        } else {
            libm::sin(PI * x) / (PI * x)
        };
        let w = 0.42 + 0.5 * libm::cos(2.0 * PI * x / span) + 0.08 * libm::cos(4.0 * PI * x / span);
        *t = sinc * w;
    }
    taps
}

/// Adds `gain · x(n − delay)` to `out[range]`, treating `x` as zero outside
/// its bounds.
fn add_delayed(out: &mut [f64], x: &[f64], range: core::ops::Range<usize>, delay: f64, gain: f64) {
    let whole = libm::floor(delay);
    let frac = delay - whole;
    let whole = whole as i64;
    let taps = delay_taps(frac);
    let half = FRACTIONAL_DELAY_HALF_TAPS as i64;
    let len = x.len() as i64;
    for n in range {
        // y[n] = Σ_t h[t] x[n − D − t]
        let base = n as i64 - whole;
        let mut acc = 0.0;
        if base - half >= 0 && base + half < len {
            let lo = (base - half) as usize;
            for (h, &v) in taps.iter().rev().zip(&x[lo..lo + taps.len()]) {
                acc += h * v;
            }
        } else {
            for (i, h) in taps.iter().enumerate() {
                let idx = base - (i as i64 - half);
                if (0..len).contains(&idx) {
                    acc += h * x[idx as usize];
                }
            }
        }
        out[n] += gain * acc;
    }
}

/// Delays `signal` by a possibly fractional number of samples with a
/// 31-tap Blackman-windowed sinc centered on the delay.
pub fn fractional_delay(signal: &[f64], delay: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; signal.len()];
    add_delayed(&mut out, signal, 0..signal.len(), delay, 1.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vec3,
}

/// Talk spurts made of voiced (harmonic) and unvoiced (pink noise)
/// syllables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechLike {
    /// RMS while talking.
    pub level_rms: f64,
    pub on_min_s: f64,
    pub on_max_s: f64,
    pub off_min_s: f64,
    pub off_max_s: f64,
    pub syllable_min_s: f64,
    pub syllable_max_s: f64,
    /// Fraction of syllables rendered as harmonic series.
    pub voiced_fraction: f64,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    /// Overrides the stream derived from the scene seed.
    pub seed: Option<u64>,
}

impl Default for SpeechLike {
    fn default() -> Self {
        Self {
            level_rms: 0.1,
            on_min_s: 0.4,
            on_max_s: 1.5,
            off_min_s: 0.15,
            off_max_s: 0.6,
            syllable_min_s: 0.12,
            syllable_max_s: 0.3,
            voiced_fraction: 0.7,
            pitch_min_hz: 90.0,
            pitch_max_hz: 250.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSignal {
    SpeechLike(SpeechLike),
    /// Explicit samples at the array sample rate; active wherever nonzero.
    Samples(Vec<f64>),
}

impl Default for SourceSignal {
    fn default() -> Self {
        SourceSignal::SpeechLike(SpeechLike::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub signal: SourceSignal,
    pub waypoints: Vec<Waypoint>,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl SourceSpec {
    /// Position at time `t`, linearly interpolated and held constant
    /// outside the waypoint span.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let w = &self.waypoints;
        if t <= w[0].t {
            return w[0].position;
        }
        for pair in w.windows(2) {
            if t <= pair[1].t {
                let span = pair[1].t - pair[0].t;
                let a = if span > 0.0 {
                    (t - pair[0].t) / span
                } else {
                    1.0
                };
                return pair[0].position * (1.0 - a) + pair[1].position * a;
            }
        }
        w[w.len() - 1].position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub duration: f64,
    #[serde(default)]
    pub geometry: MicArrayGeometry,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    /// SNR of an average single source, averaged over the array; `None`
    /// renders without noise.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Reverberation time of the diffuse tail; 0 is anechoic.
    #[serde(default)]
    pub rt60: f64,
    /// Direct-to-reverberant energy ratio at the array center.
    #[serde(default = "default_drr")]
    pub drr_db: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_drr() -> f64 {
    3.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            bail!(
                Config,
                "scene duration must be positive, got {}",
                self.duration
            );
        }
        if !(self.rt60 >= 0.0 && self.rt60.is_finite()) {
            bail!(Config, "rt60 must be non-negative, got {}", self.rt60);
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                bail!(Config, "snr_db must be finite");
            }
        }
        let center = self.geometry.centroid();
        let tol = 1e-9;
        for (s, src) in self.sources.iter().enumerate() {
            if src.waypoints.is_empty() {
                bail!(Config, "source {s} has no waypoints");
            }
            if !(src.gain >= 0.0 && src.gain.is_finite()) {
                bail!(Config, "source {s} has an invalid gain");
            }
            if src.waypoints.windows(2).any(|w| w[1].t < w[0].t) {
                bail!(Config, "source {s} waypoint times are not ascending");
            }
            for w in &src.waypoints {
                if w.t < 0.0 || w.t > self.duration + tol {
                    bail!(
                        Config,
                        "source {s} waypoint at t={} is outside the scene",
                        w.t
                    );
                }
                let r = w.position.distance(center);
                if !(MIN_DISTANCE - tol..=MAX_DISTANCE + tol).contains(&r) {
                    bail!(
                        Config,
                        "source {s} waypoint is {r:.3} m from the array, outside [0.3, 3]"
                    );
                }
            }
            if let SourceSignal::SpeechLike(p) = &src.signal {
                if !(p.level_rms >= 0.0
                    && p.on_min_s > 0.0
                    && p.on_max_s >= p.on_min_s
                    && p.off_min_s >= 0.0
                    && p.off_max_s >= p.off_min_s
                    && p.syllable_min_s > 0.0
                    && p.syllable_max_s >= p.syllable_min_s
                    && (0.0..=1.0).contains(&p.voiced_fraction)
                    && p.pitch_min_hz > 0.0
                    && p.pitch_max_hz >= p.pitch_min_hz)
                {
                    bail!(Config, "source {s} has invalid speech-like parameters");
                }
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        libm::round(self.duration * self.geometry.sample_rate()) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueSource {
    pub id: u64,
    pub position: Vec3,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFrame {
    pub t_seconds: f64,
    pub sources: Vec<TrueSource>,
}

/// Source positions and activity at every tracker update time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<TruthFrame>,
}

/// Rendered audio plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    /// `channels[mic][sample]`.
    pub channels: Vec<Vec<f64>>,
    pub truth: GroundTruth,
    /// Scale applied to avoid clipping, if any.
    pub clip_scale: Option<f64>,
    pub sample_rate: f64,
}

const STREAM_SIGNAL: u64 = 1 << 32;
const STREAM_NOISE: u64 = 2 << 32;
const STREAM_TAIL: u64 = 3 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Pink noise (Kellet's filter) high-passed at ~100 Hz, unit RMS.
fn pink_noise(len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let hp = libm::exp(-2.0 * PI * 100.0 / sample_rate);
    let (mut prev_in, mut prev_out) = (0.0, 0.0);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let white: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + white * 0.0555179;
            b[1] = 0.99332 * b[1] + white * 0.0750759;
            b[2] = 0.96900 * b[2] + white * 0.1538520;
            b[3] = 0.86650 * b[3] + white * 0.3104856;
            b[4] = 0.55000 * b[4] + white * 0.5329522;
            b[5] = -0.7616 * b[5] - white * 0.0168980;
            let pink = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + white * 0.5362;
            b[6] = white * 0.115926;
            let y = hp * (prev_out + pink - prev_in);
            prev_in = pink;
            prev_out = y;
            y
        })
        .collect();
    let rms = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64);
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Talk-spurt envelope in `[0, 1]` with 10 ms raised-cosine ramps.
fn spurt_envelope(len: usize, sample_rate: f64, p: &SpeechLike, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut env = alloc::vec![0.0; len];
    let ramp = (0.01 * sample_rate) as usize;
    let mut n = 0usize;
    while n < len {
        let on = (rng.random_range(p.on_min_s..=p.on_max_s) * sample_rate) as usize;
        let off = if p.off_max_s > 0.0 {
            rng.random_range(p.off_min_s..=p.off_max_s)
        } else {
            0.0
        };
        let off = (off * sample_rate) as usize;
        for i in 0..on.min(len - n) {
            let up = if i < ramp {
                0.5 - 0.5 * libm::cos(PI * i as f64 / ramp as f64)
            } else {
                1.0
            };
            let left = on - i;
            let down = if left < ramp {
                0.5 - 0.5 * libm::cos(PI * left as f64 / ramp as f64)
            } else {
                1.0
            };
            env[n + i] = up.min(down);
        }
        n += on + off;
    }
    env
}

/// Syllable-rate excitation: back-to-back syllables of random length,
/// each Hann shaped so the signal dips to zero in between. Voiced
/// syllables are harmonic series on a gliding pitch with a pink tilt;
/// unvoiced ones take the pink noise.
fn syllables(
    len: usize,
    sample_rate: f64,
    p: &SpeechLike,
    pink: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = alloc::vec![0.0; len];
    let mut n = 0usize;
    while n < len {
        let dur =
            ((rng.random_range(p.syllable_min_s..=p.syllable_max_s) * sample_rate) as usize).max(2);
        let peak = rng.random_range(0.5..=1.0);
        let voiced = rng.random::<f64>() < p.voiced_fraction;
        let f0_start = rng.random_range(p.pitch_min_hz..=p.pitch_max_hz);
        let f0_end =
            (f0_start * rng.random_range(0.85..=1.15)).clamp(p.pitch_min_hz, p.pitch_max_hz);
        let harmonics = (4000.0 / f0_start.max(1.0)) as usize;
        let phases: Vec<f64> = (0..harmonics)
            .map(|_| rng.random::<f64>() * 2.0 * PI)
            .collect();
        // Unit-power normalization of the harmonic series.
        let norm = libm::sqrt(
            2.0 / (1..=harmonics)
                .map(|k| 1.0 / k as f64)
                .sum::<f64>()
                .max(1e-12),
        );
        let mut phase = 0.0;
        for i in 0..dur.min(len - n) {
            let frac = i as f64 / dur as f64;
            let shape = peak * libm::sin(PI * frac);
            let v = if voiced && harmonics > 0 {
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += 2.0 * PI * f0 / sample_rate;
                let mut acc = 0.0;
                for (k, ph) in phases.iter().enumerate() {
                    let h = (k + 1) as f64;
                    acc += libm::sin(h * phase + ph) / libm::sqrt(h);
                }
                acc * norm
            } else {
                pink[n + i]
            };
            out[n + i] = shape * v;
        }
        n += dur;
    }
    out
}

/// Source waveform and its activity envelope.
fn source_waveform(
    src: &SourceSpec,
    index: usize,
    len: usize,
    scene: &SceneSpec,
) -> (Vec<f64>, Vec<f64>) {
    let fs = scene.geometry.sample_rate();
    match &src.signal {
        SourceSignal::SpeechLike(p) => {
            let mut rng = stream(p.seed.unwrap_or(scene.seed), STREAM_SIGNAL + index as u64);
            let env = spurt_envelope(len, fs, p, &mut rng);
            let pink = pink_noise(len, fs, &mut rng);
            let excitation = syllables(len, fs, p, &pink, &mut rng);
            let mut x: Vec<f64> = excitation.iter().zip(&env).map(|(s, e)| s * e).collect();
            // Scale to the target RMS over the talk spurts.
            let (sum, count) = x
                .iter()
                .zip(&env)
                .filter(|(_, e)| **e >= 0.5)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
            if sum > 0.0 {
                let scale = p.level_rms / libm::sqrt(sum / count as f64);
                x.iter_mut().for_each(|v| *v *= scale);
            }
            (x, env)
        }
        SourceSignal::Samples(s) => {
            let mut x = s.clone();
            x.resize(len, 0.0);
            let env = x
                .iter()
                .map(|v| if *v != 0.0 { 1.0 } else { 0.0 })
                .collect();
            (x, env)
        }
    }
}

/// Exponentially decaying velvet-noise impulse response with energy
/// `energy`, as `(offset, amplitude)` pulses.
fn velvet_tail(
    rt60: f64,
    sample_rate: f64,
    energy: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, f64)> {
    let spacing = sample_rate / VELVET_DENSITY;
    let start = (TAIL_PREDELAY_S * sample_rate) as usize;
    let count = libm::ceil(rt60 * VELVET_DENSITY) as usize;
    let mut pulses: Vec<(usize, f64)> = (0..count)
        .map(|m| {
            let offset = libm::floor(m as f64 * spacing + rng.random::<f64>() * spacing) as usize;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            // Amplitude falls 60 dB over one RT60.
            let amp = libm::pow(10.0, -3.0 * offset as f64 / (rt60 * sample_rate));
            (start + offset, sign * amp)
        })
        .collect();
    let e: f64 = pulses.iter().map(|(_, a)| a * a).sum();
    if e > 0.0 {
        let s = libm::sqrt(energy / e);
        pulses.iter_mut().for_each(|(_, a)| *a *= s);
    }
    pulses
}

/// Renders `scene` at the geometry's sample rate; ground truth is sampled
/// at the centers of the tracker updates described by `timing`.
pub fn synthesize(scene: &SceneSpec, timing: &FrameTiming) -> Result<Rendered> {
    scene.validate()?;
    let geom = &scene.geometry;
    let fs = geom.sample_rate();
    let c = geom.speed_of_sound();
    let len = scene.sample_count();
    let mics = geom.mic_positions();
    let center = geom.centroid();
    let hop = timing.hop.max(1);
    let mut channels = alloc::vec![alloc::vec![0.0; len]; mics.len()];
    let mut tail_input = alloc::vec![0.0; if scene.rt60 > 0.0 { len } else { 0 }];
    let mut envelopes = Vec::with_capacity(scene.sources.len());

    for (s, src) in scene.sources.iter().enumerate() {
        let (x, env) = source_waveform(src, s, len, scene);
        envelopes.push(env);
        let mut start = 0;
        while start < len {
            let end = (start + hop).min(len);
            let t = (start + end) as f64 / 2.0 / fs;
            let pos = src.position_at(t);
            for (m, mic) in mics.iter().enumerate() {
                let r = pos.distance(*mic).max(1e-3);
                add_delayed(&mut channels[m], &x, start..end, r / c * fs, src.gain / r);
            }
            if scene.rt60 > 0.0 {
                let r = pos.distance(center).max(1e-3);
                add_delayed(
                    &mut tail_input,
                    &x,
                    start..end,
                    libm::round(r / c * fs),
                    src.gain / r,
                );
            }
            start = end;
        }
    }

    if scene.rt60 > 0.0 && !scene.sources.is_empty() {
        let energy = libm::pow(10.0, -scene.drr_db / 10.0);
        for (m, ch) in channels.iter_mut().enumerate() {
            let mut rng = stream(scene.seed, STREAM_TAIL + m as u64);
            for (offset, amp) in velvet_tail(scene.rt60, fs, energy, &mut rng) {
                if offset >= len {
                    continue;
                }
                for (y, x) in ch[offset..].iter_mut().zip(&tail_input) {
                    *y += amp * x;
                }
            }
        }
    }

    if let Some(snr_db) = scene.snr_db {
        let clean_power = channels
            .iter()
            .map(|ch| ch.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / (len.max(1) * mics.len()) as f64;
        // Independent sources add in power, so this is the mean power of one.
        let reference = if scene.sources.is_empty() {
            NOMINAL_SIGNAL_POWER
        } else {
            clean_power / scene.sources.len() as f64
        };
        let sigma = libm::sqrt(reference / libm::pow(10.0, snr_db / 10.0));
        for (m, ch) in channels.iter_mut().enumerate() {
            let mut rng = stream(scene.seed, STREAM_NOISE + m as u64);
            for v in ch.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *v += sigma * n;
            }
        }
    }

    let peak = channels
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(libm::fabs(*v)));
    let clip_scale = (peak > 1.0).then(|| 0.99 / peak);
    if let Some(s) = clip_scale {
        channels.iter_mut().flatten().for_each(|v| *v *= s);
    }

    let truth = ground_truth(scene, &envelopes, timing, len);
    Ok(Rendered {
        channels,
        truth,
        clip_scale,
        sample_rate: fs,
    })
}

fn ground_truth(
    scene: &SceneSpec,
    envelopes: &[Vec<f64>],
    timing: &FrameTiming,
    len: usize,
) -> GroundTruth {
    let fs = scene.geometry.sample_rate();
    let updates = timing.update_count(len);
    let frames = (0..updates)
        .map(|u| {
            let t = timing.update_time(u as u64);
            let n = libm::round(t * fs) as usize;
            let sources = scene
                .sources
                .iter()
                .zip(envelopes)
                .enumerate()
                .map(|(id, (src, env))| TrueSource {
                    id: id as u64,
                    position: src.position_at(t),
                    active: env
                        .get(n.min(len.saturating_sub(1)))
                        .is_some_and(|e| *e >= 0.5),
                })
                .collect();
            TruthFrame {
                t_seconds: t,
                sources,
            }
        })
        .collect();
    GroundTruth { frames }
}
