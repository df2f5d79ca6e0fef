//! Reliability-weighted phase-transform (RWPHAT) cross-correlations.
//!
//! For every microphone pair the normalized, weighted cross-spectrum
//! `ζᵢXᵢ·ζⱼXⱼ* / (|Xᵢ||Xⱼ|)` is kept for the last few frames; their mean is
//! inverse transformed into a circular correlation scaled by `1/L`, so a
//! perfectly coherent pair peaks at 1.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{bail, Result};
use crate::fft::Fft;
use crate::spectral::{ReliabilityWeights, SpectralFrame};

/// Frames averaged into one correlation.
pub const DEFAULT_DEPTH: usize = 4;

/// Ring buffer of weighted, normalized cross-spectra for all pairs.
#[derive(Debug, Clone)]
pub struct CrossSpectrumAccumulator {
    pairs: Vec<(usize, usize)>,
    bins: usize,
    depth: usize,
    /// `ring[slot][pair * bins + k]`.
    ring: Vec<Vec<Complex64>>,
    filled: usize,
    next: usize,
    frame_count: u64,
    fft: Fft,
}

impl CrossSpectrumAccumulator {
    pub fn new(pairs: Vec<(usize, usize)>, bins: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            bail!(Config, "averaging depth must be positive");
        }
        if bins < 2 {
            bail!(Config, "need at least 2 bins, got {bins}");
        }
        let fft = Fft::new(2 * (bins - 1))?;
        let slot = alloc::vec![Complex64::new(0.0, 0.0); pairs.len() * bins];
        Ok(Self {
            fft,
            ring: alloc::vec![slot; depth],
            pairs,
            bins,
            depth,
            filled: 0,
            next: 0,
            frame_count: 0,
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    /// Number of frames currently held (at most the depth).
    pub fn filled(&self) -> usize {
        self.filled
    }

    /// Correlation length `L` implied by the one-sided bin count.
    pub fn correlation_len(&self) -> usize {
        2 * (self.bins - 1)
    }

    /// Pushes the weighted cross-spectra of `frame`, evicting the oldest
    /// frame once the buffer is full. Bins with a zero magnitude contribute 0.
    pub fn accumulate(
        &mut self,
        frame: &SpectralFrame,
        weights: &ReliabilityWeights,
    ) -> Result<()> {
        if frame.bins() != self.bins {
            bail!(
                Input,
                "frame has {} bins, accumulator expects {}",
                frame.bins(),
                self.bins
            );
        }
        let slot = &mut self.ring[self.next];
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let (xi, xj) = (&frame.spectra[i], &frame.spectra[j]);
            let (zi, zj) = (&weights.zeta[i], &weights.zeta[j]);
            let out = &mut slot[p * self.bins..(p + 1) * self.bins];
            for k in 0..self.bins {
                let mag = xi[k].norm() * xj[k].norm();
                out[k] = if mag > 0.0 {
                    xi[k] * xj[k].conj() * (zi[k] * zj[k] / mag)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
        self.next = (self.next + 1) % self.depth;
        self.filled = (self.filled + 1).min(self.depth);
        self.frame_count += 1;
        Ok(())
    }

    /// Mean cross-spectrum of one pair over the held frames.
    pub fn mean_cross_spectrum(&self, pair: usize) -> Vec<Complex64> {
        let range = pair * self.bins..(pair + 1) * self.bins;
        let mut mean = alloc::vec![Complex64::new(0.0, 0.0); self.bins];
        for slot in self.ring.iter().take(self.filled) {
            for (m, c) in mean.iter_mut().zip(&slot[range.clone()]) {
                *m += c;
            }
        }
        let inv = 1.0 / self.filled.max(1) as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    /// RWPHAT correlations of the averaged cross-spectra.
    pub fn correlations(&self) -> Result<CorrelationSet> {
        if self.filled == 0 {
            bail!(State, "no frame accumulated yet");
        }
        let len = self.correlation_len();
        let mut values = Vec::with_capacity(self.pairs.len() * len);
        let mut buf = alloc::vec![Complex64::new(0.0, 0.0); len];
        for p in 0..self.pairs.len() {
            let mean = self.mean_cross_spectrum(p);
            hermitian_extend(&mean, &mut buf);
            self.fft.inverse(&mut buf);
            let scale = 1.0 / len as f64;
            values.extend(buf.iter().map(|c| c.re * scale));
        }
        Ok(CorrelationSet {
            len,
            pairs: self.pairs.clone(),
            values,
        })
    }
}

/// Fills a full `L`-bin spectrum from `L/2 + 1` one-sided bins, forcing the
/// DC and Nyquist bins real.
pub fn hermitian_extend(one_sided: &[Complex64], full: &mut [Complex64]) {
    let len = full.len();
    let half = len / 2;
    debug_assert_eq!(one_sided.len(), half + 1);
    full[0] = Complex64::new(one_sided[0].re, 0.0);
    full[half] = Complex64::new(one_sided[half].re, 0.0);
    for k in 1..half {
        full[k] = one_sided[k];
        full[len - k] = one_sided[k].conj();
    }
}

/// Real circular correlations `R(τ)`, `τ ∈ [0, L)`, for every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    len: usize,
    pairs: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl CorrelationSet {
    /// Builds a set from raw per-pair vectors laid out back to back.
    pub fn from_values(len: usize, pairs: Vec<(usize, usize)>, values: Vec<f64>) -> Result<Self> {
        if values.len() != len * pairs.len() {
            bail!(
                Input,
                "expected {} values, got {}",
                len * pairs.len(),
                values.len()
            );
        }
        Ok(Self { len, pairs, values })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, p: usize) -> &[f64] {
        &self.values[p * self.len..(p + 1) * self.len]
    }

    #[inline]
    pub fn get(&self, p: usize, lag: usize) -> f64 {
        self.values[p * self.len + lag]
    }

    #[inline]
    pub fn set(&mut self, p: usize, lag: usize, value: f64) {
        self.values[p * self.len + lag] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
