//! Small shared DSP helpers: windows and real-signal power spectra.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window (sums to a constant under hops of `n / 4`).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Forward/inverse complex FFT pair of a fixed size.
#[derive(Clone)]
pub struct FftPair {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// FFT of a real frame, zero padded (or truncated) to the transform size.
    pub fn forward_real(&self, frame: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = (0..self.size)
            .map(|i| Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse FFT, scaled by `1 / size`, real part only.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.size as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    /// `|X(k)|^2` for `k = 0..=size/2`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let spec = self.forward_real(frame);
        spec[..=self.size / 2].iter().map(|c| c.norm_sqr()).collect()
    }
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("size", &self.size).finish()
    }
}

/// Energy of a whole signal above `cutoff_hz`, from one full-length FFT.
pub fn band_energy_above(samples: &[f64], sample_rate_hz: u32, cutoff_hz: f64) -> f64 {
    let n = samples.len();
    let fft = FftPair::new(n);
    fft.power_spectrum(samples)
        .iter()
        .enumerate()
        .filter(|(k, _)| *k as f64 * sample_rate_hz as f64 / n as f64 > cutoff_hz)
        .map(|(_, p)| p)
        .sum()
}
