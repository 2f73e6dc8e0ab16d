//! Integrated loudness (BS.1770-4 style gated K-weighted power) and
//! loudness normalization.

use crate::audio::Waveform;
use crate::error::{Error, Result};

const BLOCK_S: f64 = 0.4;
const HOP_S: f64 = 0.1;
const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const RELATIVE_GATE_LU: f64 = -10.0;

/// Second-order IIR section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// K-weighting stage 1. The analog shelf prototype (gain, Q, center) is
    /// the one that reproduces the published 48 kHz coefficients; the
    /// bilinear transform with prewarping redesigns it for any rate.
    fn high_shelf(sample_rate_hz: f64) -> Self {
        let gain_db = 3.999_843_853_973_347;
        let q = 0.707_175_236_955_419_3;
        let center_hz = 1_681.974_450_955_531_9;
        let k = (std::f64::consts::PI * center_hz / sample_rate_hz).tan();
        let vh = 10f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_154_541_6);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: (vh + vb * k / q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    /// K-weighting stage 2 (RLB high-pass).
    fn high_pass(sample_rate_hz: f64) -> Self {
        let q = 0.500_327_037_325_395_3;
        let center_hz = 38.135_470_876_139_82;
        let k = (std::f64::consts::PI * center_hz / sample_rate_hz).tan();
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: 1.0,
            b1: -2.0,
            b2: 1.0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
        }
    }

    fn filter(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

fn power_to_lufs(z: f64) -> f64 {
    -0.691 + 10.0 * z.log10()
}

/// K-weighted mean-square power of each 400 ms block, blocks overlapping by
/// 75%. Only whole blocks are used.
pub fn block_powers(w: &Waveform) -> Result<Vec<f64>> {
    let fs = w.sample_rate_hz() as f64;
    let block = (BLOCK_S * fs).round() as usize;
    let hop = (HOP_S * fs).round() as usize;
    if w.len() < block || block == 0 {
        return Err(Error::TooShort(format!(
            "{}: {:.3} s, loudness needs at least 0.4 s",
            w.id(),
            w.duration_s()
        )));
    }
    let weighted = Biquad::high_pass(fs).filter(&Biquad::high_shelf(fs).filter(w.samples()));
    let n_blocks = (weighted.len() - block) / hop + 1;
    Ok((0..n_blocks)
        .map(|j| {
            let seg = &weighted[j * hop..j * hop + block];
            seg.iter().map(|v| v * v).sum::<f64>() / block as f64
        })
        .collect())
}

/// Gated integrated loudness in LUFS.
pub fn measure_loudness(w: &Waveform) -> Result<f64> {
    let powers = block_powers(w)?;
    let above_abs: Vec<f64> = powers
        .into_iter()
        .filter(|&z| z > 0.0 && power_to_lufs(z) > ABSOLUTE_GATE_LUFS)
        .collect();
    if above_abs.is_empty() {
        return Err(Error::Unmeasurable(format!(
            "{}: every block is below the absolute gate",
            w.id()
        )));
    }
    let mean_abs = above_abs.iter().sum::<f64>() / above_abs.len() as f64;
    let relative_gate = power_to_lufs(mean_abs) + RELATIVE_GATE_LU;
    let gated: Vec<f64> = above_abs
        .into_iter()
        .filter(|&z| power_to_lufs(z) > relative_gate)
        .collect();
    // The block carrying the maximum power always passes the relative gate.
    let mean = gated.iter().sum::<f64>() / gated.len() as f64;
    Ok(power_to_lufs(mean))
}

/// Apply the constant gain that moves the measured loudness to `target_lufs`,
/// then hard clip.
pub fn loudness_normalize(w: &Waveform, target_lufs: f64) -> Result<Waveform> {
    if !target_lufs.is_finite() {
        return Err(Error::InvalidParameter(format!("target loudness {target_lufs}")));
    }
    let measured = measure_loudness(w)?;
    let gain = 10f64.powf((target_lufs - measured) / 20.0);
    w.with_samples(
        w.samples()
            .iter()
            .map(|s| (s * gain).clamp(-1.0, 1.0))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, secs: f64, fs: u32) -> Waveform {
        let n = (secs * fs as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin())
            .collect();
        Waveform::new("sine", fs, s).unwrap()
    }

    #[test]
    fn reference_sine_reads_minus_3_01() {
        for fs in [16_000, 48_000] {
            let l = measure_loudness(&sine(997.0, 1.0, 5.0, fs)).unwrap();
            assert!((l + 3.01).abs() <= 0.1, "{fs} Hz: {l}");
        }
    }

    #[test]
    fn half_amplitude_drops_6_02_lu() {
        let w = sine(440.0, 0.8, 3.0, 16_000);
        let half = w.with_samples(w.samples().iter().map(|s| s * 0.5).collect()).unwrap();
        let drop = measure_loudness(&w).unwrap() - measure_loudness(&half).unwrap();
        assert!((drop - 20.0 * 2f64.log10()).abs() < 0.05, "{drop}");
    }

    #[test]
    fn silence_is_unmeasurable() {
        let w = Waveform::new("z", 16_000, vec![0.0; 16_000]).unwrap();
        assert!(matches!(measure_loudness(&w), Err(Error::Unmeasurable(_))));
    }

    #[test]
    fn short_input_is_rejected() {
        let w = sine(440.0, 0.5, 0.3, 16_000);
        assert!(matches!(measure_loudness(&w), Err(Error::TooShort(_))));
    }

    #[test]
    fn normalize_to_measured_is_identity() {
        let w = sine(300.0, 0.2, 2.0, 16_000);
        let l = measure_loudness(&w).unwrap();
        let out = loudness_normalize(&w, l).unwrap();
        for (a, b) in w.samples().iter().zip(out.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn renormalized_file_hits_target() {
        let w = sine(500.0, 1.0, 2.0, 16_000);
        let l = measure_loudness(&w).unwrap();
        let quiet = w
            .with_samples(w.samples().iter().map(|s| s * 10f64.powf((-33.0 - l) / 20.0)).collect())
            .unwrap();
        assert!((measure_loudness(&quiet).unwrap() + 33.0).abs() < 1e-9);
        let out = loudness_normalize(&quiet, -23.0).unwrap();
        assert!((measure_loudness(&out).unwrap() + 23.0).abs() <= 0.5);
    }

    #[test]
    fn loud_target_clips() {
        let w = sine(500.0, 0.9, 1.0, 16_000);
        let out = loudness_normalize(&w, 0.0).unwrap();
        assert!(out.samples().iter().all(|s| s.abs() <= 1.0));
        assert!(out.samples().iter().any(|s| s.abs() == 1.0));
    }
}
