//! Bitrate-graded codec degradation.
//!
//! The default backend is an in-process proxy for lossy perceptual coding:
//! a 512-point STFT (periodic Hann analysis and synthesis windows, hop 128)
//! in which every bin above a bitrate-dependent cutoff is zeroed, retained
//! magnitudes are rounded to a uniform grid whose step is
//! `frame peak magnitude * 2 / bitrate_kbps`, and the signal is resynthesized
//! by weighted overlap-add. Phases are left untouched. The cutoff table:
//!
//! | kbps | cutoff Hz | kbps | cutoff Hz |
//! |-----:|----------:|-----:|----------:|
//! | 16   | 2000      | 96   | 7000      |
//! | 24   | 3000      | 112  | 7500      |
//! | 32   | 4000      | 128  | 8000      |
//! | 40   | 4500      | 160  | 10000     |
//! | 48   | 5000      | 192  | 12000     |
//! | 56   | 5500      | 224  | 14000     |
//! | 64   | 6000      | 256  | Nyquist   |
//! | 80   | 6500      |      |           |
//!
//! Cutoffs above Nyquist mean no band limiting. The gain falls from 1 to 0
//! along a raised-cosine ramp over the top 10% of the cutoff frequency.
//!
//! [`CodecBackend::ExternalMp3`] instead round-trips the file through a
//! `lame`-compatible command line encoder.

use std::path::PathBuf;
use std::process::Command;

use rustfft::num_complex::Complex;

use crate::audio::{read_pcm, write_pcm, Waveform};
use crate::dsp::{hann, FftPair};
use crate::error::{Error, Result};

pub const BITRATES_KBPS: [u32; 15] = [
    16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256,
];

const CUTOFFS_HZ: [f64; 15] = [
    2000.0,
    3000.0,
    4000.0,
    4500.0,
    5000.0,
    5500.0,
    6000.0,
    6500.0,
    7000.0,
    7500.0,
    8000.0,
    10_000.0,
    12_000.0,
    14_000.0,
    f64::INFINITY,
];

const FFT_SIZE: usize = 512;
const HOP: usize = FFT_SIZE / 4;
const TAPER_FRACTION: f64 = 0.1;
const QUANT_SCALE: f64 = 2.0;

fn table_index(bitrate_kbps: u32) -> Result<usize> {
    BITRATES_KBPS
        .iter()
        .position(|&b| b == bitrate_kbps)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "bitrate {bitrate_kbps} kbps is not one of {BITRATES_KBPS:?}"
            ))
        })
}

/// Low-pass cutoff of the proxy codec, in Hz (may exceed Nyquist).
pub fn cutoff_hz(bitrate_kbps: u32) -> Result<f64> {
    Ok(CUTOFFS_HZ[table_index(bitrate_kbps)?])
}

/// Interpret a sampled control value as a table bitrate.
pub fn bitrate_from_z(z: f64) -> Result<u32> {
    let b = z.round();
    if (z - b).abs() > 1e-9 || b < 0.0 {
        return Err(Error::InvalidParameter(format!("bitrate {z} is not an integer")));
    }
    let b = b as u32;
    table_index(b).map(|_| b)
}

fn band_gain(freq_hz: f64, cutoff: f64) -> f64 {
    if !cutoff.is_finite() {
        return 1.0;
    }
    let start = cutoff * (1.0 - TAPER_FRACTION);
    if freq_hz <= start {
        1.0
    } else if freq_hz >= cutoff {
        0.0
    } else {
        let t = (freq_hz - start) / (cutoff - start);
        0.5 + 0.5 * (std::f64::consts::PI * t).cos()
    }
}

/// The in-process proxy codec.
pub fn codec_degrade(w: &Waveform, bitrate_kbps: u32) -> Result<Waveform> {
    let cutoff = cutoff_hz(bitrate_kbps)?;
    if w.is_empty() {
        return Ok(w.clone());
    }
    let fs = w.sample_rate_hz() as f64;
    let step_rel = QUANT_SCALE / bitrate_kbps as f64;
    let gains: Vec<f64> = (0..=FFT_SIZE / 2)
        .map(|k| band_gain(k as f64 * fs / FFT_SIZE as f64, cutoff))
        .collect();
    let window = hann(FFT_SIZE);
    let fft = FftPair::new(FFT_SIZE);

    // pad so every input sample sits under a full set of overlapping frames
    let pad = FFT_SIZE;
    let total = pad + w.len() + pad;
    let n_frames = (total - FFT_SIZE) / HOP + 1;
    let mut padded = vec![0.0; (n_frames - 1) * HOP + FFT_SIZE];
    padded[pad..pad + w.len()].copy_from_slice(w.samples());

    let mut acc = vec![0.0; padded.len()];
    let mut norm = vec![0.0; padded.len()];
    let mut frame = vec![0.0; FFT_SIZE];
    for f in 0..n_frames {
        let start = f * HOP;
        for (i, v) in frame.iter_mut().enumerate() {
            *v = padded[start + i] * window[i];
        }
        let mut spec = fft.forward_real(&frame);
        let peak = spec[..=FFT_SIZE / 2]
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if peak > 0.0 {
            let step = peak * step_rel;
            for k in 0..=FFT_SIZE / 2 {
                let c = spec[k];
                let mag = c.norm() * gains[k];
                let q = (mag / step).round() * step;
                let out = if q == 0.0 || mag == 0.0 {
                    Complex::new(0.0, 0.0)
                } else {
                    c * (q / c.norm())
                };
                spec[k] = out;
                if k != 0 && k != FFT_SIZE / 2 {
                    spec[FFT_SIZE - k] = out.conj();
                }
            }
            // DC and Nyquist bins of a real frame are real
            spec[0].im = 0.0;
            spec[FFT_SIZE / 2].im = 0.0;
        }
        let time = fft.inverse_real(spec);
        for i in 0..FFT_SIZE {
            acc[start + i] += time[i] * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let out = (0..w.len())
        .map(|i| {
            let j = pad + i;
            (acc[j] / norm[j]).clamp(-1.0, 1.0)
        })
        .collect();
    w.with_samples(out)
}

/// Which implementation performs the codec intervention.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum CodecBackend {
    #[default]
    Proxy,
    /// Encode with `<binary> --quiet -b <kbps> in.wav out.mp3`, decode with
    /// `<binary> --quiet --decode out.mp3 out.wav`. The decoded signal is
    /// truncated or zero padded to the input length.
    ExternalMp3 { binary: PathBuf },
}

impl CodecBackend {
    pub fn degrade(&self, w: &Waveform, bitrate_kbps: u32) -> Result<Waveform> {
        match self {
            CodecBackend::Proxy => codec_degrade(w, bitrate_kbps),
            CodecBackend::ExternalMp3 { binary } => external_mp3(binary, w, bitrate_kbps),
        }
    }
}

fn external_mp3(binary: &PathBuf, w: &Waveform, bitrate_kbps: u32) -> Result<Waveform> {
    table_index(bitrate_kbps)?;
    let dir = tempfile::tempdir().map_err(|e| Error::ExternalCodec(e.to_string()))?;
    let wav_in = dir.path().join("in.wav");
    let mp3 = dir.path().join("coded.mp3");
    let wav_out = dir.path().join("out.wav");
    write_pcm(w, &wav_in)?;
    let run = |args: &[&std::ffi::OsStr]| -> Result<()> {
        let status = Command::new(binary)
            .args(args)
            .status()
            .map_err(|e| Error::ExternalCodec(format!("{}: {e}", binary.display())))?;
        if status.success() {
            Ok(())
        } else {
            Err(Error::ExternalCodec(format!(
                "{} exited with {status}",
                binary.display()
            )))
        }
    };
    let kbps = bitrate_kbps.to_string();
    run(&[
        "--quiet".as_ref(),
        "-b".as_ref(),
        kbps.as_ref(),
        wav_in.as_os_str(),
        mp3.as_os_str(),
    ])?;
    run(&[
        "--quiet".as_ref(),
        "--decode".as_ref(),
        mp3.as_os_str(),
        wav_out.as_os_str(),
    ])?;
    let decoded = read_pcm(&wav_out)?;
    let mut samples = decoded.into_samples();
    samples.resize(w.len(), 0.0);
    w.with_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SeedContext;
    use crate::dsp::band_energy_above;
    use rand::Rng;

    fn white(n: usize, seed: u64) -> Waveform {
        let mut rng = SeedContext::new(seed, "white", "", "").rng();
        let s = (0..n).map(|_| 0.5 * (rng.random::<f64>() - 0.5)).collect();
        Waveform::new("white", 16_000, s).unwrap()
    }

    fn mse(a: &Waveform, b: &Waveform) -> f64 {
        a.samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn low_bitrate_removes_high_band() {
        let w = white(32_000, 1);
        let out = codec_degrade(&w, 16).unwrap();
        let before = band_energy_above(w.samples(), 16_000, 2000.0);
        let after = band_energy_above(out.samples(), 16_000, 2000.0);
        let atten_db = 10.0 * (before / after).log10();
        assert!(atten_db >= 40.0, "attenuation {atten_db:.1} dB");
    }

    #[test]
    fn distortion_non_increasing_in_bitrate() {
        let w = white(16_000, 2);
        let errs: Vec<f64> = BITRATES_KBPS
            .iter()
            .map(|&b| mse(&w, &codec_degrade(&w, b).unwrap()))
            .collect();
        for pair in errs.windows(2) {
            assert!(pair[1] <= pair[0], "{errs:?}");
        }
        assert!(errs[14] < errs[0]);
    }

    #[test]
    fn silence_stays_silent_and_length_kept() {
        let w = Waveform::new("z", 16_000, vec![0.0; 1234]).unwrap();
        let out = codec_degrade(&w, 64).unwrap();
        assert_eq!(out.len(), 1234);
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn off_table_bitrate_rejected() {
        let w = white(1000, 3);
        assert!(codec_degrade(&w, 17).is_err());
        assert!(bitrate_from_z(16.5).is_err());
        assert_eq!(bitrate_from_z(128.0).unwrap(), 128);
    }

    #[test]
    fn cutoffs_monotone() {
        for pair in CUTOFFS_HZ.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn missing_external_encoder_reports_error() {
        let w = white(1000, 4);
        let backend = CodecBackend::ExternalMp3 {
            binary: PathBuf::from("/nonexistent/lame"),
        };
        assert!(matches!(backend.degrade(&w, 64), Err(Error::ExternalCodec(_))));
    }
}
